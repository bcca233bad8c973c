fn main() {
    std::process::exit(sts_select::cli::run(std::env::args_os()));
}
