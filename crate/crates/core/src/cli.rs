//! The `sts-select` command line: JSON-configured subcommands for ingest,
//! scoring, selection, evaluation, synthetic data and embedding validation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{load_embedding_store, load_word_vectors, EmbeddingSource, StsScoreConfig};
use crate::model_eval::{evaluate, grid_search, split_train_test, ClassifierSpec, CvPlan, GridSpec, PipelineSpec};
use crate::scoring::{self, MiConfig, ScoreSet, Scorer, ScorerKind};
use crate::selection::{select, SelectionConfig};
use crate::synthbench::{self, SynthSpec};
use crate::tabular::{
    apply_preprocess, collapse_responses, derive_label, filter_columns, fit_preprocess, load_csv, Dataset, Schema,
};

#[derive(Debug, Parser)]
#[command(name = "sts-select", version, about = "Feature selection by mutual information and name similarity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, label and preprocess a survey CSV; write train/test matrices.
    Ingest(CommonArgs),
    /// Score training features; write scores and heat-map CSVs.
    Score(CommonArgs),
    /// Score and select training features.
    Select(CommonArgs),
    /// Grid search with flat CV, then report held-out metrics.
    Eval(CommonArgs),
    /// Write a synthetic benchmark dataset and a ready-to-run config.
    Synth(CommonArgs),
    /// Check an embedding store file.
    ValidateEmbeddings(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the split/fold seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the estimator jitter seed.
    #[arg(long)]
    pub seed2: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |msg| CliError::Data(format!("{context}: {msg}"))
}

/// Pipeline configuration shared by every subcommand except `synth`.
/// Relative paths resolve against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    /// Held-out rows; when absent the data is split with `cv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerKind,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    /// When present, `eval` searches this grid instead of the single
    /// scorer/selection/classifier triple.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub cv: CvPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_scorer() -> ScorerKind {
    ScorerKind::Mi { mi: MiConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// `default` or `imbalanced`; fields in `spec` override the preset.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub spec: serde_json::Map<String, serde_json::Value>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_preset() -> String {
    "default".into()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable artifact");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    pub fn load(config: &Path) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = read_json(config)?;
        let base = config_dir(config);
        cfg.data = resolve(&base, &cfg.data);
        cfg.schema = resolve(&base, &cfg.schema);
        cfg.output_dir = resolve(&base, &cfg.output_dir);
        for p in [&mut cfg.test_data, &mut cfg.embeddings, &mut cfg.word_vectors].into_iter().flatten() {
            *p = resolve(&base, p);
        }
        Ok(cfg)
    }

    fn check_inputs(&self) -> Result<(), CliError> {
        let mut inputs = vec![("data", &self.data), ("schema", &self.schema)];
        for (field, p) in [
            ("test_data", &self.test_data),
            ("embeddings", &self.embeddings),
            ("word_vectors", &self.word_vectors),
        ] {
            if let Some(p) = p {
                inputs.push((field, p));
            }
        }
        for (field, p) in inputs {
            if !p.is_file() {
                return Err(CliError::Data(format!("config field `{field}`: no such file {}", p.display())));
            }
        }
        if self.embeddings.is_some() && self.word_vectors.is_some() {
            return Err(CliError::Data(
                "config fields `embeddings` and `word_vectors` are mutually exclusive".into(),
            ));
        }
        self.cv.validate().map_err(|e| CliError::Data(format!("config field `cv`: {e}")))
    }

    /// Applies `--seed` / `--seed2`; the second seed also becomes every MI jitter seed.
    fn apply_seeds(&mut self, seed: Option<u64>, seed2: Option<u64>) {
        if let Some(s) = seed {
            self.cv.seeds.0 = s;
        }
        if let Some(s) = seed2 {
            self.cv.seeds.1 = s;
        }
        let s2 = self.cv.seeds.1;
        set_mi_seed(&mut self.scorer, s2);
        if let Some(g) = &mut self.grid {
            g.mi.seed = s2;
        }
    }

    fn pipeline_specs(&self) -> Vec<PipelineSpec> {
        match &self.grid {
            Some(g) => g.points(),
            None => vec![PipelineSpec {
                scorer: self.scorer.clone(),
                selection: self.selection,
                classifier: self.classifier,
            }],
        }
    }

    fn embedding_source(&self) -> Result<Option<EmbeddingSource>, CliError> {
        if let Some(p) = &self.embeddings {
            let store = load_embedding_store(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            return Ok(Some(EmbeddingSource::Store(store)));
        }
        if let Some(p) = &self.word_vectors {
            let table = load_word_vectors(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            return Ok(Some(EmbeddingSource::Words(table)));
        }
        Ok(None)
    }
}

fn set_mi_seed(kind: &mut ScorerKind, seed: u64) {
    match kind {
        ScorerKind::Mi { mi } | ScorerKind::Combined { mi, .. } => mi.seed = seed,
        ScorerKind::Sts { .. } => {}
    }
}

struct Labeled {
    data: Dataset,
    labels: Vec<bool>,
}

fn load_labeled(path: &Path, schema: &Schema) -> Result<Labeled, CliError> {
    let ctx = path.display().to_string();
    let rule = schema
        .label_rule
        .as_ref()
        .ok_or_else(|| CliError::Data("schema field `label_rule` is required".into()))?;
    let raw = load_csv(path, schema).map_err(|e| data_err(&ctx)(e.to_string()))?;
    let (ds, labels) = derive_label(&collapse_responses(&raw), rule).map_err(|e| data_err(&ctx)(e.to_string()))?;
    let data = filter_columns(&ds, &schema.filter_policy()).map_err(|e| data_err(&ctx)(e.to_string()))?;
    Ok(Labeled { data, labels })
}

/// Training and test partitions after labelling and column filtering. A
/// separate test file keeps exactly the training file's columns.
fn load_partitions(cfg: &RunConfig) -> Result<(Labeled, Labeled), CliError> {
    let schema: Schema = read_json(&cfg.schema)?;
    let all = load_labeled(&cfg.data, &schema)?;
    match &cfg.test_data {
        Some(p) => {
            let test = load_labeled(p, &schema)?;
            let names: Vec<&str> = all.data.columns().iter().map(|c| c.name.as_str()).collect();
            for n in &names {
                if test.data.column(n).is_none() {
                    return Err(CliError::Data(format!("{}: column {n:?} missing", p.display())));
                }
            }
            let data = test.data.retain_columns(|c| names.contains(&c.name.as_str()));
            Ok((all, Labeled { data, labels: test.labels }))
        }
        None => {
            let (tr, te) = split_train_test(&all.labels, &cfg.cv).map_err(|e| CliError::Data(format!("split: {e}")))?;
            let pick = |rows: &[usize]| Labeled {
                data: all.data.select_rows(rows),
                labels: rows.iter().map(|&r| all.labels[r]).collect(),
            };
            Ok((pick(&tr), pick(&te)))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_ingest(cfg: &RunConfig) -> Result<String, CliError> {
    let (train, test) = load_partitions(cfg)?;
    let plan = fit_preprocess(&train.data).map_err(|e| CliError::Data(e.to_string()))?;
    let tr = apply_preprocess(&plan, &train.data).map_err(|e| CliError::Data(e.to_string()))?;
    let te = apply_preprocess(&plan, &test.data).map_err(|e| CliError::Data(e.to_string()))?;
    ensure_dir(&cfg.output_dir)?;
    let out = &cfg.output_dir;
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    tr.matrix
        .clone()
        .with_labels(train.labels)
        .write_csv(create_file(&out.join("train_matrix.csv"))?)
        .map_err(csv_err)?;
    te.matrix
        .clone()
        .with_labels(test.labels)
        .write_csv(create_file(&out.join("test_matrix.csv"))?)
        .map_err(csv_err)?;
    write_json(&out.join("preprocess_plan.json"), &plan)?;
    let mut msg = format!(
        "{} train rows, {} test rows, {} features",
        tr.matrix.n_rows(),
        te.matrix.n_rows(),
        tr.matrix.n_features()
    );
    for w in tr.warnings.iter().chain(&te.warnings) {
        msg.push_str(&format!("\nwarning: {w}"));
    }
    Ok(msg)
}

fn score_training(cfg: &RunConfig, with_redundancy: bool) -> Result<ScoreSet, CliError> {
    cfg.scorer
        .validate()
        .map_err(|e| CliError::Data(format!("config field `scorer`: {e}")))?;
    let (train, _) = load_partitions(cfg)?;
    let emb = cfg.embedding_source()?;
    let plan = fit_preprocess(&train.data).map_err(|e| CliError::Data(e.to_string()))?;
    let fm = apply_preprocess(&plan, &train.data)
        .map_err(|e| CliError::Data(e.to_string()))?
        .matrix;
    let scores = scoring::score(&fm, &train.labels, Scorer::new(&cfg.scorer, emb.as_ref()), with_redundancy)
        .map_err(|e| CliError::Data(format!("scoring: {e}")))?;
    ensure_dir(&cfg.output_dir)?;
    let out = &cfg.output_dir;
    write_json(&out.join("scores.json"), &scores)?;
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    scores
        .write_relevance_csv(create_file(&out.join("relevance.csv"))?)
        .map_err(csv_err)?;
    if scores.redundancy.is_some() {
        scores
            .write_redundancy_csv(create_file(&out.join("redundancy.csv"))?)
            .map_err(csv_err)?;
    }
    Ok(scores)
}

fn cmd_score(cfg: &RunConfig) -> Result<String, CliError> {
    let scores = score_training(cfg, true)?;
    Ok(format!("scored {} features with {}", scores.len(), cfg.scorer.label()))
}

fn cmd_select(cfg: &RunConfig) -> Result<String, CliError> {
    let scores = score_training(cfg, cfg.selection.needs_redundancy())?;
    let selection = select(&scores, &cfg.selection).map_err(|e| CliError::Data(format!("config field `selection`: {e}")))?;
    write_json(&cfg.output_dir.join("selection.json"), &selection)?;
    Ok(format!(
        "selected {} of {} features: {}",
        selection.selected.len(),
        scores.len(),
        selection.selected_names().join(", ")
    ))
}

fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let specs = cfg.pipeline_specs();
    for s in &specs {
        s.scorer
            .validate()
            .map_err(|e| CliError::Data(format!("config field `scorer`/`grid`: {e}")))?;
    }
    let emb = cfg.embedding_source()?;
    let report = if cfg.test_data.is_some() {
        let (train, test) = load_partitions(cfg)?;
        grid_search(&train.data, &train.labels, &test.data, &test.labels, &specs, &cfg.cv, emb.as_ref())
    } else {
        let schema: Schema = read_json(&cfg.schema)?;
        let all = load_labeled(&cfg.data, &schema)?;
        evaluate(&all.data, &all.labels, &specs, &cfg.cv, emb.as_ref())
    }
    .map_err(|e| CliError::Data(format!("eval: {e}")))?;
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("eval_report.json"), &report)?;
    Ok(format!(
        "chosen {} / {} / {}: cv AUROC {:.4}, test AUROC {:.4}, test AUPRC {:.4}",
        report.chosen.scorer,
        report.chosen.selection.label(),
        report.chosen.classifier.label(),
        report.cv_mean_auroc,
        report.test_auroc,
        report.test_auprc
    ))
}

fn cmd_validate_embeddings(cfg: &RunConfig) -> Result<String, CliError> {
    match (&cfg.embeddings, &cfg.word_vectors) {
        (Some(p), _) => {
            let store = load_embedding_store(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(format!("{}: {} vectors of dim {}", p.display(), store.len(), store.dim()))
        }
        (None, Some(p)) => {
            let table = load_word_vectors(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(format!("{}: {} word vectors of dim {}", p.display(), table.len(), table.dim()))
        }
        (None, None) => Err(CliError::Data("config field `embeddings` is required".into())),
    }
}

fn synth_spec(cfg: &SynthConfig, seed: Option<u64>) -> Result<SynthSpec, CliError> {
    let base = SynthSpec::preset(&cfg.preset)
        .ok_or_else(|| CliError::Data(format!("config field `preset`: unknown preset {:?}", cfg.preset)))?;
    let mut value = serde_json::to_value(base).expect("spec serialises");
    let obj = value.as_object_mut().expect("spec is an object");
    for (k, v) in &cfg.spec {
        if !obj.contains_key(k) {
            return Err(CliError::Data(format!("config field `spec.{k}`: unknown field")));
        }
        obj.insert(k.clone(), v.clone());
    }
    let mut spec: SynthSpec =
        serde_json::from_value(value).map_err(|e| CliError::Data(format!("config field `spec`: {e}")))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Data(format!("config field `spec`: {e}")))?;
    Ok(spec)
}

#[derive(Serialize)]
struct PlantedFile<'a> {
    target_name: &'a str,
    planted_indices: &'a [usize],
    planted_names: Vec<String>,
    spec: &'a SynthSpec,
}

fn cmd_synth(config: &Path, cfg: &SynthConfig, seed: Option<u64>) -> Result<String, CliError> {
    let spec = synth_spec(cfg, seed)?;
    let out = synthbench::generate(&spec).map_err(|e| CliError::Data(e.to_string()))?;
    let dir = resolve(&config_dir(config), &cfg.output_dir);
    ensure_dir(&dir)?;
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    synthbench::write_survey_csv(&out.train, &out.train_labels, 0, create_file(&dir.join("data.csv"))?)
        .map_err(csv_err)?;
    synthbench::write_survey_csv(&out.test, &out.test_labels, spec.n_train, create_file(&dir.join("test.csv"))?)
        .map_err(csv_err)?;
    write_json(&dir.join("schema.json"), &synthbench::survey_schema(out.train.feature_names()))?;
    out.embeddings
        .write_jsonl(create_file(&dir.join("embeddings.jsonl"))?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_json(
        &dir.join("planted.json"),
        &PlantedFile {
            target_name: synthbench::TARGET_NAME,
            planted_indices: &out.planted,
            planted_names: out.planted_names(),
            spec: &spec,
        },
    )?;
    let sts = StsScoreConfig::new(&[synthbench::TARGET_NAME]);
    let run = RunConfig {
        data: "data.csv".into(),
        schema: "schema.json".into(),
        test_data: Some("test.csv".into()),
        embeddings: Some("embeddings.jsonl".into()),
        word_vectors: None,
        output_dir: "out".into(),
        scorer: ScorerKind::Sts { sts: sts.clone() },
        selection: SelectionConfig::TopN { n: 20 },
        classifier: ClassifierSpec::Gnb,
        grid: Some(GridSpec {
            scorers: vec![
                crate::model_eval::ScorerChoice::Mi,
                crate::model_eval::ScorerChoice::Sts,
                crate::model_eval::ScorerChoice::Combined { alpha: 1.0 },
            ],
            strategies: vec![SelectionConfig::TopN { n: 20 }],
            classifiers: vec![ClassifierSpec::Gnb],
            mi: MiConfig::default(),
            sts,
        }),
        cv: CvPlan::default(),
        threads: None,
    };
    write_json(&dir.join("run.json"), &run)?;
    Ok(format!(
        "wrote {} train and {} test rows, {} features ({} planted) to {}",
        spec.n_train,
        spec.n_test,
        spec.n_features(),
        out.planted.len(),
        dir.display()
    ))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Data(format!("cannot start {n} worker threads: {e}"))),
    }
}

/// Runs one parsed command and returns its summary line(s).
pub fn execute(command: Command) -> Result<String, CliError> {
    let (args, kind) = match command {
        Command::Ingest(a) => (a, "ingest"),
        Command::Score(a) => (a, "score"),
        Command::Select(a) => (a, "select"),
        Command::Eval(a) => (a, "eval"),
        Command::Synth(a) => (a, "synth"),
        Command::ValidateEmbeddings(a) => (a, "validate-embeddings"),
    };
    if kind == "synth" {
        let cfg: SynthConfig = read_json(&args.config)?;
        let threads = args.threads.or(cfg.threads);
        return with_threads(threads, || cmd_synth(&args.config, &cfg, args.seed))?;
    }
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_seeds(args.seed, args.seed2);
    if kind == "validate-embeddings" {
        return cmd_validate_embeddings(&cfg);
    }
    cfg.check_inputs()?;
    let threads = args.threads.or(cfg.threads);
    with_threads(threads, || match kind {
        "ingest" => cmd_ingest(&cfg),
        "score" => cmd_score(&cfg),
        "select" => cmd_select(&cfg),
        _ => cmd_eval(&cfg),
    })?
}

/// Parses `argv` and runs it, printing the summary to stdout and errors to
/// stderr. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["sts-select"]), 1);
        assert_eq!(run(["sts-select", "frobnicate"]), 1);
        assert_eq!(run(["sts-select", "eval"]), 1);
        assert_eq!(run(["sts-select", "eval", "--config", "x.json", "--seed", "abc"]), 1);
        assert_eq!(run(["sts-select", "--version"]), 0);
    }

    #[test]
    fn missing_config_exits_two() {
        assert_eq!(run(["sts-select", "eval", "--config", "/nonexistent/run.json"]), 2);
    }

    #[test]
    fn unknown_config_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, r#"{"data":"a.csv","schema":"s.json","output_dir":"o","scorer_typo":1}"#).unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        assert!(err.to_string().contains("scorer_typo"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn seeds_propagate_to_mi() {
        let mut cfg = RunConfig {
            data: "a".into(),
            schema: "b".into(),
            test_data: None,
            embeddings: None,
            word_vectors: None,
            output_dir: "o".into(),
            scorer: default_scorer(),
            selection: SelectionConfig::default(),
            classifier: ClassifierSpec::Gnb,
            grid: None,
            cv: CvPlan::default(),
            threads: None,
        };
        cfg.apply_seeds(Some(7), Some(9));
        assert_eq!(cfg.cv.seeds, (7, 9));
        assert!(matches!(cfg.scorer, ScorerKind::Mi { mi } if mi.seed == 9));
    }

    #[test]
    fn synth_spec_overrides_and_rejects_unknown() {
        let mut cfg = SynthConfig {
            preset: "imbalanced".into(),
            spec: serde_json::Map::new(),
            output_dir: "o".into(),
            threads: None,
        };
        cfg.spec.insert("n_test".into(), 50.into());
        let s = synth_spec(&cfg, Some(3)).unwrap();
        assert_eq!((s.n_test, s.seed, s.positive_rate), (50, 3, 0.04));
        cfg.spec.insert("bogus".into(), 1.into());
        assert!(synth_spec(&cfg, None).unwrap_err().to_string().contains("spec.bogus"));
    }
}
