//! Mixed-type survey through ingest, preprocessing, scoring, selection and evaluation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sts_select::embed::{EmbeddingSource, WordVectorTable};
use sts_select::model_eval::{evaluate, ClassifierSpec, CvPlan, PipelineSpec};
use sts_select::scoring::{score, Scorer};
use sts_select::selection::{select, SelectionConfig};
use sts_select::tabular::{
    apply_preprocess, collapse_responses, derive_label, filter_columns, fit_preprocess, read_csv, ColumnKind, LabelRule,
    Schema,
};
use sts_select::{MiConfig, ScorerKind, StsScoreConfig};

fn survey(n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = String::from("pid,visit,pain_level,sleep_hours,region,free_text,q1,q2,q3,q4\n");
    for i in 0..n {
        let sick = i % 3 == 0;
        // an earlier partial response that collapsing must overwrite
        writeln!(s, "p{i},2021-01-0{}T08:00:00Z,NA,NA,north,x{i},no,no,0,0", 1 + i % 9).unwrap();
        let pain = if sick { 6.0 } else { 2.0 } + rng.random_range(-1.5..1.5);
        let sleep = 7.0 + rng.random_range(-2.0..2.0);
        let region = ["north", "south", "east"][rng.random_range(0..3)];
        let sleep_cell = if i % 11 == 0 { "NA".to_owned() } else { format!("{sleep:.2}") };
        let answers = if sick { "yes,yes,5,1" } else { "yes,no,1,1" };
        writeln!(s, "p{i},2021-02-{:02}T09:30:00Z,{pain:.2},{sleep_cell},{region},free {i},{answers}", 1 + i % 28).unwrap();
    }
    s
}

fn schema() -> Schema {
    let mut s = Schema::new("pid")
        .with_column("pid", ColumnKind::Categorical)
        .with_column("visit", ColumnKind::DateTime)
        .with_column("pain_level", ColumnKind::Numeric)
        .with_column("sleep_hours", ColumnKind::Numeric)
        .with_column("region", ColumnKind::Categorical)
        .with_column("free_text", ColumnKind::Categorical)
        .with_column("q1", ColumnKind::Categorical)
        .with_column("q2", ColumnKind::Categorical)
        .with_column("q3", ColumnKind::Numeric)
        .with_column("q4", ColumnKind::Numeric);
    s.label_rule = Some(LabelRule::new("q1", "q2", "q3", "q4"));
    s
}

#[test]
fn survey_end_to_end() {
    let schema = schema();
    let raw = read_csv(survey(120).as_bytes(), &schema).unwrap();
    assert_eq!(raw.row_count(), 240);
    let ds = collapse_responses(&raw);
    assert_eq!(ds.row_count(), 120);
    let (ds, labels) = derive_label(&ds, schema.label_rule.as_ref().unwrap()).unwrap();
    assert_eq!(labels.iter().filter(|&&l| l).count(), 40);
    let ds = filter_columns(&ds, &schema.filter_policy()).unwrap();
    assert!(ds.column("free_text").is_none());

    let plan = fit_preprocess(&ds).unwrap();
    let fm = apply_preprocess(&plan, &ds).unwrap().matrix;
    assert_eq!(
        fm.feature_names(),
        ["visit", "pain_level", "sleep_hours", "region_east", "region_north", "region_south"]
    );
    assert!(fm.columns().iter().flatten().all(|v| v.is_finite()));

    let mi = ScorerKind::Mi { mi: MiConfig::default() };
    let scores = score(&fm, &labels, Scorer::new(&mi, None), true).unwrap();
    let top = select(&scores, &SelectionConfig::TopN { n: 1 }).unwrap();
    assert_eq!(top.selected_names(), ["pain_level"]);

    let mut words = WordVectorTable::new(3);
    words.insert("pain", vec![1.0, 0.0, 0.0]).unwrap();
    words.insert("level", vec![0.9, 0.1, 0.0]).unwrap();
    words.insert("sleep", vec![0.0, 1.0, 0.0]).unwrap();
    words.insert("region", vec![0.0, 0.0, 1.0]).unwrap();
    words.insert("visit", vec![0.1, 0.1, 0.9]).unwrap();
    let src = EmbeddingSource::Words(words);
    let sts = ScorerKind::Sts {
        sts: StsScoreConfig {
            target_names: vec!["pain".into()],
            strip_category_suffix: true,
        },
    };
    let grid = vec![
        PipelineSpec {
            scorer: sts,
            selection: SelectionConfig::TopN { n: 1 },
            classifier: ClassifierSpec::Gnb,
        },
        PipelineSpec {
            scorer: mi,
            selection: SelectionConfig::StdDev { k: 1.0 },
            classifier: ClassifierSpec::Knn { n_neighbors: 5 },
        },
    ];
    let report = evaluate(&ds, &labels, &grid, &CvPlan::default(), Some(&src)).unwrap();
    assert_eq!(report.protocol.n_test, 24);
    assert!(report.test_auroc > 0.9, "{report:?}");
    assert!(report.selected_features.contains(&"pain_level".to_owned()));
}
