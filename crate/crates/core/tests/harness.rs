use retok::fixtures;
use retok::harness::stats::{binomial_upper_tail, cochran_armitage, paired_t_less};
use retok::harness::{run_investigation, run_stego_bench, run_wm_bench, ExperimentConfig, HarnessError};
use std::path::Path;

const TINY: &str = r#"
name = "tiny"
seed = 3

[model]
fixture = "ambiguous"

[investigate]
lengths = [10, 40]
samples = 30
top_m = 8

[stego]
top_k = [8]
filters = ["stepwise", "mwis"]
codecs = ["arith"]
samples = 25
message_bits = 32
bpt_bounds = [0.0, 4.0, 8.0]

[watermark]
schemes = ["unigram"]
tokens = 40
samples = 25
calibration_samples = 20
epsilons = [0.0, 0.5]
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY, Path::new(".")).unwrap()
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let base = Path::new(".");
    assert!(matches!(
        ExperimentConfig::from_toml("[model]\nfixture = \"ambiguous\"\nbogus = 1\n", base),
        Err(HarnessError::Config(_))
    ));
    assert!(ExperimentConfig::from_toml("[model]\n", base).is_err());
    let bad_eps = "[model]\nfixture = \"ambiguous\"\n[watermark]\nepsilons = [1.5]\n";
    assert!(ExperimentConfig::from_toml(bad_eps, base).is_err());
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures::ambiguous();
    fx.tokenizer.save(dir.path().join("tk.json")).unwrap();
    fx.model.save(dir.path().join("lm.json")).unwrap();
    std::fs::write(dir.path().join("prompts.txt"), " the day was long\n a small boat\n").unwrap();
    let toml = "[model]\ntokenizer = \"tk.json\"\nngram = \"lm.json\"\n[prompts]\ncorpus = \"prompts.txt\"\nwords = 3\n";
    std::fs::write(dir.path().join("exp.toml"), toml).unwrap();
    let cfg = ExperimentConfig::load(dir.path().join("exp.toml")).unwrap();
    assert_eq!(cfg.model.tokenizer.as_deref(), Some(dir.path().join("tk.json").as_path()));
    let res = cfg.resources().unwrap();
    let (text, ids) = res.prompt(&cfg.prompts, 0).unwrap();
    assert_eq!(res.tokenizer.encode_ids(&text).unwrap(), ids);
    assert!(text.split_whitespace().count() <= 3);
}

#[test]
fn full_grid_widens_the_sweep() {
    let mut cfg = tiny();
    cfg.full_grid = true;
    let e = cfg.effective();
    assert_eq!(e.investigate.samples, 1000);
    assert_eq!(e.stego.top_k.first(), Some(&4));
    assert_eq!(e.stego.top_k.last(), Some(&4096));
}

#[test]
fn reports_write_json_and_csv() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    for report in [run_investigation(&cfg).unwrap(), run_stego_bench(&cfg).unwrap(), run_wm_bench(&cfg).unwrap()] {
        let out = dir.path().join(&report.experiment);
        report.write(&out).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(json["config"]["seed"], 3);
        assert!(json["environment"].is_object());
        for t in &report.tables {
            let mut rdr = csv::Reader::from_path(out.join(format!("{}.csv", t.name))).unwrap();
            assert_eq!(rdr.headers().unwrap().len(), t.columns.len());
            assert_eq!(rdr.records().count(), t.rows.len());
        }
    }
}

#[test]
fn investigation_rows_cover_each_length() {
    let r = run_investigation(&tiny()).unwrap();
    let rates = r.table("rates").unwrap();
    assert_eq!(rates.values("length"), vec![&serde_json::json!(10), &serde_json::json!(40)]);
    for v in rates.values("text_level") {
        let x = v.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
    assert!(r.summary.contains_key("text_level_trend_z"));
}

#[test]
fn stego_cells_and_buckets() {
    let r = run_stego_bench(&tiny()).unwrap();
    let cells = r.table("cells").unwrap();
    assert_eq!(cells.rows.len(), 2);
    for v in cells.values("extraction_errors") {
        assert_eq!(v, &serde_json::json!(0));
    }
    let buckets = r.table("buckets").unwrap();
    let samples: u64 = buckets.values("samples").iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(samples, 50);
    for (s, flag) in buckets.values("samples").iter().zip(buckets.values("insufficient")) {
        assert_eq!(flag.as_bool().unwrap(), s.as_u64().unwrap() <= 20);
    }
}

#[test]
fn watermark_bench_runs_both_arms() {
    let r = run_wm_bench(&tiny()).unwrap();
    let d = r.table("detection").unwrap();
    assert_eq!(d.rows.len(), 4);
    let arms = d.values("arm");
    let consistent = d.values("consistent_fraction");
    for (a, c) in arms.iter().zip(consistent) {
        if *a == "rollback" {
            assert_eq!(c.as_f64(), Some(1.0));
        }
    }
    assert!(r.summary["q"].as_u64().is_some());
}

#[test]
fn statistics_against_closed_forms() {
    // P(X >= 2 | n = 3, p = 0.5) = 4/8
    assert!((binomial_upper_tail(2, 3, 0.5) - 0.5).abs() < 1e-12);
    assert_eq!(binomial_upper_tail(0, 10, 0.3), 1.0);
    let trend = cochran_armitage(&[1, 5, 9], &[10, 10, 10], &[0.0, 1.0, 2.0]);
    assert!(trend.statistic > 3.0 && trend.p_value < 0.01);
    let flat = cochran_armitage(&[5, 5, 5], &[10, 10, 10], &[0.0, 1.0, 2.0]);
    assert!(flat.statistic.abs() < 1e-12);
    let t = paired_t_less(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.5, 4.0, 5.5]);
    assert!(t.statistic < 0.0 && t.p_value < 0.05);
}
