//! Run the three benchmark drivers from a TOML config and write the reports.
//!
//!     cargo run --release --example investigation -- configs/desk.toml out/

use retok::harness::{run_investigation, run_stego_bench, run_wm_bench, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::from_toml(QUICK, std::path::Path::new("."))?,
    };
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/retok-report".into()));

    for report in [run_investigation(&cfg)?, run_stego_bench(&cfg)?, run_wm_bench(&cfg)?] {
        let dir = out.join(&report.experiment);
        report.write(&dir)?;
        println!("{} ({:.1}s) -> {}", report.experiment, report.runtime_secs, dir.display());
        for (k, v) in &report.summary {
            if !v.is_object() {
                println!("  {k} = {v}");
            }
        }
    }
    Ok(())
}

const QUICK: &str = r#"
name = "quick"
seed = 1

[model]
fixture = "ambiguous"

[investigate]
lengths = [25, 100, 400]
samples = 50

[stego]
top_k = [16, 64]
filters = ["none", "stepwise"]
codecs = ["arith"]
samples = 30

[watermark]
schemes = ["lefthash", "gumbel"]
tokens = 100
samples = 50
calibration_samples = 50
"#;
