//! Short training run written to disk, then read back as a report.

use ard_lora::experiments::{planted_config, report, run_experiment};
use ard_lora::trainer::Mode;

fn main() -> ard_lora::Result<()> {
    let mut cfg = planted_config(1);
    cfg.steps = 300;
    let dir = std::env::temp_dir().join("ard-lora-rank-report");
    let summary = run_experiment(&cfg, &[Mode::Adaptive, Mode::Uniform], &dir)?;
    println!("wrote {}", dir.display());
    println!("param ratio {:.3?}\n", summary.param_ratio);
    print!("{}", report(&dir)?);
    Ok(())
}
