//! Train adaptive and uniform adapters on the planted-rank task and compare.
//!
//! Takes a seed as the first argument (default 0). Runs a few thousand steps,
//! so use `--release`.

use ard_lora::experiments::{generate_task, planted_config, train_mode};
use ard_lora::trainer::Mode;

fn main() -> ard_lora::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = planted_config(seed);
    let task = generate_task(&cfg.task_spec())?;
    println!("planted ranks per head: {:?}", task.planted);

    let ada = train_mode(&cfg, &task, Mode::Adaptive, None)?;
    let uni = train_mode(&cfg, &task, Mode::Uniform, None)?;
    let (a, u) = (&ada.summary, &uni.summary);

    println!("learned ranks:          {:?}", a.ranks);
    println!("recovery (spearman):    {:.3}", a.recovery.unwrap_or(f64::NAN));
    println!("loss    adaptive {:.3e}  uniform {:.3e}", a.final_task_loss, u.final_task_loss);
    println!("params  adaptive {}  uniform {}", a.final_params, u.final_params);
    println!(
        "ratios  loss {:.3}  params {:.3}",
        a.final_task_loss / u.final_task_loss,
        a.final_params as f64 / u.final_params as f64
    );
    Ok(())
}
