//! Track the smallest squared gradient norm seen so far and check it decays like 1/t.

use ard_lora::trainer::{convergence_monitor, Mode, Trainer, TrainerConfig};
use ard_lora::verify::gradient_fixture;

fn main() -> ard_lora::Result<()> {
    let (state, x, y) = gradient_fixture(3, 1, 2, 10, 3)?;
    let cfg = TrainerConfig {
        r0: 3,
        lambda: 0.0,
        eta_theta: 0.05,
        eta_alpha: 0.0,
        steps: 1000,
        mode: Mode::Adaptive,
        ..TrainerConfig::default()
    };
    let records = Trainer::new(cfg, state)?.run(&x, &y, |_| Ok(()))?;
    for t in [0, 10, 100, 999] {
        println!("step {t:>4}: loss {:.4e}  |g|^2 {:.4e}", records[t].task_loss, records[t].grad_norm_sq);
    }
    let rep = convergence_monitor(&records, 0.5)?;
    println!(
        "C = {:.3e}, worst t*min|g|^2 over the tail = {:.3e}, passed = {}",
        rep.fitted_c, rep.worst_tail, rep.passed
    );
    Ok(())
}
