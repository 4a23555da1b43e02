//! Inject huge gradient spikes into the scale update and watch clipping hold.

use ard_lora::trainer::{stability_monitor, GradientSpike, Mode, Trainer, TrainerConfig};
use ard_lora::verify::gradient_fixture;

fn main() -> ard_lora::Result<()> {
    let (state, x, y) = gradient_fixture(5, 2, 2, 8, 3)?;
    let cfg = TrainerConfig {
        r0: 3,
        eta_theta: 0.05,
        eta_alpha: 5e-4,
        steps: 200,
        mode: Mode::Adaptive,
        spike: Some(GradientSpike { every: 7, magnitude: 1e6 }),
        ..TrainerConfig::default()
    };
    let records = Trainer::new(cfg.clone(), state)?.run(&x, &y, |_| Ok(()))?;
    let rep = stability_monitor(&records, cfg.clip_c, cfg.eta_alpha)?;
    println!("max |d alpha| {:.3e}, bound {:.3e}, {} transitions", rep.max_delta, rep.bound, rep.transitions);
    Ok(())
}
