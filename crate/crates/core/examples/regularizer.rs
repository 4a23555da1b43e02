//! L1 + temporal smoothness penalty on a few hand-made scale traces.

use ard_lora::regularizer::{alpha_gradient, penalty_gradient, regularizer_value, AlphaTrace, RegConfig};

fn main() -> ard_lora::Result<()> {
    let cfg = RegConfig::new(0.01, 0.1)?;
    let traces = vec![
        AlphaTrace::from_values(vec![1.0, 1.0, 1.0, 1.0])?,
        AlphaTrace::from_values(vec![1.0, 1.2, 1.5, 1.9])?,
        AlphaTrace::from_values(vec![1.0, 0.6, 0.3, 0.0])?,
    ];

    for t in 0..4 {
        let v = regularizer_value(&traces, t, &cfg)?;
        println!("t={t} l1={:.3} tv={:.3} total={:.4}", v.l1, v.tv, v.total);
    }

    println!();
    for (i, tr) in traces.iter().enumerate() {
        let p = penalty_gradient(tr, 3, &cfg)?;
        let g = alpha_gradient(0.05, tr, 3, &cfg)?;
        println!("head {i}: penalty grad {p:+.5}, with task grad 0.05 -> {g:+.5}");
    }
    Ok(())
}
