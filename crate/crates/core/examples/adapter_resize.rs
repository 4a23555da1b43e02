//! Grow and shrink a single adapter by moving its scale.

use ard_lora::adapter::{effective_rank, LoraAdapter};

fn main() -> ard_lora::Result<()> {
    let r0 = 4;
    for alpha in [0.0, 0.1, 0.5, 1.0, 1.4, 2.0, 3.5] {
        println!("alpha {alpha:<4} -> rank {}", effective_rank(r0, alpha, 2 * r0));
    }

    let mut ad = LoraAdapter::new(0, 0, 16, 16, r0, 1)?;
    // fresh adapters start with B = 0, so give it something to rank
    for (i, v) in ad.factors_mut().0.data_mut().iter_mut().enumerate() {
        *v = ((i * 37) % 11) as f64 / 11.0 - 0.5;
    }
    println!("\nimportance: {:.4?}", ad.importance_scores());

    let before = ad.forward_delta();
    ad.update_alpha(1.9, ard_lora::adapter::DEFAULT_ALPHA_MAX);
    ad.sync_rank(2)?;
    let grown = ad.forward_delta();
    println!(
        "grew to rank {}, delta moved by {:.3e} (scale change only)",
        ad.rank(),
        grown.sub(&before.scale(1.9))?.frobenius_norm()
    );

    ad.update_alpha(0.3, ard_lora::adapter::DEFAULT_ALPHA_MAX);
    ad.sync_rank(3)?;
    println!("shrank to rank {}, {} params", ad.rank(), ad.param_count());
    ad.check_invariants()
}
