use ard_lora::analysis::{approx_error, capacity_term, min_alpha_for_tolerance};
use ard_lora::linalg::{matmul, Matrix};
use ard_lora::rng::rng_from;

// A rank-5 target plus a little noise: how small can the scale get for a given tolerance?
fn main() -> ard_lora::Result<()> {
    let mut rng = rng_from(2, &[]);
    let p = Matrix::gaussian(24, 5, 1.0, &mut rng);
    let q = Matrix::gaussian(5, 24, 1.0, &mut rng);
    let target = matmul(&p, &q)?.add(&Matrix::gaussian(24, 24, 0.01, &mut rng))?;

    let r0 = 8;
    for eps in [20.0, 5.0, 1.0, 0.5] {
        let s = min_alpha_for_tolerance(&target, r0, eps)?;
        println!("eps {eps:>5}: alpha {:.3} rank {} saturated {}", s.alpha, s.rank, s.saturated);
    }

    let ad = ard_lora::adapter::LoraAdapter::new(0, 0, 24, 24, r0, 3)?;
    let rep = approx_error(&target, &ad)?;
    println!("untrained adapter: error {:.3}, best at rank {} {:.3}", rep.epsilon, rep.rank, rep.tail_sqrt);
    println!("capacity at alphas [0.5, 1, 2]: {:.3}", capacity_term(&[0.5, 1.0, 2.0], r0));
    Ok(())
}
