//! Best rank-r approximation of a random matrix and how the error falls with r.

use ard_lora::linalg::{svd, truncate_rank, Matrix};
use ard_lora::rng::rng_from;

fn main() -> ard_lora::Result<()> {
    let m = Matrix::gaussian(12, 8, 1.0, &mut rng_from(7, &[]));
    let s = svd(&m)?;
    println!("singular values: {:.3?}", s.sigma);

    println!("{:>4} {:>12} {:>12}", "r", "error", "tail");
    for r in 1..=8 {
        let (approx, err) = truncate_rank(&m, r)?;
        let actual = m.sub(&approx)?.frobenius_norm();
        println!("{r:>4} {actual:>12.6} {err:>12.6}");
    }
    Ok(())
}
