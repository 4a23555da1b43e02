//! Approximation-error bounds, the capacity term and rank-allocation statistics.

use serde::Serialize;

use crate::adapter::{effective_rank, LoraAdapter};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, svd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxErrorReport {
    /// `|target - alpha B A|_F`
    pub epsilon: f64,
    /// `sqrt(sum_{i > r} sigma_i^2)`, the best achievable error at rank `r`.
    pub tail_sqrt: f64,
    /// `sum_{i > r} sigma_i`
    pub loose_bound: f64,
    pub rank: usize,
}

/// How well an adapter reproduces `target`, next to the best possible error
/// at the adapter's rank.
pub fn approx_error(target: &Matrix, ad: &LoraAdapter) -> Result<ApproxErrorReport> {
    if target.shape() != (ad.d(), ad.k()) {
        return Err(Error::invalid(format!(
            "target is {:?}, adapter produces {:?}",
            target.shape(),
            (ad.d(), ad.k())
        )));
    }
    let epsilon = frobenius_norm(&target.sub(&ad.forward_delta())?);
    let s = svd(target)?;
    let rank = ad.rank();
    Ok(ApproxErrorReport {
        epsilon,
        tail_sqrt: s.tail_norm(rank),
        loose_bound: s.tail_sum(rank),
        rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaSearch {
    pub alpha: f64,
    pub rank: usize,
    /// No realizable rank meets the tolerance; `alpha` is the cap.
    pub saturated: bool,
}

/// Smallest scale on the grid `{1/r0, ..., 2 r0 / r0}` whose rank brings the
/// best-approximation error down to `eps`.
pub fn min_alpha_for_tolerance(target: &Matrix, r0: usize, eps: f64) -> Result<AlphaSearch> {
    if r0 == 0 {
        return Err(Error::invalid("r0 must be >= 1"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("tolerance must be > 0"));
    }
    let s = svd(target)?;
    let r_max = 2 * r0;
    for j in 1..=r_max {
        let alpha = j as f64 / r0 as f64;
        let r = effective_rank(r0, alpha, r_max);
        if s.tail_norm(r) <= eps {
            return Ok(AlphaSearch { alpha, rank: r, saturated: false });
        }
    }
    Ok(AlphaSearch {
        alpha: r_max as f64 / r0 as f64,
        rank: r_max,
        saturated: true,
    })
}

/// `sum_h ln(max(1, r0 * alpha_h))`
pub fn capacity_term(alphas: &[f64], r0: usize) -> f64 {
    alphas.iter().map(|&a| (r0 as f64 * a).max(1.0).ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankStatistics {
    pub heads: usize,
    /// Fraction of heads with rank below `0.8 r0`.
    pub frac_below: f64,
    /// Fraction with rank above `1.5 r0`.
    pub frac_above: f64,
    pub frac_middle: f64,
    /// `mean(r0 * alpha)`
    pub mean_scaled_rank: f64,
    pub mean_effective_rank: f64,
    pub total_params: usize,
    /// Parameters the same heads would hold at rank `r0`.
    pub uniform_params: usize,
    pub relative_params: f64,
}

pub fn rank_statistics(adapters: &[LoraAdapter], r0: usize) -> RankStatistics {
    let n = adapters.len();
    let r0f = r0 as f64;
    let (mut below, mut above) = (0usize, 0usize);
    for ad in adapters {
        let r = ad.rank() as f64;
        if r < 0.8 * r0f {
            below += 1;
        } else if r > 1.5 * r0f {
            above += 1;
        }
    }
    let middle = n - below - above;
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mean = |f: &dyn Fn(&LoraAdapter) -> f64| {
        if n == 0 {
            0.0
        } else {
            adapters.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let total_params: usize = adapters.iter().map(LoraAdapter::param_count).sum();
    let uniform_params: usize = adapters.iter().map(|a| r0 * (a.d() + a.k())).sum();
    RankStatistics {
        heads: n,
        frac_below: frac(below),
        frac_above: frac(above),
        frac_middle: frac(middle),
        mean_scaled_rank: mean(&|a| r0f * a.alpha()),
        mean_effective_rank: mean(&|a| a.rank() as f64),
        total_params,
        uniform_params,
        relative_params: if uniform_params == 0 {
            0.0
        } else {
            total_params as f64 / uniform_params as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::truncate_rank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at_alpha(alpha: f64, r0: usize) -> LoraAdapter {
        let mut ad = LoraAdapter::new(0, 0, 6, 5, r0, 1).unwrap();
        ad.update_alpha(alpha, 4.0);
        ad.sync_rank(0).unwrap();
        ad
    }

    #[test]
    fn svd_truncation_adapter_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = Matrix::gaussian(6, 5, 1.0, &mut rng);
        let s = svd(&target).unwrap();
        let r = 2;
        let idx: Vec<usize> = (0..r).collect();
        let mut b = s.u.select_columns(&idx);
        for row in 0..b.rows() {
            for c in 0..r {
                b[(row, c)] *= s.sigma[c];
            }
        }
        let a = s.v.select_columns(&idx).transpose();
        let ad = LoraAdapter::from_factors(b, a, 1.0, r).unwrap();
        let rep = approx_error(&target, &ad).unwrap();
        assert!((rep.epsilon - rep.tail_sqrt).abs() <= 1e-8);
        assert!(rep.epsilon <= rep.loose_bound + 1e-8);
        let (_, res) = truncate_rank(&target, r).unwrap();
        assert!((res - rep.tail_sqrt).abs() < 1e-12);
    }

    #[test]
    fn closed_adapter_error_is_target_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = Matrix::gaussian(6, 5, 1.0, &mut rng);
        let mut ad = LoraAdapter::new(0, 0, 6, 5, 3, 0).unwrap();
        ad.set_alpha(0.0);
        let rep = approx_error(&target, &ad).unwrap();
        assert_eq!(rep.epsilon, frobenius_norm(&target));
        assert!(approx_error(&Matrix::zeros(5, 5), &ad).is_err());
    }

    #[test]
    fn alpha_search_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = Matrix::gaussian(8, 7, 1.0, &mut rng);
        let big = frobenius_norm(&target) * 1.01;
        let res = min_alpha_for_tolerance(&target, 4, big).unwrap();
        assert_eq!((res.alpha, res.rank, res.saturated), (0.25, 1, false));

        let b = Matrix::gaussian(20, 3, 1.0, &mut rng);
        let a = Matrix::gaussian(3, 20, 1.0, &mut rng);
        let rank3 = crate::linalg::matmul(&b, &a).unwrap();
        let res = min_alpha_for_tolerance(&rank3, 16, 1e-9).unwrap();
        assert_eq!(res.alpha, 3.0 / 16.0);

        let res = min_alpha_for_tolerance(&target, 2, 1e-9).unwrap();
        assert!(res.saturated);
        assert_eq!(res.alpha, 2.0);
    }

    #[test]
    fn capacity_examples() {
        assert!((capacity_term(&[1.0; 4], 16) - 4.0 * 16f64.ln()).abs() < 1e-12);
        assert!((capacity_term(&[1.0; 4], 16) - 11.0904).abs() < 1e-4);
        assert_eq!(capacity_term(&[0.01, 0.0], 16), 0.0);
    }

    #[test]
    fn statistics_examples() {
        let uniform: Vec<_> = (0..4).map(|_| at_alpha(1.0, 4)).collect();
        let s = rank_statistics(&uniform, 4);
        assert_eq!((s.frac_below, s.frac_above), (0.0, 0.0));
        assert_eq!(s.mean_scaled_rank, 4.0);
        assert_eq!(s.relative_params, 1.0);

        let mut split: Vec<_> = (0..2).map(|_| at_alpha(0.0, 4)).collect();
        split.extend((0..2).map(|_| at_alpha(2.0, 4)));
        let s = rank_statistics(&split, 4);
        assert_eq!((s.frac_below, s.frac_above, s.frac_middle), (0.5, 0.5, 0.0));
    }
}
