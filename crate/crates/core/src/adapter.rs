//! One head's low-rank adapter: the factor pair `(B, A)`, the learnable scale
//! `alpha`, and the rank bookkeeping that ties the two together.
//!
//! The scale plays two roles. It multiplies the product, `delta = alpha * B A`,
//! which is where its gradient comes from. Its rounding, `max(1, round(r0 *
//! alpha))`, decides how many factor pairs the head keeps. No gradient flows
//! through the rounding.

use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::rng::{self, STREAM_GROW};

/// Upper end of the projection box for `alpha`.
pub const DEFAULT_ALPHA_MAX: f64 = 4.0;

/// `max(1, round_half_away(r0 * alpha))`, capped at `r_max`.
pub fn effective_rank(r0: usize, alpha: f64, r_max: usize) -> usize {
    let raw = (r0 as f64 * alpha).round();
    // NaN fails the comparison; `as` saturates +inf onto the cap.
    let r = if raw >= 1.0 {
        raw as usize
    } else {
        1
    };
    r.min(r_max).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub layer: usize,
    pub head: usize,
    b: Matrix,
    a: Matrix,
    alpha: f64,
    alpha_prev: f64,
    r0: usize,
    r_max: usize,
}

impl LoraAdapter {
    /// Fresh adapter at `alpha = 1`, rank `r0`: `B = 0`, `A ~ N(0, 1/k)`.
    pub fn new(layer: usize, head: usize, d: usize, k: usize, r0: usize, seed: u64) -> Result<Self> {
        if r0 == 0 || d == 0 || k == 0 {
            return Err(Error::invalid("adapter dimensions and base rank must be positive"));
        }
        let mut rng = rng::rng_from(seed, &[layer as u64, head as u64]);
        let a = Matrix::gaussian(r0, k, 1.0 / (k as f64).sqrt(), &mut rng);
        Ok(LoraAdapter {
            layer,
            head,
            b: Matrix::zeros(d, r0),
            a,
            alpha: 1.0,
            alpha_prev: 1.0,
            r0,
            r_max: 2 * r0,
        })
    }

    /// Adapter from explicit factors. `b.cols()` must equal `a.rows()` and the
    /// rank must be consistent with `r0` and `alpha`.
    pub fn from_factors(b: Matrix, a: Matrix, alpha: f64, r0: usize) -> Result<Self> {
        let ad = LoraAdapter {
            layer: 0,
            head: 0,
            b,
            a,
            alpha,
            alpha_prev: alpha,
            r0,
            r_max: 2 * r0,
        };
        ad.check_invariants()?;
        Ok(ad)
    }

    pub fn with_labels(mut self, layer: usize, head: usize) -> Self {
        self.layer = layer;
        self.head = head;
        self
    }

    #[inline]
    pub fn b(&self) -> &Matrix {
        &self.b
    }

    #[inline]
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn alpha_prev(&self) -> f64 {
        self.alpha_prev
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    #[inline]
    pub fn r0(&self) -> usize {
        self.r0
    }

    #[inline]
    pub fn r_max(&self) -> usize {
        self.r_max
    }

    /// Output dimension `d`.
    pub fn d(&self) -> usize {
        self.b.rows()
    }

    /// Input dimension `k`.
    pub fn k(&self) -> usize {
        self.a.cols()
    }

    /// Rank the current `alpha` asks for.
    pub fn target_rank(&self) -> usize {
        effective_rank(self.r0, self.alpha, self.r_max)
    }

    /// Records the current scale as previous and projects `value` into `[0, alpha_max]`.
    pub fn update_alpha(&mut self, value: f64, alpha_max: f64) {
        self.alpha_prev = self.alpha;
        self.alpha = value.clamp(0.0, alpha_max);
    }

    /// Overwrites the scale without touching history. Meant for tests and tooling.
    pub fn set_alpha(&mut self, value: f64) {
        self.alpha = value.max(0.0);
    }

    /// Mutable access to both factors at once; shapes must be preserved.
    pub fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.b, &mut self.a)
    }

    /// The unscaled product `B A`.
    pub fn product(&self) -> Matrix {
        matmul(&self.b, &self.a).expect("factor shapes are kept consistent")
    }

    /// `alpha * B A`, the head's weight update.
    pub fn forward_delta(&self) -> Matrix {
        self.product().scale(self.alpha)
    }

    /// `s_i = |B[:, i]| * |A[i, :]|` for each factor pair.
    pub fn importance_scores(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|i| {
                let bn = (0..self.b.rows())
                    .map(|r| self.b[(r, i)].powi(2))
                    .sum::<f64>()
                    .sqrt();
                let an = self.a.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                bn * an
            })
            .collect()
    }

    /// Pair indices by descending importance; ties keep the lower index first.
    pub fn importance_order(&self) -> Vec<usize> {
        let s = self.importance_scores();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
        idx
    }

    /// Changes the number of factor pairs to `new_r`.
    ///
    /// Shrinking keeps the `new_r` most important pairs in importance order.
    /// Growing appends zero columns to `B` and Gaussian rows (std `1/sqrt(k)`)
    /// to `A`, which leaves `forward_delta` bit-identical. Equal rank is a no-op.
    pub fn resize(&mut self, new_r: usize, seed: u64) -> Result<()> {
        if new_r == 0 || new_r > self.r_max {
            return Err(Error::invalid(format!(
                "resize to rank {new_r} outside 1..={}",
                self.r_max
            )));
        }
        let r = self.rank();
        if new_r < r {
            let keep = &self.importance_order()[..new_r];
            self.b = self.b.select_columns(keep);
            self.a = self.a.select_rows(keep);
        } else if new_r > r {
            let extra = new_r - r;
            let k = self.k();
            let mut rng = rng::rng_from(seed, &[STREAM_GROW, self.layer as u64, self.head as u64]);
            let rows = Matrix::gaussian(extra, k, 1.0 / (k as f64).sqrt(), &mut rng);
            self.b = self.b.hstack(&Matrix::zeros(self.d(), extra))?;
            self.a = self.a.vstack(&rows)?;
        }
        Ok(())
    }

    /// Resizes to the rank implied by the current `alpha`. Returns whether the
    /// rank changed.
    pub fn sync_rank(&mut self, seed: u64) -> Result<bool> {
        let target = self.target_rank();
        if target == self.rank() {
            return Ok(false);
        }
        self.resize(target, seed)?;
        Ok(true)
    }

    /// Trainable parameters held right now: `d * r + r * k`.
    pub fn param_count(&self) -> usize {
        self.d() * self.rank() + self.rank() * self.k()
    }

    /// Verifies every adapter invariant against the current state.
    pub fn check_invariants(&self) -> Result<()> {
        let breach = |m: String| Err(Error::InvariantBreach(m));
        if self.b.cols() != self.a.rows() {
            return breach(format!(
                "factor inner dimensions differ: B has {} columns, A has {} rows",
                self.b.cols(),
                self.a.rows()
            ));
        }
        if self.rank() == 0 || self.rank() > self.r_max {
            return breach(format!("rank {} outside 1..={}", self.rank(), self.r_max));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return breach(format!("alpha {} outside the projection box", self.alpha));
        }
        if self.rank() != self.target_rank() {
            return breach(format!(
                "rank {} but alpha {} implies {}",
                self.rank(),
                self.alpha,
                self.target_rank()
            ));
        }
        if !self.b.is_finite() || !self.a.is_finite() {
            return breach("non-finite factor entries".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adapter(d: usize, k: usize, r: usize, alpha: f64, seed: u64) -> LoraAdapter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Matrix::gaussian(d, r, 1.0, &mut rng);
        let a = Matrix::gaussian(r, k, 1.0, &mut rng);
        let mut ad = LoraAdapter::from_factors(b, a, 1.0, r).unwrap();
        ad.set_alpha(alpha);
        ad
    }

    #[test]
    fn effective_rank_examples() {
        assert_eq!(effective_rank(16, 1.0, 32), 16);
        assert_eq!(effective_rank(16, 0.0, 32), 1);
        assert_eq!(effective_rank(8, 2.1, 16), 16);
        assert_eq!(effective_rank(8, 2.1, 100), 17);
        // ties round away from zero
        assert_eq!(effective_rank(4, 0.625, 8), 3);
        assert_eq!(effective_rank(4, f64::INFINITY, 8), 8);
    }

    #[test]
    fn zero_factor_and_closed_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Matrix::gaussian(2, 3, 1.0, &mut rng);
        let ad = LoraAdapter::from_factors(Matrix::zeros(4, 2), a, 1.0, 2).unwrap();
        assert_eq!(ad.forward_delta(), Matrix::zeros(4, 3));
        let mut ad = adapter(4, 3, 2, 1.0, 1);
        ad.set_alpha(0.0);
        assert_eq!(ad.forward_delta().max_abs(), 0.0);
    }

    #[test]
    fn delta_is_sum_of_outer_products() {
        let ad = adapter(4, 3, 2, 1.0, 2);
        let expected = Matrix::from_fn(4, 3, |i, j| {
            (0..2).map(|p| ad.b()[(i, p)] * ad.a()[(p, j)]).sum()
        });
        assert!(ad.forward_delta().sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn importance_order_ties_and_sort() {
        let ad = LoraAdapter::from_factors(Matrix::zeros(3, 3), Matrix::zeros(3, 4), 1.0, 3).unwrap();
        assert_eq!(ad.importance_order(), vec![0, 1, 2]);

        // unit A rows, B columns scaled to (0.1, 5, 2)
        let b = Matrix::from_fn(2, 3, |r, c| if r == 0 { [0.1, 5.0, 2.0][c] } else { 0.0 });
        let a = Matrix::from_fn(3, 2, |r, c| if c == 0 { 1.0 } else { 0.0 * r as f64 });
        let ad = LoraAdapter::from_factors(b, a, 1.0, 3).unwrap();
        assert_eq!(ad.importance_order(), vec![1, 2, 0]);
    }

    #[test]
    fn grow_keeps_delta_exactly() {
        let mut ad = LoraAdapter::new(0, 0, 5, 4, 2, 3).unwrap();
        ad.factors_mut().0.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.3 - 1.0);
        let before = ad.forward_delta();
        ad.resize(4, 11).unwrap();
        assert_eq!(ad.rank(), 4);
        assert_eq!(ad.forward_delta(), before);
    }

    #[test]
    fn shrink_keeps_important_pairs() {
        let b = Matrix::from_fn(3, 3, |r, c| if r == c { [5.0, 0.1, 2.0][c] } else { 0.0 });
        let a = Matrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64 * 0.1 + 1.0);
        let mut ad = LoraAdapter::from_factors(b.clone(), a.clone(), 1.0, 3).unwrap();
        ad.set_alpha(0.7);
        ad.resize(2, 0).unwrap();
        let expected = Matrix::from_fn(3, 3, |i, j| {
            0.7 * (b[(i, 0)] * a[(0, j)] + b[(i, 2)] * a[(2, j)])
        });
        assert!(ad.forward_delta().sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn resize_bounds() {
        let mut ad = LoraAdapter::new(0, 0, 4, 4, 2, 0).unwrap();
        assert!(ad.resize(0, 0).is_err());
        assert!(ad.resize(5, 0).is_err());
        ad.resize(4, 0).unwrap();
        let snapshot = ad.clone();
        ad.resize(4, 99).unwrap();
        assert_eq!(ad, snapshot);
    }

    #[test]
    fn param_count_examples() {
        let mut ad = LoraAdapter::new(0, 0, 64, 64, 4, 0).unwrap();
        assert_eq!(ad.param_count(), 512);
        let small = LoraAdapter::new(0, 0, 8, 8, 1, 0).unwrap();
        assert_eq!(small.param_count(), 16);
        let at4 = ad.param_count();
        ad.resize(8, 0).unwrap();
        let mut big = LoraAdapter::new(0, 0, 64, 64, 16, 0).unwrap();
        assert_eq!(big.param_count(), 4 * at4);
        big.resize(4, 0).unwrap();
        assert_eq!(big.param_count(), at4);
    }

    #[test]
    fn sync_restores_invariants() {
        let mut ad = LoraAdapter::new(1, 2, 6, 5, 4, 0).unwrap();
        ad.update_alpha(0.3, DEFAULT_ALPHA_MAX);
        assert!(ad.check_invariants().is_err());
        assert!(ad.sync_rank(5).unwrap());
        assert_eq!(ad.rank(), 1);
        ad.check_invariants().unwrap();
        ad.update_alpha(9.0, DEFAULT_ALPHA_MAX);
        assert_eq!(ad.alpha(), DEFAULT_ALPHA_MAX);
        ad.sync_rank(5).unwrap();
        assert_eq!(ad.rank(), 8);
        ad.check_invariants().unwrap();
    }
}
