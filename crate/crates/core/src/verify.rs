//! Self-contained oracle suites behind `oracle-check`. Each check compares an
//! implementation path against an independent route (finite differences,
//! projections onto random subspaces, recomputation from definitions).

use std::fmt;

use rand::Rng;

use crate::adapter::LoraAdapter;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, gemm, svd, truncate_rank, Matrix, Op};
use crate::model::{task_loss, ModelConfig, ModelState};
use crate::regularizer::{penalty_gradient, regularizer_value, AlphaTrace, RegConfig};
use crate::rng;

pub const SUITES: &[&str] = &["linalg", "gradient", "adapter", "regularizer", "all"];

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}/{}: {}", self.suite, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<SuiteReport>> {
    match name {
        "linalg" => Ok(vec![linalg_suite(seed)?]),
        "gradient" => Ok(vec![gradient_suite(seed)?]),
        "adapter" => Ok(vec![adapter_suite(seed)?]),
        "regularizer" => Ok(vec![regularizer_suite()?]),
        "all" => Ok(vec![
            linalg_suite(seed)?,
            gradient_suite(seed)?,
            adapter_suite(seed)?,
            regularizer_suite()?,
        ]),
        other => Err(Error::invalid(format!(
            "unknown suite `{other}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

/// Residual of the best approximation of `m` whose column space is that of
/// `basis`: `|M - Q Q^T M|_F` with `Q` an orthonormalized `basis`.
pub fn subspace_residual(m: &Matrix, basis: &Matrix) -> Result<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for c in 0..basis.cols() {
        let mut v = basis.column(c);
        for _ in 0..2 {
            for u in &q {
                let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
    }
    let qm = Matrix::from_fn(m.rows(), q.len(), |r, c| q[c][r]);
    let proj = gemm(&qm, Op::N, &gemm(&qm, Op::T, m, Op::N)?, Op::N)?;
    Ok(frobenius_norm(&m.sub(&proj)?))
}

fn linalg_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = rng::rng_from(seed, &[100]);
    let mut worst_recon = 0.0_f64;
    let mut worst_orth = 0.0_f64;
    let mut worst_tail = 0.0_f64;
    let mut loose_ok = true;
    let mut beaten = 0usize;
    let mut contests = 0usize;
    for _ in 0..50 {
        let rows = rng.gen_range(1..=32);
        let cols = rng.gen_range(1..=24);
        let m = Matrix::gaussian(rows, cols, 1.0, &mut rng);
        let s = svd(&m)?;
        let p = s.sigma.len();
        let scale = frobenius_norm(&m).max(1.0);
        worst_recon = worst_recon.max(frobenius_norm(&m.sub(&s.reconstruct(p))?) / scale);
        let utu = gemm(&s.u, Op::T, &s.u, Op::N)?.sub(&Matrix::identity(p))?;
        let vtv = gemm(&s.v, Op::T, &s.v, Op::N)?.sub(&Matrix::identity(p))?;
        worst_orth = worst_orth.max(frobenius_norm(&utu)).max(frobenius_norm(&vtv));
        for r in 1..=p {
            let (t, res) = truncate_rank(&m, r)?;
            let direct = frobenius_norm(&m.sub(&t)?);
            worst_tail = worst_tail.max((res - direct).abs()).max((res - s.tail_norm(r)).abs());
            loose_ok &= res <= s.tail_sum(r) + 1e-8;
            for _ in 0..20 {
                let basis = Matrix::gaussian(rows, r, 1.0, &mut rng);
                contests += 1;
                if subspace_residual(&m, &basis)? < res - 1e-8 {
                    beaten += 1;
                }
            }
        }
    }
    Ok(SuiteReport {
        suite: "linalg".into(),
        checks: vec![
            check("reconstruction", worst_recon <= 1e-8, format!("max relative error {worst_recon:.2e}")),
            check("orthonormality", worst_orth <= 1e-8, format!("max |Q^T Q - I|_F {worst_orth:.2e}")),
            check("tail-identity", worst_tail <= 1e-8, format!("max |residual - tail| {worst_tail:.2e}")),
            check("loose-bound", loose_ok, "residual <= sum of tail singular values".into()),
            check(
                "eckart-young",
                beaten == 0,
                format!("{beaten} of {contests} random subspaces beat the truncation"),
            ),
        ],
    })
}

/// Seeded network with non-trivial factors everywhere, for gradient checks.
pub fn gradient_fixture(seed: u64, layers: usize, heads: usize, dim: usize, r0: usize) -> Result<(ModelState, Matrix, Matrix)> {
    let cfg = ModelConfig { layers, heads, d: dim, k: dim, seed };
    let mut state = ModelState::new(cfg, r0)?;
    let mut rng = rng::rng_from(seed, &[200]);
    for ad in &mut state.adapters {
        let (b, _) = ad.factors_mut();
        *b = Matrix::gaussian(dim, r0, 0.5 / (dim as f64).sqrt(), &mut rng);
        ad.set_alpha(rng.gen_range(0.5..1.5));
    }
    let x = Matrix::gaussian(8, dim, 1.0, &mut rng);
    let y = Matrix::gaussian(8, dim, 0.5, &mut rng);
    Ok((state, x, y))
}

/// Which parameter of a head a coordinate refers to.
#[derive(Debug, Clone, Copy)]
pub enum Coord {
    B(usize, usize),
    A(usize, usize),
    Alpha,
}

/// Loss after nudging one coordinate of head `head` by `h`.
pub fn perturbed_loss(state: &ModelState, head: usize, coord: Coord, h: f64, x: &Matrix, y: &Matrix) -> Result<f64> {
    let mut s = state.clone();
    let ad = &mut s.adapters[head];
    match coord {
        Coord::Alpha => {
            let a = ad.alpha();
            ad.set_alpha(a + h);
        }
        Coord::B(r, c) => ad.factors_mut().0[(r, c)] += h,
        Coord::A(r, c) => ad.factors_mut().1[(r, c)] += h,
    }
    task_loss(&s.forward(x)?, y)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let (state, x, y) = gradient_fixture(seed, 2, 2, 16, 3)?;
    let grads = state.backward(&x, &y)?;
    let mut rng = rng::rng_from(seed, &[201]);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let head = rng.gen_range(0..state.adapters.len());
        let ad = &state.adapters[head];
        let (coord, analytic) = match rng.gen_range(0..3) {
            0 => {
                let (r, c) = (rng.gen_range(0..ad.d()), rng.gen_range(0..ad.rank()));
                (Coord::B(r, c), grads.heads[head].grad_b[(r, c)])
            }
            1 => {
                let (r, c) = (rng.gen_range(0..ad.rank()), rng.gen_range(0..ad.k()));
                (Coord::A(r, c), grads.heads[head].grad_a[(r, c)])
            }
            _ => (Coord::Alpha, grads.heads[head].grad_alpha),
        };
        let fd = (perturbed_loss(&state, head, coord, h, &x, &y)? - perturbed_loss(&state, head, coord, -h, &x, &y)?)
            / (2.0 * h);
        worst = worst.max(relative_error(fd, analytic));
    }
    Ok(SuiteReport {
        suite: "gradient".into(),
        checks: vec![check(
            "central-differences",
            worst <= 1e-4,
            format!("100 coordinates, max relative error {worst:.2e}"),
        )],
    })
}

fn adapter_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = rng::rng_from(seed, &[300]);
    let mut grow_failures = 0;
    for case in 0..1000u64 {
        let d = rng.gen_range(1..=12);
        let k = rng.gen_range(1..=12);
        let r0 = rng.gen_range(1..=6);
        let r = rng.gen_range(1..=2 * r0);
        let b = Matrix::gaussian(d, r, 1.0, &mut rng);
        let a = Matrix::gaussian(r, k, 1.0, &mut rng);
        let mut ad = LoraAdapter::from_factors(b, a, r as f64 / r0 as f64, r0)
            .or_else(|_| {
                let b = Matrix::gaussian(d, r0, 1.0, &mut rng);
                let a = Matrix::gaussian(r0, k, 1.0, &mut rng);
                LoraAdapter::from_factors(b, a, 1.0, r0)
            })?;
        ad.set_alpha(rng.gen_range(0.0..3.0));
        if ad.rank() == ad.r_max() {
            continue;
        }
        let before = ad.forward_delta();
        let new_r = rng.gen_range(ad.rank() + 1..=ad.r_max());
        ad.resize(new_r, case)?;
        if ad.forward_delta() != before {
            grow_failures += 1;
        }
    }

    let mut worst_shrink = 0.0_f64;
    for case in 0..100u64 {
        let mut ad = LoraAdapter::from_factors(
            Matrix::gaussian(7, 6, 1.0, &mut rng),
            Matrix::gaussian(6, 5, 1.0, &mut rng),
            1.0,
            6,
        )?;
        let order = ad.importance_order();
        let before = ad.forward_delta();
        let dropped = order[3..].iter().fold(Matrix::zeros(7, 5), |acc, &i| {
            let outer = Matrix::from_fn(7, 5, |r, c| ad.b()[(r, i)] * ad.a()[(i, c)]);
            acc.add(&outer).expect("same shape")
        });
        ad.resize(3, case)?;
        let gap = frobenius_norm(&before.sub(&ad.forward_delta())?);
        worst_shrink = worst_shrink.max((gap - frobenius_norm(&dropped)).abs());
    }
    Ok(SuiteReport {
        suite: "adapter".into(),
        checks: vec![
            check(
                "grow-neutrality",
                grow_failures == 0,
                format!("{grow_failures} of 1000 grows changed the delta"),
            ),
            check(
                "shrink-dropped-pairs",
                worst_shrink <= 1e-10,
                format!("max gap vs dropped outer products {worst_shrink:.2e}"),
            ),
        ],
    })
}

fn regularizer_suite() -> Result<SuiteReport> {
    let cfg = RegConfig::new(0.01, 0.1)?;
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for &(prev, now) in &[(1.0, 1.5), (0.8, 0.3), (2.0, 2.0), (0.4, 1.9)] {
        let value = |a: f64| -> Result<f64> {
            let tr = AlphaTrace::from_values(vec![prev, a])?;
            Ok(cfg.lambda * regularizer_value(&[tr], 1, &cfg)?.total)
        };
        let fd = (value(now + h)? - value(now - h)?) / (2.0 * h);
        let analytic = penalty_gradient(&AlphaTrace::from_values(vec![prev, now])?, 1, &cfg)?;
        worst = worst.max(relative_error(fd, analytic));
    }
    Ok(SuiteReport {
        suite: "regularizer".into(),
        checks: vec![check(
            "penalty-gradient",
            worst <= 1e-6,
            format!("max relative error vs central differences {worst:.2e}"),
        )],
    })
}
