use ard_lora::adapter::LoraAdapter;
use ard_lora::analysis::{approx_error, capacity_term, min_alpha_for_tolerance, rank_statistics};
use ard_lora::linalg::{matmul, svd, truncate_rank, Matrix};
use ard_lora::rng::rng_from;
use rand::Rng;

/// Adapter whose delta is the rank-`r` SVD truncation of `m`.
fn svd_adapter(m: &Matrix, r: usize) -> LoraAdapter {
    let s = svd(m).unwrap();
    let b = Matrix::from_fn(m.rows(), r, |i, j| s.u[(i, j)] * s.sigma[j]);
    let a = Matrix::from_fn(r, m.cols(), |i, j| s.v[(j, i)]);
    LoraAdapter::from_factors(b, a, 1.0, r).unwrap()
}

#[test]
fn svd_optimal_adapter_hits_the_tail() {
    let m = Matrix::gaussian(9, 7, 1.0, &mut rng_from(1, &[]));
    for r in 1..=7 {
        let rep = approx_error(&m, &svd_adapter(&m, r)).unwrap();
        assert!((rep.epsilon - rep.tail_sqrt).abs() <= 1e-8);
        assert!(rep.epsilon <= rep.loose_bound + 1e-8);
    }
}

#[test]
fn closed_adapter_error_is_the_target_norm() {
    let m = Matrix::gaussian(5, 4, 1.0, &mut rng_from(2, &[]));
    let ad = LoraAdapter::from_factors(Matrix::zeros(5, 1), Matrix::zeros(1, 4), 0.0, 2).unwrap();
    assert!((approx_error(&m, &ad).unwrap().epsilon - m.frobenius_norm()).abs() <= 1e-12);
}

#[test]
fn random_adapters_never_beat_truncation() {
    let mut rng = rng_from(3, &[]);
    let m = Matrix::gaussian(8, 6, 1.0, &mut rng);
    for r in 1..=6 {
        let b = Matrix::gaussian(8, r, 1.0, &mut rng);
        let a = Matrix::gaussian(r, 6, 1.0, &mut rng);
        let rep = approx_error(&m, &LoraAdapter::from_factors(b, a, 1.0, r).unwrap()).unwrap();
        let (_, best) = truncate_rank(&m, r).unwrap();
        assert!(rep.epsilon >= best - 1e-8);
    }
}

#[test]
fn tolerance_search_examples() {
    let m = Matrix::gaussian(6, 6, 1.0, &mut rng_from(4, &[]));
    let loose = min_alpha_for_tolerance(&m, 4, m.frobenius_norm() + 1.0).unwrap();
    assert_eq!((loose.alpha, loose.rank, loose.saturated), (0.25, 1, false));

    let mut rng = rng_from(5, &[]);
    let p = Matrix::gaussian(20, 3, 1.0, &mut rng);
    let q = Matrix::gaussian(3, 20, 1.0, &mut rng);
    let rank3 = matmul(&p, &q).unwrap();
    let got = min_alpha_for_tolerance(&rank3, 16, 1e-9).unwrap();
    assert_eq!((got.alpha, got.rank), (3.0 / 16.0, 3));
}

#[test]
fn tolerance_search_matches_linear_scan() {
    let mut rng = rng_from(6, &[]);
    for _ in 0..20 {
        let m = Matrix::gaussian(10, 8, 1.0, &mut rng);
        let eps = rng.gen_range(0.1..m.frobenius_norm());
        let r0 = rng.gen_range(1..6);
        let got = min_alpha_for_tolerance(&m, r0, eps).unwrap();
        let s = svd(&m).unwrap();
        let scan = (1..=2 * r0).find(|&r| s.tail_norm(r) <= eps);
        match scan {
            Some(r) => assert_eq!((got.rank, got.saturated), (r, false)),
            None => assert!(got.saturated && got.rank == 2 * r0),
        }
    }
}

#[test]
fn capacity_examples() {
    assert!((capacity_term(&[1.0; 4], 16) - 4.0 * 16f64.ln()).abs() < 1e-12);
    assert!((capacity_term(&[1.0; 4], 16) - 11.0904).abs() < 1e-4);
    assert_eq!(capacity_term(&[0.01, 0.0], 16), 0.0);
    let mut rng = rng_from(7, &[]);
    let alphas: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..3.0)).collect();
    let mut want = 0.0;
    for a in &alphas {
        let x: f64 = 8.0 * a;
        if x > 1.0 {
            want += x.ln();
        }
    }
    assert!((capacity_term(&alphas, 8) - want).abs() < 1e-12);
}

fn at_rank(r: usize, r0: usize) -> LoraAdapter {
    LoraAdapter::from_factors(Matrix::zeros(4, r), Matrix::zeros(r, 4), r as f64 / r0 as f64, r0).unwrap()
}

#[test]
fn statistics_examples() {
    let uniform: Vec<LoraAdapter> = (0..4).map(|_| at_rank(16, 16)).collect();
    let s = rank_statistics(&uniform, 16);
    assert_eq!((s.frac_below, s.frac_above), (0.0, 0.0));
    assert_eq!(s.mean_scaled_rank, 16.0);
    assert_eq!(s.relative_params, 1.0);

    let split: Vec<LoraAdapter> = vec![at_rank(1, 16), at_rank(32, 16), at_rank(1, 16), at_rank(32, 16)];
    let s = rank_statistics(&split, 16);
    assert_eq!((s.frac_below, s.frac_above, s.frac_middle), (0.5, 0.5, 0.0));
}

#[test]
fn statistics_match_direct_counting() {
    let mut rng = rng_from(8, &[]);
    let r0 = 8;
    let ranks: Vec<usize> = (0..30).map(|_| rng.gen_range(1..=16)).collect();
    let ads: Vec<LoraAdapter> = ranks.iter().map(|&r| at_rank(r, r0)).collect();
    let s = rank_statistics(&ads, r0);
    let below = ranks.iter().filter(|&&r| (r as f64) < 6.4).count();
    let above = ranks.iter().filter(|&&r| (r as f64) > 12.0).count();
    assert_eq!(s.frac_below, below as f64 / 30.0);
    assert_eq!(s.frac_above, above as f64 / 30.0);
    assert_eq!(s.total_params, ranks.iter().map(|r| 8 * r).sum::<usize>());
    assert_eq!(s.uniform_params, 30 * 8 * r0);
}
