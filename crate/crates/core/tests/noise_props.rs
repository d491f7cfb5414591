mod common;

use common::rel;
use proptest::prelude::*;
use sllg_core::{trajectory_rng, Grid, NoiseModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn correction_is_nonpositive_with_exact_integral(sigma in 0.001..1.0f64, s in 2.1..5.0f64, cutoff in 1usize..=10) {
        let g = Grid::new(32).unwrap();
        let m = NoiseModel::build(&g, sigma, s, cutoff).unwrap();
        let f = m.ito_correction_field();
        prop_assert!(f.values().iter().all(|&v| v <= 0.0));
        prop_assert!(rel(f.integral(), -m.hs_norm(0)) <= 1e-12);
    }

    #[test]
    fn c_phi_scales_with_sigma_squared(sigma in 0.001..3.0f64, s in 2.1..5.0f64, cutoff in 1usize..=10) {
        let g = Grid::new(32).unwrap();
        let unit = NoiseModel::build(&g, 1.0, s, cutoff).unwrap().c_phi();
        let scaled = NoiseModel::build(&g, sigma, s, cutoff).unwrap().c_phi();
        prop_assert!(rel(scaled, sigma * sigma * unit) <= 1e-13);
    }

    #[test]
    fn streams_are_keyed_by_master_seed_and_trajectory(master in any::<u64>(), traj in 0u64..1000) {
        let g = Grid::new(16).unwrap();
        let m = NoiseModel::build(&g, 0.1, 3.0, 4).unwrap();
        let a = m.sample_increment(1e-3, &mut trajectory_rng(master, traj)).dw;
        let b = m.sample_increment(1e-3, &mut trajectory_rng(master, traj)).dw;
        let c = m.sample_increment(1e-3, &mut trajectory_rng(master, traj + 1)).dw;
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }
}

#[test]
fn successive_increments_are_uncorrelated() {
    let g = Grid::new(32).unwrap();
    let m = NoiseModel::build(&g, 0.05, 3.0, 4).unwrap();
    let mut rng = trajectory_rng(11, 0);
    let samples = 2000;
    let coeffs: Vec<Vec<f64>> = (0..samples)
        .map(|_| m.project(&m.sample_increment(1e-4, &mut rng).dw.component(0).spectrum()))
        .collect();
    // Under independence √N·ρ̂ ≈ N(0, 1) per mode, so Σ N·ρ̂² ≈ χ²(K).
    let n = samples as f64;
    let modes = coeffs[0].len();
    let mut chi_sq = 0.0;
    for mode in 0..modes {
        let x: Vec<f64> = coeffs.iter().map(|c| c[mode]).collect();
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let cov = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        let corr = cov / var;
        assert!(corr.abs() * n.sqrt() <= 5.0, "mode {mode}: lag-1 correlation {corr}");
        chi_sq += n * corr * corr;
    }
    let k = modes as f64;
    assert!(chi_sq <= k + 5.0 * (2.0 * k).sqrt(), "χ² = {chi_sq} over {modes} modes");
}

#[test]
fn h1_trace_converges_under_cutoff_doubling() {
    let g = Grid::new(128).unwrap();
    let k16 = NoiseModel::build(&g, 1.0, 3.0, 16).unwrap().hs_norm(1);
    let k32 = NoiseModel::build(&g, 1.0, 3.0, 32).unwrap().hs_norm(1);
    assert!(rel(k16, k32) <= 0.01, "{k16} vs {k32}");
}

#[test]
fn silent_model_draws_zero() {
    let g = Grid::new(16).unwrap();
    let m = NoiseModel::build(&g, 0.0, 3.0, 4).unwrap();
    assert!(m.is_silent());
    let dw = m.sample_increment(1e-3, &mut trajectory_rng(1, 1)).dw;
    assert_eq!(dw.l2_norm_sq(), 0.0);
}
