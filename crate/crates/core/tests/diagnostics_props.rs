mod common;

use common::{field, rel, sphere_field, terms, zero_mean_terms, Terms};
use proptest::prelude::*;
use sllg_core::bubble::BallCover;
use sllg_core::diagnostics::{c0_ratio, c1_ratio, estimate_c0, supermartingale_test};
use sllg_core::{GainSeries, Grid, ScalarField, VectorField3, WindowKernel};

fn smooth_terms() -> impl Strategy<Value = [Terms; 3]> {
    [terms(3, 6), terms(3, 6), terms(3, 6)]
}

fn shift(f: &ScalarField, dc: usize, dr: usize) -> ScalarField {
    let g = f.grid();
    let n = g.n();
    let mut vals = vec![0.0; g.len()];
    for c in 0..n {
        for r in 0..n {
            vals[g.index((c + dc) % n, (r + dr) % n)] = f.values()[g.index(c, r)];
        }
    }
    ScalarField::new(g, vals)
}

fn tile_twice(f: &ScalarField) -> ScalarField {
    let n = f.grid().n();
    let fine = Grid::new(2 * n).unwrap();
    let mut vals = vec![0.0; fine.len()];
    for c in 0..2 * n {
        for r in 0..2 * n {
            vals[fine.index(c, r)] = f.values()[f.grid().index(c % n, r % n)];
        }
    }
    ScalarField::new(&fine, vals)
}

/// Rotation about the axis `(0, 0, 1)` then about `(1, 0, 0)`.
fn rotate(u: &VectorField3, a: f64, b: f64) -> VectorField3 {
    let (ca, sa, cb, sb) = (a.cos(), a.sin(), b.cos(), b.sin());
    let [x, y, z] = u.components().clone();
    let x1 = x.zip_map(&y, |p, q| ca * p - sa * q);
    let y1 = x.zip_map(&y, |p, q| sa * p + ca * q);
    let y2 = y1.zip_map(&z, |p, q| cb * p - sb * q);
    let z2 = y1.zip_map(&z, |p, q| sb * p + cb * q);
    VectorField3::new([x1, y2, z2])
}

fn gain(times: &[f64], g: Vec<f64>) -> GainSeries {
    GainSeries { times: times.to_vec(), g }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn c0_ratio_is_invariant_under_scaling_and_translation(t in zero_mean_terms(6, 8), c in 0.01..100.0f64, dc in 0usize..32, dr in 0usize..32) {
        let f = field(&Grid::new(32).unwrap(), &t);
        prop_assume!(!t.is_empty() && f.max_abs() > 1e-6);
        let base = c0_ratio(&f).unwrap();
        prop_assert!(rel(c0_ratio(&f.scale(c)).unwrap(), base) <= 1e-12);
        prop_assert!(rel(c0_ratio(&shift(&f, dc, dr)).unwrap(), base) <= 1e-12);
    }

    #[test]
    fn c0_ratio_drops_by_four_under_dilation(t in zero_mean_terms(4, 8)) {
        let f = field(&Grid::new(16).unwrap(), &t);
        prop_assume!(!t.is_empty() && f.max_abs() > 1e-6);
        let base = c0_ratio(&f).unwrap();
        prop_assert!(rel(c0_ratio(&tile_twice(&f)).unwrap(), base / 4.0) <= 1e-12);
    }

    #[test]
    fn c1_ratio_is_rotation_invariant(t in smooth_terms(), a in 0.0..6.3f64, b in 0.0..6.3f64) {
        let g = Grid::new(32).unwrap();
        let u = sphere_field(&g, [&t[0], &t[1], &t[2]], 0.3);
        let k = WindowKernel::sharp(&BallCover::new(&g, std::f64::consts::FRAC_PI_4, 2.0).unwrap());
        let base = c1_ratio(&u, &k).unwrap();
        prop_assert!(rel(c1_ratio(&rotate(&u, a, b), &k).unwrap(), base) <= 1e-10);
    }

    #[test]
    fn supermartingale_verdict_survives_subsampling(
        drift in 0.0..2.0f64,
        noise in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 100..140),
        keep in prop::collection::vec(any::<bool>(), 15),
    ) {
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let series: Vec<GainSeries> = noise
            .iter()
            .map(|n| gain(&times, times.iter().zip(n).map(|(t, e)| 5.0 - drift * t + 0.1 * e).collect()))
            .collect();
        let full = supermartingale_test(&series, None, 0.0, 1).unwrap();
        let all: Vec<(usize, usize)> = (0..6).flat_map(|s| (s + 1..6).map(move |t| (s, t))).collect();
        let subset: Vec<(usize, usize)> = all.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
        let sub = supermartingale_test(&series, Some(&subset), 0.0, 1).unwrap();
        prop_assert!(!full.pass || sub.pass);
    }
}

#[test]
fn c0_running_maximum_never_decreases_with_more_samples() {
    let mut last = 0.0;
    for samples in [5, 10, 20, 40] {
        let v = estimate_c0(samples, &[32], 4, 7).value;
        assert!(v >= last, "{samples} samples: {v} < {last}");
        last = v;
    }
}

#[test]
fn supermartingale_flags_an_increasing_gain() {
    let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
    let series: Vec<GainSeries> = (0..120)
        .map(|m| {
            let wobble = 0.01 * ((m * 7 % 11) as f64 - 5.0);
            gain(&times, times.iter().map(|t| 1.0 + t + wobble * t).collect())
        })
        .collect();
    let report = supermartingale_test(&series, None, 0.0, 5).unwrap();
    assert!(!report.pass);
    assert!(!report.conditional_pass);
}
