#![allow(dead_code)]

use proptest::prelude::*;
use sllg_core::{Grid, ScalarField, VectorField3};

pub type Terms = Vec<(i64, i64, f64, f64)>;

/// Trig-series coefficients `(k1, k2, a, b)` with `|k1|, |k2| ≤ max_k`.
pub fn terms(max_k: i64, len: usize) -> impl Strategy<Value = Terms> {
    prop::collection::vec((-max_k..=max_k, -max_k..=max_k, -1.0..1.0f64, -1.0..1.0f64), 1..=len)
}

/// Same, with every wavevector nonzero and at most one term per wavevector
/// up to sign.
pub fn zero_mean_terms(max_k: i64, len: usize) -> impl Strategy<Value = Terms> {
    terms(max_k, len).prop_map(|t| {
        let mut seen = Vec::new();
        t.into_iter()
            .filter(|&(k1, k2, _, _)| {
                let key = if (k1, k2) < (0, 0) { (-k1, -k2) } else { (k1, k2) };
                let fresh = (k1, k2) != (0, 0) && !seen.contains(&key);
                seen.push(key);
                fresh
            })
            .collect()
    })
}

pub fn field(grid: &Grid, t: &Terms) -> ScalarField {
    ScalarField::from_trig_series(grid, t)
}

/// North pole plus a small trig perturbation, projected to the sphere.
pub fn sphere_field(grid: &Grid, t: [&Terms; 3], amp: f64) -> VectorField3 {
    let raw = VectorField3::new([field(grid, t[0]), field(grid, t[1]), field(grid, t[2])]);
    let rms = (raw.l2_norm_sq() / (4.0 * std::f64::consts::PI.powi(2))).sqrt().max(1e-300);
    VectorField3::constant(grid, [0.0, 0.0, 1.0])
        .add(&raw.scale(amp / rms))
        .project_to_sphere()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
