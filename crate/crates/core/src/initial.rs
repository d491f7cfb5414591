//! Sphere-valued initial data.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Grid, VectorField3};

#[derive(Debug, Error, PartialEq)]
pub enum InitialError {
    #[error("bad initial-data parameters: {0}")]
    BadParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSmoothParams {
    pub seed: u64,
    /// Largest `|k|` carried by the Gaussian perturbation.
    pub modes: usize,
    /// RMS size of the perturbation added to the north pole.
    pub amplitude: f64,
}

impl Default for RandomSmoothParams {
    fn default() -> Self {
        Self {
            seed: 1,
            modes: 3,
            amplitude: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Constant,
    Equator,
    RandomSmooth(RandomSmoothParams),
    /// Inverse-stereographic bubble of scale `epsilon` centred at `(π, π)`.
    Concentrated { epsilon: f64 },
}

impl InitialData {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Equator => "equator",
            Self::RandomSmooth(_) => "random_smooth",
            Self::Concentrated { .. } => "concentrated",
        }
    }
}

pub fn make_initial(data: &InitialData, grid: &Grid) -> Result<VectorField3, InitialError> {
    match data {
        InitialData::Constant => Ok(VectorField3::constant(grid, [0.0, 0.0, 1.0])),
        InitialData::Equator => Ok(equator_map(grid)),
        InitialData::RandomSmooth(p) => random_smooth(grid, p),
        InitialData::Concentrated { epsilon } => concentrated(grid, *epsilon),
    }
}

/// `(cos x₁, sin x₁, 0)`.
pub fn equator_map(grid: &Grid) -> VectorField3 {
    VectorField3::from_fn(grid, |x1, _| [x1.cos(), x1.sin(), 0.0])
}

/// North pole plus a low-pass Gaussian perturbation, projected to the sphere.
pub fn random_smooth(grid: &Grid, p: &RandomSmoothParams) -> Result<VectorField3, InitialError> {
    if p.modes == 0 || p.modes >= grid.dealias_cutoff() {
        return Err(InitialError::BadParams(format!(
            "modes must lie in 1..{}, got {}",
            grid.dealias_cutoff(),
            p.modes
        )));
    }
    if !(p.amplitude > 0.0 && p.amplitude.is_finite()) {
        return Err(InitialError::BadParams(format!("amplitude must be positive, got {}", p.amplitude)));
    }
    let raw = gaussian_modes(grid, p.modes, p.seed);
    let pole = VectorField3::constant(grid, [0.0, 0.0, 1.0]);
    let v = pole.add(&raw.scale(p.amplitude));
    let min = v.min_magnitude();
    if min < 0.05 {
        return Err(InitialError::BadParams(format!(
            "perturbation nearly vanishes somewhere (min |v| = {min:.3e}); lower the amplitude"
        )));
    }
    Ok(v.project_to_sphere())
}

/// `u` plus a unit-RMS Gaussian field of `modes` scaled by `amplitude`,
/// projected back to the sphere.
pub fn perturb(u: &VectorField3, amplitude: f64, modes: usize, seed: u64) -> Result<VectorField3, InitialError> {
    let grid = u.grid();
    if modes == 0 || modes >= grid.dealias_cutoff() {
        return Err(InitialError::BadParams(format!("perturbation modes must lie in 1..{}", grid.dealias_cutoff())));
    }
    let v = u.add(&gaussian_modes(grid, modes, seed).scale(amplitude));
    if v.min_magnitude() < 0.05 {
        return Err(InitialError::BadParams("perturbation too large to project".into()));
    }
    Ok(v.project_to_sphere())
}

/// Three-component trig series with `|k| ≤ modes`, `N(0, (1+|k|²)⁻²)`
/// coefficients, normalised to unit RMS.
fn gaussian_modes(grid: &Grid, modes: usize, seed: u64) -> VectorField3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = modes as i64;
    let mut terms = Vec::new();
    for k1 in 0..=k {
        for k2 in -k..=k {
            let k_sq = k1 * k1 + k2 * k2;
            if k_sq == 0 || k_sq > k * k || (k1 == 0 && k2 < 0) {
                continue;
            }
            let decay = 1.0 / (1.0 + k_sq as f64);
            let mut coef = [[0.0; 2]; 3];
            for c in coef.iter_mut() {
                for v in c.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v = g * decay;
                }
            }
            terms.push((k1 as f64, k2 as f64, coef));
        }
    }
    let raw = VectorField3::from_fn(grid, |x1, x2| {
        let mut v = [0.0; 3];
        for (k1, k2, coef) in &terms {
            let (s, c) = (k1 * x1 + k2 * x2).sin_cos();
            for i in 0..3 {
                v[i] += coef[i][0] * c + coef[i][1] * s;
            }
        }
        v
    });
    let rms = (raw.l2_norm_sq() / (4.0 * PI * PI)).sqrt();
    raw.scale(1.0 / rms)
}

/// Degree-one bubble of scale `epsilon` centred at `(π, π)`: polar angle
/// `F(r) = 2 arctan(ε/r)` from the north pole, cut off smoothly on `1 ≤ r ≤ 2.5`
/// so the map is the north pole near the boundary of the fundamental cell.
pub fn concentrated(grid: &Grid, epsilon: f64) -> Result<VectorField3, InitialError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(InitialError::BadParams(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let u = VectorField3::from_fn(grid, |x1, x2| {
        let (d1, d2) = (x1 - PI, x2 - PI);
        let r = d1.hypot(d2);
        let cut = crate::bubble::bump_profile(1.0 + (r - 1.0) / 1.5);
        let f = 2.0 * (epsilon / r).atan() * cut;
        let (s, c) = f.sin_cos();
        if r == 0.0 {
            [0.0, 0.0, -1.0]
        } else {
            [s * d1 / r, s * d2 / r, c]
        }
    });
    Ok(u.project_to_sphere())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::energy;

    #[test]
    fn energies_of_closed_forms() {
        let g = Grid::new(32).unwrap();
        let c = make_initial(&InitialData::Constant, &g).unwrap();
        assert_eq!(energy(&c), 0.0);
        let e = make_initial(&InitialData::Equator, &g).unwrap();
        assert!((energy(&e) - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn random_smooth_is_sphere_valued_and_seeded() {
        let g = Grid::new(64).unwrap();
        let p = RandomSmoothParams::default();
        let a = random_smooth(&g, &p).unwrap();
        assert!(a.sphere_deviation() < 1e-14);
        assert_eq!(a, random_smooth(&g, &p).unwrap());
        let b = random_smooth(&g, &RandomSmoothParams { seed: 2, ..p }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn random_smooth_is_nearly_band_limited() {
        let g = Grid::new(64).unwrap();
        let u = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let cutoff = g.dealias_cutoff();
        for i in 0..3 {
            let s = u.component(i).spectrum();
            let tail = s.full_power() - s.truncate(cutoff).full_power();
            assert!(tail <= 1e-12 * s.full_power(), "tail {tail:e}");
        }
    }

    #[test]
    fn bad_params_rejected() {
        let g = Grid::new(32).unwrap();
        assert!(random_smooth(&g, &RandomSmoothParams { modes: 0, ..Default::default() }).is_err());
        assert!(random_smooth(&g, &RandomSmoothParams { modes: 40, ..Default::default() }).is_err());
        assert!(random_smooth(&g, &RandomSmoothParams { amplitude: -1.0, ..Default::default() }).is_err());
        assert!(concentrated(&g, 0.0).is_err());
        assert!(concentrated(&g, 1.5).is_err());
    }

    #[test]
    fn bubble_energy_approaches_sphere_area() {
        let g = Grid::new(128).unwrap();
        let u = concentrated(&g, 0.2).unwrap();
        assert!(u.sphere_deviation() < 1e-14);
        let e = energy(&u);
        assert!((e - 4.0 * PI).abs() < 0.3 * 4.0 * PI, "E = {e}");
    }
}
