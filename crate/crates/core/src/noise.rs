//! Isotropic trace-class Wiener noise `W = Σ_ℓ B_ℓ φ e_ℓ` on the torus.
//!
//! The basis `(e_ℓ)` is the real orthonormal Fourier system
//! `{1/(2π), cos(k·x)/(π√2), sin(k·x)/(π√2)}` over half-plane wavevectors,
//! and `φ` is diagonal in it with `λ_k = σ (1 + |k|²)^{−s/2}` for `|k| ≤ K`.
//! Each of the three target components receives an independent copy.

use std::f64::consts::{PI, SQRT_2};
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::field::{Grid, ScalarField, Spectrum, VectorField3};

/// Counter-based per-trajectory random stream.
pub type NoiseRng = ChaCha8Rng;

/// Stream `trajectory` of the generator keyed by `master_seed`.
///
/// Streams are independent of each other and of scheduling order.
pub fn trajectory_rng(master_seed: u64, trajectory: u64) -> NoiseRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trajectory);
    rng
}

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("mode cutoff {cutoff} exceeds the dealiasing limit n/3 = {limit}")]
    CutoffTooLarge { cutoff: usize, limit: usize },
    #[error("noise amplitude must be non-negative and finite, got {0}")]
    BadAmplitude(f64),
    #[error("regularity exponent must be finite, got {0}")]
    BadRegularity(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Constant,
    Cos,
    Sin,
}

/// One retained basis element `e_ℓ` and its coefficient `λ_ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseMode {
    pub k1: i64,
    pub k2: i64,
    pub kind: ModeKind,
    pub lambda: f64,
}

impl NoiseMode {
    pub fn k_sq(&self) -> f64 {
        (self.k1 * self.k1 + self.k2 * self.k2) as f64
    }

    /// `e_ℓ(x)`.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let phase = self.k1 as f64 * x1 + self.k2 as f64 * x2;
        match self.kind {
            ModeKind::Constant => 1.0 / (2.0 * PI),
            ModeKind::Cos => phase.cos() / (PI * SQRT_2),
            ModeKind::Sin => phase.sin() / (PI * SQRT_2),
        }
    }
}

/// Derived scalars of a noise model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseConstants {
    /// `|∇φ|²_{𝕃₂} = Σ λ_ℓ² |k_ℓ|²`, the energy injection rate.
    pub c_phi: f64,
    /// `|φ|²_{𝕃₂^s}` for `s = 0, 1, 2, 3`.
    pub hs: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct NoiseModel {
    grid: Grid,
    sigma: f64,
    regularity: f64,
    cutoff: usize,
    modes: Vec<NoiseMode>,
}

/// One step's increment `ΔW` over `dt`.
#[derive(Clone, Debug)]
pub struct NoiseIncrement {
    pub dw: VectorField3,
    pub dt: f64,
}

impl NoiseModel {
    pub fn build(grid: &Grid, sigma: f64, regularity: f64, cutoff: usize) -> Result<Self, NoiseError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(NoiseError::BadAmplitude(sigma));
        }
        if !regularity.is_finite() {
            return Err(NoiseError::BadRegularity(regularity));
        }
        let limit = grid.n() / 3;
        if cutoff > limit {
            return Err(NoiseError::CutoffTooLarge { cutoff, limit });
        }
        let kmax = cutoff as i64;
        let mut wavevectors = Vec::new();
        for k1 in 0..=kmax {
            for k2 in -kmax..=kmax {
                let in_half_plane = k1 > 0 || k2 > 0;
                if in_half_plane && k1 * k1 + k2 * k2 <= kmax * kmax {
                    wavevectors.push((k1, k2));
                }
            }
        }
        wavevectors.sort_by_key(|&(a, b)| (a * a + b * b, a, b));

        let lambda_of = |k_sq: f64| sigma * (1.0 + k_sq).powf(-regularity / 2.0);
        let mut modes = vec![NoiseMode {
            k1: 0,
            k2: 0,
            kind: ModeKind::Constant,
            lambda: sigma,
        }];
        for (k1, k2) in wavevectors {
            let lambda = lambda_of((k1 * k1 + k2 * k2) as f64);
            modes.push(NoiseMode { k1, k2, kind: ModeKind::Cos, lambda });
            modes.push(NoiseMode { k1, k2, kind: ModeKind::Sin, lambda });
        }
        Ok(Self {
            grid: grid.clone(),
            sigma,
            regularity,
            cutoff,
            modes,
        })
    }

    /// The `σ = 0` model.
    pub fn deterministic(grid: &Grid) -> Self {
        Self::build(grid, 0.0, 0.0, 0).expect("σ = 0 with K = 0 is always valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn regularity(&self) -> f64 {
        self.regularity
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    pub fn is_silent(&self) -> bool {
        self.sigma == 0.0
    }

    /// `Σ_ℓ λ_ℓ² (1 + |k_ℓ|²)^s`.
    pub fn hs_norm(&self, s: u32) -> f64 {
        self.modes
            .iter()
            .map(|m| m.lambda * m.lambda * (1.0 + m.k_sq()).powi(s as i32))
            .sum()
    }

    /// `Σ_ℓ λ_ℓ² |k_ℓ|²`.
    pub fn c_phi(&self) -> f64 {
        self.modes.iter().map(|m| m.lambda * m.lambda * m.k_sq()).sum()
    }

    pub fn constants(&self) -> NoiseConstants {
        NoiseConstants {
            c_phi: self.c_phi(),
            hs: [self.hs_norm(0), self.hs_norm(1), self.hs_norm(2), self.hs_norm(3)],
        }
    }

    pub fn basis_function(&self, mode: &NoiseMode) -> ScalarField {
        ScalarField::from_fn(&self.grid, |x1, x2| mode.eval(x1, x2))
    }

    /// `F_φ(x) = −Σ_ℓ (φ e_ℓ(x))²`, evaluated mode by mode.
    pub fn ito_correction_field(&self) -> ScalarField {
        let mut acc = vec![0.0; self.grid.len()];
        for m in self.modes.iter().filter(|m| m.lambda != 0.0) {
            let e = self.basis_function(m);
            let l2 = m.lambda * m.lambda;
            for (a, v) in acc.iter_mut().zip(e.values()) {
                *a -= l2 * v * v;
            }
        }
        ScalarField::new(&self.grid, acc)
    }

    /// `∫_{T²} η(x)² |∇φ e_ℓ(x)|²` summed over ℓ.
    pub fn localized_injection(&self, window_sq: &ScalarField) -> f64 {
        self.modes
            .iter()
            .filter(|m| m.lambda != 0.0 && m.kind != ModeKind::Constant)
            .map(|m| {
                let (k1, k2) = (m.k1 as f64, m.k2 as f64);
                let grad_sq = ScalarField::from_fn(&self.grid, |x1, x2| {
                    let phase = k1 * x1 + k2 * x2;
                    let d = match m.kind {
                        ModeKind::Cos => -phase.sin(),
                        _ => phase.cos(),
                    } / (PI * SQRT_2);
                    d * d * (k1 * k1 + k2 * k2)
                });
                m.lambda * m.lambda * window_sq.inner(&grad_sq)
            })
            .sum()
    }

    /// Inner products `⟨f, e_ℓ⟩` for every retained mode, read off a spectrum.
    pub fn project(&self, spectrum: &Spectrum) -> Vec<f64> {
        let da = self.grid.cell_area();
        self.modes
            .iter()
            .map(|m| {
                let z = spectrum.get(m.k1, m.k2);
                match m.kind {
                    ModeKind::Constant => da * z.re / (2.0 * PI),
                    ModeKind::Cos => da * z.re / (PI * SQRT_2),
                    ModeKind::Sin => -da * z.im / (PI * SQRT_2),
                }
            })
            .collect()
    }

    /// `Σ_ℓ λ_ℓ² ⟨f, e_ℓ⟩²`, i.e. `|φ* f|²_{L²}` restricted to retained modes.
    pub fn weighted_projection_sq(&self, spectrum: &Spectrum) -> f64 {
        self.project(spectrum)
            .iter()
            .zip(&self.modes)
            .map(|(c, m)| m.lambda * m.lambda * c * c)
            .sum()
    }

    /// Draw `ΔW` with `ΔWⁱ = √dt Σ_ℓ g_{i,ℓ} λ_ℓ e_ℓ` from `rng`.
    ///
    /// Gaussians are consumed component-major, mode-minor, so a given stream
    /// position always produces the same increment.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> NoiseIncrement {
        assert!(dt > 0.0, "time step must be positive");
        let comps = [0, 1, 2].map(|_| self.synthesize(dt, rng).to_field());
        NoiseIncrement {
            dw: VectorField3::new(comps),
            dt,
        }
    }

    fn synthesize<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Spectrum {
        let n = self.grid.n() as f64;
        let nn = n * n;
        let sdt = dt.sqrt();
        let mut spec = Spectrum::zeros(&self.grid);
        for m in &self.modes {
            let g: f64 = rng.sample(StandardNormal);
            if m.lambda == 0.0 {
                continue;
            }
            let amp = sdt * g * m.lambda;
            match m.kind {
                ModeKind::Constant => {
                    spec.set(0, 0, Complex64::new(nn * amp / (2.0 * PI), 0.0));
                }
                ModeKind::Cos | ModeKind::Sin => {
                    // a cos(k·x) + b sin(k·x) ↦ F(k) = n²(a − i b)/2.
                    let scale = nn * amp / (2.0 * PI * SQRT_2);
                    let z = if m.kind == ModeKind::Cos {
                        Complex64::new(scale, 0.0)
                    } else {
                        Complex64::new(0.0, -scale)
                    };
                    let cur = spec.get(m.k1, m.k2);
                    spec.set(m.k1, m.k2, cur + z);
                    if m.k1 == 0 {
                        let cur = spec.get(0, -m.k2);
                        spec.set(0, -m.k2, cur + z.conj());
                    }
                }
            }
        }
        spec
    }

    /// CSV table `k1,k2,kind,lambda`.
    pub fn write_lambda_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k1,k2,kind,lambda")?;
        for m in &self.modes {
            let kind = match m.kind {
                ModeKind::Constant => "constant",
                ModeKind::Cos => "cos",
                ModeKind::Sin => "sin",
            };
            writeln!(w, "{},{},{},{}", m.k1, m.k2, kind, m.lambda)?;
        }
        Ok(())
    }
}
