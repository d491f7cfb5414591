//! The antisymmetric tensor `A^{i,j}_k = uⁱ∂ₖuʲ − uʲ∂ₖuⁱ`, its Helmholtz
//! splitting, the compensated (Wente) solve and the corrected energy `𝒢`.

use std::io::{self, Write};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{
    curl, dealias_product, divergence, gradient, gradient_density, perp_gradient, poisson_solve_with_tol,
    Grid, Norm, ScalarField, TensorField32, VectorField3,
};
use crate::flow::{tension, TrajectoryRecord};

#[derive(Debug, Error, PartialEq)]
pub enum HeleinError {
    #[error("operator annihilates mode ({k1},{k2}) where the right side is {magnitude:.3e}")]
    SingularMode { k1: i64, k2: i64, magnitude: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

pub fn helein_tensor(u: &VectorField3) -> TensorField32 {
    let grad = u.gradient();
    let mut a = TensorField32::zeros(u.grid());
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            for k in 0..2 {
                let f = u.component(i).zip_map(&grad[j][k], |x, y| x * y);
                let g = u.component(j).zip_map(&grad[i][k], |x, y| x * y);
                a.set(i, j, k, &f - &g);
            }
        }
    }
    a
}

/// `(A⋮∇u)ⁱ = Σⱼₖ A^{i,j}_k ∂ₖuʲ`.
pub fn contraction(a: &TensorField32, u: &VectorField3) -> VectorField3 {
    let grad = u.gradient();
    let grid = u.grid();
    let comps = [0, 1, 2].map(|i| {
        let mut acc = vec![0.0; grid.len()];
        for (j, gj) in grad.iter().enumerate() {
            for (k, gjk) in gj.iter().enumerate() {
                for ((s, x), y) in acc.iter_mut().zip(a.get(i, j, k).values()).zip(gjk.values()) {
                    *s += x * y;
                }
            }
        }
        ScalarField::new(grid, acc)
    });
    VectorField3::new(comps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionResidual {
    /// `‖A⋮∇u − u|∇u|²‖_{L²} / ‖∇u‖²_{L⁴}`.
    pub contraction: f64,
    /// `‖|A|² − 2|∇u|²‖_{L¹} / ‖∇u‖²_{L²}`.
    pub magnitude: f64,
}

pub fn contraction_residual(u: &VectorField3) -> ContractionResidual {
    let a = helein_tensor(u);
    let grad = u.gradient();
    let density = gradient_density(&grad);
    let cubic = u.scale_by(&density);
    let diff = contraction(&a, u).sub(&cubic);
    let l4_sq = density.norm(Norm::L2);
    let grad_sq = density.integral();
    let mag = a.squared_magnitude().zip_map(&density, |x, d| x - 2.0 * d);
    ContractionResidual {
        contraction: if l4_sq > 0.0 { diff.l2_norm_sq().sqrt() / l4_sq } else { 0.0 },
        magnitude: if grad_sq > 0.0 { mag.norm(Norm::L1) / grad_sq } else { 0.0 },
    }
}

/// `A = mean + ∇α + ∇⊥β` slot by slot over `(i, j)`.
#[derive(Clone, Debug)]
pub struct HeleinSplit {
    pub a: TensorField32,
    /// `mean[i][j][k]`.
    pub mean: [[[f64; 2]; 3]; 3],
    /// `alpha[i*3 + j]`, zero mean.
    pub alpha: Vec<ScalarField>,
    pub beta: Vec<ScalarField>,
    /// `‖mean + ∇α + ∇⊥β − A‖_{L²}`.
    pub residual: f64,
}

impl HeleinSplit {
    pub fn alpha(&self, i: usize, j: usize) -> &ScalarField {
        &self.alpha[i * 3 + j]
    }

    pub fn beta(&self, i: usize, j: usize) -> &ScalarField {
        &self.beta[i * 3 + j]
    }

    /// Sum over slots of `‖∇α‖²`, `‖∇⊥β‖²` and the cross term `⟨∇α, ∇⊥β⟩`.
    pub fn part_norms(&self) -> (f64, f64, f64) {
        let (mut a2, mut b2, mut ab) = (0.0, 0.0, 0.0);
        for s in 0..9 {
            let ga = gradient(&self.alpha[s]);
            let gb = perp_gradient(&self.beta[s]);
            for k in 0..2 {
                a2 += ga[k].inner(&ga[k]);
                b2 += gb[k].inner(&gb[k]);
                ab += ga[k].inner(&gb[k]);
            }
        }
        (a2, b2, ab)
    }

    /// `Σ ‖Δα^{i,j}‖²`.
    pub fn laplacian_alpha_sq(&self) -> f64 {
        self.alpha
            .iter()
            .map(|a| a.spectrum().weighted_power(|x, y| (x * x + y * y).powi(2)))
            .sum()
    }

    /// `Σ ‖∇⊥β^{i,j}‖²`.
    pub fn perp_beta_sq(&self) -> f64 {
        self.beta.iter().map(|b| b.spectrum().dirichlet_integral()).sum()
    }
}

pub fn helmholtz_split(a: &TensorField32) -> HeleinSplit {
    let mut mean = [[[0.0; 2]; 3]; 3];
    let mut alpha = Vec::with_capacity(9);
    let mut beta = Vec::with_capacity(9);
    let mut resid_sq = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = a.planar(i, j);
            let m = [v[0].mean(), v[1].mean()];
            mean[i][j] = m;
            let centred = [v[0].map(|x| x - m[0]), v[1].map(|x| x - m[1])];
            let al = poisson_solve_with_tol(&divergence(&centred), 1e-8).expect("divergence has zero mean");
            let be = poisson_solve_with_tol(&curl(&centred), 1e-8).expect("curl has zero mean");
            let ga = gradient(&al);
            let gb = perp_gradient(&be);
            for k in 0..2 {
                let rebuilt = ga[k].zip_map(&gb[k], |x, y| x + y + m[k]);
                let d = &rebuilt - &v[k];
                resid_sq += d.inner(&d);
            }
            alpha.push(al);
            beta.push(be);
        }
    }
    HeleinSplit {
        a: a.clone(),
        mean,
        alpha,
        beta,
        residual: resid_sq.sqrt(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergenceSample {
    pub t: f64,
    /// `Σ‖Δα‖²` from the split.
    pub laplacian_alpha_sq: f64,
    pub tension_sq: f64,
    pub perp_beta_sq: f64,
    /// `max_{i,j} ‖div A^{i,j} − (uⁱΔuʲ − uʲΔuⁱ)‖_{L²} / ‖Δu‖_{L²}`.
    pub identity_residual: f64,
}

pub fn divergence_sample(t: f64, u: &VectorField3) -> DivergenceSample {
    let a = helein_tensor(u);
    let split = helmholtz_split(&a);
    let lap = u.laplacian();
    let scale = lap.l2_norm_sq().sqrt();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let div = divergence(&a.planar(i, j));
            let wedge = u
                .component(i)
                .zip_map(lap.component(j), |x, y| x * y)
                .zip_map(&u.component(j).zip_map(lap.component(i), |x, y| x * y), |p, q| p - q);
            let d = &div - &wedge;
            worst = worst.max(d.inner(&d).sqrt());
        }
    }
    let tau = tension(u);
    DivergenceSample {
        t,
        laplacian_alpha_sq: split.laplacian_alpha_sq(),
        tension_sq: tau.l2_norm_sq(),
        perp_beta_sq: split.perp_beta_sq(),
        identity_residual: if scale > 0.0 { worst / scale } else { worst },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaTensionBound {
    /// Trapezoidal `∫ Σ‖Δα‖² dt`.
    pub lhs: f64,
    /// Trapezoidal `∫ ‖τ‖² dt`.
    pub rhs: f64,
    pub ratio: f64,
    pub max_identity_residual: f64,
}

/// Time-integrate `‖Δα‖²` and `‖τ‖²` over samples.
pub fn alpha_tension_bound(samples: &[DivergenceSample]) -> AlphaTensionBound {
    let trap = |f: &dyn Fn(&DivergenceSample) -> f64| {
        samples
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])))
            .sum::<f64>()
    };
    let lhs = trap(&|s| s.laplacian_alpha_sq);
    let rhs = trap(&|s| s.tension_sq);
    AlphaTensionBound {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        max_identity_residual: samples.iter().map(|s| s.identity_residual).fold(0.0, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WenteOperator {
    /// `φ − Δφ = {a,b}`.
    Coercive,
    /// `φ + Δφ = {a,b}`; with `project_kernel` the `|k| = 1` modes are
    /// dropped, otherwise any right-side content there is an error.
    Literal { project_kernel: bool },
    /// `Δφ = {a,b}`, zero-mean solution.
    Laplacian,
}

#[derive(Clone, Debug)]
pub struct WenteSolution {
    pub phi: ScalarField,
    pub rhs: ScalarField,
    pub sup_norm: f64,
    pub grad_norm: f64,
    pub grad_a: f64,
    pub grad_b: f64,
    /// `(|φ|_∞ + ‖∇φ‖) / (‖∇a‖‖∇b‖)`, `0` when either gradient vanishes.
    pub ratio: f64,
}

/// `∂₁a ∂₂b − ∂₂a ∂₁b` with 2/3-filtered products.
pub fn poisson_bracket(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let ga = gradient(a);
    let gb = gradient(b);
    let p = dealias_product(&[&ga[0], &gb[1]]);
    let q = dealias_product(&[&ga[1], &gb[0]]);
    &p - &q
}

pub fn wente_solve(a: &ScalarField, b: &ScalarField, op: WenteOperator) -> Result<WenteSolution, HeleinError> {
    if a.grid() != b.grid() {
        return Err(HeleinError::GridMismatch);
    }
    let grid = a.grid().clone();
    let rhs = poisson_bracket(a, b);
    let spec = rhs.spectrum();
    let scale = spec.coeffs().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut out = spec.clone();
    let n = grid.n();
    for c in 0..=n / 2 {
        let k1 = grid.signed(c);
        for r in 0..n {
            let k2 = grid.signed(r);
            let k_sq = (k1 * k1 + k2 * k2) as f64;
            let z = spec.coeffs()[c * n + r];
            let symbol = match op {
                WenteOperator::Coercive => 1.0 + k_sq,
                WenteOperator::Literal { .. } => 1.0 - k_sq,
                WenteOperator::Laplacian => -k_sq,
            };
            out.coeffs_mut()[c * n + r] = if symbol == 0.0 {
                let negligible = z.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE);
                match op {
                    WenteOperator::Literal { project_kernel: false } if !negligible => {
                        return Err(HeleinError::SingularMode {
                            k1,
                            k2,
                            magnitude: z.norm() * grid.cell_area(),
                        })
                    }
                    _ => Complex64::new(0.0, 0.0),
                }
            } else {
                z / symbol
            };
        }
    }
    let phi = out.to_field();
    let grad_a = a.spectrum().dirichlet_integral().sqrt();
    let grad_b = b.spectrum().dirichlet_integral().sqrt();
    let sup_norm = phi.max_abs();
    let grad_norm = phi.spectrum().dirichlet_integral().sqrt();
    let denom = grad_a * grad_b;
    Ok(WenteSolution {
        ratio: if denom > 0.0 { (sup_norm + grad_norm) / denom } else { 0.0 },
        phi,
        rhs,
        sup_norm,
        grad_norm,
        grad_a,
        grad_b,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WenteRow {
    pub seed: u64,
    pub grad_a: f64,
    pub grad_b: f64,
    pub sup_norm: f64,
    pub grad_norm: f64,
    pub ratio: f64,
}

pub fn write_wente_csv<W: Write>(rows: &[WenteRow], mut w: W) -> io::Result<()> {
    writeln!(w, "seed,grad_a,grad_b,sup_phi,grad_phi,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.seed, r.grad_a, r.grad_b, r.sup_norm, r.grad_norm, r.ratio
        )?;
    }
    Ok(())
}

/// `𝒢(t) = E_t − c_φ t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainSeries {
    pub times: Vec<f64>,
    pub g: Vec<f64>,
}

pub fn gain_series(record: &TrajectoryRecord, c_phi: f64) -> GainSeries {
    let (times, g) = record.all_samples().map(|s| (s.t, s.energy - c_phi * s.t)).unzip();
    GainSeries { times, g }
}

/// Rows `(t, E, 𝒢, ‖Δα‖², ‖τ‖², ‖∇⊥β‖²)`.
pub fn write_split_csv<W: Write>(samples: &[DivergenceSample], energies: &[f64], c_phi: f64, mut w: W) -> io::Result<()> {
    writeln!(w, "t,energy,gain,laplacian_alpha_sq,tension_sq,perp_beta_sq")?;
    for (s, e) in samples.iter().zip(energies) {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            s.t,
            e,
            e - c_phi * s.t,
            s.laplacian_alpha_sq,
            s.tension_sq,
            s.perp_beta_sq
        )?;
    }
    Ok(())
}

/// Grid-independent random pair `(a, b)` for the Wente sweep.
pub fn wente_pair_terms(seed: u64, max_k: i64) -> [Vec<(i64, i64, f64, f64)>; 2] {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    [
        crate::diagnostics::random_trig_terms(max_k, 2.0, &mut rng),
        crate::diagnostics::random_trig_terms(max_k, 2.0, &mut rng),
    ]
}

/// Solve the Wente problem for `count` random pairs on `grid`.
pub fn wente_sweep(grid: &Grid, count: usize, max_k: i64, base_seed: u64, op: WenteOperator) -> Result<Vec<WenteRow>, HeleinError> {
    (0..count as u64)
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            let [ta, tb] = wente_pair_terms(seed, max_k);
            let a = ScalarField::from_trig_series(grid, &ta);
            let b = ScalarField::from_trig_series(grid, &tb);
            let s = wente_solve(&a, &b, op)?;
            Ok(WenteRow {
                seed,
                grad_a: s.grad_a,
                grad_b: s.grad_b,
                sup_norm: s.sup_norm,
                grad_norm: s.grad_norm,
                ratio: s.ratio,
            })
        })
        .collect()
}
