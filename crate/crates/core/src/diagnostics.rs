//! Energy bookkeeping and ensemble statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::bubble::{local_energy_everywhere, BallCover, WindowKernel};
use crate::field::{Grid, ScalarField, VectorField3};
use crate::flow::{CoupledRecord, Kinematics, TrajectoryRecord};
use crate::helein::GainSeries;

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Smallest ensemble accepted by the statistical tests.
pub const MIN_ENSEMBLE: usize = 100;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("ensemble of {count} trajectories is below the required {required}")]
    InsufficientEnsemble { count: usize, required: usize },
    #[error("series lengths disagree")]
    LengthMismatch,
}

fn require(count: usize) -> Result<(), DiagnosticsError> {
    if count < MIN_ENSEMBLE {
        Err(DiagnosticsError::InsufficientEnsemble {
            count,
            required: MIN_ENSEMBLE,
        })
    } else {
        Ok(())
    }
}

/// `½ Σᵢ ‖∇uⁱ‖²`.
pub fn energy(u: &VectorField3) -> f64 {
    0.5 * u
        .components()
        .iter()
        .map(|c| c.spectrum().dirichlet_integral())
        .sum::<f64>()
}

/// `M̂(t) = E_t − E_0 + ∫₀ᵗ ‖τ‖² − c_φ t` at every recorded time.
pub fn martingale_residual(record: &TrajectoryRecord, c_phi: f64) -> Vec<f64> {
    let e0 = record.initial.energy;
    record
        .all_samples()
        .map(|s| s.energy - e0 + s.tension_integral - c_phi * s.t)
        .collect()
}

/// `Q̂(t)` at every recorded time.
pub fn qv_estimate(record: &TrajectoryRecord) -> Vec<f64> {
    record.all_samples().map(|s| s.qv).collect()
}

/// `max_t |M̂(t)|` of a noiseless run.
pub fn deterministic_defect(record: &TrajectoryRecord) -> f64 {
    martingale_residual(record, 0.0)
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√M`.
    pub se: f64,
    /// `Z99 · se`.
    pub half_width: f64,
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let se = (var / m).sqrt();
    MeanEstimate {
        mean,
        se,
        half_width: Z99 * se,
    }
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Per-time ensemble means of named scalar series.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub count: usize,
    pub times: Vec<f64>,
    pub quantities: BTreeMap<String, Vec<MeanEstimate>>,
}

impl EnsembleSummary {
    pub fn new(count: usize, times: Vec<f64>) -> Self {
        Self {
            count,
            times,
            quantities: BTreeMap::new(),
        }
    }

    /// `series[m][t]`: trajectory-major values of one quantity.
    pub fn add(&mut self, name: &str, series: &[Vec<f64>]) -> Result<(), DiagnosticsError> {
        if series.len() != self.count || series.iter().any(|s| s.len() != self.times.len()) {
            return Err(DiagnosticsError::LengthMismatch);
        }
        let stats = (0..self.times.len())
            .map(|t| mean_estimate(&series.iter().map(|s| s[t]).collect::<Vec<_>>()))
            .collect();
        self.quantities.insert(name.to_owned(), stats);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyIdentityVerdict {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub tol_det: f64,
    pub worst_excess: f64,
    pub pass: bool,
}

/// `|mean M̂(t)| ≤ Z99·SE + tol_det` at every time.
pub fn energy_identity_test(
    times: &[f64],
    residuals: &[Vec<f64>],
    tol_det: f64,
) -> Result<EnergyIdentityVerdict, DiagnosticsError> {
    require(residuals.len())?;
    if residuals.iter().any(|r| r.len() != times.len()) {
        return Err(DiagnosticsError::LengthMismatch);
    }
    let stats: Vec<MeanEstimate> = (0..times.len())
        .map(|t| mean_estimate(&residuals.iter().map(|r| r[t]).collect::<Vec<_>>()))
        .collect();
    let worst_excess = stats
        .iter()
        .map(|s| s.mean.abs() - s.half_width - tol_det)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EnergyIdentityVerdict {
        times: times.to_vec(),
        means: stats.iter().map(|s| s.mean).collect(),
        half_widths: stats.iter().map(|s| s.half_width).collect(),
        tol_det,
        worst_excess,
        pass: worst_excess <= 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QvVerdict {
    pub variance: f64,
    pub mean_qv: f64,
    pub bootstrap_se: f64,
    pub resamples: usize,
    pub pass: bool,
}

/// `|Var[M̂(T)] − mean Q̂(T)| ≤ 3·SE`, with the standard error of the variance
/// estimated by bootstrap over trajectories.
pub fn qv_consistency(
    final_m: &[f64],
    final_q: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<QvVerdict, DiagnosticsError> {
    require(final_m.len())?;
    if final_m.len() != final_q.len() {
        return Err(DiagnosticsError::LengthMismatch);
    }
    let variance = sample_variance(final_m);
    let mean_qv = final_q.iter().sum::<f64>() / final_q.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = final_m.len();
    let mut draws = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; m];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = final_m[rng.random_range(0..m)];
        }
        draws.push(sample_variance(&buf));
    }
    let bootstrap_se = sample_variance(&draws).sqrt();
    Ok(QvVerdict {
        variance,
        mean_qv,
        bootstrap_se,
        resamples,
        pass: (variance - mean_qv).abs() <= 3.0 * bootstrap_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairVerdict {
    pub s: f64,
    pub t: f64,
    pub mean: f64,
    pub half_width: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinVerdict {
    pub s: f64,
    pub t: f64,
    pub bin: usize,
    pub count: usize,
    pub mean: f64,
    pub half_width: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupermartingaleReport {
    pub slack: f64,
    pub bins: usize,
    pub pairs: Vec<PairVerdict>,
    pub conditional: Vec<BinVerdict>,
    pub pass: bool,
    pub conditional_pass: bool,
}

/// Test `mean[𝒢(t) − 𝒢(s)] ≤ Z99·SE + slack` for every sampled `s < t`, plus
/// the same test within quantile bins of `𝒢(s)`.
///
/// A mean increment that is positive by more than its 99% band plus the
/// slack is a violation; a mean within the band is consistent with a
/// supermartingale.
pub fn supermartingale_test(
    series: &[GainSeries],
    pairs: Option<&[(usize, usize)]>,
    slack: f64,
    bins: usize,
) -> Result<SupermartingaleReport, DiagnosticsError> {
    require(series.len())?;
    let len = series[0].g.len();
    if series.iter().any(|s| s.g.len() != len) {
        return Err(DiagnosticsError::LengthMismatch);
    }
    let times = &series[0].times;
    let all: Vec<(usize, usize)> = match pairs {
        Some(p) => p.to_vec(),
        None => (0..len).flat_map(|s| (s + 1..len).map(move |t| (s, t))).collect(),
    };
    let bins = bins.max(1);
    let mut out = Vec::with_capacity(all.len());
    let mut conditional = Vec::new();
    for &(s, t) in &all {
        let diffs: Vec<f64> = series.iter().map(|x| x.g[t] - x.g[s]).collect();
        let est = mean_estimate(&diffs);
        out.push(PairVerdict {
            s: times[s],
            t: times[t],
            mean: est.mean,
            half_width: est.half_width,
            pass: est.mean <= est.half_width + slack,
        });
        let mut order: Vec<usize> = (0..series.len()).collect();
        order.sort_by(|&a, &b| series[a].g[s].total_cmp(&series[b].g[s]).then(a.cmp(&b)));
        let m = order.len();
        for bin in 0..bins {
            let idx = &order[bin * m / bins..(bin + 1) * m / bins];
            if idx.len() < 2 {
                continue;
            }
            let d: Vec<f64> = idx.iter().map(|&i| diffs[i]).collect();
            let est = mean_estimate(&d);
            conditional.push(BinVerdict {
                s: times[s],
                t: times[t],
                bin,
                count: idx.len(),
                mean: est.mean,
                half_width: est.half_width,
                pass: est.mean <= est.half_width + slack,
            });
        }
    }
    Ok(SupermartingaleReport {
        slack,
        bins,
        pass: out.iter().all(|p| p.pass),
        conditional_pass: conditional.iter().all(|p| p.pass),
        pairs: out,
        conditional,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub name: String,
    /// Largest value across grids.
    pub value: f64,
    /// `(n, running maximum)` per grid.
    pub per_grid: Vec<(usize, f64)>,
    /// Largest relative spread between grid estimates.
    pub stability: f64,
}

impl ConstantEstimate {
    fn from_grids(name: &str, per_grid: Vec<(usize, f64)>) -> Self {
        let value = per_grid.iter().map(|p| p.1).fold(0.0, f64::max);
        let min = per_grid.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let stability = if value > 0.0 { (value - min) / value } else { 0.0 };
        Self {
            name: name.to_owned(),
            value,
            per_grid,
            stability,
        }
    }
}

/// `∫f⁴ / (∫f² ∫|∇f|²)`, or `None` for a field with no gradient.
pub fn c0_ratio(f: &ScalarField) -> Option<f64> {
    let g = f.spectrum().dirichlet_integral();
    let l2 = f.inner(f);
    if g <= 0.0 || l2 <= 0.0 {
        return None;
    }
    let l4 = f.values().iter().map(|v| v.powi(4)).sum::<f64>() * f.grid().cell_area();
    Some(l4 / (l2 * g))
}

/// Zero-mean band-limited Gaussian field with modes `1 ≤ |k| ≤ max_k`.
pub fn random_band_limited(grid: &Grid, max_k: i64, decay: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::from_trig_series(grid, &random_trig_terms(max_k, decay, rng))
}

/// Coefficients `(k1, k2, a, b)` with `a, b ~ N(0, (1+|k|²)^{-decay})`.
pub fn random_trig_terms(max_k: i64, decay: f64, rng: &mut ChaCha8Rng) -> Vec<(i64, i64, f64, f64)> {
    let mut terms = Vec::new();
    for k1 in 0..=max_k {
        for k2 in -max_k..=max_k {
            let k_sq = k1 * k1 + k2 * k2;
            if k_sq == 0 || k_sq > max_k * max_k || (k1 == 0 && k2 < 0) {
                continue;
            }
            let s = (1.0 + k_sq as f64).powf(-decay / 2.0);
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            terms.push((k1, k2, s * a, s * b));
        }
    }
    terms
}

/// Running maximum of the `C₀` ratio over random fields; the same random
/// coefficients are evaluated on every grid.
pub fn estimate_c0(samples: usize, grids: &[usize], max_k: i64, seed: u64) -> ConstantEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<_> = (0..samples)
        .map(|i| {
            // Alternate between broad and steep spectra to probe both regimes.
            let decay = if i % 2 == 0 { 1.0 } else { 3.0 };
            random_trig_terms(max_k, decay, &mut rng)
        })
        .collect();
    let per_grid = grids
        .iter()
        .map(|&n| {
            let grid = Grid::new(n).expect("valid grid size");
            let best = sets
                .iter()
                .filter_map(|t| c0_ratio(&ScalarField::from_trig_series(&grid, t)))
                .fold(0.0, f64::max);
            (n, best)
        })
        .collect();
    ConstantEstimate::from_grids("C0", per_grid)
}

/// `∬|∇v|⁴ / (sup_x ∫_{B(x,ϱ)}|∇v|² · (∬|∇²v|² + ∬|∇v|²/ϱ²))`, or `None`
/// when the gradient vanishes. `sharp` must be a sharp-ball kernel.
pub fn c1_ratio(u: &VectorField3, sharp: &WindowKernel) -> Option<f64> {
    let kin = Kinematics::compute(u);
    let grad_sq = kin.grad_sq();
    if grad_sq <= 1e-300 {
        return None;
    }
    let rho = sharp.radius();
    let sup = local_energy_everywhere(u, sharp).values().iter().copied().fold(0.0, f64::max);
    Some(kin.grad_l4_4() / (sup * (kin.hessian_sq() + grad_sq / (rho * rho))))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C1Estimate {
    pub constant: ConstantEstimate,
    /// `1 / Ĉ₁`.
    pub eps1_star: f64,
}

impl C1Estimate {
    /// Default stopping threshold `0.5 / Ĉ₁`.
    pub fn default_eps1(&self) -> f64 {
        0.5 * self.eps1_star
    }
}

/// Maximum of [`c1_ratio`] over fields and radii, per grid. `fields[g]` holds
/// the sample fields on grid `g`.
pub fn estimate_c1(fields: &[(usize, Vec<VectorField3>)], radii: &[f64]) -> C1Estimate {
    let per_grid = fields
        .iter()
        .map(|(n, us)| {
            let grid = Grid::new(*n).expect("valid grid size");
            let kernels: Vec<WindowKernel> = radii
                .iter()
                .map(|&r| WindowKernel::sharp(&BallCover::new(&grid, r, 2.0).expect("radius in range")))
                .collect();
            let best = us
                .iter()
                .flat_map(|u| kernels.iter().filter_map(move |k| c1_ratio(u, k)))
                .fold(0.0, f64::max);
            (*n, best)
        })
        .collect();
    let constant = ConstantEstimate::from_grids("C1", per_grid);
    C1Estimate {
        eps1_star: 1.0 / constant.value,
        constant,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DissipationVerdict {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub pass: bool,
}

/// Per-trajectory excess
/// `½‖η∇u(t)‖² − ½‖η∇u(0)‖² − t‖η∇φ‖² − (C_η²/ϱ²)∫₀ᵗ‖∇u‖²`.
pub fn dissipation_excess(
    window_energy: &[f64],
    grad_sq_integral: &[f64],
    times: &[f64],
    injection: f64,
    c_eta: f64,
    rho: f64,
) -> Vec<f64> {
    let c = c_eta * c_eta / (rho * rho);
    (0..times.len())
        .map(|i| window_energy[i] - window_energy[0] - times[i] * injection - c * grad_sq_integral[i])
        .collect()
}

/// Ensemble mean of the excess is at most its 99% band at every time.
pub fn local_dissipation_check(times: &[f64], excess: &[Vec<f64>]) -> Result<DissipationVerdict, DiagnosticsError> {
    require(excess.len())?;
    let stats: Vec<MeanEstimate> = (0..times.len())
        .map(|t| mean_estimate(&excess.iter().map(|e| e[t]).collect::<Vec<_>>()))
        .collect();
    Ok(DissipationVerdict {
        times: times.to_vec(),
        means: stats.iter().map(|s| s.mean).collect(),
        half_widths: stats.iter().map(|s| s.half_width).collect(),
        pass: stats.iter().all(|s| s.mean <= s.half_width),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallFit {
    /// Smallest `C ≥ 0` with `d(t) ≤ d(0) exp(C ∫₀ᵗ w)` on the fitting runs.
    pub constant: f64,
    pub runs: usize,
}

/// Fit the exponential rate over coupled runs.
pub fn fit_gronwall(runs: &[CoupledRecord]) -> GronwallFit {
    let mut c: f64 = 0.0;
    for r in runs {
        let d0 = r.difference[0];
        for (d, w) in r.difference.iter().zip(&r.weight_integral).skip(1) {
            if d0 > 0.0 && *w > 0.0 && *d > d0 {
                c = c.max((d / d0).ln() / w);
            }
        }
    }
    GronwallFit {
        constant: c,
        runs: runs.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallCheck {
    pub constant: f64,
    /// `max_t d(t) / (d(0) exp(C ∫w))` per run.
    pub worst_ratio: Vec<f64>,
    pub pass: bool,
}

/// Check `d(t) ≤ d(0) exp(C ∫₀ᵗ w)` on every sample of every run.
pub fn check_gronwall(runs: &[CoupledRecord], constant: f64) -> GronwallCheck {
    let worst_ratio: Vec<f64> = runs
        .iter()
        .map(|r| {
            let d0 = r.difference[0];
            r.difference
                .iter()
                .zip(&r.weight_integral)
                .map(|(d, w)| {
                    let bound = d0 * (constant * w).exp();
                    if bound > 0.0 {
                        d / bound
                    } else if *d == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    GronwallCheck {
        constant,
        pass: worst_ratio.iter().all(|&r| r <= 1.0 + 1e-12),
        worst_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::equator_map;
    use std::f64::consts::PI;

    #[test]
    fn energy_examples() {
        let g = Grid::new(32).unwrap();
        assert_eq!(energy(&VectorField3::constant(&g, [0.0, 0.0, 1.0])), 0.0);
        assert!((energy(&equator_map(&g)) - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn energy_matches_finer_quadrature() {
        let field = |n| {
            let g = Grid::new(n).unwrap();
            VectorField3::from_fn(&g, |x1, _| {
                let s = 0.5 * x1.sin();
                [s, 0.0, (1.0 - s * s).sqrt()]
            })
        };
        let a = energy(&field(64));
        let b = energy(&field(128));
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn c0_oracle_for_sine() {
        let g = Grid::new(32).unwrap();
        let f = ScalarField::from_fn(&g, |x1, _| x1.sin());
        let r = c0_ratio(&f).unwrap();
        assert!((r - 3.0 / (8.0 * PI * PI)).abs() < 1e-10);
    }

    #[test]
    fn c0_ratio_invariances() {
        let g = Grid::new(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_band_limited(&g, 5, 1.0, &mut rng);
        let r = c0_ratio(&f).unwrap();
        assert!((c0_ratio(&f.scale(2.0)).unwrap() - r).abs() < 1e-14 * r.max(1.0));
        assert!((c0_ratio(&f.scale(-1.0)).unwrap() - r).abs() < 1e-15);
        assert!(c0_ratio(&ScalarField::zeros(&g)).is_none());
    }

    #[test]
    fn c0_estimate_is_running_maximum() {
        let few = estimate_c0(5, &[32], 4, 7);
        let more = estimate_c0(20, &[32], 4, 7);
        assert!(more.value >= few.value);
    }

    #[test]
    fn c1_equator_closed_form() {
        let g = Grid::new(128).unwrap();
        let rho = PI / 4.0;
        let k = WindowKernel::sharp(&BallCover::new(&g, rho, 2.0).unwrap());
        let r = c1_ratio(&equator_map(&g), &k).unwrap();
        let area = 4.0 * PI * PI;
        let expect = area / (PI * rho * rho * (area + area / (rho * rho)));
        assert!((r - expect).abs() < 0.05 * expect, "{r} vs {expect}");
        assert!(c1_ratio(&VectorField3::constant(&g, [1.0, 0.0, 0.0]), &k).is_none());
    }

    #[test]
    fn insufficient_ensemble_rejected() {
        let err = energy_identity_test(&[0.0], &[vec![0.0]], 0.0).unwrap_err();
        assert_eq!(err, DiagnosticsError::InsufficientEnsemble { count: 1, required: MIN_ENSEMBLE });
    }

    #[test]
    fn mean_estimate_uses_sample_std() {
        let e = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.se - sd / 2.0).abs() < 1e-15);
        assert!((e.half_width - Z99 * e.se).abs() < 1e-15);
    }

    fn gains(m: usize, shift: f64) -> Vec<GainSeries> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..m)
            .map(|_| {
                let times: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
                let mut g = vec![1.0];
                for i in 1..6 {
                    let z: f64 = rng.sample(StandardNormal);
                    g.push(g[i - 1] - 0.05 + 0.01 * z);
                }
                let g = g.iter().zip(&times).map(|(v, t)| v + shift * t).collect();
                GainSeries { times, g }
            })
            .collect()
    }

    #[test]
    fn supermartingale_pass_and_negative_control() {
        let ok = supermartingale_test(&gains(200, 0.0), None, 0.0, 5).unwrap();
        assert!(ok.pass && ok.conditional_pass);
        let bad = supermartingale_test(&gains(200, 1.0), None, 0.0, 5).unwrap();
        assert!(!bad.pass);
    }

    #[test]
    fn supermartingale_pass_survives_subsampling() {
        let all = gains(150, 0.0);
        let pairs = [(0, 2), (2, 5)];
        assert!(supermartingale_test(&all, Some(&pairs), 0.0, 5).unwrap().pass);
    }
}
