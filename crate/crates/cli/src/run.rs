//! Subcommand implementations on top of a resolved [`SimConfig`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use sllg_core::bubble::{bound_check, evolve_with_restarts, local_energy_sup, BoundCheck, MonitoredRun};
use sllg_core::diagnostics::{
    c0_ratio, deterministic_defect, energy_identity_test, estimate_c0, estimate_c1, local_dissipation_check,
    martingale_residual, qv_consistency, qv_estimate, supermartingale_test, C1Estimate, ConstantEstimate,
    DiagnosticsError, DissipationVerdict, EnergyIdentityVerdict, QvVerdict, SupermartingaleReport,
};
use sllg_core::diagnostics::{check_gronwall, dissipation_excess, fit_gronwall, GronwallCheck, GronwallFit};
use sllg_core::helein::{gain_series, wente_sweep, WenteRow};
use sllg_core::{
    coupled_evolve, energy, evolve, make_initial, perturb, trajectory_rng, BallCover, CoupledRecord, EvolveOptions,
    FlowState, Grid, InitialData, MonitorConfig, NoiseModel, ScalarField, StepScheme, VectorField3, WindowKernel,
    WindowMode,
};

use crate::config::SimConfig;
use crate::output::{record_rows, Artifacts, SeriesRow};
use crate::CliError;

/// Bootstrap resamples for the quadratic-variation verdict.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Quantile bins for the conditional supermartingale table.
pub const CONDITIONAL_BINS: usize = 5;
/// Salt separating perturbation seeds from noise streams.
const PERTURBATION_SALT: u64 = 0x5eed_0fc0_u64;

/// Everything derived from a configuration before any trajectory runs.
pub struct Experiment {
    pub cfg: SimConfig,
    pub grid: Grid,
    pub model: NoiseModel,
    pub scheme: StepScheme,
    pub initial: VectorField3,
    pub cover: BallCover,
    pub kernel: WindowKernel,
    /// Present when `eps1` was not configured and had to be estimated.
    pub c1: Option<C1Estimate>,
    pub eps1: f64,
    /// Cover centre of largest initial window energy.
    pub probe: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Derived {
    pub c_phi: f64,
    pub hs_norm_0: f64,
    pub hs_norm_1: f64,
    pub initial_energy: f64,
    pub eps1: f64,
    pub eps1_source: &'static str,
    pub c1: Option<C1Estimate>,
    pub cover_centers: usize,
    pub probe_center: (f64, f64),
    pub window_injection: f64,
}

/// Static maps on which `C₁` is probed: the equator, two bubbles and three
/// random smooth maps.
pub fn c1_probe_fields(n: usize) -> Result<Vec<VectorField3>, CliError> {
    let grid = Grid::new(n).map_err(|e| CliError::Config(e.to_string()))?;
    let mut data = vec![
        InitialData::Equator,
        InitialData::Concentrated { epsilon: 0.5 },
        InitialData::Concentrated { epsilon: 0.35 },
    ];
    data.extend((1..=3).map(|seed| {
        InitialData::RandomSmooth(sllg_core::RandomSmoothParams {
            seed,
            ..Default::default()
        })
    }));
    data.iter()
        .map(|d| make_initial(d, &grid).map_err(|e| CliError::Internal(e.to_string())))
        .collect()
}

pub fn estimate_c1_default(grids: &[usize], radii: &[f64]) -> Result<C1Estimate, CliError> {
    let fields = grids
        .iter()
        .map(|&n| Ok((n, c1_probe_fields(n)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    for &r in radii {
        if !(r > 0.0 && r <= PI / 2.0) {
            return Err(CliError::Config(format!("constants.radii: {r} outside (0, π/2]")));
        }
    }
    Ok(estimate_c1(&fields, radii))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))
}

impl Experiment {
    pub fn new(cfg: SimConfig) -> Result<Self, CliError> {
        let grid = Grid::new(cfg.grid.n).map_err(|e| CliError::Config(format!("grid.n: {e}")))?;
        let model = NoiseModel::build(&grid, cfg.noise.sigma, cfg.noise.s, cfg.noise.cutoff)
            .map_err(|e| CliError::Config(format!("noise: {e}")))?;
        let scheme = StepScheme::default()
            .with_kind(cfg.scheme_kind()?)
            .with_dt(cfg.scheme.dt)
            .with_projection(cfg.scheme.projection)
            .with_ito_correction(cfg.scheme.ito_correction);
        let initial =
            make_initial(&cfg.initial_data()?, &grid).map_err(|e| CliError::Config(format!("initial: {e}")))?;
        let cover = BallCover::new(&grid, cfg.bubble.rho, cfg.bubble.lambda)
            .map_err(|e| CliError::Config(format!("bubble: {e}")))?;
        let kernel = WindowKernel::new(&cover, cfg.window_mode()?);
        let (c1, eps1) = match cfg.bubble.eps1 {
            Some(e) => (None, e),
            None => {
                let est = estimate_c1_default(&cfg.constants.grids, &cfg.constants.radii)?;
                let e = est.default_eps1();
                (Some(est), e)
            }
        };
        let probe = local_energy_sup(&initial, &cover, &kernel).center_index;
        Ok(Self {
            cfg,
            grid,
            model,
            scheme,
            initial,
            cover,
            kernel,
            c1,
            eps1,
            probe,
        })
    }

    pub fn opts(&self) -> EvolveOptions {
        EvolveOptions {
            t_final: self.cfg.sim.t_final,
            record_stride: self.cfg.sim.record_stride.max(1),
            track_qv: self.cfg.sim.track_qv,
        }
    }

    /// `‖η∇φ‖²` for the window at the probe centre.
    pub fn window_injection(&self) -> f64 {
        self.model.localized_injection(&self.kernel.weight_at(&self.cover, self.probe))
    }

    pub fn derived(&self) -> Derived {
        Derived {
            c_phi: self.model.c_phi(),
            hs_norm_0: self.model.hs_norm(0),
            hs_norm_1: self.model.hs_norm(1),
            initial_energy: energy(&self.initial),
            eps1: self.eps1,
            eps1_source: if self.c1.is_some() { "estimated" } else { "config" },
            c1: self.c1.clone(),
            cover_centers: self.cover.count(),
            probe_center: self.cover.center_coords(self.probe),
            window_injection: self.window_injection(),
        }
    }

    /// Trajectory `j` with the stopping rule and restarts active.
    pub fn run_trajectory(&self, j: u64) -> Result<MonitoredRun, CliError> {
        let state = FlowState::new(
            self.initial.clone(),
            trajectory_rng(self.cfg.ensemble.master_seed, j),
            self.scheme.dt,
        );
        let monitor = MonitorConfig {
            eps1: self.eps1,
            restart_cutoff: self.cfg.bubble.restart_cutoff,
            trajectory: j,
            probe: Some(self.probe),
        };
        Ok(evolve_with_restarts(
            state,
            &self.model,
            &self.scheme,
            &self.opts(),
            &self.cover,
            &self.kernel,
            &monitor,
        )?)
    }

    /// All `ensemble.count` trajectories, in trajectory order whatever the
    /// thread count.
    pub fn run_ensemble(&self, threads: usize) -> Result<Vec<MonitoredRun>, CliError> {
        let count = self.cfg.ensemble.count as u64;
        let results: Vec<Result<MonitoredRun, CliError>> =
            pool(threads)?.install(|| (0..count).into_par_iter().map(|j| self.run_trajectory(j)).collect());
        results.into_iter().collect()
    }

    /// `max_t |M̂(t)|` of the noiseless run from the same data and scheme.
    pub fn pilot_defect(&self) -> Result<f64, CliError> {
        let silent = NoiseModel::deterministic(&self.grid);
        let state = FlowState::new(self.initial.clone(), trajectory_rng(0, 0), self.scheme.dt);
        let opts = EvolveOptions {
            track_qv: false,
            ..self.opts()
        };
        let ev = evolve(state, &silent, &self.scheme, &opts, &mut [])?;
        Ok(deterministic_defect(&ev.record))
    }

    /// Coupled pairs `r ∈ runs`: the configured data and a perturbed copy
    /// driven by the noise stream of trajectory `r`.
    pub fn run_coupled(&self, runs: std::ops::Range<u64>, threads: usize) -> Result<Vec<CoupledRecord>, CliError> {
        let one = |r: u64| -> Result<CoupledRecord, CliError> {
            let seed = self.cfg.ensemble.master_seed ^ PERTURBATION_SALT;
            let v0 = perturb(&self.initial, self.cfg.couple.perturbation, 3, seed.wrapping_add(r))
                .map_err(|e| CliError::Config(format!("couple.perturbation: {e}")))?;
            let rng = trajectory_rng(self.cfg.ensemble.master_seed, r);
            Ok(coupled_evolve(self.initial.clone(), v0, rng, &self.model, &self.scheme, &self.opts())?)
        };
        let results: Vec<_> = pool(threads)?.install(|| runs.into_par_iter().map(one).collect());
        results.into_iter().collect()
    }
}

/// A statistical verdict, or the reason it could not be formed.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Verdict(T),
    Unavailable(String),
}

impl<T> Outcome<T> {
    fn from_result(r: Result<T, DiagnosticsError>) -> Self {
        match r {
            Ok(v) => Self::Verdict(v),
            Err(e) => Self::Unavailable(e.to_string()),
        }
    }

    pub fn verdict(&self) -> Option<&T> {
        match self {
            Self::Verdict(v) => Some(v),
            Self::Unavailable(_) => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleVerdicts {
    pub count: usize,
    pub tol_det: f64,
    pub energy_identity: Outcome<EnergyIdentityVerdict>,
    pub quadratic_variation: Outcome<QvVerdict>,
    pub supermartingale: Outcome<SupermartingaleReport>,
    pub local_dissipation: Outcome<DissipationVerdict>,
    pub event_bound: BoundCheck,
    pub events: usize,
    /// First statistical precondition failure, if any.
    #[serde(skip)]
    pub insufficient: Option<DiagnosticsError>,
}

/// Every ensemble verdict table from finished trajectories.
pub fn ensemble_verdicts(exp: &Experiment, runs: &[MonitoredRun], tol_det: f64) -> EnsembleVerdicts {
    let c_phi = exp.model.c_phi();
    let times = runs.first().map(|r| r.record.times()).unwrap_or_default();
    let residuals: Vec<Vec<f64>> = runs.iter().map(|r| martingale_residual(&r.record, c_phi)).collect();
    let final_m: Vec<f64> = residuals.iter().map(|r| *r.last().unwrap_or(&0.0)).collect();
    let final_q: Vec<f64> = runs
        .iter()
        .map(|r| *qv_estimate(&r.record).last().unwrap_or(&0.0))
        .collect();
    let gains: Vec<_> = runs.iter().map(|r| gain_series(&r.record, c_phi)).collect();

    let energy_identity = energy_identity_test(&times, &residuals, tol_det);
    let insufficient = energy_identity.as_ref().err().cloned();
    let quadratic_variation = qv_consistency(&final_m, &final_q, BOOTSTRAP_RESAMPLES, exp.cfg.ensemble.master_seed);
    let supermartingale = supermartingale_test(&gains, None, tol_det, CONDITIONAL_BINS);
    let local_dissipation = if exp.kernel.mode() == WindowMode::Smooth {
        let injection = exp.window_injection();
        let excess: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| {
                let w = r.record.extra("window_energy").unwrap_or_default();
                let g: Vec<f64> = r.record.all_samples().map(|s| s.grad_sq_integral).collect();
                dissipation_excess(&w, &g, &times, injection, exp.kernel.gradient_constant(), exp.cover.radius())
            })
            .collect();
        Outcome::from_result(local_dissipation_check(&times, &excess))
    } else {
        Outcome::Unavailable("local dissipation needs a smooth window".into())
    };
    let ledgers: Vec<_> = runs.iter().map(|r| r.events.clone()).collect();
    let event_bound = bound_check(&ledgers, energy(&exp.initial), c_phi, exp.cfg.sim.t_final, exp.eps1);
    EnsembleVerdicts {
        count: runs.len(),
        tol_det,
        energy_identity: Outcome::from_result(energy_identity),
        quadratic_variation: Outcome::from_result(quadratic_variation),
        supermartingale: Outcome::from_result(supermartingale),
        local_dissipation,
        event_bound,
        events: ledgers.iter().map(Vec::len).sum(),
        insufficient,
    }
}

fn write_runs(out: &Artifacts, exp: &Experiment, runs: &[MonitoredRun]) -> Result<(), CliError> {
    let c_phi = exp.model.c_phi();
    out.series(
        runs.iter()
            .enumerate()
            .flat_map(|(j, r)| record_rows(j as u64, &r.record, c_phi)),
    )?;
    out.ledger(runs.iter().flat_map(|r| r.events.iter()))?;
    for (j, r) in runs.iter().enumerate() {
        out.snapshot(&format!("traj{j:04}_final"), &r.state.u)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    final_time: f64,
    final_energy: f64,
    events: usize,
}

pub fn simulate(cfg: SimConfig) -> Result<String, CliError> {
    let exp = Experiment::new(cfg)?;
    let out = Artifacts::create(&exp.cfg)?;
    out.manifest("simulate", &exp.cfg, &exp.derived())?;
    out.snapshot("initial", &exp.initial)?;
    let run = exp.run_trajectory(0)?;
    write_runs(&out, &exp, std::slice::from_ref(&run))?;
    let last = run.record.last();
    let summary = SimulateSummary {
        final_time: last.t,
        final_energy: last.energy,
        events: run.events.len(),
    };
    out.verdicts(&summary)?;
    Ok(format!(
        "simulate: t = {}, E = {:.6e}, events = {}",
        summary.final_time, summary.final_energy, summary.events
    ))
}

pub fn ensemble(cfg: SimConfig, threads: usize) -> Result<String, CliError> {
    let exp = Experiment::new(cfg)?;
    let out = Artifacts::create(&exp.cfg)?;
    out.manifest("ensemble", &exp.cfg, &exp.derived())?;
    let runs = exp.run_ensemble(threads)?;
    write_runs(&out, &exp, &runs)?;
    let v = ensemble_verdicts(&exp, &runs, exp.pilot_defect()?);
    out.verdicts(&v)?;
    if let Some(e) = v.insufficient {
        return Err(e.into());
    }
    let flag = |b: Option<bool>| match b {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "n/a",
    };
    Ok(format!(
        "ensemble of {}: energy identity {}, quadratic variation {}, supermartingale {}, local dissipation {}, event bound {}",
        v.count,
        flag(v.energy_identity.verdict().map(|x| x.pass)),
        flag(v.quadratic_variation.verdict().map(|x| x.pass)),
        flag(v.supermartingale.verdict().map(|x| x.pass)),
        flag(v.local_dissipation.verdict().map(|x| x.pass)),
        flag(Some(v.event_bound.holds)),
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupleReport {
    /// `max_t d(t)` for two copies of the same data.
    pub identical_max_difference: f64,
    pub fit: GronwallFit,
    pub validation: GronwallCheck,
}

pub fn couple_report(exp: &Experiment, threads: usize) -> Result<(CoupleReport, Vec<CoupledRecord>), CliError> {
    let fit_n = exp.cfg.couple.fit_runs as u64;
    let val_n = exp.cfg.couple.validation_runs as u64;
    let fit_runs = exp.run_coupled(0..fit_n, threads)?;
    let val_runs = exp.run_coupled(fit_n..fit_n + val_n, threads)?;
    let same = coupled_evolve(
        exp.initial.clone(),
        exp.initial.clone(),
        trajectory_rng(exp.cfg.ensemble.master_seed, 0),
        &exp.model,
        &exp.scheme,
        &exp.opts(),
    )?;
    let fit = fit_gronwall(&fit_runs);
    let validation = check_gronwall(&val_runs, fit.constant);
    let mut all = fit_runs;
    all.extend(val_runs);
    Ok((
        CoupleReport {
            identical_max_difference: same.difference.iter().fold(0.0, |m, d| m.max(*d)),
            fit,
            validation,
        },
        all,
    ))
}

pub fn couple(cfg: SimConfig, threads: usize) -> Result<String, CliError> {
    let exp = Experiment::new(cfg)?;
    let out = Artifacts::create(&exp.cfg)?;
    out.manifest("couple", &exp.cfg, &exp.derived())?;
    let (report, runs) = couple_report(&exp, threads)?;
    out.series(runs.iter().enumerate().flat_map(|(j, r)| {
        r.times.iter().enumerate().flat_map(move |(i, &t)| {
            [
                ("difference", r.difference[i]),
                ("weight_integral", r.weight_integral[i]),
                ("budget_integral", r.budget_integral[i]),
            ]
            .into_iter()
            .map(move |(quantity, value)| SeriesRow {
                traj_id: j as u64,
                t,
                quantity,
                value,
            })
        })
    }))?;
    out.ledger(std::iter::empty())?;
    out.verdicts(&report)?;
    Ok(format!(
        "couple: fitted C = {:.6e}, validation {}",
        report.fit.constant,
        if report.validation.pass { "pass" } else { "fail" }
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub c0: ConstantEstimate,
    /// `C₀` ratio of `sin x₁` on the first grid; exactly `3/(8π²)`.
    pub c0_sine: f64,
    pub c1: C1Estimate,
    pub eps1_star: f64,
    pub default_eps1: f64,
}

pub fn constants_report(cfg: &SimConfig) -> Result<ConstantsReport, CliError> {
    let c = &cfg.constants;
    let grid = Grid::new(c.grids[0]).map_err(|e| CliError::Config(e.to_string()))?;
    let sine = ScalarField::from_fn(&grid, |x1, _| x1.sin());
    let c0_sine = c0_ratio(&sine).ok_or_else(|| CliError::Internal("sine has no gradient".into()))?;
    let c0 = estimate_c0(c.c0_samples, &c.grids, c.c0_max_k, cfg.ensemble.master_seed);
    let c1 = estimate_c1_default(&c.grids, &c.radii)?;
    Ok(ConstantsReport {
        c0,
        c0_sine,
        eps1_star: c1.eps1_star,
        default_eps1: c1.default_eps1(),
        c1,
    })
}

pub fn estimate_constants(cfg: SimConfig) -> Result<String, CliError> {
    let report = constants_report(&cfg)?;
    let out = Artifacts::create(&cfg)?;
    out.manifest("estimate-constants", &cfg, &())?;
    out.ledger(std::iter::empty())?;
    out.verdicts(&report)?;
    Ok(format!(
        "C0 = {:.6e} (spread {:.2e}), C1 = {:.6e} (spread {:.2e}), eps1* = {:.6e}",
        report.c0.value, report.c0.stability, report.c1.constant.value, report.c1.constant.stability, report.eps1_star
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct WenteCsvRow {
    pub n: usize,
    pub seed: u64,
    pub grad_a: f64,
    pub grad_b: f64,
    pub sup_phi: f64,
    pub grad_phi: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WenteReport {
    pub operator: String,
    /// `(n, max ratio)` per grid.
    pub max_ratio: Vec<(usize, f64)>,
    /// `(max − min) / max` of the per-grid maxima.
    pub spread: f64,
}

pub fn wente_report(cfg: &SimConfig) -> Result<(WenteReport, Vec<WenteCsvRow>), CliError> {
    let op = cfg.wente_operator()?;
    let mut rows = Vec::new();
    let mut max_ratio = Vec::new();
    for &n in &cfg.wente.grids {
        let grid = Grid::new(n).map_err(|e| CliError::Config(format!("wente.grids: {e}")))?;
        let sweep: Vec<WenteRow> = wente_sweep(&grid, cfg.wente.count, cfg.wente.max_k, cfg.ensemble.master_seed, op)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        max_ratio.push((n, sweep.iter().map(|r| r.ratio).fold(0.0, f64::max)));
        rows.extend(sweep.into_iter().map(|r| WenteCsvRow {
            n,
            seed: r.seed,
            grad_a: r.grad_a,
            grad_b: r.grad_b,
            sup_phi: r.sup_norm,
            grad_phi: r.grad_norm,
            ratio: r.ratio,
        }));
    }
    let hi = max_ratio.iter().map(|p| p.1).fold(0.0, f64::max);
    let lo = max_ratio.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let spread = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
    Ok((
        WenteReport {
            operator: cfg.wente.operator.clone(),
            max_ratio,
            spread,
        },
        rows,
    ))
}

pub fn wente(cfg: SimConfig) -> Result<String, CliError> {
    let (report, rows) = wente_report(&cfg)?;
    let out = Artifacts::create(&cfg)?;
    out.manifest("wente-sweep", &cfg, &())?;
    out.table("wente.csv", &rows)?;
    out.ledger(std::iter::empty())?;
    out.verdicts(&report)?;
    Ok(format!(
        "wente-sweep: max ratios {:?}, spread {:.3e}",
        report.max_ratio, report.spread
    ))
}
