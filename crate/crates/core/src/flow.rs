//! Time stepping for the Itô form
//! `du = (Δu + u|∇u|² + F_φ u) dt + u × dW`
//! with pointwise projection back onto the sphere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{
    gradient_density, Grid, Planar, ScalarField, Spectrum, VectorField3,
};
use crate::noise::{NoiseIncrement, NoiseModel, NoiseRng};

/// Below this magnitude a pre-projection field is considered collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("step {step}: min |u| = {min_norm:.3e} fell below {COLLAPSE_THRESHOLD} before projection")]
    NormCollapse { step: u64, min_norm: f64 },
    #[error("step {step}: non-finite values in the solution")]
    NonFinite { step: u64 },
    #[error("horizon {t_final} is not an integer multiple of dt = {dt}")]
    NonIntegralHorizon { t_final: f64, dt: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("fields live on grids of size {0} and {1}")]
    GridMismatch(usize, usize),
}

impl FlowError {
    pub fn step(&self) -> Option<u64> {
        match self {
            FlowError::NormCollapse { step, .. } | FlowError::NonFinite { step } => Some(*step),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Fully explicit Euler–Maruyama.
    ExplicitEm,
    /// Implicit Laplacian, explicit nonlinearity and noise.
    SemiImplicitEm,
    /// Heat semigroup `e^{Δ dt}` applied to the explicit update.
    ExponentialMild,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "explicit-em" | "explicit" => Some(Self::ExplicitEm),
            "semi-implicit-em" | "semi-implicit" => Some(Self::SemiImplicitEm),
            "exponential-mild" | "exponential" => Some(Self::ExponentialMild),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ExplicitEm => "explicit-em",
            Self::SemiImplicitEm => "semi-implicit-em",
            Self::ExponentialMild => "exponential-mild",
        }
    }

    /// Per-mode amplification of the linear part for `|k|²` over one step.
    pub fn linear_factor(&self, k_sq: f64, dt: f64) -> f64 {
        match self {
            Self::ExplicitEm => 1.0 - dt * k_sq,
            Self::SemiImplicitEm => 1.0 / (1.0 + dt * k_sq),
            Self::ExponentialMild => (-k_sq * dt).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScheme {
    pub kind: SchemeKind,
    pub dt: f64,
    pub projection: bool,
    /// Include the `F_φ u` drift. Turning it off gives the uncorrected
    /// (wrong) Itô equation and is only meant for negative controls.
    pub ito_correction: bool,
}

impl Default for StepScheme {
    fn default() -> Self {
        Self {
            kind: SchemeKind::SemiImplicitEm,
            dt: 1e-4,
            projection: true,
            ito_correction: true,
        }
    }
}

impl StepScheme {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_projection(mut self, on: bool) -> Self {
        self.projection = on;
        self
    }

    pub fn with_kind(mut self, kind: SchemeKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_ito_correction(mut self, on: bool) -> Self {
        self.ito_correction = on;
        self
    }

    fn check(&self) -> Result<(), FlowError> {
        if self.dt > 0.0 && self.dt.is_finite() {
            Ok(())
        } else {
            Err(FlowError::BadTimeStep(self.dt))
        }
    }
}

/// One trajectory's instantaneous state.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub u: VectorField3,
    pub rng: NoiseRng,
    steps: u64,
    dt: f64,
    last_restart: Option<u64>,
}

impl FlowState {
    pub fn new(u: VectorField3, rng: NoiseRng, dt: f64) -> Self {
        Self {
            u,
            rng,
            steps: 0,
            dt,
            last_restart: None,
        }
    }

    /// Current time, always `steps × dt`.
    pub fn t(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub(crate) fn mark_restart(&mut self) {
        self.last_restart = Some(self.steps);
    }

    /// Whether a restart was applied at the current step already.
    pub fn restarted_here(&self) -> bool {
        self.last_restart == Some(self.steps)
    }
}

/// Spectral and pointwise quantities derived from one field `u`.
///
/// Every per-step diagnostic and the drift itself are read from here, so a
/// field is transformed exactly once per step.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub spectra: [Spectrum; 3],
    /// `[i][k] = ∂ₖ uⁱ`.
    pub grad: [Planar; 3],
    /// Pointwise `|∇u|²`.
    pub density: ScalarField,
    /// Unfiltered spectrum of `density`.
    pub density_spectrum: Spectrum,
    /// 2/3-filtered `|∇u|²`.
    pub density_dealiased: ScalarField,
    /// 2/3-filtered spectrum of `u |∇u|²`.
    pub harmonic_spectra: [Spectrum; 3],
}

impl Kinematics {
    pub fn compute(u: &VectorField3) -> Self {
        let grid = u.grid().clone();
        let cutoff = grid.dealias_cutoff();
        let spectra = [0, 1, 2].map(|i| u.component(i).spectrum());
        let grad = [0, 1, 2].map(|i| {
            [
                spectra[i].derivative(0).to_field(),
                spectra[i].derivative(1).to_field(),
            ]
        });
        let density = gradient_density(&grad);
        let density_spectrum = density.spectrum();
        let density_dealiased = density_spectrum.truncate(cutoff).to_field();
        let harmonic_spectra = [0, 1, 2].map(|i| {
            (u.component(i) * &density_dealiased)
                .spectrum()
                .truncate(cutoff)
        });
        Self {
            spectra,
            grad,
            density,
            density_spectrum,
            density_dealiased,
            harmonic_spectra,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.spectra[0].grid()
    }

    /// `E = ½ ∫ |∇u|²`.
    pub fn energy(&self) -> f64 {
        0.5 * self.spectra.iter().map(Spectrum::dirichlet_integral).sum::<f64>()
    }

    /// Spectrum of `τ = Δu + u|∇u|²`.
    pub fn tension_spectra(&self) -> [Spectrum; 3] {
        [0, 1, 2].map(|i| &self.spectra[i].laplacian() + &self.harmonic_spectra[i])
    }

    pub fn tension(&self) -> VectorField3 {
        VectorField3::new(self.tension_spectra().map(|s| s.to_field()))
    }

    /// `‖τ‖²_{L²}`.
    pub fn tension_sq(&self) -> f64 {
        self.tension_spectra()
            .iter()
            .map(|s| s.weighted_power(|_, _| 1.0))
            .sum()
    }

    /// `‖Δu‖²_{L²} = ‖∇²u‖²_{L²}` on the torus.
    pub fn hessian_sq(&self) -> f64 {
        self.spectra
            .iter()
            .map(|s| s.weighted_power(|a, b| (a * a + b * b).powi(2)))
            .sum()
    }

    /// `‖∇u‖⁴_{L⁴}`.
    pub fn grad_l4_4(&self) -> f64 {
        self.density.values().iter().map(|d| d * d).sum::<f64>() * self.grid().cell_area()
    }

    /// `‖∇u‖²_{L²}`.
    pub fn grad_sq(&self) -> f64 {
        2.0 * self.energy()
    }

    /// Spectra of `div(u × ∇u)`, computed from the pointwise products.
    pub fn twist_divergence(&self, u: &VectorField3) -> [Spectrum; 3] {
        let grid = self.grid();
        let len = grid.len();
        let mut acc: Option<[Spectrum; 3]> = None;
        for k in 0..2 {
            let mut cross = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
            for idx in 0..len {
                let a = u.at(idx);
                let b = [
                    self.grad[0][k].values()[idx],
                    self.grad[1][k].values()[idx],
                    self.grad[2][k].values()[idx],
                ];
                let c = crate::field::cross3(a, b);
                for i in 0..3 {
                    cross[i][idx] = c[i];
                }
            }
            let terms = cross.map(|v| ScalarField::new(grid, v).spectrum().derivative(k));
            acc = Some(match acc {
                None => terms,
                Some(prev) => [0, 1, 2].map(|i| &prev[i] + &terms[i]),
            });
        }
        acc.expect("two spatial directions")
    }

    /// `Σ_ℓ λ_ℓ² Σᵢ ⟨div(u×∇u)ⁱ, e_ℓ⟩²`: quadratic-variation rate of the
    /// energy martingale.
    pub fn qv_rate(&self, u: &VectorField3, model: &NoiseModel) -> f64 {
        if model.is_silent() {
            return 0.0;
        }
        self.twist_divergence(u)
            .iter()
            .map(|s| model.weighted_projection_sq(s))
            .sum()
    }
}

/// `τ(u) = Δu + u|∇u|²` with 2/3-filtered products.
pub fn tension(u: &VectorField3) -> VectorField3 {
    Kinematics::compute(u).tension()
}

/// `Δu − (u·Δu) u`, the tangential projection of the Laplacian.
pub fn tension_projected(u: &VectorField3) -> VectorField3 {
    let lap = u.laplacian();
    let normal = u.dot(&lap);
    lap.sub(&u.scale_by(&normal))
}

/// `τ(u) + F_φ u`.
pub fn drift(u: &VectorField3, model: &NoiseModel) -> VectorField3 {
    let tau = tension(u);
    if model.is_silent() {
        return tau;
    }
    tau.add(&u.scale_by(&model.ito_correction_field()))
}

/// The Itô correction `F_φ`, kept as a scalar when it is spatially constant
/// (always the case for isotropic spectra).
#[derive(Clone, Debug)]
pub enum Correction {
    None,
    Uniform(f64),
    Field(ScalarField),
}

impl Correction {
    pub fn for_model(model: &NoiseModel, scheme: &StepScheme) -> Self {
        if !scheme.ito_correction || model.is_silent() {
            return Correction::None;
        }
        let f = model.ito_correction_field();
        let (lo, hi) = f
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo <= 1e-14 * lo.abs().max(1e-300) {
            Correction::Uniform(f.mean())
        } else {
            Correction::Field(f)
        }
    }
}

/// Advance `u` by one step given its kinematics and a noise increment.
///
/// Returns the field before projection is applied, together with the
/// projected result when projection is enabled.
pub fn advance(
    u: &VectorField3,
    kin: &Kinematics,
    increment: Option<&NoiseIncrement>,
    correction: &Correction,
    scheme: &StepScheme,
    step: u64,
) -> Result<VectorField3, FlowError> {
    let grid = u.grid();
    let cutoff = grid.dealias_cutoff();
    let dt = scheme.dt;
    let noise_spectra = increment.map(|inc| {
        let cross = u.cross(&inc.dw);
        [0, 1, 2].map(|i| cross.component(i).spectrum().truncate(cutoff))
    });
    let extra = match correction {
        Correction::Field(f) => Some([0, 1, 2].map(|i| {
            (u.component(i) * f).spectrum().truncate(cutoff)
        })),
        _ => None,
    };
    let uniform = match correction {
        Correction::Uniform(c) => *c,
        _ => 0.0,
    };
    let kind = scheme.kind;
    let comps = [0, 1, 2].map(|i| {
        let mut out = kin.spectra[i].clone();
        let base = kin.spectra[i].coeffs();
        let nonlin = kin.harmonic_spectra[i].coeffs();
        let n = grid.n();
        let half = n / 2 + 1;
        let coeffs = out.coeffs_mut();
        for c in 0..half {
            let k1 = grid.deriv_k(c);
            for r in 0..n {
                let k2 = grid.deriv_k(r);
                let k_sq = k1 * k1 + k2 * k2;
                let idx = c * n + r;
                let mut rhs = base[idx] + dt * (nonlin[idx] + uniform * base[idx]);
                if let Some(e) = &extra {
                    rhs += dt * e[i].coeffs()[idx];
                }
                if let Some(ns) = &noise_spectra {
                    rhs += ns[i].coeffs()[idx];
                }
                coeffs[idx] = match kind {
                    SchemeKind::ExplicitEm => rhs - dt * k_sq * base[idx],
                    _ => kind.linear_factor(k_sq, dt) * rhs,
                };
            }
        }
        out.to_field()
    });
    let next = VectorField3::new(comps);
    if !next.is_finite() {
        return Err(FlowError::NonFinite { step });
    }
    if scheme.projection {
        let min_norm = next.min_magnitude();
        if min_norm < COLLAPSE_THRESHOLD {
            return Err(FlowError::NormCollapse { step, min_norm });
        }
        Ok(next.project_to_sphere())
    } else {
        Ok(next)
    }
}

/// One step of the scheme, drawing the increment from the state's stream.
pub fn step(state: &FlowState, model: &NoiseModel, scheme: &StepScheme) -> Result<FlowState, FlowError> {
    scheme.check()?;
    let kin = Kinematics::compute(&state.u);
    let mut next = state.clone();
    next.dt = scheme.dt;
    let correction = Correction::for_model(model, scheme);
    step_in_place(&mut next, &kin, model, scheme, &correction)?;
    Ok(next)
}

fn step_in_place(
    state: &mut FlowState,
    kin: &Kinematics,
    model: &NoiseModel,
    scheme: &StepScheme,
    correction: &Correction,
) -> Result<(), FlowError> {
    let increment = (!model.is_silent()).then(|| model.sample_increment(scheme.dt, &mut state.rng));
    state.u = advance(&state.u, kin, increment.as_ref(), correction, scheme, state.steps + 1)?;
    state.steps += 1;
    Ok(())
}

/// Read-only view handed to observers after every step.
pub struct StepView<'a> {
    pub step: u64,
    pub t: f64,
    pub u: &'a VectorField3,
    pub kin: &'a Kinematics,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    Continue,
    Stop(String),
}

/// Hook called on the initial state and after every step.
pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>) -> Control;

    /// Names of the scalars this observer contributes to each record sample.
    fn channels(&self) -> Vec<&'static str> {
        Vec::new()
    }

    /// Latest values of the contributed scalars, in `channels` order.
    fn values(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordSample {
    pub step: u64,
    pub t: f64,
    pub energy: f64,
    /// `‖τ(t)‖²`.
    pub tension_sq: f64,
    /// Left-point `∫₀ᵗ ‖τ‖² ds`.
    pub tension_integral: f64,
    /// `Q̂(t)`: accumulated `dt · qv_rate`.
    pub qv: f64,
    /// Left-point `∫₀ᵗ ‖∇u‖²_{L²} ds`.
    pub grad_sq_integral: f64,
    pub grad_l4_4: f64,
    pub hessian_sq: f64,
    pub sphere_deviation: f64,
    pub extras: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StopRecord {
    pub step: u64,
    pub t: f64,
    pub reason: String,
}

/// Sampled diagnostics of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub stride: usize,
    pub initial: RecordSample,
    /// Samples after every `stride` steps (and at the final step).
    pub samples: Vec<RecordSample>,
    pub extra_names: Vec<String>,
    pub stop: Option<StopRecord>,
}

impl TrajectoryRecord {
    /// Initial sample followed by all recorded samples.
    pub fn all_samples(&self) -> impl Iterator<Item = &RecordSample> {
        std::iter::once(&self.initial).chain(self.samples.iter())
    }

    pub fn times(&self) -> Vec<f64> {
        self.all_samples().map(|s| s.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.all_samples().map(|s| s.energy).collect()
    }

    pub fn extra(&self, name: &str) -> Option<Vec<f64>> {
        let pos = self.extra_names.iter().position(|n| n == name)?;
        Some(self.all_samples().map(|s| s.extras[pos]).collect())
    }

    pub fn last(&self) -> &RecordSample {
        self.samples.last().unwrap_or(&self.initial)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Absolute end time.
    pub t_final: f64,
    pub record_stride: usize,
    /// Accumulate the quadratic-variation estimate (costs six transforms a step).
    pub track_qv: bool,
}

impl EvolveOptions {
    pub fn new(t_final: f64, record_stride: usize) -> Self {
        Self {
            t_final,
            record_stride: record_stride.max(1),
            track_qv: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub state: FlowState,
    pub record: TrajectoryRecord,
}

fn horizon_steps(t_final: f64, dt: f64) -> Result<u64, FlowError> {
    let ratio = t_final / dt;
    let steps = ratio.round();
    if !(ratio.is_finite() && steps >= 0.0 && (ratio - steps).abs() <= 1e-9 * ratio.max(1.0)) {
        return Err(FlowError::NonIntegralHorizon { t_final, dt });
    }
    Ok(steps as u64)
}

struct Accumulators {
    tension: f64,
    qv: f64,
    grad_sq: f64,
}

fn make_sample(
    state: &FlowState,
    kin: &Kinematics,
    acc: &Accumulators,
    tension_sq: f64,
    observers: &[&mut dyn Observer],
) -> RecordSample {
    RecordSample {
        step: state.steps,
        t: state.t(),
        energy: kin.energy(),
        tension_sq,
        tension_integral: acc.tension,
        qv: acc.qv,
        grad_sq_integral: acc.grad_sq,
        grad_l4_4: kin.grad_l4_4(),
        hessian_sq: kin.hessian_sq(),
        sphere_deviation: state.u.sphere_deviation(),
        extras: observers.iter().flat_map(|o| o.values()).collect(),
    }
}

/// Drive `state` up to `opts.t_final`, recording diagnostics and consulting
/// observers after every step.
pub fn evolve(
    mut state: FlowState,
    model: &NoiseModel,
    scheme: &StepScheme,
    opts: &EvolveOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<Evolution, FlowError> {
    scheme.check()?;
    if state.u.grid() != model.grid() {
        return Err(FlowError::GridMismatch(state.u.grid().n(), model.grid().n()));
    }
    state.dt = scheme.dt;
    let total = horizon_steps(opts.t_final, scheme.dt)?;
    let stride = opts.record_stride.max(1) as u64;
    let correction = Correction::for_model(model, scheme);
    let extra_names = observers
        .iter()
        .flat_map(|o| o.channels())
        .map(str::to_owned)
        .collect();

    let mut acc = Accumulators {
        tension: 0.0,
        qv: 0.0,
        grad_sq: 0.0,
    };
    let mut kin = Kinematics::compute(&state.u);
    let mut tension_sq = kin.tension_sq();
    let mut stop = notify(&state, &kin, observers);
    let initial = make_sample(&state, &kin, &acc, tension_sq, observers);
    let start = state.steps;
    let mut samples = Vec::new();

    while stop.is_none() && state.steps < total {
        let qv_rate = if opts.track_qv { kin.qv_rate(&state.u, model) } else { 0.0 };
        let grad_sq = kin.grad_sq();
        step_in_place(&mut state, &kin, model, scheme, &correction)?;
        acc.tension += scheme.dt * tension_sq;
        acc.qv += scheme.dt * qv_rate;
        acc.grad_sq += scheme.dt * grad_sq;
        kin = Kinematics::compute(&state.u);
        tension_sq = kin.tension_sq();
        stop = notify(&state, &kin, observers);
        let at_stride = (state.steps - start).is_multiple_of(stride);
        if at_stride || state.steps == total || stop.is_some() {
            samples.push(make_sample(&state, &kin, &acc, tension_sq, observers));
        }
    }
    let stop = stop.map(|reason| StopRecord {
        step: state.steps,
        t: state.t(),
        reason,
    });
    Ok(Evolution {
        state,
        record: TrajectoryRecord {
            dt: scheme.dt,
            stride: stride as usize,
            initial,
            samples,
            extra_names,
            stop,
        },
    })
}

fn notify(state: &FlowState, kin: &Kinematics, observers: &mut [&mut dyn Observer]) -> Option<String> {
    let view = StepView {
        step: state.steps,
        t: state.t(),
        u: &state.u,
        kin,
    };
    let mut stop = None;
    for o in observers.iter_mut() {
        if let Control::Stop(reason) = o.observe(&view) {
            stop.get_or_insert(reason);
        }
    }
    stop
}

/// Two trajectories driven by one noise path.
#[derive(Clone, Debug, Serialize)]
pub struct CoupledRecord {
    pub first: TrajectoryRecord,
    pub second: TrajectoryRecord,
    pub times: Vec<f64>,
    /// `d(t) = ½ ‖u − v‖²_{L²}`.
    pub difference: Vec<f64>,
    /// `∫₀ᵗ (‖∇u‖⁴_{L⁴} + ‖∇v‖⁴_{L⁴} + 1) ds`.
    pub weight_integral: Vec<f64>,
    /// `∫₀ᵗ (‖∇u‖⁴_{L⁴} + ‖∇v‖⁴_{L⁴} + 1) d(s) ds`; times `C` this is the
    /// Grönwall budget.
    pub budget_integral: Vec<f64>,
}

/// Evolve `u0` and `v0` with the identical increment sequence drawn from `rng`.
pub fn coupled_evolve(
    u0: VectorField3,
    v0: VectorField3,
    rng: NoiseRng,
    model: &NoiseModel,
    scheme: &StepScheme,
    opts: &EvolveOptions,
) -> Result<CoupledRecord, FlowError> {
    scheme.check()?;
    if u0.grid() != v0.grid() {
        return Err(FlowError::GridMismatch(u0.grid().n(), v0.grid().n()));
    }
    if u0.grid() != model.grid() {
        return Err(FlowError::GridMismatch(u0.grid().n(), model.grid().n()));
    }
    let total = horizon_steps(opts.t_final, scheme.dt)?;
    let stride = opts.record_stride.max(1) as u64;
    let correction = Correction::for_model(model, scheme);
    let dt = scheme.dt;

    let mut rng = rng;
    let mut a = FlowState::new(u0, rng.clone(), dt);
    let mut b = FlowState::new(v0, rng.clone(), dt);
    let mut ka = Kinematics::compute(&a.u);
    let mut kb = Kinematics::compute(&b.u);
    let mut acc_a = Accumulators { tension: 0.0, qv: 0.0, grad_sq: 0.0 };
    let mut acc_b = Accumulators { tension: 0.0, qv: 0.0, grad_sq: 0.0 };
    let mut ts_a = ka.tension_sq();
    let mut ts_b = kb.tension_sq();
    let half_diff = |x: &VectorField3, y: &VectorField3| 0.5 * x.sub(y).l2_norm_sq();

    let init_a = make_sample(&a, &ka, &acc_a, ts_a, &[]);
    let init_b = make_sample(&b, &kb, &acc_b, ts_b, &[]);
    let mut rec_a = Vec::new();
    let mut rec_b = Vec::new();
    let mut d = half_diff(&a.u, &b.u);
    let mut times = vec![0.0];
    let mut difference = vec![d];
    let mut weight_integral = vec![0.0];
    let mut budget_integral = vec![0.0];
    let (mut w_int, mut b_int) = (0.0, 0.0);

    while a.steps < total {
        let weight = ka.grad_l4_4() + kb.grad_l4_4() + 1.0;
        w_int += dt * weight;
        b_int += dt * weight * d;
        let qa = if opts.track_qv { ka.qv_rate(&a.u, model) } else { 0.0 };
        let qb = if opts.track_qv { kb.qv_rate(&b.u, model) } else { 0.0 };
        let (ga, gb) = (ka.grad_sq(), kb.grad_sq());
        let inc = (!model.is_silent()).then(|| model.sample_increment(dt, &mut rng));
        let step_no = a.steps + 1;
        a.u = advance(&a.u, &ka, inc.as_ref(), &correction, scheme, step_no)?;
        b.u = advance(&b.u, &kb, inc.as_ref(), &correction, scheme, step_no)?;
        a.steps += 1;
        b.steps += 1;
        for (acc, ts, q, g) in [(&mut acc_a, ts_a, qa, ga), (&mut acc_b, ts_b, qb, gb)] {
            acc.tension += dt * ts;
            acc.qv += dt * q;
            acc.grad_sq += dt * g;
        }
        ka = Kinematics::compute(&a.u);
        kb = Kinematics::compute(&b.u);
        ts_a = ka.tension_sq();
        ts_b = kb.tension_sq();
        d = half_diff(&a.u, &b.u);
        if a.steps.is_multiple_of(stride) || a.steps == total {
            rec_a.push(make_sample(&a, &ka, &acc_a, ts_a, &[]));
            rec_b.push(make_sample(&b, &kb, &acc_b, ts_b, &[]));
            times.push(a.t());
            difference.push(d);
            weight_integral.push(w_int);
            budget_integral.push(b_int);
        }
    }
    a.rng = rng.clone();
    b.rng = rng;
    let record = |initial, samples| TrajectoryRecord {
        dt,
        stride: stride as usize,
        initial,
        samples,
        extra_names: Vec::new(),
        stop: None,
    };
    Ok(CoupledRecord {
        first: record(init_a, rec_a),
        second: record(init_b, rec_b),
        times,
        difference,
        weight_integral,
        budget_integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{equator_map, random_smooth, RandomSmoothParams};
    use crate::noise::trajectory_rng;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn tension_of_constant_and_equator_vanishes() {
        let g = grid(32);
        let c = VectorField3::constant(&g, [0.0, 0.0, 1.0]);
        assert!(tension(&c).norm(crate::field::Norm::Inf) < 1e-14);
        let e = equator_map(&g);
        assert!(tension(&e).norm(crate::field::Norm::Inf) < 1e-13);
    }

    #[test]
    fn tension_formulas_agree_on_projected_fields() {
        let g = grid(64);
        let u = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let a = tension(&u);
        let b = tension_projected(&u);
        let lap = u.laplacian().l2_norm_sq().sqrt();
        let diff = a.sub(&b).l2_norm_sq().sqrt();
        // The filtered cubic term loses content above the cutoff.
        assert!(diff <= 1e-4 * lap, "diff {diff:e} vs ‖Δu‖ {lap:e}");
    }

    #[test]
    fn tension_is_tangent() {
        let g = grid(64);
        let u = random_smooth(&g, &RandomSmoothParams { seed: 4, ..Default::default() }).unwrap();
        let tau = tension(&u);
        let normal = u.dot(&tau).norm(crate::field::Norm::L2);
        let scale = u.laplacian().l2_norm_sq().sqrt();
        assert!(normal < 1e-4 * scale, "{normal:e} vs {scale:e}");
    }

    #[test]
    fn drift_examples() {
        let g = grid(16);
        let silent = NoiseModel::deterministic(&g);
        let e = equator_map(&g);
        assert!(drift(&e, &silent).norm(crate::field::Norm::Inf) < 1e-13);

        let lambda0 = 0.4;
        let model = NoiseModel::build(&g, lambda0, 3.0, 0).unwrap();
        let c = VectorField3::constant(&g, [0.0, 0.6, 0.8]);
        let d = drift(&c, &model);
        let expect = c.scale(-lambda0 * lambda0 / (4.0 * std::f64::consts::PI.powi(2)));
        assert!(d.sub(&expect).norm(crate::field::Norm::Inf) < 1e-15);
    }

    #[test]
    fn fixed_points_hold() {
        let g = grid(32);
        let model = NoiseModel::deterministic(&g);
        for kind in [SchemeKind::ExplicitEm, SchemeKind::SemiImplicitEm, SchemeKind::ExponentialMild] {
            let scheme = StepScheme::default().with_kind(kind);
            let c = VectorField3::constant(&g, [0.0, 0.0, 1.0]);
            let s = step(&FlowState::new(c.clone(), trajectory_rng(0, 0), 1e-4), &model, &scheme).unwrap();
            assert_eq!(s.u, c);
            let e = equator_map(&g);
            let s = step(&FlowState::new(e.clone(), trajectory_rng(0, 0), 1e-4), &model, &scheme).unwrap();
            assert!(s.u.sub(&e).norm(crate::field::Norm::Inf) < 1e-12);
        }
    }

    #[test]
    fn clock_is_step_count_times_dt() {
        let g = grid(16);
        let model = NoiseModel::deterministic(&g);
        let scheme = StepScheme::default().with_dt(0.1);
        let mut s = FlowState::new(equator_map(&g), trajectory_rng(0, 0), 0.1);
        for _ in 0..7 {
            s = step(&s, &model, &scheme).unwrap();
        }
        assert_eq!(s.t(), 7.0 * 0.1);
        assert_eq!(s.steps(), 7);
    }

    #[test]
    fn linear_part_is_stable_for_implicit_schemes() {
        for k_sq in [0.0, 1.0, 100.0, 1e6] {
            for dt in [1e-4, 1e-2, 1.0] {
                assert!(SchemeKind::SemiImplicitEm.linear_factor(k_sq, dt).abs() <= 1.0);
                assert!(SchemeKind::ExponentialMild.linear_factor(k_sq, dt).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn noise_term_is_orthogonal_to_u() {
        let g = grid(32);
        let u = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let model = NoiseModel::build(&g, 1.0, 3.0, 8).unwrap();
        let inc = model.sample_increment(1e-2, &mut trajectory_rng(3, 0));
        let rot = u.cross(&inc.dw);
        let dots = u.dot(&rot);
        assert!(dots.max_abs() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent_and_keeps_sphere() {
        let g = grid(32);
        let u = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let p = u.project_to_sphere();
        assert!(p.sphere_deviation() < 1e-15);
        assert!(p.project_to_sphere().sub(&p).norm(crate::field::Norm::Inf) < 1e-15);
    }

    #[test]
    fn collapse_is_reported() {
        let g = grid(16);
        let model = NoiseModel::deterministic(&g);
        let s = FlowState::new(VectorField3::constant(&g, [0.1, 0.0, 0.0]), trajectory_rng(0, 0), 1e-3);
        let err = step(&s, &model, &StepScheme::default().with_dt(1e-3)).unwrap_err();
        assert!(matches!(err, FlowError::NormCollapse { step: 1, .. }));
        assert_eq!(err.step(), Some(1));
    }

    #[test]
    fn evolve_rejects_non_integral_horizon() {
        let g = grid(16);
        let model = NoiseModel::deterministic(&g);
        let s = FlowState::new(equator_map(&g), trajectory_rng(0, 0), 1e-2);
        let err = evolve(s, &model, &StepScheme::default().with_dt(1e-2), &EvolveOptions::new(0.015, 1), &mut [])
            .unwrap_err();
        assert!(matches!(err, FlowError::NonIntegralHorizon { .. }));
    }

    #[test]
    fn constant_map_records_are_flat() {
        let g = grid(16);
        let model = NoiseModel::deterministic(&g);
        let scheme = StepScheme::default().with_dt(1e-3);
        let s = FlowState::new(VectorField3::constant(&g, [1.0, 0.0, 0.0]), trajectory_rng(0, 0), 1e-3);
        let ev = evolve(s, &model, &scheme, &EvolveOptions::new(10.0 * 1e-3, 1), &mut []).unwrap();
        assert_eq!(ev.record.samples.len(), 10);
        for s in &ev.record.samples {
            assert_eq!(s.energy, 0.0);
            assert_eq!(s.tension_integral, 0.0);
        }
    }

    #[test]
    fn evolve_is_deterministic() {
        let g = grid(16);
        let model = NoiseModel::build(&g, 0.3, 3.0, 4).unwrap();
        let scheme = StepScheme::default().with_dt(1e-3);
        let run = || {
            let s = FlowState::new(equator_map(&g), trajectory_rng(42, 1), 1e-3);
            evolve(s, &model, &scheme, &EvolveOptions::new(0.02, 5), &mut []).unwrap().record
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn coupled_identical_data_has_zero_difference() {
        let g = grid(16);
        let model = NoiseModel::build(&g, 0.3, 3.0, 4).unwrap();
        let scheme = StepScheme::default().with_dt(1e-3);
        let u0 = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let rec = coupled_evolve(u0.clone(), u0, trajectory_rng(1, 0), &model, &scheme, &EvolveOptions::new(0.01, 1))
            .unwrap();
        assert!(rec.difference.iter().all(|&d| d == 0.0));
        assert_eq!(rec.first, rec.second);
    }

    #[test]
    fn coupled_is_symmetric() {
        let g = grid(16);
        let model = NoiseModel::build(&g, 0.3, 3.0, 4).unwrap();
        let scheme = StepScheme::default().with_dt(1e-3);
        let opts = EvolveOptions::new(0.01, 2);
        let u0 = random_smooth(&g, &RandomSmoothParams::default()).unwrap();
        let v0 = random_smooth(&g, &RandomSmoothParams { seed: 9, ..Default::default() }).unwrap();
        let ab = coupled_evolve(u0.clone(), v0.clone(), trajectory_rng(1, 0), &model, &scheme, &opts).unwrap();
        let ba = coupled_evolve(v0, u0, trajectory_rng(1, 0), &model, &scheme, &opts).unwrap();
        assert_eq!(ab.difference, ba.difference);
    }

    #[test]
    fn coupled_rejects_grid_mismatch() {
        let model = NoiseModel::deterministic(&grid(16));
        let u0 = equator_map(&grid(16));
        let v0 = equator_map(&grid(32));
        let err = coupled_evolve(u0, v0, trajectory_rng(0, 0), &model, &StepScheme::default(), &EvolveOptions::new(1e-3, 1))
            .unwrap_err();
        assert_eq!(err, FlowError::GridMismatch(16, 32));
    }
}
