//! Local-energy concentration: ball covers, window energies, the stopping
//! rule, restart by low-pass filtering, and the event counter `N_t`.

use std::f64::consts::{PI, SQRT_2};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::energy;
use crate::field::{Grid, ScalarField, Spectrum, VectorField3};
use crate::flow::{
    evolve, Control, EvolveOptions, FlowError, FlowState, Kinematics, Observer, RecordSample, StepScheme,
    StepView, TrajectoryRecord,
};
use crate::noise::NoiseModel;

/// Dilation used by the covering argument.
pub const DEFAULT_DILATION: f64 = 2.0;

/// Reason string attached to a bubble-triggered stop.
pub const BUBBLE_STOP: &str = "local energy concentration";

#[derive(Debug, Error, PartialEq)]
pub enum BubbleError {
    #[error("radius {rho} outside (0, π/λ] with λ = {lambda}, or finer than the grid")]
    RadiusOutOfRange { rho: f64, lambda: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Centres `x_i` on a regular sublattice such that every `B(x, ϱ)` lies in
/// some `B(x_i, λϱ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallCover {
    grid: Grid,
    radius: f64,
    lambda: f64,
    /// `(col, row)` grid indices.
    centers: Vec<(usize, usize)>,
}

/// Signed periodic offset `a − b` folded into `[−π, π)`.
fn wrap(d: f64) -> f64 {
    (d + PI).rem_euclid(2.0 * PI) - PI
}

fn torus_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    wrap(a.0 - b.0).hypot(wrap(a.1 - b.1))
}

fn lattice_line(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| ((i * n) as f64 / m as f64).round() as usize % n).collect()
}

/// Largest index distance from a grid line point to its nearest lattice point.
fn axis_reach(line: &[usize], n: usize) -> usize {
    (0..line.len())
        .map(|i| {
            let next = if i + 1 < line.len() { line[i + 1] } else { line[0] + n };
            (next - line[i]) / 2
        })
        .max()
        .unwrap_or(n / 2)
}

impl BallCover {
    pub fn new(grid: &Grid, radius: f64, lambda: f64) -> Result<Self, BubbleError> {
        let bad = BubbleError::RadiusOutOfRange { rho: radius, lambda };
        if !(lambda >= 1.0 && radius > 0.0 && radius <= PI / lambda) {
            return Err(bad);
        }
        let n = grid.n();
        let mut m = (2.0 * PI / radius).ceil() as usize;
        if m > n {
            return Err(bad);
        }
        // Spacing ϱ alone covers only for λ ≥ 1 + 1/√2; refine until the
        // worst-case distance to a centre fits. `m = n` always does.
        let mut line = lattice_line(n, m);
        while m < n && SQRT_2 * grid.spacing() * axis_reach(&line, n) as f64 + radius > lambda * radius * (1.0 + 1e-12) {
            m += 1;
            line = lattice_line(n, m);
        }
        let centers = line
            .iter()
            .flat_map(|&r| line.iter().map(move |&c| (c, r)))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            radius,
            lambda,
            centers,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    pub fn center_coords(&self, i: usize) -> (f64, f64) {
        let (c, r) = self.centers[i];
        self.grid.coords(self.grid.index(c, r))
    }

    /// Largest distance from any grid point to its nearest centre.
    pub fn fill_distance(&self) -> f64 {
        let pts: Vec<(f64, f64)> = (0..self.count()).map(|i| self.center_coords(i)).collect();
        (0..self.grid.len())
            .map(|idx| {
                let x = self.grid.coords(idx);
                pts.iter().map(|&p| torus_dist(x, p)).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// Exhaustive check over all grid points `x`: `B(x, ϱ) ⊂ B(x_i, λϱ)` for some `i`.
    pub fn verify(&self) -> bool {
        self.fill_distance() + self.radius <= self.lambda * self.radius * (1.0 + 1e-12)
    }

    /// `N_ϱ ϱ²`.
    pub fn density_constant(&self) -> f64 {
        self.count() as f64 * self.radius * self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `η²` with `η = 1` on `B(λϱ)`, `0` outside `B(2λϱ)`, C² in between.
    Smooth,
    /// Area-weighted indicator of `B(ϱ)`.
    Sharp,
}

/// Radial C² profile: `1` on `[0,1]`, `0` on `[2,∞)`.
pub fn bump_profile(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let x = t - 1.0;
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// Quadrature weight on the torus centred at the origin, with its spectrum
/// cached for convolution.
#[derive(Clone, Debug)]
pub struct WindowKernel {
    mode: WindowMode,
    radius: f64,
    lambda: f64,
    weight: ScalarField,
    spectrum: Spectrum,
}

impl WindowKernel {
    pub fn new(cover: &BallCover, mode: WindowMode) -> Self {
        let grid = cover.grid();
        let h = grid.spacing();
        let (rho, lambda) = (cover.radius(), cover.lambda());
        let weight = ScalarField::from_fn(grid, |x1, x2| {
            let r = wrap(x1).hypot(wrap(x2));
            match mode {
                WindowMode::Smooth => bump_profile(r / (lambda * rho)).powi(2),
                WindowMode::Sharp => ((rho - r) / h + 0.5).clamp(0.0, 1.0),
            }
        });
        let spectrum = weight.spectrum();
        Self {
            mode,
            radius: rho,
            lambda,
            weight,
            spectrum,
        }
    }

    pub fn smooth(cover: &BallCover) -> Self {
        Self::new(cover, WindowMode::Smooth)
    }

    pub fn sharp(cover: &BallCover) -> Self {
        Self::new(cover, WindowMode::Sharp)
    }

    pub fn mode(&self) -> WindowMode {
        self.mode
    }

    /// Weight centred at the origin (`η²` or the ball indicator).
    pub fn weight(&self) -> &ScalarField {
        &self.weight
    }

    /// The weight translated to cover centre `index`.
    pub fn weight_at(&self, cover: &BallCover, index: usize) -> ScalarField {
        let (cx, cy) = cover.center_coords(index);
        let grid = cover.grid();
        let h = grid.spacing();
        let (rho, lambda, mode) = (self.radius, self.lambda, self.mode);
        ScalarField::from_fn(grid, |x1, x2| {
            let r = wrap(x1 - cx).hypot(wrap(x2 - cy));
            match mode {
                WindowMode::Smooth => bump_profile(r / (lambda * rho)).powi(2),
                WindowMode::Sharp => ((rho - r) / h + 0.5).clamp(0.0, 1.0),
            }
        })
    }

    /// `η` itself (square root of the smooth weight).
    pub fn eta(&self) -> ScalarField {
        self.weight.map(f64::sqrt)
    }

    /// `C_η` with `max|∇η| ≤ C_η / ϱ`.
    pub fn gradient_constant(&self) -> f64 {
        match self.mode {
            WindowMode::Smooth => 1.875 / self.lambda,
            WindowMode::Sharp => f64::INFINITY,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `x ↦ ∫ w(x − y) d(y) dy` at every grid point, given the spectrum of `d`.
    pub fn convolve(&self, density: &Spectrum) -> ScalarField {
        let mut out = density.clone();
        for (o, k) in out.coeffs_mut().iter_mut().zip(self.spectrum.coeffs()) {
            *o *= *k;
        }
        let area = density.grid().cell_area();
        out.to_field().scale(area)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalEnergy {
    pub value: f64,
    pub center_index: usize,
    pub center: (f64, f64),
}

/// `max_i ∫ w(x − x_i) d(x) dx` over cover centres, from a density spectrum.
pub fn local_energy_from_density(density: &Spectrum, cover: &BallCover, kernel: &WindowKernel) -> LocalEnergy {
    sup_over_centers(&kernel.convolve(density), cover)
}

fn sup_over_centers(field: &ScalarField, cover: &BallCover) -> LocalEnergy {
    let grid = cover.grid();
    let mut best = LocalEnergy {
        value: f64::NEG_INFINITY,
        center_index: 0,
        center: (0.0, 0.0),
    };
    for (i, &(c, r)) in cover.centers().iter().enumerate() {
        let v = field.values()[grid.index(c, r)];
        if v > best.value {
            best = LocalEnergy {
                value: v,
                center_index: i,
                center: cover.center_coords(i),
            };
        }
    }
    best.value = best.value.max(0.0);
    best
}

/// `max_i ∫ η_i² |∇u|²` (or the ball integral in sharp mode).
pub fn local_energy_sup(u: &VectorField3, cover: &BallCover, kernel: &WindowKernel) -> LocalEnergy {
    let kin = Kinematics::compute(u);
    local_energy_from_density(&kin.density_spectrum, cover, kernel)
}

/// Window energy at every grid point, not just at cover centres.
pub fn local_energy_everywhere(u: &VectorField3, kernel: &WindowKernel) -> ScalarField {
    kernel.convolve(&Kinematics::compute(u).density_spectrum)
}

/// First index whose local energy reaches `eps1`.
pub fn detect_stop<I>(local_energies: I, eps1: f64) -> Option<usize>
where
    I: IntoIterator<Item = f64>,
{
    local_energies.into_iter().position(|e| e >= eps1)
}

/// First field in the stream whose local energy reaches `eps1`.
pub fn detect_stop_fields<'a, I>(fields: I, cover: &BallCover, kernel: &WindowKernel, eps1: f64) -> Option<usize>
where
    I: IntoIterator<Item = &'a VectorField3>,
{
    detect_stop(fields.into_iter().map(|u| local_energy_sup(u, cover, kernel).value), eps1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupEvent {
    pub trajectory: u64,
    pub time: f64,
    pub step: u64,
    pub center: (f64, f64),
    pub local_energy: f64,
    pub energy_pre: f64,
    pub energy_post: f64,
    pub energy_drop: f64,
    /// `energy_drop ≥ ε₁`.
    pub quantum: bool,
    /// Low-pass cutoff of the restart data.
    pub cutoff: usize,
    pub stride: usize,
}

/// Stopping-rule observer. After a trigger it stays disarmed until the
/// local energy falls back below `eps1`. Optionally also reports
/// `½∫η²|∇u|²` around a fixed probe centre.
pub struct BubbleDetector<'a> {
    cover: &'a BallCover,
    kernel: &'a WindowKernel,
    eps1: f64,
    armed: bool,
    probe: Option<usize>,
    last: Option<LocalEnergy>,
    last_probe: f64,
}

impl<'a> BubbleDetector<'a> {
    pub fn new(cover: &'a BallCover, kernel: &'a WindowKernel, eps1: f64) -> Self {
        Self {
            cover,
            kernel,
            eps1,
            armed: true,
            probe: None,
            last: None,
            last_probe: f64::NAN,
        }
    }

    /// Also record the half window energy at cover centre `index`.
    pub fn with_probe(mut self, index: usize) -> Self {
        self.probe = Some(index);
        self
    }

    pub fn disarm(&mut self) {
        self.armed = false;
    }

    pub fn last(&self) -> Option<LocalEnergy> {
        self.last
    }
}

impl Observer for BubbleDetector<'_> {
    fn observe(&mut self, view: &StepView<'_>) -> Control {
        let field = self.kernel.convolve(&view.kin.density_spectrum);
        let le = sup_over_centers(&field, self.cover);
        if let Some(i) = self.probe {
            let (c, r) = self.cover.centers()[i];
            self.last_probe = 0.5 * field.values()[self.cover.grid().index(c, r)];
        }
        self.last = Some(le);
        if le.value < self.eps1 {
            self.armed = true;
            Control::Continue
        } else if self.armed {
            self.armed = false;
            Control::Stop(BUBBLE_STOP.to_owned())
        } else {
            Control::Continue
        }
    }

    fn channels(&self) -> Vec<&'static str> {
        if self.probe.is_some() {
            vec!["local_energy", "window_energy"]
        } else {
            vec!["local_energy"]
        }
    }

    fn values(&self) -> Vec<f64> {
        let sup = self.last.map_or(f64::NAN, |l| l.value);
        if self.probe.is_some() {
            vec![sup, self.last_probe]
        } else {
            vec![sup]
        }
    }
}

/// Restart data and the low-pass cutoff that produced it.
#[derive(Clone, Debug)]
pub struct Restarted {
    pub state: FlowState,
    pub cutoff: usize,
}

/// Disc low-pass `|k| ≤ cutoff` followed by reprojection. Fields whose
/// spectrum already vanishes above the cutoff (to roundoff) are returned
/// unchanged, as are states restarted at the current step already.
pub fn restart(state: &FlowState, cutoff: usize) -> FlowState {
    restart_monotone(state, cutoff).state
}

/// [`restart`], doubling the cutoff while reprojection would raise the
/// energy. Smearing a concentrated core drives `|Lu|` towards zero, and
/// the projected field can then be steeper than the original. The full
/// disc `|k| ≤ n/√2` is the identity, so the search always ends.
pub fn restart_monotone(state: &FlowState, cutoff: usize) -> Restarted {
    let mut next = state.clone();
    if state.restarted_here() {
        return Restarted { state: next, cutoff };
    }
    next.mark_restart();
    let n = state.u.grid().n();
    let full = (n as f64 / SQRT_2).ceil() as usize;
    let spectra: Vec<Spectrum> = (0..3).map(|i| state.u.component(i).spectrum()).collect();
    let total: f64 = spectra.iter().map(Spectrum::full_power).sum();
    let before = energy(&state.u);
    let mut k = cutoff.max(1);
    while k < full {
        let filtered: Vec<Spectrum> = spectra.iter().map(|s| disc_low_pass(s, k)).collect();
        let kept: f64 = filtered.iter().map(Spectrum::full_power).sum();
        if total - kept <= 1e-24 * total.max(f64::MIN_POSITIVE) {
            return Restarted { state: next, cutoff: k };
        }
        let low = VectorField3::new([
            filtered[0].to_field(),
            filtered[1].to_field(),
            filtered[2].to_field(),
        ])
        .project_to_sphere();
        if energy(&low) <= before {
            next.u = low;
            return Restarted { state: next, cutoff: k };
        }
        k *= 2;
    }
    Restarted { state: next, cutoff: full }
}

fn disc_low_pass(s: &Spectrum, cutoff: usize) -> Spectrum {
    let k_sq_max = (cutoff * cutoff) as f64;
    let mut f = s.clone();
    let grid = s.grid().clone();
    let n = grid.n();
    for c in 0..=n / 2 {
        let k1 = grid.signed(c) as f64;
        for r in 0..n {
            let k2 = grid.signed(r) as f64;
            if k1 * k1 + k2 * k2 > k_sq_max {
                f.coeffs_mut()[c * n + r] = Complex64::new(0.0, 0.0);
            }
        }
    }
    f
}

/// `N_t`: events strictly before `t`.
pub fn count_events(events: &[BlowupEvent], t: f64) -> usize {
    events.iter().filter(|e| e.time < t).count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub mean_count: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compare the ensemble mean of `N_T` with `(2E₀ + c_φ T)/ε₁`.
pub fn bound_check(ledgers: &[Vec<BlowupEvent>], e0: f64, c_phi: f64, t_final: f64, eps1: f64) -> BoundCheck {
    let bound = (2.0 * e0 + c_phi * t_final) / eps1;
    let mean_count = if ledgers.is_empty() {
        0.0
    } else {
        ledgers
            .iter()
            .map(|l| count_events(l, t_final + f64::EPSILON * t_final.abs()) as f64)
            .sum::<f64>()
            / ledgers.len() as f64
    };
    BoundCheck {
        mean_count,
        bound,
        holds: mean_count <= bound,
    }
}

#[derive(Clone, Debug)]
pub struct MonitorConfig {
    pub eps1: f64,
    pub restart_cutoff: usize,
    pub trajectory: u64,
    /// Cover centre whose window energy is recorded as `window_energy`.
    pub probe: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct MonitoredRun {
    pub state: FlowState,
    pub record: TrajectoryRecord,
    pub events: Vec<BlowupEvent>,
}

fn offset_sample(s: &RecordSample, base: &RecordSample) -> RecordSample {
    let mut s = s.clone();
    s.tension_integral += base.tension_integral;
    s.qv += base.qv;
    s.grad_sq_integral += base.grad_sq_integral;
    s
}

/// Evolve with the stopping rule active; each trigger restarts from the
/// low-passed state and the clock continues.
pub fn evolve_with_restarts(
    state: FlowState,
    model: &NoiseModel,
    scheme: &StepScheme,
    opts: &EvolveOptions,
    cover: &BallCover,
    kernel: &WindowKernel,
    monitor: &MonitorConfig,
) -> Result<MonitoredRun, BubbleError> {
    let mut detector = BubbleDetector::new(cover, kernel, monitor.eps1);
    if let Some(i) = monitor.probe {
        detector = detector.with_probe(i);
    }
    let mut state = state;
    let mut events = Vec::new();
    let mut record: Option<TrajectoryRecord> = None;
    loop {
        let ev = evolve(state, model, scheme, opts, &mut [&mut detector])?;
        state = ev.state;
        let seg = ev.record;
        let triggered = seg.stop.is_some();
        record = Some(match record {
            None => seg,
            Some(mut acc) => {
                let base = acc.last().clone();
                acc.samples.extend(seg.samples.iter().map(|s| offset_sample(s, &base)));
                acc.stop = None;
                acc
            }
        });
        if !triggered {
            break;
        }
        let le = detector.last().expect("detector observed the stopping state");
        let energy_pre = energy(&state.u);
        let restarted = restart_monotone(&state, monitor.restart_cutoff);
        state = restarted.state;
        let energy_post = energy(&state.u);
        let drop = energy_pre - energy_post;
        events.push(BlowupEvent {
            trajectory: monitor.trajectory,
            time: state.t(),
            step: state.steps(),
            center: le.center,
            local_energy: le.value,
            energy_pre,
            energy_post,
            energy_drop: drop,
            quantum: drop >= monitor.eps1,
            cutoff: restarted.cutoff,
            stride: opts.record_stride,
        });
        if state.steps() as f64 * scheme.dt >= opts.t_final * (1.0 - 1e-12) {
            break;
        }
    }
    let mut record = record.expect("at least one segment");
    record.stop = None;
    Ok(MonitoredRun { state, record, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::equator_map;
    use crate::noise::trajectory_rng;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn quarter_radius_cover_has_sixteen_centres() {
        let g = grid(64);
        let c = BallCover::new(&g, PI / 2.0, 2.0).unwrap();
        assert_eq!(c.count(), 16);
        assert!(c.verify());
    }

    #[test]
    fn oversized_radius_rejected() {
        let g = grid(64);
        assert!(BallCover::new(&g, PI / 2.0 + 1e-9, 2.0).is_err());
        assert!(BallCover::new(&g, 2.0 * PI, 2.0).is_err());
        assert!(BallCover::new(&g, 0.0, 2.0).is_err());
    }

    #[test]
    fn halving_radius_quadruples_count() {
        let g = grid(128);
        for rho in [PI / 3.0, PI / 4.0, 0.5, PI / 8.0] {
            let a = BallCover::new(&g, rho, 2.0).unwrap().count() as f64;
            let b = BallCover::new(&g, rho / 2.0, 2.0).unwrap().count() as f64;
            let ratio = b / a;
            assert!((3.5..=4.5).contains(&ratio), "rho {rho}: ratio {ratio}");
        }
    }

    #[test]
    fn count_bound_holds() {
        let g = grid(128);
        for rho in [0.3, 0.5, 0.9, 1.2, 1.5] {
            let c = BallCover::new(&g, rho, 2.0).unwrap();
            let m = (2.0 * PI / rho).ceil() as usize;
            assert!(c.count() <= m * m);
            assert!(c.verify(), "rho {rho}");
        }
    }

    #[test]
    fn bump_profile_shape() {
        assert_eq!(bump_profile(0.5), 1.0);
        assert_eq!(bump_profile(1.0), 1.0);
        assert_eq!(bump_profile(2.0), 0.0);
        assert!((bump_profile(1.5) - 0.5).abs() < 1e-15);
        let slope = (0..=1000)
            .map(|i| {
                let t = 1.0 + i as f64 / 1000.0;
                (bump_profile(t + 1e-6) - bump_profile(t - 1e-6)).abs() / 2e-6
            })
            .fold(0.0, f64::max);
        assert!((slope - 1.875).abs() < 1e-4);
    }

    #[test]
    fn constant_map_has_no_local_energy() {
        let g = grid(32);
        let c = BallCover::new(&g, PI / 4.0, 2.0).unwrap();
        let k = WindowKernel::smooth(&c);
        let u = VectorField3::constant(&g, [0.0, 0.0, 1.0]);
        assert!(local_energy_sup(&u, &c, &k).value < 1e-12);
    }

    #[test]
    fn equator_sharp_window_is_ball_area() {
        let g = grid(128);
        let rho = PI / 8.0;
        let c = BallCover::new(&g, rho, 2.0).unwrap();
        let k = WindowKernel::sharp(&c);
        let v = local_energy_sup(&equator_map(&g), &c, &k).value;
        let area = PI * rho * rho;
        assert!((v - area).abs() <= 0.05 * area, "{v} vs {area}");
    }

    #[test]
    fn narrow_bump_argmax_is_nearest_centre() {
        let g = grid(64);
        let c = BallCover::new(&g, PI / 4.0, 2.0).unwrap();
        let k = WindowKernel::smooth(&c);
        let target = (2.3, 4.1);
        let d = ScalarField::from_fn(&g, |x1, x2| {
            let r2 = wrap(x1 - target.0).powi(2) + wrap(x2 - target.1).powi(2);
            (-r2 / 0.02).exp()
        });
        let le = local_energy_from_density(&d.spectrum(), &c, &k);
        let nearest = (0..c.count())
            .min_by(|&a, &b| {
                torus_dist(c.center_coords(a), target).total_cmp(&torus_dist(c.center_coords(b), target))
            })
            .unwrap();
        assert_eq!(le.center_index, nearest);
    }

    #[test]
    fn detection_examples() {
        let g = grid(32);
        let c = BallCover::new(&g, PI / 4.0, 2.0).unwrap();
        let k = WindowKernel::smooth(&c);
        let constant = VectorField3::constant(&g, [0.0, 0.0, 1.0]);
        assert_eq!(detect_stop_fields([&constant, &constant], &c, &k, 1e-6), None);
        let eq = equator_map(&g);
        let area = PI * (PI / 4.0).powi(2);
        assert_eq!(detect_stop_fields([&eq], &c, &k, 0.9 * area), Some(0));
        let ramp: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        assert_eq!(detect_stop(ramp.iter().copied(), 0.95), Some(10));
    }

    #[test]
    fn restart_of_band_limited_data_is_identity() {
        let g = grid(32);
        let s = FlowState::new(equator_map(&g), trajectory_rng(0, 0), 1e-3);
        let r = restart(&s, 4);
        assert_eq!(r.u, s.u);
    }

    #[test]
    fn restart_drops_high_frequency_energy_once() {
        let g = grid(64);
        let u = VectorField3::from_fn(&g, |x1, x2| {
            [0.3 * x1.cos() + 0.2 * (9.0 * x2).sin(), 0.2 * (10.0 * x1).cos(), 1.0]
        })
        .project_to_sphere();
        let s = FlowState::new(u, trajectory_rng(0, 0), 1e-3);
        let r = restart(&s, 4);
        assert!(energy(&r.u) < energy(&s.u));
        let again = restart(&r, 4);
        assert_eq!(again.u, r.u);
    }

    #[test]
    fn restart_of_a_narrow_bubble_widens_the_cutoff() {
        let g = grid(64);
        let s = FlowState::new(crate::initial::concentrated(&g, 0.2).unwrap(), trajectory_rng(0, 0), 1e-4);
        let naive = VectorField3::new([0, 1, 2].map(|i| disc_low_pass(&s.u.component(i).spectrum(), 8).to_field()));
        assert!(energy(&naive.project_to_sphere()) > energy(&s.u));
        let r = restart_monotone(&s, 8);
        assert!(r.cutoff > 8);
        assert!(energy(&r.state.u) <= energy(&s.u));
    }

    #[test]
    fn event_counting() {
        assert_eq!(count_events(&[], 1.0), 0);
        let ev = |t| BlowupEvent {
            trajectory: 0,
            time: t,
            step: 0,
            center: (0.0, 0.0),
            local_energy: 1.0,
            energy_pre: 1.0,
            energy_post: 0.5,
            energy_drop: 0.5,
            quantum: false,
            cutoff: 8,
            stride: 1,
        };
        let ledger = vec![ev(0.1), ev(0.2), ev(0.3), ev(0.9)];
        assert_eq!(count_events(&ledger, 0.5), 3);
        assert!(bound_check(&[vec![]], 1.0, 1.0, 1.0, 1.0).holds);
        assert!(!bound_check(&[ledger.clone(), ledger], 0.1, 0.0, 1.0, 1.0).holds);
    }

    #[test]
    fn equator_triggers_once_then_stays_disarmed() {
        let g = grid(32);
        let model = NoiseModel::deterministic(&g);
        let scheme = StepScheme::default().with_dt(1e-3);
        let cover = BallCover::new(&g, PI / 4.0, 2.0).unwrap();
        let kernel = WindowKernel::smooth(&cover);
        let s = FlowState::new(equator_map(&g), trajectory_rng(0, 0), 1e-3);
        let monitor = MonitorConfig {
            eps1: 0.5,
            restart_cutoff: 8,
            trajectory: 0,
            probe: None,
        };
        let run = evolve_with_restarts(s, &model, &scheme, &EvolveOptions::new(0.005, 1), &cover, &kernel, &monitor)
            .unwrap();
        assert_eq!(run.events.len(), 1);
        assert_eq!(run.events[0].step, 0);
        assert_eq!(run.record.samples.len(), 5);
        assert_eq!(run.state.steps(), 5);
    }
}
