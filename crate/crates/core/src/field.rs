//! Periodic grid fields on the torus `[0, 2π)²`.
//!
//! Fields are stored in physical space, row-major, with `x₁` along the fast
//! (column) axis and `x₂` along rows. All calculus is spectral: derivatives
//! multiply Fourier modes by `i k`, with the Nyquist wavenumber treated as
//! zero so that `laplacian == divergence ∘ gradient` holds exactly.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Read, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Default tolerance on the mean of a Poisson right-hand side.
pub const MEAN_TOL: f64 = 1e-10;

/// Default tolerance on `max | |u| - 1 |` for sphere-valued fields.
pub const SPHERE_TOL: f64 = 1e-10;

const SNAPSHOT_MAGIC: &[u8; 4] = b"SLLG";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid size {0} must be a power of two and at least 8")]
    BadGridSize(usize),
    #[error("right-hand side has mean {mean:e}, exceeding tolerance {tol:e}")]
    NonZeroMean { mean: f64, tol: f64 },
    #[error("fields live on different grids ({0} vs {1})")]
    GridMismatch(usize, usize),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct FftPlans {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Uniform `n × n` grid on `[0, 2π)²`.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    plans: Arc<FftPlans>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).finish()
    }
}

impl Grid {
    pub fn new(n: usize) -> Result<Self, FieldError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(FieldError::BadGridSize(n));
        }
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::<f64>::new();
        let plans = FftPlans {
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            fwd: cplx.plan_fft_forward(n),
            inv: cplx.plan_fft_inverse(n),
        };
        Ok(Self {
            n,
            plans: Arc::new(plans),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `n²`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `h = 2π/n`.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature weight `h²`.
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Largest retained wavenumber under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n / 3
    }

    /// Physical coordinates `(x₁, x₂)` of flat index `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let h = self.spacing();
        ((idx % self.n) as f64 * h, (idx / self.n) as f64 * h)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n + col
    }

    /// Number of half-spectrum columns (`k₁ ∈ 0..=n/2`).
    pub(crate) fn half(&self) -> usize {
        self.n / 2 + 1
    }

    /// Signed wavenumber for a spectrum index along either axis.
    pub(crate) fn signed(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Wavenumber used by derivative multipliers: Nyquist maps to zero.
    pub(crate) fn deriv_k(&self, j: usize) -> f64 {
        if j == self.n / 2 {
            0.0
        } else {
            self.signed(j) as f64
        }
    }

    /// Physical values → half spectrum (unnormalized forward DFT).
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        let half = self.half();
        let mut rows = vec![Complex64::new(0.0, 0.0); n * half];
        let mut input = vec![0.0; n];
        let mut scratch = self.plans.r2c.make_scratch_vec();
        for r in 0..n {
            input.copy_from_slice(&values[r * n..(r + 1) * n]);
            self.plans
                .r2c
                .process_with_scratch(&mut input, &mut rows[r * half..(r + 1) * half], &mut scratch)
                .expect("real forward FFT buffer sizes");
        }
        let mut out = vec![Complex64::new(0.0, 0.0); n * half];
        for r in 0..n {
            for c in 0..half {
                out[c * n + r] = rows[r * half + c];
            }
        }
        self.plans.fwd.process(&mut out);
        out
    }

    /// Half spectrum → physical values (normalized inverse DFT).
    pub(crate) fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        let half = self.half();
        let mut cols = spectrum.to_vec();
        self.plans.inv.process(&mut cols);
        let mut rows = vec![Complex64::new(0.0, 0.0); n * half];
        for c in 0..half {
            for r in 0..n {
                rows[r * half + c] = cols[c * n + r];
            }
        }
        let mut out = vec![0.0; n * n];
        let mut scratch = self.plans.c2r.make_scratch_vec();
        let scale = 1.0 / (n * n) as f64;
        for r in 0..n {
            let row = &mut rows[r * half..(r + 1) * half];
            row[0].im = 0.0;
            row[half - 1].im = 0.0;
            let dst = &mut out[r * n..(r + 1) * n];
            self.plans
                .c2r
                .process_with_scratch(row, dst, &mut scratch)
                .expect("real inverse FFT buffer sizes");
            for v in dst.iter_mut() {
                *v *= scale;
            }
        }
        out
    }
}

/// Half-plane Fourier coefficients of a real field.
///
/// Layout is column-major in `k₁`: entry `c * n + r` holds the mode with
/// `k₁ = c` (`0..=n/2`) and `k₂ = signed(r)`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.half() * grid.n()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of the mode `(k₁, k₂)` with `k₁ ≥ 0`.
    pub fn get(&self, k1: i64, k2: i64) -> Complex64 {
        let n = self.grid.n as i64;
        debug_assert!((0..=n / 2).contains(&k1));
        let r = k2.rem_euclid(n) as usize;
        self.coeffs[k1 as usize * self.grid.n + r]
    }

    pub fn set(&mut self, k1: i64, k2: i64, value: Complex64) {
        let n = self.grid.n as i64;
        let r = k2.rem_euclid(n) as usize;
        let idx = k1 as usize * self.grid.n + r;
        self.coeffs[idx] = value;
    }

    /// Apply `f(k1_deriv, k2_deriv, k1_signed, k2_signed, z)` to each mode.
    pub(crate) fn map_modes<F>(&self, mut f: F) -> Spectrum
    where
        F: FnMut(f64, f64, i64, i64, Complex64) -> Complex64,
    {
        let g = &self.grid;
        let n = g.n;
        let mut coeffs = self.coeffs.clone();
        for c in 0..g.half() {
            let k1d = g.deriv_k(c);
            for r in 0..n {
                let idx = c * n + r;
                coeffs[idx] = f(k1d, g.deriv_k(r), c as i64, g.signed(r), coeffs[idx]);
            }
        }
        Spectrum {
            grid: g.clone(),
            coeffs,
        }
    }

    /// Multiply by `i k₁` (`axis = 0`) or `i k₂` (`axis = 1`).
    pub fn derivative(&self, axis: usize) -> Spectrum {
        self.map_modes(|k1, k2, _, _, z| {
            let k = if axis == 0 { k1 } else { k2 };
            Complex64::new(-k * z.im, k * z.re)
        })
    }

    pub fn laplacian(&self) -> Spectrum {
        self.map_modes(|k1, k2, _, _, z| -(k1 * k1 + k2 * k2) * z)
    }

    /// Zero every mode with `|k₁|` or `|k₂|` above `cutoff`.
    pub fn truncate(&self, cutoff: usize) -> Spectrum {
        let cut = cutoff as i64;
        self.map_modes(|_, _, s1, s2, z| {
            if s1.abs() > cut || s2.abs() > cut {
                Complex64::new(0.0, 0.0)
            } else {
                z
            }
        })
    }

    /// Sum of `|F(k)|²` over the full (Hermitian) spectrum.
    pub fn full_power(&self) -> f64 {
        let g = &self.grid;
        let n = g.n;
        let mut total = 0.0;
        for c in 0..g.half() {
            let w = if c == 0 || c == n / 2 { 1.0 } else { 2.0 };
            total += w * self.coeffs[c * n..(c + 1) * n]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>();
        }
        total
    }

    /// `∫ |∇f|²` computed directly from the coefficients.
    pub fn dirichlet_integral(&self) -> f64 {
        self.weighted_power(|k1, k2| k1 * k1 + k2 * k2)
    }

    /// `(4π²/n⁴) Σ w(k) |F(k)|²` over the full spectrum.
    pub fn weighted_power<W: Fn(f64, f64) -> f64>(&self, w: W) -> f64 {
        let g = &self.grid;
        let n = g.n;
        let mut total = 0.0;
        for c in 0..g.half() {
            let dup = if c == 0 || c == n / 2 { 1.0 } else { 2.0 };
            let k1 = g.deriv_k(c);
            for r in 0..n {
                total += dup * w(k1, g.deriv_k(r)) * self.coeffs[c * n + r].norm_sqr();
            }
        }
        let nn = (n * n) as f64;
        total * 4.0 * PI * PI / (nn * nn)
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.grid.inverse(&self.coeffs),
        }
    }
}

impl Add for &Spectrum {
    type Output = Spectrum;
    fn add(self, rhs: &Spectrum) -> Spectrum {
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect();
        Spectrum {
            grid: self.grid.clone(),
            coeffs,
        }
    }
}

/// Real scalar field sampled on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count must be n²");
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &Grid, f: F) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (x1, x2) = grid.coords(i);
                f(x1, x2)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `Σ a cos(k·x) + b sin(k·x)` synthesised spectrally. Each `(k1, k2, a, b)`
    /// must satisfy `|k1|, |k2| < n/2`; `(0, 0, a, _)` is the constant `a`.
    pub fn from_trig_series(grid: &Grid, terms: &[(i64, i64, f64, f64)]) -> Self {
        let nn = (grid.n * grid.n) as f64;
        let lim = (grid.n / 2) as i64;
        let mut spec = Spectrum::zeros(grid);
        for &(k1, k2, a, b) in terms {
            assert!(k1.abs() < lim && k2.abs() < lim, "mode ({k1},{k2}) beyond Nyquist");
            if k1 == 0 && k2 == 0 {
                let cur = spec.get(0, 0);
                spec.set(0, 0, cur + Complex64::new(nn * a, 0.0));
                continue;
            }
            // Fold into the stored half plane: cos is even, sin is odd.
            let (k1, k2, b) = if k1 < 0 || (k1 == 0 && k2 < 0) { (-k1, -k2, -b) } else { (k1, k2, b) };
            let z = Complex64::new(a, -b) * (nn / 2.0);
            let cur = spec.get(k1, k2);
            spec.set(k1, k2, cur + z);
            if k1 == 0 {
                let cur = spec.get(0, -k2);
                spec.set(0, -k2, cur + z.conj());
            }
        }
        spec.to_field()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum {
            grid: self.grid.clone(),
            coeffs: self.grid.forward(&self.values),
        }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Self, f: F) -> Self {
        assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(&self.grid, values)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `∫ f dx` by the grid rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Spatial average `∫ f / 4π²`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `⟨f, g⟩ = ∫ f g dx`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_area()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self, p: Norm) -> f64 {
        lp_norm(&self.values, &self.grid, p)
    }

    /// CSV with columns `col,row,x1,x2,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "col,row,x1,x2,value")?;
        let n = self.grid.n;
        for (i, v) in self.values.iter().enumerate() {
            let (x1, x2) = self.grid.coords(i);
            writeln!(w, "{},{},{},{},{}", i % n, i / n, x1, x2, v)?;
        }
        Ok(())
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

/// Exponents supported by [`lp_norm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    L4,
    Inf,
}

/// Grid-quadrature `L^p` norm of pointwise values.
pub fn lp_norm(values: &[f64], grid: &Grid, p: Norm) -> f64 {
    let da = grid.cell_area();
    match p {
        Norm::L1 => values.iter().map(|v| v.abs()).sum::<f64>() * da,
        Norm::L2 => (values.iter().map(|v| v * v).sum::<f64>() * da).sqrt(),
        Norm::L4 => (values.iter().map(|v| (v * v) * (v * v)).sum::<f64>() * da).powf(0.25),
        Norm::Inf => values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

/// A spatial 2-vector field `(f₁, f₂)`.
pub type Planar = [ScalarField; 2];

pub fn gradient(f: &ScalarField) -> Planar {
    let s = f.spectrum();
    [s.derivative(0).to_field(), s.derivative(1).to_field()]
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    f.spectrum().laplacian().to_field()
}

/// `∇⊥f = (−∂₂f, ∂₁f)`.
pub fn perp_gradient(f: &ScalarField) -> Planar {
    let s = f.spectrum();
    [-&s.derivative(1).to_field(), s.derivative(0).to_field()]
}

pub fn divergence(v: &Planar) -> ScalarField {
    let s = &v[0].spectrum().derivative(0) + &v[1].spectrum().derivative(1);
    s.to_field()
}

/// Scalar curl `∂₁v₂ − ∂₂v₁`.
pub fn curl(v: &Planar) -> ScalarField {
    let d1 = v[1].spectrum().derivative(0);
    let d2 = v[0].spectrum().derivative(1);
    let coeffs = d1.coeffs.iter().zip(&d2.coeffs).map(|(a, b)| a - b).collect();
    Spectrum {
        grid: d1.grid.clone(),
        coeffs,
    }
    .to_field()
}

/// Zero-mean solution of `Δα = rhs` with [`MEAN_TOL`].
pub fn poisson_solve(rhs: &ScalarField) -> Result<ScalarField, FieldError> {
    poisson_solve_with_tol(rhs, MEAN_TOL)
}

pub fn poisson_solve_with_tol(rhs: &ScalarField, mean_tol: f64) -> Result<ScalarField, FieldError> {
    let mean = rhs.mean();
    if mean.abs() > mean_tol {
        return Err(FieldError::NonZeroMean { mean, tol: mean_tol });
    }
    let s = rhs.spectrum().map_modes(|k1, k2, _, _, z| {
        let k2sum = k1 * k1 + k2 * k2;
        if k2sum == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            -z / k2sum
        }
    });
    Ok(s.to_field())
}

/// 2/3-rule filter of a single field.
pub fn dealias(f: &ScalarField) -> ScalarField {
    f.spectrum().truncate(f.grid.dealias_cutoff()).to_field()
}

/// Pointwise product of the 2/3-truncated inputs, truncated again.
pub fn dealias_product(fields: &[&ScalarField]) -> ScalarField {
    assert!(!fields.is_empty(), "dealias_product needs at least one field");
    let grid = fields[0].grid.clone();
    let mut acc = ScalarField::constant(&grid, 1.0);
    for f in fields {
        assert_eq!(f.grid, grid, "dealias_product inputs must share a grid");
        acc = &acc * &dealias(f);
    }
    dealias(&acc)
}

/// `(‖f‖²_{L²} + ‖∇f‖²_{L²})^{1/2}`.
pub fn sobolev_h1_norm(f: &ScalarField) -> f64 {
    let s = f.spectrum();
    (s.weighted_power(|_, _| 1.0) + s.dirichlet_integral()).sqrt()
}

/// Three-component field `u = (u¹, u², u³)` on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField3 {
    components: [ScalarField; 3],
}

impl VectorField3 {
    pub fn new(components: [ScalarField; 3]) -> Self {
        assert!(
            components[1].grid == components[0].grid && components[2].grid == components[0].grid,
            "components must share one grid"
        );
        Self { components }
    }

    pub fn from_fn<F: Fn(f64, f64) -> [f64; 3]>(grid: &Grid, f: F) -> Self {
        let mut comps = [
            Vec::with_capacity(grid.len()),
            Vec::with_capacity(grid.len()),
            Vec::with_capacity(grid.len()),
        ];
        for i in 0..grid.len() {
            let (x1, x2) = grid.coords(i);
            let v = f(x1, x2);
            for (c, x) in comps.iter_mut().zip(v) {
                c.push(x);
            }
        }
        let [a, b, c] = comps;
        Self::new([
            ScalarField::new(grid, a),
            ScalarField::new(grid, b),
            ScalarField::new(grid, c),
        ])
    }

    pub fn constant(grid: &Grid, v: [f64; 3]) -> Self {
        Self::new(v.map(|c| ScalarField::constant(grid, c)))
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, [0.0; 3])
    }

    pub fn grid(&self) -> &Grid {
        &self.components[0].grid
    }

    pub fn components(&self) -> &[ScalarField; 3] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn into_components(self) -> [ScalarField; 3] {
        self.components
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        [
            self.components[0].values[idx],
            self.components[1].values[idx],
            self.components[2].values[idx],
        ]
    }

    pub fn map_components<F: Fn(&ScalarField) -> ScalarField>(&self, f: F) -> Self {
        Self::new([
            f(&self.components[0]),
            f(&self.components[1]),
            f(&self.components[2]),
        ])
    }

    pub fn zip_components<F>(&self, other: &Self, f: F) -> Self
    where
        F: Fn(&ScalarField, &ScalarField) -> ScalarField,
    {
        Self::new([
            f(&self.components[0], &other.components[0]),
            f(&self.components[1], &other.components[1]),
            f(&self.components[2], &other.components[2]),
        ])
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_components(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_components(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_components(|f| f.scale(c))
    }

    /// Componentwise multiplication by a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> Self {
        self.map_components(|f| f * s)
    }

    /// Pointwise Euclidean inner product.
    pub fn dot(&self, other: &Self) -> ScalarField {
        let [a0, a1, a2] = &self.components;
        let [b0, b1, b2] = &other.components;
        let values = (0..self.grid().len())
            .map(|i| a0.values[i] * b0.values[i] + a1.values[i] * b1.values[i] + a2.values[i] * b2.values[i])
            .collect();
        ScalarField::new(self.grid(), values)
    }

    /// Pointwise cross product `self × other`.
    pub fn cross(&self, other: &Self) -> Self {
        let len = self.grid().len();
        let mut out = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        for i in 0..len {
            let c = cross3(self.at(i), other.at(i));
            out[0][i] = c[0];
            out[1][i] = c[1];
            out[2][i] = c[2];
        }
        let g = self.grid().clone();
        let [a, b, c] = out;
        Self::new([ScalarField::new(&g, a), ScalarField::new(&g, b), ScalarField::new(&g, c)])
    }

    /// Pointwise Euclidean magnitude `|u(x)|`.
    pub fn magnitude(&self) -> ScalarField {
        self.dot(self).map(f64::sqrt)
    }

    /// `max_x | |u(x)| − 1 |`.
    pub fn sphere_deviation(&self) -> f64 {
        self.magnitude().values.iter().fold(0.0_f64, |m, r| m.max((r - 1.0).abs()))
    }

    pub fn min_magnitude(&self) -> f64 {
        self.magnitude().values.iter().fold(f64::INFINITY, |m, &r| m.min(r))
    }

    /// Pointwise renormalization `u / |u|`. Zero vectors are left untouched.
    pub fn project_to_sphere(&self) -> Self {
        let mag = self.magnitude();
        self.map_components(|f| {
            f.zip_map(&mag, |v, r| if r > 0.0 { v / r } else { v })
        })
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }

    /// Norm of the pointwise magnitude `|u(x)|`.
    pub fn norm(&self, p: Norm) -> f64 {
        self.magnitude().norm(p)
    }

    /// `‖u‖²_{L²} = Σᵢ ‖uⁱ‖²`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.components.iter().map(|c| c.inner(c)).sum()
    }

    /// Spatial gradient of each component: `[i][k] = ∂ₖ uⁱ`.
    pub fn gradient(&self) -> [Planar; 3] {
        [
            gradient(&self.components[0]),
            gradient(&self.components[1]),
            gradient(&self.components[2]),
        ]
    }

    pub fn laplacian(&self) -> Self {
        self.map_components(laplacian)
    }
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Pointwise `|∇u|² = Σᵢₖ (∂ₖ uⁱ)²` from a precomputed gradient.
pub fn gradient_density(grad: &[Planar; 3]) -> ScalarField {
    let grid = grad[0][0].grid.clone();
    let mut values = vec![0.0; grid.len()];
    for comp in grad {
        for d in comp {
            for (acc, v) in values.iter_mut().zip(&d.values) {
                *acc += v * v;
            }
        }
    }
    ScalarField::new(&grid, values)
}

/// `‖∇u‖_{L⁴} = (∫ |∇u|⁴)^{1/4}`.
pub fn l4_gradient_norm(u: &VectorField3) -> f64 {
    let dens = gradient_density(&u.gradient());
    (dens.values.iter().map(|d| d * d).sum::<f64>() * dens.grid.cell_area()).powf(0.25)
}

/// Tensor `A^{i,j}_k` with target indices `i, j ∈ 0..3` and spatial `k ∈ 0..2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField32 {
    components: Vec<ScalarField>,
}

impl TensorField32 {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            components: vec![ScalarField::zeros(grid); 18],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.components[0].grid
    }

    fn slot(i: usize, j: usize, k: usize) -> usize {
        (i * 3 + j) * 2 + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &ScalarField {
        &self.components[Self::slot(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, f: ScalarField) {
        assert_eq!(&f.grid, self.grid());
        self.components[Self::slot(i, j, k)] = f;
    }

    /// The planar field `(A^{i,j}_1, A^{i,j}_2)`.
    pub fn planar(&self, i: usize, j: usize) -> Planar {
        [self.get(i, j, 0).clone(), self.get(i, j, 1).clone()]
    }

    /// `Σ_{i,j,k} (A^{i,j}_k)²` pointwise.
    pub fn squared_magnitude(&self) -> ScalarField {
        let grid = self.grid().clone();
        let mut values = vec![0.0; grid.len()];
        for c in &self.components {
            for (acc, v) in values.iter_mut().zip(&c.values) {
                *acc += v * v;
            }
        }
        ScalarField::new(&grid, values)
    }

    /// `max |A^{i,j}_k + A^{j,i}_k|` over all entries and points.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..2 {
                    let a = self.get(i, j, k);
                    let b = self.get(j, i, k);
                    for (x, y) in a.values.iter().zip(&b.values) {
                        worst = worst.max((x + y).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `(Σ ‖A^{i,j}_k‖²_{L²})^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.components.iter().map(|c| c.inner(c)).sum::<f64>().sqrt()
    }
}

/// Write components in the `SLLG` binary snapshot format.
pub fn write_snapshot<W: Write>(mut w: W, fields: &[&ScalarField]) -> Result<(), FieldError> {
    let grid = fields
        .first()
        .map(|f| f.grid.clone())
        .ok_or_else(|| FieldError::Format("snapshot needs at least one component".into()))?;
    for f in fields {
        if f.grid != grid {
            return Err(FieldError::GridMismatch(grid.n, f.grid.n));
        }
    }
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(grid.n as u32).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    for f in fields {
        for v in &f.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Vec<ScalarField>, FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != SNAPSHOT_VERSION {
        return Err(FieldError::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let grid = Grid::new(n)?;
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        out.push(ScalarField::new(&grid, values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(6).is_err());
        assert!(Grid::new(48).is_err());
        assert!(Grid::new(8).is_ok());
    }

    #[test]
    fn constant_quadrature() {
        let g = grid(16);
        let f = ScalarField::constant(&g, 2.5);
        assert!((f.integral() - 2.5 * 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let g = grid(32);
        let c = ScalarField::constant(&g, 3.0);
        let [gx, gy] = gradient(&c);
        assert!(gx.max_abs() < 1e-14 && gy.max_abs() < 1e-14);

        let s = ScalarField::from_fn(&g, |x, _| x.sin());
        let [gx, gy] = gradient(&s);
        let cos = ScalarField::from_fn(&g, |x, _| x.cos());
        assert!(max_diff(&gx, &cos) < 1e-13);
        assert!(gy.max_abs() < 1e-13);
        assert!(gx.mean().abs() < 1e-15 && gy.mean().abs() < 1e-15);
    }

    #[test]
    fn laplacian_eigenfunctions() {
        let g = grid(32);
        assert!(laplacian(&ScalarField::constant(&g, 1.0)).max_abs() < 1e-14);
        let f = ScalarField::from_fn(&g, |x, _| (2.0 * x).cos());
        assert!(max_diff(&laplacian(&f), &f.scale(-4.0)) < 1e-12);
        let f = ScalarField::from_fn(&g, |x, y| x.sin() * y.sin());
        assert!(max_diff(&laplacian(&f), &f.scale(-2.0)) < 1e-12);
    }

    #[test]
    fn perp_gradient_examples() {
        let g = grid(16);
        let [a, b] = perp_gradient(&ScalarField::constant(&g, 1.0));
        assert!(a.max_abs() < 1e-14 && b.max_abs() < 1e-14);
        let [a, b] = perp_gradient(&ScalarField::from_fn(&g, |_, y| y.sin()));
        let expect = ScalarField::from_fn(&g, |_, y| -y.cos());
        assert!(max_diff(&a, &expect) < 1e-13);
        assert!(b.max_abs() < 1e-13);
    }

    #[test]
    fn poisson_examples() {
        let g = grid(32);
        let rhs = ScalarField::from_fn(&g, |x, _| x.cos());
        let a = poisson_solve(&rhs).unwrap();
        assert!(max_diff(&a, &rhs.scale(-1.0)) < 1e-13);
        assert!(poisson_solve(&ScalarField::zeros(&g)).unwrap().max_abs() == 0.0);
        let rhs = ScalarField::from_fn(&g, |x, y| -2.0 * x.sin() * y.sin());
        let expect = ScalarField::from_fn(&g, |x, y| x.sin() * y.sin());
        assert!(max_diff(&poisson_solve(&rhs).unwrap(), &expect) < 1e-13);
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let g = grid(16);
        let rhs = ScalarField::constant(&g, 1e-3);
        assert!(matches!(poisson_solve(&rhs), Err(FieldError::NonZeroMean { .. })));
    }

    #[test]
    fn norm_examples() {
        let g = grid(16);
        let one = ScalarField::constant(&g, 1.0);
        assert!((one.norm(Norm::L2) - 2.0 * PI).abs() < 1e-12);
        let s = ScalarField::from_fn(&g, |x, _| x.sin());
        assert!((s.norm(Norm::L2).powi(2) - 2.0 * PI * PI).abs() < 1e-11);
        assert!((s.norm(Norm::Inf) - 1.0).abs() < 1e-15);
        assert!((one.norm(Norm::L1) - 4.0 * PI * PI).abs() < 1e-11);
    }

    #[test]
    fn dealias_examples() {
        let g = grid(32);
        let one = ScalarField::constant(&g, 1.0);
        let f = ScalarField::from_fn(&g, |x, y| x.sin() + (15.0 * y).cos());
        let low = ScalarField::from_fn(&g, |x, _| x.sin());
        assert!(max_diff(&dealias_product(&[&one, &f]), &low) < 1e-13);

        let s = ScalarField::from_fn(&g, |x, _| x.sin());
        let sq = dealias_product(&[&s, &s]);
        let expect = ScalarField::from_fn(&g, |x, _| 0.5 - 0.5 * (2.0 * x).cos());
        assert!(max_diff(&sq, &expect) < 1e-13);
    }

    #[test]
    fn curl_of_gradient_vanishes() {
        let g = grid(32);
        let f = ScalarField::from_fn(&g, |x, y| (x + 2.0 * y).sin() * (3.0 * x).cos());
        assert!(curl(&gradient(&f)).max_abs() < 1e-11);
        assert!(divergence(&perp_gradient(&f)).max_abs() < 1e-11);
    }

    #[test]
    fn vector_ops() {
        let g = grid(8);
        let e1 = VectorField3::constant(&g, [1.0, 0.0, 0.0]);
        let e2 = VectorField3::constant(&g, [0.0, 1.0, 0.0]);
        let e3 = e1.cross(&e2);
        assert_eq!(e3.at(5), [0.0, 0.0, 1.0]);
        assert_eq!(e1.dot(&e2).max_abs(), 0.0);
        let v = VectorField3::constant(&g, [3.0, 0.0, 4.0]).project_to_sphere();
        assert!(v.sphere_deviation() < 1e-15);
    }

    #[test]
    fn tensor_slots_are_distinct() {
        let g = grid(8);
        let mut t = TensorField32::zeros(&g);
        t.set(0, 1, 1, ScalarField::constant(&g, 2.0));
        assert_eq!(t.get(0, 1, 1).max_abs(), 2.0);
        assert_eq!(t.get(1, 0, 1).max_abs(), 0.0);
        assert_eq!(t.antisymmetry_defect(), 2.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = grid(8);
        let a = ScalarField::from_fn(&g, |x, y| x - y);
        let b = ScalarField::constant(&g, -1.5);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(&buf[..4], b"SLLG");
        assert_eq!(buf.len(), 16 + 2 * 64 * 8);
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn snapshot_rejects_bad_magic() {
        let buf = b"NOPE\x01\0\0\0\x08\0\0\0\x00\0\0\0".to_vec();
        assert!(matches!(read_snapshot(&buf[..]), Err(FieldError::Format(_))));
    }
}
