//! Eigenbasis of `A = δ·Id + (−Δ)^γ` on a bounded interval.
//!
//! The default backend uses the spectral fractional Dirichlet Laplacian on
//! `O = (0, L)`: modes `e_j(x) = √(2/L)·sin(jπx/L)` with eigenvalues
//! `λ_j = δ + (jπ/L)^{2γ}`. States are carried as coefficient vectors in this
//! basis and mapped to physical space with a discrete sine transform on a
//! uniform grid of `4·n_modes` cells.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Grid cells per retained mode. Four cells resolve a cubic nonlinearity of
/// a band-limited field without aliasing into the retained modes.
pub const OVERSAMPLING: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub length: f64,
    pub dimension: usize,
}

impl DomainSpec {
    pub fn interval(length: f64) -> Result<Self> {
        let d = DomainSpec {
            length,
            dimension: 1,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::param("length", format!("must be positive, got {}", self.length)));
        }
        if self.dimension != 1 {
            return Err(Error::param(
                "dimension",
                format!("only d = 1 is supported, got {}", self.dimension),
            ));
        }
        Ok(())
    }

    /// Lebesgue measure `|O|`.
    pub fn measure(&self) -> f64 {
        self.length
    }
}

/// Operator realization used to produce eigenpairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    /// Spectral power of the Dirichlet Laplacian, sine eigenfunctions.
    #[default]
    SpectralDirichlet,
}

/// A state `u = Σ a_j e_j`, stored as its coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField(Vec<f64>);

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        SpectralField(vec![0.0; n])
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        SpectralField(coeffs)
    }

    /// Field with a single nonzero coefficient in (1-based) mode `j`.
    pub fn single_mode(n: usize, j: usize, amplitude: f64) -> Self {
        assert!(j >= 1 && j <= n, "mode {j} outside 1..={n}");
        let mut v = vec![0.0; n];
        v[j - 1] = amplitude;
        SpectralField(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    /// `|u|`, the H = L² norm. Equals the ℓ² norm of the coefficients.
    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField(self.0.iter().map(|a| a * s).collect())
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `|self − other|` with the shorter vector zero-padded.
    pub fn distance(&self, other: &SpectralField) -> f64 {
        let n = self.len().max(other.len());
        (0..n)
            .map(|j| {
                let a = self.0.get(j).copied().unwrap_or(0.0);
                let b = other.0.get(j).copied().unwrap_or(0.0);
                (a - b) * (a - b)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Zero-pad (or truncate) to `n` modes.
    pub fn resized(&self, n: usize) -> SpectralField {
        let mut v = self.0.clone();
        v.resize(n, 0.0);
        SpectralField(v)
    }
}

impl From<Vec<f64>> for SpectralField {
    fn from(v: Vec<f64>) -> Self {
        SpectralField(v)
    }
}

/// DST-I of size `N` (`S_k = Σ_{i=1}^{N} x_i sin(πki/(N+1))`) computed with a
/// complex FFT of length `2(N+1)` on the odd extension.
#[derive(Clone)]
pub struct SineTransform {
    points: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineTransform").field("points", &self.points).finish()
    }
}

/// Scratch buffers for [`SineTransform`]; one per thread.
#[derive(Debug, Default, Clone)]
pub struct TransformScratch {
    buf: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl SineTransform {
    pub fn new(points: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (points + 1));
        SineTransform { points, fft }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn scratch(&self) -> TransformScratch {
        TransformScratch {
            buf: vec![Complex::new(0.0, 0.0); 2 * (self.points + 1)],
            fft: vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
        }
    }

    /// `input` holds `x_1..x_k` (k ≤ N, the rest treated as zero); `out`
    /// receives `S_1..S_{out.len()}` with `out.len() ≤ N`.
    pub fn apply(&self, input: &[f64], out: &mut [f64], scratch: &mut TransformScratch) {
        let n = self.points;
        let m = n + 1;
        debug_assert!(input.len() <= n && out.len() <= n);
        if scratch.buf.len() != 2 * m {
            *scratch = self.scratch();
        }
        let buf = &mut scratch.buf;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, &x) in input.iter().enumerate() {
            buf[i + 1].re = x;
            buf[2 * m - i - 1].re = -x;
        }
        self.fft.process_with_scratch(buf, &mut scratch.fft);
        for (k, o) in out.iter_mut().enumerate() {
            *o = -0.5 * buf[k + 1].im;
        }
    }
}

/// Eigenpairs of `A` plus the synthesis grid.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    domain: DomainSpec,
    backend: Backend,
    gamma: f64,
    delta: f64,
    eigenvalues: Vec<f64>,
    transform: SineTransform,
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::param("gamma", format!("must lie in (0, 1), got {gamma}")))
    }
}

pub fn build_basis(domain: DomainSpec, gamma: f64, delta: f64, n_modes: usize) -> Result<EigenBasis> {
    build_basis_with(Backend::SpectralDirichlet, domain, gamma, delta, n_modes)
}

pub fn build_basis_with(
    backend: Backend,
    domain: DomainSpec,
    gamma: f64,
    delta: f64,
    n_modes: usize,
) -> Result<EigenBasis> {
    domain.validate()?;
    validate_gamma(gamma)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    if n_modes < 1 {
        return Err(Error::param("n_modes", "must be at least 1"));
    }
    let eigenvalues = match backend {
        Backend::SpectralDirichlet => (1..=n_modes)
            .map(|j| delta + (j as f64 * PI / domain.length).powf(2.0 * gamma))
            .collect(),
    };
    Ok(EigenBasis {
        domain,
        backend,
        gamma,
        delta,
        eigenvalues,
        transform: SineTransform::new(OVERSAMPLING * n_modes - 1),
    })
}

impl EigenBasis {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ_1..λ_n`, nondecreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_j` for 1-based `j`.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j - 1]
    }

    /// Same operator and domain with a different number of modes.
    pub fn with_modes(&self, n_modes: usize) -> Result<EigenBasis> {
        build_basis_with(self.backend, self.domain, self.gamma, self.delta, n_modes)
    }

    /// Interior points of the default synthesis grid (`4·n_modes − 1`).
    pub fn grid_len(&self) -> usize {
        self.transform.points()
    }

    /// Interior nodes `x_i = i·L/(N+1)` of a grid with `n_grid` points.
    pub fn grid(&self, n_grid: usize) -> Vec<f64> {
        let h = self.domain.length / (n_grid + 1) as f64;
        (1..=n_grid).map(|i| i as f64 * h).collect()
    }

    /// Value of mode `j` at `x`.
    pub fn eigenfunction(&self, j: usize, x: f64) -> f64 {
        let l = self.domain.length;
        (2.0 / l).sqrt() * (j as f64 * PI * x / l).sin()
    }

    pub fn transform(&self) -> &SineTransform {
        &self.transform
    }

    pub fn check(&self, field: &SpectralField) -> Result<()> {
        check_len(self.n_modes(), field.len())
    }

    pub fn apply_a(&self, field: &SpectralField) -> Result<SpectralField> {
        self.fractional_power(field, 1.0)
    }

    /// `a_j ↦ λ_j^r a_j`.
    pub fn fractional_power(&self, field: &SpectralField, r: f64) -> Result<SpectralField> {
        self.check(field)?;
        Ok(SpectralField(
            field
                .coeffs()
                .iter()
                .zip(&self.eigenvalues)
                .map(|(a, l)| if r == 0.0 { *a } else { a * l.powf(r) })
                .collect(),
        ))
    }

    pub fn norm_h(&self, field: &SpectralField) -> Result<f64> {
        self.check(field)?;
        Ok(field.norm_h())
    }

    /// `‖u‖ = a(u,u)^{1/2} = (Σ λ_j a_j²)^{1/2}`.
    pub fn norm_v(&self, field: &SpectralField) -> Result<f64> {
        self.check(field)?;
        Ok(self.norm_v_sq_unchecked(field.coeffs()).sqrt())
    }

    pub(crate) fn norm_v_sq_unchecked(&self, coeffs: &[f64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(a, l)| l * a * a)
            .sum()
    }

    /// `L^p` norm by grid quadrature after synthesis on `n_grid` points.
    pub fn norm_lp(&self, field: &SpectralField, p: f64, n_grid: usize) -> Result<f64> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::param("p", format!("must be >= 1, got {p}")));
        }
        let values = self.synthesize(field, n_grid)?;
        let h = self.domain.length / (n_grid + 1) as f64;
        let sum: f64 = values.iter().map(|v| v.abs().powf(p)).sum();
        Ok((h * sum).powf(1.0 / p))
    }

    /// Sample `u` at the interior nodes of an `n_grid`-point grid.
    pub fn synthesize(&self, field: &SpectralField, n_grid: usize) -> Result<Vec<f64>> {
        self.check(field)?;
        if n_grid < self.n_modes() {
            return Err(Error::param(
                "n_grid",
                format!("must be >= n_modes = {}, got {n_grid}", self.n_modes()),
            ));
        }
        let tf = self.transform_for(n_grid);
        let mut scratch = tf.scratch();
        let mut out = vec![0.0; n_grid];
        tf.apply(field.coeffs(), &mut out, &mut scratch);
        let s = (2.0 / self.domain.length).sqrt();
        out.iter_mut().for_each(|v| *v *= s);
        Ok(out)
    }

    /// Discrete projection of grid values onto the retained modes. The grid
    /// size is taken from `values.len()`.
    pub fn analyze(&self, values: &[f64]) -> Result<SpectralField> {
        let n_grid = values.len();
        if n_grid < self.n_modes() {
            return Err(Error::param(
                "n_grid",
                format!("must be >= n_modes = {}, got {n_grid}", self.n_modes()),
            ));
        }
        let tf = self.transform_for(n_grid);
        let mut scratch = tf.scratch();
        let mut out = vec![0.0; self.n_modes()];
        tf.apply(values, &mut out, &mut scratch);
        let s = (2.0 * self.domain.length).sqrt() / (n_grid + 1) as f64;
        out.iter_mut().for_each(|v| *v *= s);
        Ok(SpectralField(out))
    }

    fn transform_for(&self, n_grid: usize) -> SineTransform {
        if n_grid == self.transform.points() {
            self.transform.clone()
        } else {
            SineTransform::new(n_grid)
        }
    }

    /// Hot-path synthesis onto the default grid.
    pub(crate) fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut TransformScratch) {
        self.transform.apply(coeffs, out, scratch);
        let s = (2.0 / self.domain.length).sqrt();
        out.iter_mut().for_each(|v| *v *= s);
    }

    /// Hot-path analysis from the default grid.
    pub(crate) fn analyze_into(&self, values: &[f64], out: &mut [f64], scratch: &mut TransformScratch) {
        self.transform.apply(values, out, scratch);
        let s = (2.0 * self.domain.length).sqrt() / (self.transform.points() + 1) as f64;
        out.iter_mut().for_each(|v| *v *= s);
    }
}

/// `C(d, γ) = γ·4^γ·Γ((d+2γ)/2) / (π^{d/2}·Γ(1−γ))`, the normalizing constant
/// of the integral fractional Laplacian.
pub fn c_constant(d: usize, gamma: f64) -> Result<f64> {
    use libm::tgamma as gamma_fn;
    validate_gamma(gamma)?;
    if d < 1 {
        return Err(Error::param("d", "must be at least 1"));
    }
    let d = d as f64;
    Ok(gamma * 4f64.powf(gamma) * gamma_fn((d + 2.0 * gamma) / 2.0)
        / (PI.powf(d / 2.0) * gamma_fn(1.0 - gamma)))
}
