//! Drift nonlinearity `F`, noise coefficients `g` and `h`, and the certified
//! constants that the long-time estimates are stated in.
//!
//! Conventions:
//! * `f(u) = Σ_{k=1}^{2p} f_{2p−k} u^{k−1}` has odd degree `2p − 1` and
//!   `F(u) = f(u) − δu`. The growth check uses `|F(u)| ≤ k1(1 + |u|^{2p−1})`
//!   and the dissipativity check `u·F(u) ≥ −k2 + k3|u|^{2p}`, the exponents
//!   actually attained by a degree-`2p−1` polynomial.
//! * `g(u)·dW = Σ_j (b_j + c·a_j)·dW_j·e_j`, diagonal additive plus scalar
//!   multiplicative.
//! * `h(u, ξ) = ξ·(η0·w + η1·(w ⊙ u))` for a fixed mode profile `w`.
//!
//! Every certified constant carries a factor-2 slack from `(x+y)² ≤ 2x² + 2y²`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::noise::JumpMeasureSpec;
use crate::spectral::{EigenBasis, SpectralField, TransformScratch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoly {
    /// `f_0, f_1, …, f_{2p−1}`, highest power first.
    coeffs: Vec<f64>,
    delta: f64,
    p: usize,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl DriftPoly {
    /// Drift with caller-supplied constants. They are not checked here; see
    /// [`verify_assumptions`].
    pub fn new(coeffs: Vec<f64>, delta: f64, k: [f64; 4]) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() % 2 != 0 {
            return Err(Error::param(
                "coeffs",
                format!("need an even number 2p of coefficients, got {}", coeffs.len()),
            ));
        }
        if !(coeffs[0] > 0.0) {
            return Err(Error::param("coeffs", "leading coefficient f_0 must be positive"));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("k", "constants must be finite and nonnegative"));
        }
        let p = coeffs.len() / 2;
        Ok(DriftPoly {
            coeffs,
            delta,
            p,
            k1: k[0],
            k2: k[1],
            k3: k[2],
            k4: k[3],
        })
    }

    /// `f(u) = ν·u³ − κ·u`, so `F(u) = ν·u³ − (κ+δ)·u`.
    pub fn cubic(nu: f64, kappa: f64, delta: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::param("nu", format!("must be positive, got {nu}")));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::param("kappa", format!("must be nonnegative, got {kappa}")));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        let s = kappa + delta;
        // u·F = νu⁴ − s·u² = (ν/2)(u² − s/ν)² + (ν/2)u⁴ − s²/(2ν)
        Self::new(
            vec![nu, 0.0, -kappa, 0.0],
            delta,
            [2.0 * nu.max(s), s * s / (2.0 * nu), nu / 2.0, s],
        )
    }

    /// `F(u) = ν·u³ − (ν+δ)·u`, i.e. `f(u) = ν(u³ − u)`.
    pub fn chafee_infante(nu: f64, delta: f64) -> Result<Self> {
        Self::cubic(nu, nu, delta)
    }

    /// `f(u) = δ·u`, so `F ≡ 0`. All constants are zero: the tight
    /// `inf F′ = 0` gives `k4 = 0`, and no positive `k3` exists.
    pub fn linear(delta: f64) -> Result<Self> {
        Self::new(vec![delta, 0.0], delta, [0.0; 4])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn degree(&self) -> usize {
        2 * self.p - 1
    }

    pub fn f(&self, u: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc * u + c)
    }

    /// `F(u) = f(u) − δu`.
    pub fn eval(&self, u: f64) -> f64 {
        self.f(u) - self.delta * u
    }

    /// `F′(u)`.
    pub fn slope(&self, u: f64) -> f64 {
        let deg = self.degree();
        let df = self
            .coeffs
            .iter()
            .enumerate()
            .take(deg)
            .fold(0.0, |acc, (i, c)| acc * u + c * (deg - i) as f64);
        df - self.delta
    }

    /// `F` is identically zero.
    pub fn is_zero(&self) -> bool {
        let n = self.coeffs.len();
        self.coeffs[..n - 2].iter().all(|c| *c == 0.0)
            && self.coeffs[n - 2] == self.delta
            && self.coeffs[n - 1] == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModeProfile {
    /// `v_j` given explicitly; zero beyond the list.
    Explicit { values: Vec<f64> },
    /// `v_j = amp·j^{−decay}` for `j ≤ cutoff` (all modes if no cutoff).
    PowerLaw {
        amp: f64,
        decay: f64,
        cutoff: Option<usize>,
    },
}

impl ModeProfile {
    pub fn zero() -> Self {
        ModeProfile::Explicit { values: Vec::new() }
    }

    pub fn single(j: usize, amp: f64) -> Self {
        let mut values = vec![0.0; j];
        values[j - 1] = amp;
        ModeProfile::Explicit { values }
    }

    pub fn values(&self, n: usize) -> Vec<f64> {
        match self {
            ModeProfile::Explicit { values } => {
                let mut v = values.clone();
                v.resize(n, 0.0);
                v
            }
            ModeProfile::PowerLaw { amp, decay, cutoff } => (1..=n)
                .map(|j| {
                    if cutoff.is_some_and(|c| j > c) {
                        0.0
                    } else {
                        amp * (j as f64).powf(-decay)
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub profile: ModeProfile,
    /// Multiplicative scalar `c`.
    pub c: f64,
    b: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(profile: ModeProfile, c: f64, n_modes: usize) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::param("c", "must be finite"));
        }
        let b = profile.values(n_modes);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("b", "amplitudes must be finite"));
        }
        Ok(DiffusionSpec { profile, c, b })
    }

    pub fn off(n_modes: usize) -> Self {
        DiffusionSpec {
            profile: ModeProfile::zero(),
            c: 0.0,
            b: vec![0.0; n_modes],
        }
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_sq_sum(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum()
    }

    pub fn is_off(&self) -> bool {
        self.c == 0.0 && self.b.iter().all(|v| *v == 0.0)
    }

    /// `‖g(u)‖²_{L2(U;H)} = Σ_j (b_j + c·a_j)²`.
    pub fn hs_norm_sq(&self, field: &SpectralField) -> f64 {
        self.b
            .iter()
            .zip(field.coeffs())
            .map(|(b, a)| (b + self.c * a).powi(2))
            .sum()
    }

    /// `C_g = 2(Σ b_j² + c²)`.
    pub fn c_g(&self) -> f64 {
        2.0 * (self.b_sq_sum() + self.c * self.c)
    }

    /// `L_g = 2c²`.
    pub fn l_g(&self) -> f64 {
        2.0 * self.c * self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCoeffSpec {
    pub profile: ModeProfile,
    pub eta0: f64,
    pub eta1: f64,
    w: Vec<f64>,
}

impl JumpCoeffSpec {
    pub fn new(profile: ModeProfile, eta0: f64, eta1: f64, n_modes: usize) -> Result<Self> {
        if !(eta0.is_finite() && eta1.is_finite()) {
            return Err(Error::param("eta", "must be finite"));
        }
        let w = profile.values(n_modes);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("w", "profile must be finite"));
        }
        Ok(JumpCoeffSpec {
            profile,
            eta0,
            eta1,
            w,
        })
    }

    pub fn off(n_modes: usize) -> Self {
        JumpCoeffSpec {
            profile: ModeProfile::zero(),
            eta0: 0.0,
            eta1: 0.0,
            w: vec![0.0; n_modes],
        }
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn is_off(&self) -> bool {
        (self.eta0 == 0.0 && self.eta1 == 0.0) || self.w.iter().all(|v| *v == 0.0)
    }

    /// `η0·w + η1·(w ⊙ u)`, the mark-independent factor of `h`.
    pub fn response(&self, field: &SpectralField) -> SpectralField {
        SpectralField::from_coeffs(
            self.w
                .iter()
                .zip(field.coeffs())
                .map(|(w, a)| w * (self.eta0 + self.eta1 * a))
                .collect(),
        )
    }

    fn w_sq_sum(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum()
    }

    fn w_sup_sq(&self) -> f64 {
        self.w.iter().fold(0.0f64, |m, v| m.max(v * v))
    }

    /// `C_h = 2·max(η0²|w|², η1²‖w‖²_∞)·M2_∞`.
    pub fn c_h(&self, jumps: &JumpMeasureSpec) -> f64 {
        let a = self.eta0 * self.eta0 * self.w_sq_sum();
        let b = self.eta1 * self.eta1 * self.w_sup_sq();
        2.0 * a.max(b) * jumps.moment2_limit()
    }

    /// `L_h = 2·η1²‖w‖²_∞·M2_∞`.
    pub fn l_h(&self, jumps: &JumpMeasureSpec) -> f64 {
        2.0 * self.eta1 * self.eta1 * self.w_sup_sq() * jumps.moment2_limit()
    }

    /// `β2 = 2·η0²|w|²·M2_∞`.
    pub fn beta2(&self, jumps: &JumpMeasureSpec) -> f64 {
        2.0 * self.eta0 * self.eta0 * self.w_sq_sum() * jumps.moment2_limit()
    }
}

/// Closed-form noise constants and the derived condition flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConstants {
    pub c_g: f64,
    pub l_g: f64,
    pub c_h: f64,
    pub l_h: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// `L1 = C_g + C_h`.
    pub l1: f64,
    /// `2δ > L1`.
    pub attractor_ok: bool,
    /// `2δ > 2k4 + α1 + α2`.
    pub ergodic_ok: bool,
    /// The linear parts of `|g|²` and `∫|h|²λ` are at most `δ/2`, so that
    /// `β1`, `β2` certify the moment bound.
    pub moment_ok: bool,
    /// `2δ − (2k4 + α1 + α2)`.
    pub contraction_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub basis: Arc<EigenBasis>,
    pub drift: DriftPoly,
    pub diffusion: DiffusionSpec,
    pub jump: JumpCoeffSpec,
    pub jumps: JumpMeasureSpec,
    /// Small-noise parameter; 1 is the unscaled model, 0 switches noise off.
    pub eps: f64,
}

impl ModelSpec {
    pub fn new(
        basis: Arc<EigenBasis>,
        drift: DriftPoly,
        diffusion: DiffusionSpec,
        jump: JumpCoeffSpec,
        jumps: JumpMeasureSpec,
    ) -> Result<Self> {
        let n = basis.n_modes();
        check_len(n, diffusion.b.len())?;
        check_len(n, jump.w.len())?;
        if (basis.delta() - drift.delta()).abs() > 0.0 {
            return Err(Error::param(
                "delta",
                format!("basis δ = {} differs from drift δ = {}", basis.delta(), drift.delta()),
            ));
        }
        jumps.validate()?;
        Ok(ModelSpec {
            basis,
            drift,
            diffusion,
            jump,
            jumps,
            eps: 1.0,
        })
    }

    /// Deterministic dynamics: noise coefficients switched off.
    pub fn deterministic(basis: Arc<EigenBasis>, drift: DriftPoly) -> Result<Self> {
        let n = basis.n_modes();
        Self::new(
            basis,
            drift,
            DiffusionSpec::off(n),
            JumpCoeffSpec::off(n),
            JumpMeasureSpec::symmetric(0.5)?,
        )
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::param("eps", format!("must be nonnegative, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    pub fn delta(&self) -> f64 {
        self.drift.delta()
    }

    /// Same model on `n` modes; noise profiles are re-evaluated.
    pub fn resized(&self, n: usize) -> Result<ModelSpec> {
        let basis = Arc::new(self.basis.with_modes(n)?);
        let diffusion = DiffusionSpec::new(self.diffusion.profile.clone(), self.diffusion.c, n)?;
        let jump = JumpCoeffSpec::new(self.jump.profile.clone(), self.jump.eta0, self.jump.eta1, n)?;
        let mut m = ModelSpec::new(basis, self.drift.clone(), diffusion, jump, self.jumps)?;
        m.eps = self.eps;
        Ok(m)
    }

    /// Same drift, no noise.
    pub fn without_noise(&self) -> ModelSpec {
        let n = self.n_modes();
        ModelSpec {
            basis: self.basis.clone(),
            drift: self.drift.clone(),
            diffusion: DiffusionSpec::off(n),
            jump: JumpCoeffSpec::off(n),
            jumps: self.jumps,
            eps: self.eps,
        }
    }

    pub fn noise_off(&self) -> bool {
        self.eps == 0.0 || (self.diffusion.is_off() && self.jump.is_off())
    }

    /// Wiener amplitude multiplier `√ε`.
    pub fn wiener_scale(&self) -> f64 {
        self.eps.sqrt()
    }

    /// Jump amplitude multiplier `ε`.
    pub fn jump_scale(&self) -> f64 {
        self.eps
    }

    /// Jump measure actually sampled: intensity scaled by `1/ε`.
    pub fn effective_jumps(&self) -> JumpMeasureSpec {
        let mut j = self.jumps;
        if self.eps > 0.0 {
            j.intensity_scale *= 1.0 / self.eps;
        }
        j
    }

    /// Pseudo-spectral `P_n F(u)`: synthesize on the oversampled grid, apply
    /// `F` pointwise, project back.
    #[allow(non_snake_case)]
    pub fn F_eval_field(&self, field: &SpectralField) -> Result<SpectralField> {
        self.basis.check(field)?;
        let mut ws = Workspace::new(&self.basis);
        let mut out = vec![0.0; self.n_modes()];
        self.drift_into(field.coeffs(), &mut out, &mut ws);
        Ok(SpectralField::from_coeffs(out))
    }

    pub(crate) fn drift_into(&self, coeffs: &[f64], out: &mut [f64], ws: &mut Workspace) {
        if self.drift.is_zero() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        if self.drift.p() == 1 && self.drift.coeffs()[1] == 0.0 {
            let slope = self.drift.coeffs()[0] - self.drift.delta();
            out.iter_mut().zip(coeffs).for_each(|(o, a)| *o = slope * a);
            return;
        }
        self.basis.synthesize_into(coeffs, &mut ws.values, &mut ws.scratch);
        for v in ws.values.iter_mut() {
            *v = self.drift.eval(*v);
        }
        self.basis.analyze_into(&ws.values, out, &mut ws.scratch);
    }

    /// `g(t, u)·ΔW = Σ_j (b_j + c·a_j)·ΔW_j·e_j`. The presets are autonomous;
    /// `t` is accepted for interface symmetry.
    pub fn g_apply(&self, _t: f64, field: &SpectralField, dw: &[f64]) -> Result<SpectralField> {
        self.basis.check(field)?;
        check_len(self.n_modes(), dw.len())?;
        let c = self.diffusion.c;
        Ok(SpectralField::from_coeffs(
            self.diffusion
                .b
                .iter()
                .zip(field.coeffs())
                .zip(dw)
                .map(|((b, a), w)| (b + c * a) * w)
                .collect(),
        ))
    }

    /// `h(u, ξ) = ξ·(η0·w + η1·(w ⊙ u))`.
    pub fn h_apply(&self, _t: f64, field: &SpectralField, xi: f64) -> Result<SpectralField> {
        self.basis.check(field)?;
        if !(xi != 0.0 && xi.abs() <= 1.0) {
            return Err(Error::param("xi", format!("mark {xi} outside E")));
        }
        Ok(self.jump.response(field).scaled(xi))
    }

    pub fn noise_constants(&self) -> NoiseConstants {
        let delta = self.delta();
        let c_g = self.diffusion.c_g();
        let l_g = self.diffusion.l_g();
        let c_h = self.jump.c_h(&self.jumps);
        let l_h = self.jump.l_h(&self.jumps);
        let (alpha1, alpha2) = (l_g, l_h);
        let beta1 = 2.0 * self.diffusion.b_sq_sum();
        let beta2 = self.jump.beta2(&self.jumps);
        let l1 = c_g + c_h;
        let rate = 2.0 * delta - (2.0 * self.drift.k4 + alpha1 + alpha2);
        NoiseConstants {
            c_g,
            l_g,
            c_h,
            l_h,
            alpha1,
            alpha2,
            beta1,
            beta2,
            l1,
            attractor_ok: 2.0 * delta > l1,
            ergodic_ok: rate > 0.0,
            moment_ok: l_g <= delta / 2.0 && l_h <= delta / 2.0,
            contraction_rate: rate,
        }
    }

    /// Configurations outside the large-deviation regime
    /// `2γ < d`, `2p ∈ (2, 2d/(d − 2γ)]`. These still run.
    pub fn regime_warnings(&self) -> Vec<String> {
        let gamma = self.basis.gamma();
        let d = self.basis.domain().dimension as f64;
        let q = (2 * self.drift.p()) as f64;
        let mut w = Vec::new();
        if 2.0 * gamma >= d {
            w.push(format!("2γ = {} is not below d = {d}", 2.0 * gamma));
        } else if self.drift.p() > 1 {
            let cap = 2.0 * d / (d - 2.0 * gamma);
            if q > cap {
                w.push(format!("dissipation exponent {q} exceeds 2d/(d−2γ) = {cap:.4}"));
            }
        }
        w
    }
}

/// Per-thread buffers for pseudo-spectral evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) values: Vec<f64>,
    pub(crate) scratch: TransformScratch,
}

impl Workspace {
    pub fn new(basis: &EigenBasis) -> Self {
        Workspace {
            values: vec![0.0; basis.grid_len()],
            scratch: basis.transform().scratch(),
        }
    }
}

/// Margins found by [`verify_assumptions`] (smallest slack of each bound).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub growth_margin: f64,
    pub dissipation_margin: f64,
    pub monotonicity_margin: f64,
}

/// Scan `n_samples` equispaced points of `range` for violations of the growth,
/// dissipativity and one-sided Lipschitz bounds at the stored constants.
pub fn verify_assumptions(drift: &DriftPoly, range: (f64, f64), n_samples: usize) -> Result<AssumptionReport> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::param("range", format!("empty sample range [{lo}, {hi}]")));
    }
    if n_samples < 1000 {
        return Err(Error::param("n_samples", "need at least 1000 samples"));
    }
    let grow = (2 * drift.p() - 1) as i32;
    let diss = (2 * drift.p()) as i32;
    let mut report = AssumptionReport {
        samples: n_samples,
        growth_margin: f64::INFINITY,
        dissipation_margin: f64::INFINITY,
        monotonicity_margin: f64::INFINITY,
    };
    for i in 0..n_samples {
        let u = lo + (hi - lo) * i as f64 / (n_samples - 1) as f64;
        let fu = drift.eval(u);
        let rounding = 1e-12 * (1.0 + u.abs().powi(diss));
        let g = drift.k1 * (1.0 + u.abs().powi(grow)) - fu.abs();
        if g < -rounding {
            return Err(Error::AssumptionFailed {
                assumption: "F1",
                at: u,
                detail: format!("|F(u)| = {} > k1(1+|u|^{grow}) = {}", fu.abs(), fu.abs() + g),
            });
        }
        let d = u * fu - (-drift.k2 + drift.k3 * u.abs().powi(diss));
        if d < -rounding {
            return Err(Error::AssumptionFailed {
                assumption: "F2",
                at: u,
                detail: format!("u·F(u) = {} below −k2 + k3|u|^{diss}", u * fu),
            });
        }
        let m = drift.slope(u) + drift.k4;
        if m < -rounding {
            return Err(Error::AssumptionFailed {
                assumption: "F3",
                at: u,
                detail: format!("F'(u) = {} < −k4 = {}", drift.slope(u), -drift.k4),
            });
        }
        report.growth_margin = report.growth_margin.min(g);
        report.dissipation_margin = report.dissipation_margin.min(d);
        report.monotonicity_margin = report.monotonicity_margin.min(m);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, DomainSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn basis(n: usize, delta: f64) -> Arc<EigenBasis> {
        Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.4, delta, n).unwrap())
    }

    #[test]
    fn chafee_infante_constants() {
        let ci = DriftPoly::chafee_infante(1.0, 1.0).unwrap();
        assert_eq!(ci.eval(1.0), -1.0);
        assert_eq!(ci.eval(0.0), 0.0);
        assert_eq!(ci.eval(2.0), 4.0);
        assert_eq!(ci.k4, 2.0);
        assert_eq!(ci.k2, 2.0);
        assert_eq!(ci.k3, 0.5);
        assert_eq!(ci.k1, 4.0);
        assert_eq!(ci.p(), 2);
        assert_eq!(ci.slope(0.0), -2.0);
        assert_eq!(ci.slope(1.0), 1.0);
        assert!(DriftPoly::chafee_infante(0.0, 1.0).is_err());
        assert!(DriftPoly::chafee_infante(1.0, -1.0).is_err());
    }

    #[test]
    fn dissipation_bound_by_grid_search() {
        // Oracle: brute-force minimum of u·F(u) − (−k2 + k3 u⁴) over [−10, 10].
        let ci = DriftPoly::chafee_infante(1.0, 1.0).unwrap();
        let min = (0..=200_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
            .map(|u| u.powi(4) - 2.0 * u * u - (-2.0 + 0.5 * u.powi(4)))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12 && min < 1e-6);
        for i in 0..=2000 {
            let u = -10.0 + 0.01 * i as f64;
            assert_relative_eq!(u * ci.eval(u), u.powi(4) - 2.0 * u * u, epsilon = 1e-9);
        }
    }

    #[test]
    fn verify_assumptions_passes_and_fails() {
        let ci = DriftPoly::chafee_infante(1.0, 1.0).unwrap();
        let r = verify_assumptions(&ci, (-20.0, 20.0), 100_000).unwrap();
        assert!(r.growth_margin >= 0.0 && r.monotonicity_margin >= 0.0);
        let mut bad = ci.clone();
        bad.k4 = (1.0 + 1.0) / 2.0;
        match verify_assumptions(&bad, (-10.0, 10.0), 10_001) {
            Err(Error::AssumptionFailed { assumption, at, .. }) => {
                assert_eq!(assumption, "F3");
                assert!(at.abs() < 1.0);
            }
            other => panic!("expected F3 failure, got {other:?}"),
        }
        assert!(verify_assumptions(&ci, (1.0, 1.0), 1000).is_err());
        assert!(verify_assumptions(&ci, (-1.0, 1.0), 10).is_err());
        for (nu, delta) in [(0.05, 3.0), (2.0, 0.5), (1.0, 4.0)] {
            let d = DriftPoly::chafee_infante(nu, delta).unwrap();
            verify_assumptions(&d, (-20.0, 20.0), 100_000).unwrap();
        }
        verify_assumptions(&DriftPoly::cubic(1.0, 0.0, 2.0).unwrap(), (-20.0, 20.0), 100_000).unwrap();
        verify_assumptions(&DriftPoly::linear(1.0).unwrap(), (-20.0, 20.0), 100_000).unwrap();
    }

    #[test]
    fn field_drift_of_zero_is_zero() {
        let m = ModelSpec::deterministic(basis(8, 1.0), DriftPoly::chafee_infante(1.0, 1.0).unwrap()).unwrap();
        let z = m.F_eval_field(&SpectralField::zeros(8)).unwrap();
        assert!(z.coeffs().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pseudo_spectral_drift_matches_quadrature() {
        let b = basis(6, 1.0);
        let m = ModelSpec::deterministic(b.clone(), DriftPoly::chafee_infante(1.0, 1.0).unwrap()).unwrap();
        let u = SpectralField::from_coeffs(vec![0.8, -0.3, 0.2, 0.0, 0.1, -0.05]);
        let got = m.F_eval_field(&u).unwrap();
        // Oracle: fine midpoint quadrature of ∫ F(u(x)) e_j(x) dx.
        let n = 20_000;
        let h = PI / n as f64;
        for j in 1..=6 {
            let q: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) * h;
                    let ux: f64 = (1..=6).map(|k| u.coeffs()[k - 1] * b.eigenfunction(k, x)).sum();
                    m.drift.eval(ux) * b.eigenfunction(j, x)
                })
                .sum::<f64>()
                * h;
            assert!((q - got.coeffs()[j - 1]).abs() < 1e-7, "mode {j}: {q} vs {}", got.coeffs()[j - 1]);
        }
    }

    #[test]
    fn g_and_h_apply() {
        let b = basis(3, 1.0);
        let jumps = JumpMeasureSpec::symmetric(0.5).unwrap();
        let diff = DiffusionSpec::new(ModeProfile::Explicit { values: vec![0.5, 0.1, 0.0] }, 0.0, 3).unwrap();
        let jc = JumpCoeffSpec::new(ModeProfile::single(1, 1.0), 3.0, 0.0, 3).unwrap();
        let m = ModelSpec::new(b, DriftPoly::chafee_infante(1.0, 1.0).unwrap(), diff, jc, jumps).unwrap();
        let dw = [0.2, -0.1, 0.3];
        let u1 = SpectralField::from_coeffs(vec![1.0, 2.0, 3.0]);
        let u2 = SpectralField::from_coeffs(vec![-4.0, 0.0, 9.0]);
        assert_eq!(m.g_apply(0.0, &u1, &dw).unwrap(), m.g_apply(0.0, &u2, &dw).unwrap());
        let h = m.h_apply(0.0, &u1, 2.0).unwrap_err();
        assert!(matches!(h, Error::InvalidParameter { .. }));
        let h = m.h_apply(0.0, &u1, 0.5).unwrap();
        assert_eq!(h.coeffs(), &[1.5, 0.0, 0.0]);
        let mut m2 = m.clone();
        m2.jump = JumpCoeffSpec::new(ModeProfile::single(1, 1.0), 0.0, 1.0, 3).unwrap();
        assert!(m2.h_apply(0.0, &SpectralField::zeros(3), 0.7).unwrap().norm_h() == 0.0);
        assert!(m.g_apply(0.0, &SpectralField::zeros(2), &dw).is_err());
    }

    #[test]
    fn h_profile_example() {
        // η1 = 0, ξ = 2 is outside E for our λ, so check the response factor directly.
        let jc = JumpCoeffSpec::new(ModeProfile::single(1, 1.0), 3.0, 0.0, 4).unwrap();
        let r = jc.response(&SpectralField::from_coeffs(vec![5.0, 1.0, 1.0, 1.0])).scaled(2.0);
        assert_eq!(r.coeffs(), &[6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn noise_constant_examples() {
        let b = basis(4, 2.0);
        let diff = DiffusionSpec::new(ModeProfile::Explicit { values: vec![0.5] }, 0.0, 4).unwrap();
        assert_relative_eq!(diff.c_g(), 0.5, epsilon = 1e-15);
        assert_eq!(diff.l_g(), 0.0);
        let jumps = JumpMeasureSpec::symmetric(0.5).unwrap();
        // η0²·|w|²·2·(4/3) = 0.5
        let eta0 = (0.5f64 / (2.0 * 4.0 / 3.0)).sqrt();
        let jc = JumpCoeffSpec::new(ModeProfile::single(1, 1.0), eta0, 0.0, 4).unwrap();
        assert_relative_eq!(jc.c_h(&jumps), 0.5, epsilon = 1e-14);
        let m = ModelSpec::new(b, DriftPoly::chafee_infante(1.0, 2.0).unwrap(), diff.clone(), jc.clone(), jumps).unwrap();
        let k = m.noise_constants();
        assert_relative_eq!(k.l1, 1.0, epsilon = 1e-14);
        assert!(k.attractor_ok);
        let m = ModelSpec::new(basis(4, 0.1), DriftPoly::chafee_infante(1.0, 0.1).unwrap(), diff, jc, jumps).unwrap();
        assert!(!m.noise_constants().attractor_ok);
    }

    #[test]
    fn g_mean_square_bound_is_algebraic() {
        use rand::{Rng, SeedableRng};
        let diff = DiffusionSpec::new(
            ModeProfile::PowerLaw { amp: 0.7, decay: 1.0, cutoff: None },
            0.3,
            16,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let mut v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = rng.random_range(0.0..10.0) / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x *= r);
            let u = SpectralField::from_coeffs(v);
            assert!(diff.hs_norm_sq(&u) <= diff.c_g() * (1.0 + u.norm_h_sq()));
        }
    }

    #[test]
    fn h_linear_growth_bound() {
        use rand::{Rng, SeedableRng};
        let jumps = JumpMeasureSpec::symmetric(0.5).unwrap();
        let jc = JumpCoeffSpec::new(
            ModeProfile::PowerLaw { amp: 0.8, decay: 1.5, cutoff: None },
            0.4,
            0.6,
            12,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for m in [2, 8, 64, 1 << 20] {
            let m2 = jumps.lambda_moment2(m).unwrap();
            for _ in 0..1000 {
                let u = SpectralField::from_coeffs((0..12).map(|_| rng.random_range(-3.0..3.0)).collect());
                let integral = m2 * jc.response(&u).norm_h_sq();
                assert!(integral <= jc.c_h(&jumps) * (1.0 + u.norm_h_sq()));
            }
        }
    }

    #[test]
    fn regime_warning_for_small_gamma() {
        let mk = |gamma: f64| {
            let b = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), gamma, 1.0, 4).unwrap());
            ModelSpec::deterministic(b, DriftPoly::chafee_infante(1.0, 1.0).unwrap()).unwrap()
        };
        assert!(mk(0.4).regime_warnings().is_empty());
        assert_eq!(mk(0.2).regime_warnings().len(), 1);
        assert_eq!(mk(0.6).regime_warnings().len(), 1);
    }
}
