#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use fspde::model::{DiffusionSpec, DriftPoly, JumpCoeffSpec, ModeProfile, ModelSpec};
use fspde::noise::JumpMeasureSpec;
use fspde::spectral::{build_basis, DomainSpec, EigenBasis};

pub fn basis(n: usize, gamma: f64, delta: f64) -> Arc<EigenBasis> {
    Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), gamma, delta, n).unwrap())
}

fn decaying(amp: f64) -> ModeProfile {
    ModeProfile::PowerLaw {
        amp,
        decay: 1.0,
        cutoff: None,
    }
}

/// Chafee–Infante drift with decaying additive-plus-multiplicative forcing.
pub fn chafee_infante(n: usize, c: f64, eta: (f64, f64)) -> ModelSpec {
    ModelSpec::new(
        basis(n, 0.4, 1.0),
        DriftPoly::chafee_infante(1.0, 1.0).unwrap(),
        DiffusionSpec::new(decaying(0.5), c, n).unwrap(),
        JumpCoeffSpec::new(decaying(0.5), eta.0, eta.1, n).unwrap(),
        JumpMeasureSpec::symmetric(0.5).unwrap(),
    )
    .unwrap()
}

/// `F ≡ 0` with multiplicative Wiener and jump noise.
pub fn linear(n: usize, delta: f64, c: f64, eta1: f64) -> ModelSpec {
    ModelSpec::new(
        basis(n, 0.5, delta),
        DriftPoly::linear(delta).unwrap(),
        DiffusionSpec::new(ModeProfile::zero(), c, n).unwrap(),
        JumpCoeffSpec::new(ModeProfile::PowerLaw { amp: 1.0, decay: 0.0, cutoff: None }, 0.0, eta1, n).unwrap(),
        JumpMeasureSpec::symmetric(0.5).unwrap(),
    )
    .unwrap()
}

/// Single-mode Ornstein–Uhlenbeck process with `λ_1 = 2`, `b_1 = 1`.
pub fn ou() -> ModelSpec {
    ModelSpec::new(
        basis(1, 0.5, 1.0),
        DriftPoly::linear(1.0).unwrap(),
        DiffusionSpec::new(ModeProfile::Explicit { values: vec![1.0] }, 0.0, 1).unwrap(),
        JumpCoeffSpec::off(1),
        JumpMeasureSpec::symmetric(0.5).unwrap(),
    )
    .unwrap()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Upper `0.999` quantile of χ² with `k` degrees of freedom (Wilson–Hilferty).
pub fn chi_square_999(k: usize) -> f64 {
    let k = k as f64;
    let z = 3.090_232_306_167_813;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}
