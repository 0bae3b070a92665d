//! Driving noise: truncated cylindrical Wiener increments and the Poisson
//! random measure with σ-finite power-law intensity `λ(dξ) = |ξ|^{−1−a} dξ`
//! on `E = {0 < |ξ| ≤ 1}`, exhausted by the annuli `E_m = {1/m ≤ |ξ| ≤ 1}`.
//!
//! Every random quantity comes from a ChaCha stream keyed by
//! `(seed, path, purpose)`, so a path's full driving noise is a pure function
//! of its key. Jumps are drawn once at the finest truncation level and thinned
//! to coarser levels, which makes solutions at different levels share noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::JumpCoeffSpec;
use crate::spectral::SpectralField;

/// Which half-lines of the mark space carry intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    /// `λ` on both signs; all odd moments vanish.
    #[default]
    Symmetric,
    /// `λ⁺` on `(0, 1]` only. Used to exercise nonzero compensators.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasureSpec {
    /// Activity index `a ∈ (0, 1)`.
    pub activity: f64,
    #[serde(default)]
    pub sidedness: Sidedness,
    /// Multiplier on the intensity (the `ε^{-1}` of small-noise scaling).
    #[serde(default = "one")]
    pub intensity_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl JumpMeasureSpec {
    pub fn symmetric(activity: f64) -> Result<Self> {
        let s = JumpMeasureSpec {
            activity,
            sidedness: Sidedness::Symmetric,
            intensity_scale: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn one_sided(activity: f64) -> Result<Self> {
        let s = JumpMeasureSpec {
            activity,
            sidedness: Sidedness::Positive,
            intensity_scale: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.activity > 0.0 && self.activity < 1.0) {
            return Err(Error::param(
                "activity",
                format!("must lie in (0, 1), got {}", self.activity),
            ));
        }
        if !(self.intensity_scale.is_finite() && self.intensity_scale > 0.0) {
            return Err(Error::param("intensity_scale", "must be positive and finite"));
        }
        Ok(())
    }

    fn sides(&self) -> f64 {
        match self.sidedness {
            Sidedness::Symmetric => 2.0,
            Sidedness::Positive => 1.0,
        }
    }

    /// `λ` of `{r_lo ≤ ξ ≤ r_hi}` on one side, `0 < r_lo ≤ r_hi ≤ 1`.
    pub fn side_mass(&self, r_lo: f64, r_hi: f64) -> f64 {
        let a = self.activity;
        self.intensity_scale * (r_lo.powf(-a) - r_hi.powf(-a)) / a
    }

    /// `∫ ξ λ(dξ)` over `{r_lo ≤ ξ ≤ r_hi}` on the positive side.
    pub fn side_moment1(&self, r_lo: f64, r_hi: f64) -> f64 {
        let b = 1.0 - self.activity;
        self.intensity_scale * (r_hi.powf(b) - r_lo.powf(b)) / b
    }

    /// `∫ ξ² λ(dξ)` over `{r_lo ≤ ξ ≤ r_hi}` on one side.
    pub fn side_moment2(&self, r_lo: f64, r_hi: f64) -> f64 {
        let b = 2.0 - self.activity;
        self.intensity_scale * (r_hi.powf(b) - r_lo.powf(b)) / b
    }

    fn check_level(m: usize) -> Result<f64> {
        if m < 1 {
            return Err(Error::param("m", "truncation level must be >= 1"));
        }
        Ok(m as f64)
    }

    /// `Λ_m = λ(E_m)`.
    pub fn lambda_mass(&self, m: usize) -> Result<f64> {
        let m = Self::check_level(m)?;
        Ok(self.sides() * self.side_mass(1.0 / m, 1.0))
    }

    /// `M2_m = ∫_{E_m} ξ² λ(dξ)`.
    pub fn lambda_moment2(&self, m: usize) -> Result<f64> {
        let m = Self::check_level(m)?;
        Ok(self.sides() * self.side_moment2(1.0 / m, 1.0))
    }

    /// Signed first moment `∫_{E_m} ξ λ(dξ)`; zero for symmetric intensity.
    pub fn lambda_moment1(&self, m: usize) -> Result<f64> {
        let m = Self::check_level(m)?;
        Ok(match self.sidedness {
            Sidedness::Symmetric => 0.0,
            Sidedness::Positive => self.side_moment1(1.0 / m, 1.0),
        })
    }

    /// `M2_∞ = sup_m M2_m`.
    pub fn moment2_limit(&self) -> f64 {
        self.sides() * self.intensity_scale / (2.0 - self.activity)
    }

    /// Inverse-CDF draw of `|ξ|` restricted to `E_m` from a uniform `v ∈ [0,1)`.
    pub fn radius_from_uniform(&self, m: usize, v: f64) -> f64 {
        let a = self.activity;
        let ma = (m as f64).powf(a);
        (ma - v * (ma - 1.0)).powf(-1.0 / a)
    }
}

/// Jump epochs and marks in `(t0, t1]` at truncation level `level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpBatch {
    pub t0: f64,
    pub t1: f64,
    pub level: usize,
    /// `(t_k, ξ_k)`, strictly increasing in time.
    pub events: Vec<(f64, f64)>,
}

impl JumpBatch {
    pub fn empty(t0: f64, t1: f64, level: usize) -> Self {
        JumpBatch {
            t0,
            t1,
            level,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The sub-batch with marks in `E_m`, `m ≤ level`.
    pub fn thin(&self, m: usize) -> JumpBatch {
        assert!(m <= self.level, "cannot refine a batch from level {} to {m}", self.level);
        let r = 1.0 / m as f64;
        JumpBatch {
            t0: self.t0,
            t1: self.t1,
            level: m,
            events: self.events.iter().copied().filter(|(_, xi)| xi.abs() >= r).collect(),
        }
    }

    /// One `t<TAB>ξ` row per jump after a `#`-prefixed header.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# jumps t0={} t1={} level={}", self.t0, self.t1, self.level)?;
        writeln!(w, "t\txi")?;
        for (t, xi) in &self.events {
            writeln!(w, "{t:.17e}\t{xi:.17e}")?;
        }
        Ok(())
    }
}

/// Per-mode Gaussian increments over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerDraw {
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl WienerDraw {
    pub fn zeros(n: usize, dt: f64) -> Self {
        WienerDraw {
            dt,
            increments: vec![0.0; n],
        }
    }
}

pub fn sample_jumps<R: Rng + ?Sized>(
    spec: &JumpMeasureSpec,
    m: usize,
    t0: f64,
    t1: f64,
    rng: &mut R,
) -> Result<JumpBatch> {
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(Error::param("window", format!("need t1 > t0, got ({t0}, {t1})")));
    }
    let mean = (t1 - t0) * spec.lambda_mass(m)?;
    if mean <= 0.0 {
        return Ok(JumpBatch::empty(t0, t1, m));
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::param("window", format!("Poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let mut events: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = t0 + (t1 - t0) * (1.0 - rng.random::<f64>());
            let r = spec.radius_from_uniform(m, rng.random::<f64>());
            let xi = match spec.sidedness {
                Sidedness::Symmetric if rng.random::<bool>() => -r,
                _ => r,
            };
            (t, xi)
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(JumpBatch {
        t0,
        t1,
        level: m,
        events,
    })
}

pub fn sample_wiener<R: Rng + ?Sized>(n_modes: usize, dt: f64, rng: &mut R) -> Result<WienerDraw> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let mut increments = vec![0.0; n_modes];
    fill_wiener(&mut increments, dt.sqrt(), rng);
    Ok(WienerDraw { dt, increments })
}

fn fill_wiener<R: Rng + ?Sized>(out: &mut [f64], sqrt_dt: f64, rng: &mut R) {
    for w in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w = sqrt_dt * z;
    }
}

/// `∫_{E_m} h(u, ξ) λ(dξ) = M1_m·(η0·w + η1·(w ⊙ u))`.
pub fn compensator_integral(
    coeffs: &JumpCoeffSpec,
    spec: &JumpMeasureSpec,
    m: usize,
    field: &SpectralField,
) -> Result<SpectralField> {
    let m1 = spec.lambda_moment1(m)?;
    Ok(coeffs.response(field).scaled(m1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Wiener = 1,
    Jumps = 2,
    Initial = 3,
    Aux = 4,
}

/// Independent stream for `(seed, path, purpose)`.
pub fn stream(seed: u64, path: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(b"fspdelab");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}

/// The complete driving noise of one sample path: a Wiener stream of fixed
/// width and the jump batch at the finest level used by any consumer.
#[derive(Debug, Clone)]
pub struct PathNoise {
    seed: u64,
    path: u64,
    width: usize,
    wiener: ChaCha8Rng,
    jumps: JumpBatch,
}

impl PathNoise {
    /// `width` is the number of Wiener modes drawn per step; consumers with
    /// fewer modes use a prefix, so bases of different size share noise.
    /// `jump_level = None` disables jumps.
    pub fn new(
        seed: u64,
        path: u64,
        width: usize,
        jump_spec: &JumpMeasureSpec,
        jump_level: Option<usize>,
        t0: f64,
        t1: f64,
    ) -> Result<Self> {
        let jumps = match jump_level {
            Some(m) => sample_jumps(jump_spec, m, t0, t1, &mut stream(seed, path, Purpose::Jumps))?,
            None => JumpBatch::empty(t0, t1, 1),
        };
        Ok(PathNoise {
            seed,
            path,
            width,
            wiener: stream(seed, path, Purpose::Wiener),
            jumps,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn jumps(&self) -> &JumpBatch {
        &self.jumps
    }

    /// Rewind the Wiener stream to the first step.
    pub fn rewind(&mut self) {
        self.wiener = stream(self.seed, self.path, Purpose::Wiener);
    }

    /// Draw the next step's increments into `out` (`out.len() == width`).
    pub fn next_wiener(&mut self, dt: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        fill_wiener(out, dt.sqrt(), &mut self.wiener);
    }
}
