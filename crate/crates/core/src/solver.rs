//! Time integration in spectral coordinates.
//!
//! One step of the semi-implicit scheme, per mode `j`:
//!
//! ```text
//! a_j⁺ = [a_j − dt·F̂_j(u) + ĝ_j(u)·ΔW_j + Σ_k ĥ_j(u, ξ_k) − dt·(∫_{E_m} ĥ_j(u, ξ) λ(dξ))] / (1 + dt·λ_j)
//! ```
//!
//! The stiff linear part is implicit; drift, noise and jump coefficients are
//! frozen at the left endpoint. Jumps are accumulated per step rather than
//! by jump-adapted stepping.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{ModelSpec, Workspace};
use crate::noise::{PathNoise, WienerDraw};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::param("t_end", format!("need t_end > t0, got [{t0}, {t_end}]")));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= t_end - t0) {
            return Err(Error::param("dt", format!("need 0 < dt <= {}, got {dt}", t_end - t0)));
        }
        let n_steps = ((t_end - t0) / dt).round() as usize;
        Ok(TimeGrid { t0, t_end, dt, n_steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Same interval with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            dt: self.dt / factor as f64,
            n_steps: self.n_steps * factor,
            ..*self
        }
    }
}

/// Identifies the noise of one sample path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathKey {
    pub seed: u64,
    pub path: u64,
}

impl PathKey {
    pub fn new(seed: u64, path: u64) -> Self {
        PathKey { seed, path }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Jump truncation level `m`; `None` switches jumps off.
    pub truncation: Option<usize>,
    /// Level the jumps are drawn at before thinning to `truncation`.
    /// Solves sharing this value (and the key) share their jumps.
    pub jump_sample_level: Option<usize>,
    /// Wiener modes drawn per step; solves sharing it share their increments.
    pub noise_width: Option<usize>,
    /// Keep every `save_every`-th grid state (the last step is always kept).
    pub save_every: usize,
    pub record_jumps: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            truncation: None,
            jump_sample_level: None,
            noise_width: None,
            save_every: 1,
            record_jumps: false,
        }
    }
}

impl SolveOptions {
    pub fn with_truncation(m: usize) -> Self {
        SolveOptions {
            truncation: Some(m),
            ..Default::default()
        }
    }

    pub fn save_every(mut self, k: usize) -> Self {
        self.save_every = k.max(1);
        self
    }
}

/// A jump as seen by the path: state before and after the increment
/// `h(u(t−), ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    pub mark: f64,
    pub pre: SpectralField,
    pub post: SpectralField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub path: u64,
    pub truncation: Option<usize>,
    pub n_modes: usize,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub jumps: Vec<JumpRecord>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn last(&self) -> &SpectralField {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// `sup_t |self(t) − other(t)|` over common saved times (zero-padded).
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }

    /// Delimited text: metadata header, then `t a_1 … a_n` per saved time.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = &self.meta;
        writeln!(
            w,
            "# trajectory seed={} path={} truncation={} n_modes={} scheme={}",
            m.seed,
            m.path,
            m.truncation.map_or("none".to_string(), |v| v.to_string()),
            m.n_modes,
            m.scheme
        )?;
        write!(w, "t")?;
        for j in 1..=m.n_modes {
            write!(w, "\ta_{j}")?;
        }
        writeln!(w)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.17e}")?;
            for a in s.coeffs() {
                write!(w, "\t{a:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub const SCHEME: &str = "semi-implicit-euler";

/// Reusable buffers for stepping one path.
pub(crate) struct Stepper<'a> {
    model: &'a ModelSpec,
    ws: Workspace,
    drift: Vec<f64>,
    g_scale: f64,
    h_scale: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a ModelSpec) -> Self {
        Self::with_scales(model, model.wiener_scale(), model.jump_scale())
    }

    /// Explicit multipliers for `g` and `h` (the skeleton uses 1 for both).
    pub(crate) fn with_scales(model: &'a ModelSpec, g_scale: f64, h_scale: f64) -> Self {
        Stepper {
            model,
            ws: Workspace::new(&model.basis),
            drift: vec![0.0; model.n_modes()],
            g_scale,
            h_scale,
        }
    }

    /// Advance `state` by one step. Noise coefficients are evaluated at
    /// `coeff_state` (the state itself, or a frozen previous Picard iterate).
    /// `mark_sum` is `Σ ξ_k` over the step's jumps and `m1` the signed first
    /// moment of the (effective) jump measure on `E_m`.
    pub(crate) fn advance(
        &mut self,
        state: &mut [f64],
        coeff_state: Option<&[f64]>,
        dt: f64,
        dw: Option<&[f64]>,
        mark_sum: f64,
        m1: f64,
    ) -> bool {
        let model = self.model;
        model.drift_into(state, &mut self.drift, &mut self.ws);
        let lambdas = model.basis.eigenvalues();
        let b = model.diffusion.b();
        let c = model.diffusion.c;
        let w = model.jump.w();
        let (eta0, eta1) = (model.jump.eta0, model.jump.eta1);
        let jump_factor = self.h_scale * (mark_sum - dt * m1);
        let mut finite = true;
        for j in 0..state.len() {
            let a = state[j];
            let ac = coeff_state.map_or(a, |s| s[j]);
            let mut rhs = a - dt * self.drift[j];
            if let Some(dw) = dw {
                rhs += self.g_scale * (b[j] + c * ac) * dw[j];
            }
            if jump_factor != 0.0 {
                rhs += jump_factor * w[j] * (eta0 + eta1 * ac);
            }
            let next = rhs / (1.0 + dt * lambdas[j]);
            finite &= next.is_finite();
            state[j] = next;
        }
        finite
    }
}

/// One step of the scheme from `state` at time `t`. `jumps` are the `(t_k, ξ_k)`
/// in `(t, t+dt]`, already restricted to `E_m`; `m` selects the compensator.
pub fn step_semi_implicit(
    model: &ModelSpec,
    state: &SpectralField,
    t: f64,
    dt: f64,
    wiener: &WienerDraw,
    jumps: &[(f64, f64)],
    m: Option<usize>,
) -> Result<SpectralField> {
    model.basis.check(state)?;
    check_len(model.n_modes(), wiener.increments.len())?;
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let m1 = match m {
        Some(m) => model.effective_jumps().lambda_moment1(m)?,
        None => 0.0,
    };
    let mark_sum: f64 = jumps.iter().map(|(_, xi)| xi).sum();
    let mut next = state.clone();
    let mut stepper = Stepper::new(model);
    if !stepper.advance(next.coeffs_mut(), None, dt, Some(&wiener.increments), mark_sum, m1) {
        return Err(Error::NonFinite { step: 0, time: t + dt });
    }
    Ok(next)
}

/// Build the driving noise for a path under `opts`.
pub fn path_noise(model: &ModelSpec, grid: &TimeGrid, opts: &SolveOptions, key: PathKey) -> Result<PathNoise> {
    let width = opts.noise_width.unwrap_or(model.n_modes()).max(model.n_modes());
    let level = match opts.truncation {
        Some(m) if !model.noise_off() && !model.jump.is_off() => Some(opts.jump_sample_level.unwrap_or(m).max(m)),
        _ => None,
    };
    PathNoise::new(key.seed, key.path, width, &model.effective_jumps(), level, grid.t0, grid.t_end)
}

/// Integrate one path. `frozen`, when given, supplies the state at which the
/// noise coefficients are evaluated at every grid time (Picard iteration);
/// it must have been saved at every step.
pub fn integrate(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    noise: &mut PathNoise,
    frozen: Option<&Trajectory>,
    key: PathKey,
) -> Result<Trajectory> {
    model.basis.check(u0)?;
    if let Some(f) = frozen {
        check_len(grid.n_steps + 1, f.states.len())?;
    }
    let n = model.n_modes();
    let save_every = opts.save_every.max(1);
    let use_wiener = !model.noise_off() && !model.diffusion.is_off();
    let use_jumps = !model.noise_off() && !model.jump.is_off() && opts.truncation.is_some();
    let m1 = match opts.truncation {
        Some(m) if use_jumps => model.effective_jumps().lambda_moment1(m)?,
        _ => 0.0,
    };
    let r_min = opts.truncation.map_or(f64::INFINITY, |m| 1.0 / m as f64);
    let events: Vec<(f64, f64)> = if use_jumps {
        noise.jumps().events.iter().copied().filter(|(_, xi)| xi.abs() >= r_min).collect()
    } else {
        Vec::new()
    };

    let mut stepper = Stepper::new(model);
    let mut dw_buf = vec![0.0; noise.width()];
    let mut state = u0.coeffs().to_vec();
    let capacity = grid.n_steps / save_every + 2;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(grid.t0);
    states.push(u0.clone());
    let mut records = Vec::new();
    let mut cursor = 0usize;

    for k in 0..grid.n_steps {
        let t_next = grid.time(k + 1);
        let dw = if use_wiener {
            noise.next_wiener(grid.dt, &mut dw_buf);
            Some(&dw_buf[..n])
        } else {
            None
        };
        let start = cursor;
        while cursor < events.len() && (events[cursor].0 <= t_next || k + 1 == grid.n_steps) {
            cursor += 1;
        }
        let window = &events[start..cursor];
        let mark_sum: f64 = window.iter().map(|(_, xi)| xi).sum();
        let coeff_state = frozen.map(|f| f.states[k].coeffs());
        if opts.record_jumps && !window.is_empty() {
            let basis_state = coeff_state.unwrap_or(&state);
            let response = model.jump.response(&SpectralField::from_coeffs(basis_state.to_vec()));
            let mut pre = SpectralField::from_coeffs(state.clone());
            for &(tj, xi) in window {
                let post = pre.add(&response.scaled(xi * model.jump_scale()));
                records.push(JumpRecord {
                    time: tj,
                    mark: xi,
                    pre: pre.clone(),
                    post: post.clone(),
                });
                pre = post;
            }
        }
        if !stepper.advance(&mut state, coeff_state, grid.dt, dw, mark_sum, m1) {
            return Err(Error::NonFinite { step: k + 1, time: t_next });
        }
        if (k + 1) % save_every == 0 || k + 1 == grid.n_steps {
            times.push(t_next);
            states.push(SpectralField::from_coeffs(state.clone()));
        }
    }

    Ok(Trajectory {
        times,
        states,
        jumps: records,
        meta: TrajectoryMeta {
            seed: key.seed,
            path: key.path,
            truncation: if use_jumps { opts.truncation } else { None },
            n_modes: n,
            scheme: SCHEME.to_string(),
        },
    })
}

/// Solve one path; a deterministic function of all inputs and `key`.
pub fn solve_path(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    key: PathKey,
) -> Result<Trajectory> {
    let mut noise = path_noise(model, grid, opts, key)?;
    integrate(model, u0, grid, opts, &mut noise, None, key)
}

/// Picard construction: iterate 0 is the constant path `u0`; iterate `k`
/// solves the semilinear equation whose noise coefficients are evaluated
/// along iterate `k − 1`, with the same noise realization for every iterate.
/// Returns iterates `0..=iterations`.
pub fn picard_solve(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    truncation: Option<usize>,
    iterations: usize,
    key: PathKey,
) -> Result<Vec<Trajectory>> {
    if iterations < 1 {
        return Err(Error::param("iterations", "need at least one iterate"));
    }
    model.basis.check(u0)?;
    let opts = SolveOptions {
        truncation,
        save_every: 1,
        ..Default::default()
    };
    let constant = Trajectory {
        times: (0..=grid.n_steps).map(|k| grid.time(k)).collect(),
        states: vec![u0.clone(); grid.n_steps + 1],
        jumps: Vec::new(),
        meta: TrajectoryMeta {
            seed: key.seed,
            path: key.path,
            truncation,
            n_modes: model.n_modes(),
            scheme: "picard-constant".to_string(),
        },
    };
    let mut noise = path_noise(model, grid, &opts, key)?;
    let mut out = vec![constant];
    for _ in 0..iterations {
        noise.rewind();
        let next = integrate(model, u0, grid, &opts, &mut noise, out.last(), key)?;
        out.push(next);
    }
    Ok(out)
}

/// `sup_t |u_{k+1}(t) − u_k(t)|` for consecutive Picard iterates.
pub fn picard_increments(iterates: &[Trajectory]) -> Vec<f64> {
    iterates.windows(2).map(|w| w[1].sup_distance(&w[0])).collect()
}

/// `D(m_i, m_max) = sup_t |u^{m_i}(t) − u^{m_max}(t)|` with jumps coupled by
/// thinning from the finest level. `m_list` must be increasing; its last
/// entry is the reference.
pub fn truncation_study(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    m_list: &[usize],
    key: PathKey,
) -> Result<Vec<f64>> {
    check_increasing("m_list", m_list)?;
    let m_max = *m_list.last().unwrap();
    let solve = |m: usize| {
        let opts = SolveOptions {
            truncation: Some(m),
            jump_sample_level: Some(m_max),
            ..Default::default()
        };
        solve_path(model, u0, grid, &opts, key)
    };
    let reference = solve(m_max)?;
    m_list
        .iter()
        .map(|&m| Ok(solve(m)?.sup_distance(&reference)))
        .collect()
}

/// Distances to the finest Galerkin truncation for each `n` in `n_list`.
/// Coarse solutions are zero-padded; all resolutions share the Wiener
/// increments of the first `n` modes and the same jumps.
pub fn galerkin_study(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    n_list: &[usize],
    truncation: Option<usize>,
    key: PathKey,
) -> Result<Vec<f64>> {
    check_increasing("n_list", n_list)?;
    let n_max = *n_list.last().unwrap();
    let opts = SolveOptions {
        truncation,
        noise_width: Some(n_max),
        ..Default::default()
    };
    let solve = |n: usize| -> Result<Trajectory> {
        let m = model.resized(n)?;
        solve_path(&m, &u0.resized(n), grid, &opts, key)
    };
    let reference = solve(n_max)?;
    n_list
        .iter()
        .map(|&n| Ok(solve(n)?.sup_distance(&reference)))
        .collect()
}

fn check_increasing(name: &'static str, list: &[usize]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::param(name, "must not be empty"));
    }
    if list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param(name, "must be strictly increasing"));
    }
    Ok(())
}

/// Average of a per-path table over `paths` keyed paths. The result does not
/// depend on scheduling: per-path rows are reduced in path order.
pub fn mean_over_paths<F>(paths: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(PathKey) -> Result<Vec<f64>> + Sync,
{
    if paths == 0 {
        return Err(Error::param("paths", "must be positive"));
    }
    let rows: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| f(PathKey::new(seed, p)))
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; rows[0].len()];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= paths as f64);
    Ok(mean)
}

/// Root-mean-square errors against the exact solution at the final time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongOrderReport {
    pub dts: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Least-squares slope of `log rmse` against `log dt`.
    pub slope: f64,
}

/// Strong error of the scheme on the diagonal linear problem
/// `da_j = −λ_j a_j dt + c·a_j dW_j` (exact solution
/// `a_j(T) = a_j(0)·exp(−(λ_j + c²/2)T + c·W_j(T))`). Level `l` uses
/// `coarsest_steps·2^l` steps; Brownian increments are summed from the finest
/// level so every level sees the same path.
pub fn strong_order_study(
    model: &ModelSpec,
    u0: &SpectralField,
    t_end: f64,
    coarsest_steps: usize,
    levels: usize,
    paths: usize,
    seed: u64,
) -> Result<StrongOrderReport> {
    if !model.drift.is_zero() || !model.jump.is_off() || model.diffusion.b().iter().any(|b| *b != 0.0) {
        return Err(Error::param(
            "model",
            "strong-order oracle needs F ≡ 0, no additive noise and no jumps",
        ));
    }
    if levels < 2 || coarsest_steps < 1 || paths < 1 {
        return Err(Error::param("levels", "need >= 2 levels, >= 1 step and >= 1 path"));
    }
    model.basis.check(u0)?;
    let n = model.n_modes();
    let fine_steps = coarsest_steps << (levels - 1);
    let fine_dt = t_end / fine_steps as f64;
    let c = model.diffusion.c * model.wiener_scale();
    let lambdas = model.basis.eigenvalues().to_vec();

    let per_path: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut noise = crate::noise::PathNoise::new(seed, p, n, &model.jumps, None, 0.0, t_end)?;
            let mut fine = vec![vec![0.0; n]; fine_steps];
            for row in fine.iter_mut() {
                if c != 0.0 {
                    noise.next_wiener(fine_dt, row);
                }
            }
            let w_total: Vec<f64> = (0..n).map(|j| fine.iter().map(|r| r[j]).sum()).collect();
            let exact: Vec<f64> = (0..n)
                .map(|j| u0.coeffs()[j] * (-(lambdas[j] + 0.5 * c * c) * t_end + c * w_total[j]).exp())
                .collect();
            let mut stepper = Stepper::new(model);
            let mut sq_err = Vec::with_capacity(levels);
            let mut dw = vec![0.0; n];
            for l in 0..levels {
                let steps = coarsest_steps << l;
                let stride = fine_steps / steps;
                let dt = t_end / steps as f64;
                let mut state = u0.coeffs().to_vec();
                for k in 0..steps {
                    dw.iter_mut().for_each(|v| *v = 0.0);
                    for r in &fine[k * stride..(k + 1) * stride] {
                        for (d, v) in dw.iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    stepper.advance(&mut state, None, dt, Some(&dw), 0.0, 0.0);
                }
                sq_err.push(state.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum());
            }
            Ok(sq_err)
        })
        .collect::<Result<_>>()?;

    let dts: Vec<f64> = (0..levels).map(|l| t_end / (coarsest_steps << l) as f64).collect();
    let rmse: Vec<f64> = (0..levels)
        .map(|l| (per_path.iter().map(|r| r[l]).sum::<f64>() / paths as f64).sqrt())
        .collect();
    let slope = log_log_slope(&dts, &rmse);
    Ok(StrongOrderReport { dts, rmse, slope })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// `(slope, intercept)` of the least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `sup_t E|u_1(t) − u_2(t)|² / |u_{0,1} − u_{0,2}|²` for each initial gap
/// `g·direction`, with both solutions driven by the same noise.
pub fn initial_data_sensitivity(
    model: &ModelSpec,
    u0: &SpectralField,
    direction: &SpectralField,
    gaps: &[f64],
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    model.basis.check(direction)?;
    let dn = direction.norm_h();
    if dn == 0.0 {
        return Err(Error::param("direction", "must be nonzero"));
    }
    let unit = direction.scaled(1.0 / dn);
    gaps.iter()
        .map(|&g| {
            let v0 = u0.add(&unit.scaled(g));
            let mean_sq = mean_over_paths(paths, seed, |key| {
                let a = solve_path(model, u0, grid, opts, key)?;
                let b = solve_path(model, &v0, grid, opts, key)?;
                Ok(a.states.iter().zip(&b.states).map(|(x, y)| x.sub(y).norm_h_sq()).collect())
            })?;
            Ok(mean_sq.into_iter().fold(0.0, f64::max) / (g * g))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionSpec, DriftPoly, JumpCoeffSpec, ModeProfile};
    use crate::noise::JumpMeasureSpec;
    use crate::spectral::{build_basis, DomainSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn ci_model(n: usize, c: f64, eta: (f64, f64)) -> ModelSpec {
        let basis = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.4, 1.0, n).unwrap());
        let diff = DiffusionSpec::new(ModeProfile::PowerLaw { amp: 0.5, decay: 1.0, cutoff: None }, c, n).unwrap();
        let jc = JumpCoeffSpec::new(ModeProfile::PowerLaw { amp: 0.5, decay: 1.0, cutoff: None }, eta.0, eta.1, n)
            .unwrap();
        ModelSpec::new(
            basis,
            DriftPoly::chafee_infante(1.0, 1.0).unwrap(),
            diff,
            jc,
            JumpMeasureSpec::symmetric(0.5).unwrap(),
        )
        .unwrap()
    }

    fn linear_single_mode(c: f64) -> ModelSpec {
        let basis = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.5, 1.0, 1).unwrap());
        let diff = DiffusionSpec::new(ModeProfile::zero(), c, 1).unwrap();
        ModelSpec::new(
            basis,
            DriftPoly::linear(1.0).unwrap(),
            diff,
            JumpCoeffSpec::off(1),
            JumpMeasureSpec::symmetric(0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn time_grid_validation() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.n_steps, 10);
        assert!(TimeGrid::new(1.0, 1.0, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 2.0).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let m = ci_model(8, 0.0, (0.0, 0.0)).without_noise();
        let z = SpectralField::zeros(8);
        let next = step_semi_implicit(&m, &z, 0.0, 0.01, &WienerDraw::zeros(8, 0.01), &[], None).unwrap();
        assert_eq!(next, z);
    }

    #[test]
    fn linear_decay_converges_to_exponential() {
        let m = linear_single_mode(0.0);
        let u0 = SpectralField::from_coeffs(vec![1.0]);
        let lambda = m.basis.eigenvalue(1);
        let exact = (-lambda * 1.0f64).exp();
        let mut errs = Vec::new();
        for steps in [100usize, 200, 400, 800] {
            let grid = TimeGrid::new(0.0, 1.0, 1.0 / steps as f64).unwrap();
            let traj = solve_path(&m, &u0, &grid, &SolveOptions::default(), PathKey::new(0, 0)).unwrap();
            let a = traj.last().coeffs()[0];
            assert!((a - (1.0 + grid.dt * lambda).powi(-(steps as i32))).abs() < 1e-12);
            errs.push((a - exact).abs());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 0.05, "{errs:?}");
        }
    }

    #[test]
    fn single_jump_increment() {
        let n = 4;
        let basis = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.5, 1.0, n).unwrap());
        let jc = JumpCoeffSpec::new(ModeProfile::single(2, 1.0), 0.7, 0.0, n).unwrap();
        let m = ModelSpec::new(
            basis,
            DriftPoly::linear(1.0).unwrap(),
            DiffusionSpec::off(n),
            jc,
            JumpMeasureSpec::one_sided(0.5).unwrap(),
        )
        .unwrap();
        let u = SpectralField::zeros(n);
        let dt = 0.01;
        let next = step_semi_implicit(&m, &u, 0.0, dt, &WienerDraw::zeros(n, dt), &[(0.005, 0.5)], Some(4)).unwrap();
        let m1 = 1.0;
        let expect = (0.7 * 0.5 - dt * m1 * 0.7) / (1.0 + dt * m.basis.eigenvalue(2));
        assert!((next.coeffs()[1] - expect).abs() < 1e-15);
        assert_eq!(next.coeffs()[0], 0.0);
    }

    #[test]
    fn noise_free_path_matches_reference_stepper() {
        let mut m = ci_model(16, 0.0, (0.0, 0.0));
        m.diffusion = DiffusionSpec::new(ModeProfile::zero(), 0.0, 16).unwrap();
        m.jump = JumpCoeffSpec::off(16);
        let u0 = SpectralField::single_mode(16, 1, 1.5);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let traj = solve_path(&m, &u0, &grid, &SolveOptions::with_truncation(8), PathKey::new(1, 0)).unwrap();
        let mut state = u0.clone();
        for k in 0..grid.n_steps {
            state = step_semi_implicit(&m, &state, grid.time(k), grid.dt, &WienerDraw::zeros(16, grid.dt), &[], None)
                .unwrap();
        }
        assert!(traj.last().distance(&state) < 1e-12);
    }

    #[test]
    fn same_key_bit_identical() {
        let m = ci_model(8, 0.2, (0.3, 0.2));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
        let opts = SolveOptions::with_truncation(16).save_every(10);
        let a = solve_path(&m, &u0, &grid, &opts, PathKey::new(5, 3)).unwrap();
        let b = solve_path(&m, &u0, &grid, &opts, PathKey::new(5, 3)).unwrap();
        assert_eq!(a, b);
        let c = solve_path(&m, &u0, &grid, &opts, PathKey::new(5, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn jump_records_carry_h_of_left_limit() {
        let m = ci_model(8, 0.0, (0.5, 0.4));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 2.0, 1e-2).unwrap();
        let opts = SolveOptions {
            truncation: Some(32),
            record_jumps: true,
            ..Default::default()
        };
        let traj = solve_path(&m, &u0, &grid, &opts, PathKey::new(2, 0)).unwrap();
        let noise = path_noise(&m, &grid, &opts, PathKey::new(2, 0)).unwrap();
        let sampled = noise.jumps().thin(32);
        assert!(!traj.jumps.is_empty());
        assert_eq!(traj.jumps.len(), sampled.len());
        for (rec, (t, xi)) in traj.jumps.iter().zip(&sampled.events) {
            assert_eq!(rec.time, *t);
            assert_eq!(rec.mark, *xi);
            // Coefficients are frozen at the step's left endpoint.
            let k = ((rec.time - grid.t0) / grid.dt).ceil() as usize - 1;
            let left = &traj.states[k];
            let expect = m.h_apply(rec.time, left, *xi).unwrap();
            assert!(rec.post.sub(&rec.pre).distance(&expect) < 1e-14);
        }
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let m = ci_model(8, 0.0, (0.0, 0.0)).without_noise();
        let u0 = SpectralField::single_mode(8, 1, 500.0);
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        match solve_path(&m, &u0, &grid, &SolveOptions::default(), PathKey::new(0, 0)) {
            Err(Error::NonFinite { step, .. }) => assert!(step >= 1),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn picard_additive_closes_after_one_iterate() {
        let m = ci_model(8, 0.0, (0.4, 0.0));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let it = picard_solve(&m, &u0, &grid, Some(16), 3, PathKey::new(7, 0)).unwrap();
        assert_eq!(it.len(), 4);
        assert!(it[0].states.iter().all(|s| s == &u0));
        assert!(it[2].sup_distance(&it[1]) < 1e-12);
        // Iterate 1 of an additive model is the actual solution path.
        let direct = solve_path(&m, &u0, &grid, &SolveOptions::with_truncation(16), PathKey::new(7, 0)).unwrap();
        assert!(direct.sup_distance(&it[1]) < 1e-12);
        let one = picard_solve(&m, &u0, &grid, Some(16), 1, PathKey::new(7, 0)).unwrap();
        assert_eq!(one.len(), 2);
    }

    #[test]
    fn picard_multiplicative_contracts() {
        let m = ci_model(8, 0.5, (0.2, 0.5));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let inc = mean_over_paths(10, 11, |key| {
            Ok(picard_increments(&picard_solve(&m, &u0, &grid, Some(16), 6, key)?))
        })
        .unwrap();
        for k in 2..5 {
            assert!(inc[k] * 2.0 <= inc[k - 1], "{inc:?}");
        }
    }

    #[test]
    fn truncation_study_edge_cases() {
        let m = ci_model(8, 0.0, (0.0, 0.0));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let d = truncation_study(&m, &u0, &grid, &[4, 8, 16], PathKey::new(1, 1)).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 0.0]);
        let m = ci_model(8, 0.0, (0.5, 0.0));
        let d = truncation_study(&m, &u0, &grid, &[4, 8, 16], PathKey::new(1, 1)).unwrap();
        assert_eq!(d[2], 0.0);
        assert!(truncation_study(&m, &u0, &grid, &[8, 4], PathKey::new(1, 1)).is_err());
    }

    #[test]
    fn galerkin_decoupled_linear_modes() {
        let n = 16;
        let basis = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.4, 1.0, n).unwrap());
        let diff = DiffusionSpec::new(ModeProfile::PowerLaw { amp: 0.5, decay: 1.0, cutoff: Some(4) }, 0.0, n).unwrap();
        let m = ModelSpec::new(
            basis,
            DriftPoly::linear(1.0).unwrap(),
            diff,
            JumpCoeffSpec::off(n),
            JumpMeasureSpec::symmetric(0.5).unwrap(),
        )
        .unwrap();
        let u0 = SpectralField::from_coeffs(vec![1.0, 0.5, -0.25, 0.1]).resized(4);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let m4 = m.resized(4).unwrap();
        let d = galerkin_study(&m4, &u0, &grid, &[4, 8, 16], None, PathKey::new(3, 0)).unwrap();
        assert!(d.iter().all(|v| *v == 0.0), "{d:?}");
    }

    #[test]
    fn discrete_energy_inequality_without_noise() {
        use rand::{Rng, SeedableRng};
        let m = ci_model(16, 0.0, (0.0, 0.0)).without_noise();
        let k2 = m.drift.k2;
        let area = m.basis.domain().measure();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let dt = 1e-3;
        for _ in 0..200 {
            let u = SpectralField::from_coeffs((0..16).map(|j| rng.random_range(-2.0..2.0) / (1 + j) as f64).collect());
            let next = step_semi_implicit(&m, &u, 0.0, dt, &WienerDraw::zeros(16, dt), &[], None).unwrap();
            assert!(next.norm_h_sq() <= u.norm_h_sq() + 2.0 * dt * k2 * area + 1e-12);
        }
    }

    #[test]
    fn strong_order_deterministic_is_one() {
        let m = linear_single_mode(0.0);
        let r = strong_order_study(&m, &SpectralField::from_coeffs(vec![1.0]), 1.0, 16, 4, 1, 0).unwrap();
        assert!((r.slope - 1.0).abs() < 0.15, "{r:?}");
        assert!(strong_order_study(&ci_model(4, 0.0, (0.0, 0.0)), &SpectralField::zeros(4), 1.0, 16, 4, 1, 0).is_err());
    }

    #[test]
    fn trajectory_export_rows() {
        let m = ci_model(3, 0.1, (0.0, 0.0));
        let grid = TimeGrid::new(0.0, 0.1, 0.01).unwrap();
        let t = solve_path(&m, &SpectralField::zeros(3), &grid, &SolveOptions::default(), PathKey::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + 11);
        assert!(lines[0].starts_with("# trajectory"));
        assert_eq!(lines[1], "t\ta_1\ta_2\ta_3");
    }
}
