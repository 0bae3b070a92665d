//! Monte Carlo estimates of long-time behaviour: moment bounds, the absorbing
//! ball, coupled contraction, time and ensemble averages, occupation measures.
//!
//! All tolerances are three standard errors. Paths run in parallel; per-path
//! results are reduced in path order so estimates do not depend on scheduling.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{stream, Purpose};
use crate::solver::{linear_fit, solve_path, PathKey, SolveOptions, TimeGrid, Trajectory};
use crate::spectral::{c_constant, EigenBasis, SpectralField};

pub const SE_FACTOR: f64 = 3.0;

/// Scalar functionals of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    Unit,
    /// `|u|²`
    HNormSq,
    /// `|u|`
    HNorm,
    /// `‖u‖`
    VNorm,
    /// `‖u‖²`
    VNormSq,
    /// Coefficient of mode `j` (1-based).
    Mode(usize),
}

impl Observable {
    pub fn eval(&self, basis: &EigenBasis, u: &SpectralField) -> f64 {
        match *self {
            Observable::Unit => 1.0,
            Observable::HNormSq => u.norm_h_sq(),
            Observable::HNorm => u.norm_h(),
            Observable::VNorm => basis.norm_v_sq_unchecked(u.coeffs()).sqrt(),
            Observable::VNormSq => basis.norm_v_sq_unchecked(u.coeffs()),
            Observable::Mode(j) => u.coeffs().get(j.wrapping_sub(1)).copied().unwrap_or(0.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::Unit => "one".into(),
            Observable::HNormSq => "h_norm_sq".into(),
            Observable::HNorm => "h_norm".into(),
            Observable::VNorm => "v_norm".into(),
            Observable::VNormSq => "v_norm_sq".into(),
            Observable::Mode(j) => format!("a_{j}"),
        }
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `|a − b| ≤ 3·√(se_a² + se_b²)`.
    pub fn agrees_with(&self, other: &Estimate) -> bool {
        (self.mean - other.mean).abs() <= SE_FACTOR * self.se.hypot(other.se)
    }
}

/// Mergeable running sums of a scalar sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    /// Sample standard deviation over `√count`.
    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            se: (self.variance() / self.count as f64).sqrt(),
        }
    }
}

/// Per-time ensemble estimates of `E|u|²`, `E‖u‖²` and `E a_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub paths: usize,
    pub aborted: usize,
    pub h_sq: Vec<Estimate>,
    pub v_sq: Vec<Estimate>,
    pub mode1: Vec<Estimate>,
}

impl EnsembleStats {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# ensemble paths={} aborted={}", self.paths, self.aborted)?;
        writeln!(w, "t\th_sq\th_sq_se\tv_sq\tv_sq_se\ta_1\ta_1_se")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e}\t{:.10e}\t{:.10e}\t{:.10e}\t{:.10e}\t{:.10e}\t{:.10e}",
                self.times[i],
                self.h_sq[i].mean,
                self.h_sq[i].se,
                self.v_sq[i].mean,
                self.v_sq[i].se,
                self.mode1[i].mean,
                self.mode1[i].se
            )?;
        }
        Ok(())
    }
}

/// Run `f` on `paths` keyed paths (path indices `offset..offset+paths`).
/// Overflowing paths are dropped and counted; more than 0.1% aborts fail the
/// whole run. Results are in path order.
pub fn run_paths<T, F>(paths: usize, seed: u64, offset: u64, f: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(PathKey) -> Result<T> + Sync,
{
    if paths == 0 {
        return Err(Error::param("paths", "must be positive"));
    }
    let results: Vec<Result<T>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| f(PathKey::new(seed, offset + p)))
        .collect();
    let mut ok = Vec::with_capacity(paths);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(Error::NonFinite { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    let limit = paths / 1000;
    if failed > limit {
        return Err(Error::TooManyAborts {
            failed,
            total: paths,
            limit,
        });
    }
    Ok((ok, failed))
}

/// Ensemble moments at the saved times of `grid` under `opts`.
pub fn mc_moment(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<EnsembleStats> {
    if paths < 100 {
        return Err(Error::param("paths", format!("need at least 100, got {paths}")));
    }
    mc_moment_unchecked(model, u0, grid, opts, paths, seed, 0)
}

fn mc_moment_unchecked(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
    offset: u64,
) -> Result<EnsembleStats> {
    let basis = &model.basis;
    let (rows, aborted) = run_paths(paths, seed, offset, |key| {
        let traj = solve_path(model, u0, grid, opts, key)?;
        Ok((
            traj.times,
            traj.states
                .iter()
                .map(|s| [s.norm_h_sq(), basis.norm_v_sq_unchecked(s.coeffs()), s.coeffs()[0]])
                .collect::<Vec<_>>(),
        ))
    })?;
    let times = rows[0].0.clone();
    let mut acc = vec![[Moments::default(); 3]; times.len()];
    for (_, obs) in &rows {
        for (a, o) in acc.iter_mut().zip(obs) {
            for k in 0..3 {
                a[k].push(o[k]);
            }
        }
    }
    Ok(EnsembleStats {
        times,
        paths: rows.len(),
        aborted,
        h_sq: acc.iter().map(|a| a[0].estimate()).collect(),
        v_sq: acc.iter().map(|a| a[1].estimate()).collect(),
        mode1: acc.iter().map(|a| a[2].estimate()).collect(),
    })
}

/// A fixed initial field with `|u0| = norm`, drawn from the initial-data
/// stream of `seed` with decaying mode weights.
pub fn random_initial(n_modes: usize, norm: f64, seed: u64) -> SpectralField {
    let mut rng = stream(seed, 0, Purpose::Initial);
    let raw: Vec<f64> = (1..=n_modes)
        .map(|j| rng.sample::<f64, _>(StandardNormal) / j as f64)
        .collect();
    let field = SpectralField::from_coeffs(raw);
    let r = field.norm_h();
    if r == 0.0 || norm == 0.0 {
        return SpectralField::zeros(n_modes);
    }
    field.scaled(norm / r)
}

/// One row per saved time: estimate, standard error and the bound it is held to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub bound: Vec<f64>,
}

impl BoundCurve {
    /// `bound + 3·SE − estimate` per time.
    pub fn margins(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| self.bound[i] + SE_FACTOR * self.se[i] - self.estimate[i])
            .collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.margins().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// First time the estimate exceeds the bound by more than 3 SE.
    pub fn first_violation(&self) -> Option<(f64, f64)> {
        self.margins()
            .into_iter()
            .enumerate()
            .find(|(_, m)| *m < 0.0)
            .map(|(i, m)| (self.times[i], m))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W, label: &str) -> Result<()> {
        writeln!(w, "# {label}")?;
        writeln!(w, "t\testimate\tse\tbound")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e}\t{:.10e}\t{:.10e}\t{:.10e}",
                self.times[i], self.estimate[i], self.se[i], self.bound[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `(2k2|O| + β1 + β2)/δ`
    pub constant: f64,
    pub curve: BoundCurve,
    /// Time-averaged `(η/t)·E∫₀ᵗ‖u‖² ≤ E|u0|²/T0 + 2k2|O| + β1 + β2` for saved
    /// `t > T0`, with `η = min(C(d,γ), δ)`. Informational.
    pub time_average: BoundCurve,
    pub t0_average: f64,
    pub stats: EnsembleStats,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.curve.first_violation().is_none()
    }
}

/// `E|u(t)|² ≤ e^{−δt}|u0|² + (2k2|O| + β1 + β2)/δ` at every saved time.
/// The returned report is `Err(ConditionViolated)` only through
/// [`EnergyReport::passed`]; the run itself succeeds.
pub fn check_energy_bound(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<EnergyReport> {
    let delta = model.delta();
    let nc = model.noise_constants();
    let area = model.basis.domain().measure();
    let k2 = model.drift.k2;
    let stats = mc_moment(model, u0, grid, opts, paths, seed)?;
    let u0_sq = u0.norm_h_sq();
    let constant = (2.0 * k2 * area + nc.beta1 + nc.beta2) / delta;
    let curve = BoundCurve {
        times: stats.times.clone(),
        estimate: stats.h_sq.iter().map(|e| e.mean).collect(),
        se: stats.h_sq.iter().map(|e| e.se).collect(),
        bound: stats
            .times
            .iter()
            .map(|t| (-delta * (t - grid.t0)).exp() * u0_sq + constant)
            .collect(),
    };

    // Trapezoidal running integral of E‖u‖² over saved times.
    let t0_average = 1.0;
    let d = model.basis.domain().dimension;
    let eta = c_constant(d, model.basis.gamma())?.min(delta);
    let rhs = u0_sq / t0_average + 2.0 * k2 * area + nc.beta1 + nc.beta2;
    let mut integral = 0.0;
    let mut integral_se = 0.0;
    let mut time_average = BoundCurve {
        times: vec![],
        estimate: vec![],
        se: vec![],
        bound: vec![],
    };
    for i in 1..stats.times.len() {
        let h = stats.times[i] - stats.times[i - 1];
        integral += 0.5 * h * (stats.v_sq[i].mean + stats.v_sq[i - 1].mean);
        integral_se += 0.5 * h * (stats.v_sq[i].se + stats.v_sq[i - 1].se);
        let t = stats.times[i] - grid.t0;
        if t > t0_average {
            time_average.times.push(stats.times[i]);
            time_average.estimate.push(eta * integral / t);
            time_average.se.push(eta * integral_se / t);
            time_average.bound.push(rhs);
        }
    }

    Ok(EnergyReport {
        constant,
        curve,
        time_average,
        t0_average,
        stats,
    })
}

/// `R = (2k2|O| + L1)/(2δ − L1) + 1`.
pub fn absorbing_radius(model: &ModelSpec) -> Result<f64> {
    let nc = model.noise_constants();
    radius_from(model.drift.k2, model.basis.domain().measure(), nc.l1, model.delta())
}

/// The absorbing radius from its ingredients.
pub fn radius_from(k2: f64, area: f64, l1: f64, delta: f64) -> Result<f64> {
    let gap = 2.0 * delta - l1;
    if !(gap > 0.0) {
        return Err(Error::ConditionViolated(format!(
            "absorbing ball needs 2δ > L1, got 2δ = {} and L1 = {l1}",
            2.0 * delta
        )));
    }
    Ok((2.0 * k2 * area + l1) / gap + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingEntry {
    pub u0_norm_sq: f64,
    pub curve: BoundCurve,
    /// First saved time with `E|u|² ≤ R + 3·SE`.
    pub entry_time: Option<f64>,
    pub final_estimate: Estimate,
    pub inside_at_end: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingReport {
    pub radius: f64,
    pub entries: Vec<AbsorbingEntry>,
}

impl AbsorbingReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.inside_at_end)
    }
}

/// Ensembles from each `u0` up to `grid.t_end`; checks
/// `E|u(T_long)|² ≤ R + 3·SE` and reports entry times.
pub fn absorbing_test(
    model: &ModelSpec,
    u0_list: &[SpectralField],
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<AbsorbingReport> {
    if u0_list.is_empty() {
        return Err(Error::EmptySample);
    }
    let radius = absorbing_radius(model)?;
    let mut entries = Vec::with_capacity(u0_list.len());
    for u0 in u0_list {
        let stats = mc_moment(model, u0, grid, opts, paths, seed)?;
        let curve = BoundCurve {
            times: stats.times.clone(),
            estimate: stats.h_sq.iter().map(|e| e.mean).collect(),
            se: stats.h_sq.iter().map(|e| e.se).collect(),
            bound: vec![radius; stats.times.len()],
        };
        let margins = curve.margins();
        let entry_time = margins.iter().position(|m| *m >= 0.0).map(|i| curve.times[i]);
        let final_estimate = *stats.h_sq.last().unwrap();
        entries.push(AbsorbingEntry {
            u0_norm_sq: u0.norm_h_sq(),
            inside_at_end: *margins.last().unwrap() >= 0.0,
            curve,
            entry_time,
            final_estimate,
        });
    }
    Ok(AbsorbingReport { radius, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `c = 2δ − (2k4 + α1 + α2)`
    pub rate: f64,
    /// Least-squares decay exponent of `E|u − v|²`; `None` if the difference vanishes.
    pub fitted_rate: Option<f64>,
    pub curve: BoundCurve,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.curve.first_violation().is_none()
    }
}

fn require_ergodic(model: &ModelSpec) -> Result<()> {
    let nc = model.noise_constants();
    if nc.ergodic_ok {
        Ok(())
    } else {
        Err(Error::ConditionViolated(format!(
            "needs 2δ − (2k4 + α1 + α2) > 0, got {:.6} (δ = {}, k4 = {}, α1 = {}, α2 = {})",
            nc.contraction_rate,
            model.delta(),
            model.drift.k4,
            nc.alpha1,
            nc.alpha2
        )))
    }
}

/// Two solutions driven by the same noise:
/// `E|u − v|²(t) ≤ |u0 − v0|²·e^{−ct}` with `c = 2δ − (2k4 + α1 + α2)`.
pub fn contraction_test(
    model: &ModelSpec,
    u0: &SpectralField,
    v0: &SpectralField,
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<ContractionReport> {
    require_ergodic(model)?;
    let rate = model.noise_constants().contraction_rate;
    let (rows, _) = run_paths(paths, seed, 0, |key| {
        let a = solve_path(model, u0, grid, opts, key)?;
        let b = solve_path(model, v0, grid, opts, key)?;
        Ok((a.times.clone(), differences(&a, &b)))
    })?;
    let times = rows[0].0.clone();
    let mut acc = vec![Moments::default(); times.len()];
    for (_, d) in &rows {
        for (a, v) in acc.iter_mut().zip(d) {
            a.push(*v);
        }
    }
    let z0 = u0.sub(v0).norm_h_sq();
    let est: Vec<Estimate> = acc.iter().map(|m| m.estimate()).collect();
    let curve = BoundCurve {
        bound: times.iter().map(|t| z0 * (-rate * (t - grid.t0)).exp()).collect(),
        estimate: est.iter().map(|e| e.mean).collect(),
        se: est.iter().map(|e| e.se).collect(),
        times,
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .times
        .iter()
        .zip(&curve.estimate)
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(t, e)| (*t, e.ln()))
        .unzip();
    let fitted_rate = if xs.len() >= 2 { Some(-linear_fit(&xs, &ys).0) } else { None };
    Ok(ContractionReport {
        rate,
        fitted_rate,
        curve,
    })
}

fn differences(a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    a.states.iter().zip(&b.states).map(|(x, y)| x.sub(y).norm_h_sq()).collect()
}

/// Time average of an observable over one path, with a batch-means
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    pub estimate: Estimate,
    pub samples: usize,
    pub batches: usize,
}

pub const BATCHES: usize = 32;

/// `(1/(T − burn_in))·∫ φ(u(t)) dt` over saved states with `t > burn_in`.
pub fn ergodic_average(
    model: &ModelSpec,
    u0: &SpectralField,
    observable: Observable,
    grid: &TimeGrid,
    burn_in: f64,
    opts: &SolveOptions,
    seed: u64,
) -> Result<TimeAverage> {
    require_ergodic(model)?;
    let values = sample_after_burn_in(model, u0, grid, burn_in, opts, PathKey::new(seed, 0), |u| {
        vec![observable.eval(&model.basis, u)]
    })?;
    let xs: Vec<f64> = values.into_iter().map(|v| v[0]).collect();
    batch_means(&xs, BATCHES)
}

fn sample_after_burn_in<F>(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    burn_in: f64,
    opts: &SolveOptions,
    key: PathKey,
    f: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&SpectralField) -> Vec<f64>,
{
    if !(burn_in >= 0.0 && grid.t0 + burn_in < grid.t_end) {
        return Err(Error::param("burn_in", "must lie in [0, T_long)"));
    }
    let traj = solve_path(model, u0, grid, opts, key)?;
    let out: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t > grid.t0 + burn_in)
        .map(|(_, s)| f(s))
        .collect();
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

/// Mean with the standard error of `batches` contiguous batch means.
pub fn batch_means(xs: &[f64], batches: usize) -> Result<TimeAverage> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let b = batches.min(xs.len()).max(1);
    let size = xs.len() / b;
    let mut m = Moments::default();
    for k in 0..b {
        let chunk = &xs[k * size..(k + 1) * size];
        m.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(TimeAverage {
        estimate: Estimate {
            mean,
            se: m.estimate().se,
        },
        samples: xs.len(),
        batches: b,
    })
}

/// `E φ(u(t_snapshot))` from each `u0`. Ensembles for different `u0` use
/// disjoint path indices, hence independent noise.
pub fn ensemble_average(
    model: &ModelSpec,
    u0_list: &[SpectralField],
    observable: Observable,
    grid: &TimeGrid,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    require_ergodic(model)?;
    let snapshot_opts = SolveOptions {
        save_every: grid.n_steps.max(1),
        ..*opts
    };
    u0_list
        .iter()
        .enumerate()
        .map(|(i, u0)| {
            let (vals, _) = run_paths(paths, seed, (i * paths) as u64, |key| {
                let traj = solve_path(model, u0, grid, &snapshot_opts, key)?;
                Ok(observable.eval(&model.basis, traj.last()))
            })?;
            let mut m = Moments::default();
            vals.iter().for_each(|v| m.push(*v));
            Ok(m.estimate())
        })
        .collect()
}

/// The observables histogrammed by [`empirical_measure`].
pub const MEASURE_OBSERVABLES: [Observable; 3] = [Observable::HNorm, Observable::VNorm, Observable::Mode(1)];

/// Normalized histogram of one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub observable: Observable,
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Uniform bins over `[min, max]` of the samples; a degenerate range puts
    /// everything in one bin.
    pub fn from_samples(observable: Observable, xs: &[f64], bins: usize) -> Result<Histogram> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::on_range(observable, xs, bins, lo, hi)
    }

    fn on_range(observable: Observable, xs: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
        if xs.is_empty() {
            return Err(Error::EmptySample);
        }
        if bins == 0 {
            return Err(Error::param("bins", "must be positive"));
        }
        let mut counts = vec![0usize; bins];
        let width = hi - lo;
        for &x in xs {
            let k = if width > 0.0 {
                (((x - lo) / width) * bins as f64).floor() as usize
            } else {
                0
            };
            counts[k.min(bins - 1)] += 1;
        }
        let n = xs.len() as f64;
        Ok(Histogram {
            observable,
            lo,
            hi,
            mass: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let b = self.mass.len();
        (0..=b).map(|k| self.lo + (self.hi - self.lo) * k as f64 / b as f64).collect()
    }

    pub fn occupied_bins(&self) -> usize {
        self.mass.iter().filter(|m| **m > 0.0).count()
    }
}

/// Occupation measure of one long path after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub histograms: Vec<Histogram>,
    pub samples: usize,
    values: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Raw samples of observable `k` in time order.
    pub fn values(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// Largest over observables of `½Σ|p − q|`, both samples re-binned on the
    /// union of their ranges with the same bin count.
    pub fn distance(&self, other: &EmpiricalMeasure) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (k, h) in self.histograms.iter().enumerate() {
            let (a, b) = (&self.values[k], &other.values[k]);
            let lo = h.lo.min(other.histograms[k].lo);
            let hi = h.hi.max(other.histograms[k].hi);
            let bins = h.mass.len();
            let p = Histogram::on_range(h.observable, a, bins, lo, hi)?;
            let q = Histogram::on_range(h.observable, b, bins, lo, hi)?;
            let tv = 0.5 * p.mass.iter().zip(&q.mass).map(|(x, y)| (x - y).abs()).sum::<f64>();
            worst = worst.max(tv);
        }
        Ok(worst)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# occupation measure samples={}", self.samples)?;
        writeln!(w, "observable\tbin_lo\tbin_hi\tmass")?;
        for h in &self.histograms {
            let edges = h.bin_edges();
            for (k, m) in h.mass.iter().enumerate() {
                writeln!(w, "{}\t{:.10e}\t{:.10e}\t{:.10e}", h.observable.name(), edges[k], edges[k + 1], m)?;
            }
        }
        Ok(())
    }
}

pub const DEFAULT_BINS: usize = 64;

/// Histograms of `|u|`, `‖u‖` and `a_1` along one path for saved `t > burn_in`.
pub fn empirical_measure(
    model: &ModelSpec,
    u0: &SpectralField,
    grid: &TimeGrid,
    burn_in: f64,
    bins: usize,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    require_ergodic(model)?;
    let rows = sample_after_burn_in(model, u0, grid, burn_in, opts, PathKey::new(seed, 0), |u| {
        MEASURE_OBSERVABLES.iter().map(|o| o.eval(&model.basis, u)).collect()
    })?;
    let values: Vec<Vec<f64>> = (0..MEASURE_OBSERVABLES.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect();
    let histograms = MEASURE_OBSERVABLES
        .iter()
        .zip(&values)
        .map(|(o, xs)| Histogram::from_samples(*o, xs, bins))
        .collect::<Result<_>>()?;
    Ok(EmpiricalMeasure {
        histograms,
        samples: rows.len(),
        values,
    })
}
