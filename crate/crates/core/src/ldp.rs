//! Controlled skeleton equation and its cost.
//!
//! ```text
//! du/dt = −Au − F(u) + g(u)σ + ∫_E h(u, ξ)(ρ(t, ξ) − 1) λ(dξ)
//! L_T(σ, ρ) = ½∫‖σ‖² dt + ∫∫ l(ρ) λ(dξ) dt,   l(r) = r log r − r + 1
//! ```
//!
//! Controls are piecewise constant on time cells and on annuli of the mark
//! space, with `ρ = 1` outside `E_{m_max}`, so every `λ`-integral is closed-form.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Observable;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{JumpMeasureSpec, Sidedness};
use crate::solver::{log_log_slope, Stepper, TimeGrid, Trajectory, TrajectoryMeta};
use crate::spectral::SpectralField;

/// `l(r) = r log r − r + 1`.
pub fn entropy_cost(r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        r * r.ln() - r + 1.0
    }
}

/// Annuli `1/levels[i+1] ≤ |ξ| < 1/levels[i]` on each side of the mark space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkCells {
    pub levels: Vec<usize>,
    pub signs: Vec<i8>,
}

impl MarkCells {
    pub fn new(levels: Vec<usize>, sidedness: Sidedness) -> Result<Self> {
        if levels.is_empty() || levels[0] < 1 || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("levels", "need increasing levels starting at >= 1"));
        }
        let signs = match sidedness {
            Sidedness::Symmetric => vec![1, -1],
            Sidedness::Positive => vec![1],
        };
        Ok(MarkCells { levels, signs })
    }

    /// Dyadic levels `1, 2, 4, …, m_max` (`m_max` appended if not a power of two).
    pub fn dyadic(m_max: usize, sidedness: Sidedness) -> Result<Self> {
        if m_max < 1 {
            return Err(Error::param("m_max", "must be >= 1"));
        }
        let mut levels = vec![1];
        while levels.last().unwrap() * 2 <= m_max {
            levels.push(levels.last().unwrap() * 2);
        }
        if *levels.last().unwrap() != m_max {
            levels.push(m_max);
        }
        Self::new(levels, sidedness)
    }

    /// No mark cells: `ρ ≡ 1`.
    pub fn none() -> Self {
        MarkCells {
            levels: vec![1],
            signs: vec![1],
        }
    }

    pub fn annuli(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn count(&self) -> usize {
        self.signs.len() * self.annuli()
    }

    pub fn m_max(&self) -> usize {
        *self.levels.last().unwrap()
    }

    /// `(sign, r_lo, r_hi)` of cell `k`.
    pub fn cell(&self, k: usize) -> (f64, f64, f64) {
        let n = self.annuli();
        let (s, i) = (k / n, k % n);
        (
            self.signs[s] as f64,
            1.0 / self.levels[i + 1] as f64,
            1.0 / self.levels[i] as f64,
        )
    }

    pub fn masses(&self, spec: &JumpMeasureSpec) -> Vec<f64> {
        (0..self.count())
            .map(|k| {
                let (_, lo, hi) = self.cell(k);
                spec.side_mass(lo, hi)
            })
            .collect()
    }

    /// Signed `∫ ξ λ(dξ)` per cell.
    pub fn moments1(&self, spec: &JumpMeasureSpec) -> Vec<f64> {
        (0..self.count())
            .map(|k| {
                let (s, lo, hi) = self.cell(k);
                s * spec.side_moment1(lo, hi)
            })
            .collect()
    }

    fn validate_against(&self, spec: &JumpMeasureSpec) -> Result<()> {
        let expected = match spec.sidedness {
            Sidedness::Symmetric => 2,
            Sidedness::Positive => 1,
        };
        if self.annuli() > 0 && self.signs.len() != expected {
            return Err(Error::param("marks", "mark cells do not match the jump measure's sides"));
        }
        Ok(())
    }
}

/// `(σ, ρ)` on `time_cells` equal time cells: `sigma[cell][mode]`,
/// `rho[cell][mark_cell]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub time_cells: usize,
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub marks: MarkCells,
    pub budget: Option<f64>,
}

impl Control {
    /// `σ ≡ 0`, `ρ ≡ 1`.
    pub fn zero(time_cells: usize, n_modes: usize, marks: MarkCells) -> Result<Self> {
        if time_cells < 1 {
            return Err(Error::param("time_cells", "must be >= 1"));
        }
        let k = marks.count();
        Ok(Control {
            time_cells,
            sigma: vec![vec![0.0; n_modes]; time_cells],
            rho: vec![vec![1.0; k]; time_cells],
            marks,
            budget: None,
        })
    }

    /// Constant-in-time `σ` on the given modes.
    pub fn constant_sigma(time_cells: usize, sigma: Vec<f64>, marks: MarkCells) -> Result<Self> {
        let mut c = Self::zero(time_cells, sigma.len(), marks)?;
        c.sigma.iter_mut().for_each(|row| row.clone_from(&sigma));
        Ok(c)
    }

    pub fn n_modes(&self) -> usize {
        self.sigma.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.len() != self.time_cells || self.rho.len() != self.time_cells {
            return Err(Error::param("control", "row count differs from time_cells"));
        }
        let n = self.n_modes();
        if self.sigma.iter().any(|r| r.len() != n) || self.rho.iter().any(|r| r.len() != self.marks.count()) {
            return Err(Error::param("control", "ragged control rows"));
        }
        if self.sigma.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("sigma", "must be finite"));
        }
        if let Some(bad) = self.rho.iter().flatten().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::param("rho", format!("must be positive and finite, got {bad}")));
        }
        Ok(())
    }

    /// Attach a budget `Υ`; fails if the control already costs more.
    pub fn with_budget(mut self, budget: f64, jumps: &JumpMeasureSpec, grid: &TimeGrid) -> Result<Self> {
        let cost = control_cost(&self, jumps, grid)?;
        if cost > budget {
            return Err(Error::param("budget", format!("control cost {cost} exceeds budget {budget}")));
        }
        self.budget = Some(budget);
        Ok(self)
    }

    /// Cell-wise `self + s·(other − self)`-style combination: `σ + s·dσ`.
    pub fn perturbed(&self, direction: &Control, s: f64) -> Result<Control> {
        if direction.time_cells != self.time_cells || direction.n_modes() != self.n_modes() {
            return Err(Error::param("direction", "control shapes differ"));
        }
        let mut c = self.clone();
        for (row, d) in c.sigma.iter_mut().zip(&direction.sigma) {
            row.iter_mut().zip(d).for_each(|(v, dv)| *v += s * dv);
        }
        Ok(c)
    }

    /// Sections `sigma` and `rho`, one row per time cell.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# control time_cells={} modes={} levels={} sides={}",
            self.time_cells,
            self.n_modes(),
            self.marks.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
            self.marks.signs.len()
        )?;
        writeln!(w, "# sigma")?;
        for row in &self.sigma {
            writeln!(w, "{}", join(row))?;
        }
        writeln!(w, "# rho")?;
        for row in &self.rho {
            writeln!(w, "{}", join(row))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Control> {
        let mut header = None;
        let mut section = "";
        let mut sigma = Vec::new();
        let mut rho = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if let Some(rest) = t.strip_prefix("# control") {
                header = Some(rest.to_string());
            } else if t == "# sigma" {
                section = "sigma";
            } else if t == "# rho" {
                section = "rho";
            } else if t.is_empty() {
                if section == "rho" {
                    rho.push(Vec::new());
                } else if section == "sigma" {
                    sigma.push(Vec::new());
                }
            } else {
                let row = t
                    .split('\t')
                    .map(|v| v.parse::<f64>().map_err(|e| Error::Config(format!("control value `{v}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                match section {
                    "sigma" => sigma.push(row),
                    "rho" => rho.push(row),
                    _ => return Err(Error::Config("control data before a section header".into())),
                }
            }
        }
        let header = header.ok_or_else(|| Error::Config("missing control header".into()))?;
        let mut levels = Vec::new();
        let mut sides = 1;
        for kv in header.split_whitespace() {
            if let Some(v) = kv.strip_prefix("levels=") {
                levels = v
                    .split(',')
                    .map(|x| x.parse::<usize>().map_err(|e| Error::Config(format!("levels: {e}"))))
                    .collect::<Result<_>>()?;
            } else if let Some(v) = kv.strip_prefix("sides=") {
                sides = v.parse().map_err(|e| Error::Config(format!("sides: {e}")))?;
            }
        }
        let side = if sides == 2 { Sidedness::Symmetric } else { Sidedness::Positive };
        let c = Control {
            time_cells: sigma.len(),
            sigma,
            rho,
            marks: MarkCells::new(levels, side)?,
            budget: None,
        };
        c.validate()?;
        Ok(c)
    }
}

fn join(row: &[f64]) -> String {
    row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join("\t")
}

fn cell_steps(control: &Control, grid: &TimeGrid) -> Result<usize> {
    if grid.n_steps % control.time_cells != 0 {
        return Err(Error::param(
            "time_cells",
            format!("{} cells do not divide {} steps", control.time_cells, grid.n_steps),
        ));
    }
    Ok(grid.n_steps / control.time_cells)
}

/// `½ Σ dt‖σ‖² + Σ l(ρ)·λ(cell)·dt` over time cells.
pub fn control_cost(control: &Control, jumps: &JumpMeasureSpec, grid: &TimeGrid) -> Result<f64> {
    control.validate()?;
    let dt_cell = grid.horizon() / control.time_cells as f64;
    let masses = control.marks.masses(jumps);
    let mut cost = 0.0;
    for (sig, rho) in control.sigma.iter().zip(&control.rho) {
        cost += 0.5 * dt_cell * sig.iter().map(|s| s * s).sum::<f64>();
        cost += dt_cell * rho.iter().zip(&masses).map(|(r, m)| entropy_cost(*r) * m).sum::<f64>();
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSolution {
    pub trajectory: Trajectory,
    /// `sup_t |u(t)|²`
    pub sup_h_sq: f64,
    /// `∫ ‖u‖² dt` (left-point rule on the grid)
    pub v_sq_integral: f64,
}

impl SkeletonSolution {
    pub fn terminal(&self) -> &SpectralField {
        self.trajectory.last()
    }

    /// `sup_t |u|² + ∫‖u‖² dt`.
    pub fn energy(&self) -> f64 {
        self.sup_h_sq + self.v_sq_integral
    }
}

/// Semi-implicit stepping of the skeleton equation; every grid state is kept.
pub fn solve_skeleton(
    model: &ModelSpec,
    u0: &SpectralField,
    control: &Control,
    grid: &TimeGrid,
) -> Result<SkeletonSolution> {
    model.basis.check(u0)?;
    control.validate()?;
    control.marks.validate_against(&model.jumps)?;
    if control.n_modes() != model.n_modes() {
        return Err(Error::ShapeMismatch {
            expected: model.n_modes(),
            got: control.n_modes(),
        });
    }
    let mut stepper = Stepper::with_scales(model, 1.0, 1.0);
    let mut times = Vec::with_capacity(grid.n_steps + 1);
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    times.push(grid.t0);
    states.push(u0.clone());
    let mut sup_h_sq = u0.norm_h_sq();
    let mut v_sq_integral = 0.0;
    skeleton_steps(&mut stepper, model, u0, control, grid, |k, prev, next| {
        v_sq_integral += grid.dt * model.basis.norm_v_sq_unchecked(prev);
        let field = SpectralField::from_coeffs(next.to_vec());
        sup_h_sq = sup_h_sq.max(field.norm_h_sq());
        times.push(grid.time(k + 1));
        states.push(field);
    })?;
    Ok(SkeletonSolution {
        trajectory: Trajectory {
            times,
            states,
            jumps: Vec::new(),
            meta: TrajectoryMeta {
                seed: 0,
                path: 0,
                truncation: Some(control.marks.m_max()),
                n_modes: model.n_modes(),
                scheme: "skeleton-semi-implicit".into(),
            },
        },
        sup_h_sq,
        v_sq_integral,
    })
}

/// Core skeleton loop; `visit(k, state_k, state_{k+1})` after every step.
/// Returns the terminal coefficients.
fn skeleton_steps<F>(
    stepper: &mut Stepper<'_>,
    model: &ModelSpec,
    u0: &SpectralField,
    control: &Control,
    grid: &TimeGrid,
    mut visit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], &[f64]),
{
    let per_cell = cell_steps(control, grid)?;
    let m1_cells = control.marks.moments1(&model.jumps);
    // Per time cell: −Σ (ρ − 1)·M1_cell, entering like a compensator.
    let m1_eff: Vec<f64> = control
        .rho
        .iter()
        .map(|row| -row.iter().zip(&m1_cells).map(|(r, m)| (r - 1.0) * m).sum::<f64>())
        .collect();
    let jump_active = !model.jump.is_off();
    let mut state = u0.coeffs().to_vec();
    let mut prev = state.clone();
    let mut push = vec![0.0; model.n_modes()];
    for k in 0..grid.n_steps {
        let cell = k / per_cell;
        prev.copy_from_slice(&state);
        push.iter_mut()
            .zip(&control.sigma[cell])
            .for_each(|(p, s)| *p = s * grid.dt);
        let m1 = if jump_active { m1_eff[cell] } else { 0.0 };
        if !stepper.advance(&mut state, None, grid.dt, Some(&push), 0.0, m1) {
            return Err(Error::NonFinite {
                step: k + 1,
                time: grid.time(k + 1),
            });
        }
        visit(k, &prev, &state);
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// `sup_t |u^{π_n}(t) − u^π(t)|` per sequence element.
    pub distances: Vec<f64>,
    /// Log-log slope of distance against the perturbation size, when sizes
    /// are supplied and all distances are positive.
    pub slope: Option<f64>,
    /// Distances shrink from first to last and end below `1e-6`.
    pub converged: bool,
}

pub const CONTINUITY_TOLERANCE: f64 = 1e-6;

/// Distances of skeleton solutions under `sequence` to the one under `limit`.
/// `sizes` (optional) are the perturbation magnitudes for the slope fit.
pub fn continuity_check(
    model: &ModelSpec,
    u0: &SpectralField,
    limit: &Control,
    sequence: &[Control],
    sizes: Option<&[f64]>,
    grid: &TimeGrid,
) -> Result<ContinuityReport> {
    if sequence.is_empty() {
        return Err(Error::EmptySample);
    }
    let reference = solve_skeleton(model, u0, limit, grid)?;
    let distances: Vec<f64> = sequence
        .par_iter()
        .map(|c| Ok(solve_skeleton(model, u0, c, grid)?.trajectory.sup_distance(&reference.trajectory)))
        .collect::<Result<_>>()?;
    let slope = match sizes {
        Some(s) if s.len() == distances.len() && distances.iter().all(|d| *d > 0.0) && s.len() >= 2 => {
            Some(log_log_slope(s, &distances))
        }
        _ => None,
    };
    let converged = distances.last().unwrap() < &CONTINUITY_TOLERANCE
        && distances.last().unwrap() <= distances.first().unwrap();
    Ok(ContinuityReport {
        distances,
        slope,
        converged,
    })
}

/// Terminal condition `|φ(u(T)) − goal| ≤ tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub observable: Observable,
    pub goal: f64,
    pub tol: f64,
}

/// Finite-dimensional control family: `σ` free on `modes` in each of
/// `time_cells` cells, and one `ρ` level per mark cell (constant in time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFamily {
    pub time_cells: usize,
    /// 1-based modes with a free `σ` amplitude.
    pub modes: Vec<usize>,
    pub marks: MarkCells,
    /// Number of multi-start candidates (the first starts from the zero control).
    pub starts: usize,
    /// Coordinate sweeps per penalty level.
    pub max_sweeps: usize,
    /// Golden-section iterations per line search.
    pub line_iters: usize,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub outer_iters: usize,
}

impl ControlFamily {
    pub fn new(time_cells: usize, modes: Vec<usize>, marks: MarkCells) -> Self {
        ControlFamily {
            time_cells,
            modes,
            marks,
            starts: 4,
            max_sweeps: 50,
            line_iters: 60,
            penalty0: 1.0,
            penalty_growth: 10.0,
            outer_iters: 5,
        }
    }

    pub fn dimension(&self) -> usize {
        self.time_cells * self.modes.len() + self.marks.count()
    }

    /// `σ` parameters first (cell-major), then `log ρ` per mark cell.
    pub fn control(&self, n_modes: usize, theta: &[f64]) -> Result<Control> {
        let mut c = Control::zero(self.time_cells, n_modes, self.marks.clone())?;
        let nm = self.modes.len();
        for cell in 0..self.time_cells {
            for (i, &j) in self.modes.iter().enumerate() {
                c.sigma[cell][j - 1] = theta[cell * nm + i];
            }
        }
        let off = self.time_cells * nm;
        for row in c.rho.iter_mut() {
            for (k, r) in row.iter_mut().enumerate() {
                *r = theta[off + k].exp();
            }
        }
        Ok(c)
    }

    fn start(&self, index: usize) -> Vec<f64> {
        let d = self.dimension();
        if index == 0 {
            return vec![0.0; d];
        }
        // Alternating-sign uniform starts of growing size.
        let s = 0.5 * index.div_ceil(2) as f64 * if index % 2 == 1 { 1.0 } else { -1.0 };
        vec![s; d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSearchResult {
    pub control: Control,
    pub cost: f64,
    pub residual: f64,
    pub evaluations: usize,
    /// Which multi-start candidate won.
    pub start: usize,
}

struct Objective<'a> {
    model: &'a ModelSpec,
    stepper: Stepper<'a>,
    u0: &'a SpectralField,
    target: &'a Target,
    family: &'a ControlFamily,
    grid: &'a TimeGrid,
    evaluations: usize,
}

impl Objective<'_> {
    /// `(cost, residual)`; non-finite solves count as infinitely bad.
    fn eval(&mut self, theta: &[f64]) -> Result<(f64, f64)> {
        self.evaluations += 1;
        let c = self.family.control(self.model.n_modes(), theta)?;
        let cost = control_cost(&c, &self.model.jumps, self.grid)?;
        match skeleton_steps(&mut self.stepper, self.model, self.u0, &c, self.grid, |_, _, _| {}) {
            Ok(end) => {
                let end = SpectralField::from_coeffs(end);
                let r = self.target.observable.eval(&self.model.basis, &end) - self.target.goal;
                Ok((cost, r.abs()))
            }
            Err(Error::NonFinite { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
            Err(e) => Err(e),
        }
    }

    fn penalized(&mut self, theta: &[f64], w: f64) -> Result<f64> {
        let (c, r) = self.eval(theta)?;
        Ok(c + w * r * r)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimize along coordinate `i`; returns the new value and objective.
fn line_search(obj: &mut Objective<'_>, theta: &mut [f64], i: usize, step: f64, w: f64, f0: f64, iters: usize) -> Result<(f64, f64)> {
    let x0 = theta[i];
    let mut at = |x: f64, theta: &mut [f64]| -> Result<f64> {
        theta[i] = x;
        obj.penalized(theta, w)
    };
    // Bracket: expand until the interior point beats both ends.
    let mut h = step;
    let (mut a, mut b) = (x0 - h, x0 + h);
    let mut fa = at(a, theta)?;
    let mut fb = at(b, theta)?;
    let mut expansions = 0;
    while (fa < f0 || fb < f0) && expansions < 40 {
        h *= 2.0;
        if fa < fb {
            a = x0 - h;
            fa = at(a, theta)?;
            if fa >= f0 {
                break;
            }
        } else {
            b = x0 + h;
            fb = at(b, theta)?;
            if fb >= f0 {
                break;
            }
        }
        expansions += 1;
    }
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = at(c, theta)?;
    let mut fd = at(d, theta)?;
    for _ in 0..iters {
        if (b - a).abs() <= 1e-9 * (1.0 + x0.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = at(c, theta)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = at(d, theta)?;
        }
    }
    let (x, f) = if fc < fd { (c, fc) } else { (d, fd) };
    if f < f0 {
        theta[i] = x;
        Ok((x, f))
    } else {
        theta[i] = x0;
        Ok((x0, f0))
    }
}

fn search_from(obj: &mut Objective<'_>, mut theta: Vec<f64>) -> Result<(Vec<f64>, f64, f64)> {
    let fam = obj.family;
    let mut steps = vec![0.5; theta.len()];
    let mut w = fam.penalty0;
    for _ in 0..fam.outer_iters {
        let mut f = obj.penalized(&theta, w)?;
        for _ in 0..fam.max_sweeps {
            let before = f;
            for i in 0..theta.len() {
                let old = theta[i];
                let (x, fx) = line_search(obj, &mut theta, i, steps[i], w, f, fam.line_iters)?;
                steps[i] = ((x - old).abs() * 2.0).clamp(1e-8, 4.0);
                f = fx;
            }
            if before - f <= 1e-12 * before.abs().max(1e-300) {
                break;
            }
        }
        w *= fam.penalty_growth;
    }
    let (cost, residual) = obj.eval(&theta)?;
    Ok((theta, cost, residual))
}

/// Upper bound on the rate function at the target: penalized coordinate
/// descent over `family` from several starts, evaluated concurrently and
/// reduced by (feasible, cost, start index).
pub fn rate_search(
    model: &ModelSpec,
    u0: &SpectralField,
    target: &Target,
    family: &ControlFamily,
    grid: &TimeGrid,
) -> Result<RateSearchResult> {
    model.basis.check(u0)?;
    if family.modes.iter().any(|j| *j < 1 || *j > model.n_modes()) {
        return Err(Error::param("modes", "family mode out of range"));
    }
    if !(target.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    family.marks.validate_against(&model.jumps)?;
    cell_steps(&Control::zero(family.time_cells, 0, MarkCells::none())?, grid)?;
    let starts = family.starts.max(1);
    let runs: Vec<(Vec<f64>, f64, f64, usize)> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let mut obj = Objective {
                model,
                stepper: Stepper::with_scales(model, 1.0, 1.0),
                u0,
                target,
                family,
                grid,
                evaluations: 0,
            };
            let (theta, cost, residual) = search_from(&mut obj, family.start(s))?;
            Ok((theta, cost, residual, obj.evaluations))
        })
        .collect::<Result<_>>()?;
    let evaluations = runs.iter().map(|r| r.3).sum();
    let rank = |r: &(Vec<f64>, f64, f64, usize)| (r.2 > target.tol, r.1);
    let (best_index, best) = runs
        .iter()
        .enumerate()
        .min_by(|(i, x), (j, y)| {
            let (fx, cx) = rank(x);
            let (fy, cy) = rank(y);
            fx.cmp(&fy).then(cx.total_cmp(&cy)).then(i.cmp(j))
        })
        .unwrap();
    if best.2 > target.tol {
        let closest = runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        return Err(Error::Infeasible {
            residual: closest,
            cost: best.1,
        });
    }
    Ok(RateSearchResult {
        control: family.control(model.n_modes(), &best.0)?,
        cost: best.1,
        residual: best.2,
        evaluations,
        start: best_index,
    })
}

/// `inf ½∫|s|² dt` subject to `ȧ = −λa + s`, `a(0) = 0`, `a(T) = x`.
pub fn linear_quadratic_cost(lambda: f64, t: f64, x: f64) -> f64 {
    x * x * lambda / (1.0 - (-2.0 * lambda * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionSpec, DriftPoly, JumpCoeffSpec, ModeProfile};
    use crate::solver::{solve_path, PathKey, SolveOptions};
    use crate::spectral::{build_basis, DomainSpec};
    use std::f64::consts::{E, PI};
    use std::sync::Arc;

    fn single_mode(gamma: f64, length: f64, delta: f64, b1: f64) -> ModelSpec {
        let basis = Arc::new(build_basis(DomainSpec::interval(length).unwrap(), gamma, delta, 1).unwrap());
        ModelSpec::new(
            basis,
            DriftPoly::linear(delta).unwrap(),
            DiffusionSpec::new(ModeProfile::Explicit { values: vec![b1] }, 0.0, 1).unwrap(),
            JumpCoeffSpec::off(1),
            JumpMeasureSpec::symmetric(0.5).unwrap(),
        )
        .unwrap()
    }

    fn ci(n: usize, eta: (f64, f64)) -> ModelSpec {
        let basis = Arc::new(build_basis(DomainSpec::interval(PI).unwrap(), 0.4, 1.0, n).unwrap());
        ModelSpec::new(
            basis,
            DriftPoly::chafee_infante(1.0, 1.0).unwrap(),
            DiffusionSpec::new(ModeProfile::PowerLaw { amp: 0.5, decay: 1.0, cutoff: None }, 0.2, n).unwrap(),
            JumpCoeffSpec::new(ModeProfile::PowerLaw { amp: 0.5, decay: 1.0, cutoff: None }, eta.0, eta.1, n).unwrap(),
            JumpMeasureSpec::symmetric(0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn entropy_cost_values() {
        assert_eq!(entropy_cost(1.0), 0.0);
        assert!((entropy_cost(E) - 1.0).abs() < 1e-15);
        assert_eq!(entropy_cost(0.0), 1.0);
    }

    #[test]
    fn cost_closed_forms() {
        let grid = TimeGrid::new(0.0, 1.0, 1e-2).unwrap();
        let jumps = JumpMeasureSpec::symmetric(0.5).unwrap();
        let zero = Control::zero(4, 3, MarkCells::dyadic(8, Sidedness::Symmetric).unwrap()).unwrap();
        assert_eq!(control_cost(&zero, &jumps, &grid).unwrap(), 0.0);
        let unit = Control::constant_sigma(4, vec![0.6, 0.8, 0.0], MarkCells::none()).unwrap();
        assert!((control_cost(&unit, &jumps, &grid).unwrap() - 0.5).abs() < 1e-12);

        // One positive annulus [1/4, 1] with λ-mass 1.
        let mut one_sided = JumpMeasureSpec::one_sided(0.5).unwrap();
        one_sided.intensity_scale = 0.5;
        let marks = MarkCells::new(vec![1, 4], Sidedness::Positive).unwrap();
        assert!((marks.masses(&one_sided)[0] - 1.0).abs() < 1e-15);
        let mut c = Control::zero(1, 1, marks).unwrap();
        c.rho[0][0] = E;
        assert!((control_cost(&c, &one_sided, &grid).unwrap() - 1.0).abs() < 1e-12);

        c.rho[0][0] = 0.0;
        assert!(control_cost(&c, &one_sided, &grid).is_err());
    }

    #[test]
    fn zero_control_is_noise_free_solver() {
        let m = ci(16, (0.3, 0.3));
        let u0 = SpectralField::single_mode(16, 1, 1.5);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let ctl = Control::zero(5, 16, MarkCells::dyadic(8, Sidedness::Symmetric).unwrap()).unwrap();
        let sk = solve_skeleton(&m, &u0, &ctl, &grid).unwrap();
        let det = solve_path(&m.without_noise(), &u0, &grid, &SolveOptions::default(), PathKey::new(0, 0)).unwrap();
        assert!(sk.trajectory.sup_distance(&det) < 1e-12);
    }

    #[test]
    fn linear_steady_state() {
        // λ_1 = 2 on (0, π) with γ = 1/2, δ = 1.
        let m = single_mode(0.5, PI, 1.0, 1.0);
        let grid = TimeGrid::new(0.0, 20.0, 1e-3).unwrap();
        let ctl = Control::constant_sigma(1, vec![2.0], MarkCells::none()).unwrap();
        let sk = solve_skeleton(&m, &SpectralField::zeros(1), &ctl, &grid).unwrap();
        assert!((sk.terminal().coeffs()[0] - 1.0).abs() < 1e-9);
        let again = solve_skeleton(&m, &SpectralField::zeros(1), &ctl, &grid).unwrap();
        assert_eq!(sk, again);
    }

    #[test]
    fn rho_one_ignores_jump_coefficients() {
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let mut ctl = Control::zero(5, 8, MarkCells::dyadic(16, Sidedness::Symmetric).unwrap()).unwrap();
        ctl.sigma[2][0] = 1.0;
        let a = solve_skeleton(&ci(8, (0.3, 0.1)), &u0, &ctl, &grid).unwrap();
        let b = solve_skeleton(&ci(8, (0.9, 0.7)), &u0, &ctl, &grid).unwrap();
        assert_eq!(a.trajectory.states, b.trajectory.states);
        // ρ ≠ 1 on one side only does see them.
        ctl.rho[1][0] = 3.0;
        let a = solve_skeleton(&ci(8, (0.3, 0.1)), &u0, &ctl, &grid).unwrap();
        let b = solve_skeleton(&ci(8, (0.9, 0.7)), &u0, &ctl, &grid).unwrap();
        assert_ne!(a.trajectory.states, b.trajectory.states);
    }

    #[test]
    fn control_round_trip() {
        let mut ctl = Control::zero(3, 2, MarkCells::dyadic(4, Sidedness::Symmetric).unwrap()).unwrap();
        ctl.sigma[1][1] = -0.25;
        ctl.rho[2][3] = 1.5;
        let mut buf = Vec::new();
        ctl.write_tsv(&mut buf).unwrap();
        let back = Control::read_tsv(&buf[..]).unwrap();
        assert_eq!(back, ctl);
    }

    #[test]
    fn continuity_trivial_sequence() {
        let m = ci(8, (0.3, 0.1));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
        let base = Control::constant_sigma(5, vec![0.5; 8], MarkCells::none()).unwrap();
        let r = continuity_check(&m, &u0, &base, &[base.clone(), base.clone()], None, &grid).unwrap();
        assert_eq!(r.distances, vec![0.0, 0.0]);
        assert!(r.converged);
    }

    #[test]
    fn budget_enforced() {
        let grid = TimeGrid::new(0.0, 1.0, 1e-2).unwrap();
        let jumps = JumpMeasureSpec::symmetric(0.5).unwrap();
        let c = Control::constant_sigma(2, vec![1.0], MarkCells::none()).unwrap();
        assert!(c.clone().with_budget(0.4, &jumps, &grid).is_err());
        assert_eq!(c.with_budget(1.0, &jumps, &grid).unwrap().budget, Some(1.0));
    }

    #[test]
    fn rate_search_trivial_and_infeasible() {
        let m = single_mode(0.5, 2.0 * PI, 0.5, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 1e-2).unwrap();
        let fam = ControlFamily {
            starts: 2,
            max_sweeps: 20,
            ..ControlFamily::new(4, vec![1], MarkCells::none())
        };
        let u0 = SpectralField::from_coeffs(vec![1.0]);
        let free = solve_skeleton(&m, &u0, &Control::zero(4, 1, MarkCells::none()).unwrap(), &grid).unwrap();
        let target = Target {
            observable: Observable::Mode(1),
            goal: free.terminal().coeffs()[0],
            tol: 1e-6,
        };
        let r = rate_search(&m, &u0, &target, &fam, &grid).unwrap();
        assert!(r.cost < 1e-9, "{r:?}");

        let mut dead = m.clone();
        dead.diffusion = DiffusionSpec::off(1);
        let target = Target {
            observable: Observable::Mode(1),
            goal: 5.0,
            tol: 1e-3,
        };
        assert!(matches!(rate_search(&dead, &u0, &target, &fam, &grid), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn rate_search_linear_quadratic() {
        // γ = 1/2, L = 2π gives λ_1 = δ + 1/2 = 1.
        let m = single_mode(0.5, 2.0 * PI, 0.5, 1.0);
        assert!((m.basis.eigenvalue(1) - 1.0).abs() < 1e-15);
        let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
        let fam = ControlFamily::new(8, vec![1], MarkCells::none());
        let target = Target {
            observable: Observable::Mode(1),
            goal: 1.0,
            tol: 1e-3,
        };
        let r = rate_search(&m, &SpectralField::zeros(1), &target, &fam, &grid).unwrap();
        let oracle = linear_quadratic_cost(1.0, 1.0, 1.0);
        assert!((oracle - 1.156_517_642_749_666).abs() < 1e-12);
        assert!((r.cost - oracle).abs() / oracle < 0.05, "{r:?}");
    }
}
