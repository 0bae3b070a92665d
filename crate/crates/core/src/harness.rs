//! Config-driven experiment runner.
//!
//! A run is described by a TOML file (dotted keys such as `model.nu = 1.0`
//! work as well as tables). Missing values come from the selected preset.
//! Each run writes `manifest.toml` (resolved config plus a content hash),
//! `report.txt` (`key: value` lines) and delimited data files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{self, Observable};
use crate::error::{Error, Result};
use crate::ldp::{self, Control, ControlFamily, MarkCells, Target};
use crate::model::{DiffusionSpec, DriftPoly, JumpCoeffSpec, ModeProfile, ModelSpec};
use crate::noise::{JumpMeasureSpec, Sidedness};
use crate::solver::{self, SolveOptions, TimeGrid};
use crate::spectral::{build_basis, DomainSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Simulate,
    Picard,
    Truncation,
    Galerkin,
    StrongOrder,
    Energy,
    Absorbing,
    Contraction,
    Ergodic,
    Measure,
    Skeleton,
    Cost,
    RateSearch,
    Continuity,
}

impl RunKind {
    pub const ALL: [RunKind; 14] = [
        RunKind::Simulate,
        RunKind::Picard,
        RunKind::Truncation,
        RunKind::Galerkin,
        RunKind::StrongOrder,
        RunKind::Energy,
        RunKind::Absorbing,
        RunKind::Contraction,
        RunKind::Ergodic,
        RunKind::Measure,
        RunKind::Skeleton,
        RunKind::Cost,
        RunKind::RateSearch,
        RunKind::Continuity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Simulate => "simulate",
            RunKind::Picard => "picard",
            RunKind::Truncation => "truncation",
            RunKind::Galerkin => "galerkin",
            RunKind::StrongOrder => "strong-order",
            RunKind::Energy => "energy",
            RunKind::Absorbing => "absorbing",
            RunKind::Contraction => "contraction",
            RunKind::Ergodic => "ergodic",
            RunKind::Measure => "measure",
            RunKind::Skeleton => "skeleton",
            RunKind::Cost => "cost",
            RunKind::RateSearch => "rate-search",
            RunKind::Continuity => "continuity",
        }
    }

    pub fn parse(s: &str) -> Result<RunKind> {
        RunKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown run kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Zero,
    SingleMode,
    Random,
    Explicit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub length: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub n_modes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub b: Option<ModeProfile>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSection {
    pub w: Option<ModeProfile>,
    pub eta0: Option<f64>,
    pub eta1: Option<f64>,
    pub activity: Option<f64>,
    pub sidedness: Option<Sidedness>,
    pub intensity: Option<f64>,
    /// Truncation level; `0` switches jumps off.
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub save_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub kind: Option<RunKind>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    pub m_list: Option<Vec<usize>>,
    pub n_list: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub u0_norms: Option<Vec<f64>>,
    pub burn_in: Option<f64>,
    pub observable: Option<Observable>,
    pub bins: Option<usize>,
    pub tv_threshold: Option<f64>,
    /// Expected value of the time average (ergodic runs).
    pub reference: Option<f64>,
    /// Dyadic levels for strong-order runs.
    pub levels: Option<usize>,
    pub coarse_steps: Option<usize>,
    /// Sequence indices `n` of the `σ + perturbation/n` continuity study.
    pub sequence: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub kind: Option<InitKind>,
    pub mode: Option<usize>,
    pub amplitude: Option<f64>,
    pub norm: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub time_cells: Option<usize>,
    /// Constant-in-time `σ` per mode (zero-padded).
    pub sigma: Option<Vec<f64>>,
    pub mark_levels: Option<Vec<usize>>,
    /// Constant-in-time `ρ` per mark cell.
    pub rho: Option<Vec<f64>>,
    /// Control file written by an earlier run; overrides `sigma`/`rho`.
    pub file: Option<String>,
    /// Direction of the continuity perturbation, per mode.
    pub perturbation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub observable: Option<Observable>,
    pub goal: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub time_cells: Option<usize>,
    pub modes: Option<Vec<usize>>,
    pub mark_levels: Option<Vec<usize>>,
    pub starts: Option<usize>,
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub jump: JumpSection,
    pub grid: GridSection,
    pub run: RunSection,
    pub init: InitSection,
    /// Second initial condition (contraction, ergodic, measure).
    pub init_other: InitSection,
    pub control: ControlSection,
    pub target: TargetSection,
    pub family: FamilySection,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

struct Preset {
    name: &'static str,
    summary: &'static str,
    apply: fn(&mut ExperimentConfig),
}

macro_rules! fill {
    ($slot:expr, $value:expr) => {
        if $slot.is_none() {
            $slot = Some($value);
        }
    };
}

fn common_defaults(c: &mut ExperimentConfig) {
    fill!(c.model.eps, 1.0);
    fill!(c.jump.activity, 0.5);
    fill!(c.jump.sidedness, Sidedness::Symmetric);
    fill!(c.jump.intensity, 1.0);
    fill!(c.grid.t0, 0.0);
    fill!(c.grid.save_every, 100);
    fill!(c.run.paths, 1000);
    fill!(c.run.seed, 1);
    fill!(c.run.out, "fspde-out".to_string());
    fill!(c.run.workers, 0);
    fill!(c.run.iterations, 5);
    fill!(c.run.m_list, vec![4, 8, 16, 32, 64]);
    fill!(c.run.bins, dynamics::DEFAULT_BINS);
    fill!(c.run.tv_threshold, 0.05);
    fill!(c.run.observable, Observable::HNormSq);
    fill!(c.run.levels, 4);
    fill!(c.run.coarse_steps, 16);
    fill!(c.run.sequence, vec![1, 2, 4, 8, 16]);
    fill!(c.run.u0_norms, vec![0.0, 5.0, 20.0]);
    fill!(c.init.kind, InitKind::SingleMode);
    fill!(c.init.mode, 1);
    fill!(c.init.amplitude, 1.0);
    fill!(c.init.seed, 7);
    fill!(c.init_other.kind, InitKind::SingleMode);
    fill!(c.init_other.mode, 1);
    fill!(c.init_other.amplitude, -1.0);
    fill!(c.init_other.seed, 8);
    fill!(c.control.time_cells, 8);
    fill!(c.control.sigma, vec![]);
    fill!(c.control.mark_levels, vec![1]);
    fill!(c.control.rho, vec![]);
    fill!(c.control.perturbation, vec![1.0]);
    fill!(c.target.observable, Observable::Mode(1));
    fill!(c.target.goal, 1.0);
    fill!(c.target.tol, 1e-3);
    fill!(c.family.time_cells, 8);
    fill!(c.family.modes, vec![1]);
    fill!(c.family.mark_levels, vec![1]);
    fill!(c.family.starts, 4);
    fill!(c.family.max_sweeps, 50);
}

const PRESETS: [Preset; 5] = [
    Preset {
        name: "chafee-infante",
        summary: "F(u) = ν(u³ − u) − δu on (0, π), γ = 0.4, 64 modes; additive mode-1 Wiener and jump forcing with C_g = C_h = 0.5",
        apply: |c| {
            fill!(c.domain.length, std::f64::consts::PI);
            fill!(c.domain.gamma, 0.4);
            fill!(c.domain.delta, 1.0);
            fill!(c.domain.n_modes, 64);
            fill!(c.model.nu, 1.0);
            fill!(c.noise.b, ModeProfile::single(1, 0.5));
            fill!(c.noise.c, 0.0);
            fill!(c.jump.w, ModeProfile::single(1, 0.1875f64.sqrt()));
            fill!(c.jump.eta0, 1.0);
            fill!(c.jump.eta1, 0.0);
            fill!(c.jump.m, 8);
            fill!(c.grid.t_end, 5.0);
            fill!(c.grid.dt, 1e-3);
            fill!(c.run.kind, RunKind::Energy);
            fill!(c.init.kind, InitKind::Random);
            fill!(c.init.norm, 2.0);
        },
    },
    Preset {
        name: "cubic",
        summary: "F(u) = νu³ − (κ+δ)u with ν = 1, κ = 0, δ = 2 on (0, π), 32 modes; L1 = 1",
        apply: |c| {
            fill!(c.domain.length, std::f64::consts::PI);
            fill!(c.domain.gamma, 0.4);
            fill!(c.domain.delta, 2.0);
            fill!(c.domain.n_modes, 32);
            fill!(c.model.nu, 1.0);
            fill!(c.model.kappa, 0.0);
            fill!(c.noise.b, ModeProfile::single(1, 0.5));
            fill!(c.noise.c, 0.0);
            fill!(c.jump.w, ModeProfile::single(1, 0.1875f64.sqrt()));
            fill!(c.jump.eta0, 1.0);
            fill!(c.jump.eta1, 0.0);
            fill!(c.jump.m, 8);
            fill!(c.grid.t_end, 10.0);
            fill!(c.grid.dt, 1e-3);
            fill!(c.run.kind, RunKind::Absorbing);
        },
    },
    Preset {
        name: "linear",
        summary: "F ≡ 0, δ = 1, γ = 1/2 on (0, π), 8 modes; multiplicative noise with α1 = α2 = 0.25",
        apply: |c| {
            fill!(c.domain.length, std::f64::consts::PI);
            fill!(c.domain.gamma, 0.5);
            fill!(c.domain.delta, 1.0);
            fill!(c.domain.n_modes, 8);
            fill!(c.noise.b, ModeProfile::single(1, 0.5));
            fill!(c.noise.c, 0.125f64.sqrt());
            fill!(c.jump.w, ModeProfile::PowerLaw { amp: 1.0, decay: 0.0, cutoff: None });
            fill!(c.jump.eta0, 0.0);
            fill!(c.jump.eta1, 0.09375f64.sqrt());
            fill!(c.jump.m, 16);
            fill!(c.grid.t_end, 4.0);
            fill!(c.grid.dt, 1e-3);
            fill!(c.run.kind, RunKind::Contraction);
        },
    },
    Preset {
        name: "ou",
        summary: "single-mode Ornstein–Uhlenbeck: F ≡ 0, λ_1 = 2, b_1 = 1, no jumps",
        apply: |c| {
            fill!(c.domain.length, std::f64::consts::PI);
            fill!(c.domain.gamma, 0.5);
            fill!(c.domain.delta, 1.0);
            fill!(c.domain.n_modes, 1);
            fill!(c.noise.b, ModeProfile::Explicit { values: vec![1.0] });
            fill!(c.noise.c, 0.0);
            fill!(c.jump.w, ModeProfile::zero());
            fill!(c.jump.eta0, 0.0);
            fill!(c.jump.eta1, 0.0);
            fill!(c.jump.m, 0);
            fill!(c.grid.t_end, 2000.0);
            fill!(c.grid.dt, 1e-3);
            fill!(c.grid.save_every, 10);
            fill!(c.run.kind, RunKind::Ergodic);
            fill!(c.run.burn_in, 10.0);
            fill!(c.run.reference, 0.25);
            fill!(c.init_other.amplitude, 10.0);
        },
    },
    Preset {
        name: "linear-quadratic",
        summary: "single mode with λ_1 = 1 (L = 2π, γ = 1/2, δ = 1/2), b_1 = 1, no jumps; skeleton and rate-search runs",
        apply: |c| {
            fill!(c.domain.length, 2.0 * std::f64::consts::PI);
            fill!(c.domain.gamma, 0.5);
            fill!(c.domain.delta, 0.5);
            fill!(c.domain.n_modes, 1);
            fill!(c.noise.b, ModeProfile::Explicit { values: vec![1.0] });
            fill!(c.noise.c, 0.0);
            fill!(c.jump.w, ModeProfile::zero());
            fill!(c.jump.eta0, 0.0);
            fill!(c.jump.eta1, 0.0);
            fill!(c.jump.m, 0);
            fill!(c.grid.t_end, 1.0);
            fill!(c.grid.dt, 1e-3);
            fill!(c.grid.save_every, 1);
            fill!(c.run.kind, RunKind::RateSearch);
            fill!(c.init.kind, InitKind::Zero);
        },
    },
];

pub fn list_presets() -> String {
    let mut s = String::new();
    for p in &PRESETS {
        let _ = writeln!(s, "{:<18}{}", p.name, p.summary);
    }
    s
}

pub fn describe(kind: &str) -> Result<&'static str> {
    Ok(match RunKind::parse(kind)? {
        RunKind::Simulate => "simulate: integrate `paths` sample paths with the semi-implicit scheme and write one trajectory file per path (t, a_1 … a_n).",
        RunKind::Picard => "picard: Picard iterates with noise coefficients frozen along the previous iterate and one noise realization per path; reports the path-averaged sup distance between consecutive iterates and asserts it decreases.",
        RunKind::Truncation => "truncation: coupled solutions for each jump truncation level m in run.m_list, jumps thinned from the finest level; asserts the path-averaged sup distance to the finest level strictly decreases.",
        RunKind::Galerkin => "galerkin: solutions on each mode count in run.n_list sharing Wiener increments; asserts the path-averaged sup distance to the finest resolution decreases.",
        RunKind::StrongOrder => "strong-order: RMSE at the final time against the exact solution of the diagonal linear problem over dyadic step sizes; reports the log-log slope.",
        RunKind::Energy => "energy: asserts E|u(t)|² ≤ e^{−δt}|u0|² + (2k2|O| + β1 + β2)/δ + 3·SE at every saved time; also reports the time-averaged ‖u‖² bound for t > T0 = 1.",
        RunKind::Absorbing => "absorbing: radius R = (2k2|O| + L1)/(2δ − L1) + 1 (requires 2δ > L1); asserts E|u(T)|² ≤ R + 3·SE from every |u0| in run.u0_norms and reports entry times.",
        RunKind::Contraction => "contraction: two solutions driven by the same noise; asserts E|u − v|²(t) ≤ |u0 − v0|²·e^{−ct} + 3·SE with rate c = 2δ−(2k4+α1+α2) > 0, and reports the fitted decay rate.",
        RunKind::Ergodic => "ergodic: time average of run.observable along one long path after burn-in, and ensemble averages at t_end from init and init_other; asserts the ensemble averages agree within 3 joint SE (and the time average matches run.reference if set). Requires 2δ−(2k4+α1+α2) > 0.",
        RunKind::Measure => "measure: occupation histograms of |u|, ‖u‖ and a_1 after burn-in from init and init_other; asserts the histogram distance is below run.tv_threshold.",
        RunKind::Skeleton => "skeleton: deterministic controlled equation du/dt = −Au − F(u) + g(u)σ + ∫h(u,ξ)(ρ−1)λ(dξ) for the control in [control]; writes the trajectory and its control.",
        RunKind::Cost => "cost: control cost ½∫‖σ‖² dt + ∫∫ l(ρ) λ(dξ) dt with l(r) = r log r − r + 1 for the control in [control].",
        RunKind::RateSearch => "rate-search: upper bound on the rate function: penalized coordinate descent with golden-section line search over the [family] controls subject to |φ(u(T)) − goal| ≤ tol; writes the best control.",
        RunKind::Continuity => "continuity: sup distance between skeleton solutions under σ + perturbation/n and under σ for n in run.sequence; asserts the log-log slope is 1 ± 0.2.",
    })
}

/// Everything a run needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub kind: RunKind,
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub opts: SolveOptions,
    pub u0: SpectralField,
    pub v0: SpectralField,
    pub warnings: Vec<String>,
}

fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("model.preset: unknown preset `{name}`")))
}

fn field<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing `{name}`")))
}

fn build_initial(s: &InitSection, n: usize, label: &str) -> Result<SpectralField> {
    let kind = field(&s.kind, &format!("{label}.kind"))?;
    Ok(match kind {
        InitKind::Zero => SpectralField::zeros(n),
        InitKind::SingleMode => {
            let j = field(&s.mode, &format!("{label}.mode"))?;
            if j < 1 || j > n {
                return Err(Error::Config(format!("{label}.mode: {j} outside 1..={n}")));
            }
            SpectralField::single_mode(n, j, field(&s.amplitude, &format!("{label}.amplitude"))?)
        }
        InitKind::Random => dynamics::random_initial(
            n,
            field(&s.norm, &format!("{label}.norm"))?,
            field(&s.seed, &format!("{label}.seed"))?,
        ),
        InitKind::Explicit => {
            let v = field(&s.values, &format!("{label}.values"))?;
            SpectralField::from_coeffs(v).resized(n)
        }
    })
}

impl ExperimentConfig {
    /// Fill defaults from the preset, validate, and build the model.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut c = self.clone();
        fill!(c.model.preset, "chafee-infante".to_string());
        let p = preset(c.model.preset.as_deref().unwrap())?;
        (p.apply)(&mut c);
        common_defaults(&mut c);

        let length = field(&c.domain.length, "domain.length")?;
        let gamma = field(&c.domain.gamma, "domain.gamma")?;
        let delta = field(&c.domain.delta, "domain.delta")?;
        let n = field(&c.domain.n_modes, "domain.n_modes")?;
        let basis = Arc::new(build_basis(DomainSpec::interval(length)?, gamma, delta, n)?);
        let drift = match c.model.nu {
            Some(nu) if nu > 0.0 => {
                let kappa = c.model.kappa.unwrap_or(nu);
                DriftPoly::cubic(nu, kappa, delta)?
            }
            Some(nu) if nu < 0.0 => return Err(Error::param("nu", format!("must be nonnegative, got {nu}"))),
            _ => DriftPoly::linear(delta)?,
        };
        let diffusion = DiffusionSpec::new(field(&c.noise.b, "noise.b")?, field(&c.noise.c, "noise.c")?, n)?;
        let jump = JumpCoeffSpec::new(
            field(&c.jump.w, "jump.w")?,
            field(&c.jump.eta0, "jump.eta0")?,
            field(&c.jump.eta1, "jump.eta1")?,
            n,
        )?;
        let mut jumps = match field(&c.jump.sidedness, "jump.sidedness")? {
            Sidedness::Symmetric => JumpMeasureSpec::symmetric(field(&c.jump.activity, "jump.activity")?)?,
            Sidedness::Positive => JumpMeasureSpec::one_sided(field(&c.jump.activity, "jump.activity")?)?,
        };
        jumps.intensity_scale = field(&c.jump.intensity, "jump.intensity")?;
        jumps.validate()?;
        let model = ModelSpec::new(basis, drift, diffusion, jump, jumps)?.with_eps(field(&c.model.eps, "model.eps")?)?;

        let grid = TimeGrid::new(
            field(&c.grid.t0, "grid.t0")?,
            field(&c.grid.t_end, "grid.t_end")?,
            field(&c.grid.dt, "grid.dt")?,
        )?;
        let m = field(&c.jump.m, "jump.m")?;
        let opts = SolveOptions {
            truncation: if m == 0 { None } else { Some(m) },
            save_every: field(&c.grid.save_every, "grid.save_every")?.max(1),
            ..Default::default()
        };
        let u0 = build_initial(&c.init, n, "init")?;
        let v0 = build_initial(&c.init_other, n, "init_other")?;
        let kind = field(&c.run.kind, "run.kind")?;
        if field(&c.run.paths, "run.paths")? == 0 {
            return Err(Error::param("paths", "must be positive"));
        }
        let warnings = model.regime_warnings();
        Ok(Resolved {
            config: c,
            kind,
            model,
            grid,
            opts,
            u0,
            v0,
            warnings,
        })
    }
}

/// Command-line overrides of `[run]` values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = Some(s);
        }
        if let Some(p) = self.paths {
            cfg.run.paths = Some(p);
        }
        if let Some(o) = &self.out {
            cfg.run.out = Some(o.display().to_string());
        }
        if let Some(w) = self.workers {
            cfg.run.workers = Some(w);
        }
    }
}

/// Result of a completed run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub report: Vec<(String, String)>,
    pub failures: Vec<String>,
    pub files: Vec<(String, String)>,
    pub out_dir: PathBuf,
    pub hash: String,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn kv(&mut self, key: &str, value: impl ToString) {
        self.report.push((key.to_string(), value.to_string()));
    }

    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }

    fn file(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files
            .push((name.to_string(), String::from_utf8(buf).expect("data files are UTF-8")));
        Ok(())
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.report {
            let _ = writeln!(s, "{k}: {v}");
        }
        let _ = writeln!(s, "status: {}", if self.passed() { "pass" } else { "fail" });
        for f in &self.failures {
            let _ = writeln!(s, "failure: {f}");
        }
        s
    }
}

/// Git-style blob hash (`sha256("blob <len>\0" ‖ content)`).
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

/// Resolved config without `run.out` and `run.workers`, which do not affect results.
pub fn manifest_text(resolved: &Resolved) -> Result<(String, String)> {
    let mut config = resolved.config.clone();
    config.run.out = None;
    config.run.workers = None;
    let body = toml::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
    let hash = content_hash(&body);
    let text = format!(
        "content_hash = \"{hash}\"\nversion = \"{}\"\n\n{body}",
        env!("CARGO_PKG_VERSION")
    );
    Ok((text, hash))
}

/// Exit status for a run result: 0 pass, 1 assertion failure, 2 config
/// error, 3 numerical abort.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed() => 0,
        Ok(_) => 1,
        Err(e) => error_code(e),
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::TooManyAborts { .. } => 3,
        Error::Infeasible { .. } => 1,
        _ => 2,
    }
}

/// Resolve, run on a pool of `run.workers` threads (0 = all cores) and write
/// the outputs.
pub fn run(config: &ExperimentConfig, overrides: &Overrides) -> Result<Outcome> {
    let mut cfg = config.clone();
    overrides.apply(&mut cfg);
    let resolved = cfg.resolve()?;
    let workers = resolved.config.run.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("run.workers: {e}")))?;
    let mut outcome = pool.install(|| execute(&resolved))?;
    let (manifest, hash) = manifest_text(&resolved)?;
    outcome.hash = hash;
    let out = PathBuf::from(resolved.config.run.out.clone().unwrap());
    fs::create_dir_all(&out)?;
    fs::write(out.join("manifest.toml"), manifest)?;
    fs::write(out.join("report.txt"), outcome.report_text())?;
    for (name, content) in &outcome.files {
        fs::write(out.join(name), content)?;
    }
    outcome.out_dir = out;
    Ok(outcome)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(",")
}

fn table<W: std::io::Write>(w: &mut W, header: &str, cols: &str, rows: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "{cols}")?;
    for (a, b) in rows {
        writeln!(w, "{a}\t{b:.10e}")?;
    }
    Ok(())
}

fn control_from(r: &Resolved) -> Result<Control> {
    let c = &r.config.control;
    if let Some(path) = &c.file {
        let f = fs::File::open(path).map_err(|e| Error::Config(format!("control.file {path}: {e}")))?;
        return Control::read_tsv(std::io::BufReader::new(f));
    }
    let n = r.model.n_modes();
    let mut sigma = c.sigma.clone().unwrap();
    if sigma.len() > n {
        return Err(Error::Config(format!("control.sigma: {} values for {n} modes", sigma.len())));
    }
    sigma.resize(n, 0.0);
    let marks = mark_cells(c.mark_levels.clone().unwrap(), &r.model)?;
    let mut ctl = Control::constant_sigma(c.time_cells.unwrap(), sigma, marks)?;
    let rho = c.rho.clone().unwrap();
    if !rho.is_empty() {
        if rho.len() != ctl.marks.count() {
            return Err(Error::Config(format!(
                "control.rho: {} values for {} mark cells",
                rho.len(),
                ctl.marks.count()
            )));
        }
        ctl.rho.iter_mut().for_each(|row| row.clone_from(&rho));
    }
    ctl.validate()?;
    Ok(ctl)
}

fn mark_cells(levels: Vec<usize>, model: &ModelSpec) -> Result<MarkCells> {
    if levels.len() <= 1 {
        return Ok(MarkCells::none());
    }
    MarkCells::new(levels, model.jumps.sidedness)
}

fn execute(r: &Resolved) -> Result<Outcome> {
    let run = &r.config.run;
    let seed = run.seed.unwrap();
    let paths = run.paths.unwrap();
    let model = &r.model;
    let grid = &r.grid;
    let mut o = Outcome::default();
    o.kv("kind", r.kind.name());
    o.kv("preset", r.config.model.preset.as_deref().unwrap());
    o.kv("seed", seed);
    o.kv("n_modes", model.n_modes());
    for w in &r.warnings {
        o.kv("warning", w);
    }
    let nc = model.noise_constants();
    o.kv("L1", nc.l1);
    o.kv("contraction_rate", nc.contraction_rate);

    match r.kind {
        RunKind::Simulate => {
            o.kv("paths", paths);
            let opts = SolveOptions {
                record_jumps: false,
                ..r.opts
            };
            let trajs = dynamics::run_paths(paths, seed, 0, |key| solver::solve_path(model, &r.u0, grid, &opts, key))?;
            o.kv("aborted", trajs.1);
            for t in &trajs.0 {
                let name = if paths == 1 {
                    "trajectory.tsv".to_string()
                } else {
                    format!("trajectory_{}.tsv", t.meta.path)
                };
                o.file(&name, |w| t.write_tsv(w))?;
            }
            if let Some(t) = trajs.0.first() {
                o.kv("final_h_norm", t.last().norm_h());
            }
        }
        RunKind::Picard => {
            let iters = run.iterations.unwrap();
            let inc = solver::mean_over_paths(paths, seed, |key| {
                Ok(solver::picard_increments(&solver::picard_solve(
                    model,
                    &r.u0,
                    grid,
                    r.opts.truncation,
                    iters,
                    key,
                )?))
            })?;
            o.kv("increments", list(&inc));
            o.kv("total_factor", inc[0] / inc[inc.len() - 1]);
            let rows: Vec<(f64, f64)> = inc.iter().enumerate().map(|(k, v)| ((k + 1) as f64, *v)).collect();
            o.file("picard.tsv", |w| table(w, "picard increments", "k\tmean_sup_distance", &rows))?;
            if !strictly_decreasing(&inc) {
                o.fail(format!("Picard increments not decreasing: {}", list(&inc)));
            }
        }
        RunKind::Truncation => {
            let m_list = run.m_list.clone().unwrap();
            let d = solver::mean_over_paths(paths, seed, |key| {
                solver::truncation_study(model, &r.u0, grid, &m_list, key)
            })?;
            let rows: Vec<(f64, f64)> = m_list.iter().map(|m| *m as f64).zip(d.iter().copied()).collect();
            o.kv("distances", list(&d));
            o.file("truncation.tsv", |w| table(w, "truncation study", "m\tmean_sup_distance", &rows))?;
            let coarse = &d[..d.len() - 1];
            if !strictly_decreasing(coarse) {
                o.fail(format!("truncation distances not strictly decreasing: {}", list(coarse)));
            }
        }
        RunKind::Galerkin => {
            let n_list = run.n_list.clone().unwrap_or_else(|| {
                let n = model.n_modes();
                vec![n / 16, n / 8, n / 4, n / 2, n].into_iter().filter(|v| *v > 0).collect()
            });
            let d = solver::mean_over_paths(paths, seed, |key| {
                solver::galerkin_study(model, &r.u0.resized(n_list[0]), grid, &n_list, r.opts.truncation, key)
            })?;
            let rows: Vec<(f64, f64)> = n_list.iter().map(|m| *m as f64).zip(d.iter().copied()).collect();
            o.kv("distances", list(&d));
            o.file("galerkin.tsv", |w| table(w, "galerkin study", "n\tmean_sup_distance", &rows))?;
            let coarse = &d[..d.len() - 1];
            if !strictly_decreasing(coarse) {
                o.fail(format!("Galerkin distances not decreasing: {}", list(coarse)));
            }
        }
        RunKind::StrongOrder => {
            let rep = solver::strong_order_study(
                model,
                &r.u0,
                grid.horizon(),
                run.coarse_steps.unwrap(),
                run.levels.unwrap(),
                paths,
                seed,
            )?;
            o.kv("rmse", list(&rep.rmse));
            o.kv("slope", rep.slope);
            let rows: Vec<(f64, f64)> = rep.dts.iter().copied().zip(rep.rmse.iter().copied()).collect();
            o.file("strong_order.tsv", |w| table(w, "strong error", "dt\trmse", &rows))?;
        }
        RunKind::Energy => {
            let rep = dynamics::check_energy_bound(model, &r.u0, grid, &r.opts, paths, seed)?;
            o.kv("paths", rep.stats.paths);
            o.kv("aborted", rep.stats.aborted);
            o.kv("constant", rep.constant);
            o.kv("min_margin", rep.curve.min_margin());
            o.kv("time_average_min_margin", rep.time_average.min_margin());
            o.file("energy.tsv", |w| rep.curve.write_tsv(w, "E|u(t)|^2 against its bound"))?;
            o.file("energy_time_average.tsv", |w| {
                rep.time_average.write_tsv(w, "time-averaged V-norm bound")
            })?;
            if let Some((t, m)) = rep.curve.first_violation() {
                o.fail(format!("energy bound exceeded by {:.4e} at t = {t}", -m));
            }
        }
        RunKind::Absorbing => {
            let norms = run.u0_norms.clone().unwrap();
            let starts: Vec<SpectralField> = norms
                .iter()
                .map(|v| dynamics::random_initial(model.n_modes(), *v, r.config.init.seed.unwrap()))
                .collect();
            let rep = dynamics::absorbing_test(model, &starts, grid, &r.opts, paths, seed)?;
            o.kv("radius", rep.radius);
            for (i, e) in rep.entries.iter().enumerate() {
                o.kv(
                    &format!("u0[{i}]"),
                    format!(
                        "|u0|^2 = {:.4} final = {:.6} ± {:.2e} entry = {}",
                        e.u0_norm_sq,
                        e.final_estimate.mean,
                        e.final_estimate.se,
                        e.entry_time.map_or("never".to_string(), |t| format!("{t}"))
                    ),
                );
                o.file(&format!("absorbing_{i}.tsv"), |w| {
                    e.curve.write_tsv(w, &format!("E|u(t)|^2 from |u0|^2 = {}", e.u0_norm_sq))
                })?;
                if !e.inside_at_end {
                    o.fail(format!(
                        "from |u0|^2 = {} the estimate {:.6} exceeds R + 3 SE = {:.6}",
                        e.u0_norm_sq,
                        e.final_estimate.mean,
                        rep.radius + dynamics::SE_FACTOR * e.final_estimate.se
                    ));
                }
            }
        }
        RunKind::Contraction => {
            let rep = dynamics::contraction_test(model, &r.u0, &r.v0, grid, &r.opts, paths, seed)?;
            o.kv("rate", rep.rate);
            o.kv("fitted_rate", rep.fitted_rate.map_or("none".to_string(), |v| v.to_string()));
            o.kv("min_margin", rep.curve.min_margin());
            o.file("contraction.tsv", |w| rep.curve.write_tsv(w, "E|u-v|^2(t) against |z0|^2 e^{-ct}"))?;
            if let Some((t, m)) = rep.curve.first_violation() {
                o.fail(format!("contraction bound exceeded by {:.4e} at t = {t}", -m));
            }
        }
        RunKind::Ergodic => {
            let obs = run.observable.unwrap();
            let burn = run.burn_in.unwrap_or(0.1 * grid.horizon());
            let ta = dynamics::ergodic_average(model, &r.u0, obs, grid, burn, &r.opts, seed)?;
            o.kv("time_average", ta.estimate.mean);
            o.kv("time_average_se", ta.estimate.se);
            let snap_grid = TimeGrid::new(grid.t0, grid.t0 + burn.max(grid.dt), grid.dt)?;
            let ens = dynamics::ensemble_average(model, &[r.u0.clone(), r.v0.clone()], obs, &snap_grid, &r.opts, paths, seed)?;
            o.kv("ensemble_u0", format!("{} ± {}", ens[0].mean, ens[0].se));
            o.kv("ensemble_v0", format!("{} ± {}", ens[1].mean, ens[1].se));
            if !ens[0].agrees_with(&ens[1]) {
                o.fail(format!(
                    "ensemble averages differ beyond 3 joint SE: {} vs {}",
                    ens[0].mean, ens[1].mean
                ));
            }
            if let Some(reference) = run.reference {
                let reference = dynamics::Estimate { mean: reference, se: 0.0 };
                if !ta.estimate.agrees_with(&reference) {
                    o.fail(format!(
                        "time average {} ± {} differs from reference {} beyond 3 SE",
                        ta.estimate.mean, ta.estimate.se, reference.mean
                    ));
                }
            }
        }
        RunKind::Measure => {
            let burn = run.burn_in.unwrap_or(0.1 * grid.horizon());
            let bins = run.bins.unwrap();
            let a = dynamics::empirical_measure(model, &r.u0, grid, burn, bins, &r.opts, seed)?;
            let b = dynamics::empirical_measure(model, &r.v0, grid, burn, bins, &r.opts, seed.wrapping_add(1))?;
            let d = a.distance(&b)?;
            o.kv("samples", a.samples);
            o.kv("distance", d);
            o.file("measure_u0.tsv", |w| a.write_tsv(w))?;
            o.file("measure_v0.tsv", |w| b.write_tsv(w))?;
            let thr = run.tv_threshold.unwrap();
            if !(d < thr) {
                o.fail(format!("measure distance {d} not below {thr}"));
            }
        }
        RunKind::Skeleton => {
            let ctl = control_from(r)?;
            let sol = ldp::solve_skeleton(model, &r.u0, &ctl, grid)?;
            o.kv("sup_h_sq", sol.sup_h_sq);
            o.kv("v_sq_integral", sol.v_sq_integral);
            o.kv("cost", ldp::control_cost(&ctl, &model.jumps, grid)?);
            o.file("skeleton.tsv", |w| sol.trajectory.write_tsv(w))?;
            o.file("control.tsv", |w| ctl.write_tsv(w))?;
        }
        RunKind::Cost => {
            let ctl = control_from(r)?;
            o.kv("cost", ldp::control_cost(&ctl, &model.jumps, grid)?);
        }
        RunKind::RateSearch => {
            let t = &r.config.target;
            let target = Target {
                observable: t.observable.unwrap(),
                goal: t.goal.unwrap(),
                tol: t.tol.unwrap(),
            };
            let f = &r.config.family;
            let family = ControlFamily {
                starts: f.starts.unwrap(),
                max_sweeps: f.max_sweeps.unwrap(),
                ..ControlFamily::new(
                    f.time_cells.unwrap(),
                    f.modes.clone().unwrap(),
                    mark_cells(f.mark_levels.clone().unwrap(), model)?,
                )
            };
            match ldp::rate_search(model, &r.u0, &target, &family, grid) {
                Ok(res) => {
                    o.kv("cost", res.cost);
                    o.kv("residual", res.residual);
                    o.kv("evaluations", res.evaluations);
                    o.kv("start", res.start);
                    o.file("best_control.tsv", |w| res.control.write_tsv(w))?;
                }
                Err(Error::Infeasible { residual, cost }) => {
                    o.kv("cost", cost);
                    o.kv("residual", residual);
                    o.fail(format!("target infeasible: best residual {residual:.4e} > tol {}", target.tol));
                }
                Err(e) => return Err(e),
            }
        }
        RunKind::Continuity => {
            let base = control_from(r)?;
            let mut dir = r.config.control.perturbation.clone().unwrap();
            dir.resize(model.n_modes(), 0.0);
            let dir = Control::constant_sigma(base.time_cells, dir, base.marks.clone())?;
            let seq = run.sequence.clone().unwrap();
            let controls = seq
                .iter()
                .map(|n| base.perturbed(&dir, 1.0 / *n as f64))
                .collect::<Result<Vec<_>>>()?;
            let sizes: Vec<f64> = seq.iter().map(|n| 1.0 / *n as f64).collect();
            let rep = ldp::continuity_check(model, &r.u0, &base, &controls, Some(&sizes), grid)?;
            o.kv("distances", list(&rep.distances));
            o.kv("slope", rep.slope.map_or("none".to_string(), |s| s.to_string()));
            let rows: Vec<(f64, f64)> = seq.iter().map(|n| *n as f64).zip(rep.distances.iter().copied()).collect();
            o.file("continuity.tsv", |w| table(w, "skeleton continuity", "n\tsup_distance", &rows))?;
            match rep.slope {
                Some(s) if (s - 1.0).abs() <= 0.2 => {}
                other => o.fail(format!("continuity slope {other:?} outside 1 ± 0.2")),
            }
        }
    }
    Ok(o)
}
