//! `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment, unknown or repeated keys
//! are errors. Relative file paths are resolved against the directory of
//! the config file. Every problem uses one scalar per block.
//!
//! | key | values |
//! |-----|--------|
//! | `problem.kind` | `grad_quadratic`, `forward_backward_l1`, `projected_gradient_box`, `linear_psd`, `linear_jacobi` |
//! | `problem.matrix_file`, `problem.b_file` | paths (`b` defaults to zero) |
//! | `problem.L` | Lipschitz constant or spectral bound (default `λ_max(A)`) |
//! | `problem.lambda` | ℓ1 weight |
//! | `problem.bounds` | `lo hi`, applied to every coordinate |
//! | `delay.kind` | `zero`, `bounded`, `uniform`, `geometric`, `schedule` |
//! | `delay.tau`, `delay.r`, `delay.C`, `delay.B`, `delay.schedule_file` | model parameters |
//! | `step.kind` | `stochastic_weak`, `stochastic_large`, `generic_stochastic`, `deterministic_adaptive`, `generic_deterministic`, `bounded_truncated`, `fixed` |
//! | `step.c`, `step.gamma`, `step.truncation`, `step.eta` | rule parameters |
//! | `step.epsilon` | `weakest`, `largest`, `power γ`, or a list of values |
//! | `run.mode` | `sim`, `concurrent` |
//! | `run.iterations`, `run.workers`, `run.seed`, `run.metrics_every` | integers |
//! | `out.trace_path` | path |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::blockvec::BlockLayout;
use crate::delays::{tail_probability, DelayKind, DelayModel};
use crate::engine::{RunConfig, RunMode};
use crate::error::{Error, Result};
use crate::linalg::{self, parse_vector, DenseMatrix};
use crate::operators::{FixedPointProblem, OperatorKind, OperatorSpec};
use crate::stepsize::{DelayMode, EpsilonSequence, StepSizePolicy, DEFAULT_TRUNCATION};

pub const DEFAULT_C: f64 = 0.9;
pub const DEFAULT_GAMMA: f64 = 1.0;

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> std::result::Result<Self, ()> {
                match s { $($text => Ok($name::$variant),)+ _ => Err(()) }
            }
        }
    };
}

named_enum!(ProblemKind {
    GradQuadratic => "grad_quadratic",
    ForwardBackwardL1 => "forward_backward_l1",
    ProjectedGradientBox => "projected_gradient_box",
    LinearPsd => "linear_psd",
    LinearJacobi => "linear_jacobi",
});

named_enum!(DelayKindName {
    Zero => "zero",
    Bounded => "bounded",
    Uniform => "uniform",
    Geometric => "geometric",
    Schedule => "schedule",
});

named_enum!(StepKindName {
    StochasticWeak => "stochastic_weak",
    StochasticLarge => "stochastic_large",
    GenericStochastic => "generic_stochastic",
    DeterministicAdaptive => "deterministic_adaptive",
    GenericDeterministic => "generic_deterministic",
    BoundedTruncated => "bounded_truncated",
    Fixed => "fixed",
});

#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonSpec {
    Weakest,
    Largest,
    Power(f64),
    Values(Vec<f64>),
}

impl EpsilonSpec {
    fn parse(s: &str) -> Option<Self> {
        let mut words = s.split_whitespace();
        match words.next()? {
            "weakest" if words.next().is_none() => Some(Self::Weakest),
            "largest" if words.next().is_none() => Some(Self::Largest),
            "power" => {
                let g = words.next()?.parse().ok()?;
                words.next().is_none().then_some(Self::Power(g))
            }
            _ => linalg::parse_vector(s).ok().filter(|v| !v.is_empty()).map(Self::Values),
        }
    }

    fn render(&self) -> String {
        match self {
            Self::Weakest => "weakest".into(),
            Self::Largest => "largest".into(),
            Self::Power(g) => format!("power {g}"),
            Self::Values(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub matrix_file: Option<PathBuf>,
    pub b_file: Option<PathBuf>,
    pub lipschitz: Option<f64>,
    pub lambda: Option<f64>,
    pub bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelaySection {
    pub kind: DelayKindName,
    pub tau: Option<usize>,
    pub r: Option<f64>,
    pub c: Option<f64>,
    pub b: Option<usize>,
    pub schedule_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSection {
    pub kind: StepKindName,
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<EpsilonSpec>,
    pub truncation: Option<usize>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSection {
    pub mode: Option<RunMode>,
    pub iterations: Option<u64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub metrics_every: Option<u64>,
}

/// A parsed experiment file. Absent optional keys stay `None`, so
/// serializing reproduces exactly the keys that were given.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub delay: DelaySection,
    pub step: StepSection,
    pub run: RunSection,
    pub trace_path: Option<PathBuf>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: invalid value {raw:?}")))
}

fn required<T>(key: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
}

fn mode_from_str(key: &str, raw: &str) -> Result<RunMode> {
    match raw {
        "sim" | "simulated" => Ok(RunMode::Simulated),
        "concurrent" => Ok(RunMode::Concurrent),
        _ => Err(Error::InvalidConfig(format!("{key}: invalid value {raw:?}"))),
    }
}

pub fn mode_name(mode: RunMode) -> &'static str {
    match mode {
        RunMode::Simulated => "sim",
        RunMode::Concurrent => "concurrent",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut problem_kind = None;
        let mut delay_kind = None;
        let mut step_kind = None;
        let mut problem = ProblemSection {
            kind: ProblemKind::GradQuadratic,
            matrix_file: None,
            b_file: None,
            lipschitz: None,
            lambda: None,
            bounds: None,
        };
        let mut delay = DelaySection {
            kind: DelayKindName::Zero,
            tau: None,
            r: None,
            c: None,
            b: None,
            schedule_file: None,
        };
        let mut step = StepSection {
            kind: StepKindName::Fixed,
            c: None,
            gamma: None,
            epsilon: None,
            truncation: None,
            eta: None,
        };
        let mut run = RunSection::default();
        let mut trace_path = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate key {key}")));
            }
            match key {
                "problem.kind" => problem_kind = Some(value(key, raw)?),
                "problem.matrix_file" => problem.matrix_file = Some(PathBuf::from(raw)),
                "problem.b_file" => problem.b_file = Some(PathBuf::from(raw)),
                "problem.L" => problem.lipschitz = Some(value(key, raw)?),
                "problem.lambda" => problem.lambda = Some(value(key, raw)?),
                "problem.bounds" => {
                    let v = parse_vector(raw)
                        .ok()
                        .filter(|v| v.len() == 2)
                        .ok_or_else(|| Error::InvalidConfig(format!("{key}: expected `lo hi`, got {raw:?}")))?;
                    problem.bounds = Some((v[0], v[1]));
                }
                "delay.kind" => delay_kind = Some(value(key, raw)?),
                "delay.tau" => delay.tau = Some(value(key, raw)?),
                "delay.r" => delay.r = Some(value(key, raw)?),
                "delay.C" => delay.c = Some(value(key, raw)?),
                "delay.B" => delay.b = Some(value(key, raw)?),
                "delay.schedule_file" => delay.schedule_file = Some(PathBuf::from(raw)),
                "step.kind" => step_kind = Some(value(key, raw)?),
                "step.c" => step.c = Some(value(key, raw)?),
                "step.gamma" => step.gamma = Some(value(key, raw)?),
                "step.epsilon" => {
                    step.epsilon = Some(
                        EpsilonSpec::parse(raw)
                            .ok_or_else(|| Error::InvalidConfig(format!("{key}: invalid value {raw:?}")))?,
                    )
                }
                "step.truncation" => step.truncation = Some(value(key, raw)?),
                "step.eta" => step.eta = Some(value(key, raw)?),
                "run.mode" => run.mode = Some(mode_from_str(key, raw)?),
                "run.iterations" => run.iterations = Some(value(key, raw)?),
                "run.workers" => run.workers = Some(value(key, raw)?),
                "run.seed" => run.seed = Some(value(key, raw)?),
                "run.metrics_every" => run.metrics_every = Some(value(key, raw)?),
                "out.trace_path" => trace_path = Some(PathBuf::from(raw)),
                _ => return Err(Error::InvalidConfig(format!("unknown key {key}"))),
            }
        }
        problem.kind = required("problem.kind", problem_kind)?;
        delay.kind = required("delay.kind", delay_kind)?;
        step.kind = required("step.kind", step_kind)?;
        Ok(Self {
            problem,
            delay,
            step,
            run,
            trace_path,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, v: String| {
            let _ = writeln!(out, "{key} = {v}");
        };
        let p = &self.problem;
        put("problem.kind", p.kind.as_str().into());
        if let Some(f) = &p.matrix_file {
            put("problem.matrix_file", f.display().to_string());
        }
        if let Some(f) = &p.b_file {
            put("problem.b_file", f.display().to_string());
        }
        if let Some(v) = p.lipschitz {
            put("problem.L", v.to_string());
        }
        if let Some(v) = p.lambda {
            put("problem.lambda", v.to_string());
        }
        if let Some((lo, hi)) = p.bounds {
            put("problem.bounds", format!("{lo} {hi}"));
        }
        let d = &self.delay;
        put("delay.kind", d.kind.as_str().into());
        if let Some(v) = d.tau {
            put("delay.tau", v.to_string());
        }
        if let Some(v) = d.r {
            put("delay.r", v.to_string());
        }
        if let Some(v) = d.c {
            put("delay.C", v.to_string());
        }
        if let Some(v) = d.b {
            put("delay.B", v.to_string());
        }
        if let Some(f) = &d.schedule_file {
            put("delay.schedule_file", f.display().to_string());
        }
        let s = &self.step;
        put("step.kind", s.kind.as_str().into());
        if let Some(v) = s.c {
            put("step.c", v.to_string());
        }
        if let Some(v) = s.gamma {
            put("step.gamma", v.to_string());
        }
        if let Some(e) = &s.epsilon {
            put("step.epsilon", e.render());
        }
        if let Some(v) = s.truncation {
            put("step.truncation", v.to_string());
        }
        if let Some(v) = s.eta {
            put("step.eta", v.to_string());
        }
        let r = &self.run;
        if let Some(m) = r.mode {
            put("run.mode", mode_name(m).into());
        }
        if let Some(v) = r.iterations {
            put("run.iterations", v.to_string());
        }
        if let Some(v) = r.workers {
            put("run.workers", v.to_string());
        }
        if let Some(v) = r.seed {
            put("run.seed", v.to_string());
        }
        if let Some(v) = r.metrics_every {
            put("run.metrics_every", v.to_string());
        }
        if let Some(f) = &self.trace_path {
            put("out.trace_path", f.display().to_string());
        }
        out
    }

    fn resolve(&self, key: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        let p = required(key, path.clone())?;
        let full = if p.is_absolute() { p } else { self.base_dir.join(p) };
        if !full.is_file() {
            return Err(Error::InvalidConfig(format!("{key}: file {} not found", full.display())));
        }
        Ok(full)
    }

    /// Trace destination, if configured.
    pub fn trace_destination(&self) -> Option<PathBuf> {
        self.trace_path
            .as_ref()
            .map(|p| if p.is_absolute() { p.clone() } else { self.base_dir.join(p) })
    }

    /// Loads the referenced files and builds the run.
    pub fn build(&self) -> Result<RunConfig> {
        let in_key = |key: &'static str| move |e: Error| Error::InvalidConfig(format!("{key}: {e}"));
        let matrix = DenseMatrix::load(&self.resolve("problem.matrix_file", &self.problem.matrix_file)?)
            .map_err(in_key("problem.matrix_file"))?;
        let n = matrix.n();
        let b = match &self.problem.b_file {
            Some(_) => {
                let text = std::fs::read_to_string(self.resolve("problem.b_file", &self.problem.b_file)?)?;
                parse_vector(&text).map_err(in_key("problem.b_file"))?
            }
            None => vec![0.0; n],
        };
        if b.len() != n {
            return Err(Error::InvalidConfig(format!("problem.b_file: expected {n} entries, got {}", b.len())));
        }
        let op = self.operator(matrix, b)?;
        let m = n;

        let delays = self.delay_model(m)?;
        let policy = self.policy(m, &delays)?;
        let r = &self.run;
        let mut cfg = RunConfig::new(FixedPointProblem::new(Arc::new(op)), delays, policy);
        cfg.mode = r.mode.unwrap_or_default();
        cfg.iterations = r.iterations.unwrap_or(cfg.iterations);
        cfg.workers = r.workers.unwrap_or(cfg.workers);
        cfg.seed = r.seed.unwrap_or(cfg.seed);
        cfg.metrics_every = r.metrics_every.unwrap_or(cfg.metrics_every);
        cfg.validate()?;
        Ok(cfg)
    }

    fn operator(&self, a: DenseMatrix, b: Vec<f64>) -> Result<OperatorSpec> {
        let p = &self.problem;
        let n = a.n();
        let layout = Arc::new(BlockLayout::scalar(n)?);
        let scale = match p.lipschitz {
            Some(l) => l,
            None if p.kind == ProblemKind::LinearJacobi => 1.0,
            None => linalg::lambda_max(&a).value,
        };
        let kind = match p.kind {
            ProblemKind::GradQuadratic => OperatorKind::GradQuadratic,
            ProblemKind::LinearPsd => OperatorKind::LinearPsd,
            ProblemKind::LinearJacobi => OperatorKind::LinearJacobi,
            ProblemKind::ForwardBackwardL1 => OperatorKind::ForwardBackwardL1 {
                lambda: required("problem.lambda", p.lambda)?,
            },
            ProblemKind::ProjectedGradientBox => {
                let (lo, hi) = required("problem.bounds", p.bounds)?;
                OperatorKind::ProjectedGradientBox {
                    lower: vec![lo; n],
                    upper: vec![hi; n],
                }
            }
        };
        OperatorSpec::new(kind, a, b, scale, layout)
            .map_err(|e| Error::InvalidConfig(format!("problem: {e}")))
    }

    fn delay_model(&self, m: usize) -> Result<DelayModel> {
        let d = &self.delay;
        let model = match d.kind {
            DelayKindName::Zero => DelayModel::zero(m)?,
            DelayKindName::Bounded => DelayModel::bounded(m, required("delay.tau", d.tau)?)?,
            DelayKindName::Uniform => DelayModel::uniform(m, required("delay.tau", d.tau)?)?,
            DelayKindName::Geometric => {
                let r = required("delay.r", d.r)?;
                match d.c {
                    Some(c) => DelayModel::new(DelayKind::GeometricTail { c, r }, 2, m)?,
                    None => DelayModel::geometric(m, r)?,
                }
            }
            DelayKindName::Schedule => {
                DelayModel::load_schedule(&self.resolve("delay.schedule_file", &d.schedule_file)?, m)
                    .map_err(|e| Error::InvalidConfig(format!("delay.schedule_file: {e}")))?
            }
        };
        Ok(match d.b {
            Some(b) => model.with_evenness(b),
            None => model,
        })
    }

    fn epsilon(&self, m: usize, delays: &DelayModel) -> Result<EpsilonSequence> {
        let spec = required("step.epsilon", self.step.epsilon.clone())?;
        let tail = || tail_probability(delays).map_err(|e| Error::InvalidConfig(format!("step.epsilon: {e}")));
        match spec {
            EpsilonSpec::Weakest => Ok(EpsilonSequence::weakest(m, tail()?)),
            EpsilonSpec::Largest => Ok(EpsilonSequence::largest(m, tail()?)),
            EpsilonSpec::Power(g) => EpsilonSequence::power_law(g, m),
            EpsilonSpec::Values(v) => EpsilonSequence::values(v),
        }
    }

    fn policy(&self, m: usize, delays: &DelayModel) -> Result<StepSizePolicy> {
        let s = &self.step;
        let c = s.c.unwrap_or(DEFAULT_C);
        let k = s.truncation.unwrap_or(DEFAULT_TRUNCATION);
        let tail = || {
            tail_probability(delays)
                .map_err(|_| Error::InvalidConfig(format!("step.kind: {} needs a stochastic delay model", s.kind.as_str())))
        };
        match s.kind {
            StepKindName::StochasticWeak => StepSizePolicy::stochastic_weak(c, m, tail()?, k),
            StepKindName::StochasticLarge => StepSizePolicy::stochastic_large(c, m, tail()?, k),
            StepKindName::GenericStochastic => StepSizePolicy::generic_stochastic(c, m, tail()?, self.epsilon(m, delays)?, k),
            StepKindName::DeterministicAdaptive => StepSizePolicy::deterministic_adaptive(c, s.gamma.unwrap_or(DEFAULT_GAMMA), m),
            StepKindName::GenericDeterministic => StepSizePolicy::generic_deterministic(c, m, self.epsilon(m, delays)?, k),
            StepKindName::BoundedTruncated => {
                let eps = match required("step.epsilon", s.epsilon.clone())? {
                    EpsilonSpec::Values(v) => v,
                    _ => return Err(Error::InvalidConfig("step.epsilon: bounded_truncated needs explicit values".into())),
                };
                if delays.is_stochastic() {
                    StepSizePolicy::bounded_truncated(c, m, eps, DelayMode::Stochastic, Some(tail()?))
                } else {
                    StepSizePolicy::bounded_truncated(c, m, eps, DelayMode::Deterministic, None)
                }
            }
            StepKindName::Fixed => StepSizePolicy::fixed(required("step.eta", s.eta)?, m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
problem.kind = forward_backward_l1
problem.matrix_file = a.txt
problem.lambda = 0.25
delay.kind = geometric
delay.r = 0.5
delay.B = 3
step.kind = generic_stochastic
step.epsilon = power 1.5
step.truncation = 2000
run.mode = concurrent
run.iterations = 5000
run.workers = 4
run.seed = 17
run.metrics_every = 100
out.trace_path = out/trace.csv
";

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::parse(SAMPLE, Path::new("/tmp")).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text(), Path::new("/tmp")).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.step.epsilon, Some(EpsilonSpec::Power(1.5)));
        assert_eq!(cfg.run.mode, Some(RunMode::Concurrent));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let base = Path::new(".");
        let err = ExperimentConfig::parse("problem.kind = linear_psd\nproblem.colour = red\n", base).unwrap_err();
        assert!(err.to_string().contains("problem.colour"));
        let err = ExperimentConfig::parse("run.seed = 1\nrun.seed = 2\n", base).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = ExperimentConfig::parse("problem.kind = linear_psd\ndelay.kind = zero\n", base).unwrap_err();
        assert!(err.to_string().contains("step.kind"));
        let err = ExperimentConfig::parse("problem.kind = cubic\n", base).unwrap_err();
        assert!(err.to_string().contains("problem.kind"));
    }

    #[test]
    fn missing_matrix_names_the_key() {
        let cfg = ExperimentConfig::parse(
            "problem.kind = linear_psd\nproblem.matrix_file = nope.txt\ndelay.kind = zero\nstep.kind = fixed\nstep.eta = 0.5\n",
            Path::new("/nonexistent"),
        )
        .unwrap();
        let err = cfg.build().unwrap_err();
        assert!(matches!(&err, Error::InvalidConfig(msg) if msg.contains("problem.matrix_file")), "{err}");
    }

    #[test]
    fn epsilon_values_round_trip() {
        let e = EpsilonSpec::parse("1 0.5 2.25").unwrap();
        assert_eq!(e, EpsilonSpec::Values(vec![1.0, 0.5, 2.25]));
        assert_eq!(EpsilonSpec::parse(&e.render()), Some(e));
        assert!(EpsilonSpec::parse("power").is_none());
        assert!(EpsilonSpec::parse("largest 2").is_none());
    }
}
