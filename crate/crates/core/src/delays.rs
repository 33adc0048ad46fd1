//! Delay models: generators of per-block delay vectors `j⃗(k)` and the tail
//! probabilities `P_l = P[j(k) ≥ l]` of their current delay.
//!
//! Stochastic draws are evenly old: the current delay `j(k)` is drawn from
//! the model's scalar law, then a pattern `t⃗ ∈ {0,…,min(B, j(k))}^m` with at
//! least one zero is drawn uniformly and `j(k,i) = j(k) − t_i`. Hence the
//! oldest block has age exactly `j(k)` and ages differ by at most `B`.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::blockvec::DelayVector;
use crate::error::{Error, Result};
use crate::rng;

/// Tail mass treated as "never" when sizing history windows for unbounded laws.
pub const NEGLIGIBLE_TAIL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub enum DelayKind {
    Zero,
    /// Worst case for "any law bounded by τ": the current delay is always τ.
    BoundedArbitrary { tau: usize },
    /// Current delay uniform on `{0, …, τ}`.
    UniformOnRange { tau: usize },
    /// Current delay with `P[j = l] = (1 − r) r^l`; the exposed tail is the
    /// bound `min(1, C r^l / (1 − r))`, exact when `C = 1 − r`.
    GeometricTail { c: f64, r: f64 },
    /// Fixed sequence of delay vectors, cycled.
    DeterministicSchedule(Arc<Vec<DelayVector>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    kind: DelayKind,
    evenness: usize,
    m: usize,
}

impl DelayModel {
    pub fn new(kind: DelayKind, evenness: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDelayModel("block count must be positive".into()));
        }
        match &kind {
            DelayKind::GeometricTail { c, r } => {
                if !(*r > 0.0 && *r < 1.0) {
                    return Err(Error::InvalidDelayModel(format!("geometric ratio must lie in (0,1), got {r}")));
                }
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidDelayModel(format!("geometric constant must be positive, got {c}")));
                }
                if *c < 1.0 - r - 1e-15 {
                    return Err(Error::InvalidDelayModel(format!(
                        "constant C = {c} is below 1 − r = {}; the tail bound would not cover the sampled law",
                        1.0 - r
                    )));
                }
            }
            DelayKind::DeterministicSchedule(entries) => {
                if entries.is_empty() {
                    return Err(Error::EmptySchedule);
                }
                if let Some(pos) = entries.iter().position(|d| d.len() != m) {
                    return Err(Error::InvalidDelayModel(format!(
                        "schedule entry {pos} has {} components, expected {m}",
                        entries[pos].len()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { kind, evenness, m })
    }

    pub fn zero(m: usize) -> Result<Self> {
        Self::new(DelayKind::Zero, 0, m)
    }

    /// Evenness bound defaults to `B = τ`.
    pub fn bounded(m: usize, tau: usize) -> Result<Self> {
        Self::new(DelayKind::BoundedArbitrary { tau }, tau, m)
    }

    /// Evenness bound defaults to `B = τ`.
    pub fn uniform(m: usize, tau: usize) -> Result<Self> {
        Self::new(DelayKind::UniformOnRange { tau }, tau, m)
    }

    /// Exact geometric law (`C = 1 − r`) with evenness bound `B = 2`.
    pub fn geometric(m: usize, r: f64) -> Result<Self> {
        Self::new(DelayKind::GeometricTail { c: 1.0 - r, r }, 2, m)
    }

    pub fn schedule(m: usize, entries: Vec<DelayVector>) -> Result<Self> {
        let b = entries
            .iter()
            .map(|d| {
                let lo = d.components().iter().copied().min().unwrap_or(0);
                d.current() - lo
            })
            .max()
            .unwrap_or(0);
        Self::new(DelayKind::DeterministicSchedule(Arc::new(entries)), b, m)
    }

    /// Reads a schedule file: one line per iteration, `m` integers per line.
    pub fn load_schedule(path: &Path, m: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::schedule(m, parse_schedule(&text)?)
    }

    pub fn with_evenness(mut self, b: usize) -> Self {
        self.evenness = b;
        self
    }

    pub fn kind(&self) -> &DelayKind {
        &self.kind
    }

    pub fn evenness(&self) -> usize {
        self.evenness
    }

    pub fn num_blocks(&self) -> usize {
        self.m
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self.kind, DelayKind::DeterministicSchedule(_))
    }

    /// Largest current delay the model can produce, `None` if unbounded.
    pub fn max_delay(&self) -> Option<usize> {
        match &self.kind {
            DelayKind::Zero => Some(0),
            DelayKind::BoundedArbitrary { tau } | DelayKind::UniformOnRange { tau } => Some(*tau),
            DelayKind::GeometricTail { .. } => None,
            DelayKind::DeterministicSchedule(e) => e.iter().map(DelayVector::current).max(),
        }
    }

    /// Delay bound used to size history windows: the exact maximum for
    /// bounded models, the `1e-15` tail quantile for the geometric law.
    pub fn practical_max_delay(&self) -> usize {
        match &self.kind {
            DelayKind::GeometricTail { r, .. } => (NEGLIGIBLE_TAIL.ln() / r.ln()).ceil() as usize,
            _ => self.max_delay().unwrap_or(0),
        }
    }

    pub fn sampler(&self, seed: u64) -> DelaySampler {
        self.sampler_on_stream(seed, rng::DELAY_STREAM)
    }

    pub fn sampler_on_stream(&self, seed: u64, stream: u64) -> DelaySampler {
        DelaySampler {
            model: self.clone(),
            rng: rng::stream(seed, stream),
        }
    }
}

pub fn parse_schedule(text: &str) -> Result<Vec<DelayVector>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad delay {t:?}"))))
                .collect::<Result<Vec<_>>>()
                .map(DelayVector)
        })
        .collect()
}

/// `P_l = P[j(k) ≥ l]` of a stochastic delay law.
#[derive(Debug, Clone, PartialEq)]
pub enum TailDistribution {
    Zero,
    Bounded { tau: usize },
    Uniform { tau: usize },
    Geometric { c: f64, r: f64 },
    /// Explicit values `P_0, P_1, …`; zero beyond the list.
    Table(Vec<f64>),
}

impl TailDistribution {
    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDelayModel("tail probabilities must lie in [0,1]".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidDelayModel("tail probabilities must be nonincreasing".into()));
        }
        Ok(TailDistribution::Table(values))
    }

    pub fn p(&self, l: usize) -> f64 {
        if l == 0 {
            return 1.0;
        }
        match self {
            TailDistribution::Zero => 0.0,
            TailDistribution::Bounded { tau } => if l <= *tau { 1.0 } else { 0.0 },
            TailDistribution::Uniform { tau } => {
                if l <= *tau {
                    1.0 - l as f64 / (*tau as f64 + 1.0)
                } else {
                    0.0
                }
            }
            TailDistribution::Geometric { c, r } => (c * r.powi(l as i32) / (1.0 - r)).min(1.0),
            TailDistribution::Table(v) => v.get(l).copied().unwrap_or(0.0),
        }
    }

    /// Last `l` with `P_l > 0`, `None` when the support is unbounded.
    pub fn support(&self) -> Option<usize> {
        match self {
            TailDistribution::Zero => Some(0),
            TailDistribution::Bounded { tau } | TailDistribution::Uniform { tau } => Some(*tau),
            TailDistribution::Geometric { .. } => None,
            TailDistribution::Table(v) => Some(v.iter().rposition(|&p| p > 0.0).unwrap_or(0)),
        }
    }
}

pub fn tail_probability(model: &DelayModel) -> Result<TailDistribution> {
    Ok(match model.kind() {
        DelayKind::Zero => TailDistribution::Zero,
        DelayKind::BoundedArbitrary { tau } => TailDistribution::Bounded { tau: *tau },
        DelayKind::UniformOnRange { tau } => TailDistribution::Uniform { tau: *tau },
        DelayKind::GeometricTail { c, r } => TailDistribution::Geometric { c: *c, r: *r },
        DelayKind::DeterministicSchedule(_) => return Err(Error::DeterministicModel),
    })
}

/// Maximum component of a delay vector.
pub fn current_delay(d: &DelayVector) -> usize {
    d.current()
}

/// Owns one RNG stream; one sampler per engine thread.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: DelayModel,
    rng: ChaCha8Rng,
}

impl DelaySampler {
    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    /// `j⃗(k)`.
    pub fn sample(&mut self, k: u64) -> DelayVector {
        let m = self.model.m;
        let current = match &self.model.kind {
            DelayKind::Zero => return DelayVector::zeros(m),
            DelayKind::DeterministicSchedule(entries) => {
                return entries[(k % entries.len() as u64) as usize].clone();
            }
            DelayKind::BoundedArbitrary { tau } => *tau,
            DelayKind::UniformOnRange { tau } => self.rng.random_range(0..=*tau),
            DelayKind::GeometricTail { r, .. } => {
                let law = Geometric::new(1.0 - r).expect("r validated in (0,1)");
                law.sample(&mut self.rng) as usize
            }
        };
        let spread = self.model.evenness.min(current);
        if spread == 0 || m == 1 {
            return DelayVector::constant(m, current);
        }
        let mut pattern = vec![0usize; m];
        loop {
            for t in pattern.iter_mut() {
                *t = self.rng.random_range(0..=spread);
            }
            if pattern.contains(&0) {
                break;
            }
        }
        DelayVector(pattern.into_iter().map(|t| current - t).collect())
    }
}
