//! Step sizes for asynchronous block updates and the coefficients of the
//! matching Lyapunov function.
//!
//! Every rule has the shape `η = c·h` with `c ∈ (0,1)` and `h ≤ 1` built from
//! a tunable positive sequence `ε_1, ε_2, …`:
//!
//! * stochastic delays (tail `P_l`): `h = (1 + (1/m)Σ ε_l P_l + Σ 1/ε_l)⁻¹`,
//!   Lyapunov coefficients `c_i = Σ_{l≥i} ε_l P_l`;
//! * deterministic delays (current delay `j`): `h_j = (1 + (1/m)Σ ε_l + Σ_{i≤j} 1/ε_i)⁻¹`,
//!   coefficients `c_i = Σ_{l≥i} ε_l`.
//!
//! Infinite series are truncated at `K` terms. Truncation is accepted only
//! when the omitted remainder is provably or numerically below
//! [`REMAINDER_TOL`]: either the terms vanish identically past the support,
//! an analytic tail is known (power laws, via Euler–Maclaurin), or the last
//! `K/2` partial-sum increments total less than the tolerance.

use std::fmt;
use std::sync::Arc;

use crate::delays::TailDistribution;
use crate::error::{Error, Result};

pub const DEFAULT_TRUNCATION: usize = 1000;
pub const REMAINDER_TOL: f64 = 1e-10;

/// Which family of delay assumptions a sequence or policy is tied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonKind {
    /// `ε_l = √m·P_l^{-1/2}·l^{-1/2}`: needs only `Σ (l P_l)^{1/2} < ∞`.
    WeakestCondition,
    /// `ε_l = √m·P_l^{-1/2}`: yields the largest constant step.
    LargestStep,
    /// `ε_l = √m·l^{-(1+γ)}`: summable choice for deterministic delays.
    PowerLaw(f64),
    Custom,
}

impl fmt::Display for EpsilonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonKind::WeakestCondition => write!(f, "weakest"),
            EpsilonKind::LargestStep => write!(f, "largest"),
            EpsilonKind::PowerLaw(g) => write!(f, "power_law({g})"),
            EpsilonKind::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Clone)]
enum Generator {
    Weakest { sqrt_m: f64, tail: TailDistribution },
    Largest { sqrt_m: f64, tail: TailDistribution },
    PowerLaw { gamma: f64, sqrt_m: f64 },
    Values(Arc<[f64]>),
    Func(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

/// The parameter sequence `ε_1, ε_2, …` (1-based).
///
/// Canonical stochastic choices take `ε_l = ∞` where `P_l = 0`; such terms
/// contribute nothing to either sum. An explicit finite list is a finite
/// sequence: nothing is contributed past its end.
#[derive(Clone)]
pub struct EpsilonSequence {
    kind: EpsilonKind,
    gen: Generator,
}

impl fmt::Debug for EpsilonSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EpsilonSequence({})", self.kind)
    }
}

impl EpsilonSequence {
    pub fn weakest(m: usize, tail: TailDistribution) -> Self {
        Self {
            kind: EpsilonKind::WeakestCondition,
            gen: Generator::Weakest { sqrt_m: (m as f64).sqrt(), tail },
        }
    }

    pub fn largest(m: usize, tail: TailDistribution) -> Self {
        Self {
            kind: EpsilonKind::LargestStep,
            gen: Generator::Largest { sqrt_m: (m as f64).sqrt(), tail },
        }
    }

    pub fn power_law(gamma: f64, m: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameters(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            kind: EpsilonKind::PowerLaw(gamma),
            gen: Generator::PowerLaw { gamma, sqrt_m: (m as f64).sqrt() },
        })
    }

    /// Explicit values `ε_1, …, ε_n`.
    pub fn values(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameters(format!(
                "epsilon_{} = {} is not positive",
                pos + 1,
                values[pos]
            )));
        }
        Ok(Self {
            kind: EpsilonKind::Custom,
            gen: Generator::Values(values.into()),
        })
    }

    /// An infinite sequence given by a closure `l ↦ ε_l` (`l ≥ 1`).
    pub fn from_fn(f: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: EpsilonKind::Custom,
            gen: Generator::Func(Arc::new(f)),
        }
    }

    pub fn kind(&self) -> EpsilonKind {
        self.kind
    }

    /// Length of an explicit list; `None` for infinite sequences.
    pub fn finite_len(&self) -> Option<usize> {
        match &self.gen {
            Generator::Values(v) => Some(v.len()),
            _ => None,
        }
    }

    /// `ε_l`, `None` past the end of a finite list.
    pub fn get(&self, l: usize) -> Option<f64> {
        debug_assert!(l >= 1);
        Some(match &self.gen {
            Generator::Weakest { sqrt_m, tail } => sqrt_m / (tail.p(l) * l as f64).sqrt(),
            Generator::Largest { sqrt_m, tail } => sqrt_m / tail.p(l).sqrt(),
            Generator::PowerLaw { gamma, sqrt_m } => sqrt_m * (l as f64).powf(-(1.0 + gamma)),
            Generator::Values(v) => return v.get(l - 1).copied(),
            Generator::Func(f) => f(l),
        })
    }

    /// `1/ε_l`, zero for `ε_l = ∞` or past the end of a list.
    pub fn reciprocal(&self, l: usize) -> f64 {
        match self.get(l) {
            Some(e) if e.is_infinite() => 0.0,
            Some(e) => 1.0 / e,
            None => 0.0,
        }
    }

    /// `ε_l·P_l`, zero whenever `P_l = 0` or past the end of a list.
    pub fn weighted(&self, l: usize, tail: &TailDistribution) -> f64 {
        let p = tail.p(l);
        if p == 0.0 {
            return 0.0;
        }
        match (&self.gen, self.get(l)) {
            // closed forms avoid ∞·0 and keep the canonical identities exact
            (Generator::Largest { sqrt_m, tail: own }, _) if own == tail => sqrt_m * p.sqrt(),
            (Generator::Weakest { sqrt_m, tail: own }, _) if own == tail => sqrt_m * (p / l as f64).sqrt(),
            (_, Some(e)) => e * p,
            (_, None) => 0.0,
        }
    }

    /// `ε_l` for deterministic sums: zero past the end of a list.
    fn plain(&self, l: usize) -> f64 {
        self.get(l).unwrap_or(0.0)
    }

    /// `Σ_{l>K} ε_l` with an error bound, when known analytically.
    fn analytic_tail(&self, k: usize) -> Option<(f64, f64)> {
        match &self.gen {
            Generator::PowerLaw { gamma, sqrt_m } => {
                let (t, err) = zeta_tail(1.0 + gamma, k);
                Some((sqrt_m * t, sqrt_m * err))
            }
            Generator::Values(v) if v.len() <= k => Some((0.0, 0.0)),
            _ => None,
        }
    }
}

/// `Σ_{l=K+1}^∞ l^{-s}` by Euler–Maclaurin at `a = K + 1`, with the size of
/// the first omitted correction as error bound.
fn zeta_tail(s: f64, k: usize) -> (f64, f64) {
    let a = k as f64 + 1.0;
    let integral = a.powf(1.0 - s) / (s - 1.0);
    let half = 0.5 * a.powf(-s);
    let b2 = s * a.powf(-s - 1.0) / 12.0;
    let b4 = s * (s + 1.0) * (s + 2.0) * a.powf(-s - 3.0) / 720.0;
    let err = s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * a.powf(-s - 5.0) / 30240.0;
    (integral + half + b2 - b4, err)
}

/// A truncated series: partial sum and an estimate of the omitted remainder.
#[derive(Debug, Clone, Copy)]
struct Truncated {
    sum: f64,
    remainder: f64,
}

/// `Σ_{l=1}^K f(l)` with the Cauchy estimate `Σ_{l>K/2}^K f(l)` of the tail.
fn truncated_sum(k: usize, f: impl Fn(usize) -> f64) -> Truncated {
    let mut sum = 0.0;
    let mut late = 0.0;
    for l in 1..=k {
        let t = f(l);
        sum += t;
        if l > k / 2 {
            late += t;
        }
    }
    Truncated { sum, remainder: late.abs() }
}

fn check_truncation(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidTruncation(format!("truncation must be at least 2, got {k}")));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameters("block count must be positive".into()));
    }
    Ok(())
}

fn finite_support_within(tail: &TailDistribution, k: usize) -> bool {
    tail.support().is_some_and(|s| s <= k)
}

/// Weak-condition rule: `h = (1 + (1/√m) Σ P_l^{1/2}(l^{1/2} + l^{-1/2}))⁻¹`.
pub fn stochastic_h_weak(tail: &TailDistribution, m: usize, k: usize) -> Result<f64> {
    check_m(m)?;
    check_truncation(k)?;
    let sqrt_m = (m as f64).sqrt();
    let s = truncated_sum(k, |l| {
        let lf = l as f64;
        tail.p(l).sqrt() * (lf.sqrt() + 1.0 / lf.sqrt()) / sqrt_m
    });
    if !finite_support_within(tail, k) && s.remainder >= REMAINDER_TOL {
        return Err(Error::NonSummableTail { truncation: k, remainder: s.remainder });
    }
    Ok(1.0 / (1.0 + s.sum))
}

/// Large-step rule: `h = (1 + (2/√m) Σ P_l^{1/2})⁻¹`.
pub fn stochastic_h_large(tail: &TailDistribution, m: usize, k: usize) -> Result<f64> {
    check_m(m)?;
    check_truncation(k)?;
    let sqrt_m = (m as f64).sqrt();
    let s = truncated_sum(k, |l| 2.0 * tail.p(l).sqrt() / sqrt_m);
    if !finite_support_within(tail, k) {
        // the condition Σ l·P_l^{1/2} < ∞ is checked as well
        let cond = truncated_sum(k, |l| l as f64 * tail.p(l).sqrt());
        if s.remainder >= REMAINDER_TOL || cond.remainder >= REMAINDER_TOL * cond.sum.max(1.0) {
            return Err(Error::NonSummableTail {
                truncation: k,
                remainder: s.remainder.max(cond.remainder),
            });
        }
    }
    Ok(1.0 / (1.0 + s.sum))
}

/// `h = (1 + (1/m) Σ ε_l P_l + Σ 1/ε_l)⁻¹` after checking that `Σ 1/ε_l`
/// and `Σ c_i = Σ l ε_l P_l` converge.
pub fn generic_stochastic_h(eps: &EpsilonSequence, tail: &TailDistribution, m: usize, k: usize) -> Result<f64> {
    check_m(m)?;
    check_truncation(k)?;
    let mf = m as f64;
    let weighted = truncated_sum(k, |l| eps.weighted(l, tail) / mf);
    let reciprocal = truncated_sum(k, |l| eps.reciprocal(l));
    let coeff_mass = truncated_sum(k, |l| l as f64 * eps.weighted(l, tail) / mf);
    if weighted.remainder >= REMAINDER_TOL {
        return Err(Error::SummabilityViolated {
            what: "sum of epsilon_l * P_l",
            truncation: k,
            remainder: weighted.remainder,
        });
    }
    if reciprocal.remainder >= REMAINDER_TOL {
        return Err(Error::SummabilityViolated {
            what: "sum of 1/epsilon_l",
            truncation: k,
            remainder: reciprocal.remainder,
        });
    }
    if coeff_mass.remainder >= REMAINDER_TOL * coeff_mass.sum.max(1.0) {
        return Err(Error::SummabilityViolated {
            what: "sum of Lyapunov coefficients",
            truncation: k,
            remainder: coeff_mass.remainder,
        });
    }
    Ok(1.0 / (1.0 + weighted.sum + reciprocal.sum))
}

fn validate_c(c: f64) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameters(format!("c must lie in (0,1), got {c}")));
    }
    Ok(())
}

/// Closed-form delay-adaptive step
/// `η = c(1 + (1/√m)(1 + 1/γ + (j+1)^{2+γ}/(2+γ)))⁻¹`.
pub fn deterministic_eta(j: usize, c: f64, gamma: f64, m: usize) -> Result<f64> {
    validate_c(c)?;
    check_m(m)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameters(format!("gamma must be positive, got {gamma}")));
    }
    let growth = (j as f64 + 1.0).powf(2.0 + gamma) / (2.0 + gamma);
    Ok(c / (1.0 + (1.0 + 1.0 / gamma + growth) / (m as f64).sqrt()))
}

/// `(1/m) Σ_{l≥1} ε_l`, truncated at `K` with the tail added analytically
/// when known.
fn deterministic_mass(eps: &EpsilonSequence, m: usize, k: usize) -> Result<f64> {
    let mf = m as f64;
    let head = truncated_sum(k, |l| eps.plain(l) / mf);
    let (tail, err) = match eps.analytic_tail(k) {
        Some((t, e)) => (t / mf, e / mf),
        None => (0.0, head.remainder),
    };
    if err >= REMAINDER_TOL || !(head.sum + tail).is_finite() {
        return Err(Error::SummabilityViolated {
            what: "sum of epsilon_l",
            truncation: k,
            remainder: err,
        });
    }
    Ok(head.sum + tail)
}

fn reciprocal_prefix(eps: &EpsilonSequence, j: usize) -> Result<f64> {
    let mut s = 0.0;
    for i in 1..=j {
        match eps.get(i) {
            Some(e) => s += 1.0 / e,
            None => {
                return Err(Error::InvalidTruncation(format!(
                    "delay {j} exceeds the {} supplied epsilon values",
                    eps.finite_len().unwrap_or(0)
                )))
            }
        }
    }
    Ok(s)
}

/// `h_j = (1 + (1/m) Σ ε_l + Σ_{i≤j} 1/ε_i)⁻¹`.
pub fn generic_deterministic_h(eps: &EpsilonSequence, j: usize, m: usize, k: usize) -> Result<f64> {
    check_m(m)?;
    check_truncation(k)?;
    let mass = deterministic_mass(eps, m, k)?;
    Ok(1.0 / (1.0 + mass + reciprocal_prefix(eps, j)?))
}

/// Truncated-metric step for delays bounded by `τ = eps.len()`.
///
/// Stochastic: `η = c(1 + Σ_{l≤τ}((1/m)ε_l P_l + 1/ε_l))⁻¹`.
/// Deterministic: `η = c(1 + Σ_{i≤j}((1/m)ε_i + 1/ε_i))⁻¹`, requiring `j ≤ τ`.
pub fn bounded_truncated_eta(
    eps: &[f64],
    tail: Option<&TailDistribution>,
    m: usize,
    mode: DelayMode,
    j: usize,
    c: f64,
) -> Result<f64> {
    validate_c(c)?;
    check_m(m)?;
    if let Some(pos) = eps.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidTruncation(format!("epsilon_{} must be positive and finite", pos + 1)));
    }
    let mf = m as f64;
    let sum: f64 = match mode {
        DelayMode::Stochastic => {
            let tail = tail.ok_or_else(|| {
                Error::InvalidTruncation("stochastic mode requires a tail distribution".into())
            })?;
            eps.iter()
                .enumerate()
                .map(|(idx, e)| e * tail.p(idx + 1) / mf + 1.0 / e)
                .sum()
        }
        DelayMode::Deterministic => {
            if j > eps.len() {
                return Err(Error::InvalidTruncation(format!(
                    "current delay {j} exceeds the truncation tau = {}",
                    eps.len()
                )));
            }
            eps[..j].iter().map(|e| e / mf + 1.0 / e).sum()
        }
    };
    Ok(c / (1.0 + sum))
}

/// `c_1, …, c_K` with `c_i = Σ_{l=i}^{K} ε_l P_l` (stochastic, `tail` given)
/// or `Σ_{l=i}^{K} ε_l` (deterministic, `tail = None`). Accumulated from the
/// back, so `c_{i+1} + w_i = c_i` holds exactly in floating point.
pub fn lyapunov_coefficients(eps: &EpsilonSequence, tail: Option<&TailDistribution>, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidTruncation("at least one coefficient is required".into()));
    }
    let weight = |l: usize| match tail {
        Some(t) => eps.weighted(l, t),
        None => eps.plain(l),
    };
    let weights: Vec<f64> = (1..=k).map(weight).collect();
    let exact = match tail {
        Some(t) => finite_support_within(t, k) || eps.finite_len().is_some_and(|n| n <= k),
        None => eps.analytic_tail(k).is_some(),
    };
    if !exact && k >= 2 {
        let total: f64 = weights.iter().sum();
        let late: f64 = weights[k / 2..].iter().sum();
        if !total.is_finite() || late >= REMAINDER_TOL * total.max(1.0) {
            return Err(Error::SummabilityViolated {
                what: "Lyapunov coefficients",
                truncation: k,
                remainder: late,
            });
        }
    }
    let mut coeffs = vec![0.0; k];
    let mut acc = 0.0;
    for i in (0..k).rev() {
        acc += weights[i];
        coeffs[i] = acc;
    }
    Ok(coeffs)
}

#[derive(Debug, Clone)]
pub enum StepKind {
    StochasticWeak,
    StochasticLarge,
    GenericStochastic(EpsilonSequence),
    DeterministicAdaptive { gamma: f64 },
    GenericDeterministic(EpsilonSequence),
    BoundedTruncated { eps: Vec<f64>, mode: DelayMode },
    /// A constant step outside the convergence guarantees (hand examples,
    /// falsification runs). Not clamped to `(0, c]`.
    Fixed { eta: f64 },
}

/// What the Lyapunov checker needs to verify runs of a policy.
#[derive(Debug, Clone)]
pub struct DescentSetup {
    pub eps: EpsilonSequence,
    pub mode: DelayMode,
    pub tail: Option<TailDistribution>,
}

/// Immutable step-size rule `j ↦ η`.
#[derive(Debug, Clone)]
pub struct StepSizePolicy {
    kind: StepKind,
    c: f64,
    m: usize,
    truncation: usize,
    tail: Option<TailDistribution>,
    /// `c·h` for delay-independent rules.
    constant: Option<f64>,
    /// `(1/m)Σ ε_l` and prefix sums of `1/ε_i` for the generic deterministic rule.
    mass: f64,
    prefix: Vec<f64>,
}

impl StepSizePolicy {
    fn base(kind: StepKind, c: f64, m: usize, truncation: usize, tail: Option<TailDistribution>) -> Result<Self> {
        check_m(m)?;
        Ok(Self {
            kind,
            c,
            m,
            truncation,
            tail,
            constant: None,
            mass: 0.0,
            prefix: Vec::new(),
        })
    }

    pub fn stochastic_weak(c: f64, m: usize, tail: TailDistribution, k: usize) -> Result<Self> {
        validate_c(c)?;
        let h = stochastic_h_weak(&tail, m, k)?;
        let mut p = Self::base(StepKind::StochasticWeak, c, m, k, Some(tail))?;
        p.constant = Some(c * h);
        Ok(p)
    }

    pub fn stochastic_large(c: f64, m: usize, tail: TailDistribution, k: usize) -> Result<Self> {
        validate_c(c)?;
        let h = stochastic_h_large(&tail, m, k)?;
        let mut p = Self::base(StepKind::StochasticLarge, c, m, k, Some(tail))?;
        p.constant = Some(c * h);
        Ok(p)
    }

    pub fn generic_stochastic(c: f64, m: usize, tail: TailDistribution, eps: EpsilonSequence, k: usize) -> Result<Self> {
        validate_c(c)?;
        let h = generic_stochastic_h(&eps, &tail, m, k)?;
        let mut p = Self::base(StepKind::GenericStochastic(eps), c, m, k, Some(tail))?;
        p.constant = Some(c * h);
        Ok(p)
    }

    pub fn deterministic_adaptive(c: f64, gamma: f64, m: usize) -> Result<Self> {
        deterministic_eta(0, c, gamma, m)?;
        Self::base(StepKind::DeterministicAdaptive { gamma }, c, m, DEFAULT_TRUNCATION, None)
    }

    pub fn generic_deterministic(c: f64, m: usize, eps: EpsilonSequence, k: usize) -> Result<Self> {
        validate_c(c)?;
        check_truncation(k)?;
        let mass = deterministic_mass(&eps, m, k)?;
        let limit = eps.finite_len().unwrap_or(k);
        let mut prefix = Vec::with_capacity(limit + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for i in 1..=limit {
            acc += eps.reciprocal(i);
            prefix.push(acc);
        }
        let mut p = Self::base(StepKind::GenericDeterministic(eps), c, m, k, None)?;
        p.mass = mass;
        p.prefix = prefix;
        Ok(p)
    }

    /// `tail` is required in stochastic mode.
    pub fn bounded_truncated(
        c: f64,
        m: usize,
        eps: Vec<f64>,
        mode: DelayMode,
        tail: Option<TailDistribution>,
    ) -> Result<Self> {
        let eta = bounded_truncated_eta(&eps, tail.as_ref(), m, mode, 0, c)?;
        let tau = eps.len();
        let mut p = Self::base(StepKind::BoundedTruncated { eps, mode }, c, m, tau, tail)?;
        if mode == DelayMode::Stochastic {
            p.constant = Some(eta);
        }
        Ok(p)
    }

    pub fn fixed(eta: f64, m: usize) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameters(format!("step must be positive, got {eta}")));
        }
        let mut p = Self::base(StepKind::Fixed { eta }, 1.0, m, DEFAULT_TRUNCATION, None)?;
        p.constant = Some(eta);
        Ok(p)
    }

    pub fn kind(&self) -> &StepKind {
        &self.kind
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn num_blocks(&self) -> usize {
        self.m
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn tail(&self) -> Option<&TailDistribution> {
        self.tail.as_ref()
    }

    /// Whether the rule depends on the current delay.
    pub fn is_delay_adaptive(&self) -> bool {
        self.constant.is_none()
    }

    /// `η` for current delay `j`.
    pub fn eta(&self, j: usize) -> Result<f64> {
        if let Some(eta) = self.constant {
            return Ok(eta);
        }
        match &self.kind {
            StepKind::DeterministicAdaptive { gamma } => deterministic_eta(j, self.c, *gamma, self.m),
            StepKind::GenericDeterministic(eps) => {
                let recip = match self.prefix.get(j) {
                    Some(&s) => s,
                    None => reciprocal_prefix(eps, j)?,
                };
                Ok(self.c / (1.0 + self.mass + recip))
            }
            StepKind::BoundedTruncated { eps, mode } => {
                bounded_truncated_eta(eps, self.tail.as_ref(), self.m, *mode, j, self.c)
            }
            _ => unreachable!("delay-independent rules carry a constant"),
        }
    }

    /// The `h` the step is measured against: `η(j)/c`.
    pub fn h(&self, j: usize) -> Result<f64> {
        Ok(self.eta(j)? / self.c)
    }

    /// The `ε` sequence and delay mode whose Lyapunov function certifies
    /// this rule; `None` for fixed steps.
    pub fn descent_setup(&self) -> Result<Option<DescentSetup>> {
        let m = self.m;
        let stochastic = |eps| DescentSetup {
            eps,
            mode: DelayMode::Stochastic,
            tail: self.tail.clone(),
        };
        let deterministic = |eps| DescentSetup {
            eps,
            mode: DelayMode::Deterministic,
            tail: None,
        };
        Ok(match &self.kind {
            StepKind::StochasticWeak => Some(stochastic(EpsilonSequence::weakest(m, self.tail.clone().expect("tail")))),
            StepKind::StochasticLarge => Some(stochastic(EpsilonSequence::largest(m, self.tail.clone().expect("tail")))),
            StepKind::GenericStochastic(eps) => Some(stochastic(eps.clone())),
            StepKind::DeterministicAdaptive { gamma } => Some(deterministic(EpsilonSequence::power_law(*gamma, m)?)),
            StepKind::GenericDeterministic(eps) => Some(deterministic(eps.clone())),
            StepKind::BoundedTruncated { eps, mode } => {
                let seq = EpsilonSequence::values(eps.clone())?;
                Some(match mode {
                    DelayMode::Stochastic => stochastic(seq),
                    DelayMode::Deterministic => deterministic(seq),
                })
            }
            StepKind::Fixed { .. } => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_delay_gives_unit_h() {
        let t = TailDistribution::Zero;
        assert_eq!(stochastic_h_weak(&t, 7, 100).unwrap(), 1.0);
        assert_eq!(stochastic_h_large(&t, 7, 100).unwrap(), 1.0);
    }

    #[test]
    fn weak_rule_single_step_delay() {
        let t = TailDistribution::Bounded { tau: 1 };
        let h = stochastic_h_weak(&t, 100, 1000).unwrap();
        assert!(close(h, 1.0 / 1.2, 1e-15));
    }

    #[test]
    fn large_rule_bounded_delay_matches_closed_form() {
        let t = TailDistribution::Bounded { tau: 4 };
        let h = stochastic_h_large(&t, 100, 1000).unwrap();
        assert!(close(h, 1.0 / 1.8, 1e-15));
    }

    #[test]
    fn geometric_truncation_is_stable() {
        let t = TailDistribution::Geometric { c: 0.75, r: 0.25 };
        let a = stochastic_h_weak(&t, 10_000, 200).unwrap();
        let b = stochastic_h_weak(&t, 10_000, 400).unwrap();
        assert!(close(a, b, 1e-12));
    }

    #[test]
    fn heavy_tail_is_rejected() {
        // P_l = 1/l²: Σ l·P_l^{1/2} diverges
        let p: Vec<f64> = (0..5000).map(|l| if l == 0 { 1.0 } else { 1.0 / (l * l) as f64 }).collect();
        let t = TailDistribution::table(p).unwrap();
        assert!(matches!(stochastic_h_large(&t, 4, 4000), Err(Error::NonSummableTail { .. })));
    }

    #[test]
    fn generic_stochastic_hand_example() {
        let eps = EpsilonSequence::from_fn(|l| 2f64.powi(l as i32));
        let h = generic_stochastic_h(&eps, &TailDistribution::Bounded { tau: 2 }, 4, 1000).unwrap();
        assert!(close(h, 1.0 / 3.5, 1e-15));
    }

    #[test]
    fn canonical_choices_reproduce_closed_forms() {
        for r in [0.25, 0.5, 0.9] {
            let t = TailDistribution::Geometric { c: 1.0 - r, r };
            for m in [4, 100, 10_000] {
                let k = 3000;
                let weak = generic_stochastic_h(&EpsilonSequence::weakest(m, t.clone()), &t, m, k).unwrap();
                assert!(close(weak, stochastic_h_weak(&t, m, k).unwrap(), 1e-12));
                let large = generic_stochastic_h(&EpsilonSequence::largest(m, t.clone()), &t, m, k).unwrap();
                assert!(close(large, stochastic_h_large(&t, m, k).unwrap(), 1e-12));
            }
        }
    }

    #[test]
    fn deterministic_eta_examples() {
        let eta = deterministic_eta(0, 0.5, 1.0, 10_000).unwrap();
        assert!(close(eta, 0.5 / (1.0 + (2.0 + 1.0 / 3.0) / 100.0), 1e-15));
        assert!(close(eta, 0.48860, 5e-6));
        assert!(deterministic_eta(0, 0.9, 1.0, 100_000_000).unwrap() >= 0.89);
        let mut prev = f64::INFINITY;
        for j in 0..200 {
            let e = deterministic_eta(j, 0.9, 1.0, 50).unwrap();
            assert!(e < prev && e > 0.0);
            prev = e;
        }
        assert!(deterministic_eta(0, 1.0, 1.0, 4).is_err());
        assert!(deterministic_eta(0, 0.5, 0.0, 4).is_err());
    }

    #[test]
    fn generic_deterministic_sum_dominates_integral_form() {
        let m = 10_000;
        let eps = EpsilonSequence::power_law(1.0, m).unwrap();
        for j in 0..=30 {
            let summed = generic_deterministic_h(&eps, j, m, 1000).unwrap();
            let closed = deterministic_eta(j, 0.5, 1.0, m).unwrap() / 0.5;
            assert!(summed >= closed, "j={j}: {summed} < {closed}");
        }
    }

    #[test]
    fn generic_deterministic_empty_prefix() {
        let eps = EpsilonSequence::values(vec![1.0, 2.0, 0.5]).unwrap();
        let h0 = generic_deterministic_h(&eps, 0, 4, 1000).unwrap();
        assert!(close(h0, 1.0 / (1.0 + 3.5 / 4.0), 1e-15));
        assert!(matches!(generic_deterministic_h(&eps, 4, 4, 1000), Err(Error::InvalidTruncation(_))));
    }

    #[test]
    fn growing_epsilon_is_rejected() {
        let eps = EpsilonSequence::from_fn(|l| 2f64.powi(l as i32));
        assert!(matches!(
            generic_deterministic_h(&eps, 2, 4, 1000),
            Err(Error::SummabilityViolated { .. })
        ));
    }

    #[test]
    fn power_law_tail_makes_truncation_invisible() {
        let eps = EpsilonSequence::power_law(1.0, 100).unwrap();
        let a = generic_deterministic_h(&eps, 3, 100, 500).unwrap();
        let b = generic_deterministic_h(&eps, 3, 100, 1000).unwrap();
        assert!(close(a, b, 1e-13));
        // Σ l^{-2} = π²/6
        let exact = 1.0 / (1.0 + std::f64::consts::PI.powi(2) / 6.0 / 10.0 + (1.0 + 4.0 + 9.0) / 10.0);
        assert!(close(a, exact, 1e-13));
    }

    #[test]
    fn bounded_truncated_examples() {
        let t = TailDistribution::Bounded { tau: 1 };
        assert_eq!(bounded_truncated_eta(&[], Some(&t), 9, DelayMode::Stochastic, 0, 0.7).unwrap(), 0.7);
        let eta = bounded_truncated_eta(&[10.0], Some(&t), 100, DelayMode::Stochastic, 0, 0.6).unwrap();
        assert!(close(eta, 0.6 / 1.2, 1e-15));
        assert_eq!(bounded_truncated_eta(&[3.0, 5.0], None, 4, DelayMode::Deterministic, 0, 0.4).unwrap(), 0.4);
        assert!(bounded_truncated_eta(&[3.0], None, 4, DelayMode::Deterministic, 2, 0.4).is_err());
        assert!(bounded_truncated_eta(&[3.0], None, 4, DelayMode::Stochastic, 0, 0.4).is_err());
    }

    #[test]
    fn coefficient_hand_example() {
        let eps = EpsilonSequence::values(vec![1.0, 1.0]).unwrap();
        let t = TailDistribution::table(vec![1.0, 1.0, 0.5]).unwrap();
        assert_eq!(lyapunov_coefficients(&eps, Some(&t), 2).unwrap(), vec![1.5, 0.5]);
        let c = lyapunov_coefficients(&eps, Some(&t), 4).unwrap();
        assert_eq!(c, vec![1.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn coefficients_vanish_past_bounded_support() {
        let t = TailDistribution::Bounded { tau: 3 };
        let c = lyapunov_coefficients(&EpsilonSequence::largest(16, t.clone()), Some(&t), 10).unwrap();
        assert!(c[2] > 0.0);
        assert_eq!(c[3], 0.0);
    }

    #[test]
    fn policies_stay_in_range() {
        let t = TailDistribution::Geometric { c: 0.5, r: 0.5 };
        let policies = [
            StepSizePolicy::stochastic_weak(0.9, 16, t.clone(), 1000).unwrap(),
            StepSizePolicy::stochastic_large(0.9, 16, t.clone(), 1000).unwrap(),
            StepSizePolicy::deterministic_adaptive(0.9, 1.0, 16).unwrap(),
            StepSizePolicy::generic_deterministic(0.9, 16, EpsilonSequence::power_law(0.5, 16).unwrap(), 1000).unwrap(),
        ];
        for p in &policies {
            for j in [0, 1, 5, 50, 2000] {
                let eta = p.eta(j).unwrap();
                assert!(eta > 0.0 && eta < 0.9, "{:?} j={j}: {eta}", p.kind());
            }
        }
        assert!(StepSizePolicy::stochastic_large(1.0, 16, t, 1000).is_err());
    }
}
