//! The Lyapunov function
//! `ξ^k = ‖x^k − x*‖² + (1/m) Σ_{i=1}^{K} c_i ‖x^{k+1−i} − x^{k−i}‖²`
//! and exact-expectation checks of its descent.
//!
//! [`LyapunovState::exact_expected_next`] averages `ξ^{k+1}` over all `m`
//! equally likely block choices for a realized delay vector. The checks
//! compare it against
//!
//! * deterministic delays: `ξ^k − (η/m)‖Sx̂^k‖²·(1 − η/h_{j(k)})⁺`;
//! * stochastic delays, conditional on the realized delay:
//!   `‖x^k − x*‖² + (1/m)(Σ_{i≤j(k)} ε_i d_i + Σ_i c_{i+1} d_i)
//!    − (η/m)‖Sx̂^k‖²·(1 − η(1 + c_1/m + Σ_{i≤j(k)} 1/ε_i))⁺`,
//!   where `d_i = ‖x^{k+1−i} − x^{k−i}‖²`.
//!
//! Both right-hand sides bound the expectation for any `η` when the
//! multiplier is not clipped. Clipping at zero is harmless for admissible
//! steps and turns the check into a falsifiable statement for large ones.
//! Averaging the stochastic form over the delay law gives
//! `ξ^k − (η/m)(1 − η/h)⁺ E‖Sx̂^k‖²`, which [`LyapunovState::averaged_descent`]
//! estimates by Monte Carlo at a frozen state.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::blockvec::{dist2, norm2, BlockVector, DelayVector, IterateHistory};
use crate::delays::DelaySampler;
use crate::error::{Error, Result};
use crate::operators::{OperatorSpec, SOLUTION_TOL};
use crate::stepsize::{lyapunov_coefficients, DelayMode, DescentSetup, StepSizePolicy};

/// Largest `m` for which the block choice is enumerated.
pub const ENUMERATION_LIMIT: usize = 64;
/// Relative tolerance of the descent checks.
pub const DESCENT_TOL: f64 = 1e-12;

/// `ξ^k` evaluated directly from stored iterates.
pub fn lyapunov_value(hist: &IterateHistory, coeffs: &[f64], x_star: &[f64], m: usize, k: u64) -> Result<f64> {
    let k = k as i64;
    let mut xi = dist2(hist.read(k)?, x_star);
    let mut tail = 0.0;
    for (idx, c) in coeffs.iter().enumerate() {
        let i = idx as i64 + 1;
        if *c == 0.0 || k - i < 0 {
            continue;
        }
        tail += c * dist2(hist.read(k + 1 - i)?, hist.read(k - i)?);
    }
    xi += tail / m as f64;
    Ok(xi)
}

/// `‖Sx‖`.
pub fn fpr_norm(op: &OperatorSpec, x: &BlockVector) -> f64 {
    op.residual_norm(x.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentForm {
    /// Per-delay bound with `h_{j(k)}`.
    Deterministic,
    /// Bound conditional on the realized delay vector.
    Conditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub k: u64,
    pub form: DescentForm,
    pub xi: f64,
    pub expected_next: f64,
    pub bound: f64,
    /// `bound − expected_next`.
    pub slack: f64,
}

/// Monte Carlo estimate of the delay-averaged descent at a frozen state.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDescent {
    pub draws: usize,
    pub xi: f64,
    /// Mean of `E_i[ξ^{k+1}] − ξ^k + (η/m)(1 − η/h)⁺‖Sx̂‖²` over the draws.
    pub mean_excess: f64,
    pub std_error: f64,
}

impl AveragedDescent {
    /// Whether the mean excess is nonpositive up to three standard errors.
    pub fn holds(&self) -> bool {
        self.mean_excess <= 3.0 * self.std_error + DESCENT_TOL * (1.0 + self.xi)
    }
}

struct Expansion {
    expected: f64,
    dist: f64,
    s_norm2: f64,
}

/// `ξ` bookkeeping for one run: the fixed point, the coefficients and the
/// recent squared differences `d_i`, most recent first.
#[derive(Debug, Clone)]
pub struct LyapunovState {
    op: Arc<OperatorSpec>,
    x_star: Vec<f64>,
    coeffs: Vec<f64>,
    m: usize,
    setup: Option<DescentSetup>,
    diffs: VecDeque<f64>,
    synced: Option<u64>,
}

impl LyapunovState {
    /// Coefficients from the `ε` sequence of `setup`, truncated at `k`.
    pub fn new(op: Arc<OperatorSpec>, x_star: &BlockVector, setup: DescentSetup, k: usize) -> Result<Self> {
        let tail = match setup.mode {
            DelayMode::Stochastic => Some(setup.tail.as_ref().ok_or_else(|| {
                Error::InvalidParameters("stochastic descent check needs a tail distribution".into())
            })?),
            DelayMode::Deterministic => None,
        };
        let coeffs = lyapunov_coefficients(&setup.eps, tail, k)?;
        let mut s = Self::with_coefficients(op, x_star, coeffs)?;
        s.setup = Some(setup);
        Ok(s)
    }

    /// The certificate matching `policy`.
    pub fn for_policy(op: Arc<OperatorSpec>, x_star: &BlockVector, policy: &StepSizePolicy) -> Result<Self> {
        let setup = policy.descent_setup()?.ok_or_else(|| {
            Error::InvalidParameters("a fixed step has no Lyapunov certificate".into())
        })?;
        Self::new(op, x_star, setup, policy.truncation())
    }

    /// Explicit coefficients; only the deterministic check is available.
    pub fn with_coefficients(op: Arc<OperatorSpec>, x_star: &BlockVector, coeffs: Vec<f64>) -> Result<Self> {
        if x_star.dim() != op.dim() {
            return Err(Error::LayoutMismatch {
                expected: op.dim(),
                got: x_star.dim(),
            });
        }
        let r = op.residual_norm(x_star.as_slice());
        if r > SOLUTION_TOL * (1.0 + x_star.norm()) {
            return Err(Error::InvalidParameters(format!("x* has residual {r:e}")));
        }
        if coeffs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) || coeffs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameters(
                "coefficients must be finite, nonnegative and nonincreasing".into(),
            ));
        }
        let m = op.layout().num_blocks();
        Ok(Self {
            op,
            x_star: x_star.as_slice().to_vec(),
            coeffs,
            m,
            setup: None,
            diffs: VecDeque::new(),
            synced: None,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn num_blocks(&self) -> usize {
        self.m
    }

    pub fn setup(&self) -> Option<&DescentSetup> {
        self.setup.as_ref()
    }

    /// Records the differences of all iterates pushed to `hist` since the
    /// last call.
    pub fn sync(&mut self, hist: &IterateHistory) -> Result<()> {
        let Some(top) = hist.top() else { return Ok(()) };
        let mut at = match self.synced {
            Some(s) => s,
            None => {
                self.synced = Some(top);
                return Ok(());
            }
        };
        while at < top {
            let d = dist2(hist.read(at as i64 + 1)?, hist.read(at as i64)?);
            self.diffs.push_front(d);
            self.diffs.truncate(self.coeffs.len());
            at += 1;
        }
        self.synced = Some(top);
        Ok(())
    }

    fn weighted_diffs(&self, shift: usize) -> f64 {
        self.diffs
            .iter()
            .zip(self.coeffs.iter().skip(shift))
            .map(|(d, c)| c * d)
            .sum()
    }

    /// `ξ^k` for `x^k = x`, using the recorded differences.
    pub fn value(&self, x: &[f64]) -> f64 {
        dist2(x, &self.x_star) + self.weighted_diffs(0) / self.m as f64
    }

    fn expand(&self, hist: &IterateHistory, k: u64, d: &DelayVector, eta: f64) -> Result<Expansion> {
        if self.m > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                blocks: self.m,
                limit: ENUMERATION_LIMIT,
            });
        }
        if self.synced != Some(k) {
            return Err(Error::InvalidParameters(format!(
                "Lyapunov state is at {:?}, not at iteration {k}",
                self.synced
            )));
        }
        let xk = hist.read(k as i64)?;
        let mut xhat = vec![0.0; xk.len()];
        hist.delayed_read_into(k, d, &mut xhat)?;
        let layout = self.op.layout();
        let mf = self.m as f64;
        let c1 = self.coeffs.first().copied().unwrap_or(0.0);
        let dist = dist2(xk, &self.x_star);
        let mut s = Vec::new();
        let mut sum_dist = 0.0;
        let mut s_norm2 = 0.0;
        for i in 0..self.m {
            let r = layout.range(i);
            s.resize(r.len(), 0.0);
            self.op.s_block_into(&xhat, i, &mut s);
            let (mut old, mut new) = (0.0, 0.0);
            for (sv, idx) in s.iter().zip(r) {
                let e = xk[idx] - self.x_star[idx];
                old += e * e;
                let f = e - eta * sv;
                new += f * f;
            }
            let sn = norm2(&s);
            s_norm2 += sn;
            sum_dist += dist - old + new + c1 * eta * eta * sn / mf;
        }
        let shifted = self.weighted_diffs(1) / mf;
        Ok(Expansion {
            expected: sum_dist / mf + shifted,
            dist,
            s_norm2,
        })
    }

    /// `E[ξ^{k+1}]` over the block choice, for the delay vector `d` and step
    /// `eta`. Requires the state to be synced to iteration `k`.
    pub fn exact_expected_next(&self, hist: &IterateHistory, k: u64, d: &DelayVector, eta: f64) -> Result<f64> {
        Ok(self.expand(hist, k, d, eta)?.expected)
    }

    /// Checks the descent inequality at iteration `k`. `policy_rhs` is the
    /// `h` the step was derived from; it is used by the deterministic form.
    pub fn check_descent(
        &self,
        hist: &IterateHistory,
        k: u64,
        d: &DelayVector,
        eta: f64,
        policy_rhs: f64,
    ) -> Result<DescentReport> {
        let ex = self.expand(hist, k, d, eta)?;
        let xi = ex.dist + self.weighted_diffs(0) / self.m as f64;
        let j = d.current();
        let mf = self.m as f64;
        let mode = self.setup.as_ref().map_or(DelayMode::Deterministic, |s| s.mode);
        let (form, bound) = match mode {
            DelayMode::Deterministic => {
                if j > self.coeffs.len() {
                    return Err(Error::InvalidTruncation(format!(
                        "delay {j} exceeds the {} Lyapunov coefficients",
                        self.coeffs.len()
                    )));
                }
                let mult = (1.0 - eta / policy_rhs).max(0.0);
                (DescentForm::Deterministic, xi - eta / mf * ex.s_norm2 * mult)
            }
            DelayMode::Stochastic => {
                let eps = &self.setup.as_ref().expect("stochastic mode has a setup").eps;
                let mut near = 0.0;
                let mut recip = 0.0;
                for l in 1..=j {
                    let e = eps.get(l).ok_or_else(|| {
                        Error::InvalidTruncation(format!("delay {j} exceeds the supplied epsilon values"))
                    })?;
                    let dl = self.diffs.get(l - 1).copied().unwrap_or(0.0);
                    if dl > 0.0 {
                        near += e * dl;
                    }
                    recip += eps.reciprocal(l);
                }
                let c1 = self.coeffs.first().copied().unwrap_or(0.0);
                let mult = (1.0 - eta * (1.0 + c1 / mf + recip)).max(0.0);
                let bound = ex.dist + (near + self.weighted_diffs(1)) / mf - eta / mf * ex.s_norm2 * mult;
                (DescentForm::Conditional, bound)
            }
        };
        let slack = bound - ex.expected;
        if slack < -DESCENT_TOL * (1.0 + xi) {
            return Err(Error::DescentViolated {
                k,
                delay: d.components().to_vec(),
                eta,
                slack,
            });
        }
        Ok(DescentReport {
            k,
            form,
            xi,
            expected_next: ex.expected,
            bound,
            slack,
        })
    }

    /// Averages the descent excess over `draws` delay vectors from
    /// `sampler`, holding the state at iteration `k` fixed. `eta_of` maps the
    /// current delay to the step.
    pub fn averaged_descent(
        &self,
        hist: &IterateHistory,
        k: u64,
        sampler: &mut DelaySampler,
        draws: usize,
        eta_of: impl Fn(usize) -> Result<f64>,
        h: f64,
    ) -> Result<AveragedDescent> {
        if draws < 2 {
            return Err(Error::InvalidParameters("at least two draws are needed".into()));
        }
        let xi = self.value(hist.read(k as i64)?);
        let mf = self.m as f64;
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let d = sampler.sample(k);
            let eta = eta_of(d.current())?;
            let ex = self.expand(hist, k, &d, eta)?;
            let mult = (1.0 - eta / h).max(0.0);
            samples.push(ex.expected - xi + eta / mf * mult * ex.s_norm2);
        }
        let n = draws as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(AveragedDescent {
            draws,
            xi,
            mean_excess: mean,
            std_error: (var / n).sqrt(),
        })
    }
}
