//! Execution engines.
//!
//! [`run_simulated`] injects sampled delays into a single-threaded loop and
//! is deterministic in the seed. [`run_concurrent`] runs worker threads on a
//! shared iterate and measures the delays that actually occur.
//! [`run_km_reference`] is the synchronous full-vector iteration.

mod concurrent;
mod reference;
mod simulated;

use std::fmt;
use std::time::Duration;

use crate::blockvec::BlockVector;
use crate::delays::DelayModel;
use crate::error::{Error, Result};
use crate::operators::{solve_reference, FixedPointProblem};
use crate::parallel::{map_slice, Execution};
use crate::stepsize::{generic_deterministic_h, generic_stochastic_h, DelayMode, DescentSetup, StepSizePolicy};

pub use concurrent::run_concurrent;
pub use reference::{run_km_reference, run_random_block_km};
pub use simulated::run_simulated;

/// `‖x‖` above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Tolerance of the reference solve used when the checker needs `x*`.
pub const CHECKER_SOLUTION_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    #[default]
    Simulated,
    Concurrent,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: FixedPointProblem,
    pub delays: DelayModel,
    pub policy: StepSizePolicy,
    pub iterations: u64,
    pub seed: u64,
    pub mode: RunMode,
    pub workers: usize,
    /// A trace row is written for every update `k` with `(k+1) % metrics_every == 0`.
    pub metrics_every: u64,
    /// Starting point; zero when absent.
    pub x0: Option<BlockVector>,
    /// Verify the descent inequality at every step (simulated mode only).
    pub check_descent: bool,
    /// Lyapunov certificate to check against instead of the policy's own.
    pub certificate: Option<DescentSetup>,
}

impl RunConfig {
    pub fn new(problem: FixedPointProblem, delays: DelayModel, policy: StepSizePolicy) -> Self {
        Self {
            problem,
            delays,
            policy,
            iterations: 1000,
            seed: 0,
            mode: RunMode::Simulated,
            workers: 1,
            metrics_every: 1,
            x0: None,
            check_descent: false,
            certificate: None,
        }
    }

    pub fn iterations(mut self, k: u64) -> Self {
        self.iterations = k;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn workers(mut self, p: usize) -> Self {
        self.workers = p;
        self
    }

    pub fn metrics_every(mut self, every: u64) -> Self {
        self.metrics_every = every;
        self
    }

    pub fn x0(mut self, x0: BlockVector) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn check_descent(mut self, on: bool) -> Self {
        self.check_descent = on;
        self
    }

    pub fn certificate(mut self, setup: DescentSetup) -> Self {
        self.certificate = Some(setup);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.problem.op.layout();
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.metrics_every == 0 {
            return Err(Error::InvalidConfig("metrics_every must be at least 1".into()));
        }
        if self.delays.num_blocks() != layout.num_blocks() {
            return Err(Error::InvalidConfig(format!(
                "delay model has {} blocks, problem has {}",
                self.delays.num_blocks(),
                layout.num_blocks()
            )));
        }
        if self.policy.num_blocks() != layout.num_blocks() {
            return Err(Error::InvalidConfig(format!(
                "step policy assumes {} blocks, problem has {}",
                self.policy.num_blocks(),
                layout.num_blocks()
            )));
        }
        if let Some(x0) = &self.x0 {
            if x0.layout().as_ref() != layout.as_ref() {
                return Err(Error::LayoutMismatch {
                    expected: layout.dim(),
                    got: x0.dim(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn start(&self) -> BlockVector {
        self.x0
            .clone()
            .unwrap_or_else(|| BlockVector::zeros(self.problem.op.layout().clone()))
    }

    /// The known solution, or a reference solve when the checker needs one.
    pub(crate) fn solution(&self, required: bool) -> Result<Option<BlockVector>> {
        match &self.problem.known_solution {
            Some(x) => Ok(Some(x.clone())),
            None if required => solve_reference(&self.problem.op, CHECKER_SOLUTION_TOL).map(Some),
            None => Ok(None),
        }
    }

    /// The `h` that the descent check compares the step against.
    pub(crate) fn checker_rhs(&self, j: usize) -> Result<f64> {
        let Some(setup) = &self.certificate else {
            return self.policy.h(j);
        };
        let m = self.policy.num_blocks();
        let k = self.policy.truncation();
        match setup.mode {
            DelayMode::Deterministic => generic_deterministic_h(&setup.eps, j, m, k),
            DelayMode::Stochastic => {
                let tail = setup
                    .tail
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("stochastic certificate needs a tail".into()))?;
                generic_stochastic_h(&setup.eps, tail, m, k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    /// Updated block; `None` for full-vector iterations.
    pub block: Option<usize>,
    /// Current delay `j(k)`, injected or measured.
    pub delay: usize,
    pub eta: f64,
    /// `‖Sx^k‖`; on the worker's snapshot in concurrent mode.
    pub fpr: f64,
    pub dist: Option<f64>,
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub max_delay: usize,
    /// Largest number of updates claimed between a worker's first block read
    /// and its own claim; bounds every measured delay.
    pub max_in_flight: u64,
    pub worker_updates: Vec<u64>,
    pub descent_checks: u64,
    /// Smallest `slack / (1 + ξ^k)` seen by the checker.
    pub min_relative_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub final_x: BlockVector,
    pub final_fpr: f64,
    pub updates: u64,
    /// Wall time, recorded only for concurrent runs.
    pub wall_time: Option<Duration>,
    pub stats: RunStats,
}

impl Trace {
    pub(crate) fn empty(x: BlockVector, fpr: f64) -> Self {
        Self {
            rows: Vec::new(),
            final_x: x,
            final_fpr: fpr,
            updates: 0,
            wall_time: None,
            stats: RunStats::default(),
        }
    }

    /// Rows whose current delay is at most `j`.
    pub fn bounded_delay_rows(&self, j: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.delay <= j)
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Trace,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} updates)", self.error, self.partial.updates)
    }
}

impl std::error::Error for RunFailure {}

pub type RunResult = std::result::Result<Trace, Box<RunFailure>>;

pub(crate) fn fail(error: Error, partial: Trace) -> Box<RunFailure> {
    Box::new(RunFailure { error, partial })
}

/// Dispatches on `config.mode`.
pub fn run(config: &RunConfig) -> RunResult {
    match config.mode {
        RunMode::Simulated => run_simulated(config),
        RunMode::Concurrent => run_concurrent(config),
    }
}

/// Runs a batch of independent configurations, in parallel when `exec`
/// allows it. Results are in input order.
pub fn run_batch(configs: &[RunConfig], exec: Execution) -> Vec<RunResult> {
    map_slice(exec, configs, run)
}

/// `base` repeated over `seeds`.
pub fn seed_sweep(base: &RunConfig, seeds: &[u64], exec: Execution) -> Vec<RunResult> {
    let configs: Vec<RunConfig> = seeds.iter().map(|&s| base.clone().seed(s)).collect();
    run_batch(&configs, exec)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::operators::instances;

    fn halving(delays: DelayModel, eta: f64, iterations: u64) -> RunConfig {
        let problem = FixedPointProblem::new(Arc::new(instances::negation(1)));
        RunConfig::new(problem, delays, StepSizePolicy::fixed(eta, 1).unwrap())
            .iterations(iterations)
            .x0(BlockVector::from_scalars(vec![1.0]).unwrap())
    }

    fn final_values(delays: DelayModel) -> Vec<f64> {
        (1..=3)
            .map(|k| run_simulated(&halving(delays.clone(), 0.25, k)).unwrap().final_x.as_slice()[0])
            .collect()
    }

    #[test]
    fn zero_delay_hand_iteration() {
        assert_eq!(final_values(DelayModel::zero(1).unwrap()), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn unit_delay_hand_iteration() {
        assert_eq!(final_values(DelayModel::bounded(1, 1).unwrap()), vec![0.5, 0.0, -0.25]);
    }

    #[test]
    fn trace_cadence_and_determinism() {
        let op = Arc::new(instances::grad_quadratic(6, 1));
        let problem = FixedPointProblem::solved(op, 1e-12).unwrap();
        let delays = DelayModel::uniform(6, 3).unwrap();
        let tail = crate::delays::tail_probability(&delays).unwrap();
        let policy = StepSizePolicy::stochastic_large(0.9, 6, tail, 1000).unwrap();
        let cfg = RunConfig::new(problem, delays, policy)
            .iterations(1003)
            .metrics_every(10)
            .seed(42)
            .check_descent(true);
        let a = run_simulated(&cfg).unwrap();
        let b = run_simulated(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_x, b.final_x);
        assert_eq!(a.rows.len(), 100);
        assert!(a.rows.iter().all(|r| (r.k + 1) % 10 == 0 && r.xi.is_some() && r.dist.is_some()));
        assert_eq!(a.stats.descent_checks, 1003);
        assert!(a.rows.windows(2).all(|w| w[0].k < w[1].k));
    }

    #[test]
    fn one_block_changes_per_step() {
        let op = Arc::new(instances::forward_backward_l1(5, 2, 0.1));
        let problem = FixedPointProblem::new(op);
        let delays = DelayModel::geometric(5, 0.5).unwrap();
        let policy = StepSizePolicy::fixed(0.3, 5).unwrap();
        let mut prev = run_simulated(&RunConfig::new(problem.clone(), delays.clone(), policy.clone()).iterations(1).seed(9))
            .unwrap()
            .final_x;
        for k in 2..40 {
            let cfg = RunConfig::new(problem.clone(), delays.clone(), policy.clone()).iterations(k).seed(9);
            let next = run_simulated(&cfg).unwrap().final_x;
            let changed = prev.as_slice().iter().zip(next.as_slice()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
            assert!(changed <= 1);
            prev = next;
        }
    }

    #[test]
    fn divergence_is_reported_with_partial_trace() {
        let cfg = halving(DelayModel::zero(1).unwrap(), 5.0, 1000);
        let failure = run_simulated(&cfg).unwrap_err();
        assert!(matches!(failure.error, Error::DivergenceDetected { .. }));
        assert!(failure.partial.updates > 0 && failure.partial.updates < 1000);
    }

    #[test]
    fn km_reference_examples() {
        let problem = FixedPointProblem::new(Arc::new(instances::negation(3)));
        let cfg = RunConfig::new(problem, DelayModel::zero(3).unwrap(), StepSizePolicy::fixed(0.5, 3).unwrap())
            .iterations(1)
            .x0(BlockVector::from_scalars(vec![3.0, -1.0, 2.5]).unwrap());
        assert_eq!(run_km_reference(&cfg).unwrap().final_x.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn km_reference_residual_is_monotone_on_quadratics() {
        let op = Arc::new(instances::linear_psd(8, 4));
        let cfg = RunConfig::new(FixedPointProblem::new(op), DelayModel::zero(8).unwrap(), StepSizePolicy::fixed(0.5, 8).unwrap())
            .iterations(300);
        let t = run_km_reference(&cfg).unwrap();
        for w in t.rows.windows(2) {
            assert!(w[1].fpr <= w[0].fpr + 1e-12, "{} -> {}", w[0].fpr, w[1].fpr);
        }
    }

    #[test]
    fn single_worker_measures_no_delay() {
        let op = Arc::new(instances::linear_psd(10, 3));
        let problem = FixedPointProblem::new(op);
        let cfg = RunConfig::new(problem, DelayModel::zero(10).unwrap(), StepSizePolicy::fixed(0.5, 10).unwrap())
            .iterations(2000)
            .mode(RunMode::Concurrent)
            .workers(1)
            .metrics_every(1);
        let t = run_concurrent(&cfg).unwrap();
        assert_eq!(t.updates, 2000);
        assert_eq!(t.stats.worker_updates, vec![2000]);
        assert!(t.rows.iter().all(|r| r.delay <= 1));
    }

    #[test]
    fn sweep_paths_agree() {
        let op = Arc::new(instances::grad_quadratic(4, 8));
        let base = RunConfig::new(FixedPointProblem::new(op), DelayModel::uniform(4, 2).unwrap(), StepSizePolicy::fixed(0.4, 4).unwrap())
            .iterations(200)
            .metrics_every(50);
        let seeds = [1, 2, 3, 4];
        let a = seed_sweep(&base, &seeds, Execution::Sequential);
        let b = seed_sweep(&base, &seeds, Execution::Parallel);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_ref().unwrap().rows, y.as_ref().unwrap().rows);
        }
    }
}
