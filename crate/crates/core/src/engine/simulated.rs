use std::sync::Arc;

use rand::Rng;

use super::{fail, RunConfig, RunResult, RunStats, Trace, TraceRow, DIVERGENCE_NORM};
use crate::blockvec::{dist2, norm2, BlockVector, IterateHistory};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovState;
use crate::rng;

/// Exact-norm recomputation period of the divergence guard.
const NORM_REFRESH: u64 = 1024;

/// Single-threaded run with injected delays.
///
/// Each step draws `i(k)` uniformly, draws `j⃗(k)`, forms the delayed read
/// `x̂^k` and sets `x^{k+1}_i = x^k_i − η^k S_i(x̂^k)`. Blocks are drawn from
/// [`rng::BLOCK_STREAM`] and delays from [`rng::DELAY_STREAM`] of the seed.
pub fn run_simulated(cfg: &RunConfig) -> RunResult {
    let x0 = cfg.start();
    let empty = || Trace::empty(x0.clone(), cfg.problem.op.residual_norm(x0.as_slice()));
    if let Err(e) = cfg.validate() {
        return Err(fail(e, empty()));
    }
    let mut sim = match Simulation::new(cfg, &x0) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, empty())),
    };
    let outcome = sim.run(cfg);
    let trace = sim.finish(cfg);
    match outcome {
        Ok(()) => Ok(trace),
        Err(e) => Err(fail(e, trace)),
    }
}

struct Simulation {
    x: Vec<f64>,
    xhat: Vec<f64>,
    s: Vec<f64>,
    hist: IterateHistory,
    x_star: Option<Vec<f64>>,
    lyap: Option<LyapunovState>,
    rows: Vec<TraceRow>,
    stats: RunStats,
    updates: u64,
}

impl Simulation {
    fn new(cfg: &RunConfig, x0: &BlockVector) -> Result<Self> {
        let op = &cfg.problem.op;
        let window = IterateHistory::default_window(cfg.delays.practical_max_delay());
        let mut hist = IterateHistory::new(x0, window)?;
        hist.push(x0, 0)?;
        let x_star = cfg.solution(cfg.check_descent)?;
        let lyap = match (&x_star, cfg.check_descent) {
            (Some(xs), true) => {
                let mut state = match &cfg.certificate {
                    Some(setup) => LyapunovState::new(op.clone(), xs, setup.clone(), cfg.policy.truncation())?,
                    None => LyapunovState::for_policy(op.clone(), xs, &cfg.policy)?,
                };
                state.sync(&hist)?;
                Some(state)
            }
            _ => None,
        };
        Ok(Self {
            x: x0.as_slice().to_vec(),
            xhat: vec![0.0; x0.dim()],
            s: Vec::new(),
            hist,
            x_star: x_star.map(BlockVector::into_vec),
            lyap,
            rows: Vec::new(),
            stats: RunStats::default(),
            updates: 0,
        })
    }

    fn run(&mut self, cfg: &RunConfig) -> Result<()> {
        let op = Arc::clone(&cfg.problem.op);
        let layout = op.layout().clone();
        let m = layout.num_blocks();
        let mut blocks = rng::stream(cfg.seed, rng::BLOCK_STREAM);
        let mut delays = cfg.delays.sampler(cfg.seed);
        let mut norm_sq = norm2(&self.x);
        for k in 0..cfg.iterations {
            let i = blocks.random_range(0..m);
            let d = delays.sample(k);
            let j = d.current();
            let eta = cfg.policy.eta(j)?;
            self.stats.max_delay = self.stats.max_delay.max(j);
            self.hist.delayed_read_into(k, &d, &mut self.xhat)?;

            if let Some(lyap) = &self.lyap {
                let report = lyap.check_descent(&self.hist, k, &d, eta, cfg.checker_rhs(j)?)?;
                self.stats.descent_checks += 1;
                let rel = report.slack / (1.0 + report.xi);
                self.stats.min_relative_slack = Some(self.stats.min_relative_slack.map_or(rel, |s| s.min(rel)));
            }
            if (k + 1) % cfg.metrics_every == 0 {
                self.rows.push(TraceRow {
                    k,
                    block: Some(i),
                    delay: j,
                    eta,
                    fpr: op.residual_norm(&self.x),
                    dist: self.x_star.as_ref().map(|xs| dist2(&self.x, xs).sqrt()),
                    xi: self.lyap.as_ref().map(|l| l.value(&self.x)),
                });
            }

            let r = layout.range(i);
            self.s.resize(r.len(), 0.0);
            op.s_block_into(&self.xhat, i, &mut self.s);
            let block = &mut self.x[r];
            let before = norm2(block);
            for (v, s) in block.iter_mut().zip(&self.s) {
                *v -= eta * s;
            }
            norm_sq += norm2(block) - before;
            if (k + 1) % NORM_REFRESH == 0 {
                norm_sq = norm2(&self.x);
            }
            self.updates = k + 1;
            if !(norm_sq <= DIVERGENCE_NORM * DIVERGENCE_NORM) {
                return Err(Error::DivergenceDetected {
                    k: k + 1,
                    norm: norm2(&self.x).sqrt(),
                });
            }
            self.hist.push_slice(&self.x, k + 1)?;
            if let Some(lyap) = &mut self.lyap {
                lyap.sync(&self.hist)?;
            }
        }
        Ok(())
    }

    fn finish(self, cfg: &RunConfig) -> Trace {
        let layout = cfg.problem.op.layout().clone();
        let final_fpr = cfg.problem.op.residual_norm(&self.x);
        Trace {
            rows: self.rows,
            final_x: BlockVector::from_raw(layout, self.x),
            final_fpr,
            updates: self.updates,
            wall_time: None,
            stats: self.stats,
        }
    }
}
