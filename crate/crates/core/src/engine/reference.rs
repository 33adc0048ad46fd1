use rand::Rng;

use super::{fail, RunConfig, RunResult, RunStats, Trace, TraceRow, DIVERGENCE_NORM};
use crate::blockvec::{dist2, norm2, BlockVector};
use crate::error::Error;
use crate::operators::OperatorSpec;
use crate::rng;

/// Synchronous iteration `x^{k+1} = x^k − η S(x^k)` with `η = policy.eta(0)`.
pub fn run_km_reference(cfg: &RunConfig) -> RunResult {
    let op = &cfg.problem.op;
    let x0 = cfg.start();
    let mut x = x0.as_slice().to_vec();
    let empty = |x: &[f64]| Trace::empty(BlockVector::from_raw(op.layout().clone(), x.to_vec()), op.residual_norm(x));
    if let Err(e) = cfg.validate() {
        return Err(fail(e, empty(&x)));
    }
    let eta = match cfg.policy.eta(0) {
        Ok(eta) if eta > 0.0 && eta < 1.0 => eta,
        Ok(eta) => {
            return Err(fail(
                Error::InvalidConfig(format!("KM step must lie in (0,1), got {eta}")),
                empty(&x),
            ))
        }
        Err(e) => return Err(fail(e, empty(&x))),
    };
    let x_star = cfg.problem.known_solution.as_ref().map(|v| v.as_slice().to_vec());
    let mut s = vec![0.0; x.len()];
    let mut rows = Vec::new();
    let mut updates = 0;
    let mut error = None;
    for k in 0..cfg.iterations {
        op.s_into(&x, &mut s);
        if (k + 1) % cfg.metrics_every == 0 {
            rows.push(TraceRow {
                k,
                block: None,
                delay: 0,
                eta,
                fpr: norm2(&s).sqrt(),
                dist: x_star.as_ref().map(|xs| dist2(&x, xs).sqrt()),
                xi: None,
            });
        }
        for (v, sv) in x.iter_mut().zip(&s) {
            *v -= eta * sv;
        }
        updates = k + 1;
        let norm = norm2(&x).sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            error = Some(Error::DivergenceDetected { k: k + 1, norm });
            break;
        }
    }
    let trace = Trace {
        rows,
        final_fpr: op.residual_norm(&x),
        final_x: BlockVector::from_raw(op.layout().clone(), x),
        updates,
        wall_time: None,
        stats: RunStats::default(),
    };
    match error {
        None => Ok(trace),
        Some(e) => Err(fail(e, trace)),
    }
}

/// Sequential random-block iteration `x_i ← x_i − η S_i(x)` with blocks
/// drawn exactly as the simulated engine draws them for `seed`.
pub fn run_random_block_km(op: &OperatorSpec, x0: &BlockVector, eta: f64, iterations: u64, seed: u64) -> BlockVector {
    let layout = op.layout();
    let m = layout.num_blocks();
    let mut blocks = rng::stream(seed, rng::BLOCK_STREAM);
    let mut x = x0.as_slice().to_vec();
    let mut s = Vec::new();
    for _ in 0..iterations {
        let i = blocks.random_range(0..m);
        let r = layout.range(i);
        s.resize(r.len(), 0.0);
        op.s_block_into(&x, i, &mut s);
        for (v, sv) in x[r].iter_mut().zip(&s) {
            *v -= eta * sv;
        }
    }
    BlockVector::from_raw(layout.clone(), x)
}
