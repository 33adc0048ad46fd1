//! Shared-memory executor.
//!
//! The iterate lives in `AtomicU64` cells holding `f64` bits. Each block has
//! a sequence lock, so a block is read and written atomically while reads of
//! different blocks may straddle other workers' updates. A global counter
//! hands out update indices; it is advanced only by a successful claim, so
//! the number of applied updates equals its final value.
//!
//! Measured delay of block `l` in update `k`: zero if the block was not
//! written between the worker's read and its claim of `k`, otherwise
//! `k − g_l` with `g_l` the counter value when the block was read.

use std::hint;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use rand::Rng;

use super::{fail, RunConfig, RunResult, RunStats, Trace, TraceRow, DIVERGENCE_NORM};
use crate::blockvec::{dist2, BlockLayout, BlockVector};
use crate::error::{Error, Result};
use crate::rng;

const SPINS_BEFORE_YIELD: u32 = 16;

fn backoff(spins: &mut u32) {
    *spins += 1;
    if *spins < SPINS_BEFORE_YIELD {
        hint::spin_loop();
    } else {
        thread::yield_now();
    }
}

struct SharedIterate<'a> {
    layout: &'a BlockLayout,
    cells: Vec<AtomicU64>,
    seq: Vec<AtomicU64>,
    /// `1 +` index of the last update applied to the block, 0 if none.
    stamp: Vec<AtomicU64>,
    counter: AtomicU64,
    stop: AtomicBool,
}

impl<'a> SharedIterate<'a> {
    fn new(layout: &'a BlockLayout, x0: &[f64]) -> Self {
        let m = layout.num_blocks();
        Self {
            layout,
            cells: x0.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            seq: (0..m).map(|_| AtomicU64::new(0)).collect(),
            stamp: (0..m).map(|_| AtomicU64::new(0)).collect(),
            counter: AtomicU64::new(0),
            stop: AtomicBool::new(false),
        }
    }

    /// Consistent copy of block `l`; returns its stamp.
    fn read_block(&self, l: usize, out: &mut [f64]) -> u64 {
        let mut spins = 0;
        loop {
            let s1 = self.seq[l].load(Ordering::Acquire);
            if s1 & 1 == 0 {
                for (o, c) in out.iter_mut().zip(&self.cells[self.layout.range(l)]) {
                    *o = f64::from_bits(c.load(Ordering::Relaxed));
                }
                let stamp = self.stamp[l].load(Ordering::Relaxed);
                fence(Ordering::Acquire);
                if self.seq[l].load(Ordering::Relaxed) == s1 {
                    return stamp;
                }
            }
            backoff(&mut spins);
        }
    }

    /// `x_i ← x_i − η s` under the block's lock; returns the largest
    /// magnitude written.
    fn update_block(&self, i: usize, eta: f64, s: &[f64], k: u64) -> f64 {
        let mut spins = 0;
        let s0 = loop {
            let cur = self.seq[i].load(Ordering::Relaxed);
            if cur & 1 == 0
                && self.seq[i]
                    .compare_exchange_weak(cur, cur + 1, Ordering::Acquire, Ordering::Relaxed)
                    .is_ok()
            {
                break cur;
            }
            backoff(&mut spins);
        };
        fence(Ordering::Release);
        let mut largest = 0.0_f64;
        for (c, sv) in self.cells[self.layout.range(i)].iter().zip(s) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) - eta * sv;
            largest = largest.max(v.abs());
            c.store(v.to_bits(), Ordering::Relaxed);
        }
        self.stamp[i].store(k + 1, Ordering::Relaxed);
        self.seq[i].store(s0 + 2, Ordering::Release);
        largest
    }

    /// Next update index, or `None` once the budget is spent.
    fn claim(&self, budget: u64) -> Option<u64> {
        self.counter
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |c| (c < budget).then_some(c + 1))
            .ok()
    }

    fn snapshot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len()];
        for l in 0..self.layout.num_blocks() {
            let r = self.layout.range(l);
            self.read_block(l, &mut out[r]);
        }
        out
    }
}

#[derive(Default)]
struct WorkerLog {
    rows: Vec<TraceRow>,
    updates: u64,
    max_delay: usize,
    max_in_flight: u64,
}

/// Runs `cfg.workers` threads until `cfg.iterations` updates have been
/// applied. The step uses the delay measured at claim time for
/// delay-adaptive policies and the policy's constant otherwise.
pub fn run_concurrent(cfg: &RunConfig) -> RunResult {
    let op = &cfg.problem.op;
    let layout = op.layout().clone();
    let x0 = cfg.start();
    if let Err(e) = cfg.validate() {
        return Err(fail(e, Trace::empty(x0.clone(), op.residual_norm(x0.as_slice()))));
    }
    let x_star = cfg.problem.known_solution.as_ref().map(|v| v.as_slice().to_vec());
    let shared = SharedIterate::new(&layout, x0.as_slice());
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let started = Instant::now();

    let logs: Vec<std::result::Result<WorkerLog, String>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let shared = &shared;
                let first_error = &first_error;
                let x_star = x_star.as_deref();
                scope.spawn(move || {
                    let mut log = WorkerLog::default();
                    if let Err(e) = worker(cfg, shared, w, x_star, &mut log) {
                        shared.stop.store(true, Ordering::Release);
                        first_error.lock().expect("error slot").get_or_insert(e);
                    }
                    log
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().map_err(|p| {
                    shared.stop.store(true, Ordering::Release);
                    p.downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "worker panicked".into())
                })
            })
            .collect()
    });

    let wall = started.elapsed();
    let x = shared.snapshot();
    let updates = shared.counter.load(Ordering::Acquire);
    drop(shared);
    let mut stats = RunStats::default();
    let mut rows = Vec::new();
    let mut panic = None;
    for log in logs {
        match log {
            Ok(log) => {
                stats.worker_updates.push(log.updates);
                stats.max_delay = stats.max_delay.max(log.max_delay);
                stats.max_in_flight = stats.max_in_flight.max(log.max_in_flight);
                rows.extend(log.rows);
            }
            Err(msg) => {
                stats.worker_updates.push(0);
                panic.get_or_insert(msg);
            }
        }
    }
    rows.sort_by_key(|r| r.k);
    let trace = Trace {
        rows,
        final_fpr: op.residual_norm(&x),
        final_x: BlockVector::from_raw(layout, x),
        updates,
        wall_time: Some(wall),
        stats,
    };
    if let Some(msg) = panic {
        return Err(fail(Error::WorkerPanic(msg), trace));
    }
    match first_error.into_inner().expect("error slot") {
        Some(e) => Err(fail(e, trace)),
        None => Ok(trace),
    }
}

fn worker(cfg: &RunConfig, shared: &SharedIterate<'_>, w: usize, x_star: Option<&[f64]>, log: &mut WorkerLog) -> Result<()> {
    let op = &cfg.problem.op;
    let layout = op.layout();
    let m = layout.num_blocks();
    let mut rng = rng::stream(cfg.seed, rng::WORKER_BASE + w as u64);
    let mut xhat = vec![0.0; layout.dim()];
    let mut read_at = vec![0u64; m];
    let mut stamps = vec![0u64; m];
    let mut s = Vec::new();
    let adaptive = cfg.policy.is_delay_adaptive();
    let constant_eta = if adaptive { 0.0 } else { cfg.policy.eta(0)? };

    while !shared.stop.load(Ordering::Acquire) && shared.counter.load(Ordering::Acquire) < cfg.iterations {
        let i = rng.random_range(0..m);
        let start = shared.counter.load(Ordering::Acquire);
        for l in 0..m {
            read_at[l] = shared.counter.load(Ordering::Acquire);
            stamps[l] = shared.read_block(l, &mut xhat[layout.range(l)]);
        }
        let r = layout.range(i);
        s.resize(r.len(), 0.0);
        op.s_block_into(&xhat, i, &mut s);

        let Some(k) = shared.claim(cfg.iterations) else { break };
        let mut j = 0;
        for l in 0..m {
            if shared.stamp[l].load(Ordering::Acquire) != stamps[l] {
                j = j.max((k - read_at[l]) as usize);
            }
        }
        let eta = if adaptive { cfg.policy.eta(j)? } else { constant_eta };
        let largest = shared.update_block(i, eta, &s, k);
        log.updates += 1;
        log.max_delay = log.max_delay.max(j);
        log.max_in_flight = log.max_in_flight.max(k - start);

        if !(largest <= DIVERGENCE_NORM) {
            return Err(Error::DivergenceDetected { k: k + 1, norm: largest });
        }
        if (k + 1) % cfg.metrics_every == 0 {
            let fpr = op.residual_norm(&xhat);
            log.rows.push(TraceRow {
                k,
                block: Some(i),
                delay: j,
                eta,
                fpr,
                dist: x_star.map(|xs| dist2(&xhat, xs).sqrt()),
                xi: None,
            });
            let norm = crate::blockvec::norm2(&xhat).sqrt();
            if !(norm <= DIVERGENCE_NORM) {
                return Err(Error::DivergenceDetected { k: k + 1, norm });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seqlock_round_trip() {
        let layout = BlockLayout::new(vec![2, 1]).unwrap();
        let shared = SharedIterate::new(&layout, &[1.0, 2.0, 3.0]);
        let mut out = [0.0; 2];
        assert_eq!(shared.read_block(0, &mut out), 0);
        assert_eq!(out, [1.0, 2.0]);
        shared.update_block(0, 0.5, &[2.0, -2.0], 0);
        assert_eq!(shared.read_block(0, &mut out), 1);
        assert_eq!(out, [0.0, 3.0]);
        assert_eq!(shared.claim(1), Some(0));
        assert_eq!(shared.claim(1), None);
    }
}
