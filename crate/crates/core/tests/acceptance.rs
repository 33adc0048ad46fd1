//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! to the real stderr, so the verdicts show up even when output is captured.

use std::io::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use arock::blockvec::DelayVector;
use arock::delays::tail_probability;
use arock::engine::{run_random_block_km, run_simulated};
use arock::harness::table2_rows;
use arock::linalg::{lambda_max, DenseMatrix};
use arock::operators::{check_nonexpansive, instances};
use arock::rng;
use arock::stepsize::{
    generic_deterministic_h, generic_stochastic_h, lyapunov_coefficients, stochastic_h_large, stochastic_h_weak,
    DelayMode, DescentSetup,
};
use arock::{
    BlockLayout, BlockVector, DelayModel, EpsilonSequence, Error, FixedPointProblem, OperatorKind, OperatorSpec,
    RunConfig, RunMode, StepSizePolicy, TailDistribution,
};
use rand::{Rng, SeedableRng};

fn verdict(n: u32, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {word} ({detail})");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn psd_problem(n: usize) -> FixedPointProblem {
    FixedPointProblem::new(Arc::new(instances::linear_psd(n, 11)))
}

#[test]
fn criterion_01_step_size_table() {
    let start = Instant::now();
    let mut rows = Vec::new();
    for m in [16, 100, 10_000] {
        for row in table2_rows(m, &[0, 1, 2, 3, 4, 8, 16], &[0.25, 0.5, 0.9]).unwrap() {
            rows.push((m, row));
        }
    }
    let elapsed = start.elapsed();
    let below: Vec<String> = rows
        .iter()
        .filter(|(_, r)| !r.meets_bound())
        .map(|(m, r)| format!("m={m} {} h={:.6} < {:.6}", r.distribution, r.computed, r.bound))
        .collect();
    let pass = below.is_empty() && elapsed < Duration::from_secs(1);
    let detail = format!(
        "{} rows, {} below bound, {:.3}s{}{}",
        rows.len(),
        below.len(),
        elapsed.as_secs_f64(),
        if below.is_empty() { "" } else { "; first: " },
        below.first().map(String::as_str).unwrap_or("")
    );
    verdict(1, pass, &detail);
}

#[test]
fn criterion_02_canonical_epsilon_reproduces_closed_forms() {
    const K: usize = 3000;
    let mut worst = 0.0_f64;
    for r in [0.25, 0.5, 0.9] {
        for m in [4, 100, 10_000] {
            let tail = tail_probability(&DelayModel::geometric(m, r).unwrap()).unwrap();
            let weak = stochastic_h_weak(&tail, m, K).unwrap();
            let large = stochastic_h_large(&tail, m, K).unwrap();
            let via_weak = generic_stochastic_h(&EpsilonSequence::weakest(m, tail.clone()), &tail, m, K).unwrap();
            let via_large = generic_stochastic_h(&EpsilonSequence::largest(m, tail.clone()), &tail, m, K).unwrap();
            // independent closed forms with P_l = r^l
            let sm = (m as f64).sqrt();
            let (mut sw, mut sl) = (0.0, 0.0);
            for l in 1..=K {
                let lf = l as f64;
                let p = r.powi(l as i32);
                sw += p.sqrt() * (lf.sqrt() + 1.0 / lf.sqrt());
                sl += 2.0 * p.sqrt();
            }
            let oracle_weak = 1.0 / (1.0 + sw / sm);
            let oracle_large = 1.0 / (1.0 + sl / sm);
            for d in [via_weak - weak, via_large - large, weak - oracle_weak, large - oracle_large] {
                worst = worst.max(d.abs());
            }
        }
    }
    verdict(2, worst <= 1e-12, &format!("max deviation {worst:e}"));
}

fn descent_instances(m: usize) -> Vec<(&'static str, OperatorSpec)> {
    vec![
        ("grad_quadratic", instances::grad_quadratic(m, 5 + m as u64)),
        ("forward_backward_l1", instances::forward_backward_l1(m, 5 + m as u64, 0.2)),
    ]
}

fn random_schedule(m: usize, len: usize, max: usize, seed: u64) -> Vec<DelayVector> {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| DelayVector((0..m).map(|_| r.random_range(0..=max)).collect())).collect()
}

#[test]
fn criterion_03_exact_descent_checks() {
    const STEPS: u64 = 10_000;
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut checks = 0;
    let mut min_slack = f64::INFINITY;
    let mut max_sched_delay = 0;
    for m in [2, 4, 8] {
        for (name, op) in descent_instances(m) {
            let op = Arc::new(op);
            let geometric = DelayModel::geometric(m, 0.5).unwrap();
            let stochastic = StepSizePolicy::stochastic_large(0.9, m, tail_probability(&geometric).unwrap(), 3000).unwrap();
            let schedule = DelayModel::schedule(m, random_schedule(m, 997, 20, m as u64)).unwrap();
            let deterministic =
                StepSizePolicy::generic_deterministic(0.9, m, EpsilonSequence::power_law(1.0, m).unwrap(), 1000).unwrap();
            for (label, delays, policy) in [("stochastic", geometric, stochastic), ("deterministic", schedule, deterministic)] {
                let cfg = RunConfig::new(FixedPointProblem::new(op.clone()), delays, policy)
                    .iterations(STEPS)
                    .seed(m as u64)
                    .metrics_every(100)
                    .x0(BlockVector::from_scalars(vec![3.0; m]).unwrap())
                    .check_descent(true);
                match run_simulated(&cfg) {
                    Ok(t) => {
                        checks += t.stats.descent_checks;
                        if t.stats.descent_checks != STEPS {
                            failures.push(format!("{name} m={m} {label}: {} checks", t.stats.descent_checks));
                        }
                        min_slack = min_slack.min(t.stats.min_relative_slack.unwrap_or(f64::INFINITY));
                        if label == "deterministic" {
                            max_sched_delay = max_sched_delay.max(t.stats.max_delay);
                        }
                    }
                    Err(f) => failures.push(format!("{name} m={m} {label}: {f}")),
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30) && max_sched_delay == 20;
    let detail = format!(
        "{checks} checks, min slack/(1+xi) {min_slack:e}, schedule max delay {max_sched_delay}, {:.1}s{}",
        elapsed.as_secs_f64(),
        failures.first().map(|f| format!("; {f}")).unwrap_or_default()
    );
    verdict(3, pass, &detail);
}

#[test]
fn criterion_04_checker_catches_oversized_step() {
    let m = 2;
    let eps = EpsilonSequence::power_law(1.0, m).unwrap();
    let h = generic_deterministic_h(&eps, 1, m, 1000).unwrap();
    let cfg = RunConfig::new(
        FixedPointProblem::new(Arc::new(instances::negation(m))),
        DelayModel::schedule(m, vec![DelayVector::constant(m, 1)]).unwrap(),
        StepSizePolicy::fixed(3.0 * h, m).unwrap(),
    )
    .iterations(1000)
    .x0(BlockVector::from_scalars(vec![1.0, -0.5]).unwrap())
    .check_descent(true)
    .certificate(DescentSetup { eps, mode: DelayMode::Deterministic, tail: None });
    let (pass, detail) = match run_simulated(&cfg) {
        Err(f) => match f.error {
            Error::DescentViolated { k, slack, .. } if k < 1000 => (true, format!("violation at k={k}, slack {slack:e}")),
            e => (false, format!("unexpected error {e}")),
        },
        Ok(_) => (false, "no violation in 1000 steps".into()),
    };
    verdict(4, pass, &detail);
}

fn decile_means(fpr: &[f64]) -> (f64, f64) {
    let d = fpr.len() / 10;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&fpr[..d]), mean(&fpr[fpr.len() - d..]))
}

#[test]
fn criterion_05_unbounded_stochastic_delays() {
    let m = 100;
    let delays = DelayModel::geometric(m, 0.5).unwrap();
    let policy = StepSizePolicy::stochastic_large(0.9, m, tail_probability(&delays).unwrap(), 3000).unwrap();
    let cfg = RunConfig::new(psd_problem(m), delays, policy).iterations(1_000_000).seed(5).metrics_every(1000);
    let start = Instant::now();
    let trace = run_simulated(&cfg).expect("run");
    let elapsed = start.elapsed();
    let fpr: Vec<f64> = trace.rows.iter().map(|r| r.fpr).collect();
    let reached = fpr.iter().chain([&trace.final_fpr]).any(|&v| v <= 1e-6);
    let (first, last) = decile_means(&fpr);
    let pass = reached && last < 1e-3 * first && elapsed < Duration::from_secs(60);
    verdict(
        5,
        pass,
        &format!(
            "final fpr {:e}, decile means {first:e} -> {last:e}, max delay {}, {:.1}s",
            trace.final_fpr,
            trace.stats.max_delay,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_unbounded_deterministic_delays() {
    let m = 100;
    let schedule: Vec<DelayVector> = (0..100)
        .map(|k| if k == 0 { DelayVector::constant(m, 50) } else { DelayVector::constant(m, 1) })
        .collect();
    let delays = DelayModel::schedule(m, schedule).unwrap();
    let policy = StepSizePolicy::deterministic_adaptive(0.9, 1.0, m).unwrap();
    let cfg = RunConfig::new(psd_problem(m), delays, policy).iterations(1_000_000).seed(6).metrics_every(333);
    let trace = run_simulated(&cfg).expect("run");
    let q: Vec<f64> = trace.bounded_delay_rows(5).map(|r| r.fpr).collect();
    let spikes = trace.rows.iter().filter(|r| r.delay == 50).count();
    let ratio = q[0] / q[q.len() - 1];
    verdict(
        6,
        ratio >= 1e3 && trace.stats.max_delay == 50,
        &format!("Q_5 has {} rows ({spikes} spikes excluded), decrease {ratio:e}", q.len()),
    );
}

#[test]
fn criterion_07_zero_delay_matches_sequential_km() {
    const STEPS: u64 = 100_000;
    const EVERY: u64 = 1000;
    let n = 20;
    let op = Arc::new(instances::grad_quadratic(n, 3));
    let x0 = BlockVector::from_scalars(instances::random_vector(n, 99)).unwrap();
    let eta = 0.7;
    let cfg = RunConfig::new(FixedPointProblem::new(op.clone()), DelayModel::zero(n).unwrap(), StepSizePolicy::fixed(eta, n).unwrap())
        .iterations(STEPS)
        .seed(17)
        .metrics_every(EVERY)
        .x0(x0.clone());
    let trace = run_simulated(&cfg).expect("run");

    let mut blocks = rng::stream(17, rng::BLOCK_STREAM);
    let mut x = x0.clone();
    let mut fpr = Vec::new();
    for k in 0..STEPS {
        let i = blocks.random_range(0..n);
        if (k + 1) % EVERY == 0 {
            fpr.push(op.residual_norm(x.as_slice()));
        }
        let s = op.apply_s_block(&x, i).unwrap();
        x.block_mut(i)[0] -= eta * s[0];
    }
    let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    let same_final = bits(trace.final_x.as_slice()) == bits(x.as_slice());
    let same_rows = bits(&trace.rows.iter().map(|r| r.fpr).collect::<Vec<_>>()) == bits(&fpr);
    let library_ref = run_random_block_km(&op, &x0, eta, STEPS, 17);
    let same_ref = bits(library_ref.as_slice()) == bits(x.as_slice());
    verdict(
        7,
        same_final && same_rows && same_ref,
        &format!("final iterate identical: {same_final}, trace identical: {same_rows}, library reference identical: {same_ref}"),
    );
}

#[test]
fn criterion_08_nonexpansiveness_suite() {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    let mut count = 0;
    for n in [5, 30] {
        for (name, op) in instances::shipped(n, 21) {
            count += 1;
            match check_nonexpansive(&op, 1000, 7) {
                Ok(r) => worst = worst.max(r.max_ratio),
                Err(e) => failures.push(format!("{name} n={n}: {e}")),
            }
        }
    }
    let a = instances::random_spd(10, 4);
    let l = lambda_max(&a).value;
    let layout = Arc::new(BlockLayout::scalar(10).unwrap());
    let under = OperatorSpec::new_unchecked(OperatorKind::GradQuadratic, a.clone(), vec![0.0; 10], 0.4 * l, layout.clone()).unwrap();
    let caught = matches!(check_nonexpansive(&under, 1000, 7), Err(Error::NonexpansivenessViolated { ratio, .. }) if ratio > 1.0);
    let rejected = OperatorSpec::new(OperatorKind::GradQuadratic, a, vec![0.0; 10], 0.4 * l, layout).is_err();
    let diag = OperatorSpec::new_unchecked(
        OperatorKind::LinearPsd,
        DenseMatrix::diagonal(&[1.0, 4.0]),
        vec![0.0; 2],
        1.0,
        Arc::new(BlockLayout::scalar(2).unwrap()),
    )
    .unwrap();
    let caught_psd = check_nonexpansive(&diag, 1000, 7).is_err();
    verdict(
        8,
        failures.is_empty() && caught && rejected && caught_psd,
        &format!(
            "{count} instances, worst ratio {worst:.12}, underestimated L caught: {caught}, rejected at construction: {rejected}{}",
            failures.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_09_concurrent_engine() {
    let m = 100;
    let tau = 8;
    let policy = StepSizePolicy::stochastic_large(0.9, m, TailDistribution::Bounded { tau }, 1000).unwrap();
    let cfg = RunConfig::new(psd_problem(m), DelayModel::bounded(m, tau).unwrap(), policy)
        .iterations(1_000_000)
        .mode(RunMode::Concurrent)
        .workers(4)
        .seed(9)
        .metrics_every(10_000);
    let trace = arock::run(&cfg).expect("run");
    let applied: u64 = trace.stats.worker_updates.iter().sum();
    let delays_recorded = !trace.rows.is_empty() && trace.stats.max_delay as u64 <= trace.stats.max_in_flight;
    let pass = trace.final_fpr <= 1e-6 && applied == trace.updates && trace.updates == 1_000_000 && delays_recorded;
    verdict(
        9,
        pass,
        &format!(
            "final fpr {:e}, updates {} (workers {:?}), max measured delay {} <= in-flight {}, {:.2}s",
            trace.final_fpr,
            trace.updates,
            trace.stats.worker_updates,
            trace.stats.max_delay,
            trace.stats.max_in_flight,
            trace.wall_time.unwrap_or_default().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_coefficient_recurrence() {
    const K: usize = 1000;
    let mut worst = 0.0_f64;
    let mut worst_weight = 0.0_f64;
    let mut check = |eps: &EpsilonSequence, tail: Option<&TailDistribution>, oracle: &dyn Fn(usize) -> f64| {
        let c = lyapunov_coefficients(eps, tail, K).unwrap();
        for i in 1..=K {
            let w = match tail {
                Some(t) => eps.weighted(i, t),
                None => eps.get(i).unwrap(),
            };
            let next = if i < K { c[i] } else { 0.0 };
            worst = worst.max((next + w - c[i - 1]).abs());
            let o = oracle(i);
            worst_weight = worst_weight.max((w - o).abs() / o.abs().max(1e-300));
        }
    };
    for m in [4, 100, 10_000] {
        let sm = (m as f64).sqrt();
        for r in [0.25, 0.5, 0.9] {
            let tail = tail_probability(&DelayModel::geometric(m, r).unwrap()).unwrap();
            let p = move |l: usize| r.powi(l as i32);
            check(&EpsilonSequence::weakest(m, tail.clone()), Some(&tail), &|l| sm * (p(l) / l as f64).sqrt());
            check(&EpsilonSequence::largest(m, tail.clone()), Some(&tail), &|l| sm * p(l).sqrt());
        }
        for tau in [1, 7] {
            let tail = TailDistribution::Uniform { tau };
            let p = move |l: usize| if l <= tau { 1.0 - l as f64 / (tau as f64 + 1.0) } else { 0.0 };
            check(&EpsilonSequence::largest(m, tail.clone()), Some(&tail), &|l| sm * p(l).sqrt());
        }
        for gamma in [0.5, 1.0, 2.0] {
            check(&EpsilonSequence::power_law(gamma, m).unwrap(), None, &|l| sm * (l as f64).powf(-(1.0 + gamma)));
        }
    }
    // weights equal to zero are compared absolutely through the 1e-300 floor
    verdict(
        10,
        worst <= 1e-14 && worst_weight <= 1e-14,
        &format!("max recurrence residual {worst:e}, max relative weight error {worst_weight:e}"),
    );
}
