//! Step sizes for example delay distributions, next to their closed-form
//! lower bounds.

use std::fmt::Write as _;

use crate::delays::{DelayModel, TailDistribution};
use crate::error::{Error, Result};
use crate::stepsize::stochastic_h_large;

pub const TABLE_TRUNCATION: usize = 5000;
pub const BOUND_TOL: f64 = 1e-12;
/// Geometric constant used for the table rows.
pub const TABLE_GEOMETRIC_C: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub distribution: String,
    pub bound: f64,
    pub computed: f64,
}

impl Table2Row {
    pub fn meets_bound(&self) -> bool {
        self.computed >= self.bound - BOUND_TOL
    }
}

pub fn bounded_bound(tau: usize, m: usize) -> f64 {
    1.0 / (1.0 + 2.0 * tau as f64 / (m as f64).sqrt())
}

pub fn uniform_bound(tau: usize, m: usize) -> f64 {
    1.0 / (1.0 + 4.0 * tau as f64 / (3.0 * (m as f64).sqrt()))
}

pub fn geometric_bound(c: f64, r: f64, m: usize) -> f64 {
    let s = r.sqrt();
    1.0 / (1.0 + 2.0 * (c / m as f64).sqrt() * s / (1.0 - s).powf(1.5))
}

pub fn table2_rows(m: usize, taus: &[usize], rs: &[f64]) -> Result<Vec<Table2Row>> {
    if m == 0 {
        return Err(Error::InvalidParameters("m must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &tau in taus {
        rows.push(Table2Row {
            distribution: format!("bounded tau={tau}"),
            bound: bounded_bound(tau, m),
            computed: stochastic_h_large(&TailDistribution::Bounded { tau }, m, TABLE_TRUNCATION)?,
        });
    }
    for &tau in taus {
        rows.push(Table2Row {
            distribution: format!("uniform tau={tau}"),
            bound: uniform_bound(tau, m),
            computed: stochastic_h_large(&TailDistribution::Uniform { tau }, m, TABLE_TRUNCATION)?,
        });
    }
    for &r in rs {
        let tail = TailDistribution::Geometric { c: TABLE_GEOMETRIC_C, r };
        rows.push(Table2Row {
            distribution: format!("geometric C={TABLE_GEOMETRIC_C} r={r}"),
            bound: geometric_bound(TABLE_GEOMETRIC_C, r, m),
            computed: stochastic_h_large(&tail, m, TABLE_TRUNCATION)?,
        });
    }
    Ok(rows)
}

pub fn table2_report(m: usize, taus: &[usize], rs: &[f64]) -> Result<String> {
    let rows = table2_rows(m, taus, rs)?;
    let mut out = String::new();
    let _ = writeln!(out, "m = {m}");
    let _ = writeln!(out, "{:<28} {:>14} {:>14}  status", "distribution", "bound", "computed_h");
    for r in &rows {
        let status = if r.meets_bound() { "ok" } else { "below_bound" };
        let _ = writeln!(out, "{:<28} {:>14.10} {:>14.10}  {status}", r.distribution, r.bound, r.computed);
    }
    Ok(out)
}

/// Worst-case delay bound for `p` nodes whose update times lie in `[a, b]`:
/// `τ = ⌈p (b/a + 1)⌉`.
pub fn timing_delay_bound(p: usize, a: f64, b: f64) -> Result<usize> {
    if p == 0 || !(a > 0.0 && b >= a && b.is_finite()) {
        return Err(Error::InvalidParameters(format!("need p >= 1 and 0 < a <= b, got p={p} a={a} b={b}")));
    }
    Ok((p as f64 * (b / a + 1.0)).ceil() as usize)
}

pub fn timing_delay_model(p: usize, a: f64, b: f64, m: usize) -> Result<DelayModel> {
    DelayModel::bounded(m, timing_delay_bound(p, a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_rows_for_m_100() {
        let rows = table2_rows(100, &[1, 2, 4, 8], &[]).unwrap();
        for (row, tau) in rows.iter().zip([1.0, 2.0, 4.0, 8.0]) {
            if row.distribution.starts_with("bounded") {
                assert!((row.bound - 1.0 / (1.0 + 2.0 * tau / 10.0)).abs() < 1e-15);
                assert!(row.meets_bound(), "{row:?}");
            }
        }
    }

    #[test]
    fn zero_tau_gives_unit_step() {
        for row in table2_rows(16, &[0], &[]).unwrap() {
            assert_eq!(row.computed, 1.0);
            assert_eq!(row.bound, 1.0);
        }
    }

    #[test]
    fn geometric_rows_meet_bound() {
        for m in [16, 100, 10_000] {
            for row in table2_rows(m, &[], &[0.25, 0.5, 0.9]).unwrap() {
                assert!(row.meets_bound(), "{row:?}");
            }
        }
    }

    #[test]
    fn timing_bound() {
        assert_eq!(timing_delay_bound(4, 1.0, 2.0).unwrap(), 12);
        assert_eq!(timing_delay_bound(3, 2.0, 3.0).unwrap(), 8);
        assert!(timing_delay_bound(0, 1.0, 2.0).is_err());
        assert_eq!(timing_delay_model(4, 1.0, 2.0, 10).unwrap().max_delay(), Some(12));
    }

    #[test]
    fn report_lists_every_row() {
        let text = table2_report(100, &[0, 1], &[0.5]).unwrap();
        assert_eq!(text.lines().count(), 2 + 5);
        assert!(text.contains("bounded tau=1"));
        assert!(text.contains("0.8333333333"));
    }
}
