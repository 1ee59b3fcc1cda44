//! Derived series for judging a run: disagreement norms, a Lyapunov
//! sequence against the oracle solution, and final optimality gaps.
//!
//! All quantities are computed from a `RunRecord` alone (plus the oracle
//! solution where one is needed), so they can be evaluated long after the
//! run without the original problem in hand.

use crate::engine::RunRecord;
use crate::oracle::OracleSolution;
use crate::topology::{DelaySchedule, Network};
use crate::{Error, Result};

/// Iterations within the last tenth of a run count as its tail.
const TAIL_FRACTION: f64 = 0.9;

/// Iterations skipped before the Lyapunov monotonicity check starts.
const LYAPUNOV_BURN_IN: usize = 100;

/// Slack allowed per recorded step in the monotonicity check.
const LYAPUNOV_SLACK: f64 = 1e-6;

/// Disagreement and feasibility trajectories of one run.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    /// Iteration labels, copied from the record.
    pub iters: Vec<usize>,
    /// ‖dᵏ − d̄ᵏ·1‖₂: spread of the feasibility trackers around the mean
    /// deviation d̄ᵏ = (1/n)∑(aᵢyᵢᵏ − bᵢ).
    pub e_d: Vec<f64>,
    /// ‖xᵏ − x̄ᵏ·1‖₂: spread of the local duals around their mean.
    pub e_x: Vec<f64>,
    /// |d̄ᵏ|: magnitude of the coupling violation.
    pub d_bar_abs: Vec<f64>,
    /// (e_d, e_x, |d̄|) at the final recorded state.
    pub last: (f64, f64, f64),
    /// Per-component maxima over the tail window (final tenth of the run).
    pub tail_max: (f64, f64, f64),
}

fn norm_around(values: &[f64], center: f64) -> f64 {
    values
        .iter()
        .map(|v| (v - center) * (v - center))
        .sum::<f64>()
        .sqrt()
}

/// Compute the disagreement series of a recorded run.
pub fn error_series(record: &RunRecord) -> ErrorSeries {
    let len = record.len();
    let mut e_d = Vec::with_capacity(len);
    let mut e_x = Vec::with_capacity(len);
    let mut d_bar_abs = Vec::with_capacity(len);
    for t in 0..len {
        let d_bar = record.d_bar(t);
        e_d.push(norm_around(&record.d[t], d_bar));
        e_x.push(norm_around(&record.x[t], record.x_bar(t)));
        d_bar_abs.push(d_bar.abs());
    }
    let last = (
        *e_d.last().expect("record never empty"),
        *e_x.last().expect("record never empty"),
        *d_bar_abs.last().expect("record never empty"),
    );
    let final_iter = *record.iters.last().expect("record never empty");
    let cutoff = (final_iter as f64 * TAIL_FRACTION).floor() as usize;
    let mut tail_max = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..len {
        if record.iters[t] >= cutoff {
            tail_max.0 = tail_max.0.max(e_d[t]);
            tail_max.1 = tail_max.1.max(e_x[t]);
            tail_max.2 = tail_max.2.max(d_bar_abs[t]);
        }
    }
    ErrorSeries {
        iters: record.iters.clone(),
        e_d,
        e_x,
        d_bar_abs,
        last,
        tail_max,
    }
}

/// Lyapunov sequence of a run measured against the oracle solution.
#[derive(Debug, Clone)]
pub struct LyapunovSeries {
    /// Iteration labels, copied from the record.
    pub iters: Vec<usize>,
    /// Sᵏ = ‖xᵏ − x*·1‖² + c²‖zᵏ − y*‖² with zᵏ = yᵏ − d̄ᵏ·1.
    pub values: Vec<f64>,
    /// Trailing-window sum of Sᵏ over the last τ̄+1 recorded states, the
    /// delay-robust quantity whose tail is expected to decay. Coincides
    /// with `values` when τ̄ = 0.
    pub windowed: Vec<f64>,
    /// Iterations excluded from the monotonicity check.
    pub burn_in: usize,
    /// Whether the windowed sequence never rises by more than the slack
    /// between consecutive recorded states after burn-in.
    pub tail_nonincreasing: bool,
}

/// Compute the Lyapunov sequence of a recorded run.
///
/// `network` and `delays` must be the pair the run executed on: the node
/// count cross-checks the record, and the delay bound τ̄ sets the width of
/// the trailing window.
pub fn lyapunov_series(
    record: &RunRecord,
    network: &Network,
    delays: &DelaySchedule,
    c: f64,
    oracle: &OracleSolution,
) -> Result<LyapunovSeries> {
    if record.n() != network.n {
        return Err(Error::Invalid {
            what: "run record".into(),
            why: format!("{} agents vs {} network nodes", record.n(), network.n),
        });
    }
    if oracle.y_star.len() != record.n() {
        return Err(Error::Invalid {
            what: "oracle solution".into(),
            why: format!(
                "{} entries for {} agents",
                oracle.y_star.len(),
                record.n()
            ),
        });
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Invalid {
            what: "penalty c".into(),
            why: format!("need a positive finite c, got {c}"),
        });
    }
    let len = record.len();
    let mut values = Vec::with_capacity(len);
    for t in 0..len {
        let d_bar = record.d_bar(t);
        let dual: f64 = record.x[t]
            .iter()
            .map(|x| (x - oracle.x_star) * (x - oracle.x_star))
            .sum();
        let primal: f64 = record.y[t]
            .iter()
            .zip(&oracle.y_star)
            .map(|(y, y_star)| {
                let z = y - d_bar;
                (z - y_star) * (z - y_star)
            })
            .sum();
        values.push(dual + c * c * primal);
    }
    let window = delays.tau_bar + 1;
    let mut windowed = Vec::with_capacity(len);
    let mut acc = 0.0f64;
    for t in 0..len {
        acc += values[t];
        if t >= window {
            acc -= values[t - window];
        }
        windowed.push(acc);
    }
    let mut tail_nonincreasing = true;
    for t in 0..len.saturating_sub(1) {
        if record.iters[t] < LYAPUNOV_BURN_IN {
            continue;
        }
        if windowed[t + 1] > windowed[t] + LYAPUNOV_SLACK {
            tail_nonincreasing = false;
            break;
        }
    }
    Ok(LyapunovSeries {
        iters: record.iters.clone(),
        values,
        windowed,
        burn_in: LYAPUNOV_BURN_IN,
        tail_nonincreasing,
    })
}

/// Distances between a run's final state and the oracle solution.
#[derive(Debug, Clone, Copy)]
pub struct OptimalityGap {
    /// ‖y − y*‖∞ at the final recorded state.
    pub primal: f64,
    /// maxᵢ |xᵢ − x*|.
    pub dual: f64,
    /// |Φ(y) − Φ(y*)|.
    pub objective: f64,
}

/// Measure how far a finished run sits from the oracle solution.
pub fn optimality_gap(record: &RunRecord, oracle: &OracleSolution) -> Result<OptimalityGap> {
    if oracle.y_star.len() != record.n() {
        return Err(Error::Invalid {
            what: "oracle solution".into(),
            why: format!(
                "{} entries for {} agents",
                oracle.y_star.len(),
                record.n()
            ),
        });
    }
    let primal = record
        .final_y()
        .iter()
        .zip(&oracle.y_star)
        .map(|(y, y_star)| (y - y_star).abs())
        .fold(0.0f64, f64::max);
    let dual = record
        .final_x()
        .iter()
        .map(|x| (x - oracle.x_star).abs())
        .fold(0.0f64, f64::max);
    let objective = (record.final_objective - oracle.objective).abs();
    Ok(OptimalityGap {
        primal,
        dual,
        objective,
    })
}
