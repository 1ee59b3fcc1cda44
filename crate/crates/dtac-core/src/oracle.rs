//! Centralized ground-truth solver: scalar dual bisection.
//!
//! The coupled problem has a one-dimensional dual. For a multiplier x each
//! agent independently minimizes φᵢ(y) + x·(aᵢy − bᵢ) over its box, and the
//! aggregate deviation
//!
//! ```text
//!   g(x) = ∑ᵢ (aᵢ·yᵢ*(x) − bᵢ)
//! ```
//!
//! is monotone non-increasing in x, so the optimal multiplier is the zero
//! crossing of g. This solver shares no iteration machinery with the ADMM
//! engines (only the cost evaluators), which makes it an independent oracle
//! for their fixed points.
//!
//! Two degenerate shapes are handled explicitly. When g is flat at zero over
//! an interval the dual is non-unique; the midpoint is returned and flagged.
//! When g jumps across zero (agents with affine cost pieces), the jumping
//! agents are indifferent over a segment at the critical multiplier, and the
//! solver distributes the remaining deviation across those segments, which
//! leaves the strong-duality identity intact because their inner objective
//! is constant along the move.

use crate::costs::{dual_value, Problem};
use crate::{Error, Result};

const G_TOL: f64 = 1e-10;
const BRACKET_CAP: f64 = 1e9;

/// Output of the centralized solver.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Optimal allocation, one entry per agent, each inside its box.
    pub y_star: Vec<f64>,
    /// Optimal dual multiplier.
    pub x_star: f64,
    /// Φ(y*) = ∑ φᵢ(yᵢ*).
    pub objective: f64,
    /// Coupling residual ∑(aᵢyᵢ* − bᵢ) at the returned allocation.
    pub residual: f64,
    /// Set when the dual crossing was flat (non-unique multiplier) or when
    /// agents with affine cost pieces were indifferent at the optimum (their
    /// allocations were fixed by feasibility, not by strict convexity).
    pub nonunique: bool,
}

fn aggregate_deviation(problem: &Problem, x: f64) -> Result<f64> {
    let mut g = 0.0;
    for spec in &problem.agents {
        let (_, y) = dual_value(spec, x)?;
        g += spec.a * y - spec.b;
    }
    Ok(g)
}

fn primal_at(problem: &Problem, x: f64) -> Result<Vec<f64>> {
    problem
        .agents
        .iter()
        .map(|spec| dual_value(spec, x).map(|(_, y)| y))
        .collect()
}

/// Maximize the dual by bisecting the monotone deviation g.
pub fn solve_dual_bisection(problem: &Problem) -> Result<OracleSolution> {
    problem.validate()?;

    // Expand the bracket until g changes sign: g(−∞) > 0 > g(+∞) by strict
    // aggregate feasibility.
    let mut lo = -1.0f64;
    let mut hi = 1.0f64;
    while aggregate_deviation(problem, lo)? < 0.0 {
        lo *= 2.0;
        if lo.abs() > BRACKET_CAP {
            return Err(Error::Infeasible(
                "aggregate deviation never becomes non-negative (bracket exhausted)".into(),
            ));
        }
    }
    while aggregate_deviation(problem, hi)? > 0.0 {
        hi *= 2.0;
        if hi > BRACKET_CAP {
            return Err(Error::Infeasible(
                "aggregate deviation never becomes non-positive (bracket exhausted)".into(),
            ));
        }
    }

    // Bisect until g is inside tolerance or the bracket collapses onto a
    // jump of g (affine cost pieces).
    let mut x = 0.5 * (lo + hi);
    let mut g = aggregate_deviation(problem, x)?;
    while g.abs() > G_TOL && hi - lo > 1e-13 * hi.abs().max(lo.abs()).max(1.0) {
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        x = 0.5 * (lo + hi);
        g = aggregate_deviation(problem, x)?;
    }

    let mut nonunique = false;
    let mut y_star;
    if g.abs() <= G_TOL {
        // Check for a flat crossing: walk outward while g stays at zero.
        let step0 = 1e-6 * x.abs().max(1.0);
        let mut left = x;
        let mut step = step0;
        while aggregate_deviation(problem, left - step)?.abs() <= G_TOL && step < BRACKET_CAP {
            left -= step;
            step *= 2.0;
        }
        let mut right = x;
        step = step0;
        while aggregate_deviation(problem, right + step)?.abs() <= G_TOL && step < BRACKET_CAP {
            right += step;
            step *= 2.0;
        }
        if right - left > step0 {
            nonunique = true;
            x = 0.5 * (left + right);
        }
        y_star = primal_at(problem, x)?;
    } else {
        // g jumps across zero at x: some agents are indifferent over a
        // segment. Pin the sides of the jump and spread the missing mass
        // over the indifferent segments in index order.
        let eps = 1e-9 * x.abs().max(1.0);
        let y_minus = primal_at(problem, x - eps)?;
        let y_plus = primal_at(problem, x + eps)?;
        let g_plus: f64 = problem
            .agents
            .iter()
            .zip(&y_plus)
            .map(|(spec, &y)| spec.a * y - spec.b)
            .sum();
        let mut need = -g_plus;
        y_star = y_plus.clone();
        for (i, spec) in problem.agents.iter().enumerate() {
            if need <= 0.0 {
                break;
            }
            let capacity = spec.a * y_minus[i] - spec.a * y_plus[i];
            if capacity <= 0.0 {
                continue;
            }
            let used = capacity.min(need);
            y_star[i] = y_plus[i] + used / spec.a;
            need -= used;
            nonunique = true;
        }
        if need > 1e-8 {
            return Err(Error::Infeasible(format!(
                "could not close the coupling residual at the dual kink (left over {need:.3e})"
            )));
        }
    }

    let objective = problem.objective(&y_star);
    let residual = problem.residual(&y_star);
    Ok(OracleSolution {
        y_star,
        x_star: x,
        objective,
        residual,
        nonunique,
    })
}

/// Project an arbitrary vector onto the feasible set: clamp to the boxes and
/// shift along the coupling direction until ∑ aᵢyᵢ = ∑ bᵢ.
///
/// The shift uses yᵢ(λ) = clamp(yᵢ + λ·aᵢ, mᵢ, Mᵢ), whose aggregate coupling
/// is non-decreasing in λ, so the crossing is found by bisection.
pub fn project_feasible(problem: &Problem, y0: &[f64]) -> Result<Vec<f64>> {
    if y0.len() != problem.n() {
        return Err(Error::Invalid {
            what: "candidate vector".into(),
            why: format!("length {} does not match {} agents", y0.len(), problem.n()),
        });
    }
    let shifted = |lambda: f64| -> Vec<f64> {
        problem
            .agents
            .iter()
            .zip(y0)
            .map(|(spec, &y)| (y + lambda * spec.a).clamp(spec.bounds.0, spec.bounds.1))
            .collect()
    };
    let surplus = |lambda: f64| -> f64 { problem.residual(&shifted(lambda)) };

    let mut lo = -1.0f64;
    let mut hi = 1.0f64;
    while surplus(lo) > 0.0 {
        lo *= 2.0;
        if lo.abs() > BRACKET_CAP {
            return Err(Error::Infeasible(
                "projection bracket exhausted on the low side".into(),
            ));
        }
    }
    while surplus(hi) < 0.0 {
        hi *= 2.0;
        if hi > BRACKET_CAP {
            return Err(Error::Infeasible(
                "projection bracket exhausted on the high side".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if surplus(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(shifted(0.5 * (lo + hi)))
}
