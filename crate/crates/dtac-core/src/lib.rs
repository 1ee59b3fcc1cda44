//! Distributed resource allocation under heterogeneous, bounded, time-invariant
//! link delays.
//!
//! The crate solves the classic coupled allocation problem
//!
//! ```text
//!   minimize   Σ_i φ_i(y_i)
//!   subject to Σ_i a_i y_i = Σ_i b_i,   y_i ∈ [m_i, M_i]
//! ```
//!
//! with a family of ADMM-style iterations that run over a peer-to-peer
//! network, tolerate per-link information delays, and need no feasible
//! initialization. The pieces:
//!
//! - [`topology`]: weight matrices, delay schedules, and the augmented
//!   (delay-lifted) consensus matrices plus their spectral analysis,
//! - [`costs`]: local cost models and the per-agent proximal update,
//! - [`engine`]: the iteration engines (parallel, distributed zero-delay,
//!   homogeneous delay, and the general delay-tolerant variant),
//! - [`metrics`]: consensus errors, Lyapunov sequences, optimality gaps,
//! - [`oracle`]: an independent centralized solver (dual bisection) used
//!   as ground truth,
//! - [`scenario`]: a small text format describing complete experiments,
//!   plus CSV/summary emission for the `dtac` binary.

pub mod costs;
pub mod engine;
pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod topology;

pub use costs::{local_argmin, dual_value, AgentSpec, CostModel, Problem};
pub use engine::{run, run_parallel, AgentState, RunConfig, RunRecord, Variant};
pub use metrics::{error_series, lyapunov_series, optimality_gap};
pub use oracle::{solve_dual_bisection, OracleSolution};
pub use scenario::{run_scenario, sweep, Scenario};
pub use topology::{
    assign_delays, build_augmented, build_weights, build_weights_custom, spectral_radius_check,
    AugmentedSystem, DelayMode, DelaySchedule, Network, SpectralReport,
};

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph not connected")]
    NotConnected,
    #[error("weight matrix not bi-stochastic (row/col sum off by {0:.3e})")]
    NotBiStochastic(f64),
    #[error("weight matrix not positive semi-definite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("invalid {what}: {why}")]
    Invalid { what: String, why: String },
    #[error("argmin failed: {0}")]
    ArgminFailed(String),
    #[error("divergence detected at iteration {iteration} (agent {agent}, {quantity} is not finite)")]
    Diverged {
        iteration: usize,
        agent: usize,
        quantity: &'static str,
    },
    #[error("infeasible or degenerate scenario: {0}")]
    Infeasible(String),
    #[error("scenario parse error at line {line}: {why}")]
    Parse { line: usize, why: String },
    #[error("scenario validation error at {field}: {why}")]
    Validation { field: String, why: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
