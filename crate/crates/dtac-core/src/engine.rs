//! Iteration engines for the four ADMM variants, run as synchronous-round
//! message-passing systems.
//!
//! Every variant repeats the same local pattern per round k:
//!
//! ```text
//!   y_i ← argmin_{y ∈ box}  φ_i(y) + η̂_i·(a_i y) + (c/2)(a_i y − a_i y_i + δ̂_i)²
//!   d_i ← δ̂_i + a_i·(y_i_new − y_i_old)
//!   x_i ← η̂_i + c·d_i
//! ```
//!
//! and differs only in where the aggregates η̂ (dual) and δ̂ (feasibility)
//! come from:
//!
//! - `parallel`: a shared scalar pair (d, x) updated centrally,
//! - `distributed`: weighted sums of the neighbors' current states,
//! - `homogeneous(τ̄)`: weighted sums of the neighbors' states τ̄ rounds
//!   back (a node's own state is never delayed),
//! - `dtac`: weighted sums of per-link delayed states via `LinkBuffer`s.
//!
//! All variants traverse neighbors in ascending index order, so the
//! zero-delay dtac run and the distributed run produce bit-identical
//! trajectories, as does dtac-with-constant-delay against the homogeneous
//! variant.
//!
//! Initialization needs no feasible point: y⁰ anywhere in the boxes,
//! d⁰ = a·y⁰ − b, x⁰ = 0. Before a link's first payload arrives the
//! receiver treats the link as silent: it contributes zero d and x to the
//! aggregates. This keeps the mass balance exact at every round,
//!
//! ```text
//!   Σ_i d_i^k + (d-mass in flight) = Σ_i (a_i y_i^k − b_i)
//! ```
//!
//! so any fixed point of the delayed iteration is a feasible allocation.
//! Replaying initial values on the wire instead would break this balance
//! by injecting the initial feasibility deviation once per delayed round
//! and would leave the algorithm permanently short of feasibility.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costs::{local_argmin, Problem};
use crate::topology::{DelaySchedule, Network};
use crate::{Error, Result};

/// Early stopping requires the tolerance test to hold this many consecutive
/// rounds, so transient dips through the threshold do not end a run.
const HYSTERESIS_ROUNDS: usize = 50;

/// Default tolerances used to judge convergence when the termination mode
/// does not carry its own.
const DEFAULT_EPS: f64 = 1e-3;

/// Which update equations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Semi-centralized: shared scalar d and x.
    Parallel,
    /// Peer-to-peer over W, no delays.
    Distributed,
    /// Peer-to-peer with every link delayed by the same τ̄.
    Homogeneous(usize),
    /// Peer-to-peer with per-link delays.
    Dtac,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Parallel => write!(f, "parallel"),
            Variant::Distributed => write!(f, "distributed"),
            Variant::Homogeneous(tau) => write!(f, "homogeneous({tau})"),
            Variant::Dtac => write!(f, "dtac"),
        }
    }
}

/// When to stop iterating.
#[derive(Debug, Clone, Copy)]
pub enum Termination {
    /// Run exactly max_iters rounds.
    FixedIters,
    /// Stop once |d̄| < eps_d and the dual spread max(x)−min(x) < eps_x hold
    /// for a hysteresis window of consecutive rounds.
    Tolerance { eps_d: f64, eps_x: f64 },
}

/// Where the primal variables start.
#[derive(Debug, Clone)]
pub enum InitialY {
    /// Midpoint of each agent's box.
    BoxMidpoint,
    /// Same value for every agent (must sit inside every box).
    Constant(f64),
    /// One value per agent.
    Explicit(Vec<f64>),
    /// Uniform draw inside each box, seeded by the run seed.
    RandomUniform,
}

/// Run parameters shared by all variants.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: Variant,
    /// Penalty weight c > 0.
    pub c: f64,
    pub max_iters: usize,
    pub termination: Termination,
    pub seed: u64,
    /// Record every k-th iteration (initial and final states always).
    pub record_every: usize,
    pub y0: InitialY,
    /// Replace x⁰ = 0 (testing hook; not supported by the parallel variant).
    pub x0_override: Option<Vec<f64>>,
    /// Replace d⁰ = a·y⁰ − b (testing hook; not supported by the parallel
    /// variant).
    pub d0_override: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(variant: Variant, c: f64) -> Self {
        RunConfig {
            variant,
            c,
            max_iters: 10_000,
            termination: Termination::Tolerance {
                eps_d: DEFAULT_EPS,
                eps_x: DEFAULT_EPS,
            },
            seed: 0,
            record_every: 1,
            y0: InitialY::BoxMidpoint,
            x0_override: None,
            d0_override: None,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_termination(mut self, termination: Termination) -> Self {
        self.termination = termination;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_record_every(mut self, record_every: usize) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn with_y0(mut self, y0: InitialY) -> Self {
        self.y0 = y0;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Invalid {
                what: "penalty c".into(),
                why: format!("need a positive finite c, got {}", self.c),
            });
        }
        if self.record_every == 0 {
            return Err(Error::Invalid {
                what: "record_every".into(),
                why: "must be at least 1".into(),
            });
        }
        if let Termination::Tolerance { eps_d, eps_x } = self.termination {
            if !(eps_d > 0.0 && eps_x > 0.0) {
                return Err(Error::Invalid {
                    what: "termination tolerances".into(),
                    why: format!("need positive tolerances, got ({eps_d}, {eps_x})"),
                });
            }
        }
        Ok(())
    }

    fn tolerances(&self) -> (f64, f64) {
        match self.termination {
            Termination::FixedIters => (DEFAULT_EPS, DEFAULT_EPS),
            Termination::Tolerance { eps_d, eps_x } => (eps_d, eps_x),
        }
    }
}

/// One agent's triple at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub y: f64,
    pub d: f64,
    pub x: f64,
}

/// Delay line for one ordered link. Payloads pushed when sent surface after
/// the link's constant delay; until the first real payload arrives the
/// receiver reads a silent payload with zero d and x.
#[derive(Debug, Clone)]
pub struct LinkBuffer {
    queue: VecDeque<(i64, AgentState)>,
    delay: usize,
}

impl LinkBuffer {
    /// Pre-fill with `delay` copies of the warm-up payload, stamped with the
    /// (negative) send iterations they stand in for. The warm-up payload is
    /// what the receiver reads before the first real message arrives; it
    /// must carry zero d and x so that undelivered rounds add no mass to
    /// the receiver's aggregates.
    pub fn new(delay: usize, warmup: AgentState) -> Self {
        let mut queue = VecDeque::with_capacity(delay + 1);
        for i in 0..delay {
            queue.push_back((i as i64 - delay as i64, warmup));
        }
        LinkBuffer { queue, delay }
    }

    /// Push the state sent at iteration `k` and pop the payload delivered at
    /// `k`, which was sent at `k − delay`.
    pub fn exchange(&mut self, k: usize, outgoing: AgentState) -> (i64, AgentState) {
        self.queue.push_back((k as i64, outgoing));
        self.queue
            .pop_front()
            .expect("queue holds at least the payload just pushed")
    }

    pub fn delay(&self) -> usize {
        self.delay
    }
}

/// Recorded trajectory of one run. Self-contained: carries the coupling
/// weights and demand offsets so the derived series (mean deviation, error
/// norms) re-compute without the original problem in hand.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Iteration labels of the recorded states (0 = initialization).
    pub iters: Vec<usize>,
    /// y[t][i]: primal state of agent i at recorded index t.
    pub y: Vec<Vec<f64>>,
    /// d[t][i]: feasibility tracker.
    pub d: Vec<Vec<f64>>,
    /// x[t][i]: local dual (the parallel variant broadcasts its shared
    /// scalars, so its e_d/e_x are exactly zero).
    pub x: Vec<Vec<f64>>,
    /// Coupling weight per agent.
    pub a: Vec<f64>,
    /// Demand offset per agent.
    pub b: Vec<f64>,
    /// Rounds actually executed.
    pub iterations_run: usize,
    /// Final state meets the (possibly default) tolerances.
    pub converged: bool,
    /// Φ(y) at the final state.
    pub final_objective: f64,
}

impl RunRecord {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Number of recorded states.
    pub fn len(&self) -> usize {
        self.iters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iters.is_empty()
    }

    pub fn final_y(&self) -> &[f64] {
        self.y.last().expect("record never empty")
    }

    pub fn final_x(&self) -> &[f64] {
        self.x.last().expect("record never empty")
    }

    pub fn final_d(&self) -> &[f64] {
        self.d.last().expect("record never empty")
    }

    /// Mean feasibility deviation d̄ = (1/n)∑(aᵢyᵢ − bᵢ) at recorded index t.
    pub fn d_bar(&self, t: usize) -> f64 {
        let n = self.n() as f64;
        self.y[t]
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(&y, (&a, &b))| a * y - b)
            .sum::<f64>()
            / n
    }

    /// Mean dual x̄ at recorded index t.
    pub fn x_bar(&self, t: usize) -> f64 {
        self.x[t].iter().sum::<f64>() / self.n() as f64
    }
}

struct Recorder {
    every: usize,
    iters: Vec<usize>,
    y: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

impl Recorder {
    fn new(every: usize) -> Self {
        Recorder {
            every,
            iters: Vec::new(),
            y: Vec::new(),
            d: Vec::new(),
            x: Vec::new(),
        }
    }

    fn record(&mut self, k: usize, y: &[f64], d: &[f64], x: &[f64]) {
        self.iters.push(k);
        self.y.push(y.to_vec());
        self.d.push(d.to_vec());
        self.x.push(x.to_vec());
    }

    fn record_if_due(&mut self, k: usize, y: &[f64], d: &[f64], x: &[f64]) {
        if k.is_multiple_of(self.every) {
            self.record(k, y, d, x);
        }
    }

    fn force_final(&mut self, k: usize, y: &[f64], d: &[f64], x: &[f64]) {
        if self.iters.last() != Some(&k) {
            self.record(k, y, d, x);
        }
    }

    fn finish(self, problem: &Problem, iterations_run: usize, converged: bool) -> RunRecord {
        let final_objective = problem.objective(self.y.last().expect("record never empty"));
        RunRecord {
            iters: self.iters,
            y: self.y,
            d: self.d,
            x: self.x,
            a: problem.agents.iter().map(|s| s.a).collect(),
            b: problem.agents.iter().map(|s| s.b).collect(),
            iterations_run,
            converged,
            final_objective,
        }
    }
}

fn initial_y(problem: &Problem, config: &RunConfig) -> Result<Vec<f64>> {
    let pick = |i: usize, v: f64| -> Result<f64> {
        let (m, upper) = problem.agents[i].bounds;
        if !(m..=upper).contains(&v) {
            return Err(Error::Invalid {
                what: format!("initial y for agent {i}"),
                why: format!("{v} outside the box [{m}, {upper}]"),
            });
        }
        Ok(v)
    };
    match &config.y0 {
        InitialY::BoxMidpoint => Ok(problem
            .agents
            .iter()
            .map(|s| 0.5 * (s.bounds.0 + s.bounds.1))
            .collect()),
        InitialY::Constant(v) => (0..problem.n()).map(|i| pick(i, *v)).collect(),
        InitialY::Explicit(values) => {
            if values.len() != problem.n() {
                return Err(Error::Invalid {
                    what: "initial y".into(),
                    why: format!(
                        "got {} values for {} agents",
                        values.len(),
                        problem.n()
                    ),
                });
            }
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| pick(i, v))
                .collect()
        }
        InitialY::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Ok(problem
                .agents
                .iter()
                .map(|s| rng.gen_range(s.bounds.0..=s.bounds.1))
                .collect())
        }
    }
}

fn initial_overrides(problem: &Problem, config: &RunConfig, y0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = problem.n();
    let d0 = match &config.d0_override {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(Error::Invalid {
                what: "d0_override".into(),
                why: format!("got {} values for {n} agents", v.len()),
            })
        }
        None => problem
            .agents
            .iter()
            .zip(y0)
            .map(|(s, &y)| s.a * y - s.b)
            .collect(),
    };
    let x0 = match &config.x0_override {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(Error::Invalid {
                what: "x0_override".into(),
                why: format!("got {} values for {n} agents", v.len()),
            })
        }
        None => vec![0.0; n],
    };
    Ok((d0, x0))
}

fn check_finite_state(k: usize, y: &[f64], d: &[f64], x: &[f64]) -> Result<()> {
    for (agent, ((yv, dv), xv)) in y.iter().zip(d).zip(x).enumerate() {
        for (quantity, v) in [("y", *yv), ("d", *dv), ("x", *xv)] {
            if !v.is_finite() {
                return Err(Error::Diverged {
                    iteration: k,
                    agent,
                    quantity,
                });
            }
        }
    }
    Ok(())
}

fn wrap_argmin_error(err: Error, agent: usize, iteration: usize) -> Error {
    match err {
        Error::ArgminFailed(why) => {
            Error::ArgminFailed(format!("agent {agent}, iteration {iteration}: {why}"))
        }
        other => other,
    }
}

/// Mean feasibility deviation computed from the primal states.
fn d_bar_of(problem: &Problem, y: &[f64]) -> f64 {
    problem.residual(y) / problem.n() as f64
}

fn spread(x: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

fn meets_tolerance(problem: &Problem, y: &[f64], x: &[f64], eps_d: f64, eps_x: f64) -> bool {
    d_bar_of(problem, y).abs() < eps_d && spread(x) < eps_x
}

/// Run the variant selected by `config` over the given network and delays.
pub fn run(
    problem: &Problem,
    network: &Network,
    delays: &DelaySchedule,
    config: &RunConfig,
) -> Result<RunRecord> {
    problem.validate()?;
    config.validate()?;
    if problem.n() != network.n {
        return Err(Error::Invalid {
            what: "problem size".into(),
            why: format!("{} agents vs {} network nodes", problem.n(), network.n),
        });
    }
    for &(i, j) in &network.edges {
        if !delays.tau.contains_key(&(i, j)) {
            return Err(Error::Invalid {
                what: "delay schedule".into(),
                why: format!("missing entry for edge ({i}, {j})"),
            });
        }
    }
    match config.variant {
        Variant::Parallel => {
            if !delays.all_zero() {
                return Err(Error::Invalid {
                    what: "delay schedule".into(),
                    why: "parallel variant requires all-zero delays".into(),
                });
            }
            run_parallel(problem, config)
        }
        Variant::Distributed => {
            if !delays.all_zero() {
                return Err(Error::Invalid {
                    what: "delay schedule".into(),
                    why: "distributed variant requires all-zero delays".into(),
                });
            }
            run_distributed(problem, network, config)
        }
        Variant::Homogeneous(tau) => {
            let constant = delays.is_homogeneous()
                && network
                    .edges
                    .first()
                    .is_none_or(|&(i, j)| delays.delay(i, j) == tau);
            if !constant {
                return Err(Error::Invalid {
                    what: "delay schedule".into(),
                    why: format!("homogeneous({tau}) variant requires every link delayed by {tau}"),
                });
            }
            run_homogeneous(problem, network, tau, config)
        }
        Variant::Dtac => run_dtac(problem, network, delays, config),
    }
}

/// Semi-centralized loop: per-agent argmin against a shared dual scalar,
/// then central refresh of the shared deviation and dual.
pub fn run_parallel(problem: &Problem, config: &RunConfig) -> Result<RunRecord> {
    problem.validate()?;
    config.validate()?;
    if config.variant != Variant::Parallel {
        return Err(Error::Invalid {
            what: "run config".into(),
            why: format!("run_parallel needs the parallel variant, got {:?}", config.variant),
        });
    }
    if config.x0_override.is_some() || config.d0_override.is_some() {
        return Err(Error::Invalid {
            what: "run config".into(),
            why: "state overrides are not supported by the parallel variant".into(),
        });
    }
    let n = problem.n();
    let (eps_d, eps_x) = config.tolerances();
    let early = matches!(config.termination, Termination::Tolerance { .. });

    let mut y = initial_y(problem, config)?;
    let mut d = d_bar_of(problem, &y);
    let mut x = 0.0f64;
    let broadcast = |v: f64| vec![v; n];

    let mut recorder = Recorder::new(config.record_every);
    recorder.record(0, &y, &broadcast(d), &broadcast(x));

    let mut streak = 0usize;
    let mut k_final = 0usize;
    for k in 0..config.max_iters {
        let mut y_next = vec![0.0; n];
        for (i, spec) in problem.agents.iter().enumerate() {
            y_next[i] = local_argmin(spec, x, y[i], d, config.c)
                .map_err(|e| wrap_argmin_error(e, i, k + 1))?;
        }
        let d_next = d_bar_of(problem, &y_next);
        let x_next = x + config.c * d_next;
        y = y_next;
        d = d_next;
        x = x_next;
        k_final = k + 1;
        let dv = broadcast(d);
        let xv = broadcast(x);
        check_finite_state(k_final, &y, &dv, &xv)?;
        recorder.record_if_due(k_final, &y, &dv, &xv);
        streak = if meets_tolerance(problem, &y, &xv, eps_d, eps_x) {
            streak + 1
        } else {
            0
        };
        if early && streak >= HYSTERESIS_ROUNDS {
            break;
        }
    }
    recorder.force_final(k_final, &y, &broadcast(d), &broadcast(x));
    let converged = meets_tolerance(problem, &y, &broadcast(x), eps_d, eps_x);
    Ok(recorder.finish(problem, k_final, converged))
}

/// Shared skeleton for the peer-to-peer loops: the caller supplies the
/// aggregate rule filling η̂ and δ̂ for round k, plus a post-round hook that
/// sees the freshly committed state.
fn run_peer_to_peer(
    problem: &Problem,
    config: &RunConfig,
    mut aggregates: impl FnMut(usize, &[f64], &[f64], &mut [f64], &mut [f64]),
    mut committed: impl FnMut(&[f64], &[f64], &[f64]),
    y0: Vec<f64>,
    d0: Vec<f64>,
    x0: Vec<f64>,
) -> Result<RunRecord> {
    let n = problem.n();
    let (eps_d, eps_x) = config.tolerances();
    let early = matches!(config.termination, Termination::Tolerance { .. });

    let mut y = y0;
    let mut d = d0;
    let mut x = x0;
    let mut recorder = Recorder::new(config.record_every);
    recorder.record(0, &y, &d, &x);

    let mut eta = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut streak = 0usize;
    let mut k_final = 0usize;
    for k in 0..config.max_iters {
        aggregates(k, &d, &x, &mut eta, &mut delta);
        for i in 0..n {
            let spec = &problem.agents[i];
            let y_new = local_argmin(spec, eta[i], y[i], delta[i], config.c)
                .map_err(|e| wrap_argmin_error(e, i, k + 1))?;
            let d_new = delta[i] + spec.a * (y_new - y[i]);
            let x_new = eta[i] + config.c * d_new;
            y[i] = y_new;
            d[i] = d_new;
            x[i] = x_new;
        }
        k_final = k + 1;
        check_finite_state(k_final, &y, &d, &x)?;
        committed(&y, &d, &x);
        recorder.record_if_due(k_final, &y, &d, &x);
        streak = if meets_tolerance(problem, &y, &x, eps_d, eps_x) {
            streak + 1
        } else {
            0
        };
        if early && streak >= HYSTERESIS_ROUNDS {
            break;
        }
    }
    recorder.force_final(k_final, &y, &d, &x);
    let converged = meets_tolerance(problem, &y, &x, eps_d, eps_x);
    Ok(recorder.finish(problem, k_final, converged))
}

/// Peer-to-peer zero-delay loop: aggregates read the neighbors' current
/// states through W.
fn run_distributed(problem: &Problem, network: &Network, config: &RunConfig) -> Result<RunRecord> {
    let n = problem.n();
    let w = network.w.clone();
    let y0 = initial_y(problem, config)?;
    let (d0, x0) = initial_overrides(problem, config, &y0)?;
    run_peer_to_peer(
        problem,
        config,
        move |_k, d, x, eta, delta| {
            for i in 0..n {
                let mut e = 0.0;
                let mut dl = 0.0;
                for j in 0..n {
                    let wij = w[(i, j)];
                    e += wij * x[j];
                    dl += wij * d[j];
                }
                eta[i] = e;
                delta[i] = dl;
            }
        },
        |_, _, _| {},
        y0,
        d0,
        x0,
    )
}

/// Peer-to-peer loop where every link is delayed by the same τ̄: neighbors
/// are read τ̄ rounds back from a shared history window, a node's own state
/// is read current.
fn run_homogeneous(
    problem: &Problem,
    network: &Network,
    tau: usize,
    config: &RunConfig,
) -> Result<RunRecord> {
    let n = problem.n();
    let w = network.w.clone();
    let y0 = initial_y(problem, config)?;
    let (d0, x0) = initial_overrides(problem, config, &y0)?;

    // history holds the last τ̄+1 committed (d, x) vectors; front() is the
    // state τ̄ rounds back. Pre-history entries are zero: before a round's
    // message has actually been sent, a link contributes no mass to the
    // aggregates. Replaying the initialization instead would inject the
    // initial feasibility deviation τ̄ extra times and permanently offset
    // the conserved tracking sum, so feasibility would never be reached.
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(tau + 1);
    for _ in 0..tau {
        history.push_back((vec![0.0; n], vec![0.0; n]));
    }
    history.push_back((d0.clone(), x0.clone()));
    let history = std::cell::RefCell::new(history);

    run_peer_to_peer(
        problem,
        config,
        |_k, d, x, eta, delta| {
            let history = history.borrow();
            let (d_old, x_old) = history.front().expect("history pre-filled");
            for i in 0..n {
                let mut e = 0.0;
                let mut dl = 0.0;
                for j in 0..n {
                    let wij = w[(i, j)];
                    if j == i {
                        e += wij * x[j];
                        dl += wij * d[j];
                    } else {
                        e += wij * x_old[j];
                        dl += wij * d_old[j];
                    }
                }
                eta[i] = e;
                delta[i] = dl;
            }
        },
        |_y, d, x| {
            let mut history = history.borrow_mut();
            history.push_back((d.to_vec(), x.to_vec()));
            history.pop_front();
        },
        y0,
        d0,
        x0,
    )
}

/// The general per-link-delay loop: every ordered edge carries a FIFO
/// delay line, exchanged once per round.
fn run_dtac(
    problem: &Problem,
    network: &Network,
    delays: &DelaySchedule,
    config: &RunConfig,
) -> Result<RunRecord> {
    let n = problem.n();
    let w = network.w.clone();
    let y0 = initial_y(problem, config)?;
    let (d0, x0) = initial_overrides(problem, config, &y0)?;

    // buffers[i][j]: delay line for the j → i link.
    let mut buffers: Vec<Vec<Option<LinkBuffer>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i != j && network.has_edge(i, j) {
                        // Pre-arrival payloads carry zero d and x: nothing
                        // has been sent yet, so the link contributes no
                        // mass to the aggregates during warm-up.
                        let warmup = AgentState {
                            y: y0[j],
                            d: 0.0,
                            x: 0.0,
                        };
                        Some(LinkBuffer::new(delays.delay(i, j), warmup))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    let mut y_current = y0.clone();
    let mut delivered: Vec<Vec<AgentState>> = vec![
        vec![AgentState {
            y: 0.0,
            d: 0.0,
            x: 0.0
        }; n];
        n
    ];

    let buffers_ref = std::cell::RefCell::new((&mut buffers, &mut delivered, &mut y_current));

    let record = run_peer_to_peer(
        problem,
        config,
        |k, d, x, eta, delta| {
            let mut state = buffers_ref.borrow_mut();
            let (buffers, delivered, y_current) = &mut *state;
            for i in 0..n {
                for j in 0..n {
                    if let Some(buffer) = buffers[i][j].as_mut() {
                        let outgoing = AgentState {
                            y: y_current[j],
                            d: d[j],
                            x: x[j],
                        };
                        let (_, payload) = buffer.exchange(k, outgoing);
                        delivered[i][j] = payload;
                    }
                }
            }
            for i in 0..n {
                let mut e = 0.0;
                let mut dl = 0.0;
                for j in 0..n {
                    let wij = w[(i, j)];
                    if i != j && buffers[i][j].is_some() {
                        e += wij * delivered[i][j].x;
                        dl += wij * delivered[i][j].d;
                    } else {
                        e += wij * x[j];
                        dl += wij * d[j];
                    }
                }
                eta[i] = e;
                delta[i] = dl;
            }
        },
        |y, _d, _x| {
            let mut state = buffers_ref.borrow_mut();
            state.2.copy_from_slice(y);
        },
        y0.clone(),
        d0,
        x0,
    )?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::costs::{AgentSpec, CostModel};
    use crate::oracle::solve_dual_bisection;
    use crate::topology::{assign_delays, build_weights, build_weights_custom, cycle_edges, DelayMode};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad(gamma: f64, beta: f64, b: f64, bounds: (f64, f64), a: f64) -> AgentSpec {
        AgentSpec {
            cost: CostModel::Quadratic {
                gamma,
                beta,
                alpha: 0.0,
            },
            b,
            bounds,
            a,
        }
    }

    fn random_problem(n: usize, seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Problem {
            agents: (0..n)
                .map(|_| {
                    quad(
                        rng.gen_range(0.2..3.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(0.0..5.0),
                        (-10.0, 20.0),
                        1.0,
                    )
                })
                .collect(),
        }
    }

    fn fixed_config(variant: Variant) -> RunConfig {
        RunConfig::new(variant, 5.0)
            .with_max_iters(500)
            .with_termination(Termination::FixedIters)
    }

    #[test]
    fn link_buffer_delivers_after_its_delay() {
        let silent = AgentState { y: 1.0, d: 0.0, x: 0.0 };
        let mut buffer = LinkBuffer::new(2, silent);
        for k in 0..6 {
            let outgoing = AgentState {
                y: k as f64,
                d: k as f64 + 10.0,
                x: 0.0,
            };
            let (sent_at, payload) = buffer.exchange(k, outgoing);
            assert_eq!(sent_at, k as i64 - 2);
            if sent_at < 0 {
                assert_eq!(payload, silent);
            } else {
                assert_eq!(payload.y, sent_at as f64);
                assert_eq!(payload.d, sent_at as f64 + 10.0);
            }
        }
    }

    #[test]
    fn zero_delay_dtac_matches_distributed_bitwise() {
        for seed in 0..5 {
            let n = 4 + (seed as usize % 3);
            let edges = crate::topology::erdos_renyi_edges(n, 0.6, seed).unwrap();
            let network = build_weights(&edges, n).unwrap();
            let delays = assign_delays(&network, 0, DelayMode::Constant(0), 0).unwrap();
            let problem = random_problem(n, seed);
            let base = fixed_config(Variant::Distributed).with_seed(seed);
            let a = run(&problem, &network, &delays, &base).unwrap();
            let mut cfg = base.clone();
            cfg.variant = Variant::Dtac;
            let b = run(&problem, &network, &delays, &cfg).unwrap();
            assert_eq!(a.y, b.y);
            assert_eq!(a.d, b.d);
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn constant_delay_dtac_matches_homogeneous_bitwise() {
        for &tau in &[1usize, 3, 7] {
            let network = build_weights(&cycle_edges(5), 5).unwrap();
            let delays = assign_delays(&network, tau, DelayMode::Constant(tau), 0).unwrap();
            let problem = random_problem(5, tau as u64);
            let mut cfg = fixed_config(Variant::Homogeneous(tau));
            let a = run(&problem, &network, &delays, &cfg).unwrap();
            cfg.variant = Variant::Dtac;
            let b = run(&problem, &network, &delays, &cfg).unwrap();
            assert_eq!(a.y, b.y);
            assert_eq!(a.d, b.d);
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn delayed_tracking_conserves_mass_with_in_flight_payloads() {
        // At every round, the d-states plus the d-mass still queued on the
        // wires must add up to the current total feasibility deviation.
        let network = build_weights(&cycle_edges(6), 6).unwrap();
        let mut map = BTreeMap::new();
        for (idx, &edge) in network.edges.iter().enumerate() {
            map.insert(edge, [0usize, 3, 1, 2, 3, 1][idx]);
        }
        let delays = assign_delays(&network, 3, DelayMode::Explicit(map), 0).unwrap();
        let mut problem = random_problem(6, 5);
        problem.agents[4].a = -1.0;
        problem.agents[5].a = -1.0;
        let cfg = fixed_config(Variant::Dtac).with_max_iters(300);
        let record = run(&problem, &network, &delays, &cfg).unwrap();

        for k in 0..record.len() {
            let held: f64 = record.d[k].iter().sum();
            let mut in_flight = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    if i == j || !network.has_edge(i, j) {
                        continue;
                    }
                    let tau = delays.delay(i, j);
                    let from = k.saturating_sub(tau);
                    for m in from..k {
                        in_flight += network.w[(i, j)] * record.d[m][j];
                    }
                }
            }
            let deviation: f64 = (0..6)
                .map(|i| record.a[i] * record.y[k][i] - record.b[i])
                .sum();
            assert!(
                (held + in_flight - deviation).abs() <= 1e-9,
                "round {k}: held {held} + in-flight {in_flight} != deviation {deviation}"
            );
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let network = build_weights(&cycle_edges(6), 6).unwrap();
        let delays = assign_delays(&network, 4, DelayMode::UniformRandom, 3).unwrap();
        let problem = random_problem(6, 11);
        let cfg = fixed_config(Variant::Dtac)
            .with_seed(42)
            .with_y0(InitialY::RandomUniform);
        let a = run(&problem, &network, &delays, &cfg).unwrap();
        let b = run(&problem, &network, &delays, &cfg).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.d, b.d);
        assert_eq!(a.x, b.x);
        assert_eq!(a.iters, b.iters);
    }

    #[test]
    fn box_invariance_after_first_update() {
        let network = build_weights(&cycle_edges(4), 4).unwrap();
        let delays = assign_delays(&network, 2, DelayMode::UniformRandom, 9).unwrap();
        let problem = random_problem(4, 9);
        let record = run(&problem, &network, &delays, &fixed_config(Variant::Dtac)).unwrap();
        for (t, y) in record.y.iter().enumerate() {
            if record.iters[t] == 0 {
                continue;
            }
            for (spec, &yi) in problem.agents.iter().zip(y) {
                assert!((spec.bounds.0..=spec.bounds.1).contains(&yi));
            }
        }
    }

    #[test]
    fn feasibility_tracking_identity_zero_delay() {
        let network = build_weights(&cycle_edges(5), 5).unwrap();
        let delays = DelaySchedule::zero(&network);
        let problem = random_problem(5, 21);
        let record = run(&problem, &network, &delays, &fixed_config(Variant::Distributed)).unwrap();
        for t in 0..record.len() {
            let mean_d: f64 = record.d[t].iter().sum::<f64>() / 5.0;
            assert!(
                (mean_d - record.d_bar(t)).abs() <= 1e-10,
                "iteration {}: mean d {} vs y-based {}",
                record.iters[t],
                mean_d,
                record.d_bar(t)
            );
        }
    }

    #[test]
    fn mean_dual_recursion_zero_delay() {
        let network = build_weights(&cycle_edges(5), 5).unwrap();
        let delays = DelaySchedule::zero(&network);
        let problem = random_problem(5, 33);
        let cfg = fixed_config(Variant::Distributed).with_max_iters(60);
        let record = run(&problem, &network, &delays, &cfg).unwrap();
        for t in 0..record.len() - 1 {
            if record.iters[t + 1] != record.iters[t] + 1 {
                continue;
            }
            let lhs = record.x_bar(t + 1) - record.x_bar(t);
            let rhs = cfg.c * record.d_bar(t + 1);
            assert!((lhs - rhs).abs() <= 1e-10, "iteration {}", record.iters[t]);
        }
    }

    #[test]
    fn parallel_two_agents_reach_symmetric_optimum() {
        let problem = Problem {
            agents: vec![
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
            ],
        };
        let cfg = RunConfig::new(Variant::Parallel, 2.0)
            .with_max_iters(2_000)
            .with_termination(Termination::Tolerance {
                eps_d: 1e-8,
                eps_x: 1e-8,
            });
        let record = run_parallel(&problem, &cfg).unwrap();
        assert!((record.final_y()[0] - 1.0).abs() <= 1e-6);
        assert!((record.final_y()[1] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn parallel_zero_iterations_records_initialization_only() {
        let problem = random_problem(3, 5);
        let cfg = RunConfig::new(Variant::Parallel, 5.0).with_max_iters(0);
        let record = run_parallel(&problem, &cfg).unwrap();
        assert_eq!(record.len(), 1);
        assert_eq!(record.iters, vec![0]);
        assert_eq!(record.iterations_run, 0);
    }

    #[test]
    fn single_agent_converges_to_its_demand() {
        let network = build_weights_custom(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let delays = DelaySchedule::zero(&network);
        let problem = Problem {
            agents: vec![quad(1.0, 0.5, 4.0, (0.0, 10.0), 1.0)],
        };
        let cfg = RunConfig::new(Variant::Dtac, 5.0)
            .with_max_iters(5_000)
            .with_termination(Termination::Tolerance {
                eps_d: 1e-9,
                eps_x: 1e-9,
            });
        let record = run(&problem, &network, &delays, &cfg).unwrap();
        let oracle = solve_dual_bisection(&problem).unwrap();
        assert!((record.final_y()[0] - 4.0).abs() <= 1e-6);
        assert!((record.final_y()[0] - oracle.y_star[0]).abs() <= 1e-6);
        assert!(record.converged);
    }

    #[test]
    fn cross_variant_fixed_points_agree() {
        let problem = random_problem(6, 77);
        let network = build_weights(&cycle_edges(6), 6).unwrap();
        let delays = assign_delays(&network, 3, DelayMode::Constant(3), 0).unwrap();
        let zero = DelaySchedule::zero(&network);
        let iters = 6_000;
        let par = run_parallel(
            &problem,
            &RunConfig::new(Variant::Parallel, 5.0)
                .with_max_iters(iters)
                .with_termination(Termination::FixedIters),
        )
        .unwrap();
        let dtac = run(
            &problem,
            &network,
            &delays,
            &RunConfig::new(Variant::Dtac, 5.0)
                .with_max_iters(iters)
                .with_termination(Termination::FixedIters),
        )
        .unwrap();
        let dist = run(
            &problem,
            &network,
            &zero,
            &RunConfig::new(Variant::Distributed, 5.0)
                .with_max_iters(iters)
                .with_termination(Termination::FixedIters),
        )
        .unwrap();
        for i in 0..6 {
            assert!((par.final_y()[i] - dtac.final_y()[i]).abs() <= 1e-4);
            assert!((dist.final_y()[i] - dtac.final_y()[i]).abs() <= 1e-4);
        }
    }

    #[test]
    fn variant_preconditions_enforced() {
        let network = build_weights(&cycle_edges(4), 4).unwrap();
        let delayed = assign_delays(&network, 2, DelayMode::Constant(2), 0).unwrap();
        let problem = random_problem(4, 1);
        let err = run(&problem, &network, &delayed, &fixed_config(Variant::Distributed)).unwrap_err();
        assert!(err.to_string().contains("all-zero"));
        let err = run(&problem, &network, &delayed, &fixed_config(Variant::Homogeneous(1))).unwrap_err();
        assert!(err.to_string().contains("every link delayed by 1"));
        let err = run(&problem, &network, &delayed, &fixed_config(Variant::Parallel)).unwrap_err();
        assert!(err.to_string().contains("all-zero"));
    }

    #[test]
    fn divergence_reports_iteration() {
        // Seed the duals near the float ceiling with a feasibility tracker
        // large enough that one penalty step pushes x past it.
        let network = build_weights(&cycle_edges(3), 3).unwrap();
        let delays = DelaySchedule::zero(&network);
        let problem = Problem {
            agents: vec![
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
            ],
        };
        let mut cfg = RunConfig::new(Variant::Distributed, 1e306).with_max_iters(10);
        cfg.termination = Termination::FixedIters;
        cfg.x0_override = Some(vec![1.7e308; 3]);
        cfg.d0_override = Some(vec![1e3; 3]);
        let err = run(&problem, &network, &delays, &cfg).unwrap_err();
        match err {
            Error::Diverged { iteration, .. } => assert_eq!(iteration, 1),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn early_stop_waits_for_hysteresis() {
        let problem = Problem {
            agents: vec![
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
                quad(1.0, 0.0, 1.0, (-50.0, 50.0), 1.0),
            ],
        };
        let network = build_weights(&[(0, 1)], 2).unwrap();
        let delays = DelaySchedule::zero(&network);
        let cfg = RunConfig::new(Variant::Distributed, 5.0)
            .with_max_iters(10_000)
            .with_termination(Termination::Tolerance {
                eps_d: 1e-6,
                eps_x: 1e-6,
            });
        let record = run(&problem, &network, &delays, &cfg).unwrap();
        assert!(record.converged);
        assert!(record.iterations_run >= HYSTERESIS_ROUNDS);
        assert!(record.iterations_run < 10_000);
    }

    #[test]
    fn record_decimation_keeps_first_and_final() {
        let problem = random_problem(4, 2);
        let network = build_weights(&cycle_edges(4), 4).unwrap();
        let delays = DelaySchedule::zero(&network);
        let cfg = fixed_config(Variant::Distributed)
            .with_max_iters(103)
            .with_record_every(20);
        let record = run(&problem, &network, &delays, &cfg).unwrap();
        assert_eq!(record.iters.first(), Some(&0));
        assert_eq!(record.iters.last(), Some(&103));
        assert!(record.iters.windows(2).all(|w| w[0] < w[1]));
    }
}
