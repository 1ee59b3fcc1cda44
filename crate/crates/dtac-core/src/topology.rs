//! Network topology, link-delay schedules, and the augmented (delay-lifted)
//! consensus matrices with their spectral analysis.
//!
//! A network is an undirected connected graph with a symmetric bi-stochastic
//! weight matrix `W`. Delays lift the one-step consensus recursion into a
//! larger linear system: stack the last `τ̄+1` state vectors and route every
//! entry of `W` through the block column matching its link delay,
//!
//! ```text
//!            ┌ P₀∘W  P₁∘W  …  P_τ̄∘W ┐
//!   PW_bar = │  I      0   …    0    │
//!            │  0      I   …    0    │
//!            └  0      0   …I   0    ┘
//! ```
//!
//! where `P_r` is the 0-1 mask of the pairs whose information arrives with
//! delay `r`. The consensus-error matrix `PW_tilde` subtracts the averaging
//! part `(1/n)·ones` through the same masks. Its spectral radius governs the
//! convergence rate of every delayed run, so `spectral_radius_check` reports
//! it next to the closed-form prediction for uniform delays.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Undirected communication graph with its consensus weight matrix.
#[derive(Debug, Clone)]
pub struct Network {
    /// Agent count.
    pub n: usize,
    /// Unordered edges, stored with the smaller index first.
    pub edges: Vec<(usize, usize)>,
    /// Symmetric bi-stochastic weight matrix.
    pub w: DMatrix<f64>,
}

impl Network {
    /// Consensus-error matrix `W − (1/n)·ones`.
    pub fn w_tilde(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        &self.w - DMatrix::from_element(self.n, self.n, 1.0 / n)
    }

    /// True when `{i, j}` is an edge of the graph.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).is_ok()
    }
}

/// Time-invariant symmetric link delays, one entry per edge.
#[derive(Debug, Clone)]
pub struct DelaySchedule {
    /// Delay per unordered edge, keyed with the smaller index first.
    pub tau: BTreeMap<(usize, usize), usize>,
    /// Largest delay present in the schedule.
    pub tau_bar: usize,
}

impl DelaySchedule {
    /// Delay on the (i, j) link; zero for a node's own state.
    pub fn delay(&self, i: usize, j: usize) -> usize {
        if i == j {
            return 0;
        }
        *self.tau.get(&(i.min(j), i.max(j))).unwrap_or(&0)
    }

    /// True when every link carries the same delay.
    pub fn is_homogeneous(&self) -> bool {
        let mut values = self.tau.values();
        match values.next() {
            None => true,
            Some(first) => values.all(|v| v == first),
        }
    }

    /// True when no link carries any delay.
    pub fn all_zero(&self) -> bool {
        self.tau.values().all(|&v| v == 0)
    }

    /// Zero-delay schedule over the edges of `network`.
    pub fn zero(network: &Network) -> Self {
        DelaySchedule {
            tau: network.edges.iter().map(|&e| (e, 0)).collect(),
            tau_bar: 0,
        }
    }
}

/// How `assign_delays` fills the schedule.
#[derive(Debug, Clone)]
pub enum DelayMode {
    /// Independent uniform draw from `{0, …, tau_bar}` per edge.
    UniformRandom,
    /// Same delay on every link.
    Constant(usize),
    /// Caller-provided delay per edge.
    Explicit(BTreeMap<(usize, usize), usize>),
}

/// Delay-lifted consensus matrices for one network + schedule pair.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    /// Agent count of the underlying network.
    pub n: usize,
    /// Largest delay; the lifted system stacks `tau_bar + 1` copies.
    pub tau_bar: usize,
    /// 0-1 delay-class masks `P₀ … P_τ̄`; together they cover every (i, j)
    /// pair exactly once. Under a constant schedule all pairs sit in class
    /// τ̄ (companion form); under a mixed schedule each link sits in the
    /// class of its delay and the pairs that exchange no information (self
    /// pairs and non-neighbors) sit in class zero.
    pub p: Vec<DMatrix<f64>>,
    /// Row-stochastic lifted weight matrix.
    pub pw_bar: DMatrix<f64>,
    /// Lifted consensus-error matrix `PW_bar − P1_bar`.
    pub pw_tilde: DMatrix<f64>,
    /// Consensus-error matrix of the underlying network.
    pub w_tilde: DMatrix<f64>,
    /// True when every link carries the same delay.
    pub homogeneous: bool,
}

impl AugmentedSystem {
    /// Unit block-vector `u_r ∈ R^{τ̄+1}` selecting the r-th stacked copy.
    pub fn u(&self, r: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.tau_bar + 1);
        v[r] = 1.0;
        v
    }

    /// Row-block extractor `Ξ_r = u_rᵀ ⊗ I_n` pulling the r-th copy out of a
    /// stacked state vector.
    pub fn xi(&self, r: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n * (self.tau_bar + 1));
        for i in 0..n {
            m[(i, r * n + i)] = 1.0;
        }
        m
    }

    /// Single-class lifted matrix: keep only class `r` in the first block
    /// row and scale the sub-diagonal identities by `1/(τ̄+1)`. The full
    /// `pw_tilde` is recovered exactly by summing these over all classes.
    pub fn single_class_matrix(&self, r: usize) -> DMatrix<f64> {
        let n = self.n;
        let blocks = self.tau_bar + 1;
        let size = n * blocks;
        let mut m = DMatrix::zeros(size, size);
        let masked = self.p[r].component_mul(&self.w_tilde);
        m.view_mut((0, r * n), (n, n)).copy_from(&masked);
        let scale = 1.0 / blocks as f64;
        for b in 0..self.tau_bar {
            for i in 0..n {
                m[((b + 1) * n + i, b * n + i)] = scale;
            }
        }
        m
    }
}

/// Spectral summary of an augmented system.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// ρ(W̃) of the underlying network.
    pub rho_w_tilde: f64,
    /// ρ(PW̃) of the lifted system.
    pub rho_pw_tilde: f64,
    /// ρ(W̃)^{1/(τ̄+1)}: the exact value under uniform delays, an upper
    /// bound otherwise.
    pub homogeneous_prediction: f64,
    /// Largest delay in the schedule behind this system.
    pub tau_bar: usize,
    /// ρ(PW̃) < 1.
    pub is_contractive: bool,
    /// ρ(PW̃) ≤ prediction + 1e-9.
    pub bound_satisfied: bool,
    /// For uniform delays: whether ρ(PW̃) matches the prediction within
    /// 1e-9. `None` when delays are heterogeneous.
    pub matches_homogeneous_law: Option<bool>,
}

/// Edge list of an n-cycle.
pub fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| order_pair(i, (i + 1) % n)).collect()
}

/// Edge list of the complete graph on n nodes.
pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    edges
}

/// Random edge set with independent link probability `p`, redrawn until the
/// graph comes out connected.
pub fn erdos_renyi_edges(n: usize, p: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::Invalid {
            what: "node count".into(),
            why: format!("need at least 2 nodes, got {n}"),
        });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid {
            what: "edge probability".into(),
            why: format!("{p} outside [0, 1]"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if is_connected(&edges, n) {
            return Ok(edges);
        }
    }
    Err(Error::Invalid {
        what: "edge probability".into(),
        why: format!("no connected draw on {n} nodes with p = {p} after 10000 attempts"),
    })
}

fn order_pair(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

fn is_connected(edges: &[(usize, usize)], n: usize) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

fn normalize_edges(edges: &[(usize, usize)], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i == j {
            return Err(Error::Invalid {
                what: "edge list".into(),
                why: format!("self-loop on node {i}"),
            });
        }
        if i >= n || j >= n {
            return Err(Error::Invalid {
                what: "edge list".into(),
                why: format!("edge ({i}, {j}) out of range for {n} nodes"),
            });
        }
        out.push(order_pair(i, j));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Build the consensus weight matrix for an undirected connected graph.
///
/// Link weights follow the max-degree rule `w_ij = 1/(max(|N_i|,|N_j|)+1)`
/// (the smaller of the two per-endpoint candidates, keeping `W` symmetric),
/// the diagonal absorbs the remaining mass, and the final matrix is the lazy
/// half-step `W ← (W+I)/2`, which makes it positive semi-definite.
pub fn build_weights(edges: &[(usize, usize)], n: usize) -> Result<Network> {
    if n < 2 {
        return Err(Error::Invalid {
            what: "node count".into(),
            why: format!("need at least 2 nodes, got {n}"),
        });
    }
    let edges = normalize_edges(edges, n)?;
    if !is_connected(&edges, n) {
        return Err(Error::NotConnected);
    }
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        let weight = 1.0 / (degree[i].max(degree[j]) + 1) as f64;
        w[(i, j)] = weight;
        w[(j, i)] = weight;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let w = (w + DMatrix::identity(n, n)) * 0.5;
    Ok(Network { n, edges, w })
}

/// Wrap a caller-provided weight matrix, validating all Network invariants.
///
/// The matrix is symmetrized by `(W + Wᵀ)/2` first; edges are derived from
/// the nonzero off-diagonal support.
pub fn build_weights_custom(w_raw: DMatrix<f64>) -> Result<Network> {
    let n = w_raw.nrows();
    if n == 0 || w_raw.ncols() != n {
        return Err(Error::Invalid {
            what: "weight matrix".into(),
            why: format!("need a non-empty square matrix, got {}×{}", n, w_raw.ncols()),
        });
    }
    let w = (&w_raw + w_raw.transpose()) * 0.5;
    for i in 0..n {
        for j in 0..n {
            if w[(i, j)] < 0.0 {
                return Err(Error::Invalid {
                    what: "weight matrix".into(),
                    why: format!("negative entry {:.3e} at ({i}, {j})", w[(i, j)]),
                });
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        let row: f64 = w.row(i).sum();
        worst = worst.max((row - 1.0).abs());
    }
    if worst > 1e-9 {
        return Err(Error::NotBiStochastic(worst));
    }
    let min_eig = w
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(Error::NotPsd(min_eig));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    if !is_connected(&edges, n) {
        return Err(Error::NotConnected);
    }
    Ok(Network { n, edges, w })
}

/// Cycle network where every node also links to its 2-hop ring neighbors,
/// all link weights 0.2, diagonal 0.2.
///
/// This matrix is bi-stochastic, symmetric, and connected, but not positive
/// semi-definite for every n (n = 6 has eigenvalue −0.2), so it bypasses the
/// PSD gate of `build_weights_custom` deliberately; the consensus iteration
/// only needs ρ(W̃) < 1, which holds here.
pub fn build_two_hop_cycle(n: usize) -> Result<Network> {
    if n < 5 {
        return Err(Error::Invalid {
            what: "node count".into(),
            why: format!("two-hop cycle needs at least 5 nodes, got {n}"),
        });
    }
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push(order_pair(i, (i + 1) % n));
        edges.push(order_pair(i, (i + 2) % n));
    }
    let edges = normalize_edges(&edges, n)?;
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        w[(i, j)] = 0.2;
        w[(j, i)] = 0.2;
    }
    for i in 0..n {
        w[(i, i)] = 0.2;
    }
    Ok(Network { n, edges, w })
}

/// Assign symmetric time-invariant delays to every edge of `network`.
///
/// `tau_bar` caps every delay; the returned schedule stores the largest
/// delay actually present, which also sizes the augmented system.
pub fn assign_delays(
    network: &Network,
    tau_bar: usize,
    mode: DelayMode,
    seed: u64,
) -> Result<DelaySchedule> {
    let mut tau = BTreeMap::new();
    match mode {
        DelayMode::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &edge in &network.edges {
                tau.insert(edge, rng.gen_range(0..=tau_bar));
            }
        }
        DelayMode::Constant(t) => {
            if t > tau_bar {
                return Err(Error::Invalid {
                    what: "delay mode".into(),
                    why: format!("constant delay {t} exceeds bound {tau_bar}"),
                });
            }
            for &edge in &network.edges {
                tau.insert(edge, t);
            }
        }
        DelayMode::Explicit(map) => {
            for (&(i, j), &t) in &map {
                let key = order_pair(i, j);
                if !network.has_edge(key.0, key.1) {
                    return Err(Error::Invalid {
                        what: "delay map".into(),
                        why: format!("({i}, {j}) is not an edge"),
                    });
                }
                if t > tau_bar {
                    return Err(Error::Invalid {
                        what: "delay map".into(),
                        why: format!("delay {t} on ({i}, {j}) exceeds bound {tau_bar}"),
                    });
                }
                if let Some(&prev) = tau.get(&key) {
                    if prev != t {
                        return Err(Error::Invalid {
                            what: "delay map".into(),
                            why: format!("asymmetric delays {prev} and {t} on ({i}, {j})"),
                        });
                    }
                }
                tau.insert(key, t);
            }
            for &edge in &network.edges {
                if !tau.contains_key(&edge) {
                    return Err(Error::Invalid {
                        what: "delay map".into(),
                        why: format!("missing delay for edge ({}, {})", edge.0, edge.1),
                    });
                }
            }
        }
    }
    let realized = tau.values().cloned().max().unwrap_or(0);
    Ok(DelaySchedule {
        tau,
        tau_bar: realized,
    })
}

/// Lift the consensus matrices of `network` by the delays in `schedule`.
///
/// Every (i, j) pair lands in exactly one delay class: edges keep their link
/// delay, while self pairs and non-neighbor pairs are routed through the
/// slowest class. That full partition keeps the first block row summing to
/// `W` (row-stochastic lift) and, under uniform delays, collapses `PW_tilde`
/// to the companion form whose eigenvalues are exact (τ̄+1)-th roots of the
/// eigenvalues of `W̃`.
pub fn build_augmented(network: &Network, schedule: &DelaySchedule) -> AugmentedSystem {
    let n = network.n;
    let tau_bar = schedule.tau_bar;
    let blocks = tau_bar + 1;

    // A constant schedule collapses to the companion form: every entry of
    // the centered weight matrix, self and non-link mass included, rides in
    // the single delayed class, so the lifted spectrum obeys the exact
    // homogeneous law. A mixed schedule keeps each link in the class of its
    // own delay and leaves the entries that never cross a wire (self-loops
    // and the centering mass of non-adjacent pairs) in class zero.
    let homogeneous = schedule.is_homogeneous();
    let mut p = vec![DMatrix::zeros(n, n); blocks];
    for i in 0..n {
        for j in 0..n {
            let class = if homogeneous {
                tau_bar
            } else if i != j && network.has_edge(i, j) {
                schedule.delay(i, j)
            } else {
                0
            };
            p[class][(i, j)] = 1.0;
        }
    }

    let w_tilde = network.w_tilde();
    let ones_avg = DMatrix::from_element(n, n, 1.0 / n as f64);
    let size = n * blocks;
    let mut pw_bar = DMatrix::zeros(size, size);
    let mut pw_tilde = DMatrix::zeros(size, size);
    for (r, mask) in p.iter().enumerate() {
        pw_bar
            .view_mut((0, r * n), (n, n))
            .copy_from(&mask.component_mul(&network.w));
        pw_tilde
            .view_mut((0, r * n), (n, n))
            .copy_from(&mask.component_mul(&(&network.w - &ones_avg)));
    }
    for b in 0..tau_bar {
        for i in 0..n {
            pw_bar[((b + 1) * n + i, b * n + i)] = 1.0;
            pw_tilde[((b + 1) * n + i, b * n + i)] = 1.0;
        }
    }

    AugmentedSystem {
        n,
        tau_bar,
        p,
        pw_bar,
        pw_tilde,
        w_tilde,
        homogeneous,
    }
}

/// Spectral radius of a general real matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of a symmetric real matrix.
pub fn spectral_radius_symmetric(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Compare ρ(PW̃) against ρ(W̃)^{1/(τ̄+1)}: exact under uniform delays, an
/// upper bound otherwise.
pub fn spectral_radius_check(aug: &AugmentedSystem) -> SpectralReport {
    let rho_w_tilde = spectral_radius_symmetric(&aug.w_tilde);
    // With no delay the lift is the centered weight matrix itself, so the
    // same symmetric solver keeps the two radii bit-identical.
    let rho_pw_tilde = if aug.tau_bar == 0 {
        spectral_radius_symmetric(&aug.pw_tilde)
    } else {
        spectral_radius(&aug.pw_tilde)
    };
    let prediction = rho_w_tilde.powf(1.0 / (aug.tau_bar + 1) as f64);
    SpectralReport {
        rho_w_tilde,
        rho_pw_tilde,
        homogeneous_prediction: prediction,
        tau_bar: aug.tau_bar,
        is_contractive: rho_pw_tilde < 1.0,
        bound_satisfied: rho_pw_tilde <= prediction + 1e-9,
        matches_homogeneous_law: aug
            .homogeneous
            .then(|| (rho_pw_tilde - prediction).abs() <= 1e-9),
    }
}
