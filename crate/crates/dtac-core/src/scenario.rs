//! Scenario files and batch runners.
//!
//! A scenario file is a line-oriented description of one complete
//! experiment. Blank lines and `#` comments are ignored; everything else
//! is a `key = value` entry inside a `[section]`:
//!
//! ```text
//! [network]
//! kind = cycle              # cycle | complete | erdos_renyi | two_hop_cycle | explicit
//! n = 6
//! # p = 0.4  seed = 1       # erdos_renyi draws
//! # row = 0.75 0.25         # explicit: one row per line, n rows total
//!
//! [delays]                  # optional; omitted means no delays
//! mode = constant           # constant | uniform_random | explicit
//! tau_bar = 3
//! # seed = 7                # uniform_random draws
//! # edge = 0 1 2            # explicit: i j delay, one per edge
//!
//! [agents]                  # repeatable; groups concatenate in file order
//! count = 6
//! a = 1
//! b_total = 500             # split evenly, or b = <per-agent value>
//! box = 0 100
//! cost = quadratic random gamma 0.5 2 beta 0 2 seed 42
//! # cost = quadratic 1 0 0
//! # cost = logexp 0.04 40 0.5 30
//! # cost = logexp random quad 0.02 0.05 center 20 60 gain 0.2 0.8 offset 10 50 seed 7
//!
//! [run]
//! variant = dtac            # parallel | distributed | homogeneous | dtac
//! c = 5
//! max_iters = 10000
//! record_every = 10
//! seed = 0
//! y0 = constant 41.7        # midpoint | constant <v> | random | explicit <v...>
//! termination = fixed       # fixed | tolerance <eps_d> <eps_x>
//! ```
//!
//! Running a scenario produces three files in the output directory:
//! `trajectory.csv` (iter,agent,y,d,x), `series.csv` (per-iteration
//! aggregates including the Lyapunov value against the oracle solution)
//! and `summary.txt` (key/value pairs). The CSVs contain no timing data,
//! so repeated runs of the same scenario are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costs::{AgentSpec, CostModel, Problem};
use crate::engine::{run, InitialY, RunConfig, RunRecord, Termination, Variant};
use crate::metrics::{error_series, lyapunov_series, optimality_gap, OptimalityGap};
use crate::oracle::{solve_dual_bisection, OracleSolution};
use crate::topology::{
    assign_delays, build_two_hop_cycle, build_weights, build_weights_custom, complete_edges,
    cycle_edges, erdos_renyi_edges, DelayMode, DelaySchedule, Network,
};
use crate::{Error, Result};

/// One fully specified experiment. Keeps the delay recipe alongside the
/// realized schedule so sweeps can re-draw delays at other bounds.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: Network,
    pub delays: DelaySchedule,
    pub delay_mode: DelayMode,
    pub delay_seed: u64,
    pub problem: Problem,
    pub config: RunConfig,
}

/// Everything produced by executing one scenario.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub name: String,
    pub record: RunRecord,
    pub oracle: OracleSolution,
    pub gap: OptimalityGap,
    pub runtime: Duration,
    /// Files written, in the order trajectory, series, summary.
    pub files: Vec<PathBuf>,
}

/// Which knob a sweep varies, with the values to visit.
#[derive(Debug, Clone)]
pub enum SweepParam {
    TauBar(Vec<usize>),
    C(Vec<f64>),
    Seed(Vec<u64>),
}

#[derive(Debug)]
struct Entry {
    line: usize,
    key: String,
    tokens: Vec<String>,
}

#[derive(Debug, Default)]
struct Sections {
    network: Vec<Entry>,
    delays: Vec<Entry>,
    agents: Vec<Vec<Entry>>,
    run: Vec<Entry>,
}

fn parse_err(line: usize, why: impl Into<String>) -> Error {
    Error::Parse {
        line,
        why: why.into(),
    }
}

fn field_err(field: impl Into<String>, why: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        why: why.into(),
    }
}

fn split_sections(text: &str) -> Result<Sections> {
    let mut sections = Sections::default();
    let mut current: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(parse_err(line_no, "unterminated section header"));
            }
            let name = line[1..line.len() - 1].trim();
            match name {
                "network" | "delays" | "run" => {
                    let taken = match name {
                        "network" => !sections.network.is_empty(),
                        "delays" => !sections.delays.is_empty(),
                        _ => !sections.run.is_empty(),
                    };
                    if taken {
                        return Err(parse_err(line_no, format!("duplicate [{name}] section")));
                    }
                }
                "agents" => sections.agents.push(Vec::new()),
                other => return Err(parse_err(line_no, format!("unknown section [{other}]"))),
            }
            current = Some(match name {
                "network" => "network",
                "delays" => "delays",
                "agents" => "agents",
                _ => "run",
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected key = value"))?;
        let entry = Entry {
            line: line_no,
            key: key.trim().to_string(),
            tokens: value.split_whitespace().map(str::to_string).collect(),
        };
        match current {
            Some("network") => sections.network.push(entry),
            Some("delays") => sections.delays.push(entry),
            Some("agents") => sections
                .agents
                .last_mut()
                .expect("agents section was opened")
                .push(entry),
            Some("run") => sections.run.push(entry),
            _ => return Err(parse_err(line_no, "entry outside any section")),
        }
    }
    Ok(sections)
}

fn find_unique<'a>(entries: &'a [Entry], key: &str) -> Result<Option<&'a Entry>> {
    let mut found = None;
    for entry in entries.iter().filter(|e| e.key == key) {
        if found.is_some() {
            return Err(parse_err(entry.line, format!("duplicate key '{key}'")));
        }
        found = Some(entry);
    }
    Ok(found)
}

fn require<'a>(entries: &'a [Entry], key: &str, section: &str) -> Result<&'a Entry> {
    find_unique(entries, key)?
        .ok_or_else(|| field_err(format!("{section}.{key}"), "missing required key"))
}

fn single_token(entry: &Entry) -> Result<&str> {
    match entry.tokens.as_slice() {
        [one] => Ok(one),
        _ => Err(parse_err(
            entry.line,
            format!("'{}' expects exactly one value", entry.key),
        )),
    }
}

fn parse_one<T: std::str::FromStr>(entry: &Entry, token: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(entry.line, format!("cannot parse '{token}' for '{}'", entry.key)))
}

fn parse_single<T: std::str::FromStr>(entry: &Entry) -> Result<T> {
    parse_one(entry, single_token(entry)?)
}

fn check_known_keys(entries: &[Entry], allowed: &[&str]) -> Result<()> {
    for entry in entries {
        if !allowed.contains(&entry.key.as_str()) {
            return Err(parse_err(entry.line, format!("unknown key '{}'", entry.key)));
        }
    }
    Ok(())
}

fn parse_network(entries: &[Entry]) -> Result<Network> {
    check_known_keys(entries, &["kind", "n", "p", "seed", "row"])?;
    let kind_entry = require(entries, "kind", "network")?;
    let kind = single_token(kind_entry)?;
    let n_of = |needed: bool| -> Result<Option<usize>> {
        match find_unique(entries, "n")? {
            Some(e) => Ok(Some(parse_single(e)?)),
            None if needed => Err(field_err("network.n", "missing required key")),
            None => Ok(None),
        }
    };
    match kind {
        "cycle" => build_weights(&cycle_edges(n_of(true)?.unwrap()), n_of(true)?.unwrap()),
        "complete" => {
            let n = n_of(true)?.unwrap();
            build_weights(&complete_edges(n), n)
        }
        "two_hop_cycle" => build_two_hop_cycle(n_of(true)?.unwrap()),
        "erdos_renyi" => {
            let n = n_of(true)?.unwrap();
            let p: f64 = parse_single(require(entries, "p", "network")?)?;
            let seed: u64 = parse_single(require(entries, "seed", "network")?)?;
            build_weights(&erdos_renyi_edges(n, p, seed)?, n)
        }
        "explicit" => {
            let rows: Vec<&Entry> = entries.iter().filter(|e| e.key == "row").collect();
            if rows.is_empty() {
                return Err(field_err("network.row", "explicit kind needs weight rows"));
            }
            let n = rows.len();
            let mut w = DMatrix::zeros(n, n);
            for (i, entry) in rows.iter().enumerate() {
                if entry.tokens.len() != n {
                    return Err(parse_err(
                        entry.line,
                        format!("row {i} has {} entries, expected {n}", entry.tokens.len()),
                    ));
                }
                for (j, token) in entry.tokens.iter().enumerate() {
                    w[(i, j)] = parse_one(entry, token)?;
                }
            }
            if let Some(declared) = n_of(false)? {
                if declared != n {
                    return Err(field_err(
                        "network.n",
                        format!("declares {declared} nodes but {n} rows given"),
                    ));
                }
            }
            build_weights_custom(w)
        }
        other => Err(parse_err(
            kind_entry.line,
            format!("unknown network kind '{other}'"),
        )),
    }
}

fn parse_delays(entries: &[Entry], network: &Network) -> Result<(DelaySchedule, DelayMode, u64)> {
    if entries.is_empty() {
        return Ok((DelaySchedule::zero(network), DelayMode::Constant(0), 0));
    }
    check_known_keys(entries, &["mode", "tau_bar", "seed", "edge"])?;
    let mode_entry = require(entries, "mode", "delays")?;
    match single_token(mode_entry)? {
        "constant" => {
            let tau: usize = parse_single(require(entries, "tau_bar", "delays")?)?;
            let delays = assign_delays(network, tau, DelayMode::Constant(tau), 0)?;
            Ok((delays, DelayMode::Constant(tau), 0))
        }
        "uniform_random" => {
            let tau: usize = parse_single(require(entries, "tau_bar", "delays")?)?;
            let seed: u64 = parse_single(require(entries, "seed", "delays")?)?;
            let delays = assign_delays(network, tau, DelayMode::UniformRandom, seed)?;
            Ok((delays, DelayMode::UniformRandom, seed))
        }
        "explicit" => {
            let mut map = BTreeMap::new();
            let mut max_tau = 0usize;
            for entry in entries.iter().filter(|e| e.key == "edge") {
                if entry.tokens.len() != 3 {
                    return Err(parse_err(entry.line, "edge expects 'i j delay'"));
                }
                let i: usize = parse_one(entry, &entry.tokens[0])?;
                let j: usize = parse_one(entry, &entry.tokens[1])?;
                let tau: usize = parse_one(entry, &entry.tokens[2])?;
                max_tau = max_tau.max(tau);
                map.insert((i.min(j), i.max(j)), tau);
            }
            let tau_bar = match find_unique(entries, "tau_bar")? {
                Some(e) => parse_single(e)?,
                None => max_tau,
            };
            let mode = DelayMode::Explicit(map);
            let delays = assign_delays(network, tau_bar, mode.clone(), 0)?;
            Ok((delays, mode, 0))
        }
        other => Err(parse_err(
            mode_entry.line,
            format!("unknown delay mode '{other}'"),
        )),
    }
}

/// Random draw bounds for one named cost parameter.
fn range_for(entry: &Entry, tokens: &[String], pos: &mut usize, name: &str) -> Result<(f64, f64)> {
    if *pos + 1 >= tokens.len() {
        return Err(parse_err(
            entry.line,
            format!("'{name}' needs a low and high bound"),
        ));
    }
    let lo: f64 = parse_one(entry, &tokens[*pos])?;
    let hi: f64 = parse_one(entry, &tokens[*pos + 1])?;
    *pos += 2;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(parse_err(entry.line, format!("bad range for '{name}'")));
    }
    Ok((lo, hi))
}

enum CostRecipe {
    Fixed(CostModel),
    QuadraticRandom {
        gamma: (f64, f64),
        beta: (f64, f64),
        alpha: (f64, f64),
        seed: u64,
    },
    LogExpRandom {
        quad: (f64, f64),
        center: (f64, f64),
        gain: (f64, f64),
        offset: (f64, f64),
        seed: u64,
    },
}

impl CostRecipe {
    fn draw(&self, rng: &mut ChaCha8Rng) -> CostModel {
        let sample = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        match self {
            CostRecipe::Fixed(model) => model.clone(),
            CostRecipe::QuadraticRandom {
                gamma, beta, alpha, ..
            } => CostModel::Quadratic {
                gamma: sample(rng, *gamma),
                beta: sample(rng, *beta),
                alpha: sample(rng, *alpha),
            },
            CostRecipe::LogExpRandom {
                quad,
                center,
                gain,
                offset,
                ..
            } => CostModel::LogExp {
                quad: sample(rng, *quad),
                center: sample(rng, *center),
                gain: sample(rng, *gain),
                offset: sample(rng, *offset),
            },
        }
    }

    fn seed(&self) -> u64 {
        match self {
            CostRecipe::Fixed(_) => 0,
            CostRecipe::QuadraticRandom { seed, .. } => *seed,
            CostRecipe::LogExpRandom { seed, .. } => *seed,
        }
    }
}

fn parse_cost(entry: &Entry) -> Result<CostRecipe> {
    let tokens = &entry.tokens;
    let family = tokens
        .first()
        .ok_or_else(|| parse_err(entry.line, "cost needs a family name"))?
        .as_str();
    let random = tokens.get(1).map(String::as_str) == Some("random");
    match (family, random) {
        ("quadratic", false) => {
            if tokens.len() < 3 || tokens.len() > 4 {
                return Err(parse_err(
                    entry.line,
                    "quadratic expects 'gamma beta [alpha]'",
                ));
            }
            Ok(CostRecipe::Fixed(CostModel::Quadratic {
                gamma: parse_one(entry, &tokens[1])?,
                beta: parse_one(entry, &tokens[2])?,
                alpha: tokens.get(3).map(|t| parse_one(entry, t)).transpose()?.unwrap_or(0.0),
            }))
        }
        ("logexp", false) => {
            if tokens.len() != 5 {
                return Err(parse_err(
                    entry.line,
                    "logexp expects 'quad center gain offset'",
                ));
            }
            Ok(CostRecipe::Fixed(CostModel::LogExp {
                quad: parse_one(entry, &tokens[1])?,
                center: parse_one(entry, &tokens[2])?,
                gain: parse_one(entry, &tokens[3])?,
                offset: parse_one(entry, &tokens[4])?,
            }))
        }
        (family @ ("quadratic" | "logexp"), true) => {
            let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            let mut seed: Option<u64> = None;
            let mut pos = 2;
            while pos < tokens.len() {
                let name = tokens[pos].as_str();
                pos += 1;
                if name == "seed" {
                    let token = tokens
                        .get(pos)
                        .ok_or_else(|| parse_err(entry.line, "'seed' needs a value"))?;
                    seed = Some(parse_one(entry, token)?);
                    pos += 1;
                } else {
                    let range = range_for(entry, tokens, &mut pos, name)?;
                    ranges.insert(
                        match name {
                            "gamma" => "gamma",
                            "beta" => "beta",
                            "alpha" => "alpha",
                            "quad" => "quad",
                            "center" => "center",
                            "gain" => "gain",
                            "offset" => "offset",
                            other => {
                                return Err(parse_err(
                                    entry.line,
                                    format!("unknown cost parameter '{other}'"),
                                ))
                            }
                        },
                        range,
                    );
                }
            }
            let seed =
                seed.ok_or_else(|| parse_err(entry.line, "random costs need 'seed <value>'"))?;
            let need = |key: &str| -> Result<(f64, f64)> {
                ranges.get(key).copied().ok_or_else(|| {
                    parse_err(entry.line, format!("random {family} needs '{key} lo hi'"))
                })
            };
            if family == "quadratic" {
                Ok(CostRecipe::QuadraticRandom {
                    gamma: need("gamma")?,
                    beta: need("beta")?,
                    alpha: ranges.get("alpha").copied().unwrap_or((0.0, 0.0)),
                    seed,
                })
            } else {
                Ok(CostRecipe::LogExpRandom {
                    quad: need("quad")?,
                    center: need("center")?,
                    gain: need("gain")?,
                    offset: need("offset")?,
                    seed,
                })
            }
        }
        (other, _) => Err(parse_err(
            entry.line,
            format!("unknown cost family '{other}'"),
        )),
    }
}

fn parse_agents(groups: &[Vec<Entry>]) -> Result<Problem> {
    if groups.is_empty() {
        return Err(field_err("agents", "at least one [agents] section required"));
    }
    let mut agents = Vec::new();
    for (g, entries) in groups.iter().enumerate() {
        let section = format!("agents[{g}]");
        check_known_keys(entries, &["count", "a", "b", "b_total", "box", "cost"])?;
        let count: usize = parse_single(require(entries, "count", &section)?)?;
        if count == 0 {
            return Err(field_err(format!("{section}.count"), "must be at least 1"));
        }
        let a: f64 = match find_unique(entries, "a")? {
            Some(e) => parse_single(e)?,
            None => 1.0,
        };
        let b_each = match (find_unique(entries, "b")?, find_unique(entries, "b_total")?) {
            (Some(b), None) => parse_single::<f64>(b)?,
            (None, Some(total)) => parse_single::<f64>(total)? / count as f64,
            (Some(_), Some(_)) => {
                return Err(field_err(
                    format!("{section}.b"),
                    "give either b or b_total, not both",
                ))
            }
            (None, None) => {
                return Err(field_err(
                    format!("{section}.b"),
                    "missing demand: give b or b_total",
                ))
            }
        };
        let box_entry = require(entries, "box", &section)?;
        if box_entry.tokens.len() != 2 {
            return Err(parse_err(box_entry.line, "box expects 'min max'"));
        }
        let bounds = (
            parse_one::<f64>(box_entry, &box_entry.tokens[0])?,
            parse_one::<f64>(box_entry, &box_entry.tokens[1])?,
        );
        let recipe = parse_cost(require(entries, "cost", &section)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed());
        for _ in 0..count {
            agents.push(AgentSpec {
                cost: recipe.draw(&mut rng),
                b: b_each,
                bounds,
                a,
            });
        }
    }
    Ok(Problem { agents })
}

fn parse_run(entries: &[Entry], delays: &DelaySchedule, n: usize) -> Result<RunConfig> {
    check_known_keys(
        entries,
        &["variant", "c", "max_iters", "record_every", "seed", "y0", "termination"],
    )?;
    let variant_entry = require(entries, "variant", "run")?;
    let variant = match single_token(variant_entry)? {
        "parallel" => Variant::Parallel,
        "distributed" => Variant::Distributed,
        "homogeneous" => {
            if !delays.is_homogeneous() {
                return Err(field_err(
                    "run.variant",
                    "homogeneous variant needs a constant delay schedule",
                ));
            }
            Variant::Homogeneous(delays.tau_bar)
        }
        "dtac" => Variant::Dtac,
        other => {
            return Err(parse_err(
                variant_entry.line,
                format!("unknown variant '{other}'"),
            ))
        }
    };
    let c: f64 = parse_single(require(entries, "c", "run")?)?;
    let mut config = RunConfig::new(variant, c).with_termination(Termination::FixedIters);
    if let Some(e) = find_unique(entries, "max_iters")? {
        config.max_iters = parse_single(e)?;
    }
    if config.max_iters == 0 {
        return Err(field_err("run.max_iters", "must be at least 1"));
    }
    if let Some(e) = find_unique(entries, "record_every")? {
        config.record_every = parse_single(e)?;
    }
    if let Some(e) = find_unique(entries, "seed")? {
        config.seed = parse_single(e)?;
    }
    if let Some(e) = find_unique(entries, "y0")? {
        let mode = e
            .tokens
            .first()
            .ok_or_else(|| parse_err(e.line, "y0 needs a mode"))?
            .as_str();
        config.y0 = match mode {
            "midpoint" => InitialY::BoxMidpoint,
            "random" => InitialY::RandomUniform,
            "constant" => {
                if e.tokens.len() != 2 {
                    return Err(parse_err(e.line, "y0 constant expects one value"));
                }
                InitialY::Constant(parse_one(e, &e.tokens[1])?)
            }
            "explicit" => {
                if e.tokens.len() != n + 1 {
                    return Err(parse_err(
                        e.line,
                        format!("y0 explicit expects {n} values"),
                    ));
                }
                InitialY::Explicit(
                    e.tokens[1..]
                        .iter()
                        .map(|t| parse_one(e, t))
                        .collect::<Result<_>>()?,
                )
            }
            other => return Err(parse_err(e.line, format!("unknown y0 mode '{other}'"))),
        };
    }
    if let Some(e) = find_unique(entries, "termination")? {
        let mode = e
            .tokens
            .first()
            .ok_or_else(|| parse_err(e.line, "termination needs a mode"))?
            .as_str();
        config.termination = match mode {
            "fixed" => Termination::FixedIters,
            "tolerance" => {
                if e.tokens.len() != 3 {
                    return Err(parse_err(e.line, "termination tolerance expects two values"));
                }
                Termination::Tolerance {
                    eps_d: parse_one(e, &e.tokens[1])?,
                    eps_x: parse_one(e, &e.tokens[2])?,
                }
            }
            other => {
                return Err(parse_err(
                    e.line,
                    format!("unknown termination mode '{other}'"),
                ))
            }
        };
    }
    Ok(config)
}

impl Scenario {
    /// Parse a scenario from text. `name` labels outputs, usually the file
    /// stem.
    pub fn parse(text: &str, name: &str) -> Result<Scenario> {
        let sections = split_sections(text)?;
        if sections.network.is_empty() {
            return Err(field_err("network", "missing [network] section"));
        }
        let network = parse_network(&sections.network)?;
        let (delays, delay_mode, delay_seed) = parse_delays(&sections.delays, &network)?;
        let problem = parse_agents(&sections.agents)?;
        if problem.n() != network.n {
            return Err(field_err(
                "agents",
                format!("{} agents for {} network nodes", problem.n(), network.n),
            ));
        }
        problem.validate()?;
        if sections.run.is_empty() {
            return Err(field_err("run", "missing [run] section"));
        }
        let config = parse_run(&sections.run, &delays, problem.n())?;
        Ok(Scenario {
            name: name.to_string(),
            network,
            delays,
            delay_mode,
            delay_seed,
            problem,
            config,
        })
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string();
        Scenario::parse(&text, &name)
    }

    /// Execute the run this scenario describes.
    pub fn execute(&self) -> Result<RunRecord> {
        run(&self.problem, &self.network, &self.delays, &self.config)
    }
}

fn fmt_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn write_trajectory(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("iter,agent,y,d,x\n");
    for t in 0..record.len() {
        for i in 0..record.n() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                record.iters[t],
                i,
                fmt_float(record.y[t][i]),
                fmt_float(record.d[t][i]),
                fmt_float(record.x[t][i]),
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_series(
    path: &Path,
    record: &RunRecord,
    problem: &Problem,
    lyapunov: &[f64],
) -> Result<()> {
    let series = error_series(record);
    let mut out = String::from("iter,d_bar,e_d_norm,e_x_norm,lyapunov,objective\n");
    for (t, value) in lyapunov.iter().enumerate().take(record.len()) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            record.iters[t],
            fmt_float(record.d_bar(t)),
            fmt_float(series.e_d[t]),
            fmt_float(series.e_x[t]),
            fmt_float(*value),
            fmt_float(problem.objective(&record.y[t])),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_summary(path: &Path, scenario: &Scenario, outcome: &ScenarioOutcome) -> Result<()> {
    let record = &outcome.record;
    let series = error_series(record);
    let mut f = fs::File::create(path)?;
    writeln!(f, "scenario {}", outcome.name)?;
    writeln!(f, "variant {}", scenario.config.variant)?;
    writeln!(f, "n {}", scenario.network.n)?;
    writeln!(f, "tau_bar {}", scenario.delays.tau_bar)?;
    writeln!(f, "c {}", fmt_float(scenario.config.c))?;
    writeln!(f, "max_iters {}", scenario.config.max_iters)?;
    writeln!(f, "iterations_run {}", record.iterations_run)?;
    writeln!(f, "converged {}", record.converged)?;
    writeln!(f, "final_objective {}", fmt_float(record.final_objective))?;
    writeln!(
        f,
        "final_sum_y {}",
        fmt_float(record.final_y().iter().sum::<f64>())
    )?;
    writeln!(f, "final_d_bar {}", fmt_float(record.d_bar(record.len() - 1)))?;
    writeln!(f, "final_e_d {}", fmt_float(series.last.0))?;
    writeln!(f, "final_e_x {}", fmt_float(series.last.1))?;
    writeln!(f, "oracle_x_star {}", fmt_float(outcome.oracle.x_star))?;
    writeln!(f, "oracle_objective {}", fmt_float(outcome.oracle.objective))?;
    writeln!(f, "oracle_nonunique {}", outcome.oracle.nonunique)?;
    writeln!(f, "primal_gap {}", fmt_float(outcome.gap.primal))?;
    writeln!(f, "dual_gap {}", fmt_float(outcome.gap.dual))?;
    writeln!(f, "objective_gap {}", fmt_float(outcome.gap.objective))?;
    writeln!(f, "runtime_ms {}", outcome.runtime.as_millis())?;
    Ok(())
}

/// Load a scenario file, run it, solve the oracle, and write
/// `trajectory.csv`, `series.csv`, and `summary.txt` into `out_dir`.
pub fn run_scenario(path: &Path, out_dir: &Path) -> Result<ScenarioOutcome> {
    let scenario = Scenario::from_file(path)?;
    run_scenario_loaded(&scenario, out_dir)
}

/// Same as `run_scenario` but starting from a parsed scenario.
pub fn run_scenario_loaded(scenario: &Scenario, out_dir: &Path) -> Result<ScenarioOutcome> {
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let record = scenario.execute()?;
    let runtime = started.elapsed();
    let oracle = solve_dual_bisection(&scenario.problem)?;
    let lyapunov = lyapunov_series(
        &record,
        &scenario.network,
        &scenario.delays,
        scenario.config.c,
        &oracle,
    )?;
    let gap = optimality_gap(&record, &oracle)?;

    let trajectory = out_dir.join("trajectory.csv");
    let series = out_dir.join("series.csv");
    let summary = out_dir.join("summary.txt");
    write_trajectory(&trajectory, &record)?;
    write_series(&series, &record, &scenario.problem, &lyapunov.values)?;
    let outcome = ScenarioOutcome {
        name: scenario.name.clone(),
        record,
        oracle,
        gap,
        runtime,
        files: vec![trajectory, series, summary.clone()],
    };
    write_summary(&summary, scenario, &outcome)?;
    Ok(outcome)
}

fn sweep_variant(scenario: &Scenario, param: &SweepParam, idx: usize) -> Result<(String, Scenario)> {
    let mut derived = scenario.clone();
    let label = match param {
        SweepParam::TauBar(values) => {
            let tau = values[idx];
            let mode = match &scenario.delay_mode {
                DelayMode::Constant(_) => DelayMode::Constant(tau),
                DelayMode::UniformRandom => DelayMode::UniformRandom,
                DelayMode::Explicit(_) => {
                    return Err(field_err(
                        "sweep",
                        "cannot sweep tau_bar over an explicit delay map",
                    ))
                }
            };
            derived.delays = assign_delays(&scenario.network, tau, mode.clone(), scenario.delay_seed)?;
            derived.delay_mode = mode;
            if let Variant::Homogeneous(_) = derived.config.variant {
                derived.config.variant = Variant::Homogeneous(tau);
            }
            format!("tau{tau}")
        }
        SweepParam::C(values) => {
            derived.config.c = values[idx];
            format!("c{}", values[idx])
        }
        SweepParam::Seed(values) => {
            derived.config.seed = values[idx];
            format!("seed{}", values[idx])
        }
    };
    Ok((label, derived))
}

fn sweep_len(param: &SweepParam) -> usize {
    match param {
        SweepParam::TauBar(v) => v.len(),
        SweepParam::C(v) => v.len(),
        SweepParam::Seed(v) => v.len(),
    }
}

/// Run the scenario once per sweep value and write `sweep.csv`: one row per
/// recorded iteration, one |d̄| column per value. Runs that stop early
/// leave their trailing cells empty.
pub fn sweep(scenario: &Scenario, param: &SweepParam, out_dir: &Path) -> Result<PathBuf> {
    let count = sweep_len(param);
    if count == 0 {
        return Err(field_err("sweep", "no values to sweep over"));
    }
    fs::create_dir_all(out_dir)?;
    let mut labels = Vec::with_capacity(count);
    let mut columns: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(count);
    for idx in 0..count {
        let (label, derived) = sweep_variant(scenario, param, idx)?;
        let record = derived.execute()?;
        let mut column = BTreeMap::new();
        for t in 0..record.len() {
            column.insert(record.iters[t], record.d_bar(t).abs());
        }
        labels.push(label);
        columns.push(column);
    }
    let mut all_iters: Vec<usize> = columns
        .iter()
        .flat_map(|c| c.keys().copied())
        .collect();
    all_iters.sort_unstable();
    all_iters.dedup();

    let mut out = String::from("iter");
    for label in &labels {
        out.push_str(&format!(",dbar_{label}"));
    }
    out.push('\n');
    for &iter in &all_iters {
        out.push_str(&iter.to_string());
        for column in &columns {
            match column.get(&iter) {
                Some(v) => out.push_str(&format!(",{}", fmt_float(*v))),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    let path = out_dir.join("sweep.csv");
    fs::write(&path, out)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
# two agents leaning on each other
[network]
kind = complete
n = 2

[agents]
count = 2
a = 1
b_total = 4
box = -10 10
cost = quadratic 1 0 0

[run]
variant = distributed
c = 2
max_iters = 400
record_every = 8
";

    #[test]
    fn parse_builds_the_full_experiment() {
        let scenario = Scenario::parse(BASIC, "basic").unwrap();
        assert_eq!(scenario.network.n, 2);
        assert_eq!(scenario.problem.n(), 2);
        assert!((scenario.problem.agents[0].b - 2.0).abs() <= 1e-15);
        assert_eq!(scenario.config.max_iters, 400);
        assert_eq!(scenario.config.record_every, 8);
        assert!(scenario.delays.all_zero());
        let record = scenario.execute().unwrap();
        assert!((record.final_y()[0] - 2.0).abs() <= 1e-3);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "[network]\nkind = cycle\nn = 6\nbogus_key = 1\n";
        match Scenario::parse(text, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_rejected() {
        match Scenario::parse("[nets]\nkind = cycle\n", "t") {
            Err(Error::Parse { line, why }) => {
                assert_eq!(line, 1);
                assert!(why.contains("unknown section"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_max_iters_rejected() {
        let text = BASIC.replace("max_iters = 400", "max_iters = 0");
        match Scenario::parse(&text, "t") {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "run.max_iters"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn random_costs_are_reproducible() {
        let text = "\
[network]
kind = cycle
n = 6

[delays]
mode = uniform_random
tau_bar = 3
seed = 9

[agents]
count = 6
b_total = 500
box = 0 100
cost = quadratic random gamma 0.5 2 beta 0 2 seed 42

[run]
variant = dtac
c = 5
max_iters = 50
";
        let a = Scenario::parse(text, "t").unwrap();
        let b = Scenario::parse(text, "t").unwrap();
        for (sa, sb) in a.problem.agents.iter().zip(&b.problem.agents) {
            for probe in [0.0, 17.3, 80.0] {
                assert_eq!(sa.cost.value(probe), sb.cost.value(probe));
            }
        }
        assert_eq!(a.delays.tau, b.delays.tau);
        let deltas: Vec<usize> = a.delays.tau.values().copied().collect();
        assert!(deltas.iter().any(|&t| t != deltas[0]) || deltas.len() <= 1);
    }

    #[test]
    fn explicit_network_and_delays_parse() {
        let text = "\
[network]
kind = explicit
row = 0.75 0.25
row = 0.25 0.75

[delays]
mode = explicit
edge = 0 1 4

[agents]
count = 2
b = 1
box = -5 5
cost = quadratic 1 0

[run]
variant = dtac
c = 1
max_iters = 20
";
        let scenario = Scenario::parse(text, "t").unwrap();
        assert_eq!(scenario.delays.tau_bar, 4);
        assert_eq!(scenario.delays.delay(0, 1), 4);
        assert!((scenario.network.w[(0, 0)] - 0.75).abs() <= 1e-15);
    }

    #[test]
    fn outputs_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let scn_path = dir.path().join("basic.scn");
        fs::write(&scn_path, BASIC).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let outcome = run_scenario(&scn_path, &out_a).unwrap();
        run_scenario(&scn_path, &out_b).unwrap();
        assert_eq!(outcome.files.len(), 3);
        for file in ["trajectory.csv", "series.csv"] {
            let a = fs::read(out_a.join(file)).unwrap();
            let b = fs::read(out_b.join(file)).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, b, "{file} differs between identical runs");
        }
        let trajectory = fs::read_to_string(out_a.join("trajectory.csv")).unwrap();
        let mut lines = trajectory.lines();
        assert_eq!(lines.next(), Some("iter,agent,y,d,x"));
        let rows = lines.count();
        assert_eq!(rows, outcome.record.len() * outcome.record.n());
        let summary = fs::read_to_string(out_a.join("summary.txt")).unwrap();
        assert!(summary.contains("scenario basic"));
        assert!(summary.contains("converged"));
    }

    #[test]
    fn sweep_pads_columns_for_early_stoppers() {
        let text = BASIC.replace(
            "max_iters = 400",
            "max_iters = 4000\ntermination = tolerance 1e-10 1e-10",
        );
        let scenario = Scenario::parse(&text, "t").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = sweep(&scenario, &SweepParam::C(vec![0.5, 8.0]), dir.path()).unwrap();
        let body = fs::read_to_string(path).unwrap();
        let mut lines = body.lines();
        assert_eq!(lines.next(), Some("iter,dbar_c0.5,dbar_c8"));
        let mut saw_padding = false;
        for line in lines {
            assert_eq!(line.matches(',').count(), 2);
            if line.ends_with(',') || line.contains(",,") {
                saw_padding = true;
            }
        }
        assert!(saw_padding, "expected at least one padded cell:\n{body}");
    }

    #[test]
    fn tau_bar_sweep_redraws_delays() {
        let text = "\
[network]
kind = cycle
n = 5

[delays]
mode = uniform_random
tau_bar = 2
seed = 3

[agents]
count = 5
b_total = 10
box = -5 5
cost = quadratic 1 0

[run]
variant = dtac
c = 1
max_iters = 30
";
        let scenario = Scenario::parse(text, "t").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = sweep(&scenario, &SweepParam::TauBar(vec![0, 4]), dir.path()).unwrap();
        let body = fs::read_to_string(path).unwrap();
        assert!(body.starts_with("iter,dbar_tau0,dbar_tau4\n"));
    }
}
