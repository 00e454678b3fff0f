//! Seedable trajectory engine for the branching process and its Z-valued
//! companion, excursion decomposition, and parallel ensembles.
//!
//! Every trajectory draws from its own ChaCha8 stream: the master seed keys
//! the generator and the trajectory index selects the stream, so trajectory
//! `k` of an ensemble is a pure function of `(master_seed, k)` no matter how
//! the work is split across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{BpmeModel, TotalState};
use crate::scalar::Scalar;

/// Identifier recorded in reports so runs can be reproduced exactly.
pub const RNG_ALGORITHM: &str = "rand_chacha-0.9/ChaCha8Rng seed_from_u64(master)+set_stream(k); uniform f64 in [0,1)";

pub const DEFAULT_T_MAX: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Population frozen at zero once extinct.
    Bpme,
    /// Reproduction continues at every step regardless of sign.
    ZValued,
}

/// Per-trajectory generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF tables built once per model.
#[derive(Debug, Clone)]
pub struct Sampler {
    transition_cdf: Vec<Vec<(usize, f64)>>,
    offspring_cdf: Vec<Vec<(usize, f64)>>,
    period: usize,
}

fn cdf(pairs: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    let mut out: Vec<(usize, f64)> = pairs
        .filter(|&(_, p)| p > 0.0)
        .map(|(k, p)| {
            acc += p;
            (k, acc)
        })
        .collect();
    // the last positive-probability outcome absorbs rounding
    if let Some(last) = out.last_mut() {
        last.1 = f64::INFINITY;
    }
    out
}

#[inline]
fn draw(table: &[(usize, f64)], u: f64) -> usize {
    table.iter().find(|&&(_, c)| u < c).map(|&(k, _)| k).unwrap_or(table[table.len() - 1].0)
}

impl Sampler {
    pub fn new<T: Scalar>(model: &BpmeModel<T>) -> Self {
        let p = model.transition();
        let transition_cdf = (0..model.num_states())
            .map(|i| cdf(p.row(i).iter().enumerate().map(|(j, &x)| (j, x.as_f64()))))
            .collect();
        let offspring_cdf = model
            .offspring()
            .iter()
            .map(|o| cdf(o.pmf().iter().map(|&(n, x)| (n, x.as_f64()))))
            .collect();
        Self { transition_cdf, offspring_cdf, period: model.chain().period() }
    }

    pub fn num_states(&self) -> usize {
        self.transition_cdf.len()
    }

    /// One reproduction event: move the environment, then draw offspring
    /// from the law of the new state. In `Bpme` mode a dead population stays
    /// dead, but the environment and offspring draws are still consumed so
    /// both modes share one random stream.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, current: TotalState, mode: Mode, rng: &mut R) -> (TotalState, usize) {
        let state = draw(&self.transition_cdf[current.state], rng.random::<f64>());
        let xi = draw(&self.offspring_cdf[state], rng.random::<f64>());
        let population = match mode {
            Mode::Bpme if current.population <= 0 => 0,
            _ => current.population - 1 + xi as i64,
        };
        (TotalState { population, state }, xi)
    }
}

/// One step of the process; see [`Sampler::step`].
pub fn step<T: Scalar, R: Rng + ?Sized>(
    model: &BpmeModel<T>,
    current: TotalState,
    mode: Mode,
    rng: &mut R,
) -> (TotalState, usize) {
    Sampler::new(model).step(current, mode, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub offspring: usize,
    pub population: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Extinction(usize),
    TimeCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: Mode,
    pub init: TotalState,
    pub steps: Vec<TrajectoryStep>,
    pub terminated_by: Termination,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> TotalState {
        self.steps
            .last()
            .map(|s| TotalState { population: s.population, state: s.state })
            .unwrap_or(self.init)
    }

    /// Writes `t,state,offspring,population`; row `t = 0` is the initial
    /// total state with an empty offspring field.
    pub fn write_csv<W: Write>(&self, labels: &[String], mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,state,offspring,population")?;
        writeln!(out, "0,{},,{}", labels[self.init.state], self.init.population)?;
        for (t, s) in self.steps.iter().enumerate() {
            writeln!(out, "{},{},{},{}", t + 1, labels[s.state], s.offspring, s.population)?;
        }
        Ok(())
    }
}

fn check_init(sampler: &Sampler, init: TotalState, mode: Mode) -> Result<(), SimError> {
    if init.state >= sampler.num_states() {
        return Err(SimError::InvalidInit(format!("state index {} out of range", init.state)));
    }
    if mode == Mode::Bpme && init.population < 1 {
        return Err(SimError::InvalidInit(format!(
            "branching process needs population >= 1, got {}",
            init.population
        )));
    }
    Ok(())
}

/// Endpoint of one trajectory without recording its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub population: i64,
    /// Population stayed >= 1 at every time up to the cap. For a Z-valued
    /// run this is exactly survival of the coupled branching process.
    pub alive: bool,
    pub extinction_time: Option<usize>,
}

fn drive(
    sampler: &Sampler,
    init: TotalState,
    mode: Mode,
    t_max: usize,
    rng: &mut ChaCha8Rng,
    mut observe: impl FnMut(TotalState, usize),
) -> Endpoint {
    let mut cur = init;
    let mut alive = init.population >= 1;
    let mut extinction_time = None;
    for t in 1..=t_max {
        let (next, xi) = sampler.step(cur, mode, rng);
        observe(next, xi);
        cur = next;
        if alive && cur.population < 1 {
            alive = false;
            extinction_time = Some(t);
            if mode == Mode::Bpme {
                break;
            }
        }
    }
    Endpoint { population: cur.population, alive, extinction_time }
}

/// Runs one trajectory on stream 0 of `seed`.
pub fn run<T: Scalar>(
    model: &BpmeModel<T>,
    init: TotalState,
    mode: Mode,
    t_max: usize,
    seed: u64,
) -> Result<Trajectory, SimError> {
    run_stream(&Sampler::new(model), init, mode, t_max, seed, 0)
}

pub fn run_stream(
    sampler: &Sampler,
    init: TotalState,
    mode: Mode,
    t_max: usize,
    seed: u64,
    stream: u64,
) -> Result<Trajectory, SimError> {
    check_init(sampler, init, mode)?;
    let mut rng = stream_rng(seed, stream);
    let mut steps = Vec::with_capacity(t_max.min(1 << 20));
    let end = drive(sampler, init, mode, t_max, &mut rng, |s, xi| {
        steps.push(TrajectoryStep { state: s.state, offspring: xi, population: s.population })
    });
    let terminated_by = match (mode, end.extinction_time) {
        (Mode::Bpme, Some(t)) => Termination::Extinction(t),
        _ => Termination::TimeCap,
    };
    Ok(Trajectory { mode, init, steps, terminated_by, seed, stream })
}

/// Endpoint of trajectory `stream` without storing the path.
pub fn run_endpoint(
    sampler: &Sampler,
    init: TotalState,
    mode: Mode,
    t_max: usize,
    seed: u64,
    stream: u64,
) -> Result<Endpoint, SimError> {
    check_init(sampler, init, mode)?;
    let mut rng = stream_rng(seed, stream);
    Ok(drive(sampler, init, mode, t_max, &mut rng, |_, _| {}))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExcursionStats {
    pub anchor_state: usize,
    /// Net population change over each completed excursion.
    pub deltas: Vec<i64>,
    /// Return time of each completed excursion.
    pub durations: Vec<usize>,
}

impl ExcursionStats {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Splits a Z-valued trajectory at successive visits to `anchor`. The stretch
/// before the first visit and the unfinished tail are dropped.
pub fn excursions(traj: &Trajectory, anchor: usize) -> Result<ExcursionStats, SimError> {
    if traj.mode != Mode::ZValued {
        return Err(SimError::WrongMode);
    }
    let mut stats = ExcursionStats { anchor_state: anchor, ..Default::default() };
    let mut last: Option<(usize, i64)> = (traj.init.state == anchor).then_some((0, traj.init.population));
    for (k, s) in traj.steps.iter().enumerate() {
        if s.state != anchor {
            continue;
        }
        let t = k + 1;
        if let Some((t0, y0)) = last {
            stats.durations.push(t - t0);
            stats.deltas.push(s.population - y0);
        }
        last = Some((t, s.population));
    }
    Ok(stats)
}

/// Streams a single Z-valued run from `0.anchor` until `count` excursions
/// have completed.
pub fn collect_excursions(sampler: &Sampler, anchor: usize, count: usize, seed: u64) -> Result<ExcursionStats, SimError> {
    check_init(sampler, TotalState::new(0, anchor), Mode::ZValued)?;
    let mut rng = stream_rng(seed, 0);
    let mut stats = ExcursionStats {
        anchor_state: anchor,
        deltas: Vec::with_capacity(count),
        durations: Vec::with_capacity(count),
    };
    let mut cur = TotalState::new(0, anchor);
    let (mut t, mut t0, mut y0) = (0usize, 0usize, 0i64);
    while stats.len() < count {
        let (next, _) = sampler.step(cur, Mode::ZValued, &mut rng);
        cur = next;
        t += 1;
        if cur.state == anchor {
            stats.durations.push(t - t0);
            stats.deltas.push(cur.population - y0);
            t0 = t;
            y0 = cur.population;
        }
    }
    debug_assert!(stats.durations.iter().all(|d| d % sampler.period == 0));
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnsembleSummary {
    pub mode: Mode,
    pub init: TotalState,
    pub trajectories_run: usize,
    /// Trajectories whose population never dropped below one up to `t_max`.
    pub survivors_at_cap: usize,
    pub endpoint_populations: Vec<i64>,
    #[serde(skip)]
    pub alive: Vec<bool>,
    pub master_seed: u64,
    pub t_max: usize,
    pub rng: String,
}

impl EnsembleSummary {
    pub fn survivor_fraction(&self) -> f64 {
        self.survivors_at_cap as f64 / self.trajectories_run as f64
    }

    pub fn survivor_endpoints(&self) -> impl Iterator<Item = i64> + '_ {
        self.endpoint_populations.iter().zip(&self.alive).filter(|(_, &a)| a).map(|(&p, _)| p)
    }
}

/// `n` independent trajectories; trajectory `k` runs on stream `k` of
/// `master_seed`. `workers = None` uses the global rayon pool; any worker
/// count yields the same summary.
pub fn monte_carlo<T: Scalar>(
    model: &BpmeModel<T>,
    init: TotalState,
    mode: Mode,
    t_max: usize,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<EnsembleSummary, SimError> {
    if n == 0 {
        return Err(SimError::InvalidParameter("ensemble size must be at least 1".into()));
    }
    let sampler = Sampler::new(model);
    check_init(&sampler, init, mode)?;
    let job = || -> Vec<Endpoint> {
        (0..n as u64)
            .into_par_iter()
            .map(|k| run_endpoint(&sampler, init, mode, t_max, master_seed, k).expect("init checked"))
            .collect()
    };
    let ends = with_workers(workers, job)?;
    let alive: Vec<bool> = ends.iter().map(|e| e.alive).collect();
    Ok(EnsembleSummary {
        mode,
        init,
        trajectories_run: n,
        survivors_at_cap: alive.iter().filter(|&&a| a).count(),
        endpoint_populations: ends.iter().map(|e| e.population).collect(),
        alive,
        master_seed,
        t_max,
        rng: RNG_ALGORITHM.to_string(),
    })
}

pub(crate) fn with_workers<R: Send>(workers: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R, SimError> {
    match workers {
        None => Ok(job()),
        Some(0) => Err(SimError::InvalidParameter("workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map(|pool| pool.install(job))
            .map_err(|e| SimError::InvalidParameter(format!("thread pool: {e}"))),
    }
}
