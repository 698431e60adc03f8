//! Exact event-driven simulation of the controlled merge/split chain.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{Composition, StateView};
use crate::control::{ActionFunction, Policy};
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};
use crate::rng::replica_rng;

/// Weighting of merges between two coalitions of the same size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeConvention {
    /// `n_i (n_i - 1)`: only distinct coalitions can pair.
    #[default]
    Combinatorial,
    /// `n_i^2` as in the literal generator. With `n_i = 1` the self-pair
    /// fires an [`Event::Idle`] jump that leaves the state unchanged.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Coalitions of sizes `i <= j` merge.
    Merge { i: usize, j: usize },
    /// A size-`i` coalition splits into `j` and `i - j`.
    Split { i: usize, j: usize },
    /// Self-pairing of a lone size-`i` coalition under the literal convention.
    Idle { i: usize },
}

impl Event {
    pub fn apply(&self, c: &mut Composition) {
        match *self {
            Event::Merge { i, j } => c.apply_merge(i, j),
            Event::Split { i, j } => c.apply_split(i, j),
            Event::Idle { .. } => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub time: f64,
    pub event: Event,
    pub coalitions_before: u64,
}

#[derive(Debug, Default)]
struct RateCache {
    pair: HashMap<(usize, usize, u64), f64>,
    split: HashMap<(usize, u64), Vec<f64>>,
}

/// Rate evaluation and event sampling for one replica.
///
/// For state-independent kernels the per-pair coagulation coefficients and
/// per-size split rates are memoised; the cached and uncached paths produce
/// identical floating-point values in identical order.
#[derive(Debug)]
pub struct Chain<'k> {
    kernel: &'k dyn RateKernel,
    convention: MergeConvention,
    cache: Option<RateCache>,
    events: Vec<(Event, f64)>,
}

impl<'k> Chain<'k> {
    pub fn new(kernel: &'k dyn RateKernel, convention: MergeConvention) -> Self {
        let cache = kernel.state_independent().then(RateCache::default);
        Chain {
            kernel,
            convention,
            cache,
            events: Vec::new(),
        }
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn convention(&self) -> MergeConvention {
        self.convention
    }

    /// `C_ij + C_ji` for `i < j`, `C_ii` for `i = j`.
    fn pair_coefficient(&mut self, i: usize, j: usize, view: &StateView<'_>, b: ControlPoint) -> f64 {
        let kernel = self.kernel;
        let eval = || {
            if i == j {
                kernel.coagulation(i, i, view, b)
            } else {
                kernel.coagulation(i, j, view, b) + kernel.coagulation(j, i, view, b)
            }
        };
        match &mut self.cache {
            Some(cache) => *cache.pair.entry((i, j, b.value().to_bits())).or_insert_with(eval),
            None => eval(),
        }
    }

    fn split_rates(&mut self, i: usize, view: &StateView<'_>, b: ControlPoint, out: &mut Vec<f64>) {
        let kernel = self.kernel;
        let eval = || (1..i).map(|j| kernel.split_rate(i, j, view, b)).collect::<Vec<_>>();
        out.clear();
        match &mut self.cache {
            Some(cache) => out.extend_from_slice(cache.split.entry((i, b.value().to_bits())).or_insert_with(eval)),
            None => out.extend(eval()),
        }
    }

    /// Fills the table of enabled events and returns the total rate `s(x, b)`.
    fn fill(&mut self, c: &Composition, b: ControlPoint) -> f64 {
        let view = StateView::sparse(c);
        let h = c.h();
        let occupied: Vec<(usize, u64)> = c.iter().collect();
        let mut events = std::mem::take(&mut self.events);
        events.clear();
        for (a, &(i, ni)) in occupied.iter().enumerate() {
            let same = self.pair_coefficient(i, i, &view, b);
            match self.convention {
                MergeConvention::Combinatorial if ni >= 2 => {
                    events.push((Event::Merge { i, j: i }, h * same * (ni * (ni - 1)) as f64));
                }
                MergeConvention::Combinatorial => {}
                MergeConvention::Literal => {
                    let event = if ni >= 2 {
                        Event::Merge { i, j: i }
                    } else {
                        Event::Idle { i }
                    };
                    events.push((event, h * same * (ni * ni) as f64));
                }
            }
            for &(j, nj) in &occupied[a + 1..] {
                let coef = self.pair_coefficient(i, j, &view, b);
                events.push((Event::Merge { i, j }, h * coef * (ni * nj) as f64));
            }
        }
        let mut split = Vec::new();
        for &(i, ni) in &occupied {
            if i < 2 {
                continue;
            }
            self.split_rates(i, &view, b, &mut split);
            for (j, f) in split.iter().enumerate() {
                events.push((Event::Split { i, j: j + 1 }, f * ni as f64));
            }
        }
        events.retain(|(_, r)| *r > 0.0);
        let total = events.iter().map(|(_, r)| r).sum();
        self.events = events;
        total
    }

    fn pick(&self, total: f64, u: f64) -> Event {
        let target = u * total;
        let mut acc = 0.0;
        for &(event, rate) in &self.events {
            acc += rate;
            if acc > target {
                return event;
            }
        }
        self.events.last().expect("enabled event").0
    }

    /// `s(x, b)`.
    pub fn total_rate(&mut self, c: &Composition, b: ControlPoint) -> f64 {
        self.fill(c, b)
    }

    /// Enabled events with positive rate, in canonical order.
    pub fn rate_table(&mut self, c: &Composition, b: ControlPoint) -> Vec<(Event, f64)> {
        self.fill(c, b);
        self.events.clone()
    }

    /// One jump: waiting time and event, applied to `c` in place.
    pub fn step<R: Rng + ?Sized>(&mut self, c: &mut Composition, b: ControlPoint, rng: &mut R) -> Result<(f64, Event)> {
        let total = self.fill(c, b);
        if !(total > 0.0) {
            return Err(Error::Absorbing);
        }
        let wait = Distribution::<f64>::sample(&Exp1, rng) / total;
        let event = self.pick(total, rng.random());
        event.apply(c);
        Ok((wait, event))
    }
}

pub fn total_rate(c: &Composition, kernel: &dyn RateKernel, b: ControlPoint, convention: MergeConvention) -> f64 {
    Chain::new(kernel, convention).total_rate(c, b)
}

pub fn rate_table(
    c: &Composition,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    convention: MergeConvention,
) -> Vec<(Event, f64)> {
    Chain::new(kernel, convention).rate_table(c, b)
}

/// One jump from `c`, returning the waiting time, the logged event and the
/// new state.
pub fn step<R: Rng + ?Sized>(
    c: &Composition,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    convention: MergeConvention,
    rng: &mut R,
) -> Result<(f64, EventLogEntry, Composition)> {
    let mut next = c.clone();
    let (wait, event) = Chain::new(kernel, convention).step(&mut next, b, rng)?;
    Ok((
        wait,
        EventLogEntry {
            time: wait,
            event,
            coalitions_before: c.coalitions(),
        },
        next,
    ))
}

/// How the control is chosen on each window `[k tau, (k+1) tau)`.
#[derive(Debug, Clone)]
pub enum ControlSchedule {
    Constant(ControlPoint),
    /// Open loop: `alpha(k tau)`.
    Action(ActionFunction),
    /// Feedback: `pi_k(X(k tau))`.
    Policy(Policy),
}

impl ControlSchedule {
    pub fn control(&self, k: usize, tau: f64, x: &Composition) -> Result<ControlPoint> {
        match self {
            ControlSchedule::Constant(b) => Ok(*b),
            ControlSchedule::Action(alpha) => Ok(alpha.eval(k as f64 * tau)),
            ControlSchedule::Policy(pi) => pi.decide(k, x),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub tau: f64,
    #[serde(default)]
    pub convention: MergeConvention,
    #[serde(default)]
    pub record_events: bool,
    #[serde(default = "yes")]
    pub rate_cache: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, tau: f64) -> Self {
        SimConfig {
            horizon,
            tau,
            convention: MergeConvention::default(),
            record_events: false,
            rate_cache: true,
        }
    }

    pub fn with_convention(mut self, convention: MergeConvention) -> Self {
        self.convention = convention;
        self
    }

    /// Number of control windows, the last one possibly shorter than `tau`.
    pub fn windows(&self) -> usize {
        if self.horizon <= 0.0 {
            0
        } else {
            (self.horizon / self.tau - 1e-9).ceil().max(1.0) as usize
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::config(format!(
                "horizon must be finite and nonnegative, got {}",
                self.horizon
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config(format!(
                "control step tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub master_seed: u64,
    pub replica: u64,
    pub tau: f64,
    pub obs_times: Vec<f64>,
    /// State at each observation time.
    pub samples: Vec<Composition>,
    /// State at the start of each window, followed by the terminal state.
    pub step_states: Vec<Composition>,
    /// Control used on each window.
    pub controls: Vec<ControlPoint>,
    /// Jump count `Delta(k)` on each window.
    pub window_events: Vec<u64>,
    pub events: Option<Vec<EventLogEntry>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &Composition {
        self.step_states.last().expect("terminal state")
    }

    pub fn total_events(&self) -> u64 {
        self.window_events.iter().sum()
    }
}

/// Simulates one replica on `[0, T]`.
///
/// Controls change only at `k tau`; a window boundary cuts the pending
/// exponential clock, which is exact by memorylessness.
pub fn simulate(
    x0: &Composition,
    kernel: &dyn RateKernel,
    schedule: &ControlSchedule,
    cfg: &SimConfig,
    obs_times: &[f64],
    master_seed: u64,
    replica: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if obs_times.windows(2).any(|w| w[1] < w[0]) || obs_times.iter().any(|&t| !(0.0..=cfg.horizon).contains(&t)) {
        return Err(Error::config("observation times must be sorted and lie in [0, T]"));
    }
    if let ControlSchedule::Policy(pi) = schedule {
        if (pi.tau() - cfg.tau).abs() > 1e-12 * cfg.tau.max(1.0) {
            return Err(Error::InvalidPolicy(format!(
                "policy step {} differs from simulation step {}",
                pi.tau(),
                cfg.tau
            )));
        }
    }
    let mut rng = replica_rng(master_seed, replica);
    let mut chain = Chain::new(kernel, cfg.convention);
    if !cfg.rate_cache {
        chain = chain.without_cache();
    }
    let windows = cfg.windows();
    let mut x = x0.clone();
    let mut samples = Vec::with_capacity(obs_times.len());
    let mut step_states = Vec::with_capacity(windows + 1);
    let mut controls = Vec::with_capacity(windows);
    let mut window_events = Vec::with_capacity(windows);
    let mut log = cfg.record_events.then(Vec::new);
    let mut next_obs = 0;

    for k in 0..windows {
        let mut t = k as f64 * cfg.tau;
        let end = if k + 1 == windows {
            cfg.horizon
        } else {
            (k + 1) as f64 * cfg.tau
        };
        step_states.push(x.clone());
        let b = schedule.control(k, cfg.tau, &x)?;
        controls.push(b);
        let mut count = 0;
        loop {
            let total = chain.fill(&x, b);
            if !(total > 0.0) {
                break;
            }
            let jump_at = t + Distribution::<f64>::sample(&Exp1, &mut rng) / total;
            if jump_at >= end {
                break;
            }
            while next_obs < obs_times.len() && obs_times[next_obs] < jump_at {
                samples.push(x.clone());
                next_obs += 1;
            }
            let event = chain.pick(total, rng.random());
            if let Some(log) = log.as_mut() {
                log.push(EventLogEntry {
                    time: jump_at,
                    event,
                    coalitions_before: x.coalitions(),
                });
            }
            event.apply(&mut x);
            count += 1;
            t = jump_at;
        }
        while next_obs < obs_times.len() && obs_times[next_obs] < end {
            samples.push(x.clone());
            next_obs += 1;
        }
        window_events.push(count);
    }
    samples.extend(std::iter::repeat_n(x.clone(), obs_times.len() - next_obs));
    step_states.push(x);
    Ok(Trajectory {
        master_seed,
        replica,
        tau: cfg.tau,
        obs_times: obs_times.to_vec(),
        samples,
        step_states,
        controls,
        window_events,
        events: log,
    })
}

/// Replicas `0..replicas` in parallel, returned in replica order.
pub fn simulate_replicas(
    x0: &Composition,
    kernel: &dyn RateKernel,
    schedule: &ControlSchedule,
    cfg: &SimConfig,
    obs_times: &[f64],
    master_seed: u64,
    replicas: usize,
) -> Result<Vec<Trajectory>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| simulate(x0, kernel, schedule, cfg, obs_times, master_seed, r))
        .collect()
}

/// Monte-Carlo estimate of `F^h(x, b) = E[X^h(tau, x, b) - x]`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftEstimate {
    pub tau: f64,
    pub replicas: usize,
    /// Componentwise mean displacement, indexed by size `1..=N`.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl DriftEstimate {
    /// `||F^h / tau - f||_2` and its standard error, taken as the `l2` norm
    /// of the componentwise standard errors over `tau`.
    pub fn scaled_deviation(&self, f: &[f64]) -> (f64, f64) {
        let len = self.mean.len().max(f.len());
        let dev = (0..len)
            .map(|k| {
                let d = self.mean.get(k).copied().unwrap_or(0.0) / self.tau - f.get(k).copied().unwrap_or(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let se = self.se.iter().map(|s| s * s).sum::<f64>().sqrt() / self.tau;
        (dev, se)
    }
}

pub fn drift_estimate(
    x: &Composition,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    tau: f64,
    replicas: usize,
    master_seed: u64,
    convention: MergeConvention,
) -> Result<DriftEstimate> {
    if replicas < 2 {
        return Err(Error::config("drift estimation needs at least two replicas"));
    }
    let k_max = x.players() as usize;
    if tau == 0.0 {
        return Ok(DriftEstimate {
            tau,
            replicas,
            mean: vec![0.0; k_max],
            se: vec![0.0; k_max],
        });
    }
    let cfg = SimConfig::new(tau, tau).with_convention(convention);
    let start = x.dense(k_max)?;
    let schedule = ControlSchedule::Constant(b);
    let displacements = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let traj = simulate(x, kernel, &schedule, &cfg, &[], master_seed, r)?;
            let end = traj.terminal().dense(k_max)?;
            Ok(end.iter().zip(&start).map(|(e, s)| e - s).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let m = replicas as f64;
    let mut mean = vec![0.0; k_max];
    for d in &displacements {
        for (acc, v) in mean.iter_mut().zip(d) {
            *acc += v / m;
        }
    }
    let mut var = vec![0.0; k_max];
    for d in &displacements {
        for ((acc, v), mu) in var.iter_mut().zip(d).zip(&mean) {
            *acc += (v - mu) * (v - mu) / (m - 1.0);
        }
    }
    Ok(DriftEstimate {
        tau,
        replicas,
        mean,
        se: var.iter().map(|v| (v / m).sqrt()).collect(),
    })
}
