//! Markovian couplings of two copies of the chain.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::composition::Composition;
use crate::control::McEstimate;
use crate::ctmc::{Chain, Event, MergeConvention};
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};
use crate::rng::replica_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Shared events fire jointly at the minimum rate.
    #[default]
    MarchingSoldiers,
    /// The two copies jump independently.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledState {
    pub x: Composition,
    pub y: Composition,
}

impl CoupledState {
    pub fn new(x: Composition, y: Composition) -> Result<Self> {
        if x.h() != y.h() {
            return Err(Error::InvalidState(format!(
                "coupled copies need the same h, got {} and {}",
                x.h(),
                y.h()
            )));
        }
        Ok(CoupledState { x, y })
    }

    /// `||X - Y||_2`.
    pub fn distance(&self) -> f64 {
        self.x.distance(&self.y)
    }

    pub fn coalesced(&self) -> bool {
        self.x == self.y
    }
}

/// Rates of one event key in the coupled generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointRate {
    pub joint: f64,
    pub x_only: f64,
    pub y_only: f64,
}

impl JointRate {
    fn split(qx: f64, qy: f64, kind: CouplingKind) -> Self {
        match kind {
            CouplingKind::MarchingSoldiers => JointRate {
                joint: qx.min(qy),
                x_only: (qx - qy).max(0.0),
                y_only: (qy - qx).max(0.0),
            },
            CouplingKind::Independent => JointRate {
                joint: 0.0,
                x_only: qx,
                y_only: qy,
            },
        }
    }

    pub fn total(&self) -> f64 {
        self.joint + self.x_only + self.y_only
    }
}

fn table_with(
    chain: &mut Chain<'_>,
    s: &CoupledState,
    b: ControlPoint,
    kind: CouplingKind,
) -> BTreeMap<Event, JointRate> {
    let mut rates: BTreeMap<Event, (f64, f64)> = BTreeMap::new();
    for (e, q) in chain.rate_table(&s.x, b) {
        rates.entry(e).or_default().0 = q;
    }
    for (e, q) in chain.rate_table(&s.y, b) {
        rates.entry(e).or_default().1 = q;
    }
    rates
        .into_iter()
        .map(|(e, (qx, qy))| (e, JointRate::split(qx, qy, kind)))
        .collect()
}

/// The coupled rate table keyed by event.
pub fn joint_rate_table(
    s: &CoupledState,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    convention: MergeConvention,
    kind: CouplingKind,
) -> BTreeMap<Event, JointRate> {
    table_with(&mut Chain::new(kernel, convention), s, b, kind)
}

fn step_with<R: Rng + ?Sized>(
    chain: &mut Chain<'_>,
    s: &mut CoupledState,
    b: ControlPoint,
    kind: CouplingKind,
    rng: &mut R,
) -> Option<f64> {
    let table = table_with(chain, s, b, kind);
    let total: f64 = table.values().map(JointRate::total).sum();
    if !(total > 0.0) {
        return None;
    }
    let wait = Distribution::<f64>::sample(&Exp1, rng) / total;
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    'outer: for (event, r) in &table {
        for (rate, mx, my) in [(r.joint, true, true), (r.x_only, true, false), (r.y_only, false, true)] {
            if rate <= 0.0 {
                continue;
            }
            chosen = Some((*event, mx, my));
            acc += rate;
            if acc > target {
                break 'outer;
            }
        }
    }
    let (event, mx, my) = chosen.expect("positive total rate");
    if mx {
        event.apply(&mut s.x);
    }
    if my {
        event.apply(&mut s.y);
    }
    Some(wait)
}

/// One jump of the coupled chain: waiting time and new pair.
pub fn coupled_step<R: Rng + ?Sized>(
    s: &CoupledState,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    convention: MergeConvention,
    kind: CouplingKind,
    rng: &mut R,
) -> Result<(f64, CoupledState)> {
    let mut next = s.clone();
    let wait = step_with(&mut Chain::new(kernel, convention), &mut next, b, kind, rng).ok_or(Error::Absorbing)?;
    Ok((wait, next))
}

/// States of one coupled replica at the sorted times `obs_times`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    s0: &CoupledState,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    convention: MergeConvention,
    kind: CouplingKind,
    obs_times: &[f64],
    master_seed: u64,
    replica: u64,
) -> Result<Vec<CoupledState>> {
    if obs_times.windows(2).any(|w| w[1] < w[0]) || obs_times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::config(
            "observation times must be sorted, finite and nonnegative",
        ));
    }
    let mut rng = replica_rng(master_seed, replica);
    let mut chain = Chain::new(kernel, convention);
    let mut s = s0.clone();
    let mut next = s.clone();
    let mut advance = |next: &mut CoupledState, from: f64| {
        step_with(&mut chain, next, b, kind, &mut rng).map_or(f64::INFINITY, |w| from + w)
    };
    let mut jump_at = advance(&mut next, 0.0);
    let mut out = Vec::with_capacity(obs_times.len());
    for &obs in obs_times {
        while jump_at <= obs {
            s = next.clone();
            jump_at = advance(&mut next, jump_at);
        }
        out.push(s.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionPoint {
    pub s: f64,
    pub mean_distance: f64,
    pub se: f64,
    pub envelope: f64,
    pub coalesced_fraction: f64,
    /// Mean exceeds the envelope by more than three standard errors.
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub initial_distance: f64,
    /// Envelope exponent `M2 sqrt(N)`.
    pub rate: f64,
    pub replicas: usize,
    pub kind: CouplingKind,
    pub points: Vec<ContractionPoint>,
}

impl ContractionReport {
    pub fn violations(&self) -> usize {
        self.points.iter().filter(|p| p.violated).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContractionConfig {
    pub b: ControlPoint,
    pub tau: f64,
    /// Grid `s_k = k tau`, `k = 1..=points`.
    pub points: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub radius: f64,
    pub convention: MergeConvention,
    pub kind: CouplingKind,
}

/// Mean coupled distance on a time grid against `e^{M2 sqrt(N) s} ||x - y||`.
pub fn contraction_experiment(
    x: &Composition,
    y: &Composition,
    kernel: &dyn RateKernel,
    cfg: &ContractionConfig,
) -> Result<ContractionReport> {
    if x.players() != y.players() {
        return Err(Error::config(format!(
            "coupled copies must have the same mass, got {} and {} players",
            x.players(),
            y.players()
        )));
    }
    if cfg.replicas == 0 || cfg.points == 0 || !(cfg.tau > 0.0) {
        return Err(Error::config(
            "contraction experiment needs replicas, grid points and tau > 0",
        ));
    }
    x.ensure_within(cfg.radius)?;
    let s0 = CoupledState::new(x.clone(), y.clone())?;
    let grid: Vec<f64> = (1..=cfg.points).map(|k| k as f64 * cfg.tau).collect();
    let runs = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| simulate_coupled(&s0, kernel, cfg.b, cfg.convention, cfg.kind, &grid, cfg.master_seed, r))
        .collect::<Result<Vec<_>>>()?;
    let kb = kernel.bounds();
    let r = cfg.radius;
    let m2 = 3.0 * (kb.c1 * r * r + 2.0 * kb.c * r + kb.f1 * r + kb.f);
    let rate = m2 * (x.players() as f64).sqrt();
    let d0 = s0.distance();
    let points = grid
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let d: Vec<f64> = runs.iter().map(|run| run[k].distance()).collect();
            let est = McEstimate::from_samples(&d);
            let envelope = (rate * s).exp() * d0;
            ContractionPoint {
                s,
                mean_distance: est.mean,
                se: est.se,
                envelope,
                coalesced_fraction: runs.iter().filter(|run| run[k].coalesced()).count() as f64 / cfg.replicas as f64,
                violated: est.mean > envelope + 3.0 * est.se,
            }
        })
        .collect();
    Ok(ContractionReport {
        initial_distance: d0,
        rate,
        replicas: cfg.replicas,
        kind: cfg.kind,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::constant_example_kernel;

    fn cp(v: f64) -> ControlPoint {
        ControlPoint::new(v).unwrap()
    }

    fn comp(h: f64, counts: &[(usize, u64)]) -> Composition {
        Composition::new(h, counts.iter().copied()).unwrap()
    }

    #[test]
    fn hand_enumerated_fixture() {
        let k = constant_example_kernel();
        let s = CoupledState::new(comp(1.0, &[(1, 2)]), comp(1.0, &[(1, 1), (2, 1)])).unwrap();
        let table = joint_rate_table(
            &s,
            &k,
            cp(1.0),
            MergeConvention::Combinatorial,
            CouplingKind::MarchingSoldiers,
        );
        let expected = BTreeMap::from([
            (
                Event::Merge { i: 1, j: 1 },
                JointRate {
                    joint: 0.0,
                    x_only: 2.0,
                    y_only: 0.0,
                },
            ),
            (
                Event::Merge { i: 1, j: 2 },
                JointRate {
                    joint: 0.0,
                    x_only: 0.0,
                    y_only: 2.0,
                },
            ),
        ]);
        assert_eq!(table, expected);
    }

    #[test]
    fn marginal_rates_are_reconstructed() {
        let k = constant_example_kernel();
        let s = CoupledState::new(comp(0.1, &[(1, 3), (2, 2), (3, 1)]), comp(0.1, &[(1, 4), (3, 2)])).unwrap();
        let b = cp(0.3);
        let table = joint_rate_table(
            &s,
            &k,
            b,
            MergeConvention::Combinatorial,
            CouplingKind::MarchingSoldiers,
        );
        let x_rates: BTreeMap<Event, f64> = crate::ctmc::rate_table(&s.x, &k, b, MergeConvention::Combinatorial)
            .into_iter()
            .collect();
        for (e, r) in &table {
            assert_eq!(r.joint + r.x_only, x_rates.get(e).copied().unwrap_or(0.0));
        }
    }

    #[test]
    fn equal_copies_move_in_lockstep() {
        let k = constant_example_kernel();
        let x = comp(0.1, &[(1, 6), (2, 2)]);
        let s0 = CoupledState::new(x.clone(), x).unwrap();
        let table = joint_rate_table(
            &s0,
            &k,
            cp(0.5),
            MergeConvention::Combinatorial,
            CouplingKind::MarchingSoldiers,
        );
        assert!(table.values().all(|r| r.x_only == 0.0 && r.y_only == 0.0));
        let path = simulate_coupled(
            &s0,
            &k,
            cp(0.5),
            MergeConvention::Combinatorial,
            CouplingKind::MarchingSoldiers,
            &[0.5, 1.0, 2.0],
            3,
            0,
        )
        .unwrap();
        assert!(path.iter().all(CoupledState::coalesced));
    }

    #[test]
    fn absorbing_pair_errors() {
        let k = constant_example_kernel();
        let s = CoupledState::new(comp(1.0, &[(1, 1)]), comp(1.0, &[(1, 1)])).unwrap();
        let mut rng = replica_rng(0, 0);
        assert!(matches!(
            coupled_step(
                &s,
                &k,
                cp(1.0),
                MergeConvention::Combinatorial,
                CouplingKind::MarchingSoldiers,
                &mut rng
            ),
            Err(Error::Absorbing)
        ));
    }

    #[test]
    fn contraction_requires_same_mass() {
        let k = constant_example_kernel();
        let cfg = ContractionConfig {
            b: cp(0.5),
            tau: 0.1,
            points: 8,
            replicas: 10,
            master_seed: 1,
            radius: 1.0,
            convention: MergeConvention::Combinatorial,
            kind: CouplingKind::MarchingSoldiers,
        };
        let x = comp(0.1, &[(1, 10)]);
        assert!(contraction_experiment(&x, &comp(0.1, &[(1, 9)]), &k, &cfg).is_err());
        let same = contraction_experiment(&x, &x, &k, &cfg).unwrap();
        assert!(same.points.iter().all(|p| p.mean_distance == 0.0));
    }
}
