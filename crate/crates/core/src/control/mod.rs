//! Policies, action functions, Monte-Carlo and exact values, and the
//! backward Shapley recursion.

mod action;
pub mod dp;
mod policy;
mod reward;
pub mod statespace;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

pub use action::{ActionFunction, ActionPiece, PieceShape};
pub use dp::{brute_force_feedback, evaluate_policy, shapley_dp, DpProblem, DpSolution, DpTable};
pub use policy::{step_count, DecisionRule, FeedbackFn, OpenLoopPolicyFile, Policy, PolicyOrigin};
pub use reward::{RewardModel, RewardSpec, RunningReward, TerminalReward};
pub use statespace::{expm, partition_count, StateSpace};

use crate::composition::{Composition, MeanFieldState, StateView};
use crate::ctmc::{simulate_replicas, ControlSchedule, MergeConvention, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};
use crate::meanfield::{value_deterministic, OdeConfig};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub replicas: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let se = if samples.len() > 1 {
            (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        McEstimate {
            mean,
            se,
            replicas: samples.len(),
        }
    }
}

/// Realized reward `sum_k tau B(x_k, b_k) + V0(x_n)` of one trajectory.
pub fn realized_reward(traj: &Trajectory, reward: &RewardModel, steps: usize) -> f64 {
    let running: f64 = (0..steps)
        .map(|k| traj.tau * reward.running(&StateView::sparse(&traj.step_states[k]), traj.controls[k]))
        .sum();
    running + reward.terminal(&StateView::sparse(&traj.step_states[steps]))
}

/// Monte-Carlo estimate of `V_pi^h(x0)` over `n = policy.steps()` steps.
pub fn value_mc(
    x0: &Composition,
    policy: &Policy,
    reward: &RewardModel,
    kernel: &dyn RateKernel,
    convention: MergeConvention,
    replicas: usize,
    master_seed: u64,
) -> Result<McEstimate> {
    let trajs = policy_trajectories(x0, policy, kernel, convention, replicas, master_seed)?;
    let samples: Vec<f64> = trajs
        .iter()
        .map(|t| realized_reward(t, reward, policy.steps()))
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Replicas of the chain driven by `policy` over `[0, n tau]`.
pub fn policy_trajectories(
    x0: &Composition,
    policy: &Policy,
    kernel: &dyn RateKernel,
    convention: MergeConvention,
    replicas: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    if replicas == 0 {
        return Err(Error::config("at least one replica is required"));
    }
    let cfg = SimConfig::new(policy.steps() as f64 * policy.tau(), policy.tau()).with_convention(convention);
    simulate_replicas(
        x0,
        kernel,
        &ControlSchedule::Policy(policy.clone()),
        &cfg,
        &[],
        master_seed,
        replicas,
    )
}

/// State-independent policy `pi_k = alpha(k tau)`, `k < n`.
pub fn action_to_policy(alpha: &ActionFunction, tau: f64, steps: usize) -> Result<Policy> {
    if steps as f64 * tau > alpha.horizon() * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::InvalidAction(format!(
            "action defined on [0, {}] cannot drive {steps} steps of length {tau}",
            alpha.horizon()
        )));
    }
    let controls: Vec<ControlPoint> = (0..steps).map(|k| alpha.eval(k as f64 * tau)).collect();
    Policy::open_loop(tau, &controls)
}

/// The realized action `A_pi^h`: piecewise constant on `[k tau, (k+1) tau)`.
pub fn trajectory_to_action(traj: &Trajectory, tau: f64, steps: usize) -> Result<ActionFunction> {
    if (traj.tau - tau).abs() > 1e-12 * tau.max(1.0) {
        return Err(Error::InvalidPolicy(format!(
            "trajectory step {} differs from {tau}",
            traj.tau
        )));
    }
    if traj.controls.len() < steps || steps == 0 {
        return Err(Error::InvalidPolicy(format!(
            "trajectory has {} control windows; {steps} requested",
            traj.controls.len()
        )));
    }
    ActionFunction::staircase(&traj.controls[..steps], tau)
}

/// Mean over replicas of the limit value `v_{A_pi^h}(x0)` of the realized
/// actions. Replicas sharing a control sequence share one integration.
pub fn realized_limit_value(
    trajs: &[Trajectory],
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    reward: &RewardModel,
    ode: &OdeConfig,
    tau: f64,
    steps: usize,
) -> Result<McEstimate> {
    let mut distinct: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut actions = Vec::new();
    let mut which = Vec::with_capacity(trajs.len());
    for t in trajs {
        let key: Vec<u64> = t.controls[..steps.min(t.controls.len())]
            .iter()
            .map(|b| b.value().to_bits())
            .collect();
        let next = distinct.len();
        let slot = *distinct.entry(key).or_insert_with(|| {
            actions.push(t);
            next
        });
        which.push(slot);
    }
    let values = actions
        .par_iter()
        .map(|t| {
            let alpha = trajectory_to_action(t, tau, steps)?;
            value_deterministic(x0, kernel, &alpha, steps as f64 * tau, reward, ode)
        })
        .collect::<Result<Vec<f64>>>()?;
    let samples: Vec<f64> = which.iter().map(|&s| values[s]).collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Static policy `pi_k(x) = alpha*(k tau)` from an optimal action of the
/// limit problem. Its optimality holds only asymptotically in `h`.
pub fn construct_policy_from_limit(alpha: &ActionFunction, tau: f64, horizon: f64) -> Result<Policy> {
    let n = step_count(horizon, tau);
    let rules = (0..n)
        .map(|k| DecisionRule::Constant(alpha.eval(k as f64 * tau)))
        .collect();
    Policy::for_horizon(tau, horizon, rules, PolicyOrigin::FromLimit)
}

/// Exhaustive maximum of `evaluate` over staircase actions with `pieces`
/// equal pieces on `[0, T]`, each taking a value in `grid`. Ties keep the
/// first candidate in lexicographic grid-index order.
pub fn openloop_brute_value(
    grid: &[ControlPoint],
    pieces: usize,
    horizon: f64,
    cap: u128,
    mut evaluate: impl FnMut(&ActionFunction) -> Result<f64>,
) -> Result<(ActionFunction, f64)> {
    if grid.is_empty() || pieces == 0 {
        return Err(Error::config(
            "open-loop family needs a nonempty grid and at least one piece",
        ));
    }
    let count = (grid.len() as u128).checked_pow(pieces as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::FamilyTooLarge { count, cap });
    }
    let step = horizon / pieces as f64;
    let mut idx = vec![0usize; pieces];
    let mut best: Option<(ActionFunction, f64)> = None;
    loop {
        let levels: Vec<ControlPoint> = idx.iter().map(|&g| grid[g]).collect();
        let alpha = ActionFunction::staircase(&levels, step)?;
        let v = evaluate(&alpha)?;
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((alpha, v));
        }
        let mut pos = pieces;
        loop {
            if pos == 0 {
                return Ok(best.expect("nonempty family"));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::constant_example_kernel;

    fn cp(v: f64) -> ControlPoint {
        ControlPoint::new(v).unwrap()
    }

    #[test]
    fn trivial_rewards_are_exact() {
        let k = constant_example_kernel();
        let x0 = Composition::singletons(10, 0.1).unwrap();
        let pi = Policy::constant(0.25, 4, cp(0.5)).unwrap();
        let c = RewardModel::terminal_norm(|_| 3.5, 0.0, 3.5);
        let est = value_mc(&x0, &pi, &c, &k, MergeConvention::Combinatorial, 50, 1).unwrap();
        assert_eq!((est.mean, est.se), (3.5, 0.0));
        let one = RewardModel::norm_based(|_, _| 1.0, |_| 0.0, 0.0, 1.0);
        let est = value_mc(&x0, &pi, &one, &k, MergeConvention::Combinatorial, 50, 1).unwrap();
        assert_eq!(est.mean, 1.0);
    }

    #[test]
    fn action_sampling() {
        let alpha = ActionFunction::linear(cp(0.0), cp(1.0), 1.0).unwrap();
        let pi = action_to_policy(&alpha, 0.25, 4).unwrap();
        let got: Vec<f64> = pi.open_loop_controls().unwrap().iter().map(|b| b.value()).collect();
        assert_eq!(got, vec![0.0, 0.25, 0.5, 0.75]);
        assert!(action_to_policy(&alpha, 0.25, 5).is_err());
        let jump = ActionFunction::staircase(&[cp(0.2), cp(0.9), cp(0.9)], 0.125).unwrap();
        let pi = action_to_policy(&jump, 0.25, 1).unwrap();
        assert_eq!(pi.open_loop_controls().unwrap(), vec![cp(0.2)]);
    }

    #[test]
    fn realized_action_round_trip() {
        let k = constant_example_kernel();
        let x0 = Composition::singletons(8, 0.125).unwrap();
        let alpha = ActionFunction::linear(cp(0.0), cp(1.0), 1.0).unwrap();
        let pi = action_to_policy(&alpha, 0.25, 4).unwrap();
        let trajs = policy_trajectories(&x0, &pi, &k, MergeConvention::Combinatorial, 3, 2).unwrap();
        let staircase = trajectory_to_action(&trajs[0], 0.25, 4).unwrap();
        for j in 0..4 {
            assert_eq!(staircase.eval(j as f64 * 0.25), alpha.eval(j as f64 * 0.25));
        }
        let single = trajectory_to_action(&trajs[1], 0.25, 1).unwrap();
        assert_eq!(single.pieces().len(), 1);
        assert!(trajectory_to_action(&trajs[0], 0.5, 2).is_err());
    }

    #[test]
    fn brute_force_family() {
        let (best, v) = openloop_brute_value(&[cp(0.0), cp(1.0)], 1, 1.0, 10, |a| Ok(a.eval(0.0).value())).unwrap();
        assert_eq!((best.eval(0.0), v), (cp(1.0), 1.0));
        let (only, _) = openloop_brute_value(&[cp(0.3)], 1, 1.0, 10, |_| Ok(0.0)).unwrap();
        assert_eq!(only.eval(0.5), cp(0.3));
        assert!(matches!(
            openloop_brute_value(&[cp(0.0), cp(1.0)], 8, 1.0, 100, |_| Ok(0.0)),
            Err(Error::FamilyTooLarge { count: 256, cap: 100 })
        ));
    }

    #[test]
    fn limit_policy_metadata() {
        let alpha = ActionFunction::constant(cp(0.5), 1.0).unwrap();
        let pi = construct_policy_from_limit(&alpha, 0.1, 1.0).unwrap();
        assert_eq!(pi.steps(), 10);
        assert_eq!(pi.origin(), PolicyOrigin::FromLimit);
    }
}
