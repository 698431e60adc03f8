//! Backward dynamic programming with the Shapley operator on `S(h)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composition::{Composition, StateView};
use crate::control::policy::{DecisionRule, Policy, PolicyOrigin};
use crate::control::reward::RewardModel;
use crate::control::statespace::StateSpace;
use crate::ctmc::MergeConvention;
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};

/// Everything that defines a finite-horizon control problem on `S(h)`.
#[derive(Clone, Copy)]
pub struct DpProblem<'a> {
    pub space: &'a Arc<StateSpace>,
    pub kernel: &'a dyn RateKernel,
    pub reward: &'a RewardModel,
    pub tau: f64,
    pub steps: usize,
    pub convention: MergeConvention,
}

impl DpProblem<'_> {
    fn terminal(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.space.len(),
            self.space
                .states()
                .iter()
                .map(|x| self.reward.terminal(&StateView::sparse(x))),
        )
    }

    fn running(&self, x: &Composition, b: ControlPoint) -> f64 {
        self.tau * self.reward.running(&StateView::sparse(x), b)
    }

    fn transition(&self, b: ControlPoint) -> DMatrix<f64> {
        self.space.transition(self.kernel, b, self.convention, self.tau)
    }
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    space: Arc<StateSpace>,
    grid: Vec<ControlPoint>,
    tau: f64,
    /// `values[k]` is `V_k`, the optimal value with `k` steps to go.
    values: Vec<DVector<f64>>,
    /// `argmax[k - 1]` holds grid indices attaining `V_k`.
    argmax: Vec<Vec<usize>>,
}

/// `V_k = max_b [tau B(., b) + P_tau^b V_{k-1}]`, `V_0 = V0`, over a finite
/// control grid. Ties go to the smallest grid index.
pub fn shapley_dp(problem: DpProblem<'_>, grid: &[ControlPoint]) -> Result<DpSolution> {
    if grid.is_empty() {
        return Err(Error::config("control grid is empty"));
    }
    let transitions: Vec<DMatrix<f64>> = grid.iter().map(|&b| problem.transition(b)).collect();
    let mut values = vec![problem.terminal()];
    let mut argmax = Vec::with_capacity(problem.steps);
    for _ in 0..problem.steps {
        let prev = values.last().expect("V_0");
        let continuation: Vec<DVector<f64>> = transitions.iter().map(|p| p * prev).collect();
        let mut v = DVector::from_element(problem.space.len(), f64::NEG_INFINITY);
        let mut best = vec![0; problem.space.len()];
        for (s, x) in problem.space.states().iter().enumerate() {
            for (g, &b) in grid.iter().enumerate() {
                let q = problem.running(x, b) + continuation[g][s];
                if q > v[s] {
                    v[s] = q;
                    best[s] = g;
                }
            }
        }
        values.push(v);
        argmax.push(best);
    }
    Ok(DpSolution {
        space: problem.space.clone(),
        grid: grid.to_vec(),
        tau: problem.tau,
        values,
        argmax,
    })
}

impl DpSolution {
    pub fn steps(&self) -> usize {
        self.argmax.len()
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// `V_k` indexed like the state space.
    pub fn values(&self, k: usize) -> &[f64] {
        self.values[k].as_slice()
    }

    /// `V_n(x)`.
    pub fn value(&self, x: &Composition) -> Option<f64> {
        self.space.index_of(x).map(|i| self.values[self.steps()][i])
    }

    /// Greedy control at decision step `k` (with `n - k` steps to go).
    pub fn control(&self, k: usize, x: &Composition) -> Option<ControlPoint> {
        let i = self.space.index_of(x)?;
        Some(self.grid[self.argmax[self.steps() - 1 - k][i]])
    }

    pub fn policy(&self) -> Result<Policy> {
        let n = self.steps();
        let rules = (0..n)
            .map(|k| DecisionRule::Table {
                space: self.space.clone(),
                controls: self.argmax[n - 1 - k].iter().map(|&g| self.grid[g]).collect(),
            })
            .collect();
        Policy::new(self.tau, rules, PolicyOrigin::DynamicProgramming)
    }

    pub fn to_table(&self) -> DpTable {
        let n = self.steps();
        DpTable {
            players: self.space.players(),
            h: self.space.h(),
            tau: self.tau,
            steps: n,
            entries: self
                .space
                .states()
                .iter()
                .enumerate()
                .map(|(i, x)| DpEntry {
                    state: x.clone(),
                    value: self.values[n][i],
                    actions: (0..n).map(|k| self.grid[self.argmax[n - 1 - k][i]]).collect(),
                })
                .collect(),
        }
    }
}

/// Serialized DP output: per state the optimal value and the greedy control
/// at each decision step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpTable {
    pub players: u64,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub entries: Vec<DpEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpEntry {
    pub state: Composition,
    pub value: f64,
    pub actions: Vec<ControlPoint>,
}

impl DpTable {
    pub fn into_policy(self) -> Result<Policy> {
        let space = Arc::new(StateSpace::enumerate(self.players, self.h, usize::MAX)?);
        let mut controls = vec![vec![ControlPoint::SPLIT_ONLY; space.len()]; self.steps];
        let mut seen = vec![false; space.len()];
        for entry in &self.entries {
            let idx = space
                .index_of(&entry.state)
                .ok_or_else(|| Error::InvalidPolicy(format!("state {:?} is not in S(h)", entry.state.key())))?;
            if entry.actions.len() != self.steps {
                return Err(Error::InvalidPolicy(format!(
                    "state {:?} has {} actions; expected {}",
                    entry.state.key(),
                    entry.actions.len(),
                    self.steps
                )));
            }
            for (k, &b) in entry.actions.iter().enumerate() {
                controls[k][idx] = b;
            }
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPolicy(format!(
                "state {:?} has no entry",
                space.states()[missing].key()
            )));
        }
        let rules = controls
            .into_iter()
            .map(|controls| DecisionRule::Table {
                space: space.clone(),
                controls,
            })
            .collect();
        Policy::new(self.tau, rules, PolicyOrigin::DynamicProgramming)
    }
}

/// Exact value of a policy from every state, by backward evaluation with
/// one-step transition matrices. Steps past the policy length reuse its
/// last rule.
pub fn evaluate_policy(problem: DpProblem<'_>, policy: &Policy) -> Result<Vec<f64>> {
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut w = problem.terminal();
    for k in (0..problem.steps).rev() {
        let mut next = DVector::zeros(problem.space.len());
        for (s, x) in problem.space.states().iter().enumerate() {
            let b = policy.decide(k, x)?;
            let p = cache
                .entry(b.value().to_bits())
                .or_insert_with(|| problem.transition(b));
            next[s] = problem.running(x, b) + p.row(s).transpose().dot(&w);
        }
        w = next;
    }
    Ok(w.as_slice().to_vec())
}

/// Maximum over every deterministic feedback policy `S(h) x {0..n-1} -> grid`
/// of the exact value at `x0`. Refuses families larger than `cap`.
pub fn brute_force_feedback(problem: DpProblem<'_>, grid: &[ControlPoint], x0: &Composition, cap: u128) -> Result<f64> {
    let slots = problem.space.len() * problem.steps;
    let count = (grid.len() as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::FamilyTooLarge { count, cap });
    }
    let start = problem
        .space
        .index_of(x0)
        .ok_or_else(|| Error::InvalidState("x0 is not in the enumerated state space".into()))?;
    let transitions: Vec<DMatrix<f64>> = grid.iter().map(|&b| problem.transition(b)).collect();
    let terminal = problem.terminal();
    let mut choice = vec![0usize; slots];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut w = terminal.clone();
        for k in (0..problem.steps).rev() {
            let mut next = DVector::zeros(problem.space.len());
            for (s, x) in problem.space.states().iter().enumerate() {
                let g = choice[k * problem.space.len() + s];
                next[s] = problem.running(x, grid[g]) + transitions[g].row(s).transpose().dot(&w);
            }
            w = next;
        }
        best = best.max(w[start]);
        let mut pos = 0;
        loop {
            if pos == slots {
                return Ok(best);
            }
            choice[pos] += 1;
            if choice[pos] < grid.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{constant_example_kernel, uniform_grid};

    fn setup(players: u64) -> (Arc<StateSpace>, RewardModel) {
        let space = Arc::new(StateSpace::enumerate(players, 1.0 / players as f64, 1000).unwrap());
        let reward = RewardModel::terminal_norm(|m| -(m - 0.5) * (m - 0.5), 1.0, 1.0);
        (space, reward)
    }

    #[test]
    fn zero_steps_tabulates_terminal() {
        let (space, reward) = setup(4);
        let k = constant_example_kernel();
        let p = DpProblem {
            space: &space,
            kernel: &k,
            reward: &reward,
            tau: 0.5,
            steps: 0,
            convention: MergeConvention::Combinatorial,
        };
        let sol = shapley_dp(p, &uniform_grid(3)).unwrap();
        for (i, x) in space.states().iter().enumerate() {
            assert_eq!(sol.values(0)[i], -(x.m() - 0.5).powi(2));
        }
    }

    #[test]
    fn dp_matches_brute_force_and_policy_evaluation() {
        let (space, reward) = setup(3);
        let k = constant_example_kernel();
        let p = DpProblem {
            space: &space,
            kernel: &k,
            reward: &reward,
            tau: 0.5,
            steps: 2,
            convention: MergeConvention::Combinatorial,
        };
        let grid = uniform_grid(3);
        let sol = shapley_dp(p, &grid).unwrap();
        let x0 = Composition::singletons(3, 1.0 / 3.0).unwrap();
        let brute = brute_force_feedback(p, &grid, &x0, 1_000_000).unwrap();
        assert!((sol.value(&x0).unwrap() - brute).abs() < 1e-12);
        let exact = evaluate_policy(p, &sol.policy().unwrap()).unwrap();
        for (a, b) in exact.iter().zip(sol.values(2)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            brute_force_feedback(p, &grid, &x0, 10),
            Err(Error::FamilyTooLarge { count: 729, cap: 10 })
        ));
    }

    #[test]
    fn table_round_trip() {
        let (space, reward) = setup(4);
        let k = constant_example_kernel();
        let p = DpProblem {
            space: &space,
            kernel: &k,
            reward: &reward,
            tau: 0.25,
            steps: 3,
            convention: MergeConvention::Combinatorial,
        };
        let sol = shapley_dp(p, &uniform_grid(5)).unwrap();
        let json = serde_json::to_string(&sol.to_table()).unwrap();
        let policy = serde_json::from_str::<DpTable>(&json).unwrap().into_policy().unwrap();
        for k in 0..3 {
            for x in space.states() {
                assert_eq!(policy.decide(k, x).unwrap(), sol.control(k, x).unwrap());
            }
        }
    }

    #[test]
    fn argmax_invariant_under_positive_scaling() {
        let (space, reward) = setup(5);
        let k = constant_example_kernel();
        let scaled = reward.scaled(7.5);
        let base = DpProblem {
            space: &space,
            kernel: &k,
            reward: &reward,
            tau: 0.3,
            steps: 3,
            convention: MergeConvention::Combinatorial,
        };
        let grid = uniform_grid(4);
        let a = shapley_dp(base, &grid).unwrap();
        let b = shapley_dp(
            DpProblem {
                reward: &scaled,
                ..base
            },
            &grid,
        )
        .unwrap();
        for step in 0..3 {
            for x in space.states() {
                assert_eq!(a.control(step, x), b.control(step, x));
            }
        }
    }

    #[test]
    fn bounded_terminal_bounds_values() {
        let (space, reward) = setup(6);
        let k = constant_example_kernel();
        let p = DpProblem {
            space: &space,
            kernel: &k,
            reward: &reward,
            tau: 0.2,
            steps: 5,
            convention: MergeConvention::Combinatorial,
        };
        let sol = shapley_dp(p, &uniform_grid(3)).unwrap();
        let sup = sol.values(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..=5 {
            assert!(sol.values(k).iter().all(|v| v.abs() <= sup + 1e-12));
        }
    }
}
