//! Policies: one decision rule per control step `k tau`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composition::Composition;
use crate::control::statespace::StateSpace;
use crate::error::{Error, Result};
use crate::kernels::ControlPoint;

/// `n(h) = floor(T / tau)`, tolerant to representation error in `T / tau`.
pub fn step_count(horizon: f64, tau: f64) -> usize {
    (horizon / tau + 1e-9).floor() as usize
}

pub type FeedbackFn = Arc<dyn Fn(&Composition) -> ControlPoint + Send + Sync>;

#[derive(Clone)]
pub enum DecisionRule {
    Constant(ControlPoint),
    /// Lookup on an enumerated state space, indexed like `space`.
    Table {
        space: Arc<StateSpace>,
        controls: Vec<ControlPoint>,
    },
    Feedback(FeedbackFn),
}

impl fmt::Debug for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionRule::Constant(b) => write!(f, "Constant({b})"),
            DecisionRule::Table { controls, .. } => write!(f, "Table({} states)", controls.len()),
            DecisionRule::Feedback(_) => write!(f, "Feedback(..)"),
        }
    }
}

impl DecisionRule {
    pub fn decide(&self, x: &Composition) -> Result<ControlPoint> {
        match self {
            DecisionRule::Constant(b) => Ok(*b),
            DecisionRule::Table { space, controls } => space
                .index_of(x)
                .map(|idx| controls[idx])
                .ok_or_else(|| Error::InvalidPolicy(format!("state {:?} is not in the policy table", x.key()))),
            DecisionRule::Feedback(f) => Ok(f(x)),
        }
    }
}

/// How a policy was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyOrigin {
    Given,
    /// Sampled from an action function; ignores the state.
    OpenLoop,
    /// Argmax of the backward Shapley recursion.
    DynamicProgramming,
    /// Built from an optimal action of the mean-field limit. Optimality is
    /// only asymptotic as `h -> 0`.
    FromLimit,
}

#[derive(Debug, Clone)]
pub struct Policy {
    tau: f64,
    rules: Vec<DecisionRule>,
    origin: PolicyOrigin,
}

impl Policy {
    pub fn new(tau: f64, rules: Vec<DecisionRule>, origin: PolicyOrigin) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidPolicy(format!("step tau must be positive, got {tau}")));
        }
        if rules.is_empty() {
            return Err(Error::InvalidPolicy("a policy needs at least one decision rule".into()));
        }
        Ok(Policy { tau, rules, origin })
    }

    /// Checks `rules.len() == floor(T / tau)`.
    pub fn for_horizon(tau: f64, horizon: f64, rules: Vec<DecisionRule>, origin: PolicyOrigin) -> Result<Self> {
        let n = step_count(horizon, tau);
        if rules.len() != n {
            return Err(Error::InvalidPolicy(format!(
                "{} decision rules for horizon {horizon} and step {tau}; expected {n}",
                rules.len()
            )));
        }
        Policy::new(tau, rules, origin)
    }

    pub fn open_loop(tau: f64, controls: &[ControlPoint]) -> Result<Self> {
        Policy::new(
            tau,
            controls.iter().copied().map(DecisionRule::Constant).collect(),
            PolicyOrigin::OpenLoop,
        )
    }

    pub fn constant(tau: f64, steps: usize, b: ControlPoint) -> Result<Self> {
        Policy::open_loop(tau, &vec![b; steps])
    }

    /// The same feedback rule at every step.
    pub fn stationary_feedback(
        tau: f64,
        steps: usize,
        rule: impl Fn(&Composition) -> ControlPoint + Send + Sync + 'static,
    ) -> Result<Self> {
        let rule: FeedbackFn = Arc::new(rule);
        Policy::new(
            tau,
            (0..steps).map(|_| DecisionRule::Feedback(rule.clone())).collect(),
            PolicyOrigin::Given,
        )
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.rules.len()
    }

    pub fn origin(&self) -> PolicyOrigin {
        self.origin
    }

    pub fn rules(&self) -> &[DecisionRule] {
        &self.rules
    }

    /// `pi_k(x)`. Steps past the last rule reuse it.
    pub fn decide(&self, k: usize, x: &Composition) -> Result<ControlPoint> {
        self.rules[k.min(self.rules.len() - 1)].decide(x)
    }

    /// The control sequence when every rule is constant.
    pub fn open_loop_controls(&self) -> Option<Vec<ControlPoint>> {
        self.rules
            .iter()
            .map(|r| match r {
                DecisionRule::Constant(b) => Some(*b),
                _ => None,
            })
            .collect()
    }
}

/// JSON form of a state-independent policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopPolicyFile {
    pub tau: f64,
    pub controls: Vec<ControlPoint>,
}

impl OpenLoopPolicyFile {
    pub fn into_policy(self) -> Result<Policy> {
        Policy::open_loop(self.tau, &self.controls)
    }
}
