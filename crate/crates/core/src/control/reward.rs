//! Running and terminal rewards of the major player.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composition::StateView;
use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::kernels::ControlPoint;

pub type RunningReward = Arc<dyn Fn(&StateView<'_>, ControlPoint) -> f64 + Send + Sync>;
pub type TerminalReward = Arc<dyn Fn(&StateView<'_>) -> f64 + Send + Sync>;

/// Running reward `B(x, b)`, terminal reward `V0(x)`, their declared
/// Lipschitz constant `K_B` and sup bound `||B||_inf`.
#[derive(Clone)]
pub struct RewardModel {
    running: RunningReward,
    terminal: TerminalReward,
    lipschitz: f64,
    sup: f64,
}

impl fmt::Debug for RewardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardModel")
            .field("lipschitz", &self.lipschitz)
            .field("sup", &self.sup)
            .finish_non_exhaustive()
    }
}

impl RewardModel {
    pub fn new(running: RunningReward, terminal: TerminalReward, lipschitz: f64, sup: f64) -> Self {
        RewardModel {
            running,
            terminal,
            lipschitz,
            sup,
        }
    }

    /// Rewards depending on the state only through `m(x)`.
    pub fn norm_based(
        running: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        sup: f64,
    ) -> Self {
        RewardModel::new(
            Arc::new(move |x, b| running(x.m(), b.value())),
            Arc::new(move |x| terminal(x.m())),
            lipschitz,
            sup,
        )
    }

    /// `B = 0` and `V0 = V0(m)`.
    pub fn terminal_norm(terminal: impl Fn(f64) -> f64 + Send + Sync + 'static, lipschitz: f64, sup: f64) -> Self {
        RewardModel::norm_based(|_, _| 0.0, terminal, lipschitz, sup)
    }

    pub fn from_spec(spec: &RewardSpec) -> Result<Self> {
        let running = ScalarExpr::parse(&spec.running, &["m", "b"])?;
        let terminal = ScalarExpr::parse(&spec.terminal, &["m"])?;
        Ok(RewardModel::norm_based(
            move |m, b| running.eval(&[m, b]),
            move |m| terminal.eval(&[m]),
            spec.lipschitz,
            spec.sup,
        ))
    }

    pub fn running(&self, x: &StateView<'_>, b: ControlPoint) -> f64 {
        (self.running)(x, b)
    }

    pub fn terminal(&self, x: &StateView<'_>) -> f64 {
        (self.terminal)(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// Multiplies both rewards and the declared constants by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let running = self.running.clone();
        let terminal = self.terminal.clone();
        RewardModel {
            running: Arc::new(move |x, b| factor * running(x, b)),
            terminal: Arc::new(move |x| factor * terminal(x)),
            lipschitz: factor * self.lipschitz,
            sup: factor * self.sup,
        }
    }

    /// Spot-checks `|B|, |V0| <= ||B||_inf` on sample states and controls.
    pub fn check_bounds(&self, states: &[&[f64]], controls: &[ControlPoint]) -> Result<()> {
        for x in states {
            let v = StateView::dense(x);
            let t = self.terminal(&v);
            if !(t.abs() <= self.sup * (1.0 + 1e-12)) {
                return Err(Error::InvalidReward(format!(
                    "|V0| = {} exceeds the bound {}",
                    t.abs(),
                    self.sup
                )));
            }
            for &b in controls {
                let r = self.running(&v, b);
                if !(r.abs() <= self.sup * (1.0 + 1e-12)) {
                    return Err(Error::InvalidReward(format!(
                        "|B| = {} exceeds the bound {}",
                        r.abs(),
                        self.sup
                    )));
                }
            }
        }
        Ok(())
    }
}

/// JSON reward description: `B` in `m, b`, `V0` in `m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(rename = "B")]
    pub running: String,
    #[serde(rename = "V0")]
    pub terminal: String,
    #[serde(rename = "K_B")]
    pub lipschitz: f64,
    #[serde(rename = "Binf")]
    pub sup: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing_and_bounds() {
        let spec: RewardSpec = serde_json::from_str(r#"{"B":"0.5*b","V0":"-(m-1)^2","K_B":4,"Binf":4}"#).unwrap();
        let r = RewardModel::from_spec(&spec).unwrap();
        let x = [2.0, 0.0];
        let v = StateView::dense(&x);
        assert_eq!(r.terminal(&v), -1.0);
        assert_eq!(r.running(&v, ControlPoint::MERGE_ONLY), 0.5);
        assert!(r.check_bounds(&[&x], &[ControlPoint::MERGE_ONLY]).is_ok());
        let far = [4.0];
        assert!(matches!(r.check_bounds(&[&far], &[]), Err(Error::InvalidReward(_))));
    }

    #[test]
    fn bad_expression_is_reported() {
        let spec = RewardSpec {
            running: "b".into(),
            terminal: "x".into(),
            lipschitz: 1.0,
            sup: 1.0,
        };
        assert!(matches!(RewardModel::from_spec(&spec), Err(Error::Expression { .. })));
    }
}
