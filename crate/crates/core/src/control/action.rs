//! Open-loop action functions `alpha: [0, T] -> E`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ControlPoint;

const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceShape {
    Const(f64),
    Linear { b0: f64, b1: f64 },
}

/// One Lipschitz piece on `[t0, t1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionPiece {
    pub t0: f64,
    pub t1: f64,
    pub shape: PieceShape,
}

impl ActionPiece {
    /// Value of the piece's formula at `t`, extended continuously to the
    /// closed interval.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.shape {
            PieceShape::Const(b) => b,
            PieceShape::Linear { b0, b1 } => {
                let s = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
                b0 + (b1 - b0) * s
            }
        }
    }

    fn start(&self) -> f64 {
        self.value_at(self.t0)
    }

    fn end(&self) -> f64 {
        self.value_at(self.t1)
    }

    fn slope(&self) -> f64 {
        match self.shape {
            PieceShape::Const(_) => 0.0,
            PieceShape::Linear { b0, b1 } => ((b1 - b0) / (self.t1 - self.t0)).abs(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PieceRepr {
    t0: f64,
    t1: f64,
    kind: PieceKind,
    b0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b1: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum PieceKind {
    Const,
    Linear,
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    pieces: Vec<PieceRepr>,
    #[serde(default)]
    lipschitz: Option<f64>,
    #[serde(default)]
    discontinuities: Option<usize>,
}

/// Piecewise Lipschitz action function with declared Lipschitz constant
/// `K_alpha` and discontinuity count `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActionRepr", into = "ActionRepr")]
pub struct ActionFunction {
    pieces: Vec<ActionPiece>,
    lipschitz: f64,
    discontinuities: usize,
}

impl TryFrom<ActionRepr> for ActionFunction {
    type Error = Error;

    fn try_from(repr: ActionRepr) -> Result<Self> {
        let pieces = repr
            .pieces
            .into_iter()
            .map(|p| {
                let shape = match (p.kind, p.b1) {
                    (PieceKind::Const, _) => PieceShape::Const(p.b0),
                    (PieceKind::Linear, Some(b1)) => PieceShape::Linear { b0: p.b0, b1 },
                    (PieceKind::Linear, None) => {
                        return Err(Error::InvalidAction("linear piece needs b1".into()));
                    }
                };
                Ok(ActionPiece {
                    t0: p.t0,
                    t1: p.t1,
                    shape,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ActionFunction::with_metadata(pieces, repr.lipschitz, repr.discontinuities)
    }
}

impl From<ActionFunction> for ActionRepr {
    fn from(a: ActionFunction) -> Self {
        ActionRepr {
            pieces: a
                .pieces
                .iter()
                .map(|p| match p.shape {
                    PieceShape::Const(b) => PieceRepr {
                        t0: p.t0,
                        t1: p.t1,
                        kind: PieceKind::Const,
                        b0: b,
                        b1: None,
                    },
                    PieceShape::Linear { b0, b1 } => PieceRepr {
                        t0: p.t0,
                        t1: p.t1,
                        kind: PieceKind::Linear,
                        b0,
                        b1: Some(b1),
                    },
                })
                .collect(),
            lipschitz: Some(a.lipschitz),
            discontinuities: Some(a.discontinuities),
        }
    }
}

impl ActionFunction {
    /// Validates coverage of `[0, T]` and the range, and derives `K_alpha`
    /// and `p` from the pieces.
    pub fn new(pieces: Vec<ActionPiece>) -> Result<Self> {
        Self::with_metadata(pieces, None, None)
    }

    /// As [`ActionFunction::new`], keeping caller-declared metadata. A
    /// declared Lipschitz constant below the steepest piece is rejected.
    pub fn with_metadata(
        pieces: Vec<ActionPiece>,
        lipschitz: Option<f64>,
        discontinuities: Option<usize>,
    ) -> Result<Self> {
        let first = pieces.first().ok_or_else(|| Error::InvalidAction("no pieces".into()))?;
        if first.t0.abs() > TIME_EPS {
            return Err(Error::InvalidAction(format!(
                "first piece starts at {} instead of 0",
                first.t0
            )));
        }
        for (idx, p) in pieces.iter().enumerate() {
            if !(p.t1 > p.t0) || !p.t1.is_finite() {
                return Err(Error::InvalidAction(format!(
                    "piece {idx} has empty interval [{}, {})",
                    p.t0, p.t1
                )));
            }
            for v in [p.start(), p.end()] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidAction(format!(
                        "piece {idx} leaves the control space: {v}"
                    )));
                }
            }
            if let Some(next) = pieces.get(idx + 1) {
                if (next.t0 - p.t1).abs() > TIME_EPS {
                    return Err(Error::InvalidAction(format!(
                        "pieces {idx} and {} leave a gap or overlap at t = {}",
                        idx + 1,
                        p.t1
                    )));
                }
            }
        }
        let steepest = pieces.iter().map(ActionPiece::slope).fold(0.0, f64::max);
        let jumps = pieces
            .windows(2)
            .filter(|w| (w[0].end() - w[1].start()).abs() > 0.0)
            .count();
        let lipschitz = match lipschitz {
            Some(k) if k + 1e-12 < steepest => {
                return Err(Error::InvalidAction(format!(
                    "declared Lipschitz constant {k} is below the steepest piece slope {steepest}"
                )));
            }
            Some(k) => k,
            None => steepest,
        };
        Ok(ActionFunction {
            pieces,
            lipschitz,
            discontinuities: discontinuities.unwrap_or(jumps),
        })
    }

    pub fn constant(b: ControlPoint, horizon: f64) -> Result<Self> {
        Self::new(vec![ActionPiece {
            t0: 0.0,
            t1: horizon,
            shape: PieceShape::Const(b.value()),
        }])
    }

    pub fn linear(b0: ControlPoint, b1: ControlPoint, horizon: f64) -> Result<Self> {
        Self::new(vec![ActionPiece {
            t0: 0.0,
            t1: horizon,
            shape: PieceShape::Linear {
                b0: b0.value(),
                b1: b1.value(),
            },
        }])
    }

    /// Staircase taking `levels[k]` on `[k step, (k+1) step)`.
    pub fn staircase(levels: &[ControlPoint], step: f64) -> Result<Self> {
        let pieces = levels
            .iter()
            .enumerate()
            .map(|(k, b)| ActionPiece {
                t0: k as f64 * step,
                t1: (k + 1) as f64 * step,
                shape: PieceShape::Const(b.value()),
            })
            .collect();
        Self::new(pieces)
    }

    pub fn pieces(&self) -> &[ActionPiece] {
        &self.pieces
    }

    pub fn horizon(&self) -> f64 {
        self.pieces.last().map(|p| p.t1).unwrap_or(0.0)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn discontinuities(&self) -> usize {
        self.discontinuities
    }

    /// `sup_t |alpha(t)|`, the distance from the reference point `0` of `E`.
    pub fn sup_norm(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.start().abs().max(p.end().abs()))
            .fold(0.0, f64::max)
    }

    /// Index of the piece containing `t`; pieces are left-closed and the
    /// last one also contains the horizon. Times outside `[0, T]` clamp.
    pub fn piece_index(&self, t: f64) -> usize {
        self.pieces.partition_point(|p| p.t1 <= t).min(self.pieces.len() - 1)
    }

    pub fn eval(&self, t: f64) -> ControlPoint {
        let p = &self.pieces[self.piece_index(t)];
        ControlPoint::new(p.value_at(t).clamp(0.0, 1.0)).expect("clamped control")
    }

    /// Interior piece boundaries in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.t0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(v: f64) -> ControlPoint {
        ControlPoint::new(v).unwrap()
    }

    #[test]
    fn left_closed_pieces() {
        let a = ActionFunction::staircase(&[cp(0.0), cp(1.0)], 0.5).unwrap();
        assert_eq!(a.eval(0.0).value(), 0.0);
        assert_eq!(a.eval(0.4999).value(), 0.0);
        assert_eq!(a.eval(0.5).value(), 1.0);
        assert_eq!(a.eval(1.0).value(), 1.0);
        assert_eq!(a.discontinuities(), 1);
        assert_eq!(a.breakpoints(), vec![0.5]);
    }

    #[test]
    fn linear_metadata() {
        let a = ActionFunction::linear(cp(0.0), cp(1.0), 2.0).unwrap();
        assert_eq!(a.lipschitz(), 0.5);
        assert_eq!(a.discontinuities(), 0);
        assert_eq!(a.eval(1.0).value(), 0.5);
        assert_eq!(a.sup_norm(), 1.0);
    }

    #[test]
    fn rejects_gaps_and_range_violations() {
        let gap = ActionFunction::new(vec![
            ActionPiece {
                t0: 0.0,
                t1: 0.4,
                shape: PieceShape::Const(0.1),
            },
            ActionPiece {
                t0: 0.5,
                t1: 1.0,
                shape: PieceShape::Const(0.1),
            },
        ]);
        assert!(matches!(gap, Err(Error::InvalidAction(_))));
        let out = ActionFunction::new(vec![ActionPiece {
            t0: 0.0,
            t1: 1.0,
            shape: PieceShape::Linear { b0: 0.5, b1: 1.5 },
        }]);
        assert!(out.is_err());
        let late = ActionFunction::new(vec![ActionPiece {
            t0: 0.1,
            t1: 1.0,
            shape: PieceShape::Const(0.5),
        }]);
        assert!(late.is_err());
    }

    #[test]
    fn json_shape() {
        let src = r#"{"pieces":[{"t0":0,"t1":0.5,"kind":"const","b0":0.2},
                                 {"t0":0.5,"t1":1,"kind":"linear","b0":0.2,"b1":0.8}],
                      "lipschitz":2.0,"discontinuities":0}"#;
        let a: ActionFunction = serde_json::from_str(src).unwrap();
        assert_eq!(a.lipschitz(), 2.0);
        assert!((a.eval(0.75).value() - 0.5).abs() < 1e-15);
        let back: ActionFunction = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        let too_small = r#"{"pieces":[{"t0":0,"t1":1,"kind":"linear","b0":0,"b1":1}],"lipschitz":0.5}"#;
        assert!(serde_json::from_str::<ActionFunction>(too_small).is_err());
    }
}
