//! The norm-reduced control problem `m' = -b m^2 + (1 - b) m` and its
//! generalization `m' = -b f_C(m) m^2 + (1 - b) f_B(m) m`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ActionFunction;
use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::kernels::{ControlPoint, ScalarFn};

fn check_control(b: f64) -> Result<()> {
    if (0.0..=1.0).contains(&b) {
        Ok(())
    } else {
        Err(Error::ControlOutOfRange(b))
    }
}

/// `m(t, m0, b)`, the logistic solution of `m' = -b m^2 + (1 - b) m`.
pub fn m_flow(t: f64, m0: f64, b: f64) -> Result<f64> {
    check_control(b)?;
    if !(t >= 0.0 && m0 >= 0.0) {
        return Err(Error::config(format!(
            "m_flow needs t >= 0 and m0 >= 0, got t={t}, m0={m0}"
        )));
    }
    if b == 1.0 {
        return Ok(m0 / (1.0 + t * m0));
    }
    let r = 1.0 - b;
    Ok(m0 * r * (r * t).exp() / (r + m0 * b * (r * t).exp_m1()))
}

/// The constant control reaching `m*` at time `T` from `m0`, by bisection on
/// the strictly decreasing map `b -> m(T, m0, b)`.
pub fn bstar(horizon: f64, m0: f64, mstar: f64) -> Result<f64> {
    let top = m_flow(horizon, m0, 0.0)?;
    let bottom = m_flow(horizon, m0, 1.0)?;
    let unreachable = |suggested| Error::Unreachable {
        m0,
        target: mstar,
        horizon,
        suggested,
    };
    if mstar > top {
        return Err(unreachable(0.0));
    }
    if mstar < bottom {
        return Err(unreachable(1.0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if m_flow(horizon, m0, mid)? > mstar {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = |b: f64| m_flow(horizon, m0, b).map(|m| (m - mstar).abs());
    Ok(if residual(lo)? <= residual(hi)? { lo } else { hi })
}

/// Terminal reward `V0(m)` with its maximizer `m*`.
#[derive(Clone)]
pub struct TerminalSpec {
    mstar: f64,
    v0: ScalarFn,
}

impl fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalSpec")
            .field("mstar", &self.mstar)
            .finish_non_exhaustive()
    }
}

const CONCAVITY_SAMPLES: usize = 257;

impl TerminalSpec {
    /// Spot-checks on `[0, radius]` that `m*` maximizes `V0` and that `V0` is
    /// strictly concave on consecutive sample triples.
    pub fn new(mstar: f64, v0: ScalarFn, radius: f64) -> Result<Self> {
        if !(mstar.is_finite() && mstar > 0.0) {
            return Err(Error::InvalidReward(format!("m* must be positive, got {mstar}")));
        }
        let top = v0(mstar);
        let grid: Vec<f64> = (0..CONCAVITY_SAMPLES)
            .map(|k| radius * k as f64 / (CONCAVITY_SAMPLES - 1) as f64)
            .collect();
        let values: Vec<f64> = grid.iter().map(|&m| v0(m)).collect();
        if let Some((m, v)) = grid
            .iter()
            .zip(&values)
            .find(|(_, v)| **v > top + 1e-12 * top.abs().max(1.0))
        {
            return Err(Error::InvalidReward(format!("V0({m}) = {v} exceeds V0(m*) = {top}")));
        }
        for w in values.windows(3) {
            if !(w[1] > 0.5 * (w[0] + w[2])) {
                return Err(Error::InvalidReward(
                    "V0 is not strictly concave on the sample grid".into(),
                ));
            }
        }
        Ok(TerminalSpec { mstar, v0 })
    }

    /// `V0(m) = -(m - m*)^2`.
    pub fn quadratic(mstar: f64) -> Result<Self> {
        TerminalSpec::new(
            mstar,
            Arc::new(move |m| -(m - mstar) * (m - mstar)),
            4.0 * mstar.max(1.0),
        )
    }

    pub fn from_expr(source: &str, mstar: f64, radius: f64) -> Result<Self> {
        let e = ScalarExpr::parse(source, &["m"])?;
        TerminalSpec::new(mstar, Arc::new(move |m| e.eval(&[m])), radius)
    }

    pub fn mstar(&self) -> f64 {
        self.mstar
    }

    pub fn v0(&self, m: f64) -> f64 {
        (self.v0)(m)
    }

    pub fn function(&self) -> ScalarFn {
        self.v0.clone()
    }
}

/// Band `[m* e^{-s}, m*/(1 - s m*)]` of norms from which `m*` is reachable
/// in time `s`; the upper end is `+inf` once `s m* >= 1`.
pub fn reachable_band(horizon_to_go: f64, mstar: f64) -> (f64, f64) {
    let lo = mstar * (-horizon_to_go).exp();
    let hi = if horizon_to_go * mstar >= 1.0 {
        f64::INFINITY
    } else {
        mstar / (1.0 - horizon_to_go * mstar)
    };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Below the band: pure splitting, `b = 0`.
    Below,
    /// Inside the band: `b = b*`, landing exactly on `m*`.
    Band,
    /// Above the band: pure merging, `b = 1`.
    Above,
}

#[derive(Debug, Clone)]
pub struct OptimalAction {
    pub branch: Branch,
    pub b: ControlPoint,
    /// Constant action on `[0, T - t]`, in time relative to the decision.
    pub action: ActionFunction,
}

/// Optimal constant control at time `0` with horizon `T`.
pub fn optimal_action(m0: f64, horizon: f64, spec: &TerminalSpec) -> Result<OptimalAction> {
    optimal_action_at(0.0, m0, horizon, spec)
}

/// Optimal constant control for the remaining horizon `T - t` from norm `m`.
pub fn optimal_action_at(t: f64, m: f64, horizon: f64, spec: &TerminalSpec) -> Result<OptimalAction> {
    let to_go = horizon - t;
    if !(to_go > 0.0) {
        return Err(Error::config(format!(
            "decision time {t} is not before the horizon {horizon}"
        )));
    }
    let (lo, hi) = reachable_band(to_go, spec.mstar());
    let (branch, b) = if m < lo {
        (Branch::Below, 0.0)
    } else if m > hi {
        (Branch::Above, 1.0)
    } else {
        (Branch::Band, bstar(to_go, m, spec.mstar())?)
    };
    let b = ControlPoint::new(b)?;
    Ok(OptimalAction {
        branch,
        b,
        action: ActionFunction::constant(b, to_go)?,
    })
}

/// `V(t, m)`: `V0(m e^{T-t})` below the band, `V0(m*)` inside it and
/// `V0(m / (1 + (T - t) m))` above it.
pub fn value_closed_form(t: f64, m: f64, horizon: f64, spec: &TerminalSpec) -> f64 {
    let to_go = horizon - t;
    if to_go <= 0.0 {
        return spec.v0(m);
    }
    let (lo, hi) = reachable_band(to_go, spec.mstar());
    if m < lo {
        spec.v0(m * to_go.exp())
    } else if m <= hi {
        spec.v0(spec.mstar())
    } else {
        spec.v0(m / (1.0 + to_go * m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HjbScheme {
    /// Backward characteristics with linear interpolation; unconditionally
    /// stable.
    #[default]
    SemiLagrangian,
    /// First-order upwind differences with explicit Euler; refuses steps
    /// above the CFL bound.
    Upwind,
}

pub type RunningFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// One-dimensional HJB problem on `[0, m_max] x [0, T]`.
#[derive(Clone)]
pub struct GridProblem {
    pub f_c: ScalarFn,
    pub f_b: ScalarFn,
    pub terminal: ScalarFn,
    pub running: RunningFn,
    pub horizon: f64,
    pub m_max: f64,
    pub m_points: usize,
    pub b_points: usize,
    pub dt: f64,
    pub scheme: HjbScheme,
}

impl fmt::Debug for GridProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridProblem")
            .field("horizon", &self.horizon)
            .field("m_max", &self.m_max)
            .field("m_points", &self.m_points)
            .field("b_points", &self.b_points)
            .field("dt", &self.dt)
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl GridProblem {
    /// Constant factors `f_C = f_B = 1`, no running reward.
    pub fn logistic(terminal: ScalarFn, horizon: f64, m_max: f64, m_points: usize, b_points: usize, dt: f64) -> Self {
        GridProblem {
            f_c: Arc::new(|_| 1.0),
            f_b: Arc::new(|_| 1.0),
            terminal,
            running: Arc::new(|_, _| 0.0),
            horizon,
            m_max,
            m_points,
            b_points,
            dt,
            scheme: HjbScheme::SemiLagrangian,
        }
    }

    pub fn velocity(&self, m: f64, b: f64) -> f64 {
        -b * (self.f_c)(m) * m * m + (1.0 - b) * (self.f_b)(m) * m
    }

    fn foot(&self, m: f64, b: f64, dt: f64) -> f64 {
        const SUBSTEPS: usize = 4;
        let h = dt / SUBSTEPS as f64;
        let mut y = m;
        for _ in 0..SUBSTEPS {
            let k1 = self.velocity(y, b);
            let k2 = self.velocity(y + 0.5 * h * k1, b);
            let k3 = self.velocity(y + 0.5 * h * k2, b);
            let k4 = self.velocity(y + h * k3, b);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSolution {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub b: Vec<f64>,
    /// `values[i][j] = u(t_i, m_j)`.
    pub values: Vec<Vec<f64>>,
    /// `actions[i][j]`: maximizing control on `[t_i, t_{i+1})` at `m_j`.
    pub actions: Vec<Vec<f64>>,
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[last] {
        return values[last];
    }
    let dm = grid[1] - grid[0];
    let i = (((x - grid[0]) / dm) as usize).min(last - 1);
    let w = (x - grid[i]) / dm;
    values[i] + w * (values[i + 1] - values[i])
}

impl GridSolution {
    /// `u(t_i, m)` by linear interpolation in `m`.
    pub fn value(&self, time_index: usize, m: f64) -> f64 {
        interpolate(&self.m, &self.values[time_index], m)
    }
}

/// Solves `u_t + max_b { v(m, b) u_m + B(m, b) } = 0`, `u(T) = V0`, backward
/// in time. Ties in the control maximization go to the smallest `b`.
pub fn grid_dp_generalized(problem: &GridProblem) -> Result<GridSolution> {
    if problem.m_points < 2 || problem.b_points < 1 {
        return Err(Error::config(
            "grid DP needs at least two norm points and one control point",
        ));
    }
    if !(problem.dt > 0.0 && problem.horizon >= 0.0 && problem.m_max > 0.0) {
        return Err(Error::config("grid DP needs dt > 0, T >= 0 and m_max > 0"));
    }
    let dm = problem.m_max / (problem.m_points - 1) as f64;
    let m: Vec<f64> = (0..problem.m_points).map(|j| j as f64 * dm).collect();
    let b: Vec<f64> = (0..problem.b_points)
        .map(|k| {
            if problem.b_points == 1 {
                0.0
            } else {
                k as f64 / (problem.b_points - 1) as f64
            }
        })
        .collect();
    let steps = ((problem.horizon / problem.dt) - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps == 0 {
        0.0
    } else {
        problem.horizon / steps as f64
    };
    if problem.scheme == HjbScheme::Upwind {
        let vmax = m
            .iter()
            .flat_map(|&mj| b.iter().map(move |&bk| (mj, bk)))
            .map(|(mj, bk)| problem.velocity(mj, bk).abs())
            .fold(0.0, f64::max);
        let required = if vmax > 0.0 { dm / vmax } else { f64::INFINITY };
        if dt > required {
            return Err(Error::Cfl { dt, required });
        }
    }

    let mut values = vec![Vec::new(); steps + 1];
    let mut actions = vec![Vec::new(); steps];
    values[steps] = m.iter().map(|&mj| (problem.terminal)(mj)).collect();
    for i in (0..steps).rev() {
        let next = &values[i + 1];
        let mut u = vec![f64::NEG_INFINITY; m.len()];
        let mut a = vec![0.0; m.len()];
        for (j, &mj) in m.iter().enumerate() {
            for &bk in &b {
                let q = match problem.scheme {
                    HjbScheme::SemiLagrangian => {
                        dt * (problem.running)(mj, bk) + interpolate(&m, next, problem.foot(mj, bk, dt))
                    }
                    HjbScheme::Upwind => {
                        let v = problem.velocity(mj, bk);
                        let slope = if v > 0.0 {
                            if j + 1 < m.len() {
                                (next[j + 1] - next[j]) / dm
                            } else {
                                (next[j] - next[j - 1]) / dm
                            }
                        } else if j > 0 {
                            (next[j] - next[j - 1]) / dm
                        } else {
                            (next[1] - next[0]) / dm
                        };
                        next[j] + dt * (v * slope + (problem.running)(mj, bk))
                    }
                };
                if q > u[j] {
                    u[j] = q;
                    a[j] = bk;
                }
            }
        }
        values[i] = u;
        actions[i] = a;
    }
    Ok(GridSolution {
        times: (0..=steps).map(|i| i as f64 * dt).collect(),
        m,
        b,
        values,
        actions,
    })
}
