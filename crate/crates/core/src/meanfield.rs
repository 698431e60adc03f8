//! Truncated Smoluchowski system: vector field, fixed-step integration with
//! reward quadrature, and the limit generator.

use serde::{Deserialize, Serialize};

use crate::composition::{MeanFieldState, StateView};
use crate::control::{ActionFunction, RewardModel};
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical fixed-step fourth-order Runge-Kutta.
    #[default]
    Rk4,
}

fn default_clip_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeConfig {
    pub k_max: usize,
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Total clipped mass that aborts an integration.
    #[serde(default = "default_clip_tolerance")]
    pub clip_tolerance: f64,
}

impl OdeConfig {
    pub fn new(k_max: usize, dt: f64) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::config("truncation index K_max must be at least 1"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config(format!("integrator step must be positive, got {dt}")));
        }
        Ok(OdeConfig {
            k_max,
            dt,
            scheme: Scheme::Rk4,
            clip_tolerance: default_clip_tolerance(),
        })
    }

    /// Four times the largest occupied size of `x0`.
    pub fn for_state(x0: &[f64], dt: f64) -> Result<Self> {
        let largest = x0.iter().rposition(|v| *v != 0.0).map_or(1, |p| p + 1);
        OdeConfig::new(4 * largest, dt)
    }
}

/// Evaluates `f(x, b)` for sizes `1..=K_max` and returns it with the
/// truncation leak, the rate at which mass leaves through merges whose
/// product exceeds `K_max`.
///
/// The loss and split-gain terms use `C_ij + C_ji` and `F_{i,j} + F_{i,i-j}`,
/// which reduce to the doubled symmetric forms for symmetric kernels.
pub fn smoluchowski_rhs(x: &[f64], kernel: &dyn RateKernel, b: ControlPoint) -> (Vec<f64>, f64) {
    let k_max = x.len();
    let view = StateView::dense(x);
    let support: Vec<usize> = (1..=k_max).filter(|&k| x[k - 1] != 0.0).collect();
    let mut f = vec![0.0; k_max];
    let mut leak = 0.0;
    for &i in &support {
        let xi = x[i - 1];
        for &j in &support {
            let r = kernel.coagulation(i, j, &view, b) * xi * x[j - 1];
            f[i - 1] -= r;
            f[j - 1] -= r;
            if i + j <= k_max {
                f[i + j - 1] += r;
            } else {
                leak += (i + j) as f64 * r;
            }
        }
        for j in 1..i {
            let r = kernel.split_rate(i, j, &view, b) * xi;
            f[i - 1] -= r;
            f[j - 1] += r;
            f[i - j - 1] += r;
        }
    }
    (f, leak)
}

/// `sum_k k f_k(x, b)`; zero up to rounding unless truncation bites.
pub fn mass_drift(x: &[f64], kernel: &dyn RateKernel, b: ControlPoint) -> f64 {
    signed_mass(&smoluchowski_rhs(x, kernel, b).0)
}

fn signed_mass(f: &[f64]) -> f64 {
    f.iter().enumerate().map(|(idx, v)| (idx + 1) as f64 * v).sum()
}

/// `Lambda_b G(x) = sum_i f_i(x, b) dG/dx_i`, with `grad(x, i)` the
/// derivative along the 1-based size `i`.
pub fn generator_apply(
    grad: impl Fn(&[f64], usize) -> f64,
    x: &[f64],
    kernel: &dyn RateKernel,
    b: ControlPoint,
) -> f64 {
    let (f, _) = smoluchowski_rhs(x, kernel, b);
    f.iter().enumerate().map(|(k, fk)| fk * grad(x, k + 1)).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `int_0^T B(X(s), alpha(s)) ds`.
    pub reward_integral: f64,
    /// Mass removed by clipping negative components.
    pub clipped_mass: f64,
    /// Mass lost through the truncation boundary.
    pub leaked_mass: f64,
}

impl OdePath {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("path has a start")
    }

    /// Linear interpolation between grid times; clamps outside the path.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let hi = self.times.partition_point(|&s| s < t);
        if hi == 0 {
            return self.states[0].clone();
        }
        if hi >= self.times.len() {
            return self.terminal().to_vec();
        }
        let (t0, t1) = (self.times[hi - 1], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        self.states[hi - 1]
            .iter()
            .zip(&self.states[hi])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Integrates `X' = f(X, alpha(t))` on `[0, T]` with fixed RK4 steps that
/// never straddle a piece boundary of `alpha`, accumulating the running
/// reward with the same stages.
pub fn integrate(
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    alpha: &ActionFunction,
    horizon: f64,
    cfg: &OdeConfig,
    reward: Option<&RewardModel>,
) -> Result<OdePath> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::config(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    let mut x = MeanFieldState::with_k_max(x0.as_slice().to_vec(), cfg.k_max)?.into_vec();
    let mut bounds = vec![0.0];
    bounds.extend(alpha.breakpoints().into_iter().filter(|&t| t > 0.0 && t < horizon));
    bounds.push(horizon);

    let stage = |x: &[f64], b: ControlPoint| {
        let (f, leak) = smoluchowski_rhs(x, kernel, b);
        let r = reward.map_or(0.0, |r| r.running(&StateView::dense(x), b));
        (f, leak, r)
    };
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut reward_integral = 0.0;
    let mut clipped_mass = 0.0;
    let mut leaked_mass = 0.0;
    for seg in bounds.windows(2) {
        let (a, c) = (seg[0], seg[1]);
        if c <= a {
            continue;
        }
        let piece = alpha.pieces()[alpha.piece_index(a)];
        let control = |t: f64| ControlPoint::new(piece.value_at(t).clamp(0.0, 1.0)).expect("clamped control");
        let n = ((c - a) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let h = (c - a) / n as f64;
        for s in 0..n {
            let t = a + s as f64 * h;
            let (b_start, b_mid, b_end) = (control(t), control(t + 0.5 * h), control(t + h));
            let (k1, l1, r1) = stage(&x, b_start);
            let (k2, l2, r2) = stage(&axpy(&x, 0.5 * h, &k1), b_mid);
            let (k3, l3, r3) = stage(&axpy(&x, 0.5 * h, &k2), b_mid);
            let (k4, l4, r4) = stage(&axpy(&x, h, &k3), b_end);
            for (idx, xi) in x.iter_mut().enumerate() {
                *xi += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
            reward_integral += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
            leaked_mass += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            for (idx, xi) in x.iter_mut().enumerate() {
                if *xi < 0.0 {
                    clipped_mass += (idx + 1) as f64 * -*xi;
                    *xi = 0.0;
                }
            }
            if clipped_mass > cfg.clip_tolerance {
                return Err(Error::Instability(format!(
                    "clipped mass {clipped_mass:.3e} exceeds {:.1e} by t = {:.4}; reduce dt (currently {})",
                    cfg.clip_tolerance,
                    t + h,
                    cfg.dt
                )));
            }
            times.push(if s + 1 == n { c } else { t + h });
            states.push(x.clone());
        }
    }
    Ok(OdePath {
        times,
        states,
        reward_integral,
        clipped_mass,
        leaked_mass,
    })
}

/// `v_alpha(x0) = int_0^T B(X(s), alpha(s)) ds + V0(X(T))`.
pub fn value_deterministic(
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    alpha: &ActionFunction,
    horizon: f64,
    reward: &RewardModel,
    cfg: &OdeConfig,
) -> Result<f64> {
    let path = integrate(x0, kernel, alpha, horizon, cfg, Some(reward))?;
    Ok(path.reward_integral + reward.terminal(&StateView::dense(path.terminal())))
}

/// `m(X(T))` under the constant control `b`.
pub fn terminal_norm(
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    b: ControlPoint,
    horizon: f64,
    cfg: &OdeConfig,
) -> Result<f64> {
    let alpha = ActionFunction::constant(b, horizon.max(f64::MIN_POSITIVE))?;
    let path = integrate(x0, kernel, &alpha, horizon, cfg, None)?;
    Ok(path.terminal().iter().sum())
}

/// Constant control steering the full system to `m(X(T)) = target`, by
/// bisection assuming `m(X(T))` decreases in `b`.
pub fn constant_control_for_target(
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    horizon: f64,
    target: f64,
    cfg: &OdeConfig,
) -> Result<f64> {
    let at = |b: f64| terminal_norm(x0, kernel, ControlPoint::new(b)?, horizon, cfg);
    let (top, bottom) = (at(0.0)?, at(1.0)?);
    let unreachable = |suggested| Error::Unreachable {
        m0: x0.m(),
        target,
        horizon,
        suggested,
    };
    if target > top {
        return Err(unreachable(0.0));
    }
    if target < bottom {
        return Err(unreachable(1.0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{l2_distance, mass_norm};
    use crate::kernels::{constant_example_kernel, norm_dependent_kernel, KernelBounds};
    use proptest::prelude::*;

    fn cp(v: f64) -> ControlPoint {
        ControlPoint::new(v).unwrap()
    }

    fn unit_singletons(k_max: usize) -> MeanFieldState {
        MeanFieldState::with_k_max(vec![1.0], k_max).unwrap()
    }

    #[test]
    fn target_control_hits_target() {
        let k = constant_example_kernel();
        let x0 = MeanFieldState::with_k_max(vec![2.0], 64).unwrap();
        let cfg = OdeConfig::new(64, 1e-3).unwrap();
        let b = constant_control_for_target(&x0, &k, 1.0, 1.0, &cfg).unwrap();
        assert!((terminal_norm(&x0, &k, cp(b), 1.0, &cfg).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(
            constant_control_for_target(&x0, &k, 1.0, 5.0, &cfg),
            Err(Error::Unreachable { suggested, .. }) if suggested == 0.0
        ));
    }

    #[test]
    fn rhs_examples() {
        let k = constant_example_kernel();
        let (f, leak) = smoluchowski_rhs(&[0.0; 6], &k, cp(0.4));
        assert!(f.iter().all(|v| *v == 0.0) && leak == 0.0);
        let (f, _) = smoluchowski_rhs(&[1.0, 0.0, 0.0, 0.0], &k, cp(1.0));
        assert_eq!(f, vec![-2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncation_leak_is_reported() {
        let k = constant_example_kernel();
        let x = [0.0, 0.0, 0.5];
        let (f, leak) = smoluchowski_rhs(&x, &k, cp(1.0));
        assert!(leak > 0.0);
        assert!((signed_mass(&f) + leak).abs() < 1e-14);
        assert!(
            (mass_drift(
                &[0.5, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                &k,
                cp(0.3)
            ))
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn generator_examples() {
        let k = constant_example_kernel();
        let x = [0.3, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = cp(0.35);
        assert!(generator_apply(|_, i| i as f64, &x, &k, b).abs() < 1e-14);
        assert_eq!(generator_apply(|_, _| 0.0, &x, &k, b), 0.0);
        let (f, _) = smoluchowski_rhs(&x, &k, b);
        assert_eq!(generator_apply(|_, i| if i == 2 { 1.0 } else { 0.0 }, &x, &k, b), f[1]);
    }

    #[test]
    fn norm_flow_special_cases() {
        let k = constant_example_kernel();
        let cfg = OdeConfig::new(40, 1e-3).unwrap();
        let merge = ActionFunction::constant(cp(1.0), 1.0).unwrap();
        let path = integrate(&unit_singletons(40), &k, &merge, 1.0, &cfg, None).unwrap();
        let m: f64 = path.terminal().iter().sum();
        assert!((m - 0.5).abs() < 1e-8, "{m}");
        let split = ActionFunction::constant(cp(0.0), 1.0).unwrap();
        let path = integrate(&unit_singletons(40), &k, &split, 1.0, &cfg, None).unwrap();
        assert!((path.terminal().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let balanced = ActionFunction::constant(cp(0.5), 1.0).unwrap();
        let path = integrate(&unit_singletons(40), &k, &balanced, 1.0, &cfg, None).unwrap();
        for s in &path.states {
            assert!((mass_norm(s) - 1.0).abs() < 1e-9);
        }
        assert_eq!(path.clipped_mass, 0.0);
    }

    #[test]
    fn singletons_do_not_split() {
        let k = constant_example_kernel();
        let x = [0.6, 0.2, 0.0, 0.0, 0.0, 0.0];
        let (f, _) = smoluchowski_rhs(&x, &k, cp(0.0));
        let m: f64 = x.iter().sum();
        let total: f64 = f.iter().sum();
        assert!((total - (m - x[0])).abs() < 1e-15);
        assert!((total - m).abs() > 0.5);
    }

    #[test]
    fn values() {
        let k = constant_example_kernel();
        let cfg = OdeConfig::new(30, 1e-3).unwrap();
        let merge = ActionFunction::constant(cp(1.0), 1.0).unwrap();
        let sum = RewardModel::terminal_norm(|m| m, 1.0, 10.0);
        let v = value_deterministic(&unit_singletons(30), &k, &merge, 1.0, &sum, &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
        let one = RewardModel::norm_based(|_, _| 1.0, |_| 0.0, 0.0, 1.0);
        let two = ActionFunction::constant(cp(0.7), 2.0).unwrap();
        let v = value_deterministic(&unit_singletons(30), &k, &two, 2.0, &one, &cfg).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn steps_split_at_breakpoints() {
        let k = constant_example_kernel();
        let cfg = OdeConfig::new(20, 0.3).unwrap();
        let alpha = ActionFunction::staircase(&[cp(1.0), cp(0.0)], 0.5).unwrap();
        let path = integrate(&unit_singletons(20), &k, &alpha, 1.0, &cfg, None).unwrap();
        assert!(path.times.iter().any(|&t| t == 0.5));
        assert_eq!(*path.times.last().unwrap(), 1.0);
    }

    #[test]
    fn fourth_order_convergence() {
        let k = constant_example_kernel();
        let merge = ActionFunction::constant(cp(1.0), 1.0).unwrap();
        let err = |dt: f64| {
            let cfg = OdeConfig::new(40, dt).unwrap();
            let path = integrate(&unit_singletons(40), &k, &merge, 1.0, &cfg, None).unwrap();
            (path.terminal().iter().sum::<f64>() - 0.5).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 12.0 && ratio < 20.0, "{ratio}");
    }

    #[test]
    fn instability_is_reported() {
        let k = constant_example_kernel();
        let cfg = OdeConfig::new(8, 2.0).unwrap();
        let merge = ActionFunction::constant(cp(1.0), 4.0).unwrap();
        let x = MeanFieldState::new(vec![4.0]).unwrap();
        assert!(matches!(
            integrate(&x, &k, &merge, 4.0, &cfg, None),
            Err(Error::Instability(_))
        ));
    }

    fn random_state(raw: &[f64], radius: f64) -> Vec<f64> {
        let mass = mass_norm(raw);
        if mass == 0.0 {
            return raw.to_vec();
        }
        raw.iter().map(|v| v * radius / mass).collect()
    }

    proptest! {
        #[test]
        fn norm_drift_identity(raw in proptest::collection::vec(0.0f64..1.0, 1..8), b in 0.0f64..=1.0) {
            let mut x = random_state(&raw, 1.0);
            x.resize(2 * x.len() + 2, 0.0);
            let m: f64 = x.iter().sum();
            let (f, _) = smoluchowski_rhs(&x, &constant_example_kernel(), cp(b));
            let total: f64 = f.iter().sum();
            prop_assert!((total - (-b * m * m + (1.0 - b) * (m - x[0]))).abs() < 1e-12);
        }

        #[test]
        fn lipschitz_and_boundedness(
            raw_x in proptest::collection::vec(0.0f64..1.0, 6),
            raw_y in proptest::collection::vec(0.0f64..1.0, 6),
            b in 0.0f64..=1.0,
        ) {
            let k = norm_dependent_kernel(|m| 1.0 / (1.0 + m), |_| 1.0, KernelBounds::new(1.0, 1.0), 1.0).unwrap();
            let x = random_state(&raw_x, 1.0);
            let y = random_state(&raw_y, 0.7);
            let (fx, _) = smoluchowski_rhs(&x, &constant_example_kernel(), cp(b));
            let (fy, _) = smoluchowski_rhs(&y, &constant_example_kernel(), cp(b));
            let big_k = 9.0;
            prop_assert!(l2_distance(&fx, &fy) <= big_k * l2_distance(&x, &y) + 1e-12);
            let zero = vec![0.0; 6];
            let (gx, _) = smoluchowski_rhs(&x, &k, cp(b));
            prop_assert!(l2_distance(&fx, &zero) <= 6.0 + 1e-12);
            prop_assert!(l2_distance(&gx, &zero) <= 6.0 + 1e-12);
        }
    }
}
