//! Explicit error-bound constants and scaling-assumption checks.

use serde::{Deserialize, Serialize};

use crate::control::step_count;
use crate::error::{Error, Result};
use crate::kernels::KernelBounds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub h: f64,
    pub tau: f64,
    #[serde(rename = "N")]
    pub players: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub kernel: KernelBounds,
    #[serde(rename = "K_B", default)]
    pub k_b: f64,
    #[serde(rename = "Binf", default)]
    pub b_inf: f64,
    #[serde(rename = "K_alpha", default)]
    pub k_alpha: f64,
    /// Number of discontinuities of the action function.
    #[serde(default)]
    pub p: usize,
    /// `||alpha||_inf = sup_t |alpha(t)|`.
    #[serde(default)]
    pub alpha_sup: f64,
    /// Initial-condition distance `delta = ||x(h) - x0||`.
    #[serde(default)]
    pub delta: f64,
}

impl ScalingConfig {
    pub fn new(h: f64, tau: f64, players: f64, horizon: f64, radius: f64, kernel: KernelBounds) -> Self {
        ScalingConfig {
            h,
            tau,
            players,
            horizon,
            radius,
            kernel,
            k_b: 0.0,
            b_inf: 0.0,
            k_alpha: 0.0,
            p: 0,
            alpha_sup: 0.0,
            delta: 0.0,
        }
    }

    pub fn with_reward(mut self, k_b: f64, b_inf: f64) -> Self {
        self.k_b = k_b;
        self.b_inf = b_inf;
        self
    }

    pub fn with_action(mut self, k_alpha: f64, p: usize, alpha_sup: f64) -> Self {
        self.k_alpha = k_alpha;
        self.p = p;
        self.alpha_sup = alpha_sup;
        self
    }

    /// `n(h) = floor(T / tau)`.
    pub fn steps(&self) -> usize {
        step_count(self.horizon, self.tau)
    }

    /// Checks positivity and `h N <= R`.
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.tau >= 0.0 && self.players >= 1.0 && self.horizon >= 0.0 && self.radius > 0.0) {
            return Err(Error::config(format!(
                "scaling needs h > 0, tau >= 0, N >= 1, T >= 0 and R > 0: {self:?}"
            )));
        }
        if self.h * self.players > self.radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBall {
                mass: self.h * self.players,
                radius: self.radius,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsLedger {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "I0_prime")]
    pub i0_prime: f64,
    #[serde(rename = "B_prime")]
    pub b_prime: f64,
    pub s_h: f64,
    /// Set when some entry overflowed to `+inf`.
    pub overflow: bool,
}

fn b_bound(cfg: &ScalingConfig, i0: f64, i1: f64, l1: f64, j: f64) -> f64 {
    let t = cfg.horizon;
    let e = (l1 * t).exp();
    let growth = if l1 == 0.0 { t } else { (l1 * t).exp_m1() / l1 };
    let bracket = e + (e - 1.0 + cfg.tau / 2.0) / l1;
    cfg.tau * cfg.b_inf
        + cfg.k_b * 2f64.sqrt() * i1
        + cfg.k_b * (cfg.delta + i0 * t) * (e + growth)
        + 3.0 / 2f64.cbrt()
            * bracket.powf(2.0 / 3.0)
            * cfg.k_b.powf(2.0 / 3.0)
            * cfg.b_inf.cbrt()
            * j.cbrt()
            * (t + 1.0).powf(2.0 / 3.0)
}

/// Evaluates every constant literally. Entries that overflow become `+inf`
/// and set the `overflow` flag.
pub fn compute_ledger(cfg: &ScalingConfig) -> BoundsLedger {
    let KernelBounds { c, f, c1, f1, c2, .. } = cfg.kernel;
    let r = cfg.radius;
    let (h, tau, n, t) = (cfg.h, cfg.tau, cfg.players, cfg.horizon);
    let k = 6.0 * c * r + 3.0 * f + 3.0 * r * (c1 * r + f1);
    let l2 = 3.0 * c * r * r + 3.0 * f * r;
    let m2 = 3.0 * (c1 * r * r + 2.0 * c * r + f1 * r + f);
    let r1 = 3.0 * (c * r * r + f * r) * (6.0 * c * r + 3.0 * f + 3.0 * c1 * r * r + f1 * r);
    let r2 = 54.0 * (c * r * r + f * r) * (c + f1 + c1 * r + f1 * r + c2 * r * r);
    let rate = c * r * r + f;
    let i0 = n.sqrt() * tau / 2.0 * (r1 + h * r2);
    let i1 = tau * rate;
    let i2 = rate * (tau * rate + h);
    let l1 = k * (m2 * n.sqrt() * tau).exp();
    let j = 8.0 * t * (l1 * l1 * (i2 * tau * tau + i1 * i1 * (t + tau)) + n * n * (2.0 * i2 + tau * l2 * l2));
    let b = b_bound(cfg, i0, i1, l1, j);
    let switching = if tau > 0.0 {
        (1.0 / tau).min(cfg.p as f64)
    } else {
        cfg.p as f64
    };
    let i0_prime = i0 + tau * k * ((k - l1) * t).exp() * (cfg.k_alpha / 2.0 + 2.0 * (1.0 + switching) * cfg.alpha_sup);
    let b_prime = b_bound(cfg, i0_prime, i1, l1, j);
    let s_h = rate / h;
    let mut ledger = BoundsLedger {
        k,
        l2,
        m2,
        r1,
        r2,
        i0,
        i1,
        i2,
        l1,
        j,
        b,
        i0_prime,
        b_prime,
        s_h,
        overflow: false,
    };
    for v in [
        &mut ledger.k,
        &mut ledger.l2,
        &mut ledger.m2,
        &mut ledger.r1,
        &mut ledger.r2,
        &mut ledger.i0,
        &mut ledger.i1,
        &mut ledger.i2,
        &mut ledger.l1,
        &mut ledger.j,
        &mut ledger.b,
        &mut ledger.i0_prime,
        &mut ledger.b_prime,
        &mut ledger.s_h,
    ] {
        if !v.is_finite() {
            *v = f64::INFINITY;
            ledger.overflow = true;
        }
    }
    ledger
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub h: f64,
    pub h_n2: f64,
    pub tau_n2: f64,
    pub tau_sqrt_n: f64,
    /// Quantities that failed to decrease relative to the previous row.
    pub failures: Vec<String>,
}

impl ScalingRow {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(ScalingRow::passed)
    }
}

/// Checks that `h N^2`, `tau N^2` and `tau sqrt(N)` decrease along a
/// sequence ordered by decreasing `h`. A quantity that is already zero
/// passes. The first row is the reference and always passes.
pub fn validate_scaling(sequence: &[ScalingConfig]) -> Result<ScalingReport> {
    if sequence.windows(2).any(|w| w[1].h >= w[0].h) {
        return Err(Error::config(
            "scaling sequence must be ordered by strictly decreasing h",
        ));
    }
    let quantities = |c: &ScalingConfig| {
        [
            ("h N^2", c.h * c.players * c.players),
            ("tau N^2", c.tau * c.players * c.players),
            ("tau sqrt(N)", c.tau * c.players.sqrt()),
        ]
    };
    let mut rows = Vec::with_capacity(sequence.len());
    for (idx, cfg) in sequence.iter().enumerate() {
        let q = quantities(cfg);
        let failures = match idx.checked_sub(1) {
            None => Vec::new(),
            Some(prev) => q
                .iter()
                .zip(quantities(&sequence[prev]))
                .filter(|((_, now), (_, before))| *now > 0.0 && *now >= *before)
                .map(|((name, _), _)| name.to_string())
                .collect(),
        };
        rows.push(ScalingRow {
            h: cfg.h,
            h_n2: q[0].1,
            tau_n2: q[1].1,
            tau_sqrt_n: q[2].1,
            failures,
        });
    }
    Ok(ScalingReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> KernelBounds {
        KernelBounds::new(1.0, 1.0)
    }

    #[test]
    fn constant_kernel_constants() {
        let l = compute_ledger(&ScalingConfig::new(0.01, 0.001, 100.0, 1.0, 1.0, unit()));
        assert_eq!((l.k, l.l2, l.m2), (9.0, 6.0, 9.0));
        assert_eq!((l.r1, l.r2), (54.0, 108.0));
        assert_eq!(l.s_h, 200.0);
        assert!(!l.overflow);
    }

    #[test]
    fn zero_tau_limits() {
        let l = compute_ledger(&ScalingConfig::new(0.1, 0.0, 10.0, 1.0, 1.0, unit()));
        assert_eq!((l.i0, l.i1), (0.0, 0.0));
        assert!((l.i2 - 0.2).abs() < 1e-15);
        assert_eq!(l.l1, l.k);
    }

    #[test]
    fn overflow_is_flagged() {
        let l = compute_ledger(&ScalingConfig::new(1e-6, 10.0, 1e6, 5.0, 1.0, unit()).with_reward(1.0, 1.0));
        assert!(l.overflow);
        assert_eq!(l.l1, f64::INFINITY);
    }

    #[test]
    fn monotone_entries() {
        let base = ScalingConfig::new(0.05, 0.01, 20.0, 1.0, 1.0, unit()).with_reward(1.0, 1.0);
        let mut wider = base.clone();
        wider.tau = 0.02;
        assert!(compute_ledger(&wider).i1 > compute_ledger(&base).i1);
        let mut longer = base.clone();
        longer.horizon = 2.0;
        assert!(compute_ledger(&longer).j > compute_ledger(&base).j);
        let mut finer = base.clone();
        finer.h = 0.025;
        assert!(compute_ledger(&finer).s_h > compute_ledger(&base).s_h);
    }

    #[test]
    fn switching_term_uses_literal_min() {
        let base = ScalingConfig::new(0.05, 0.01, 1.0, 0.01, 1.0, unit());
        let smooth = compute_ledger(&base.clone().with_action(0.0, 0, 1.0));
        let jumpy = compute_ledger(&base.clone().with_action(0.0, 3, 1.0));
        let factor = (jumpy.i0_prime - smooth.i0_prime) / (smooth.i0_prime - smooth.i0);
        assert!((factor - 3.0).abs() < 1e-9);
        let capped = compute_ledger(&base.with_action(0.0, 1000, 1.0));
        let factor = (capped.i0_prime - smooth.i0_prime) / (smooth.i0_prime - smooth.i0);
        assert!((factor - 100.0).abs() < 1e-6);
    }

    #[test]
    fn validation_examples() {
        let seq = |tau: fn(f64) -> f64, players: fn(f64) -> f64| -> Vec<ScalingConfig> {
            (1..=6)
                .map(|k| {
                    let h = 2f64.powi(-k);
                    ScalingConfig::new(h, tau(h), players(h), 1.0, 1.0, unit())
                })
                .collect()
        };
        let cubic = validate_scaling(&seq(|h| h.powi(3), |h| 1.0 / h)).unwrap();
        assert!(cubic.rows[1..].iter().all(|r| r.failures == vec!["h N^2".to_string()]));
        let linear = validate_scaling(&seq(|h| h, |h| 1.0 / h)).unwrap();
        assert!(linear.rows[1].failures.contains(&"tau N^2".to_string()));
        let fixed = validate_scaling(&seq(|h| h, |_| 8.0)).unwrap();
        assert!(fixed.passed());
        assert!(validate_scaling(&[fixed_cfg(0.1), fixed_cfg(0.2)]).is_err());
    }

    fn fixed_cfg(h: f64) -> ScalingConfig {
        ScalingConfig::new(h, 0.01, 4.0, 1.0, 1.0, unit())
    }

    #[test]
    fn radius_check() {
        assert!(ScalingConfig::new(0.1, 0.01, 10.0, 1.0, 1.0, unit()).validate().is_ok());
        assert!(matches!(
            ScalingConfig::new(0.1, 0.01, 11.0, 1.0, 1.0, unit()).validate(),
            Err(Error::OutsideBall { .. })
        ));
    }
}
