//! Convergence experiments over a scaling sequence, emitted as long-format
//! CSV with a JSON sidecar.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{compute_ledger, validate_scaling, BoundsLedger, ScalingConfig, ScalingReport};
use crate::composition::{Composition, MeanFieldState};
use crate::control::{
    brute_force_feedback, construct_policy_from_limit, evaluate_policy, shapley_dp, value_mc, ActionFunction,
    DpProblem, McEstimate, RewardModel, RewardSpec, StateSpace,
};
use crate::coupling::{contraction_experiment, ContractionConfig, CouplingKind};
use crate::ctmc::{simulate_replicas, ControlSchedule, MergeConvention, SimConfig};
use crate::error::{Error, Result};
use crate::kernels::{uniform_grid, ControlPoint, KernelSpec, RateKernel};
use crate::meanfield::{constant_control_for_target, integrate, value_deterministic, OdeConfig};
use crate::reduced1d::{grid_dp_generalized, value_closed_form, GridProblem, TerminalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TrajectoryConvergence,
    ValueConvergence,
    DpCompare,
    Example1d,
    CouplingCheck,
    Bounds,
}

impl ExperimentKind {
    fn label(self) -> &'static str {
        match self {
            ExperimentKind::TrajectoryConvergence => "trajectory-convergence",
            ExperimentKind::ValueConvergence => "value-convergence",
            ExperimentKind::DpCompare => "dp-compare",
            ExperimentKind::Example1d => "example1d",
            ExperimentKind::CouplingCheck => "coupling-check",
            ExperimentKind::Bounds => "bounds",
        }
    }
}

fn constant_kernel() -> KernelSpec {
    KernelSpec::Constant
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> usize {
    10
}
fn default_replicas() -> usize {
    200
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_obs() -> usize {
    100
}
fn default_k_max() -> usize {
    64
}
fn default_ode_dt() -> f64 {
    1e-3
}
fn default_dp_max() -> u64 {
    12
}
fn default_grid() -> usize {
    11
}
fn default_m_points() -> usize {
    400
}
fn default_b_points() -> usize {
    64
}
fn default_hjb_dt() -> f64 {
    0.1
}
fn default_brute_cap() -> u128 {
    1_000_000
}

/// One experiment over the players sequence `N_1 < N_2 < ...` with
/// `h = m0 / N`, singleton initial states and `tau = T / steps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default = "constant_kernel")]
    pub kernel: KernelSpec,
    /// Defaults to `B = 0`, `V0 = -(m - m*)^2`.
    #[serde(default)]
    pub reward: Option<RewardSpec>,
    #[serde(default = "one")]
    pub mstar: f64,
    #[serde(default)]
    pub players: Vec<u64>,
    #[serde(default = "one")]
    pub m0: f64,
    /// Defaults to `m0`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "ten")]
    pub steps: usize,
    /// Constant control for trajectory and coupling experiments.
    #[serde(default = "half")]
    pub control: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_obs")]
    pub obs_points: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    #[serde(default = "default_dp_max")]
    pub dp_max_players: u64,
    #[serde(default = "default_grid")]
    pub control_grid: usize,
    #[serde(default = "default_brute_cap")]
    pub brute_cap: u128,
    /// Initial norms for the 1-D grid comparison.
    #[serde(default)]
    pub m_values: Vec<f64>,
    #[serde(default = "default_m_points")]
    pub m_points: usize,
    #[serde(default = "default_b_points")]
    pub b_points: usize,
    #[serde(default = "default_hjb_dt")]
    pub hjb_dt: f64,
    /// Upper end of the 1-D grid; defaults to one above the largest norm of interest.
    #[serde(default)]
    pub m_max: Option<f64>,
    #[serde(default)]
    pub convention: MergeConvention,
    /// Abort when the scaling sequence fails validation instead of warning.
    #[serde(default)]
    pub strict_scaling: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(self.m0)
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn reward_spec(&self) -> RewardSpec {
        self.reward.clone().unwrap_or_else(|| {
            let r = self.radius().max(self.mstar);
            RewardSpec {
                running: "0".into(),
                terminal: format!("-(m - {})^2", self.mstar),
                lipschitz: 2.0 * r,
                sup: r * r,
            }
        })
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::config("experiment needs steps >= 1 and a positive horizon"));
        }
        if !(self.m0 > 0.0) {
            return Err(Error::config("initial norm m0 must be positive"));
        }
        if self.kind != ExperimentKind::Example1d && self.players.is_empty() {
            return Err(Error::config("players sequence is empty"));
        }
        if self.players.windows(2).any(|w| w[1] <= w[0]) || self.players.contains(&0) {
            return Err(Error::config(
                "players sequence must be positive and strictly increasing",
            ));
        }
        if self.kind == ExperimentKind::TrajectoryConvergence && self.players.len() < 3 {
            return Err(Error::config(
                "trajectory convergence needs at least three configurations",
            ));
        }
        if self.replicas == 0 {
            return Err(Error::config("at least one replica is required"));
        }
        ControlPoint::new(self.control)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the spec.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// One long-format observation.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub players: u64,
    pub h: f64,
    pub tau: f64,
    /// Secondary coordinate: `m0` for the grid comparison, `s` for coupling.
    pub param: Option<f64>,
    pub quantity: String,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentTable {
    pub kind: ExperimentKind,
    pub rows: Vec<Row>,
    pub ledgers: Vec<(u64, BoundsLedger)>,
    pub scaling: Option<ScalingReport>,
    pub notes: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentTable {
    /// Rows with the given quantity, in emission order.
    pub fn values(&self, quantity: &str) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.quantity == quantity).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,N,h,tau,param,quantity,value,se\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.kind.label(),
                r.players,
                r.h,
                r.tau,
                fmt_opt(r.param),
                r.quantity,
                r.value,
                fmt_opt(r.se)
            );
        }
        out
    }

    pub fn sidecar(&self, spec: &ExperimentSpec) -> serde_json::Value {
        serde_json::json!({
            "config_hash": spec.config_hash(),
            "kind": self.kind,
            "master_seed": spec.seed,
            "replica_seeds": spec.players.iter().enumerate()
                .map(|(i, n)| serde_json::json!({"N": n, "master": config_seed(spec.seed, i)}))
                .collect::<Vec<_>>(),
            "spec": spec,
            "ledgers": self.ledgers.iter()
                .map(|(n, l)| serde_json::json!({"N": n, "ledger": l}))
                .collect::<Vec<_>>(),
            "scaling": self.scaling,
            "notes": self.notes,
        })
    }

    pub fn write(&self, spec: &ExperimentSpec, csv: &Path, json: Option<&Path>) -> Result<()> {
        std::fs::write(csv, self.to_csv())?;
        if let Some(json) = json {
            std::fs::write(json, serde_json::to_string_pretty(&self.sidecar(spec))?)?;
        }
        Ok(())
    }
}

/// Master seed of configuration `index`.
pub fn config_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

struct Ctx {
    spec: ExperimentSpec,
    kernel: Arc<dyn RateKernel>,
    reward: RewardModel,
    rows: Vec<Row>,
    notes: Vec<String>,
}

impl Ctx {
    fn h(&self, n: u64) -> f64 {
        self.spec.m0 / n as f64
    }

    fn push(&mut self, n: u64, param: Option<f64>, quantity: &str, value: f64, se: Option<f64>) {
        let h = if n == 0 { 0.0 } else { self.h(n) };
        self.rows.push(Row {
            players: n,
            h,
            tau: self.spec.tau(),
            param,
            quantity: quantity.to_string(),
            value,
            se,
        });
    }

    fn push_estimate(&mut self, n: u64, quantity: &str, e: McEstimate) {
        self.push(n, None, quantity, e.mean, Some(e.se));
    }

    fn ode(&self) -> Result<OdeConfig> {
        OdeConfig::new(self.spec.k_max, self.spec.ode_dt)
    }

    fn x0_limit(&self) -> Result<MeanFieldState> {
        MeanFieldState::with_k_max(vec![self.spec.m0], self.spec.k_max)
    }
}

/// Runs the experiment described by `spec`.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentTable> {
    spec.validate()?;
    let radius = spec.radius();
    let kernel = spec.kernel.build(radius)?;
    let reward_spec = spec.reward_spec();
    let reward = RewardModel::from_spec(&reward_spec)?;
    let mut ctx = Ctx {
        spec: spec.clone(),
        kernel,
        reward,
        rows: Vec::new(),
        notes: Vec::new(),
    };

    let configs: Vec<ScalingConfig> = spec
        .players
        .iter()
        .map(|&n| {
            ScalingConfig::new(
                ctx.h(n),
                spec.tau(),
                n as f64,
                spec.horizon,
                radius,
                ctx.kernel.bounds(),
            )
            .with_reward(reward_spec.lipschitz, reward_spec.sup)
            .with_action(0.0, 0, spec.control)
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let scaling = if configs.is_empty() {
        None
    } else {
        let report = validate_scaling(&configs)?;
        for (row, n) in report.rows.iter().zip(&spec.players) {
            if !row.passed() {
                let msg = format!("scaling check at N={n}: {} did not decrease", row.failures.join(", "));
                if spec.strict_scaling {
                    return Err(Error::Config(msg));
                }
                ctx.notes.push(msg);
            }
        }
        Some(report)
    };
    let ledgers: Vec<(u64, BoundsLedger)> = spec
        .players
        .iter()
        .zip(&configs)
        .map(|(&n, c)| (n, compute_ledger(c)))
        .collect();

    match spec.kind {
        ExperimentKind::TrajectoryConvergence => trajectory_convergence(&mut ctx)?,
        ExperimentKind::ValueConvergence => value_convergence(&mut ctx)?,
        ExperimentKind::DpCompare => dp_compare(&mut ctx)?,
        ExperimentKind::Example1d => example1d(&mut ctx)?,
        ExperimentKind::CouplingCheck => coupling_check(&mut ctx)?,
        ExperimentKind::Bounds => {}
    }
    for (n, l) in &ledgers {
        for (name, v) in [
            ("ledger.I0", l.i0),
            ("ledger.I1", l.i1),
            ("ledger.I2", l.i2),
            ("ledger.L1", l.l1),
            ("ledger.B", l.b),
            ("ledger.B_prime", l.b_prime),
            ("ledger.s_h", l.s_h),
        ] {
            ctx.push(*n, None, name, v, None);
        }
    }
    Ok(ExperimentTable {
        kind: spec.kind,
        rows: ctx.rows,
        ledgers,
        scaling,
        notes: ctx.notes,
    })
}

/// `||x - y||_2` between a chain state and a dense limit state.
fn chain_vs_limit(x: &Composition, limit: &[f64]) -> f64 {
    let top = x.largest_size().max(limit.len());
    (1..=top)
        .map(|k| {
            let d = x.component(k) - limit.get(k - 1).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn trajectory_convergence(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec.clone();
    let b = ControlPoint::new(spec.control)?;
    let alpha = ActionFunction::constant(b, spec.horizon)?;
    let path = integrate(
        &ctx.x0_limit()?,
        ctx.kernel.as_ref(),
        &alpha,
        spec.horizon,
        &ctx.ode()?,
        None,
    )?;
    let obs: Vec<f64> = (0..=spec.obs_points)
        .map(|j| spec.horizon * j as f64 / spec.obs_points as f64)
        .collect();
    let limit: Vec<Vec<f64>> = obs.iter().map(|&t| path.state_at(t)).collect();
    let cfg = SimConfig::new(spec.horizon, spec.tau()).with_convention(spec.convention);
    for (idx, &n) in spec.players.iter().enumerate() {
        let x0 = Composition::singletons(n, ctx.h(n))?;
        let trajs = simulate_replicas(
            &x0,
            ctx.kernel.as_ref(),
            &ControlSchedule::Action(alpha.clone()),
            &cfg,
            &obs,
            config_seed(spec.seed, idx),
            spec.replicas,
        )?;
        let sups: Vec<f64> = trajs
            .iter()
            .map(|t| {
                t.samples
                    .iter()
                    .zip(&limit)
                    .map(|(x, y)| chain_vs_limit(x, y))
                    .fold(0.0, f64::max)
            })
            .collect();
        let exceed: Vec<f64> = sups.iter().map(|&s| f64::from(u8::from(s > spec.epsilon))).collect();
        ctx.push_estimate(n, "mean_sup_deviation", McEstimate::from_samples(&sups));
        ctx.push_estimate(n, "prob_sup_deviation_above_epsilon", McEstimate::from_samples(&exceed));
    }
    Ok(())
}

/// Constant control of the limit problem used by the value experiment.
pub fn limit_control(
    x0: &MeanFieldState,
    kernel: &dyn RateKernel,
    horizon: f64,
    mstar: f64,
    cfg: &OdeConfig,
) -> Result<ControlPoint> {
    match constant_control_for_target(x0, kernel, horizon, mstar, cfg) {
        Ok(b) => ControlPoint::new(b),
        Err(Error::Unreachable { suggested, .. }) => ControlPoint::new(suggested),
        Err(e) => Err(e),
    }
}

fn value_convergence(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec.clone();
    let reward = ctx.reward.clone();
    let reward_spec = spec.reward_spec();
    let ode = ctx.ode()?;
    let x0 = ctx.x0_limit()?;
    let kernel = ctx.kernel.clone();
    let b = limit_control(&x0, kernel.as_ref(), spec.horizon, spec.mstar, &ode)?;
    let alpha = ActionFunction::constant(b, spec.horizon)?;
    let limit_value = value_deterministic(&x0, kernel.as_ref(), &alpha, spec.horizon, &reward, &ode)?;
    let v = match TerminalSpec::from_expr(&reward_spec.terminal, spec.mstar, spec.radius().max(2.0 * spec.mstar)) {
        Ok(terminal) => value_closed_form(0.0, spec.m0, spec.horizon, &terminal),
        Err(Error::InvalidReward(msg)) => {
            ctx.notes
                .push(format!("closed form unavailable ({msg}); v(x0) taken from limit_value"));
            limit_value
        }
        Err(e) => return Err(e),
    };
    if reward_spec.running.trim() != "0" {
        ctx.notes
            .push("closed-form value ignores the running reward; compare against limit_value".into());
    }
    ctx.push(0, None, "alpha_star", b.value(), None);
    ctx.push(0, None, "limit_value", limit_value, None);
    ctx.push(0, None, "v_closed_form", v, None);
    let grid = uniform_grid(spec.control_grid);
    for (idx, &n) in spec.players.iter().enumerate() {
        let h = ctx.h(n);
        let x0n = Composition::singletons(n, h)?;
        let policy = construct_policy_from_limit(&alpha, spec.tau(), spec.horizon)?;
        let est = value_mc(
            &x0n,
            &policy,
            &reward,
            kernel.as_ref(),
            spec.convention,
            spec.replicas,
            config_seed(spec.seed, idx),
        )?;
        ctx.push_estimate(n, "value_mc", est);
        ctx.push(n, None, "gap_mc", (est.mean - v).abs(), Some(est.se));
        if n <= spec.dp_max_players {
            let space = Arc::new(StateSpace::enumerate(n, h, StateSpace::DEFAULT_CAP)?);
            let problem = DpProblem {
                space: &space,
                kernel: kernel.as_ref(),
                reward: &reward,
                tau: spec.tau(),
                steps: spec.steps,
                convention: spec.convention,
            };
            let sol = shapley_dp(problem, &grid)?;
            let dp = sol.value(&x0n).expect("singletons are enumerated");
            ctx.push(n, None, "dp_value", dp, None);
            ctx.push(n, None, "gap_dp", (dp - v).abs(), None);
        } else {
            ctx.notes.push(format!(
                "N={n}: DP column omitted above {} players",
                spec.dp_max_players
            ));
        }
    }
    Ok(())
}

fn dp_compare(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec.clone();
    let reward = ctx.reward.clone();
    let grid = uniform_grid(spec.control_grid);
    let kernel = ctx.kernel.clone();
    for (idx, &n) in spec.players.iter().enumerate() {
        let h = ctx.h(n);
        let x0 = Composition::singletons(n, h)?;
        let space = Arc::new(StateSpace::enumerate(n, h, StateSpace::DEFAULT_CAP)?);
        let problem = DpProblem {
            space: &space,
            kernel: kernel.as_ref(),
            reward: &reward,
            tau: spec.tau(),
            steps: spec.steps,
            convention: spec.convention,
        };
        let sol = shapley_dp(problem, &grid)?;
        let dp = sol.value(&x0).expect("singletons are enumerated");
        ctx.push(n, None, "dp_value", dp, None);
        let policy = sol.policy()?;
        let start = space.index_of(&x0).expect("singletons are enumerated");
        ctx.push(
            n,
            None,
            "dp_policy_exact_value",
            evaluate_policy(problem, &policy)?[start],
            None,
        );
        let est = value_mc(
            &x0,
            &policy,
            &reward,
            kernel.as_ref(),
            spec.convention,
            spec.replicas,
            config_seed(spec.seed, idx),
        )?;
        ctx.push_estimate(n, "dp_policy_value_mc", est);
        match brute_force_feedback(problem, &grid, &x0, spec.brute_cap) {
            Ok(best) => ctx.push(n, None, "brute_force_value", best, None),
            Err(Error::FamilyTooLarge { count, cap }) => ctx
                .notes
                .push(format!("N={n}: brute force skipped, {count} policies above cap {cap}")),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn example1d(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec.clone();
    let reward_spec = spec.reward_spec();
    let m_max = spec.m_max.unwrap_or_else(|| {
        spec.m_values
            .iter()
            .copied()
            .fold(spec.radius().max(2.0 * spec.mstar), f64::max)
            + 1.0
    });
    let terminal = TerminalSpec::from_expr(&reward_spec.terminal, spec.mstar, m_max)?;
    let mut problem = GridProblem::logistic(
        terminal.function(),
        spec.horizon,
        m_max,
        spec.m_points,
        spec.b_points,
        spec.hjb_dt,
    );
    problem.dt = spec.hjb_dt;
    let sol = grid_dp_generalized(&problem)?;
    let m_values = if spec.m_values.is_empty() {
        vec![spec.m0]
    } else {
        spec.m_values.clone()
    };
    for m in m_values {
        let closed = value_closed_form(0.0, m, spec.horizon, &terminal);
        let grid = sol.value(0, m);
        ctx.push(0, Some(m), "grid_value", grid, None);
        ctx.push(0, Some(m), "closed_form_value", closed, None);
        ctx.push(0, Some(m), "abs_error", (grid - closed).abs(), None);
    }
    Ok(())
}

/// `floor(N/2)` pairs plus a singleton when `N` is odd.
pub fn paired_state(n: u64, h: f64) -> Result<Composition> {
    Composition::new(h, [(1, n % 2), (2, n / 2)].into_iter().filter(|&(_, c)| c > 0))
}

fn coupling_check(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec.clone();
    let kernel = ctx.kernel.clone();
    let reports = spec
        .players
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let h = spec.m0 / n as f64;
            let cfg = ContractionConfig {
                b: ControlPoint::new(spec.control)?,
                tau: spec.tau(),
                points: spec.steps,
                replicas: spec.replicas,
                master_seed: config_seed(spec.seed, idx),
                radius: spec.radius(),
                convention: spec.convention,
                kind: CouplingKind::MarchingSoldiers,
            };
            contraction_experiment(
                &Composition::singletons(n, h)?,
                &paired_state(n, h)?,
                kernel.as_ref(),
                &cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for (&n, report) in spec.players.iter().zip(reports) {
        for p in &report.points {
            ctx.push(n, Some(p.s), "mean_distance", p.mean_distance, Some(p.se));
            ctx.push(n, Some(p.s), "envelope", p.envelope, None);
            ctx.push(n, Some(p.s), "coalesced_fraction", p.coalesced_fraction, None);
        }
        ctx.push(n, None, "violations", report.violations() as f64, None);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: &str, extra: &str) -> ExperimentSpec {
        ExperimentSpec::from_json(&format!(r#"{{"kind": "{kind}"{extra}}}"#)).unwrap()
    }

    #[test]
    fn trivial_reward_gives_constant_columns() {
        let s = spec(
            "value-convergence",
            r#", "players": [3, 6], "replicas": 20, "steps": 2,
                "reward": {"B": "0", "V0": "2.5", "K_B": 0, "Binf": 2.5}"#,
        );
        let table = run(&s).unwrap();
        for q in ["value_mc", "dp_value", "limit_value", "v_closed_form"] {
            assert!(table.values(q).iter().all(|r| (r.value - 2.5).abs() < 1e-12), "{q}");
        }
    }

    #[test]
    fn epsilon_above_diameter_never_exceeds() {
        let s = spec(
            "trajectory-convergence",
            r#", "players": [4, 8, 16], "replicas": 5, "epsilon": 3.0, "obs_points": 10"#,
        );
        let table = run(&s).unwrap();
        assert!(table
            .values("prob_sup_deviation_above_epsilon")
            .iter()
            .all(|r| r.value == 0.0));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let s = spec(
            "trajectory-convergence",
            r#", "players": [4, 8, 16], "replicas": 1, "seed": 9"#,
        );
        assert_eq!(run(&s).unwrap().to_csv(), run(&s).unwrap().to_csv());
        let mut other = s.clone();
        other.seed = 10;
        assert_ne!(s.config_hash(), other.config_hash());
    }

    #[test]
    fn strict_scaling_names_the_quantity() {
        let s = spec("bounds", r#", "players": [4, 8, 16], "strict_scaling": true"#);
        match run(&s) {
            Err(Error::Config(msg)) => assert!(msg.contains("h N^2")),
            other => panic!("expected a config error, got {other:?}"),
        }
        let relaxed = spec("bounds", r#", "players": [4, 8, 16]"#);
        assert!(!run(&relaxed).unwrap().notes.is_empty());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ExperimentSpec::from_json(r#"{"kind": "bounds", "bogus": 1}"#).is_err());
        assert!(run(&spec("trajectory-convergence", r#", "players": [4, 8]"#)).is_err());
        assert!(run(&spec("bounds", r#", "players": [8, 4]"#)).is_err());
    }

    #[test]
    fn paired_state_keeps_mass() {
        assert_eq!(paired_state(7, 0.1).unwrap().players(), 7);
        assert_eq!(paired_state(8, 0.1).unwrap().count(2), 4);
    }
}
