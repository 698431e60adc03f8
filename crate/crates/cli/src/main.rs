use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fragcoag_core::bounds::{compute_ledger, validate_scaling, ScalingConfig};
use fragcoag_core::control::{
    shapley_dp, value_mc, ActionFunction, DpProblem, DpTable, OpenLoopPolicyFile, Policy, RewardModel, RewardSpec,
    StateSpace,
};
use fragcoag_core::coupling::{contraction_experiment, ContractionConfig, CouplingKind};
use fragcoag_core::ctmc::{simulate_replicas, ControlSchedule, MergeConvention, SimConfig};
use fragcoag_core::experiment::{run, ExperimentSpec};
use fragcoag_core::expr::ScalarExpr;
use fragcoag_core::kernels::{parse_grid, KernelSpec, SharedKernel};
use fragcoag_core::meanfield::{integrate, OdeConfig};
use fragcoag_core::reduced1d::{
    grid_dp_generalized, optimal_action, value_closed_form, GridProblem, HjbScheme, TerminalSpec,
};
use fragcoag_core::{Composition, ControlPoint, Error, MeanFieldState};

#[derive(Parser)]
#[command(
    name = "fragcoag",
    version,
    about = "Controlled fragmentation-coagulation chains and their mean-field limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the chain and write the states at window boundaries as CSV.
    Simulate(SimulateArgs),
    /// Integrate the truncated Smoluchowski system under an action function.
    Meanfield(MeanfieldArgs),
    /// Backward Shapley recursion on the enumerated state space.
    Dp(DpArgs),
    /// Monte-Carlo value of a policy.
    Value(ValueArgs),
    /// The norm-reduced one-dimensional problem.
    Example1d {
        #[command(subcommand)]
        command: Example1dCommand,
    },
    /// Marching-soldiers coupling contraction experiment.
    Coupling(CouplingArgs),
    /// Constants ledger, or `bounds validate` for a scaling sequence.
    Bounds(BoundsArgs),
    /// Run an experiment spec.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
}

#[derive(Args)]
struct Common {
    /// Kernel JSON; defaults to the constant example kernel.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Radius of the state-space ball used for kernel spot-checks.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Weight same-size merges by n_i^2 instead of n_i (n_i - 1).
    #[arg(long)]
    literal_generator: bool,
}

impl Common {
    fn kernel(&self) -> anyhow::Result<SharedKernel> {
        let spec = match &self.kernel {
            Some(path) => read_json::<KernelSpec>(path)?,
            None => KernelSpec::Constant,
        };
        Ok(spec.build(self.radius)?)
    }

    fn convention(&self) -> MergeConvention {
        if self.literal_generator {
            MergeConvention::Literal
        } else {
            MergeConvention::Combinatorial
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x0: PathBuf,
    /// `const:b`, `action:a.json` or `policy:p.json`.
    #[arg(long, default_value = "const:0.5")]
    control: String,
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the jump log as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct MeanfieldArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x0: PathBuf,
    /// Action JSON; `--b` gives a constant action instead.
    #[arg(long, conflicts_with = "b")]
    action: Option<PathBuf>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long = "Kmax")]
    k_max: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "N")]
    players: u64,
    /// Defaults to `radius / N`.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    reward: PathBuf,
    #[arg(long = "Egrid", default_value = "0:1:0.1")]
    grid: String,
    #[arg(long)]
    tau: f64,
    #[arg(long = "n")]
    steps: usize,
    #[arg(long, default_value_t = StateSpace::DEFAULT_CAP)]
    cap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValueArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x0: PathBuf,
    /// DP table or open-loop policy JSON.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    reward: PathBuf,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Example1dCommand {
    /// Closed-form optimal action and value.
    Solve {
        #[arg(long = "V0", allow_hyphen_values = true)]
        v0: Option<String>,
        #[arg(long)]
        mstar: f64,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        m0: f64,
    },
    /// Grid solution of the generalized HJB equation as CSV.
    Grid {
        #[arg(long = "fC", default_value = "1")]
        f_c: String,
        #[arg(long = "fB", default_value = "1")]
        f_b: String,
        #[arg(long = "V0", allow_hyphen_values = true)]
        v0: String,
        /// Running reward in `m` and `b`.
        #[arg(long = "B", default_value = "0", allow_hyphen_values = true)]
        running: String,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long, default_value_t = 4.0)]
        m_max: f64,
        #[arg(long, default_value_t = 400)]
        m_points: usize,
        #[arg(long, default_value_t = 64)]
        b_points: usize,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = Scheme::SemiLagrangian)]
        scheme: Scheme,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    SemiLagrangian,
    Upwind,
}

#[derive(Args)]
struct CouplingArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 8)]
    points: usize,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the independent coupling as a baseline.
    #[arg(long)]
    independent: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(subcommand)]
    command: Option<BoundsCommand>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BoundsCommand {
    Validate {
        #[arg(long)]
        sequence: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Run {
        spec: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_policy(path: &Path) -> anyhow::Result<Policy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(table) = serde_json::from_str::<DpTable>(&text) {
        return Ok(table.into_policy()?);
    }
    let open: OpenLoopPolicyFile = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("{} is neither a DP table nor an open-loop policy", path.display()))?;
    Ok(open.into_policy()?)
}

fn read_mean_field(path: &Path) -> anyhow::Result<MeanFieldState> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(c) = serde_json::from_str::<Composition>(&text) {
        return Ok(c.to_mean_field(c.largest_size().max(1))?);
    }
    let x: Vec<f64> = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(MeanFieldState::new(x)?)
}

fn simulate_cmd(args: SimulateArgs) -> anyhow::Result<()> {
    let kernel = args.common.kernel()?;
    let x0: Composition = read_json(&args.x0)?;
    let schedule = match args.control.split_once(':') {
        Some(("const", b)) => ControlSchedule::Constant(ControlPoint::new(b.parse().context("control value")?)?),
        Some(("action", path)) => ControlSchedule::Action(read_json::<ActionFunction>(Path::new(path))?),
        Some(("policy", path)) => ControlSchedule::Policy(read_policy(Path::new(path))?),
        _ => bail!("--control must be const:b, action:a.json or policy:p.json"),
    };
    let mut cfg = SimConfig::new(args.horizon, args.tau).with_convention(args.common.convention());
    cfg.record_events = args.events.is_some();
    let trajs = simulate_replicas(&x0, kernel.as_ref(), &schedule, &cfg, &[], args.seed, args.replicas)?;
    let mut csv = String::from("replica,t,k,x_k\n");
    let mut log = String::new();
    for t in &trajs {
        for (w, state) in t.step_states.iter().enumerate() {
            let time = (w as f64 * t.tau).min(args.horizon);
            for (k, _) in state.iter() {
                writeln!(csv, "{},{},{},{}", t.replica, time, k, state.component(k))?;
            }
        }
        for e in t.events.iter().flatten() {
            writeln!(log, "{}", serde_json::json!({"replica": t.replica, "entry": e}))?;
        }
    }
    if let Some(path) = &args.events {
        fs::write(path, log)?;
    }
    emit(args.out.as_deref(), &csv)
}

fn meanfield_cmd(args: MeanfieldArgs) -> anyhow::Result<()> {
    let kernel = args.common.kernel()?;
    let x0 = read_mean_field(&args.x0)?;
    let alpha = match (&args.action, args.b) {
        (Some(path), _) => read_json::<ActionFunction>(path)?,
        (None, Some(b)) => ActionFunction::constant(ControlPoint::new(b)?, args.horizon)?,
        (None, None) => bail!("give either --action or --b"),
    };
    let cfg = match args.k_max {
        Some(k) => OdeConfig::new(k, args.dt)?,
        None => OdeConfig::for_state(x0.as_slice(), args.dt)?,
    };
    let path = integrate(&x0, kernel.as_ref(), &alpha, args.horizon, &cfg, None)?;
    let mut csv = String::from("t,k,x_k\n");
    for (t, x) in path.times.iter().zip(&path.states) {
        for (i, v) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(csv, "{t},{},{v}", i + 1)?;
        }
    }
    if path.leaked_mass > 0.0 {
        eprintln!("truncation leaked mass {:.3e}; raise --Kmax", path.leaked_mass);
    }
    emit(args.out.as_deref(), &csv)
}

fn dp_cmd(args: DpArgs) -> anyhow::Result<()> {
    let kernel = args.common.kernel()?;
    let reward = RewardModel::from_spec(&read_json::<RewardSpec>(&args.reward)?)?;
    let h = args.h.unwrap_or(args.common.radius / args.players as f64);
    let space = Arc::new(StateSpace::enumerate(args.players, h, args.cap)?);
    let problem = DpProblem {
        space: &space,
        kernel: kernel.as_ref(),
        reward: &reward,
        tau: args.tau,
        steps: args.steps,
        convention: args.common.convention(),
    };
    let solution = shapley_dp(problem, &parse_grid(&args.grid)?)?;
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&solution.to_table())?,
    )
}

fn value_cmd(args: ValueArgs) -> anyhow::Result<()> {
    let kernel = args.common.kernel()?;
    let x0: Composition = read_json(&args.x0)?;
    let policy = read_policy(&args.policy)?;
    let reward = RewardModel::from_spec(&read_json::<RewardSpec>(&args.reward)?)?;
    let est = value_mc(
        &x0,
        &policy,
        &reward,
        kernel.as_ref(),
        args.common.convention(),
        args.replicas,
        args.seed,
    )?;
    println!("{}", serde_json::to_string_pretty(&est)?);
    Ok(())
}

fn example1d_cmd(command: Example1dCommand) -> anyhow::Result<()> {
    match command {
        Example1dCommand::Solve { v0, mstar, horizon, m0 } => {
            let radius = 4.0 * mstar.max(m0).max(1.0);
            let spec = match v0 {
                Some(src) => TerminalSpec::from_expr(&src, mstar, radius)?,
                None => TerminalSpec::quadratic(mstar)?,
            };
            let action = optimal_action(m0, horizon, &spec)?;
            let report = serde_json::json!({
                "branch": action.branch,
                "b": action.b,
                "value": value_closed_form(0.0, m0, horizon, &spec),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Example1dCommand::Grid {
            f_c,
            f_b,
            v0,
            running,
            horizon,
            m_max,
            m_points,
            b_points,
            dt,
            scheme,
            out,
        } => {
            let (f_c, f_b, v0) = (
                ScalarExpr::parse(&f_c, &["m"])?,
                ScalarExpr::parse(&f_b, &["m"])?,
                ScalarExpr::parse(&v0, &["m"])?,
            );
            let running = ScalarExpr::parse(&running, &["m", "b"])?;
            let problem = GridProblem {
                f_c: Arc::new(move |m| f_c.eval(&[m])),
                f_b: Arc::new(move |m| f_b.eval(&[m])),
                terminal: Arc::new(move |m| v0.eval(&[m])),
                running: Arc::new(move |m, b| running.eval(&[m, b])),
                horizon,
                m_max,
                m_points,
                b_points,
                dt,
                scheme: match scheme {
                    Scheme::SemiLagrangian => HjbScheme::SemiLagrangian,
                    Scheme::Upwind => HjbScheme::Upwind,
                },
            };
            let sol = grid_dp_generalized(&problem)?;
            let mut csv = String::from("t,m,value,action\n");
            for (i, t) in sol.times.iter().enumerate() {
                for (j, m) in sol.m.iter().enumerate() {
                    let action = sol.actions.get(i).map(|a| a[j].to_string()).unwrap_or_default();
                    writeln!(csv, "{t},{m},{},{action}", sol.values[i][j])?;
                }
            }
            emit(out.as_deref(), &csv)
        }
    }
}

fn coupling_cmd(args: CouplingArgs) -> anyhow::Result<()> {
    let kernel = args.common.kernel()?;
    let x: Composition = read_json(&args.x)?;
    let y: Composition = read_json(&args.y)?;
    let cfg = ContractionConfig {
        b: ControlPoint::new(args.b)?,
        tau: args.tau,
        points: args.points,
        replicas: args.replicas,
        master_seed: args.seed,
        radius: args.common.radius,
        convention: args.common.convention(),
        kind: if args.independent {
            CouplingKind::Independent
        } else {
            CouplingKind::MarchingSoldiers
        },
    };
    let report = contraction_experiment(&x, &y, kernel.as_ref(), &cfg)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn bounds_cmd(args: BoundsArgs) -> anyhow::Result<()> {
    match (args.command, args.config) {
        (Some(BoundsCommand::Validate { sequence }), _) => {
            let seq: Vec<ScalingConfig> = read_json(&sequence)?;
            let report = validate_scaling(&seq)?;
            println!("h,hN2,tauN2,tau_sqrtN,status");
            for row in &report.rows {
                let status = if row.passed() {
                    "pass".to_string()
                } else {
                    format!("fail: {}", row.failures.join("; "))
                };
                println!("{},{},{},{},{status}", row.h, row.h_n2, row.tau_n2, row.tau_sqrt_n);
            }
            Ok(())
        }
        (None, Some(config)) => {
            let cfg: ScalingConfig = read_json(&config)?;
            cfg.validate()?;
            println!("{}", serde_json::to_string_pretty(&compute_ledger(&cfg))?);
            Ok(())
        }
        (None, None) => Err(Error::Config("bounds needs --config or the validate subcommand".into()).into()),
    }
}

fn experiment_cmd(command: ExperimentCommand) -> anyhow::Result<()> {
    let ExperimentCommand::Run { spec, csv, json } = command;
    let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let parsed = ExperimentSpec::from_json(&text)?;
    let table = run(&parsed)?;
    for note in &table.notes {
        eprintln!("note: {note}");
    }
    match csv {
        Some(path) => table.write(&parsed, &path, json.as_deref())?,
        None => {
            print!("{}", table.to_csv());
            if let Some(json) = json {
                fs::write(json, serde_json::to_string_pretty(&table.sidecar(&parsed))?)?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Instability(_) | Error::Cfl { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate_cmd(args),
        Command::Meanfield(args) => meanfield_cmd(args),
        Command::Dp(args) => dp_cmd(args),
        Command::Value(args) => value_cmd(args),
        Command::Example1d { command } => example1d_cmd(command),
        Command::Coupling(args) => coupling_cmd(args),
        Command::Bounds(args) => bounds_cmd(args),
        Command::Experiment { command } => experiment_cmd(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
