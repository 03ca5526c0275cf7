use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matchq::learning::{run_tbs, run_tls};
use matchq::model::{validate_config, SystemConfig};
use matchq::oracle::{cached_oracle_report, oracle_report};
use matchq::sim::{
    default_burn_in, default_samples, run_sim, summarize, PolicySpec, RewardLearner, SimOptions,
};
use matchq::sweep::{run_sweep, write_sweep_csv, SweepOptions};
use matchq::{rng, Error};

#[derive(Parser)]
#[command(name = "matchq", version, about = "Queue-based matching simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy and write its trace and metrics.
    Run(RunArgs),
    /// Run every (policy, V, seed) combination and write a summary CSV.
    Sweep(SweepArgs),
    /// Print the offline optimum and the dual minimizer.
    Oracle(OracleArgs),
    /// Run the reward and state samplers and print the estimates.
    Learn(LearnArgs),
}

#[derive(Args)]
struct Common {
    /// Instance description (JSON).
    config: PathBuf,
    /// Refuse configurations that break a model assumption.
    #[arg(long)]
    strict_config: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// ram, lram, lram-<δ>, dram or dram-state.
    #[arg(long, default_value = "ram")]
    policy: String,
    #[arg(long, default_value_t = 100.0)]
    v: f64,
    #[arg(long, default_value_t = 100_000)]
    horizon: usize,
    #[arg(long, env = "MATCHQ_SEED", default_value_t = 0)]
    seed: u64,
    /// Replace reward learning by the true table with ±δ noise.
    #[arg(long)]
    delta_r: Option<f64>,
    /// Slots excluded from the metrics; defaults to a fifth of the horizon.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Shift for the shifted controller, overriding the config.
    #[arg(long)]
    zeta: Option<f64>,
    /// Serve queues hit by a drop at the reduced allocation.
    #[arg(long)]
    serve_reduced: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "lram-0,lram-0.05,lram-0.1,dram")]
    policies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,50,80,100")]
    v_list: Vec<f64>,
    /// Number of seeds, counted up from --first-seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, env = "MATCHQ_SEED", default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 100_000)]
    horizon: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Convergence radius; fitted from a raw-controller run when absent.
    #[arg(long)]
    radius: Option<f64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
    /// Summary CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100.0)]
    v: f64,
    /// Directory for cached reports.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    /// Sets both sample counts to ⌈ln(V)²⌉ unless given explicitly.
    #[arg(long, default_value_t = 100.0)]
    v: f64,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long, env = "MATCHQ_SEED", default_value_t = 0)]
    seed: u64,
}

/// Bad input (exit 1) versus a failure while running (exit 2).
enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Policy(_) | Error::Json(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(common: &Common) -> Result<SystemConfig, Failure> {
    let path = &common.config;
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let cfg = SystemConfig::from_json_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let violations = validate_config(&cfg);
    for v in &violations {
        eprintln!("warning: {}: {:?}: {}", path.display(), v.condition, v.detail);
    }
    if common.strict_config && !violations.is_empty() {
        return Err(Failure::Input(format!("{}: {} assumption violations", path.display(), violations.len())));
    }
    Ok(cfg)
}

fn policy(name: &str, delta_r: Option<f64>) -> Result<PolicySpec, Failure> {
    let spec: PolicySpec = name.parse()?;
    let Some(delta) = delta_r else {
        return Ok(spec);
    };
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Failure::Input(format!("--delta-r must be a nonnegative number, got {delta}")));
    }
    match spec {
        PolicySpec::Lram(_) => Ok(PolicySpec::Lram(RewardLearner::Perturbed(delta))),
        PolicySpec::Dram { states, .. } => Ok(PolicySpec::Dram {
            rewards: RewardLearner::Perturbed(delta),
            states,
        }),
        PolicySpec::Ram => Err(Failure::Input("--delta-r needs a learning policy".into())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let spec = policy(&args.policy, args.delta_r)?;
    let opts = SimOptions {
        zeta: args.zeta,
        serve_reduced: args.serve_reduced,
        ..SimOptions::default()
    };
    let trace = run_sim(&cfg, &spec, args.v, args.horizon, args.seed, &opts)?;
    let burn_in = args.burn_in.unwrap_or_else(|| default_burn_in(trace.len()));
    let metrics = summarize(&trace, &cfg, burn_in)?;

    fs::create_dir_all(&args.out)?;
    let stem = format!("{}-v{}-s{}", spec, args.v, args.seed);
    let trace_path = args.out.join(format!("{stem}.csv"));
    let mut w = create(&trace_path)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let metrics_path = args.out.join(format!("{stem}.json"));
    let mut w = create(&metrics_path)?;
    let doc = serde_json::json!({ "header": trace.header, "metrics": metrics });
    serde_json::to_writer_pretty(&mut w, &doc).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    println!("{}", trace_path.display());
    println!("{}", metrics_path.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let policies = args
        .policies
        .iter()
        .map(|p| policy(p, None))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(v) = args.v_list.iter().find(|v| !v.is_finite()) {
        return Err(Failure::Input(format!("bad V value {v}")));
    }
    let seeds: Vec<u64> = (args.first_seed..args.first_seed + args.seeds).collect();
    let opts = SweepOptions {
        horizon: args.horizon,
        burn_in: args.burn_in,
        radius: args.radius,
        sim: SimOptions::default(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    let rows = pool.install(|| run_sweep(&cfg, &policies, &args.v_list, &seeds, &opts));
    for row in rows.iter().filter(|r| r.status != "ok") {
        eprintln!("warning: {} V={} seed {}: {}", row.policy, row.v, row.seed, row.status);
    }
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = create(path)?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_sweep_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let report = match &args.cache {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            cached_oracle_report(&cfg, args.v, dir)?
        }
        None => oracle_report(&cfg, args.v)?,
    };
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn cmd_learn(args: LearnArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let s_th = args.samples.unwrap_or_else(|| default_samples(args.v));
    let rewards = run_tbs(&cfg, s_th, &mut rng::stream(args.seed, rng::LEARNING))?;
    let t_th = args.slots.unwrap_or(rewards.learn_time);
    let states = run_tls(&cfg, t_th, &mut rng::stream(args.seed, rng::STATE_LEARNING))?;
    let doc = serde_json::json!({
        "rewards": rewards,
        "reward_error": rewards.realized_error(&cfg),
        "states": states,
        "state_error": states.realized_error(&cfg),
        "learn_time": rewards.learn_time.max(states.learn_time),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Learn(a) => cmd_learn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
