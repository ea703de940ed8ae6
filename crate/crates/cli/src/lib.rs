//! The `por` command-line tool.
//!
//! Every training command writes a run directory holding the resolved
//! config, the dataset hash, checkpoints and `metrics.csv`, so a run can be
//! replayed from its own files.

pub mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use por_core::approx::checkpoint::file_hash;
use por_core::boundcheck::{synthetic_train_config, train_synthetic_agent, verify_bound, BoundCheck, SyntheticSmoothMdp};
use por_core::data::{dataset_hash, export_csv, load_dataset, save_dataset, SplitScheme, SplitSpec};
use por_core::envs::{collect, build_toy_dataset, CollectorSpec, FourRoomConfig, FourRoomEnv, TaskId, ToyLayout};
use por_core::tabular::{dataset_value_iteration, render_path, stitch_rollouts, Stitching};
use por_core::trainer::{self, evaluate, load_run, write_run, EvalSpec, TrainOutcome};
use por_core::{PorError, TrainConfig, TrajectoryDataset};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PorError> for CliError {
    fn from(e: PorError) -> Self {
        let msg = e.to_string();
        match e {
            PorError::Config(_) | PorError::InvalidArgument(_) => CliError::Usage(msg),
            PorError::Io { .. }
            | PorError::Corrupt { .. }
            | PorError::DimensionMismatch { .. }
            | PorError::ActionFree(_)
            | PorError::GoalUnreachable { .. } => CliError::Data(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "por", version, about = "Policy-guided offline RL experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect a four-room dataset.
    GenData(GenDataArgs),
    /// Train value, guide and execute policies on one dataset.
    Train(TrainArgs),
    /// Roll out a trained agent.
    Eval(EvalArgs),
    /// Retrain value and guide for a new task with a frozen execute-policy.
    Transfer(TransferArgs),
    /// Split a dataset and train under the main, more or mix scheme.
    Mix(MixArgs),
    /// Tabular action- versus state-stitching on a small gridworld.
    Toy(ToyArgs),
    /// Check the single-step optimality bound on a synthetic MDP.
    VerifyBound(VerifyBoundArgs),
    /// Render metrics CSV files as SVG learning curves.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// fourroom-a, fourroom-b, fourroom-c
    #[arg(long)]
    pub env: String,
    /// Number of transitions.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of transitions from the waypoint controller.
    #[arg(long, default_value_t = 0.8)]
    pub controller_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a CSV export here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Preset (table3, table4-<env>, table7, fourroom) or a TOML config file.
    #[arg(long)]
    pub config: Option<String>,
    /// `section.key=value` override, applied in order after the config.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Comma-separated seeds; several seeds train in parallel, one
    /// `seed-<k>` subdirectory each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Environment for periodic evaluation while the execute-policy trains.
    #[arg(long)]
    pub eval_env: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value = "fourroom-a")]
    pub env: String,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-episode CSV; defaults to `<run>/eval.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Run directory whose execute-policy is reused.
    #[arg(long)]
    pub from: PathBuf,
    /// Target task; the dataset is relabelled with its rewards.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// main, more or mix.
    #[arg(long, default_value = "mix")]
    pub scheme: String,
    /// Share of trajectories in the action-labelled part.
    #[arg(long, default_value_t = 0.3)]
    pub fraction_e: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Keep actions in the supplementary part (mix scheme only).
    #[arg(long)]
    pub keep_actions: bool,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// `canonical` or a layout file.
    #[arg(long, default_value = "canonical")]
    pub layout: String,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct VerifyBoundArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.5)]
    pub slack: f64,
    #[arg(long, default_value_t = 200)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 20)]
    pub length: usize,
    /// Behaviour-action noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// `section.key=value` override of the training config.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metrics CSV files; each becomes one curve.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Mix(a) => cmd_mix(&a),
        Command::Toy(a) => cmd_toy(&a),
        Command::VerifyBound(a) => cmd_verify_bound(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

/// `fourroom-a` style names, or a path to an environment TOML file.
pub fn resolve_env(name: &str) -> CliResult<FourRoomConfig> {
    if let Some(t) = name.strip_prefix("fourroom-") {
        let task: TaskId = t.parse().map_err(|_| CliError::Usage(format!("unknown environment `{name}`")))?;
        return Ok(FourRoomConfig::builtin(task));
    }
    if Path::new(name).is_file() {
        return Ok(FourRoomConfig::load(name)?);
    }
    Err(CliError::Usage(format!(
        "unknown environment `{name}` (expected fourroom-a|b|c or a config file)"
    )))
}

/// Preset or file, then overrides in order.
pub fn resolve_config(config: Option<&str>, default: &str, overrides: &[String]) -> CliResult<TrainConfig> {
    let name = config.unwrap_or(default);
    let mut c = if Path::new(name).is_file() {
        let text = fs::read_to_string(name).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        TrainConfig::from_toml(&text)?
    } else {
        TrainConfig::preset(name)?
    };
    for o in overrides {
        c.apply_override(o)?;
    }
    c.validate()?;
    Ok(c)
}

fn load_data(path: &Path) -> CliResult<TrajectoryDataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn cmd_gen_data(a: &GenDataArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let env = resolve_env(&a.env)?;
    let mut spec = CollectorSpec::new(env.task, a.n, a.seed);
    spec.controller_fraction = a.controller_fraction;
    let data = collect(&spec)?;
    save_dataset(&data, &a.out)?;
    if let Some(csv) = &a.csv {
        export_csv(&data, csv)?;
    }
    println!(
        "wrote {} transitions in {} trajectories to {} (sha256 {})",
        data.len(),
        data.num_trajectories(),
        a.out.display(),
        dataset_hash(&data)
    );
    Ok(())
}

/// One resolved job per seed with its run directory.
fn seed_jobs(opts: &TrainOpts, default_preset: &str) -> CliResult<Vec<(TrainConfig, PathBuf)>> {
    let base = resolve_config(opts.config.as_deref(), default_preset, &opts.overrides)?;
    Ok(match &opts.seeds {
        None => vec![(base, opts.out.clone())],
        Some(seeds) if seeds.len() == 1 => {
            let mut c = base;
            c.seed = seeds[0];
            vec![(c, opts.out.clone())]
        }
        Some(seeds) => seeds
            .iter()
            .map(|&s| {
                let mut c = base.clone();
                c.seed = s;
                (c, opts.out.join(format!("seed-{s}")))
            })
            .collect(),
    })
}

/// Run `job` for every seed on its own thread and report every failure.
fn fan_out<F>(jobs: Vec<(TrainConfig, PathBuf)>, job: F) -> CliResult<()>
where
    F: Fn(&TrainConfig, &Path) -> CliResult<()> + Sync,
{
    let results: Vec<CliResult<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.iter().map(|(c, dir)| scope.spawn(|| job(c, dir))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Runtime("worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn eval_spec(opts: &TrainOpts) -> CliResult<Option<EvalSpec>> {
    opts.eval_env
        .as_deref()
        .map(|e| {
            Ok(EvalSpec {
                env: resolve_env(e)?,
                seed: opts.eval_seed,
            })
        })
        .transpose()
}

fn finish(dir: &Path, config: &TrainConfig, hash: &str, out: &TrainOutcome) -> CliResult<()> {
    write_run(dir, config, hash, out)?;
    let last = out.metrics.iter().rev().find_map(|r| r.eval_success_rate);
    match last {
        Some(s) => println!("{}: done, last eval success rate {s}", dir.display()),
        None => println!("{}: done", dir.display()),
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let hash = dataset_hash(&data);
    let eval = eval_spec(&a.opts)?;
    fan_out(seed_jobs(&a.opts, "fourroom")?, |c, dir| {
        let out = trainer::train(&data, c, eval.as_ref())?;
        finish(dir, c, &hash, &out)
    })
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    if !a.run.is_dir() {
        return Err(CliError::Usage(format!("run directory {} does not exist", a.run.display())));
    }
    let run = load_run(&a.run)?;
    let env = resolve_env(&a.env)?;
    let report = evaluate(&env, &run.agent, a.episodes, a.seed)?;
    let mut csv = String::from("episode,return,steps,success,river_entry,key_before_goal\n");
    for (i, e) in report.episodes.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            e.episode_return, e.steps, e.success as u8, e.river_entry as u8, e.key_before_goal as u8
        ));
    }
    let path = a.out.clone().unwrap_or_else(|| a.run.join("eval.csv"));
    fs::write(&path, csv).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let key = report.key_before_goal_rate().map_or("n/a".to_string(), |k| k.to_string());
    println!(
        "episodes={} success_rate={} return_mean={} return_std={} river_rate={} key_before_goal={}",
        report.len(),
        report.success_rate(),
        report.mean_return(),
        report.std_return(),
        report.river_rate(),
        key
    );
    Ok(())
}

fn cmd_transfer(a: &TransferArgs) -> CliResult<()> {
    if !a.from.is_dir() {
        return Err(CliError::Usage(format!("run directory {} does not exist", a.from.display())));
    }
    let old = load_run(&a.from)?;
    let env = resolve_env(&a.task)?;
    let data = FourRoomEnv::from_config(env)?.relabel(&load_data(&a.data)?)?;
    let hash = dataset_hash(&data);
    let eval = eval_spec(&a.opts)?;
    let old_hash = file_hash(a.from.join("execute.ckpt"))?;
    let base = old.config.clone();
    let mut jobs = match &a.opts.config {
        Some(_) => seed_jobs(&a.opts, "fourroom")?,
        None => {
            let mut c = base;
            for o in &a.opts.overrides {
                c.apply_override(o)?;
            }
            let seeds = a.opts.seeds.clone().unwrap_or_else(|| vec![c.seed]);
            if seeds.len() == 1 {
                c.seed = seeds[0];
                vec![(c, a.opts.out.clone())]
            } else {
                seeds
                    .iter()
                    .map(|&s| {
                        let mut c = c.clone();
                        c.seed = s;
                        (c, a.opts.out.join(format!("seed-{s}")))
                    })
                    .collect()
            }
        }
    };
    // The execute stage is frozen, so no execute steps are recorded.
    for (c, _) in &mut jobs {
        c.steps.execute = 0;
    }
    fan_out(jobs, |c, dir| {
        let out = trainer::transfer(&old.agent, &data, c, eval.as_ref())?;
        finish(dir, c, &hash, &out)?;
        let new_hash = file_hash(dir.join("execute.ckpt"))?;
        if new_hash != old_hash {
            return Err(CliError::Runtime("execute checkpoint changed during transfer".into()));
        }
        println!("{}: execute checkpoint sha256 {new_hash} (unchanged)", dir.display());
        Ok(())
    })
}

fn cmd_mix(a: &MixArgs) -> CliResult<()> {
    let scheme = match a.scheme.as_str() {
        "main" => SplitScheme::Main,
        "more" => SplitScheme::More,
        "mix" => SplitScheme::Mix,
        s => return Err(CliError::Usage(format!("unknown scheme `{s}` (main, more, mix)"))),
    };
    let data = load_data(&a.data)?;
    let spec = SplitSpec {
        scheme,
        fraction_e: a.fraction_e,
        action_free_supplement: !a.keep_actions,
    };
    let (d_e, d_o) = data.split(&spec, a.split_seed)?;
    let hash = dataset_hash(&data);
    let eval = eval_spec(&a.opts)?;
    fan_out(seed_jobs(&a.opts, "fourroom")?, |c, dir| {
        let out = match scheme {
            SplitScheme::Main | SplitScheme::More => trainer::train(&d_e, c, eval.as_ref())?,
            SplitScheme::Mix => trainer::mix_train(&d_e, &d_o, c, eval.as_ref())?,
        };
        finish(dir, c, &hash, &out)
    })
}

fn cmd_toy(a: &ToyArgs) -> CliResult<()> {
    let layout = if a.layout == "canonical" {
        ToyLayout::canonical()
    } else {
        let text = fs::read_to_string(&a.layout).map_err(|e| CliError::Usage(format!("{}: {e}", a.layout)))?;
        ToyLayout::parse(&text)?
    };
    let data = build_toy_dataset(&layout)?;
    let world = &layout.world;
    let v = dataset_value_iteration(&data, world, a.gamma)?;
    for method in [Stitching::Action, Stitching::State] {
        let paths = stitch_rollouts(&v, &data, world, method)?;
        let mut steps: Vec<usize> = paths.iter().map(|p| p.steps()).collect();
        steps.sort_unstable();
        steps.dedup();
        let shown: Vec<String> = steps.iter().map(usize::to_string).collect();
        println!("{}: {} steps", method.name(), shown.join(" or "));
        for p in &paths {
            println!("{}", render_path(world, &data, &p.cells));
        }
    }
    Ok(())
}

fn cmd_verify_bound(a: &VerifyBoundArgs) -> CliResult<()> {
    let mdp = SyntheticSmoothMdp::standard();
    let data = mdp.dataset(a.trajectories, a.length, a.noise, a.seed)?;
    let mut config = synthetic_train_config(a.seed);
    for o in &a.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    let agent = train_synthetic_agent(&data, &config)?;
    let check = BoundCheck {
        sample_count: a.samples,
        slack: a.slack,
        seed: a.seed,
        ..BoundCheck::default()
    };
    let report = verify_bound(&mdp, &agent, &data, &check)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let write = |name: &str, text: String| {
        let p = a.out.join(name);
        fs::write(&p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    write("config", config.to_toml())?;
    write("bound.csv", report.to_csv())?;
    write("summary.txt", report.summary() + "\n")?;
    println!("{}", report.summary());
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> CliResult<()> {
    let mut tables = Vec::new();
    for p in &a.inputs {
        let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        tables.push(plot::parse_metrics(&plot::run_id(p), &text, &p.display().to_string())?);
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    for metric in plot::metric_columns(&tables) {
        let path = a.out.join(format!("{metric}.svg"));
        fs::write(&path, plot::render_chart(&metric, &tables))
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}
