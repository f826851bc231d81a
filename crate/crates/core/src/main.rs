use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ckptmerge::baseline::{BaseChoice, DareParams, TiesParams, DEFAULT_DENSITY, DEFAULT_DROP_RATE};
use ckptmerge::io::manifest::load_run;
use ckptmerge::naming::{format_name, parse_model_name, MergeName, SoupScheme};
use ckptmerge::pipeline::{
    execute_merge, save_merge, CheckpointStore, Evaluator, ExternalCommandEvaluator, MergeRecipe,
    MethodSpec, Orientation, PenaltyGrid, Pipeline, SweepConfig, DEFAULT_INTERVALS, DEFAULT_KS,
    DEFAULT_SHORTLIST,
};
use ckptmerge::synth::{generate_trajectory, SyntheticEvaluator, TrajectoryConfig};
use ckptmerge::weighting::{MetricKind, DEFAULT_POWER};
use ckptmerge::{Error, Result, SelectionSpec};

#[derive(Parser)]
#[command(name = "ckptmerge", version, about = "Merge checkpoints from a single training run")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge one selection of checkpoints.
    Merge(MergeArgs),
    /// Run the sweep, shortlist and weighted refinement procedure.
    Sweep(SweepArgs),
    /// Parse or format merged-model names.
    #[command(subcommand)]
    Name(NameCommand),
    /// Generate a synthetic run on a quadratic landscape.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    run_manifest: PathBuf,
    /// Metrics log supplying training losses.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mwa,
    Uniform,
    Slerp,
    Ties,
    #[value(name = "dare_ties")]
    DareTies,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Loss,
    Steps,
}

impl From<Metric> for MetricKind {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Loss => MetricKind::Loss,
            Metric::Steps => MetricKind::Steps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    First,
    Last,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "mwa")]
    method: Method,
    #[arg(long, value_enum, default_value = "loss")]
    metric: Metric,
    #[arg(long, default_value_t = 1.0)]
    penalty: f64,
    #[arg(long, default_value_t = DEFAULT_POWER)]
    power: f64,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    interval: Option<u32>,
    #[arg(long, value_enum, default_value = "first")]
    base: Base,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value_t = DEFAULT_DROP_RATE)]
    drop_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    slerp_t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorKind {
    Synthetic,
    ExternalCommand,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Higher,
    Lower,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    ks: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_INTERVALS)]
    ms: Vec<u32>,
    /// Penalty factors for both metrics; defaults to a per-metric grid.
    #[arg(long, value_delimiter = ',')]
    penalties: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_POWER)]
    q: f64,
    #[arg(long, default_value_t = DEFAULT_SHORTLIST)]
    shortlist: usize,
    #[arg(long, value_enum, default_value = "synthetic")]
    evaluator: EvaluatorKind,
    /// Program run as `<program> [args..] <container>`.
    #[arg(long, required_if_eq("evaluator", "external-command"))]
    eval_command: Option<String>,
    #[arg(long = "eval-arg", allow_hyphen_values = true)]
    eval_args: Vec<String>,
    #[arg(long, value_enum, default_value = "higher")]
    orientation: Direction,
    #[arg(long)]
    skip_initial_validation: bool,
    /// Where to write the JSON report; stdout if absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory receiving every merged model.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NameCommand {
    /// Print the fields of a name as JSON.
    Parse { name: String },
    /// Print the name of a soup.
    Format {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        interval: Option<u32>,
        /// Weighting metric; unweighted if absent.
        #[arg(long, value_enum)]
        metric: Option<Metric>,
        #[arg(long, requires = "metric")]
        penalty: Option<f64>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    dimension: usize,
    #[arg(long, default_value_t = 100.0)]
    cond: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 100)]
    every: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn base_choice(base: Base) -> BaseChoice {
    match base {
        Base::First => BaseChoice::First,
        Base::Last => BaseChoice::Last,
    }
}

fn merge(args: MergeArgs) -> Result<()> {
    let loaded = load_run(&args.run.run_manifest, args.run.metrics.as_deref())?;
    let selection = SelectionSpec::new(args.k, args.interval)?;
    let method = match args.method {
        Method::Uniform => MethodSpec::Uniform,
        Method::Mwa => MethodSpec::Weighted {
            metric: args.metric.into(),
            penalty: args.penalty,
            power: args.power,
        },
        Method::Ties => MethodSpec::Ties(TiesParams::new(args.density)?),
        Method::DareTies => MethodSpec::DareTies(
            TiesParams::new(args.density)?,
            DareParams::new(args.drop_rate, args.seed)?,
        ),
        Method::Slerp => MethodSpec::Slerp { t: args.slerp_t },
    };
    let recipe = MergeRecipe {
        selection,
        method,
        base: base_choice(args.base),
    };
    let store = CheckpointStore::new(loaded.run);
    let model = execute_merge(&store, &recipe)?;
    let (container, manifest) = save_merge(&model, &args.out)?;
    println!("{}\t{}\t{}", manifest.name, container.display(), manifest.digest.hex);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let loaded = load_run(&args.run.run_manifest, args.run.metrics.as_deref())?;
    let evaluator: Box<dyn Evaluator> = match args.evaluator {
        EvaluatorKind::Synthetic => {
            let landscape = loaded.landscape.ok_or_else(|| {
                Error::InvalidConfig(
                    "the synthetic evaluator needs a run manifest with a landscape".into(),
                )
            })?;
            Box::new(SyntheticEvaluator::new(landscape))
        }
        EvaluatorKind::ExternalCommand => Box::new(ExternalCommandEvaluator {
            program: args.eval_command.expect("required by clap"),
            args: args.eval_args,
            orientation: match args.orientation {
                Direction::Higher => Orientation::HigherIsBetter,
                Direction::Lower => Orientation::LowerIsBetter,
            },
        }),
    };
    let config = SweepConfig {
        ks: args.ks,
        ms: args.ms,
        penalties: args
            .penalties
            .map(|p| PenaltyGrid::same(&p))
            .unwrap_or_default(),
        power: args.q,
        skip_initial_validation: args.skip_initial_validation,
    };
    let mut pipeline =
        Pipeline::new(CheckpointStore::new(loaded.run), evaluator.as_ref()).with_shortlist(args.shortlist);
    if let Some(out) = &args.out {
        pipeline = pipeline.with_output(out);
    }
    let report = pipeline.run_procedure(&config)?.to_json();
    match &args.report {
        Some(path) => write_file(path, &report),
        None => {
            print!("{}", String::from_utf8_lossy(&report));
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn name(command: NameCommand) -> Result<()> {
    match command {
        NameCommand::Parse { name } => {
            let parsed = parse_model_name(&name)?;
            println!("{}", serde_json::to_string(&parsed).expect("name serializes"));
        }
        NameCommand::Format {
            k,
            interval,
            metric,
            penalty,
        } => {
            let scheme = match metric {
                None => SoupScheme::Unweighted,
                Some(m) => SoupScheme::weighted(m.into(), penalty.unwrap_or(1.0)),
            };
            let name = MergeName::new(SelectionSpec::new(k, interval)?, scheme);
            println!("{}", format_name(&name));
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = TrajectoryConfig {
        dimension: args.dimension,
        condition_number: args.cond,
        noise_std: args.noise,
        learning_rate: args.lr,
        total_steps: args.steps,
        checkpoint_every: args.every,
        seed: args.seed,
    };
    let generated = generate_trajectory(&config, &args.out)?;
    println!("{}", generated.run_file.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Merge(args) => merge(args),
        Command::Sweep(args) => sweep(args),
        Command::Name(command) => name(command),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
