use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use phd_cli::analysis::{load_manifest, run_consistency, write_consistency, ConsistencyJob};
use phd_cli::evaluate::{cmd_evaluate, with_skeleton_variants, EvalJob};
use phd_cli::study::{serve, JsonLinesStore, StudyConfig, StudyState};
use phd_cli::cmd_skeletonize;
use phd_eval::consistency::{parse_sweep, DEFAULT_VALIDITY_THRESHOLD};
use phd_eval::{BinarizationPolicy, MetricDescriptor, Polarity};

const DEFAULT_METRICS: &str = "f1,iou,dice,phd:0,phd:1,phd:3,phd:5";

#[derive(Parser)]
#[command(name = "phd", version, about = "Perceptual Hausdorff Distance toolkit for thin-structure segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score prediction directories against a ground-truth directory.
    Evaluate(EvaluateArgs),
    /// Thin a mask with Zhang-Suen and write the skeleton.
    Skeletonize {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        binarize: BinarizeArgs,
    },
    /// Measure metric agreement with human preference votes.
    Consistency(ConsistencyArgs),
    /// Preference-study service.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Dark,
    Light,
}

#[derive(Args)]
struct BinarizeArgs {
    /// Which side of the threshold is membrane.
    #[arg(long, value_enum, default_value = "dark")]
    polarity: PolarityArg,
    #[arg(long, default_value_t = 128)]
    threshold: u8,
}

impl BinarizeArgs {
    fn policy(&self) -> BinarizationPolicy {
        let polarity = match self.polarity {
            PolarityArg::Dark => Polarity::DarkIsForeground,
            PolarityArg::Light => Polarity::LightIsForeground,
        };
        BinarizationPolicy::new(self.threshold, polarity)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    /// NAME=DIR, repeatable.
    #[arg(long = "pred", required = true, value_parser = parse_method)]
    preds: Vec<(String, PathBuf)>,
    #[arg(long, default_value = DEFAULT_METRICS)]
    metrics: String,
    /// Also report the skeletonized variant of every pixel metric.
    #[arg(long)]
    sk: bool,
    #[command(flatten)]
    binarize: BinarizeArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// JSON object: method name to {prediction stem: ground-truth stem}.
    #[arg(long)]
    rename: Option<PathBuf>,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    votes: PathBuf,
    #[arg(long, default_value = DEFAULT_METRICS)]
    metrics: String,
    #[arg(long)]
    sk: bool,
    /// PHD tolerance sweep, START..END:STEP.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    tie_epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_VALIDITY_THRESHOLD)]
    validity_threshold: u32,
    #[command(flatten)]
    binarize: BinarizeArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
}

#[derive(Subcommand)]
enum StudyCommand {
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        votes: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_VALIDITY_THRESHOLD)]
        validity_threshold: u32,
        #[arg(long, default_value_t = 0.0)]
        tie_epsilon: f64,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected NAME=DIR, got {s:?}")),
    }
}

fn metrics(spec: &str, sk: bool) -> Result<Vec<MetricDescriptor>> {
    let list = MetricDescriptor::parse_list(spec)?;
    Ok(if sk { with_skeleton_variants(&list) } else { list })
}

fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let renames: BTreeMap<String, BTreeMap<String, String>> = match &args.rename {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => BTreeMap::new(),
    };
    let job = EvalJob {
        gt_dir: args.gt,
        preds: args.preds,
        metrics: metrics(&args.metrics, args.sk)?,
        policy: args.binarize.policy(),
        out_dir: args.out,
        workers: args.workers,
        renames,
    };
    eprintln!("evaluate: {} workers", job.workers);
    let report = cmd_evaluate(&job)?;
    for f in &report.failures {
        eprintln!("failed: {} {} {}: {}", f.method, f.image, f.metric, f.message);
    }
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn consistency(args: ConsistencyArgs) -> Result<ExitCode> {
    if !(args.tie_epsilon.is_finite() && args.tie_epsilon >= 0.0) {
        bail!("--tie-epsilon must be a non-negative number");
    }
    let job = ConsistencyJob {
        manifest: args.manifest,
        votes: args.votes,
        metrics: metrics(&args.metrics, args.sk)?,
        sweep: args.sweep.as_deref().map(parse_sweep).transpose().map_err(|e| anyhow!(e))?,
        tie_epsilon: args.tie_epsilon,
        validity_threshold: args.validity_threshold,
        policy: args.binarize.policy(),
    };
    let output = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.max(1))
        .build()?
        .install(|| run_consistency(&job))?;
    for path in write_consistency(&output, &args.out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn study(command: StudyCommand) -> Result<ExitCode> {
    let StudyCommand::Serve {
        manifest,
        votes,
        bind,
        batch_size,
        validity_threshold,
        tie_epsilon,
    } = command;
    let groups = load_manifest(&manifest)?;
    let (store, existing) = JsonLinesStore::open(&votes)?;
    let config = StudyConfig {
        validity_threshold,
        tie_epsilon,
        batch_size,
    };
    let state = Arc::new(StudyState::new(groups, &existing, Box::new(store), config)?);
    eprintln!("serving {} on http://{bind} ({} votes so far)", manifest.display(), existing.len());
    tokio::runtime::Runtime::new()?.block_on(serve(&bind, state))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Skeletonize { input, output, binarize } => {
            let n = cmd_skeletonize(&input, &output, binarize.policy())?;
            eprintln!("{n} skeleton pixels written to {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Consistency(args) => consistency(args),
        Command::Study { command } => study(command),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
