//! Command-line driver: synthetic data generation, training, matching,
//! evaluation, and oracle self-checks.
//!
//! Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error. Every run
//! echoes its fully resolved configuration to stdout and writes a run
//! manifest sidecar (the one artifact allowed to embed wall-clock time).

mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use corrgap::harness::{
    self, label_records, make_grid, match_pair, read_records_csv, rejection_curve, summarize,
    Criterion, MatchConfig, SynthSpec,
};
use corrgap::preprocess::Condition;
use corrgap::trainer::{self, TrainConfig};
use corrgap::{BandpassConfig, NetConfig};

#[derive(Parser)]
#[command(name = "corrgap", version, about = "NCC template matching with a trainable siamese preprocessor")]
struct Cli {
    /// Seed for all randomized work in this run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker-thread cap; 1 guarantees bit-reproducible outputs across
    /// machines of the same arithmetic class. Defaults to the available
    /// parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic section stack with ground-truth warp fields.
    Gen(GenArgs),
    /// Train the preprocessing network on a generated stack.
    Train(TrainArgs),
    /// Match a section pair on a triangular grid and write a record CSV.
    Match(MatchArgs),
    /// Label records against ground truth and write summaries and
    /// rejection curves.
    Eval(EvalArgs),
    /// Run the built-in oracle suites and report measured errors.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator spec JSON; desk-scale defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for sections, warp fields, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of sections.
    #[arg(long, default_value_t = 4)]
    sections: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Stack directory produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Network config JSON; desk-scale defaults when omitted.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Training config JSON; desk-scale defaults when omitted.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training-log CSV path; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Downsample factor applied to sections before pair sampling.
    #[arg(long, default_value_t = 3)]
    downsample: usize,
}

#[derive(Args)]
struct MatchArgs {
    /// Template-side and source-side section rasters (.f32).
    #[arg(long, num_args = 2, value_names = ["TEMPLATE", "SOURCE"])]
    pair: Vec<PathBuf>,
    /// Preprocessing condition.
    #[arg(long, value_parser = ["raw", "bandpass", "convnet"])]
    condition: String,
    /// Match geometry JSON (sizes, grid edge, downsample factor);
    /// desk-scale defaults when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Bandpass sigmas JSON; used by the bandpass condition.
    #[arg(long)]
    bandpass: Option<PathBuf>,
    /// Network checkpoint; required for the convnet condition.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output record CSV.
    #[arg(long)]
    out: PathBuf,
    /// Pair identifier recorded in the CSV; derived from file names when
    /// omitted.
    #[arg(long)]
    pair_id: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Record CSV produced by `match`.
    #[arg(long)]
    records: PathBuf,
    /// Stack directory holding the ground-truth warp fields.
    #[arg(long)]
    truth: PathBuf,
    /// Output directory for summary.json, histograms.csv, and
    /// rejection_curves.csv.
    #[arg(long)]
    out: PathBuf,
    /// Distance from truth beyond which a match is false (full-res px).
    #[arg(long, default_value_t = 10.0)]
    tolerance: f64,
    /// Neighbor-deviation flagging threshold (full-res px).
    #[arg(long, default_value_t = 50.0)]
    flag_threshold: f64,
    /// Neighbor radius for flagging (full-res px).
    #[arg(long, default_value_t = 320.0)]
    flag_radius: f64,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Test hook: scales every tolerance (values < 1 tighten the checks).
    #[arg(long, default_value_t = 1.0, hide = true)]
    tolerance_scale: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }

    let started = Instant::now();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(&cli, args, started),
        Command::Train(args) => cmd_train(&cli, args, started),
        Command::Match(args) => cmd_match(&cli, args, started),
        Command::Eval(args) => cmd_eval(&cli, args, started),
        Command::Selfcheck(args) => selfcheck::run(args.tolerance_scale),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} from {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} from {}", path.display()))
}

#[derive(Serialize)]
struct Manifest<C: Serialize> {
    build: String,
    seed: u64,
    threads: Option<usize>,
    wall_seconds: f64,
    config: C,
}

fn write_manifest<C: Serialize>(path: &Path, cli: &Cli, config: &C, started: Instant) -> Result<()> {
    let manifest = Manifest {
        build: format!("corrgap-{}", env!("CARGO_PKG_VERSION")),
        seed: cli.seed,
        threads: cli.threads,
        wall_seconds: started.elapsed().as_secs_f64(),
        config,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", path.display()))
}

fn echo_config<C: Serialize>(config: &C) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(config)?);
    Ok(())
}

fn cmd_gen(cli: &Cli, args: &GenArgs, started: Instant) -> Result<ExitCode> {
    let spec: SynthSpec = match &args.spec {
        Some(path) => load_json(path, "generator spec")?,
        None => SynthSpec::desk(),
    };

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        spec: &'a SynthSpec,
        sections: usize,
        out: &'a Path,
    }
    let resolved = Resolved {
        command: "gen",
        spec: &spec,
        sections: args.sections,
        out: &args.out,
    };
    echo_config(&resolved)?;

    let stack = harness::generate_stack(&spec, args.sections, cli.seed)?;
    harness::save_stack(&stack, &args.out)?;
    write_manifest(&args.out.join("run_manifest.json"), cli, &resolved, started)?;
    println!(
        "wrote {} sections to {}",
        stack.sections.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cli: &Cli, args: &TrainArgs, started: Instant) -> Result<ExitCode> {
    let mut net_cfg: NetConfig = match &args.net {
        Some(path) => load_json(path, "net config")?,
        None => NetConfig::default(),
    };
    let mut train_cfg: TrainConfig = match &args.train {
        Some(path) => load_json(path, "train config")?,
        None => TrainConfig::desk(),
    };
    net_cfg.seed = net_cfg.seed.wrapping_add(cli.seed);
    train_cfg.seed = train_cfg.seed.wrapping_add(cli.seed);

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        net: &'a NetConfig,
        train: &'a TrainConfig,
        downsample: usize,
        data: &'a Path,
        out: &'a Path,
    }
    let resolved = Resolved {
        command: "train",
        net: &net_cfg,
        train: &train_cfg,
        downsample: args.downsample,
        data: &args.data,
        out: &args.out,
    };
    echo_config(&resolved)?;

    let stack = harness::load_stack(&args.data)?;
    let dataset = harness::training_dataset(&stack, args.downsample)?;
    let ckpt_dir = args.out.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir).ok();
    }
    let outcome = trainer::train_with_checkpoints(
        &dataset,
        &net_cfg,
        &train_cfg,
        if train_cfg.checkpoint_every > 0 { ckpt_dir } else { None },
    )?;
    corrgap::convnet::save_checkpoint(&outcome.params, &args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| sidecar(&args.out, "log.csv"));
    trainer::write_log_csv(&outcome.log, &log_path)?;
    write_manifest(&sidecar(&args.out, "manifest.json"), cli, &resolved, started)?;
    println!(
        "trained {} iterations; checkpoint {}, log {}",
        outcome.log.len(),
        args.out.display(),
        log_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_match(cli: &Cli, args: &MatchArgs, started: Instant) -> Result<ExitCode> {
    let cfg: MatchConfig = match &args.grid {
        Some(path) => load_json(path, "match geometry")?,
        None => MatchConfig::desk(),
    };

    let condition = match args.condition.as_str() {
        "raw" => Condition::Raw,
        "bandpass" => {
            let bp: BandpassConfig = match &args.bandpass {
                Some(path) => load_json(path, "bandpass config")?,
                None => BandpassConfig::new(2.0, 12.0)?,
            };
            Condition::Bandpass(bp)
        }
        "convnet" => {
            let Some(ckpt) = &args.ckpt else {
                eprintln!("error: --condition convnet requires --ckpt <checkpoint>");
                return Ok(ExitCode::from(2));
            };
            Condition::Convnet(corrgap::convnet::load_checkpoint(ckpt)?)
        }
        other => bail!("unknown condition {other}"),
    };

    let template_path = &args.pair[0];
    let source_path = &args.pair[1];
    let pair_id = args.pair_id.clone().unwrap_or_else(|| {
        let stem = |p: &Path| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "x".into())
        };
        format!("{}-{}", stem(template_path), stem(source_path))
    });

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        condition: &'a str,
        geometry: &'a MatchConfig,
        pair_id: &'a str,
        template: &'a Path,
        source: &'a Path,
        out: &'a Path,
    }
    let resolved = Resolved {
        command: "match",
        condition: &args.condition,
        geometry: &cfg,
        pair_id: &pair_id,
        template: template_path,
        source: source_path,
        out: &args.out,
    };
    echo_config(&resolved)?;

    let template_section = corrgap::load_f32(template_path)?;
    let source_section = corrgap::load_f32(source_path)?;
    let nodes = make_grid(
        template_section.width(),
        template_section.height(),
        &cfg.grid_spec(),
    );
    let outcome = match_pair(
        &template_section,
        &source_section,
        &nodes,
        &condition,
        &cfg,
        &pair_id,
    )?;
    for skip in &outcome.skipped {
        eprintln!("skipped node {:?}: {}", skip.node, skip.reason);
    }
    harness::write_records_csv(&outcome.records, &args.out)?;
    write_manifest(&sidecar(&args.out, "manifest.json"), cli, &resolved, started)?;
    println!(
        "matched {} nodes ({} skipped) -> {}",
        outcome.records.len(),
        outcome.skipped.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, started: Instant) -> Result<ExitCode> {
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        records: &'a Path,
        truth: &'a Path,
        out: &'a Path,
        tolerance: f64,
        flag_threshold: f64,
        flag_radius: f64,
    }
    let resolved = Resolved {
        command: "eval",
        records: &args.records,
        truth: &args.truth,
        out: &args.out,
        tolerance: args.tolerance,
        flag_threshold: args.flag_threshold,
        flag_radius: args.flag_radius,
    };
    echo_config(&resolved)?;

    let mut records = read_records_csv(&args.records)?;
    let stack = harness::load_stack(&args.truth)?;

    // pair ids of the form "<i>-<j>" address stack sections; anything
    // else stays unlabeled and is excluded from curves
    let mut unknown = 0usize;
    let mut groups: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.pair_id.clone()).or_default().push(i);
    }
    for (pair_id, indices) in &groups {
        let parsed: Option<(usize, usize)> = pair_id
            .split_once('-')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
        match parsed {
            Some((a, b)) if a < stack.warps.len() && b < stack.warps.len() => {
                let mut subset: Vec<_> = indices.iter().map(|&i| records[i].clone()).collect();
                label_records(&mut subset, &stack, a, b, args.tolerance);
                harness::flag_neighbor_outliers(
                    &mut subset,
                    args.flag_radius,
                    args.flag_threshold,
                );
                for (&i, rec) in indices.iter().zip(subset) {
                    records[i] = rec;
                }
            }
            _ => unknown += indices.len(),
        }
    }
    if unknown > 0 {
        println!("{unknown} records had no matching truth and stay unlabeled");
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let summary = summarize(&records);
    harness::write_summary_json(&summary, &args.out.join("summary.json"))?;
    harness::write_histograms_csv(&summary, &args.out.join("histograms.csv"))?;

    let labeled: Vec<_> = records
        .iter()
        .filter(|r| r.label != harness::Label::Unknown)
        .cloned()
        .collect();
    if !labeled.is_empty() {
        let mut curves = Vec::new();
        for criterion in [Criterion::Norm, Criterion::RMax, Criterion::RDelta] {
            let mut thresholds: Vec<f64> = labeled
                .iter()
                .map(|r| match criterion {
                    Criterion::Norm => r.norm,
                    Criterion::RMax => r.r_max,
                    Criterion::RDelta => r.r_delta,
                })
                .collect();
            thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            thresholds.dedup();
            curves.push((criterion, rejection_curve(&labeled, criterion, &thresholds)?));
        }
        harness::write_rejection_csv(&curves, &args.out.join("rejection_curves.csv"))?;
    }
    write_manifest(&args.out.join("run_manifest.json"), cli, &resolved, started)?;
    println!("evaluation written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
