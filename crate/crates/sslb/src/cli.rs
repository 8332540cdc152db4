//! Command-line front end: `synth`, `train`, `experiment` and `report`.
//!
//! Every option resolves as CLI flag > `--config` file entry > built-in
//! default, and the resolved values are echoed to `config_resolved.txt` in
//! the output directory so a run can be replayed exactly. Exit codes: 0 on
//! success, 2 on usage errors (nothing is written), 3 on runtime failures.

use crate::data::{
    generate_synthetic, load_image_directory, save_dataset, ImageDataset, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::experiment::{grid_scenario, run_training, GridConfig, MethodId, TrainConfig};
use crate::summary::{
    applicable_comparisons, default_comparisons, render_summary_text, summarize,
    write_summary_files, RESULTS_HEADER,
};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const P_THRESHOLD: f64 = 0.1;

#[derive(Parser)]
#[command(name = "sslb", version, about = "Semi-supervised image classification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class image dataset on disk.
    Synth(SynthArgs),
    /// Train one method on one sampled scenario and print its accuracy curve.
    Train(RunArgs),
    /// Run the method × imbalance × n_l × seed grid and summarize it.
    Experiment(RunArgs),
    /// Recompute summary tables from an existing results.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (default: --out resolution).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Observations per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Class-overlap difficulty in (0, 1].
    #[arg(long)]
    difficulty: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Image dataset directory with `neg/` and `pos/` subdirectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate the working dataset in memory instead of reading --data.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed: scenario and init seeds derive from it (train), and the
    /// synthetic pool uses it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of grid seeds 0..seeds (experiment only).
    #[arg(long)]
    seeds: Option<u64>,
    /// Method to train (train), or restriction of the grid (experiment).
    #[arg(long)]
    method: Option<String>,
    /// Labelled-set size; restricts the grid when given to experiment.
    #[arg(long)]
    nl: Option<usize>,
    /// Labelled negative-class fraction; restricts the grid for experiment.
    #[arg(long)]
    neg_frac: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Peak learning rate of the 1-cycle schedule.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Unlabelled-loss weight γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Augmentations per unlabelled observation.
    #[arg(long)]
    k: Option<usize>,
    /// Sharpening temperature ρ.
    #[arg(long)]
    temperature: Option<f64>,
    /// MixUp Beta(α, α) parameter.
    #[arg(long)]
    alpha: Option<f64>,
    /// Ramp-up horizon in optimizer steps.
    #[arg(long)]
    rampup: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Synthetic pool size per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Synthetic difficulty in (0, 1].
    #[arg(long)]
    difficulty: Option<f64>,
    /// Worker threads for the grid (experiment only).
    #[arg(long)]
    jobs: Option<usize>,
    /// Skip runs already present in results.csv (experiment only).
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing results.csv (default: --out resolution).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 3,
            }
        }
    }
}

/// `--config` file contents: `key=value` lines, `#` comments.
struct Overlay {
    entries: BTreeMap<String, String>,
}

impl Overlay {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Config(format!(
                        "config line {} is not key=value: {line:?}",
                        i + 1
                    )));
                };
                entries.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { entries })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key {key} has unreadable value {v:?}"))
            }),
        }
    }

    fn get<T: FromStr>(&self, key: &str, cli: Option<T>, default: T) -> Result<T> {
        Ok(match cli {
            Some(v) => v,
            None => self.parse(key)?.unwrap_or(default),
        })
    }

    fn get_opt<T: FromStr>(&self, key: &str, cli: Option<T>) -> Result<Option<T>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.parse(key),
        }
    }
}

fn out_dir(cli: Option<PathBuf>, overlay: &Overlay) -> Result<PathBuf> {
    if let Some(dir) = overlay.get_opt("out", cli)? {
        return Ok(dir);
    }
    Ok(std::env::var_os("SSLB_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| "sslb_out".into()))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let overlay = Overlay::load(args.config.as_deref())?;
    let out = out_dir(args.out, &overlay)?;
    let seed = overlay.get("seed", args.seed, 0)?;
    let per_class = overlay.get("per_class", args.per_class, 102)?;
    let size = overlay.get("size", args.size, 110)?;
    let difficulty = overlay.get("difficulty", args.difficulty, 0.5)?;

    let dataset = generate_synthetic(seed, per_class, size, difficulty)?;
    save_dataset(&dataset, &out)
        .map_err(|e| Error::Config(format!("cannot write dataset to {}: {e}", out.display())))?;
    let (neg, pos) = dataset.class_counts();
    println!(
        "wrote {} images ({neg} neg, {pos} pos, {size}×{size}px, difficulty {difficulty}) to {}",
        dataset.len(),
        out.display()
    );
    Ok(())
}

/// Everything a `train` or `experiment` invocation resolved to.
struct ResolvedRun {
    data: Option<PathBuf>,
    synthetic: bool,
    out: PathBuf,
    seed: u64,
    seeds: u64,
    method: Option<MethodId>,
    nl: Option<usize>,
    neg_frac: Option<f64>,
    train: TrainConfig,
    per_class: usize,
    difficulty: f64,
    jobs: usize,
}

fn resolve_run(args: &RunArgs) -> Result<ResolvedRun> {
    let overlay = Overlay::load(args.config.as_deref())?;
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: overlay.get("epochs", args.epochs, defaults.epochs)?,
        batch_size: overlay.get("batch", args.batch, defaults.batch_size)?,
        max_lr: overlay.get("lr", args.lr, defaults.max_lr)?,
        weight_decay: overlay.get("weight_decay", args.weight_decay, defaults.weight_decay)?,
        mixmatch: crate::mixmatch::MixMatchConfig {
            k: overlay.get("k", args.k, defaults.mixmatch.k)?,
            temperature: overlay.get("temperature", args.temperature, defaults.mixmatch.temperature)?,
            alpha: overlay.get("alpha", args.alpha, defaults.mixmatch.alpha)?,
            gamma: overlay.get("gamma", args.gamma, defaults.mixmatch.gamma)?,
            rampup_horizon: overlay.get("rampup", args.rampup, defaults.mixmatch.rampup_horizon)?,
        },
        image_size: overlay.get("image_size", args.image_size, defaults.image_size)?,
    };
    train.validate()?;
    let method = match overlay.get_opt("method", args.method.clone())? {
        Some(name) => Some(MethodId::from_str(&name)?),
        None => None,
    };
    let resolved = ResolvedRun {
        data: overlay.get_opt("data", args.data.clone())?,
        synthetic: overlay.get("synthetic", args.synthetic.then_some(true), false)?,
        out: out_dir(args.out.clone(), &overlay)?,
        seed: overlay.get("seed", args.seed, 0)?,
        seeds: overlay.get("seeds", args.seeds, 10)?,
        method,
        nl: overlay.get_opt("nl", args.nl)?,
        neg_frac: overlay.get_opt("neg_frac", args.neg_frac)?,
        train,
        per_class: overlay.get("per_class", args.per_class, 128)?,
        difficulty: overlay.get("difficulty", args.difficulty, 0.5)?,
        jobs: overlay.get("jobs", args.jobs, 1)?,
    };
    if resolved.data.is_none() && !resolved.synthetic {
        return Err(Error::Config("give a dataset via --data <dir> or --synthetic".into()));
    }
    if resolved.data.is_some() && resolved.synthetic {
        return Err(Error::Config("--data and --synthetic are mutually exclusive".into()));
    }
    Ok(resolved)
}

/// (positives, negatives) pools for scenario sampling.
fn load_pools(resolved: &ResolvedRun) -> Result<(ImageDataset, ImageDataset)> {
    let dataset = match &resolved.data {
        Some(dir) => load_image_directory(dir, resolved.train.image_size)?.0,
        None => generate_synthetic(
            resolved.seed,
            resolved.per_class,
            resolved.train.image_size,
            resolved.difficulty,
        )?,
    };
    let (neg, pos) = dataset.split_by_class();
    Ok((pos, neg))
}

/// The resolved-config echo. Lines are sorted; replaying the file through
/// `--config` reproduces the run. `jobs` never changes results, so resume
/// compatibility ignores it.
fn render_echo(resolved: &ResolvedRun, include_grid_keys: bool) -> String {
    let mut lines: Vec<String> = Vec::new();
    match &resolved.data {
        Some(dir) => lines.push(format!("data={}", dir.display())),
        None => {
            lines.push("synthetic=true".to_string());
            lines.push(format!("per_class={}", resolved.per_class));
            lines.push(format!("difficulty={}", resolved.difficulty));
        }
    }
    lines.push(format!("seed={}", resolved.seed));
    if include_grid_keys {
        lines.push(format!("seeds={}", resolved.seeds));
        lines.push(format!("jobs={}", resolved.jobs));
    }
    if let Some(method) = resolved.method {
        lines.push(format!("method={method}"));
    }
    if let Some(nl) = resolved.nl {
        lines.push(format!("nl={nl}"));
    }
    if let Some(nf) = resolved.neg_frac {
        lines.push(format!("neg_frac={nf}"));
    }
    let t = &resolved.train;
    lines.push(format!("epochs={}", t.epochs));
    lines.push(format!("batch={}", t.batch_size));
    lines.push(format!("lr={}", t.max_lr));
    lines.push(format!("weight_decay={}", t.weight_decay));
    lines.push(format!("gamma={}", t.mixmatch.gamma));
    lines.push(format!("k={}", t.mixmatch.k));
    lines.push(format!("temperature={}", t.mixmatch.temperature));
    lines.push(format!("alpha={}", t.mixmatch.alpha));
    lines.push(format!("rampup={}", t.mixmatch.rampup_horizon));
    lines.push(format!("image_size={}", t.image_size));
    lines.sort();
    let mut out = String::new();
    for line in lines {
        writeln!(out, "{line}").expect("string write");
    }
    out
}

fn comparable(echo: &str) -> String {
    echo.lines().filter(|l| !l.starts_with("jobs=")).collect::<Vec<_>>().join("\n")
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let resolved = resolve_run(&args)?;
    let method = resolved.method.unwrap_or(MethodId::MixMatchPbc);
    let scenario_base = ScenarioConfig::default();
    let n_l = resolved.nl.unwrap_or(scenario_base.n_l);
    let neg_frac = resolved.neg_frac.unwrap_or(scenario_base.neg_fraction);

    let (pos, neg) = load_pools(&resolved)?;
    let scenario = grid_scenario(&pos, &neg, &scenario_base, resolved.seed, n_l, neg_frac)?;

    std::fs::create_dir_all(&resolved.out)?;
    std::fs::write(resolved.out.join("config_resolved.txt"), render_echo(&resolved, false))?;
    std::fs::write(resolved.out.join("scenario.txt"), scenario.manifest())?;

    let result = run_training(&scenario, method, &resolved.train, resolved.seed)?;
    for (epoch, acc) in result.epoch_accuracy.iter().enumerate() {
        println!("epoch {} val_acc {acc}", epoch + 1);
    }
    if let Some(epoch) = result.failed_at {
        println!("FAILED at epoch {} (non-finite loss)", epoch + 1);
    }
    println!("BEST {}", result.best_val_acc);

    let results_path = resolved.out.join("results.csv");
    std::fs::write(
        &results_path,
        format!("{RESULTS_HEADER}\n{}\n", crate::summary::result_to_row(&result)),
    )?;
    Ok(())
}

fn cmd_experiment(args: RunArgs) -> Result<()> {
    let resume = args.resume;
    let resolved = resolve_run(&args)?;
    let grid = GridConfig {
        methods: match resolved.method {
            Some(m) => vec![m],
            None => MethodId::ALL.to_vec(),
        },
        neg_fractions: match resolved.neg_frac {
            Some(nf) => vec![nf],
            None => vec![0.5, 0.7, 0.8],
        },
        n_ls: match resolved.nl {
            Some(nl) => vec![nl],
            None => vec![10, 15, 20],
        },
        seeds: resolved.seeds,
        train: resolved.train.clone(),
        scenario: ScenarioConfig::default(),
        jobs: resolved.jobs,
    };
    grid.validate()?;
    let (pos, neg) = load_pools(&resolved)?;

    let echo = render_echo(&resolved, true);
    let echo_path = resolved.out.join("config_resolved.txt");
    if resume && echo_path.exists() {
        let prior = std::fs::read_to_string(&echo_path)?;
        if comparable(&prior) != comparable(&echo) {
            return Err(Error::Contract(format!(
                "cannot resume: {} was produced by a different configuration",
                echo_path.display()
            )));
        }
    }
    std::fs::create_dir_all(&resolved.out)?;
    std::fs::write(&echo_path, &echo)?;

    let total_runs =
        grid.methods.len() * grid.neg_fractions.len() * grid.n_ls.len() * grid.seeds as usize;
    println!(
        "running {total_runs} runs ({} methods × {} fractions × {} n_l × {} seeds) with {} job(s)",
        grid.methods.len(),
        grid.neg_fractions.len(),
        grid.n_ls.len(),
        grid.seeds,
        grid.jobs
    );
    let results = crate::experiment::run_grid(&pos, &neg, &grid, &resolved.out, resume)?;

    let comparisons = applicable_comparisons(&results, &default_comparisons());
    let summary = summarize(&results, &comparisons, P_THRESHOLD)?;
    write_summary_files(&resolved.out, &summary)?;
    print!("{}", render_summary_text(&summary));
    println!(
        "\nwrote {} result rows and summary tables to {}",
        results.len(),
        resolved.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let overlay = Overlay::load(args.config.as_deref())?;
    let out = out_dir(args.out, &overlay)?;
    let results = crate::experiment::read_results_csv(&out.join("results.csv"))?;
    let comparisons = applicable_comparisons(&results, &default_comparisons());
    let summary = summarize(&results, &comparisons, P_THRESHOLD)?;
    write_summary_files(&out, &summary)?;
    print!("{}", render_summary_text(&summary));
    Ok(())
}
