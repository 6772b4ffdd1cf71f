//! `octroi` command line: dataset generation, ROI preparation, training,
//! evaluation, model comparison and reports.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use octroi::eval::{DelongMode, ScoreSet};
use octroi::experiment::{
    read_scores, report, ExperimentConfig, ExperimentError, PairComparison, Runner,
};
use octroi::synth::{generate_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "octroi", version, about = "OCT ROI comparison for intermediate AMD classification")]
struct Cli {
    /// JSON config: experiment config, or synthetic-data config for `synth`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed (the data seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Variants trained concurrently.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset into --out.
    Synth,
    /// Create a run directory and extract ROIs for every variant.
    Prepare,
    /// Train variants of a prepared run.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Variant name, e.g. `cropping-bm-cho`; all variants if omitted.
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Score test sets with trained models and compute metrics.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Pairwise DeLong tests between score files.
    Compare {
        /// Run directory whose `scores/` to compare.
        #[arg(long, conflicts_with = "scores")]
        run: Option<PathBuf>,
        /// Score CSV files; the file stem names the model.
        #[arg(long, num_args = 2..)]
        scores: Vec<PathBuf>,
        /// Treat the score sets as the same test instances.
        #[arg(long)]
        paired: bool,
    },
    /// Full experiment from --config.
    Run,
    /// Recompute metrics and rewrite tables and plots of a run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type Res<T> = Result<T, CliError>;

fn experiment_config(cli: &Cli) -> Res<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_run(cli: &Cli, dir: &Path) -> Res<Runner> {
    let mut runner = Runner::open(dir)?;
    if let Some(t) = cli.threads {
        runner.config.threads = t.max(1);
    }
    Ok(runner)
}

fn selected(runner: &Runner, names: &[String]) -> Res<Vec<String>> {
    if names.is_empty() {
        return Ok(runner.variant_names());
    }
    for n in names {
        runner.variant(n)?;
    }
    Ok(names.to_vec())
}

fn synth(cli: &Cli) -> Res<()> {
    let mut cfg: SynthConfig = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    let m = generate_dataset(&cfg, &out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} scans, manifest at {}",
        m.entries.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn train(cli: &Cli, run: &Path, variants: &[String]) -> Res<()> {
    let runner = open_run(cli, run)?;
    for name in selected(&runner, variants)? {
        let set = runner.load_roi_set(&name)?;
        let (_, h) = runner.train_variant(&set)?;
        println!(
            "{name}: {} epochs, best epoch {}, model at {}",
            h.epochs.len(),
            h.best_epoch,
            runner.model_dir(&name).display()
        );
    }
    Ok(())
}

fn eval(cli: &Cli, run: &Path, variants: &[String]) -> Res<()> {
    let runner = open_run(cli, run)?;
    let names = selected(&runner, variants)?;
    for name in &names {
        let (model, _) = runner.load_model(name)?;
        let set = runner.load_roi_set(name)?;
        runner.score_variant(&model, &set)?;
    }
    let scores: Vec<(String, ScoreSet)> = runner
        .load_scores_of(&names)?;
    let evaluation = runner.evaluate(&scores)?;
    print!("{}", report::table1_md(&evaluation));
    Ok(())
}

fn compare(cli: &Cli, run: Option<&Path>, files: &[PathBuf], paired: bool) -> Res<()> {
    let (scores, default_mode) = match run {
        Some(dir) => {
            let runner = open_run(cli, dir)?;
            (runner.load_scores()?, runner.config.eval.delong_mode)
        }
        None => {
            if files.len() < 2 {
                return Err(CliError::Validation(
                    "compare needs --run or at least two --scores files".into(),
                ));
            }
            let mut sets = Vec::new();
            for f in files {
                let rows = read_scores(f).map_err(|e| CliError::Validation(e.to_string()))?;
                let set = octroi::experiment::score_set_from_rows(&rows)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", f.display())))?;
                let name = f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| f.display().to_string());
                sets.push((name, set));
            }
            (sets, DelongMode::Unpaired)
        }
    };
    let mode = if paired { DelongMode::Paired } else { default_mode };
    let comparisons: Vec<PairComparison> = octroi::experiment::pairwise_delong(&scores, mode)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let names: Vec<String> = scores.iter().map(|(n, _)| n.clone()).collect();
    let matrix = report::table2_csv(&names, &comparisons);
    for row in &matrix {
        println!("{}", row.join(","));
    }
    if let Some(out) = &cli.out {
        let io = |e: std::io::Error| CliError::Runtime(e.to_string());
        report::write_csv(&out.join("table2.csv"), &matrix).map_err(io)?;
        report::write_csv(&out.join("comparisons.csv"), &report::comparisons_csv(&comparisons))
            .map_err(io)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Res<()> {
    let cfg = experiment_config(cli)?;
    let results = Runner::create(cfg)?.run()?;
    print!("{}", report::table1_md(&results.evaluation));
    for t in &results.timings {
        eprintln!("{:>10}: {:.1}s", t.stage, t.seconds);
    }
    println!("run directory: {}", results.run_dir.display());
    Ok(())
}

fn report_cmd(cli: &Cli, run: &Path) -> Res<()> {
    let runner = open_run(cli, run)?;
    let scores = runner.load_scores()?;
    let evaluation = runner.evaluate(&scores)?;
    let histories = runner.load_histories();
    for p in runner.report(&evaluation, &scores, &histories)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Synth => synth(cli),
        Command::Prepare => {
            let runner = Runner::create(experiment_config(cli)?)?;
            let data = runner.prepare()?;
            println!(
                "prepared {} variants from {} scans in {}",
                data.rois.len(),
                data.manifest.entries.len(),
                runner.run_dir.display()
            );
            Ok(())
        }
        Command::Train { run, variant } => train(cli, run, variant),
        Command::Eval { run, variant } => eval(cli, run, variant),
        Command::Compare {
            run: dir,
            scores,
            paired,
        } => compare(cli, dir.as_deref(), scores, *paired),
        Command::Run => run(cli),
        Command::Report { run } => report_cmd(cli, run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
