use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use intreg::bench::{
    aggregate_and_rank, mean_and_sample_std, read_reports_jsonl, run_benchmark, write_plot_data_csv,
    write_rank_counts_csv, write_reports_jsonl, write_summary_csv, BenchConfig, FoldReport,
};
use intreg::dataset::Dataset;
use intreg::models::{ModelKind, Profile};
use intreg::synth::{generate_synthetic, SynthKind, SynthSpec};

/// Seed used when neither `--seed` nor `INTREG_SEED` is given.
const DEFAULT_SEED: u64 = 2024;

#[derive(Parser, Debug)]
#[command(name = "intreg", version, about = "Interval regression models and benchmark")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "INTREG_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,

    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a simulated dataset as CSV.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cross-validate one model on one dataset.
    Run {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Also write the fold reports as JSON lines.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate several models on several datasets.
    Bench {
        /// Dataset CSV files (repeatable).
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Simulated datasets to generate with the standard shape (repeatable).
        #[arg(long)]
        synth: Vec<SynthKind>,
        /// Models to run, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelKind>,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        render: RenderArgs,
        /// Record training time per cell (reports are then not reproducible).
        #[arg(long)]
        timing: bool,
        /// Attach access probes and fail if training reads any test row.
        #[arg(long)]
        audit: bool,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Re-render summary, rank and plot tables from stored reports.
    Report {
        #[arg(long)]
        reports: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Shrink the forest, network and boosting searches.
    #[arg(long)]
    fast: bool,
    /// Search the full boosting grid instead of a random sample.
    #[arg(long)]
    exhaustive_aft: bool,
    /// Replace missing lower bounds with this value before boosting.
    #[arg(long, value_name = "VALUE", allow_negative_numbers = true)]
    clamp_left_censored: Option<f64>,
}

impl ProfileArgs {
    fn profile(&self) -> Profile {
        Profile {
            fast: self.fast,
            exhaustive_aft: self.exhaustive_aft,
            clamp_left_censored: self.clamp_left_censored,
            ..Profile::default()
        }
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Plot data summarizes log errors instead of raw errors.
    #[arg(long)]
    log_scale: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth { kind, n, m, out } => {
            let spec = SynthSpec {
                kind,
                n_instances: n,
                n_features: m,
                seed,
            };
            let data = generate_synthetic(&spec)?;
            data.save_csv(&out).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            model,
            data,
            profile,
            out,
        } => {
            let dataset = load(&data)?;
            let config = BenchConfig::new(vec![model], profile.profile(), seed);
            let run = run_benchmark(&[dataset], &config)?;
            print_run(&run.reports);
            if let Some(path) = out {
                write_file(&path, |w| Ok(write_reports_jsonl(&run.reports, w)?))?;
            }
            Ok(exit_for(&run.reports))
        }
        Command::Bench {
            data,
            synth,
            models,
            profile,
            render,
            timing,
            audit,
            out,
        } => {
            let mut datasets = Vec::new();
            for path in &data {
                datasets.push(load(path)?);
            }
            for kind in synth {
                datasets.push(generate_synthetic(&SynthSpec::standard(kind, seed))?);
            }
            if datasets.is_empty() {
                bail!("no datasets given (use --data or --synth)");
            }
            let models = if models.is_empty() {
                ModelKind::ALL.to_vec()
            } else {
                models
            };
            let mut config = BenchConfig::new(models, profile.profile(), seed);
            config.record_timing = timing;
            config.audit = audit;
            let run = run_benchmark(&datasets, &config)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join("reports.jsonl"), |w| Ok(write_reports_jsonl(&run.reports, w)?))?;
            render_tables(&run.reports, render.log_scale, &out)?;
            let leaks: Vec<_> = run.audits.iter().filter(|a| a.test_rows_touched > 0).collect();
            for a in &leaks {
                eprintln!(
                    "leak: {}/{}/fold {} read {} test rows during training",
                    a.dataset, a.model, a.fold, a.test_rows_touched
                );
            }
            let code = exit_for(&run.reports);
            Ok(if leaks.is_empty() { code } else { ExitCode::FAILURE })
        }
        Command::Report { reports, render, out } => {
            let file = File::open(&reports).with_context(|| format!("opening {}", reports.display()))?;
            let reports = read_reports_jsonl(BufReader::new(file))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            render_tables(&reports, render.log_scale, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path) -> Result<Dataset> {
    Dataset::load_csv(path).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn render_tables(reports: &[FoldReport], log_scale: bool, out: &Path) -> Result<()> {
    let summary = aggregate_and_rank(reports);
    write_file(&out.join("summary.csv"), |w| Ok(write_summary_csv(&summary, w)?))?;
    write_file(&out.join("rank_counts.csv"), |w| Ok(write_rank_counts_csv(&summary, w)?))?;
    write_file(&out.join("plot_data.csv"), |w| Ok(write_plot_data_csv(reports, log_scale, w)?))?;
    Ok(())
}

fn print_run(reports: &[FoldReport]) {
    for r in reports {
        match (r.test_error, &r.error) {
            (Some(e), None) => {
                let params: Vec<String> = r.selected_hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("fold {}: error {e:.6} [{}]", r.fold, params.join(" "));
            }
            (_, err) => println!("fold {}: FAILED {}", r.fold, err.as_deref().unwrap_or("")),
        }
    }
    let errors: Vec<f64> = reports.iter().filter_map(|r| r.test_error).collect();
    if errors.len() == reports.len() && !errors.is_empty() {
        let (mean, std) = mean_and_sample_std(&errors);
        println!("mean {mean:.6} std {std:.6}");
    }
}

/// Success iff every cell completed; failures are listed on stderr.
fn exit_for(reports: &[FoldReport]) -> ExitCode {
    let failed: Vec<&FoldReport> = reports.iter().filter(|r| !r.is_ok()).collect();
    for r in &failed {
        eprintln!(
            "failed: {}/{}/fold {}: {}",
            r.dataset,
            r.model,
            r.fold,
            r.error.as_deref().unwrap_or("no error recorded")
        );
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
