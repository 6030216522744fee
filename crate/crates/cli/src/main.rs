//! `ttpeid`: compress benchmark tensors, run parameter sweeps, check golden records.

mod config;

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ttpeid::eval::{
    baseline, baseline_from_pivots, reduction_factor, run_method, run_sweep, summarize,
    write_csv, write_summary_csv, Outcome, SampleSet, SweepRow, CSV_HEADER,
};
use ttpeid::{verify_golden, GoldenRecord, Method, PeidError, PivotSets, SweepConfig};

use crate::config::{Run, RunConfig};

/// Exit code for bad flags, configs, or input files.
const EXIT_USAGE: u8 = 2;
/// Exit code for failures inside the numerical routines.
const EXIT_NUMERICAL: u8 = 3;
/// Exit code for a golden record that drifted out of its bands.
const EXIT_DRIFT: u8 = 1;

#[derive(Parser)]
#[command(name = "ttpeid", version, about = "Tensor-train compression with projection-enhanced skeletons")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "PEID_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress one benchmark tensor and report its sampled error.
    Compress {
        /// JSON run config; flags given on the command line take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: RunConfig,
    },
    /// Run a sweep config and write one CSV row per cell.
    Sweep {
        config: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write medians and means per (algorithm, oversampling) cell.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a sweep config and store it with its output as a golden record.
    MakeGolden {
        config: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun golden records and compare against their stored output.
    VerifyGolden {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().find_map(|c| c.downcast_ref::<PeidError>()).is_some_and(|p| {
        !matches!(
            p,
            PeidError::Config(_)
                | PeidError::Validation { .. }
                | PeidError::Io(_)
                | PeidError::Json(_)
                | PeidError::Csv(_)
        )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        anyhow::ensure!(t > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Compress { config, flags } => {
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            compress(&flags.over(base).resolve()?)?;
        }
        Command::Sweep { config, out, summary } => {
            let cfg = load_sweep(&config)?;
            let rows = run_sweep(&cfg)?;
            match out {
                Some(p) => write_csv(&rows, create(&p)?)?,
                None => write_csv(&rows, io::stdout().lock())?,
            }
            if let Some(p) = summary {
                write_summary_csv(&summarize(&rows), create(&p)?)?;
            }
        }
        Command::MakeGolden { config, name, out } => {
            let record = GoldenRecord::generate(name, load_sweep(&config)?)?;
            let mut w = create(&out)?;
            record.write_json(&mut w)?;
            w.flush()?;
        }
        Command::VerifyGolden { records } => {
            let mut all_passed = true;
            for path in &records {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let record = GoldenRecord::read_json(BufReader::new(f))
                    .with_context(|| format!("reading golden record {}", path.display()))?;
                let report = verify_golden(&record)?;
                if report.passed() {
                    println!("PASS {} ({} rows)", report.name, report.rows);
                } else {
                    all_passed = false;
                    println!("FAIL {} ({} rows, {} diffs)", report.name, report.rows, report.diffs.len());
                    for d in &report.diffs {
                        println!("  {d}");
                    }
                }
            }
            if !all_passed {
                return Ok(ExitCode::from(EXIT_DRIFT));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_sweep(path: &Path) -> Result<SweepConfig> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("parsing sweep config {}", path.display()))
}

fn compress(run: &Run) -> Result<()> {
    let oracle = run.tensor.build()?;
    let oracle = oracle.as_ref();
    let samples = SampleSet::draw(oracle, run.samples, run.sample_seed);
    let base = match &run.pivots {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let pivots = PivotSets::read_json(BufReader::new(f))
                .with_context(|| format!("reading pivots {}", path.display()))?;
            baseline_from_pivots(oracle, pivots, &samples)?
        }
        None => baseline(oracle, &run.aca, &samples)?,
    };
    log::info!("skeleton ranks {:?}, sampled error {:e}", base.pivots.ranks(), base.err);
    if let Some(path) = &run.save_pivots {
        let mut w = create(path)?;
        base.pivots.write_json(&mut w)?;
        w.flush()?;
    }

    let start = Instant::now();
    let (tt, touches) = if run.method == Method::Aca {
        (base.skeleton.clone(), base.touches)
    } else {
        run_method(oracle, &base.pivots, run.method, run.oversampling, run.seed)?
    };
    let t_peid_s = if run.method == Method::Aca { 0.0 } else { start.elapsed().as_secs_f64() };
    let err = samples.rel_err(&tt)?.value;

    let row = SweepRow {
        family: run.tensor.family.to_string(),
        d: run.tensor.d,
        n: run.tensor.n,
        algorithm: run.method.to_string(),
        alpha_or_p: run.oversampling.map_or_else(|| "-".into(), |o| o.label()),
        seed: run.seed,
        rep: 0,
        ranks: tt.ranks(),
        outcome: Outcome::Ok { err, rf: reduction_factor(base.err, err) },
        touches,
        t_pivot_s: base.seconds,
        t_peid_s,
    };
    if let Some(path) = &run.out {
        let mut w = create(path)?;
        tt.write_json(&mut w)?;
        w.flush()?;
    }
    match &run.csv {
        Some(path) => append_row(path, &row),
        None => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(CSV_HEADER)?;
            w.write_record(row.record())?;
            w.flush()?;
            Ok(())
        }
    }
}

/// Appends `row`, writing the header first if the file is new or empty.
fn append_row(path: &Path, row: &SweepRow) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    w.write_record(row.record())?;
    w.flush()?;
    Ok(())
}
