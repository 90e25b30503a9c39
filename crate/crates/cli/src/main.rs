mod normalize;
mod plan;
mod runner;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use plan::{PlanFile, TEMPLATE};

#[derive(Parser)]
#[command(name = "rmsim", version, about = "Relational memory engine simulator and benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan file and emit CSV.
    Run {
        plan: PathBuf,
        /// Output file; overrides `plan.output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis with all other parameters taken from a config file.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        queries: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        paths: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rows: Option<u64>,
        #[arg(long)]
        row_size: Option<u64>,
        #[arg(long)]
        column_width: Option<u64>,
        #[arg(long)]
        offset: Option<u64>,
        /// Plan file supplying parameters not given on the command line.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append latency ratios against the direct-row cells to a results CSV.
    Normalize {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle and invariant self-checks.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a plan file with every default spelled out.
    Template,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(config: Option<&Path>) -> Result<PlanFile> {
    Ok(match config {
        Some(p) => PlanFile::load(p)?,
        None => PlanFile::default(),
    })
}

fn execute(file: PlanFile, out: Option<PathBuf>) -> Result<ExitCode> {
    let plan = file.resolve()?;
    let result = runner::run_plan(&plan)?;
    let out = out.or_else(|| plan.output.clone());
    runner::write_csv(&result.records, sink(out.as_deref())?)?;
    for s in &result.skipped {
        eprintln!("skipped {s}");
    }
    if result.mismatches.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for m in &result.mismatches {
        eprintln!("answer mismatch: {m}");
    }
    Ok(ExitCode::from(2))
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { plan, out } => execute(PlanFile::load(&plan)?, out),
        Command::Sweep {
            axis,
            values,
            queries,
            paths,
            modes,
            variants,
            repetitions,
            seed,
            rows,
            row_size,
            column_width,
            offset,
            config,
            out,
        } => {
            let mut file = load(config.as_deref())?;
            let p = &mut file.plan;
            p.id = format!("sweep-{axis}");
            p.axis = axis;
            p.values = values.or(p.values.take());
            p.queries = queries.unwrap_or(std::mem::take(&mut p.queries));
            p.paths = paths.unwrap_or(std::mem::take(&mut p.paths));
            p.modes = modes.unwrap_or(std::mem::take(&mut p.modes));
            p.variants = variants.unwrap_or(std::mem::take(&mut p.variants));
            p.repetitions = repetitions.unwrap_or(p.repetitions);
            p.seed = seed.unwrap_or(p.seed);
            p.rows = rows.or(p.rows);
            p.row_size = row_size.unwrap_or(p.row_size);
            p.column_width = column_width.unwrap_or(p.column_width);
            p.offset = offset.unwrap_or(p.offset);
            execute(file, out)
        }
        Command::Normalize { csv, out } => {
            let input = File::open(&csv).with_context(|| format!("cannot open {}", csv.display()))?;
            normalize::normalize(input, sink(out.as_deref())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config } => {
            let cfg = load(config.as_deref())?.resolve()?.sim;
            let results = rme_core::verify::run_suite(&cfg);
            let mut failed = 0;
            for c in &results {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", results.len());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Template => {
            print!("{TEMPLATE}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
