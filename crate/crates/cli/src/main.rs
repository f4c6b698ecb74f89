use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, CommandFactory, Parser, Subcommand, ValueEnum};

use cellforge::battery_data::{list_cell_ids, read_cell_by_id};
use cellforge::ingestion::{self, ColumnMap, HttpFetcher, SourceRegistry, SynthSpec};
use cellforge::pipeline::{run_evaluate, run_train, EvalOverrides, EvalReport, PipelineConfig, SplitConfig, REPORT_FILE};
use cellforge::plot::{self, PlotKind};
use cellforge::Result;

#[derive(Parser)]
#[command(name = "cellforge", version, about = "Battery degradation data, features and models")]
struct Cli {
    /// Seed override: the generator seed for `generate`, the single run seed for `train`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch the raw files of a public source.
    Download {
        source: String,
        dir: PathBuf,
        /// JSON array of source descriptors with download URLs.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Convert raw cycler CSV files into cell files.
    Preprocess {
        source: String,
        raw: PathBuf,
        out: PathBuf,
        /// Column map JSON replacing the bundled one.
        #[arg(long)]
        column_map: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score a config; writes a run directory under the workspace.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CELLFORGE_WORKSPACE")]
        workspace: Option<PathBuf>,
    },
    /// Re-score a run directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Splitter to use instead of the stored split.
        #[arg(long)]
        split: Option<String>,
        /// Corpus directory for `--split` (default: the stored one).
        #[arg(long, requires = "split")]
        cells: Option<PathBuf>,
        /// Accept a config whose feature/label settings changed since training.
        #[arg(long)]
        force: bool,
    },
    /// Write plot points as CSV plus an SVG chart.
    Plot {
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Run directory, for pred-vs-truth.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Restrict to these cells (repeatable).
        #[arg(long = "cell")]
        cell_ids: Vec<String>,
        /// Curves per cell for voltage-curves.
        #[arg(long, default_value_t = 10)]
        max_curves: usize,
    },
    /// Show the known public data sources.
    ListSources,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Degradation,
    VoltageCurves,
    PredVsTruth,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            Cli::command().error(ErrorKind::InvalidValue, "--jobs must be at least 1").exit();
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Download { source, dir, registry } => {
            let reg = match registry {
                Some(p) => SourceRegistry::from_json_file(p)?,
                None => SourceRegistry::default(),
            };
            let summary = ingestion::download(&reg, source, dir, &HttpFetcher)?;
            println!("downloaded {} files; manifest {}", summary.files.len(), summary.manifest.display());
        }
        Command::Preprocess { source, raw, out, column_map } => {
            let reg = SourceRegistry::default();
            let descriptor = reg.get(source)?;
            let map = match column_map {
                Some(p) => ColumnMap::from_json_file(p)?,
                None => ingestion::default_column_map(source).expect("every registered source has a column map"),
            };
            let summary = ingestion::preprocess(descriptor, &map, raw, out)?;
            for (path, reason) in &summary.failed {
                eprintln!("skipped {}: {reason}", path.display());
            }
            println!("wrote {} cells to {} ({} failed)", summary.written.len(), out.display(), summary.failed.len());
        }
        Command::Generate { spec, out } => {
            let mut spec = SynthSpec::from_file(spec)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let cells = ingestion::generate_synthetic(&spec)?;
            let written = ingestion::write_corpus(&cells, out)?;
            println!("wrote {} cells to {}", written.len(), out.display());
        }
        Command::Train { config, workspace } => {
            let mut cfg = PipelineConfig::from_file(config)?;
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            let ws = workspace.clone().or_else(|| cfg.workspace.clone()).unwrap_or_else(|| PathBuf::from("workspaces"));
            let out = run_train(&cfg, &ws)?;
            print_summary(&out.report);
            println!("checkpoint: {}", out.checkpoint.display());
        }
        Command::Evaluate { checkpoint, split, cells, force } => {
            let mut overrides = EvalOverrides { force: *force, ..Default::default() };
            if let Some(name) = split {
                let dir = match cells {
                    Some(d) => d.clone(),
                    None => PipelineConfig::from_file(&checkpoint.join("config.yaml"))?.train_test_split.cell_data_path,
                };
                overrides.train_test_split = Some(SplitConfig::new(name, dir));
            }
            let report = run_evaluate(checkpoint, &overrides)?;
            print_summary(&report);
            for o in &report.overrides {
                println!("override: {o}");
            }
        }
        Command::Plot { cells, kind, out, checkpoint, cell_ids, max_curves } => {
            let (kind, points) = match kind {
                Kind::PredVsTruth => {
                    let Some(dir) = checkpoint else {
                        Cli::command().error(ErrorKind::MissingRequiredArgument, "pred-vs-truth needs --checkpoint").exit();
                    };
                    (PlotKind::PredVsTruth, plot::pred_vs_truth_points(&EvalReport::read(&dir.join(REPORT_FILE))?))
                }
                Kind::Degradation | Kind::VoltageCurves => {
                    let Some(dir) = cells else {
                        Cli::command().error(ErrorKind::MissingRequiredArgument, "this plot needs --cells").exit();
                    };
                    let voltage = matches!(kind, Kind::VoltageCurves);
                    let loaded = load_cells(dir, cell_ids, voltage)?;
                    if voltage {
                        (PlotKind::VoltageCurves, plot::voltage_curve_points(&loaded, *max_curves))
                    } else {
                        (PlotKind::Degradation, plot::degradation_points(&loaded)?)
                    }
                }
            };
            let (csv, svg) = plot::write_plot(kind, &points, out)?;
            println!("wrote {} points to {} and {}", points.len(), csv.display(), svg.display());
        }
        Command::ListSources => {
            println!("{:<8} {:<22} {:>13} {:>12} {:>6} {:>14}", "source", "chemistry", "capacity_Ah", "voltage_V", "cells", "cycle_life");
            for s in ingestion::list_sources() {
                println!(
                    "{:<8} {:<22} {:>13} {:>12} {:>6} {:>14}",
                    s.source_name,
                    s.chemistry,
                    s.nominal_capacity_in_Ah,
                    format!("{}-{}", s.voltage_range_V.0, s.voltage_range_V.1),
                    s.cell_count,
                    format!("{}±{}", s.rul_mean, s.rul_std)
                );
            }
        }
    }
    Ok(())
}

/// Named cells, or every cell (only the first one for voltage curves).
fn load_cells(dir: &Path, ids: &[String], first_only: bool) -> Result<Vec<cellforge::CellRecord>> {
    let ids = if ids.is_empty() {
        let mut all = list_cell_ids(dir)?;
        if first_only {
            all.truncate(1);
        }
        all
    } else {
        ids.to_vec()
    };
    ids.iter().map(|id| read_cell_by_id(dir, id)).collect()
}

fn print_summary(report: &EvalReport) {
    println!(
        "{} on {:?}: test RMSE {:.4} ± {:.4}, MAE {:.4} ± {:.4} over {} seeds ({} train rows, {} test rows, {} excluded cells)",
        report.model,
        report.task,
        report.mean_rmse,
        report.sd_rmse,
        report.mean_mae,
        report.sd_mae,
        report.per_seed.len(),
        report.n_train_rows,
        report.n_test_rows,
        report.excluded.len()
    );
}
