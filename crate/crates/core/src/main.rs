use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use relpcanet::pipeline::{self, compare, emit_reports, Reference, RunConfig, YearState};
use relpcanet::ranknet::save_checkpoint;
use relpcanet::target::{format_violations, validate, TargetMatrix, TargetMode};
use relpcanet::{Error, Result};

#[derive(Parser)]
#[command(name = "relpcanet", version, about = "Relative PCA attribute ranking network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score and rank one year of entity data.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// State file of the previous year; enables movement-aware targets.
        #[arg(long)]
        prev_state: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Year label; defaults to the data file stem.
        #[arg(long)]
        year: Option<String>,
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long, default_value_t = 0.95)]
        variance_target: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,10,10")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-7)]
        loss_tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entity ids to leave out of reported ranks.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Compare two year states, optionally against an external ranking.
    Compare {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        previous: PathBuf,
        /// CSV with `entity_id,rank[,score]`.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a target matrix CSV for admissible values and complementarity.
    ValidateTargets {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Dynamic)]
        mode: ModeArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Dynamic,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            data,
            schema,
            prev_state,
            out,
            year,
            clusters,
            restarts,
            variance_target,
            hidden,
            epochs,
            loss_tolerance,
            seed,
            exclude,
        } => {
            let cfg = RunConfig {
                clusters,
                restarts,
                variance_target,
                hidden,
                epochs,
                loss_tolerance,
                seed,
                exclude,
            };
            let previous = prev_state.as_deref().map(YearState::load).transpose()?;
            let run = pipeline::run_year_files(&data, &schema, previous.as_ref(), year.as_deref(), &cfg)?;
            let report = previous
                .as_ref()
                .map(|prev| compare(&run.state, prev, None))
                .transpose()?;
            emit_reports(&run.state, report.as_ref(), &out)?;
            save_checkpoint(out.join("model.json"), &run.model, &run.network)?;
            let s = &run.state;
            println!(
                "{}: {} entities, {} components, {} clusters, {:?} targets, final loss {:.6}",
                s.year_label,
                s.entity_ids.len(),
                s.pca.d,
                s.cluster_state.n_clusters(),
                s.targets.mode,
                s.loss_history.last().copied().unwrap_or(f64::NAN)
            );
            Ok(0)
        }
        Command::Compare {
            current,
            previous,
            reference,
            out,
        } => {
            let cur = YearState::load(&current)?;
            let prev = YearState::load(&previous)?;
            let reference = reference.map(Reference::load).transpose()?;
            let report = compare(&cur, &prev, reference.as_ref())?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            pipeline::write_comparison_files(&out, &report)?;
            println!(
                "{} vs {}: average score change {:.4}{}",
                report.current_year,
                report.previous_year,
                report.average_score_change,
                report
                    .mean_abs_rank_distance
                    .map(|d| format!(", mean rank distance to reference {d:.3}"))
                    .unwrap_or_default()
            );
            Ok(0)
        }
        Command::ValidateTargets { targets, mode } => {
            let mode = match mode {
                ModeArg::Static => TargetMode::Static,
                ModeArg::Dynamic => TargetMode::Dynamic,
            };
            let tm = TargetMatrix::load_csv(&targets, mode)?;
            let violations = validate(&tm);
            if violations.is_empty() {
                println!("{}: valid ({} entities)", targets.display(), tm.len());
                Ok(0)
            } else {
                print!("{}", format_violations(&violations));
                eprintln!("{}: {} violations", targets.display(), violations.len());
                Ok(1)
            }
        }
    }
}
