use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plr::arch::ClassifierSpec;
use plr::cost::blocks_from_spec;
use plr::harness::{
    emit_plot, emit_table, load_run_results, run_experiment, ExperimentConfig, FigureId,
    StrategySpec, TableId,
};
use plr::replay::ReplayStrategy;

/// Progressive latent replay experiments: training runs, the analytic
/// replay-cost model, and table/figure emission.
#[derive(Parser)]
#[command(name = "plr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config (skips work already on disk).
    Run {
        config: PathBuf,
        /// Recompute even when the run directory is complete.
        #[arg(long)]
        force: bool,
    },
    /// Validate a config without running anything.
    Validate { config: PathBuf },
    /// Print (strategy, U, R) for an architecture preset.
    Cost {
        /// ARCH1, ARCH2 or FMNIST3.
        arch: String,
        /// Strategies: IR or comma-separated frequencies like 0.7,0.3.
        #[arg(required = true)]
        strategies: Vec<String>,
        /// Machine-readable JSON instead of the text table.
        #[arg(long)]
        json: bool,
        /// Count biases in the parameter blocks.
        #[arg(long)]
        include_biases: bool,
    },
    /// Aggregate one or more run directories into a results table
    /// (pass several to combine architectures into one table).
    Table {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// T1 (accuracy) or T2 (accuracy + mFID).
        #[arg(long)]
        id: String,
        /// Also write table.csv / table.txt into the first run directory.
        #[arg(long)]
        save: bool,
    },
    /// Render a figure from a run directory.
    Plot {
        run_dir: PathBuf,
        /// F3, F4 or cost-vs-acc.
        #[arg(long)]
        id: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> plr::Result<()> {
    match cli.command {
        Command::Run { config, force } => {
            let cfg = ExperimentConfig::load(&config)?;
            let artifacts = run_experiment(&cfg, force)?;
            println!(
                "{} results in {}",
                artifacts.results.len(),
                artifacts.run_dir.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("config ok: run directory would be {}", cfg.run_dir()?.display());
            Ok(())
        }
        Command::Cost {
            arch,
            strategies,
            json,
            include_biases,
        } => {
            let spec = ClassifierSpec::preset(&arch)?;
            let model = blocks_from_spec(&spec, include_biases);
            let mut rows = Vec::new();
            for raw in &strategies {
                let resolved: ReplayStrategy = StrategySpec::parse_arg(raw)?.resolve(spec.num_levels())?;
                let u = model.updates(&resolved)?;
                let r = model.relative_cost(&resolved)?;
                rows.push((resolved.label(), u, r));
            }
            if json {
                let payload: Vec<serde_json::Value> = rows
                    .iter()
                    .map(|(label, u, r)| {
                        serde_json::json!({
                            "architecture": arch,
                            "strategy": label,
                            "updates": u,
                            "relative_cost": r,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&payload)?);
            } else {
                println!("{:<14} {:<24} {:>14} {:>8}", "Architecture", "Strategy", "U", "R");
                for (label, u, r) in rows {
                    println!("{:<14} {:<24} {:>14.0} {:>7.1}%", arch, label, u, r * 100.0);
                }
            }
            Ok(())
        }
        Command::Table { run_dirs, id, save } => {
            let id = TableId::parse(&id)?;
            let mut results = Vec::new();
            for dir in &run_dirs {
                results.extend(load_run_results(dir)?);
            }
            let table = emit_table(&results, id)?;
            print!("{}", table.to_text());
            if save {
                let target = &run_dirs[0];
                std::fs::write(target.join("table.txt"), table.to_text())?;
                std::fs::write(target.join("table.csv"), table.to_csv())?;
                println!("wrote table.txt and table.csv to {}", target.display());
            }
            Ok(())
        }
        Command::Plot { run_dir, id } => {
            let id = FigureId::parse(&id)?;
            let results = load_run_results(&run_dir)?;
            let path = emit_plot(&results, id, &run_dir)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
