//! `oms` — offline model selection experiments on logged RL data.
//!
//! Subcommands cover the full pipeline: dataset generation, candidate
//! training, selector ranking, ground-truth evaluation, the study suites
//! (noise sweep, error-band grouping, backup partition ablation, FQE
//! backend sensitivity) and the exact verification suites. All outputs are
//! CSV files with pinned schemas; re-running a command with the same config
//! reproduces them byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oms_core::config::{self, ExperimentConfig};
use oms_core::experiments::{
    self, build_cell_from_dataset, build_cell_without_truth, fqe_sensitivity_experiment,
    msbe_group_experiment, noise_sweep_experiment, split_ablation_experiment, CellArtifacts,
};
use oms_core::io::{read_dataset_csv, write_dataset_csv};
use oms_core::props;
use oms_core::report::{format_float, Table};
use oms_core::rng::{derive_seed, tags};
use oms_core::selectors;
use oms_core::tabular::TabularMdp;
use oms_core::toy::{self, generate_dataset, ToyConfig};
use oms_core::value::Policy;

#[derive(Parser)]
#[command(name = "oms", version, about = "Offline model selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML). Omitted keys take documented defaults;
    /// omitting the file uses all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset and write it as CSV.
    GenData {
        /// Environment name (only `toy` is available).
        #[arg(long, default_value = "toy")]
        env: String,
        /// Stochasticity level in [0, 0.25]; 0 is deterministic.
        #[arg(long)]
        phi: f64,
        /// Number of trajectories.
        #[arg(long, default_value_t = 25)]
        n: usize,
        /// Steps per trajectory.
        #[arg(long, default_value_t = 25)]
        t: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured candidate set and write its manifest.
    TrainCandidates {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset CSV; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Rank candidates with the configured selection criteria.
    Rank {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Selector names (comma separated); defaults to the config list.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Roll out every candidate's greedy policy for ground-truth values.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Noise sweep: selector quality across stochasticity levels.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the config's phi grid (comma separated).
        #[arg(long, value_delimiter = ',')]
        phi: Vec<f64>,
        /// Override the config's number of replicas.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Group candidates by oracle Bellman error and report return bands.
    Groups {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Compare backup fitting on the shared train split vs a disjoint half.
    AblateSplit {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Measure FQE's preference for candidates trained like its own backend.
    FqeSensitivity {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Run the exact verification suites on random tabular instances.
    VerifyProps {
        /// Number of random MDP instances.
        #[arg(long, default_value_t = 200)]
        seeds: usize,
        /// Also check one explicit MDP in the plain-text format.
        #[arg(long)]
        mdp: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    match &arg.config {
        Some(path) => {
            config::parse_config(path).with_context(|| format!("loading {}", path.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_or_generate_dataset(
    cfg: &ExperimentConfig,
    data: &Option<PathBuf>,
) -> Result<(ToyConfig, oms_core::data::OfflineDataset)> {
    let toy_cfg = ToyConfig::from_phi(
        cfg.env.phi,
        cfg.env.num_trajectories,
        cfg.env.horizon,
        derive_seed(cfg.seed, &[tags::DATASET]),
    )?;
    let dataset = match data {
        Some(path) => read_dataset_csv(path, toy::toy_mdp_config())
            .with_context(|| format!("reading {}", path.display()))?,
        None => generate_dataset(&toy_cfg, &Policy::uniform(toy::TOY_NUM_ACTIONS)),
    };
    Ok((toy_cfg, dataset))
}

fn build_cell(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<CellArtifacts> {
    let (toy_cfg, dataset) = load_or_generate_dataset(cfg, data)?;
    Ok(build_cell_from_dataset(cfg, &toy_cfg, dataset, cfg.seed)?)
}

fn build_cell_no_truth(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<CellArtifacts> {
    let (toy_cfg, dataset) = load_or_generate_dataset(cfg, data)?;
    Ok(build_cell_without_truth(cfg, &toy_cfg, dataset, cfg.seed)?)
}

fn write_tables(tables: Vec<(&'static str, Table)>, out_dir: &Path) -> Result<()> {
    for (name, table) in tables {
        table.write(&out_dir.join(name))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { env, phi, n, t, seed, out } => {
            if env != "toy" {
                bail!("unknown environment '{env}' (available: toy)");
            }
            let cfg = ToyConfig::from_phi(phi, n, t, seed)?;
            let dataset = generate_dataset(&cfg, &Policy::uniform(toy::TOY_NUM_ACTIONS));
            write_dataset_csv(&dataset, &out)?;
            println!("wrote {} transitions to {}", dataset.num_transitions(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainCandidates { config: carg, data, out_dir } => {
            let cfg = load_config(&carg)?;
            let cell = build_cell_no_truth(&cfg, &data)?;
            std::fs::create_dir_all(&out_dir)?;
            cell.candidates.manifest().write(&out_dir.join("manifest.csv"))?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!("trained {} candidates", cell.candidates.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Rank { config: carg, data, method, out_dir } => {
            let cfg = load_config(&carg)?;
            let methods = if method.is_empty() { cfg.selectors.methods.clone() } else { method };
            for m in &methods {
                selectors::by_name(m)?;
            }
            let cell = build_cell_no_truth(&cfg, &data)?;
            let ctx = experiments::selector_context(&cfg)?;
            let mut rankings = Vec::new();
            for m in &methods {
                let selector = selectors::by_name(m)?;
                rankings.push(selector.rank(&cell.candidates, &cell.split, &ctx)?);
            }
            std::fs::create_dir_all(&out_dir)?;
            selectors::scores_table(&rankings).write(&out_dir.join("scores.csv"))?;
            cell.candidates.manifest().write(&out_dir.join("manifest.csv"))?;
            config::write_effective_config(&cfg, &out_dir)?;
            for ranking in &rankings {
                println!("{}: best candidate {}", ranking.method, ranking.top().candidate_id);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { config: carg, data, out_dir } => {
            let cfg = load_config(&carg)?;
            let cell = build_cell(&cfg, &data)?;
            let mut table = Table::new(TRUTH_HEADER);
            for record in &cell.truth {
                table.push_row(&[
                    record.candidate_id.clone(),
                    format_float(record.value),
                    format_float(record.std_error),
                ]);
            }
            std::fs::create_dir_all(&out_dir)?;
            table.write(&out_dir.join("truth.csv"))?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!("evaluated {} candidates", cell.truth.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config: carg, phi, seeds, out_dir } => {
            let mut cfg = load_config(&carg)?;
            if !phi.is_empty() {
                cfg.sweep.phis = phi;
            }
            if let Some(s) = seeds {
                cfg.sweep.num_seeds = s;
            }
            cfg.validate()?;
            let report = noise_sweep_experiment(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            write_tables(report.tables(), &out_dir)?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!(
                "sweep complete: {} cells, {} rows",
                cfg.sweep.phis.len() * cfg.sweep.num_seeds,
                report.rows.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Groups { config: carg, phi, seeds, out_dir } => {
            let mut cfg = load_config(&carg)?;
            if let Some(p) = phi {
                cfg.env.phi = p;
            }
            cfg.validate()?;
            let num_seeds = seeds.unwrap_or(cfg.sweep.num_seeds);
            let report = msbe_group_experiment(&cfg, cfg.env.phi, num_seeds)?;
            std::fs::create_dir_all(&out_dir)?;
            write_tables(report.tables(), &out_dir)?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!("grouped {} cells", report.cells.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateSplit { config: carg, seeds, out_dir } => {
            let cfg = load_config(&carg)?;
            let num_seeds = seeds.unwrap_or(cfg.sweep.num_seeds);
            let report = split_ablation_experiment(&cfg, num_seeds)?;
            std::fs::create_dir_all(&out_dir)?;
            write_tables(report.tables(), &out_dir)?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!(
                "same-train backup wins {:.1}% of cells",
                100.0 * report.same_train_win_fraction()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::FqeSensitivity { config: carg, seeds, out_dir } => {
            let cfg = load_config(&carg)?;
            let num_seeds = seeds.unwrap_or(cfg.sensitivity.num_seeds);
            let report = fqe_sensitivity_experiment(&cfg, num_seeds)?;
            std::fs::create_dir_all(&out_dir)?;
            write_tables(report.tables(), &out_dir)?;
            config::write_effective_config(&cfg, &out_dir)?;
            println!(
                "self-preference: {} matches vs {} crosses; separation {:.2} se",
                report.match_count(),
                report.cross_count(),
                report.separation_in_se()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyProps { seeds, mdp } => {
            let mut outcomes = props::run_all(seeds, 20260810);
            if let Some(path) = mdp {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let parsed = TabularMdp::from_text(&text)?;
                outcomes.extend(props::check_single_mdp(&parsed, 20260810));
            }
            println!("{:<26} {:>7} {:>14} {:>11} {:>7}", "suite", "cases", "max_violation", "tolerance", "status");
            let mut all_passed = true;
            for o in &outcomes {
                all_passed &= o.passed();
                println!(
                    "{:<26} {:>7} {:>14.3e} {:>11.1e} {:>7}",
                    o.name,
                    o.cases,
                    o.max_violation,
                    o.tolerance,
                    if o.passed() { "pass" } else { "FAIL" }
                );
            }
            Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

const TRUTH_HEADER: &str = "candidate_id,value,std_error";
