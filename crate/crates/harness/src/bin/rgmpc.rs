use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rgmpc_harness::compare::{compare, Entry};
use rgmpc_harness::output::{emit_campaign, write_campaign, write_trajectory, write_violations};
use rgmpc_harness::plot::plot_data;
use rgmpc_harness::{
    compute_metrics, run_campaign, simulate_config, CampaignOptions, CampaignRow, HarnessError, ResolvedConfig,
    ScenarioConfig, SEED_ENV,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

#[derive(Parser)]
#[command(name = "rgmpc", version, about = "Governed MPC simulations and benchmark campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant from every initial condition and keep full trajectories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid campaign and write per-run metrics and statistics.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Run several campaigns and put their statistics side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Derive per-figure tables from a trajectory or campaign CSV.
    PlotData {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Violations(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

fn load(path: &Path) -> Result<ResolvedConfig, Failure> {
    let mut cfg = ScenarioConfig::from_path(path)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV} must be an unsigned integer, got `{seed}`")))?;
    }
    Ok(cfg.resolve()?)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))
}

fn check_violations(cfg: &ResolvedConfig, rows: &[CampaignRow]) -> Result<(), Failure> {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.metrics.violation_count > 0)
        .map(|r| format!("ic {} / {}", r.ic_id, r.variant))
        .collect();
    if cfg.forbid_violations && !bad.is_empty() {
        return Err(Failure::Violations(format!(
            "{} run(s) violated constraints: {}",
            bad.len(),
            bad.join(", ")
        )));
    }
    Ok(())
}

fn print_summary(rows: &[CampaignRow], variants: &[String]) {
    for v in variants {
        let of: Vec<&CampaignRow> = rows.iter().filter(|r| &r.variant == v).collect();
        let ok = of.iter().filter(|r| r.metrics.success).count();
        let mean_cost = of.iter().map(|r| r.metrics.u_cost).sum::<f64>() / of.len().max(1) as f64;
        println!("{v}: {ok}/{} successful, mean u_cost {mean_cost:.4}", of.len());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load(&config)?;
            create_dir(&out)?;
            let mut rows = Vec::new();
            for ic in 0..cfg.initial_states.len() {
                for variant in &cfg.variants {
                    let rec = simulate_config(&cfg, variant, ic)?;
                    let stem = format!("ic{ic}_{}", variant.label());
                    write_trajectory(&rec, &out.join(format!("trajectory_{stem}.csv")))?;
                    write_violations(&rec, &out.join(format!("violations_{stem}.csv")))?;
                    let metrics = compute_metrics(&rec, &cfg.convergence);
                    println!(
                        "{stem}: {} after {} steps, {} violation(s), u_cost {:.6}",
                        metrics.termination.as_str(),
                        metrics.steps,
                        metrics.violation_count,
                        metrics.u_cost
                    );
                    rows.push(CampaignRow {
                        ic_id: ic,
                        variant: variant.label(),
                        metrics,
                    });
                }
            }
            write_campaign(&rows, &out.join("metrics.csv"))?;
            check_violations(&cfg, &rows)
        }
        Command::Campaign { config, out, parallel } => {
            let cfg = load(&config)?;
            create_dir(&out)?;
            let result = run_campaign(
                &cfg,
                CampaignOptions {
                    threads: parallel,
                    keep_records: false,
                },
            )?;
            emit_campaign(&result, &cfg.initial_states, &out)?;
            let labels: Vec<String> = cfg.variants.iter().map(|v| v.label()).collect();
            print_summary(&result.rows, &labels);
            check_violations(&cfg, &result.rows)
        }
        Command::Compare { configs, out, parallel } => {
            let loaded = configs.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let mut names: Vec<String> = Vec::new();
            for p in &configs {
                let stem = p.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
                let mut name = stem.clone();
                let mut i = 2;
                while names.contains(&name) {
                    name = format!("{stem}-{i}");
                    i += 1;
                }
                names.push(name);
            }
            let entries: Vec<Entry<'_>> = names
                .into_iter()
                .zip(&loaded)
                .map(|(name, config)| Entry { name, config })
                .collect();
            create_dir(&out)?;
            let results = compare(
                &entries,
                &out,
                CampaignOptions {
                    threads: parallel,
                    keep_records: false,
                },
            )?;
            for (e, r) in entries.iter().zip(&results) {
                println!("[{}]", e.name);
                let labels: Vec<String> = e.config.variants.iter().map(|v| v.label()).collect();
                print_summary(&r.rows, &labels);
            }
            for (e, r) in entries.iter().zip(&results) {
                check_violations(e.config, &r.rows)?;
            }
            Ok(())
        }
        Command::PlotData { record, out } => {
            create_dir(&out)?;
            for path in plot_data(&record, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("rgmpc: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Violations(msg)) => {
            eprintln!("rgmpc: {msg}");
            ExitCode::from(EXIT_VIOLATIONS)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("rgmpc: {msg}");
            ExitCode::FAILURE
        }
    }
}
