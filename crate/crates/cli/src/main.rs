//! `rmabg`: benchmark harness for restless bandits whose reward couples
//! the arms through a global set function.
//!
//! Subcommands: `gen` writes a seeded instance as JSON, `run` plays the
//! configured policy roster over a seed/trial grid and writes CSV plus
//! markdown reports, `bounds` prints the approximation floors for a
//! saved instance, and `ingest` estimates an instance from a
//! notification/completion event log.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rmabg_core::bounds::{beta_linear, beta_shapley, theta_linear, theta_shapley};
use rmabg_core::generate::{ingest_volunteer_log, IngestOptions};
use rmabg_core::hash::instance_content_hash;
use rmabg_core::model::RmabgInstance;
use rmabg_core::policy::ensure_joint_enumerable;
use rmabg_core::reward::{MarginalTable, UEstimator};
use rmabg_core::simulate::{
    run_experiment_with, summary_markdown, write_results_csv, write_summary_csv,
};

#[derive(Parser)]
#[command(name = "rmabg", version, about = "Policy benchmarks for restless bandits with global rewards")]
struct Cli {
    /// Worker threads for the parallel phases (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the seed declared in the config; the RMABG_SEED
    /// environment variable overrides both.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance JSON file from the config's [instance] section.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output instance path; the content hash is printed to stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured policy roster on an instance and write reports.
    Run {
        /// Instance JSON produced by `gen` or `ingest`.
        instance: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving results.csv, summary.csv, and summary.md.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute approximation floors for an instance as `bound,value` CSV.
    Bounds {
        instance: PathBuf,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an instance from a volunteer notification/completion log.
    Ingest {
        /// CSV log with header volunteer_id,period,notified,completed.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.cmd {
        Cmd::Gen { config, out } => cmd_gen(&config, &out, cli.seed),
        Cmd::Run { instance, config, out } => cmd_run(&instance, &config, &out, cli.seed),
        Cmd::Bounds { instance, out } => cmd_bounds(&instance, out.as_deref()),
        Cmd::Ingest { input, out } => cmd_ingest(&input, &out),
    }
}

/// RMABG_SEED beats --seed beats the config's declared seed.
fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64> {
    if let Ok(text) = std::env::var("RMABG_SEED") {
        return text
            .parse()
            .with_context(|| format!("RMABG_SEED must be an unsigned integer, got {text:?}"));
    }
    Ok(flag.unwrap_or(config_seed))
}

fn read_instance(path: &Path) -> Result<RmabgInstance> {
    let bytes =
        fs::read(path).with_context(|| format!("reading instance {}", path.display()))?;
    RmabgInstance::from_json(&bytes)
        .with_context(|| format!("parsing instance {}", path.display()))
}

fn cmd_gen(config: &Path, out: &Path, seed_flag: Option<u64>) -> Result<()> {
    let cfg = config::load(config)?;
    let seed = resolve_seed(seed_flag, cfg.instance.seed)?;
    let inst = cfg.instance.build(seed)?;
    fs::write(out, inst.to_json())
        .with_context(|| format!("writing instance {}", out.display()))?;
    println!("{}", instance_content_hash(&inst));
    Ok(())
}

fn cmd_run(instance: &Path, config: &Path, out_dir: &Path, seed_flag: Option<u64>) -> Result<()> {
    let inst = read_instance(instance)?;
    let cfg = config::load(config)?;
    let master_seed = resolve_seed(seed_flag, cfg.experiment.seed)?;
    let episode_cfg = cfg.experiment.episode_config(&inst)?;
    let requested = config::policy_roster(&cfg)?;
    if requested.is_empty() {
        bail!("config lists no [policies.<name>] sections");
    }

    let mut roster = Vec::with_capacity(requested.len());
    for (kind, params) in requested {
        if kind.needs_joint_solve() {
            if let Err(err) = ensure_joint_enumerable(&inst, params.optimal_max_arms) {
                eprintln!("skipping {kind}: {err}");
                continue;
            }
        }
        roster.push((kind, params));
    }
    if roster.is_empty() {
        bail!("every configured policy was skipped");
    }

    let report = run_experiment_with(&inst, &roster, &episode_cfg, master_seed)?;

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let results_path = out_dir.join("results.csv");
    let file = fs::File::create(&results_path)
        .with_context(|| format!("writing {}", results_path.display()))?;
    write_results_csv(&report, file)?;
    let summary_path = out_dir.join("summary.csv");
    let file = fs::File::create(&summary_path)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    write_summary_csv(&report, file)?;
    let markdown = summary_markdown(&report);
    fs::write(out_dir.join("summary.md"), &markdown)
        .with_context(|| format!("writing {}", out_dir.join("summary.md").display()))?;
    print!("{markdown}");
    Ok(())
}

fn cmd_bounds(instance: &Path, out: Option<&Path>) -> Result<()> {
    let inst = read_instance(instance)?;
    let beta_l = beta_linear(&inst)?;
    let exact_u = MarginalTable::compute(&inst, UEstimator::Exact)?.u;
    let rows = [
        ("beta_linear", beta_l),
        ("beta_shapley", beta_shapley(&inst, &exact_u)?),
        ("theta_linear", theta_linear(&inst)?),
        ("theta_shapley", theta_shapley(&inst, &exact_u)?),
    ];
    let mut text = String::from("bound,value\n");
    for (name, value) in rows {
        text.push_str(&format!("{name},{value}\n"));
    }
    match out {
        Some(path) => fs::write(path, &text)
            .with_context(|| format!("writing bounds {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_ingest(input: &Path, out: &Path) -> Result<()> {
    let text =
        fs::read_to_string(input).with_context(|| format!("reading log {}", input.display()))?;
    let (inst, report) = ingest_volunteer_log(&text, &IngestOptions::default())?;
    fs::write(out, inst.to_json())
        .with_context(|| format!("writing instance {}", out.display()))?;
    println!("{}", instance_content_hash(&inst));
    println!(
        "volunteers: {} seen, {} retained, {} excluded; clusters: {}; \
         never notified: {}; smoothed cells: {}",
        report.volunteers_seen,
        report.volunteers_retained,
        report.volunteers_excluded,
        report.cluster_count,
        report.never_notified.len(),
        report.smoothed_cells.len(),
    );
    Ok(())
}
