use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stageroute_core::environment::convert_routerbench;
use stageroute_core::experiment::{self, HardgenSweep, SweepGrid};
use stageroute_core::{ModelId, PolicyKind, RunConfig};

/// Relative output directories are placed under this root when it is set.
const OUTPUT_ROOT_VAR: &str = "STAGEROUTE_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "stageroute",
    version,
    about = "Staged LLM deployment and budgeted routing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over every configured seed and write metric files.
    Run(RunArgs),
    /// Run a grid over M_max, budget and update interval.
    Sweep(SweepArgs),
    /// Regret-vs-horizon sweep on drifting-frontier instances.
    Hardgen(HardgenArgs),
    /// Convert a RouterBench-style export into a replay table and manifest.
    ConvertDataset(ConvertArgs),
    /// Validate a config and print its canonical form.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, conflicts_with = "update_interval")]
    stages: Option<u64>,
    #[arg(long)]
    update_interval: Option<u64>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    optimistic_init: Option<bool>,
    #[arg(long)]
    fill_idle_slots: Option<bool>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long = "grid-m-max", value_delimiter = ',')]
    grid_m_max: Vec<usize>,
    #[arg(long = "grid-budget", value_delimiter = ',')]
    grid_budget: Vec<f64>,
    #[arg(long = "grid-update-interval", value_delimiter = ',')]
    grid_update_interval: Vec<u64>,
}

#[derive(Args)]
struct HardgenArgs {
    #[arg(long, default_value_t = 2)]
    models: usize,
    #[arg(long, default_value_t = 1.0)]
    c_s: f64,
    /// Strictly increasing horizons, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    horizons: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = (0..10).collect::<Vec<u64>>())]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value = "stage_route")]
    policy: PolicyKind,
    #[arg(long, default_value = "hardgen")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    source: PathBuf,
    /// Model names in release order, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value = "sample_id")]
    id_column: String,
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.stages {
            cfg.stages = Some(v);
            cfg.update_interval = None;
        }
        if let Some(v) = self.update_interval {
            cfg.update_interval = Some(v);
            cfg.stages = None;
        }
        if let Some(v) = self.m_max {
            cfg.m_max = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.optimistic_init {
            cfg.optimistic_init = v;
        }
        if let Some(v) = self.fill_idle_slots {
            cfg.fill_idle_slots = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from)
}

fn rooted(path: &Path) -> PathBuf {
    match output_root() {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    overrides.apply(&mut cfg);
    if cfg.output_dir.is_relative() {
        if let Some(root) = output_root() {
            cfg.output_dir = root.join(&cfg.output_dir);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let s = experiment::run(&cfg)?;
    println!(
        "{}: {} seeds, OPT* {:.4}, mean final pseudo-regret {:.4}, mean avg cost {:.6} -> {}",
        s.policy,
        s.seeds.len(),
        s.opt_star,
        s.mean_final_pseudo(),
        s.mean_avg_cost(),
        cfg.output_path().display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let grid = SweepGrid {
        m_max: args.grid_m_max,
        budget: args.grid_budget,
        update_interval: args.grid_update_interval,
    };
    for (cell, s) in experiment::sweep(&cfg, &grid)? {
        println!(
            "{}: mean final pseudo-regret {:.4}, mean avg cost {:.6}",
            cell.name,
            s.mean_final_pseudo(),
            s.mean_avg_cost()
        );
    }
    println!("index -> {}", cfg.output_path().join("index.csv").display());
    Ok(())
}

fn hardgen(args: HardgenArgs) -> Result<()> {
    let spec = HardgenSweep {
        models: args.models,
        c_s: args.c_s,
        horizons: args.horizons,
        seeds: args.seeds,
        gamma: args.gamma,
        policy: args.policy,
    };
    let out = rooted(&args.output_dir);
    let report = experiment::hardgen_sweep(&spec, Some(&out))?;
    for r in &report.rows {
        println!(
            "T={:>8} K={:>4} mean final pseudo-regret {:.3}",
            r.horizon,
            r.stages,
            r.mean()
        );
    }
    match report.slope {
        Some(s) => println!("fitted exponent {s:.4}"),
        None => println!("fitted exponent: needs at least 4 horizons"),
    }
    Ok(())
}

fn convert(args: ConvertArgs) -> Result<()> {
    let models: Vec<ModelId> = args.models.into_iter().map(ModelId::from).collect();
    if models.is_empty() {
        bail!("--models must name at least one model");
    }
    let ds = convert_routerbench(&args.source, &models, args.alpha, &args.id_column)?;
    ds.write_table(&args.table)?;
    fs::write(&args.manifest, ds.manifest.to_toml())
        .with_context(|| format!("writing {}", args.manifest.display()))?;
    println!(
        "{} queries x {} models -> {}, {}",
        ds.n_queries(),
        ds.n_models(),
        args.table.display(),
        args.manifest.display()
    );
    Ok(())
}

fn validate(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let env = cfg.build_environment()?;
    experiment::feasibility_gate(&env, cfg.m_max)?;
    print!("{}", cfg.canonical_toml());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Hardgen(a) => hardgen(a),
        Command::ConvertDataset(a) => convert(a),
        Command::ValidateConfig { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
