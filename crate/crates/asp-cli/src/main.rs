//! `asp` binary: experiment orchestration over the asp library.
//!
//! Exit codes: 0 full success, 2 partial trial failures, 1 configuration or
//! hard errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asp::evaluation::TrialMeta;
use asp::harness::runner::{load_nets, results_csv, save_nets};
use asp::harness::{analyze_policyspace, emit_report, run_sweep, ExperimentConfig, Preset};
use asp::models::TrainMeta;
use asp::training::{generate_datasets, train_base, train_new, BaseModelBundle, Domain, Method};
use asp::{stream_seed, Error, Result};

#[derive(Parser)]
#[command(
    name = "asp",
    version,
    about = "Adversarial self-play experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value config file; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides config and preset.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Budget preset.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Experiment domain; overrides config and preset.
    #[arg(long, global = true)]
    domain: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one gated base model and checkpoint it.
    TrainBase,
    /// Train a new model against a checkpointed base.
    TrainNew {
        /// Directory holding base checkpoints (from train-base).
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value = "ASP")]
        method: String,
        /// Paired example count.
        #[arg(long, default_value_t = 4)]
        paired: usize,
    },
    /// Evaluate a new model mixed with its base.
    Evaluate {
        #[arg(long)]
        base: PathBuf,
        /// Directory holding new-model checkpoints (from train-new).
        #[arg(long)]
        new: PathBuf,
        #[arg(long, default_value = "ASP")]
        method: String,
        #[arg(long, default_value_t = 4)]
        paired: usize,
    },
    /// Run the full trial sweep and aggregate results.
    Sweep,
    /// Export the policy-space pruning table.
    AnalyzePolicyspace {
        /// Comma-separated state counts.
        #[arg(long, default_value = "2,4,8,16,32,64")]
        s_values: String,
        /// Comma-separated action counts.
        #[arg(long, default_value = "2")]
        a_values: String,
    },
    /// Emit report CSVs from a completed run directory.
    Report,
}

fn parse_usize_list(name: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad {name} entry '{v}': {e}")))
        })
        .collect()
}

/// Preset defaults, then config file, then explicit CLI flags.
fn build_config(cli: &Cli) -> Result<(ExperimentConfig, String)> {
    let preset: Preset = cli.preset.parse()?;
    let domain: Domain = match &cli.domain {
        Some(d) => d.parse()?,
        None => Domain::Particle,
    };
    let mut config = ExperimentConfig::preset(preset, domain, 0);
    let mut snapshot = None;
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
        snapshot = Some(std::fs::read_to_string(path)?);
    }
    if let Some(d) = &cli.domain {
        let d: Domain = d.parse()?;
        if d != config.domain {
            // Domain switches reset the domain-specific budgets.
            let seed = config.seed;
            let out = config.output_dir.clone();
            config = ExperimentConfig::preset(preset, d, seed);
            config.output_dir = out;
            if let Some(path) = &cli.config {
                config.apply_file(path)?;
            }
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    let snapshot = snapshot.unwrap_or_else(|| config.to_flat_string());
    Ok((config, snapshot))
}

fn cmd_train_base(config: &ExperimentConfig) -> Result<()> {
    let mut cfg = config.train.clone();
    cfg.seed = config.seed;
    let base = train_base(&cfg)?;
    let meta = TrainMeta {
        seed: base.seed,
        steps: cfg.batches as u64,
        domain: config.domain.name().to_string(),
    };
    save_nets(&config.output_dir, "base", &base.nets, &meta)?;
    let info = serde_json::json!({
        "domain": config.domain.name(),
        "quality": base.quality,
        "seed": base.seed,
    });
    std::fs::write(
        config.output_dir.join("base-quality.json"),
        info.to_string(),
    )?;
    println!("base gated: quality {} (seed {})", base.quality, base.seed);
    Ok(())
}

fn load_base(config: &ExperimentConfig, dir: &PathBuf) -> Result<BaseModelBundle> {
    let nets = load_nets(dir, "base", config.domain)?;
    let info: serde_json::Value = std::fs::read_to_string(dir.join("base-quality.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(serde_json::json!({}));
    Ok(BaseModelBundle {
        domain: config.domain,
        nets,
        quality: info["quality"].as_f64().unwrap_or(f64::NAN),
        seed: info["seed"].as_u64().unwrap_or(config.seed),
    })
}

fn cmd_train_new(
    config: &ExperimentConfig,
    base_dir: &PathBuf,
    method: Method,
    paired_count: usize,
) -> Result<()> {
    let base = load_base(config, base_dir)?;
    let dataset_seed = stream_seed(config.seed, "datasets");
    let (paired, unpaired) =
        generate_datasets(&base, paired_count, config.unpaired_count, dataset_seed)?;
    let mut cfg = config.train.clone();
    cfg.batches = config.new_batches;
    cfg.seed = stream_seed(
        config.seed,
        &format!("new/{}/{}", method.name(), paired_count),
    );
    cfg.paired_count = paired_count;
    cfg.unpaired_count = unpaired.len();
    let outcome = train_new(method, &base, &paired, &unpaired, &cfg)?;
    let meta = TrainMeta {
        seed: cfg.seed,
        steps: cfg.batches as u64,
        domain: config.domain.name().to_string(),
    };
    save_nets(&config.output_dir, "new", &outcome.nets, &meta)?;
    std::fs::write(
        config.output_dir.join("new.curve.jsonl"),
        outcome.curve_jsonl(),
    )?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "trained {} with {} paired examples",
        method.name(),
        paired_count
    );
    Ok(())
}

fn cmd_evaluate(
    config: &ExperimentConfig,
    base_dir: &PathBuf,
    new_dir: &PathBuf,
    method: Method,
    paired_count: usize,
) -> Result<()> {
    let base = load_base(config, base_dir)?;
    let new_nets = load_nets(new_dir, "new", config.domain)?;
    let meta = TrialMeta {
        trial_id: 0,
        base_seed: base.seed,
        method,
        paired_count,
        unpaired_count: config.unpaired_count,
    };
    let eval_seed = stream_seed(config.seed, "evaluate");
    let record = match config.domain {
        Domain::Particle => asp::evaluation::evaluate_particle_mixed(
            &new_nets,
            &base.nets,
            config.eval_episodes,
            config.train.world_extent,
            &meta,
            eval_seed,
        )?,
        Domain::Vae => {
            let mut rng = asp::stream_rng(eval_seed, "eval/images");
            let holdout = asp::envs::mnist::synthetic_digits(512, &mut rng).images;
            asp::evaluation::evaluate_vae_mixed(&new_nets, &base.nets, &holdout, &meta)?
        }
        Domain::Lever => asp::evaluation::evaluate_lever_mixed(
            &new_nets,
            &base.nets,
            config.eval_episodes,
            &meta,
            eval_seed,
        )?,
    };
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join("results.csv"),
        results_csv(&[record.clone()]),
    )?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let (config, snapshot) = build_config(cli)?;
    std::fs::create_dir_all(&config.output_dir)?;
    match &cli.command {
        Command::TrainBase => cmd_train_base(&config)?,
        Command::TrainNew {
            base,
            method,
            paired,
        } => cmd_train_new(&config, base, method.parse()?, *paired)?,
        Command::Evaluate {
            base,
            new,
            method,
            paired,
        } => cmd_evaluate(&config, base, new, method.parse()?, *paired)?,
        Command::Sweep => {
            let outcome = run_sweep(&config, &snapshot)?;
            println!(
                "sweep complete: {} records, {} failed trials",
                outcome.records.len(),
                outcome.failed_trials()
            );
            if let Some(f) = &outcome.friedman {
                println!(
                    "friedman over paired {:?}: statistic {:.4}, p {:.4}",
                    f.paired_cells, f.statistic, f.p_value
                );
            }
            return Ok(outcome.failed_trials() > 0);
        }
        Command::AnalyzePolicyspace { s_values, a_values } => {
            let s = parse_usize_list("s_values", s_values)?;
            let a = parse_usize_list("a_values", a_values)?;
            let path = config.output_dir.join("pruning.csv");
            analyze_policyspace(&s, &a, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Report => {
            let outcome = emit_report(&config.output_dir)?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            return Ok(!outcome.warnings.is_empty());
        }
    }
    Ok(false)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
