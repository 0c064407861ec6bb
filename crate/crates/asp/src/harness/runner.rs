//! Trial execution and sweep orchestration.
//!
//! Every trial trains one fresh gated base model, generates P and U once at
//! the largest requested paired count, then trains and evaluates every
//! (method, paired_count) cell against that same base. Run directories are
//! append-only: completed trials carry a `done` marker and are never redone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::adversary::PairedDataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_lever_mixed, evaluate_particle_mixed, evaluate_vae_mixed, friedman_test, summarize,
    TrialMeta, TrialRecord,
};
use crate::models::TrainMeta;
use crate::stream_seed;
use crate::training::{
    generate_datasets, train_base, train_new, BaseModelBundle, Domain, Method, Nets,
};
use crate::{envs::mnist::synthetic_digits, stream_rng};

use super::ExperimentConfig;

/// Seed-ledger entry for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatus {
    pub trial_id: u64,
    pub trial_seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One aggregated summary cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub paired: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanReport {
    pub paired_cells: Vec<usize>,
    pub methods: Vec<Method>,
    pub blocks: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Per-pair Friedman sub-tests; an interpretation, not a named
    /// post-hoc procedure.
    pub pairwise: Vec<PairwiseFriedman>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFriedman {
    pub methods: [Method; 2],
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<SummaryRow>,
    pub friedman: Option<FriedmanReport>,
    pub statuses: Vec<TrialStatus>,
}

impl SweepOutcome {
    pub fn failed_trials(&self) -> usize {
        self.statuses.iter().filter(|s| s.status != "ok").count()
    }
}

pub fn trial_dir(output_dir: &Path, trial_index: usize) -> PathBuf {
    output_dir
        .join("trials")
        .join(format!("trial-{trial_index:04}"))
}

/// The standard comparison cells per domain, restricted to the configured
/// paired counts.
pub fn friedman_cells(domain: Domain, paired_counts: &[usize]) -> Vec<usize> {
    let wanted: &[usize] = match domain {
        Domain::Particle => &[2, 3, 4],
        Domain::Lever => &[4, 6, 8],
        Domain::Vae => &[],
    };
    wanted
        .iter()
        .copied()
        .filter(|p| paired_counts.contains(p))
        .collect()
}

fn subset_paired(paired: &PairedDataset, count: usize) -> Result<PairedDataset> {
    if count > paired.len() {
        return Err(Error::InsufficientData(format!(
            "requested {count} paired examples, generated {}",
            paired.len()
        )));
    }
    PairedDataset::new(
        paired.inputs.slice(s![..count, ..]).to_owned(),
        paired.targets.slice(s![..count, ..]).to_owned(),
        &paired.domain,
    )
}

/// Persist one `Nets` value as checkpoint files under `dir` with the given
/// filename prefix.
pub fn save_nets(dir: &Path, prefix: &str, nets: &Nets, meta: &TrainMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match nets {
        Nets::Particle {
            speaker,
            actor,
            target_pos,
        } => {
            speaker
                .to_checkpoint(meta)
                .save(&dir.join(format!("{prefix}-speaker.ckpt")))?;
            actor
                .to_checkpoint(meta)
                .save(&dir.join(format!("{prefix}-actor.ckpt")))?;
            let extra = serde_json::json!({ "target_pos": [target_pos.0, target_pos.1] });
            std::fs::write(dir.join(format!("{prefix}-extra.json")), extra.to_string())?;
        }
        Nets::Vae { encoder, decoder } => {
            encoder
                .to_checkpoint(meta)
                .save(&dir.join(format!("{prefix}-encoder.ckpt")))?;
            decoder
                .to_checkpoint(meta)
                .save(&dir.join(format!("{prefix}-decoder.ckpt")))?;
        }
        Nets::Lever { net } => {
            net.to_checkpoint(meta)
                .save(&dir.join(format!("{prefix}-commnet.ckpt")))?;
        }
    }
    Ok(())
}

/// Load a `Nets` value saved by [`save_nets`].
pub fn load_nets(dir: &Path, prefix: &str, domain: Domain) -> Result<Nets> {
    use crate::models::{Actor, Checkpoint, CommNet, Speaker, VaeDecoder, VaeEncoder};
    match domain {
        Domain::Particle => {
            let speaker = Speaker::from_checkpoint(&Checkpoint::load(
                &dir.join(format!("{prefix}-speaker.ckpt")),
            )?)?;
            let actor = Actor::from_checkpoint(&Checkpoint::load(
                &dir.join(format!("{prefix}-actor.ckpt")),
            )?)?;
            let extra: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(
                dir.join(format!("{prefix}-extra.json")),
            )?)?;
            let t = extra["target_pos"]
                .as_array()
                .and_then(|a| Some((a.first()?.as_f64()?, a.get(1)?.as_f64()?)))
                .ok_or_else(|| Error::Checkpoint("missing target_pos".into()))?;
            Ok(Nets::Particle {
                speaker,
                actor,
                target_pos: t,
            })
        }
        Domain::Vae => {
            let encoder = VaeEncoder::from_checkpoint(&Checkpoint::load(
                &dir.join(format!("{prefix}-encoder.ckpt")),
            )?)?;
            let decoder = VaeDecoder::from_checkpoint(&Checkpoint::load(
                &dir.join(format!("{prefix}-decoder.ckpt")),
            )?)?;
            Ok(Nets::Vae { encoder, decoder })
        }
        Domain::Lever => {
            let net = CommNet::from_checkpoint(&Checkpoint::load(
                &dir.join(format!("{prefix}-commnet.ckpt")),
            )?)?;
            Ok(Nets::Lever { net })
        }
    }
}

fn evaluate_cell(
    config: &ExperimentConfig,
    new_nets: &Nets,
    base: &BaseModelBundle,
    meta: &TrialMeta,
    trial_seed: u64,
) -> Result<TrialRecord> {
    let eval_seed = stream_seed(
        trial_seed,
        &format!("eval/{}/{}", meta.method.name(), meta.paired_count),
    );
    match config.domain {
        Domain::Particle => evaluate_particle_mixed(
            new_nets,
            &base.nets,
            config.eval_episodes,
            config.train.world_extent,
            meta,
            eval_seed,
        ),
        Domain::Vae => {
            let mut rng = stream_rng(trial_seed, "eval/images");
            let holdout = synthetic_digits(512, &mut rng).images;
            evaluate_vae_mixed(new_nets, &base.nets, &holdout, meta)
        }
        Domain::Lever => {
            evaluate_lever_mixed(new_nets, &base.nets, config.eval_episodes, meta, eval_seed)
        }
    }
}

/// Render records as the results CSV (header + one row per direction plus a
/// `mixed` row per record).
pub fn results_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial_id,domain,method,paired,unpaired,direction,score\n");
    for r in records {
        let mut rows: Vec<(&str, f64)> = r
            .direction_scores
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .collect();
        rows.push(("mixed", r.mixed_score));
        for (direction, score) in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial_id,
                r.domain.name(),
                r.method.name(),
                r.paired_count,
                r.unpaired_count,
                direction,
                score
            ));
        }
    }
    out
}

fn records_jsonl(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn load_trial_records(dir: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(dir.join("records.jsonl"))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Run one trial end to end and persist its artifacts. Returns the records
/// for every (method, paired_count) cell.
pub fn run_trial(config: &ExperimentConfig, trial_index: usize) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let trial_seed = stream_seed(config.seed, &format!("trial/{trial_index}"));
    let dir = trial_dir(&config.output_dir, trial_index);
    std::fs::create_dir_all(&dir)?;

    let mut base_cfg = config.train.clone();
    base_cfg.seed = stream_seed(trial_seed, "base");
    base_cfg.unpaired_count = config.unpaired_count;
    let base = train_base(&base_cfg)?;
    let base_meta = TrainMeta {
        seed: base.seed,
        steps: base_cfg.batches as u64,
        domain: config.domain.name().to_string(),
    };
    save_nets(&dir, "base", &base.nets, &base_meta)?;

    let max_paired = *config
        .paired_counts
        .iter()
        .max()
        .expect("validated nonempty");
    let dataset_seed = stream_seed(trial_seed, "datasets");
    let (paired_full, unpaired) =
        generate_datasets(&base, max_paired, config.unpaired_count, dataset_seed)?;

    let mut records = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    for &method in &config.methods {
        for &paired_count in &config.paired_counts {
            let cell = format!("{}-p{}", method.name(), paired_count);
            let paired = subset_paired(&paired_full, paired_count)?;
            let mut cfg = config.train.clone();
            cfg.batches = config.new_batches;
            cfg.seed = stream_seed(
                trial_seed,
                &format!("new/{}/{}", method.name(), paired_count),
            );
            cfg.paired_count = paired_count;
            cfg.unpaired_count = unpaired.len();
            let outcome = train_new(method, &base, &paired, &unpaired, &cfg)?;
            let new_meta = TrainMeta {
                seed: cfg.seed,
                steps: cfg.batches as u64,
                domain: config.domain.name().to_string(),
            };
            save_nets(&dir, &format!("cell-{cell}"), &outcome.nets, &new_meta)?;
            std::fs::write(
                dir.join(format!("cell-{cell}.curve.jsonl")),
                outcome.curve_jsonl(),
            )?;
            for w in &outcome.warnings {
                warnings.push(format!("{cell}: {w}"));
            }
            let meta = TrialMeta {
                trial_id: trial_index as u64,
                base_seed: base.seed,
                method,
                paired_count,
                unpaired_count: unpaired.len(),
            };
            records.push(evaluate_cell(
                config,
                &outcome.nets,
                &base,
                &meta,
                trial_seed,
            )?);
        }
    }

    std::fs::write(dir.join("records.jsonl"), records_jsonl(&records)?)?;
    std::fs::write(dir.join("results.csv"), results_csv(&records))?;
    if !warnings.is_empty() {
        std::fs::write(dir.join("warnings.txt"), warnings.join("\n") + "\n")?;
    }
    std::fs::write(dir.join("done"), "ok\n")?;
    Ok(records)
}

fn aggregate(config: &ExperimentConfig, records: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        let mi = config
            .methods
            .iter()
            .position(|m| *m == r.method)
            .ok_or_else(|| Error::Config(format!("record method {:?} not in config", r.method)))?;
        cells
            .entry((mi, r.paired_count))
            .or_default()
            .push(r.mixed_score);
    }
    let mut rows = Vec::new();
    for ((mi, paired), scores) in cells {
        let stats = summarize(&scores)?;
        rows.push(SummaryRow {
            method: config.methods[mi],
            paired,
            median: stats.median,
            q1: stats.q1,
            q3: stats.q3,
            n: stats.count,
        });
    }
    Ok(rows)
}

/// Friedman test over the protocol's paired cells, pooling (trial, paired)
/// pairs as blocks and methods as treatments.
pub fn friedman_report(
    config: &ExperimentConfig,
    records: &[TrialRecord],
) -> Result<Option<FriedmanReport>> {
    let cells = friedman_cells(config.domain, &config.paired_counts);
    if cells.is_empty() || config.methods.len() < 2 {
        return Ok(None);
    }
    let lookup: BTreeMap<(u64, usize, Method), f64> = records
        .iter()
        .map(|r| ((r.trial_id, r.paired_count, r.method), r.mixed_score))
        .collect();
    let mut trial_ids: Vec<u64> = records.iter().map(|r| r.trial_id).collect();
    trial_ids.sort_unstable();
    trial_ids.dedup();

    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for &t in &trial_ids {
        for &p in &cells {
            let row: Option<Vec<f64>> = config
                .methods
                .iter()
                .map(|&m| lookup.get(&(t, p, m)).copied())
                .collect();
            if let Some(row) = row {
                blocks.push(row);
            }
        }
    }
    if blocks.len() < 2 {
        return Ok(None);
    }
    let k = config.methods.len();
    let matrix = Array2::from_shape_vec((blocks.len(), k), blocks.concat())
        .map_err(|e| Error::Contract(format!("friedman matrix: {e}")))?;
    let (statistic, p_value) = friedman_test(&matrix)?;
    let mut pairwise = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let pair: Array2<f64> = matrix.select(ndarray::Axis(1), &[i, j]);
            let (s, p) = friedman_test(&pair)?;
            pairwise.push(PairwiseFriedman {
                methods: [config.methods[i], config.methods[j]],
                statistic: s,
                p_value: p,
            });
        }
    }
    Ok(Some(FriedmanReport {
        paired_cells: cells,
        methods: config.methods.clone(),
        blocks: matrix.nrows(),
        statistic,
        p_value,
        pairwise,
    }))
}

/// Execute every trial (skipping completed ones), then aggregate. Partial
/// failures are recorded in the ledger and aggregation proceeds over the
/// completed trials.
pub fn run_sweep(config: &ExperimentConfig, config_snapshot: &str) -> Result<SweepOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let snapshot_path = config.output_dir.join("config.snapshot");
    if snapshot_path.exists() {
        let prior = std::fs::read_to_string(&snapshot_path)?;
        if prior != config_snapshot {
            return Err(Error::Config(format!(
                "output dir {} holds a sweep run with a different config; \
                 delete it or choose another directory",
                config.output_dir.display()
            )));
        }
    } else {
        std::fs::write(&snapshot_path, config_snapshot)?;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, std::result::Result<Vec<TrialRecord>, String>>> =
        Mutex::new(BTreeMap::new());
    let workers = config.workers.min(config.trials);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= config.trials {
                    break;
                }
                let dir = trial_dir(&config.output_dir, i);
                let outcome = if dir.join("done").exists() {
                    load_trial_records(&dir).map_err(|e| e.to_string())
                } else {
                    run_trial(config, i).map_err(|e| e.to_string())
                };
                results
                    .lock()
                    .expect("poisoned results lock")
                    .insert(i, outcome);
            });
        }
    });

    let results = results.into_inner().expect("poisoned results lock");
    let mut records = Vec::new();
    let mut statuses = Vec::new();
    for (i, outcome) in results {
        let trial_seed = stream_seed(config.seed, &format!("trial/{i}"));
        match outcome {
            Ok(rs) => {
                statuses.push(TrialStatus {
                    trial_id: i as u64,
                    trial_seed,
                    status: "ok".to_string(),
                    error: None,
                });
                records.extend(rs);
            }
            Err(e) => statuses.push(TrialStatus {
                trial_id: i as u64,
                trial_seed,
                status: "failed".to_string(),
                error: Some(e),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::TrainingFailure {
            best_score: f64::NAN,
            message: "no trial completed; nothing to aggregate".to_string(),
        });
    }

    let summaries = aggregate(config, &records)?;
    let friedman = friedman_report(config, &records)?;

    let mut ledger = String::new();
    for s in &statuses {
        ledger.push_str(&serde_json::to_string(s)?);
        ledger.push('\n');
    }
    std::fs::write(config.output_dir.join("seeds.jsonl"), ledger)?;
    std::fs::write(
        config.output_dir.join("records.jsonl"),
        records_jsonl(&records)?,
    )?;
    std::fs::write(config.output_dir.join("results.csv"), results_csv(&records))?;
    std::fs::write(
        config.output_dir.join("summaries.json"),
        serde_json::to_string_pretty(&summaries)?,
    )?;
    if let Some(f) = &friedman {
        std::fs::write(
            config.output_dir.join("friedman.json"),
            serde_json::to_string_pretty(f)?,
        )?;
    }
    Ok(SweepOutcome {
        records,
        summaries,
        friedman,
        statuses,
    })
}
