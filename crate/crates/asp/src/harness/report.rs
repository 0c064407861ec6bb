//! Report emission: summary curves, latent/communication scatter data, and
//! the policy-space pruning CSV. Everything here is recomputed from
//! persisted trial records and checkpoints; reports hold no private state.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};

use crate::envs::lever::all_deals;
use crate::error::{Error, Result};
use crate::evaluation::{summarize, TrialRecord};
use crate::policyspace::{log_ratio, log_ratio_stirling_estimate, ActionMarginal};
use crate::stream_rng;
use crate::training::{Domain, Nets};

use super::runner::{load_nets, trial_dir};

/// Write the pruning-analysis CSV over an `(S, A)` grid. Pairs where the
/// uniform marginal is not integral get a row-level `infeasible` entry
/// instead of numbers.
pub fn analyze_policyspace(
    s_values: &[usize],
    a_values: &[usize],
    output: &Path,
) -> Result<String> {
    if s_values.is_empty() || a_values.is_empty() {
        return Err(Error::Config("empty S or A grid".into()));
    }
    let mut csv = String::from("S,A,exact_lr,stirling_lr\n");
    for &s in s_values {
        for &a in a_values {
            if a < 2 || a > s || s % a != 0 {
                csv.push_str(&format!("{s},{a},infeasible,infeasible\n"));
                continue;
            }
            let marginal = ActionMarginal::uniform(a)?;
            let exact = log_ratio(s, a, &marginal)?;
            let estimate = log_ratio_stirling_estimate(s, a)?;
            csv.push_str(&format!("{s},{a},{exact},{estimate}\n"));
        }
    }
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(output, &csv)?;
    Ok(csv)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigh(matrix: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-30 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// Project rows onto the top `components` principal components. Each
/// component's sign is fixed so its largest-magnitude loading is positive.
pub fn pca_project(data: &Array2<f64>, components: usize) -> Result<Array2<f64>> {
    let (n, d) = data.dim();
    if n < 2 || components == 0 || components > d {
        return Err(Error::Contract(format!(
            "PCA needs >= 2 rows and 1..=dim components, got {n}x{d} with {components}"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let centered = data - &mean.broadcast((n, d)).expect("broadcast");
    let cov = centered.t().dot(&centered).mapv(|x| x / (n as f64 - 1.0));
    let (vals, vecs) = jacobi_eigh(&cov.as_standard_layout().to_owned());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    let mut basis = Array2::zeros((d, components));
    for (c, &idx) in order.iter().take(components).enumerate() {
        let mut col = vecs.column(idx).to_owned();
        let peak = col
            .iter()
            .cloned()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        basis.column_mut(c).assign(&col);
    }
    Ok(centered.dot(&basis))
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn load_records(run_dir: &Path) -> Result<Vec<TrialRecord>> {
    let path = run_dir.join("records.jsonl");
    if !path.exists() {
        return Err(Error::Config(format!(
            "no records.jsonl under {}",
            run_dir.display()
        )));
    }
    let text = std::fs::read_to_string(path)?;
    let records: Vec<TrialRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::Config("records.jsonl is empty".into()));
    }
    Ok(records)
}

fn first_completed_trial(run_dir: &Path, records: &[TrialRecord]) -> Option<usize> {
    let mut ids: Vec<u64> = records.iter().map(|r| r.trial_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| id as usize)
        .find(|&i| trial_dir(run_dir, i).join("done").exists())
}

fn write_scatter(run_dir: &Path, domain: Domain, trial: usize) -> Result<Option<PathBuf>> {
    let dir = trial_dir(run_dir, trial);
    match domain {
        Domain::Vae => {
            let Nets::Vae { encoder, .. } = load_nets(&dir, "base", domain)? else {
                unreachable!()
            };
            let mut rng = stream_rng(0xA5CA77E8, "report/scatter");
            let data = crate::envs::mnist::synthetic_digits(512, &mut rng);
            let (means, _) = encoder.encode(&data.images)?;
            let points = if means.ncols() == 2 {
                means
            } else {
                pca_project(&means, 2)?
            };
            let mut csv = String::from("x,y,label\n");
            for (row, label) in points.rows().into_iter().zip(&data.labels) {
                csv.push_str(&format!("{},{},{}\n", row[0], row[1], label));
            }
            let path = run_dir.join("report").join("latent-scatter.csv");
            std::fs::write(&path, csv)?;
            Ok(Some(path))
        }
        Domain::Lever => {
            let Nets::Lever { net } = load_nets(&dir, "base", domain)? else {
                unreachable!()
            };
            let deals = all_deals();
            let flat: Vec<usize> = deals.iter().flatten().copied().collect();
            let cache = net.forward_cached(&flat)?;
            let points = pca_project(&cache.h2, 2)?;
            let mut csv = String::from("x,y,label\n");
            for (row, &id) in points.rows().into_iter().zip(&flat) {
                csv.push_str(&format!("{},{},{}\n", row[0], row[1], id));
            }
            let path = run_dir.join("report").join("commnet-scatter.csv");
            std::fs::write(&path, csv)?;
            Ok(Some(path))
        }
        Domain::Particle => Ok(None),
    }
}

/// Emit plot-ready CSVs from a completed run directory: median/quartile
/// curves per (method, paired) and the 2-D scatter data for the domain's
/// representation space.
pub fn emit_report(run_dir: &Path) -> Result<ReportOutcome> {
    let records = load_records(run_dir)?;
    let report_dir = run_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;

    let mut files = Vec::new();
    let mut warnings = Vec::new();

    // Expected grid = cross product of the methods and paired counts that
    // appear anywhere; absent (trial, cell) pairs are reported.
    let methods: BTreeSet<_> = records.iter().map(|r| r.method).collect();
    let paired: BTreeSet<_> = records.iter().map(|r| r.paired_count).collect();
    let trials: BTreeSet<_> = records.iter().map(|r| r.trial_id).collect();
    for &t in &trials {
        for &m in &methods {
            for &p in &paired {
                let present = records
                    .iter()
                    .any(|r| r.trial_id == t && r.method == m && r.paired_count == p);
                if !present {
                    warnings.push(format!(
                        "missing cell: trial {t}, method {}, paired {p}",
                        m.name()
                    ));
                }
            }
        }
    }

    let mut curves = String::from("method,paired,median,q1,q3,n\n");
    for &m in &methods {
        for &p in &paired {
            let scores: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m && r.paired_count == p)
                .map(|r| r.mixed_score)
                .collect();
            if scores.is_empty() {
                continue;
            }
            let s = summarize(&scores)?;
            curves.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.name(),
                p,
                s.median,
                s.q1,
                s.q3,
                s.count
            ));
        }
    }
    let curves_path = report_dir.join("curves.csv");
    std::fs::write(&curves_path, curves)?;
    files.push(curves_path);

    let domain = records[0].domain;
    match first_completed_trial(run_dir, &records) {
        Some(trial) => match write_scatter(run_dir, domain, trial) {
            Ok(Some(path)) => files.push(path),
            Ok(None) => {}
            Err(e) => warnings.push(format!("scatter emission failed: {e}")),
        },
        None => warnings.push("no completed trial directory; scatter data skipped".to_string()),
    }

    if !warnings.is_empty() {
        std::fs::write(report_dir.join("warnings.txt"), warnings.join("\n") + "\n")?;
    }
    Ok(ReportOutcome { files, warnings })
}
