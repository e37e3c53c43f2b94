//! Multi-seed aggregation of result records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forkmerge_core::metrics::delta_m;
use serde::{Deserialize, Serialize};

use crate::csv_io::write_text;
use crate::records::{read_records, RecordError, ResultRecord, LAMBDA_TRAJECTORY_FILE, RECORDS_FILE};
use crate::runner::LambdaTrajectory;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRAJECTORY_TABLE: &str = "lambda_trajectory.csv";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no records to aggregate")]
    NoRecords,
    #[error("no stl records, which the delta_m column needs")]
    NoBaseline,
    #[error("method {method} lacks task {task_id}, which delta_m needs")]
    MissingTask { method: String, task_id: u32 },
    #[error("delta_m for {method}: {reason}")]
    DeltaM { method: String, reason: String },
    #[error("no {RECORDS_FILE} under {0}")]
    NotAResultsDir(PathBuf),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

/// Mean and spread of one method's test metric on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub method: String,
    pub task_id: u32,
    pub metric: String,
    /// Seeds with a finite value.
    pub n: usize,
    pub diverged: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub mean_tg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Percent; `None` when not requested.
    pub delta_m: Option<f64>,
    pub tasks: Vec<TaskSummary>,
}

/// Groups test records by method and task. With `with_delta_m`, each
/// method's Δ_m is computed against the `stl` means over the tasks STL
/// reports. The result does not depend on record order.
pub fn aggregate(records: &[ResultRecord], with_delta_m: bool) -> Result<Vec<MethodSummary>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let mut groups: BTreeMap<(String, u32), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == "test") {
        groups.entry((r.method.clone(), r.task_id)).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(ReportError::NoRecords);
    }

    let mut by_method: BTreeMap<String, Vec<TaskSummary>> = BTreeMap::new();
    for ((method, task_id), mut rs) in groups {
        rs.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.value.total_cmp(&b.value)));
        let values: Vec<f64> = rs.iter().map(|r| r.value).filter(|v| v.is_finite()).collect();
        let tgs: Vec<f64> = rs.iter().filter_map(|r| r.tg).filter(|v| v.is_finite()).collect();
        let (mean, std) = mean_std(&values);
        by_method.entry(method.clone()).or_default().push(TaskSummary {
            method,
            task_id,
            metric: rs[0].metric.clone(),
            n: values.len(),
            diverged: rs.len() - values.len(),
            mean,
            std,
            mean_tg: (!tgs.is_empty()).then(|| mean_std(&tgs).0),
        });
    }

    let baseline = if with_delta_m {
        Some(by_method.get("stl").ok_or(ReportError::NoBaseline)?.clone())
    } else {
        None
    };
    by_method
        .into_iter()
        .map(|(method, tasks)| {
            let delta_m = match &baseline {
                None => None,
                Some(base) => Some(method_delta_m(&method, &tasks, base)?),
            };
            Ok(MethodSummary { method, delta_m, tasks })
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn method_delta_m(method: &str, tasks: &[TaskSummary], base: &[TaskSummary]) -> Result<f64, ReportError> {
    let mut b = Vec::with_capacity(base.len());
    let mut m = Vec::with_capacity(base.len());
    for bt in base {
        let mt = tasks
            .iter()
            .find(|t| t.task_id == bt.task_id)
            .ok_or_else(|| ReportError::MissingTask {
                method: method.to_string(),
                task_id: bt.task_id,
            })?;
        b.push(bt.mean);
        m.push(mt.mean);
    }
    // Accuracy and negative MSE are both higher-is-better.
    delta_m(&b, &m, &vec![false; b.len()])
        .map(|d| d * 100.0)
        .map_err(|e| ReportError::DeltaM {
            method: method.to_string(),
            reason: e.to_string(),
        })
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    method: &'a str,
    task_id: u32,
    metric: &'a str,
    n: usize,
    diverged: usize,
    mean: f64,
    std: f64,
    mean_tg: Option<f64>,
    delta_m: Option<f64>,
}

#[derive(Serialize)]
struct TrajectoryCsvRow<'a> {
    method: &'a str,
    seed: u64,
    round: usize,
    branch_id: usize,
    coeff: f64,
}

/// Reads `records.csv` under `dir`, writes `summary.csv`, `summary.json`
/// and, when fork/merge runs are present, `lambda_trajectory.csv`.
pub fn report_dir(dir: &Path, with_delta_m: bool) -> Result<Vec<MethodSummary>, ReportError> {
    let path = dir.join(RECORDS_FILE);
    if !path.is_file() {
        return Err(ReportError::NotAResultsDir(dir.to_path_buf()));
    }
    let summary = aggregate(&read_records(&path)?, with_delta_m)?;
    let file_err = |path: &Path, e: &dyn std::fmt::Display| ReportError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };

    let csv_path = dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| file_err(&csv_path, &e))?;
    for s in &summary {
        for t in &s.tasks {
            w.serialize(SummaryCsvRow {
                method: &s.method,
                task_id: t.task_id,
                metric: &t.metric,
                n: t.n,
                diverged: t.diverged,
                mean: t.mean,
                std: t.std,
                mean_tg: t.mean_tg,
                delta_m: s.delta_m,
            })
            .map_err(|e| file_err(&csv_path, &e))?;
        }
    }
    w.flush().map_err(|e| file_err(&csv_path, &e))?;

    let json_path = dir.join(SUMMARY_JSON);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&json_path, &(json + "\n")).map_err(|e| file_err(&json_path, &e))?;

    let traj_path = dir.join(LAMBDA_TRAJECTORY_FILE);
    if traj_path.is_file() {
        let text = std::fs::read_to_string(&traj_path).map_err(|e| file_err(&traj_path, &e))?;
        let runs: Vec<LambdaTrajectory> = serde_json::from_str(&text).map_err(|e| file_err(&traj_path, &e))?;
        let table = dir.join(TRAJECTORY_TABLE);
        let mut w = csv::Writer::from_path(&table).map_err(|e| file_err(&table, &e))?;
        for run in &runs {
            for round in &run.rounds {
                for (&branch_id, &coeff) in &round.coeffs {
                    w.serialize(TrajectoryCsvRow {
                        method: &run.method,
                        seed: run.seed,
                        round: round.round,
                        branch_id,
                        coeff,
                    })
                    .map_err(|e| file_err(&table, &e))?;
                }
            }
        }
        w.flush().map_err(|e| file_err(&table, &e))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, seed: u64, task_id: u32, value: f64) -> ResultRecord {
        ResultRecord {
            method: method.into(),
            seed,
            task_id,
            split: "test".into(),
            metric: "accuracy".into(),
            value,
            tg: None,
            psearch_evals: 0,
            wall_s: 0.0,
        }
    }

    #[test]
    fn single_seed_has_zero_spread() {
        let s = aggregate(&[rec("stl", 1, 0, 0.7)], true).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tasks[0].std, 0.0);
        assert_eq!(s[0].tasks[0].mean, 0.7);
        assert_eq!(s[0].delta_m, Some(0.0));
    }

    #[test]
    fn published_per_domain_accuracies_give_the_published_delta_m() {
        let stl = [77.6, 41.4, 71.8, 73.0, 84.6, 70.2];
        let ew = [78.0, 38.1, 67.2, 50.8, 77.1, 67.0];
        let mut records = Vec::new();
        for (k, (s, e)) in stl.iter().zip(&ew).enumerate() {
            records.push(rec("stl", 0, k as u32, *s));
            records.push(rec("ew", 0, k as u32, *e));
        }
        let s = aggregate(&records, true).unwrap();
        let ew = s.iter().find(|m| m.method == "ew").unwrap();
        assert!((ew.delta_m.unwrap() + 9.62).abs() <= 0.01, "{:?}", ew.delta_m);
    }

    #[test]
    fn delta_m_requires_stl() {
        assert!(matches!(
            aggregate(&[rec("ew", 1, 0, 0.5)], true),
            Err(ReportError::NoBaseline)
        ));
        assert!(aggregate(&[rec("ew", 1, 0, 0.5)], false).is_ok());
        assert!(matches!(aggregate(&[], false), Err(ReportError::NoRecords)));
    }

    #[test]
    fn diverged_runs_are_counted_not_averaged() {
        let s = aggregate(&[rec("ew", 1, 0, 0.5), rec("ew", 2, 0, f64::NAN)], false).unwrap();
        assert_eq!(s[0].tasks[0].n, 1);
        assert_eq!(s[0].tasks[0].diverged, 1);
        assert_eq!(s[0].tasks[0].mean, 0.5);
    }
}
