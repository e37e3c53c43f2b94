//! Multi-seed experiment execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use forkmerge_core::baselines::{
    run_ew, run_fixed_lambda, run_gcs_weighting, run_post_train, run_stl, BaselineOutcome,
};
use forkmerge_core::forkmerge::{make_joint_branches, make_omega_branches, run_forkmerge, Executor, ForkMergeResult};
use forkmerge_core::metrics::{transfer_gain, PerfValue};
use forkmerge_core::tasks::{generate_family, TaskFamily};
use forkmerge_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::csv_io::{read_family, write_text, DataError};
use crate::records::*;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error("seed {seed}: {source}")]
    Core { seed: u64, source: CoreError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Per-round merge coefficients of one fork/merge run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrajectory {
    pub method: String,
    pub seed: u64,
    pub target_branch: usize,
    pub rounds: Vec<TrajectoryRound>,
    /// The auxiliary branch's last coefficient in a two-branch run.
    pub final_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRound {
    pub round: usize,
    pub steps: u64,
    pub coeffs: BTreeMap<usize, f64>,
    pub merged_val: f64,
    pub evaluations: usize,
}

/// Everything one `run` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub trajectories: Vec<LambdaTrajectory>,
    pub output_dir: PathBuf,
}

struct MethodOutcome {
    test: PerfValue,
    evaluations: usize,
    forkmerge: Option<ForkMergeResult>,
}

impl From<BaselineOutcome> for MethodOutcome {
    fn from(b: BaselineOutcome) -> Self {
        MethodOutcome {
            test: b.test,
            evaluations: b.evaluations,
            forkmerge: None,
        }
    }
}

/// Runs `cfg.method` for every seed, writing into `out_dir`:
/// `config.toml` (the effective config), `records.csv` (appended as each
/// run finishes), one merge history CSV per fork/merge run and
/// `lambda_trajectory.json`.
///
/// Unless the method is STL itself, an STL run precedes each seed when
/// `compute_tg` is set; its record is written too, with `method = stl`.
/// A diverged run is recorded with a NaN value and the next seed proceeds.
pub fn run_experiment<E: Executor>(
    cfg: &ExperimentConfig,
    executor: &E,
    out_dir: &Path,
) -> Result<RunOutput, RunError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_text(&out_dir.join(CONFIG_ECHO_FILE), &cfg.to_toml())?;
    let mut writer = RecordWriter::create(&out_dir.join(RECORDS_FILE))?;

    let loaded = cfg.data_dir.as_deref().map(read_family).transpose()?;
    let spec = cfg.model_spec().map_err(|source| RunError::Core { seed: 0, source })?;
    let opt = cfg.opt_config().expect("validated config");

    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for &seed in &cfg.seeds {
        let core = |source| RunError::Core { seed, source };
        let generated;
        let family = match &loaded {
            Some(f) => f,
            None => {
                generated = generate_family(&cfg.family(seed)).map_err(core)?;
                &generated
            }
        };
        if family.input_dim() != cfg.input_dim || family.n_tasks() != cfg.n_tasks {
            return Err(RunError::Data(DataError::Invalid {
                path: cfg.data_dir.clone().unwrap_or_default(),
                reason: "family shape does not match n_tasks and input_dim".into(),
            }));
        }

        let mut stl_test = None;
        if cfg.method == Method::Stl || cfg.compute_tg {
            let started = Instant::now();
            let outcome = guard(
                run_stl(family, &spec, cfg.steps, &opt, seed).map(MethodOutcome::from),
                seed,
            )?;
            let rec = record("stl", seed, outcome.as_ref(), started);
            stl_test = outcome.map(|o| o.test);
            let rec = with_tg(rec, stl_test);
            writer.write(&rec)?;
            records.push(rec);
        }
        if cfg.method == Method::Stl {
            continue;
        }

        let started = Instant::now();
        let outcome = guard(run_method(cfg, family, &spec, &opt, seed, executor), seed)?;
        let rec = with_tg(record(cfg.method.name(), seed, outcome.as_ref(), started), stl_test);
        writer.write(&rec)?;
        records.push(rec);

        if let Some(fm) = outcome.and_then(|o| o.forkmerge) {
            let rows = merge_history_rows(&fm);
            write_merge_history(&merge_history_path(out_dir, cfg.method.name(), seed), &rows)?;
            trajectories.push(trajectory(cfg.method.name(), seed, &fm));
        }
    }
    if cfg.method.is_forkmerge() {
        let json = serde_json::to_string_pretty(&trajectories).expect("trajectory serializes");
        write_text(&out_dir.join(LAMBDA_TRAJECTORY_FILE), &(json + "\n"))?;
    }
    Ok(RunOutput {
        records,
        trajectories,
        output_dir: out_dir.to_path_buf(),
    })
}

/// Turns divergence into `None` (reported on stderr); other errors abort.
fn guard(result: forkmerge_core::Result<MethodOutcome>, seed: u64) -> Result<Option<MethodOutcome>, RunError> {
    match result {
        Ok(o) => Ok(Some(o)),
        Err(e @ CoreError::Diverged { .. }) => {
            eprintln!("seed {seed}: {e}; recorded as NaN");
            Ok(None)
        }
        Err(source) => Err(RunError::Core { seed, source }),
    }
}

fn record(method: &str, seed: u64, outcome: Option<&MethodOutcome>, started: Instant) -> ResultRecord {
    ResultRecord {
        method: method.to_string(),
        seed,
        task_id: 0,
        split: "test".into(),
        metric: outcome.map_or("accuracy", |o| o.test.metric.name()).to_string(),
        value: outcome.map_or(f64::NAN, |o| o.test.value),
        tg: None,
        psearch_evals: outcome.map_or(0, |o| o.evaluations),
        wall_s: started.elapsed().as_secs_f64(),
    }
}

fn with_tg(mut rec: ResultRecord, stl: Option<PerfValue>) -> ResultRecord {
    if let Some(stl) = stl {
        if rec.value.is_finite() {
            let perf = PerfValue::new(rec.value, stl.metric);
            rec.tg = transfer_gain(perf, stl).ok();
        }
    }
    rec
}

fn run_method<E: Executor>(
    cfg: &ExperimentConfig,
    family: &TaskFamily,
    spec: &forkmerge_core::nn::ModelSpec,
    opt: &forkmerge_core::optim::OptConfig,
    seed: u64,
    executor: &E,
) -> forkmerge_core::Result<MethodOutcome> {
    let steps = cfg.steps;
    Ok(match cfg.method {
        Method::Stl => run_stl(family, spec, steps, opt, seed)?.into(),
        Method::Ew => run_ew(family, spec, steps, opt, seed)?.into(),
        Method::FixedLambda => run_fixed_lambda(family, spec, steps, &cfg.lambda_grid, opt, seed)?
            .0
            .into(),
        Method::Gcs => run_gcs_weighting(family, spec, steps, opt, seed)?.0.into(),
        Method::PostTrain => {
            let (pre, ft) = cfg.post_train_split();
            run_post_train(family, spec, pre, ft, opt, seed)?.into()
        }
        Method::Forkmerge | Method::ForkmergeMulti => {
            let branches = if cfg.method == Method::Forkmerge {
                make_joint_branches(family.n_aux())?
            } else {
                make_omega_branches(family.n_aux())?
            };
            let fm = run_forkmerge(family, spec, &cfg.merge_schedule(), &branches, opt, seed, executor)?;
            MethodOutcome {
                test: fm.test,
                evaluations: fm.history.iter().map(|h| h.evaluations).sum(),
                forkmerge: Some(fm),
            }
        }
    })
}

pub fn merge_history_rows(fm: &ForkMergeResult) -> Vec<MergeHistoryRow> {
    let mut rows = Vec::new();
    for rec in &fm.history {
        let start = rows.len();
        for c in &rec.candidates {
            rows.push(MergeHistoryRow {
                round: rec.round,
                branch_id: c.branch_id.to_string(),
                candidate_lambda_or_coeff: Some(c.coeff),
                val_perf: c.val_perf.value,
                chosen: 0,
            });
        }
        if rec.candidates.len() == 1 {
            rows[start].chosen = 1;
        } else if !rec.lambda_trace.is_empty() {
            let aux = rec
                .candidates
                .iter()
                .find(|c| c.branch_id != fm.target_branch)
                .expect("two live branches");
            let mut marked = false;
            for &(lambda, perf) in &rec.lambda_trace {
                let chosen = !marked && lambda == aux.coeff && perf == rec.merged_perf;
                marked |= chosen;
                rows.push(MergeHistoryRow {
                    round: rec.round,
                    branch_id: aux.branch_id.to_string(),
                    candidate_lambda_or_coeff: Some(lambda),
                    val_perf: perf.value,
                    chosen: chosen as u8,
                });
            }
        } else {
            rows.push(MergeHistoryRow {
                round: rec.round,
                branch_id: "merged".into(),
                candidate_lambda_or_coeff: None,
                val_perf: rec.merged_perf.value,
                chosen: 1,
            });
        }
    }
    rows
}

fn trajectory(method: &str, seed: u64, fm: &ForkMergeResult) -> LambdaTrajectory {
    LambdaTrajectory {
        method: method.to_string(),
        seed,
        target_branch: fm.target_branch,
        rounds: fm
            .history
            .iter()
            .map(|h| TrajectoryRound {
                round: h.round,
                steps: h.steps,
                coeffs: h.candidates.iter().map(|c| (c.branch_id, c.coeff)).collect(),
                merged_val: h.merged_perf.value,
                evaluations: h.evaluations,
            })
            .collect(),
        final_lambda: fm.final_lambda(),
    }
}

/// Loads a family for `cfg` and `seed`, from `data_dir` if one is set.
pub fn load_family(cfg: &ExperimentConfig, seed: u64) -> Result<TaskFamily, RunError> {
    match &cfg.data_dir {
        Some(dir) => Ok(read_family(dir)?),
        None => generate_family(&cfg.family(seed)).map_err(|source| RunError::Core { seed, source }),
    }
}
