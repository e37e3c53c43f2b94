//! The two analysis sweeps, run for every configured seed.

use std::path::Path;

use forkmerge_core::forkmerge::Executor;
use forkmerge_core::metrics::sweep::{csd_lambda_sweep, run_tg_gcs_sweep};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::runner::{load_family, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgGcsCsvRow {
    pub seed: u64,
    pub point_id: usize,
    pub lambda: f64,
    pub gcs: f64,
    pub tg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsdCsvRow {
    pub seed: u64,
    pub lambda: f64,
    pub csd: f64,
    pub tg: f64,
}

fn core_err(seed: u64) -> impl Fn(forkmerge_core::Error) -> RunError {
    move |source| RunError::Core { seed, source }
}

pub fn tg_gcs<E: Executor>(cfg: &ExperimentConfig, executor: &E) -> Result<Vec<TgGcsCsvRow>, RunError> {
    let spec = cfg.model_spec().map_err(core_err(0))?;
    let opt = cfg.opt_config().expect("validated config");
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let family = load_family(cfg, seed)?;
        let rows = run_tg_gcs_sweep(&family, &spec, &opt, &cfg.tg_gcs(), seed, executor).map_err(core_err(seed))?;
        out.extend(rows.into_iter().map(|r| TgGcsCsvRow {
            seed,
            point_id: r.point_id,
            lambda: r.lambda,
            gcs: r.gcs,
            tg: r.tg,
        }));
    }
    Ok(out)
}

/// Trains for `steps` steps at each `csd_lambdas` value.
pub fn csd_lambda<E: Executor>(cfg: &ExperimentConfig, executor: &E) -> Result<Vec<CsdCsvRow>, RunError> {
    let spec = cfg.model_spec().map_err(core_err(0))?;
    let opt = cfg.opt_config().expect("validated config");
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let family = load_family(cfg, seed)?;
        let rows = csd_lambda_sweep(&family, &spec, &opt, cfg.steps, &cfg.csd_lambdas, seed, executor)
            .map_err(core_err(seed))?;
        out.extend(rows.into_iter().map(|r| CsdCsvRow {
            seed,
            lambda: r.lambda,
            csd: r.csd,
            tg: r.tg,
        }));
    }
    Ok(out)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
