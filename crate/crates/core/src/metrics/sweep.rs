//! Analysis sweeps relating task weighting to gradient conflict and to
//! confidence score discrepancy.

use alloc::vec::Vec;

use crate::baselines::{run_stl, train_fixed};
use crate::error::{Error, Result};
use crate::forkmerge::Executor;
use crate::metrics::{csd, shared_gcs, transfer_gain};
use crate::nn::ModelSpec;
use crate::numeric::{linear_combination, purpose, ParamVector, RngStream};
use crate::optim::{OptConfig, TaskWeighting};
use crate::tasks::{TaskFamily, TaskId};

/// One row of the one-step probe: `point_id,lambda,gcs,tg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgGcsRow {
    pub point_id: usize,
    pub lambda: f64,
    pub gcs: f64,
    pub tg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TgGcsConfig {
    /// Target-only steps before probing.
    pub warmup_steps: u64,
    pub lambdas: Vec<f64>,
    pub n_points: usize,
    /// Step size of the probe update.
    pub eta: f64,
}

impl Default for TgGcsConfig {
    fn default() -> Self {
        TgGcsConfig {
            warmup_steps: 1000,
            lambdas: alloc::vec![0.0, 1.0 / 16.0, 0.125, 0.25, 0.5, 1.0],
            n_points: 100,
            eta: 0.01,
        }
    }
}

/// Probes a warm model with one-step updates `θ − η (g_tgt + λ g_aux)`.
///
/// For probe point `p`, `g_tgt` and `g_aux` come from fresh mini-batches
/// (`g_aux` sums every auxiliary task's gradient). Each row reports the
/// shared-parameter cosine of the two gradients and the validation TG of
/// `θ(λ)` against `θ(0)`. Rows are ordered by `(point, λ)`.
pub fn one_step_tg_gcs_sweep<E: Executor>(
    spec: &ModelSpec,
    params: &ParamVector,
    family: &TaskFamily,
    opt_cfg: &OptConfig,
    cfg: &TgGcsConfig,
    seed: u64,
    executor: &E,
) -> Result<Vec<TgGcsRow>> {
    if family.n_aux() == 0 {
        return Err(Error::invalid("tg-gcs sweep", "family has no auxiliary task"));
    }
    let val = &family.target().val;
    let rows = executor.map(cfg.n_points, |p| -> Result<Vec<TgGcsRow>> {
        let mut rng = RngStream::keyed(seed, &[purpose::PROBE, p as u64]);
        let tgt_batch = family.target().train.sample_batch(opt_cfg.batch_size, &mut rng);
        let (_, g_tgt) = spec.loss_and_gradient(params, &tgt_batch)?;
        let mut aux_grads = Vec::with_capacity(family.n_aux());
        for task in family.task_ids().skip(1) {
            let batch = family.task(task)?.train.sample_batch(opt_cfg.batch_size, &mut rng);
            aux_grads.push(spec.loss_and_gradient(params, &batch)?.1);
        }
        let ones = alloc::vec![1.0; aux_grads.len()];
        let g_aux = linear_combination(&ones, &aux_grads.iter().collect::<Vec<_>>())?;
        let cos = shared_gcs(spec, &g_tgt, &g_aux)?;

        let theta0 = linear_combination(&[1.0, -cfg.eta], &[params, &g_tgt])?;
        let perf0 = spec.evaluate(&theta0, val, TaskId::TARGET)?;
        cfg.lambdas
            .iter()
            .map(|&lambda| {
                let perf = if lambda == 0.0 {
                    perf0
                } else {
                    let theta = linear_combination(&[1.0, -cfg.eta, -cfg.eta * lambda], &[params, &g_tgt, &g_aux])?;
                    spec.evaluate(&theta, val, TaskId::TARGET)?
                };
                Ok(TgGcsRow {
                    point_id: p,
                    lambda,
                    gcs: cos,
                    tg: transfer_gain(perf, perf0)?,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(cfg.n_points * cfg.lambdas.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Warms up with target-only training, then runs [`one_step_tg_gcs_sweep`].
pub fn run_tg_gcs_sweep<E: Executor>(
    family: &TaskFamily,
    spec: &ModelSpec,
    opt_cfg: &OptConfig,
    cfg: &TgGcsConfig,
    seed: u64,
    executor: &E,
) -> Result<Vec<TgGcsRow>> {
    let warm = run_stl(family, spec, cfg.warmup_steps, opt_cfg, seed)?;
    one_step_tg_gcs_sweep(spec, &warm.params, family, opt_cfg, cfg, seed, executor)
}

/// One row of the CSD sweep: `lambda,csd,tg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsdRow {
    pub lambda: f64,
    pub csd: f64,
    pub tg: f64,
}

/// For each λ, trains with every auxiliary task at weight λ for `steps`
/// steps, then reports the target-test CSD and TG against λ = 0.
pub fn csd_lambda_sweep<E: Executor>(
    family: &TaskFamily,
    spec: &ModelSpec,
    opt_cfg: &OptConfig,
    steps: u64,
    lambdas: &[f64],
    seed: u64,
    executor: &E,
) -> Result<Vec<CsdRow>> {
    if lambdas.is_empty() {
        return Err(Error::Empty("lambda list"));
    }
    let test = &family.target().test;
    let mut all: Vec<f64> = alloc::vec![0.0];
    all.extend(lambdas.iter().copied().filter(|&l| l != 0.0));
    let trained = executor.map(all.len(), |i| {
        let w = TaskWeighting::uniform_aux(family.n_aux(), all[i])?;
        train_fixed(family, spec, &w, steps, opt_cfg, seed)
    });
    let trained: Vec<_> = trained.into_iter().collect::<Result<_>>()?;
    let reference = trained[0].test;
    lambdas
        .iter()
        .map(|&lambda| {
            let idx = all.iter().position(|&l| l == lambda).expect("listed");
            let out = &trained[idx];
            Ok(CsdRow {
                lambda,
                csd: csd(spec, &out.params, test, TaskId::TARGET)?,
                tg: transfer_gain(out.test, reference)?,
            })
        })
        .collect()
}
