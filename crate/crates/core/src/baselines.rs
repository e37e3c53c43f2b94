//! Reference training procedures: single-task learning, equal weighting,
//! a fixed-λ sweep, gradient-cosine weighting and post-training.
//!
//! All of them start from the same seed-derived initial parameters and draw
//! the same per-step batches as fork/merge branches do, so degenerate
//! settings coincide bit-for-bit (a `{0}` sweep is STL, and so on).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::forkmerge::{train_branch, train_dynamic, TrainContext};
use crate::metrics::{shared_gcs, PerfValue};
use crate::nn::ModelSpec;
use crate::numeric::ParamVector;
use crate::optim::{OptConfig, TaskWeighting};
use crate::tasks::{branch_data_view, TaskFamily, TaskId};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub params: ParamVector,
    pub val: PerfValue,
    pub test: PerfValue,
    /// Full training runs performed.
    pub runs: usize,
    /// Validation evaluations spent on model selection.
    pub evaluations: usize,
    /// The selected λ for [`run_fixed_lambda`].
    pub lambda: Option<f64>,
}

fn outcome(ctx: &TrainContext<'_>, params: ParamVector) -> Result<BaselineOutcome> {
    let target = ctx.family.target();
    let val = ctx.spec.evaluate(&params, &target.val, TaskId::TARGET)?;
    let test = ctx.spec.evaluate(&params, &target.test, TaskId::TARGET)?;
    Ok(BaselineOutcome {
        params,
        val,
        test,
        runs: 1,
        evaluations: 0,
        lambda: None,
    })
}

/// Trains from the seed's initial parameters for `steps` steps under `w`.
pub fn train_fixed(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    w: &TaskWeighting,
    steps: u64,
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    let ctx = TrainContext {
        family,
        spec: model_spec,
        opt: opt_cfg,
        seed,
    };
    let start = ctx.init_params();
    let mut opt = opt_cfg.state(start.len(), steps)?;
    let params = train_branch(&start, w, steps, &ctx, &mut opt)?;
    outcome(&ctx, params)
}

pub fn run_stl(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    steps: u64,
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    train_fixed(family, model_spec, &TaskWeighting::target_only(), steps, opt_cfg, seed)
}

/// Every task at weight 1 for the whole run.
pub fn run_ew(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    steps: u64,
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    let w = TaskWeighting::uniform_aux(family.n_aux(), 1.0)?;
    train_fixed(family, model_spec, &w, steps, opt_cfg, seed)
}

/// Per-λ result of a fixed-λ sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub val: PerfValue,
    pub test: PerfValue,
}

/// One full run per grid value (every auxiliary task at that λ); returns the
/// validation-best, smaller λ on ties, together with every point.
pub fn run_fixed_lambda(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    steps: u64,
    lambda_grid: &[f64],
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<(BaselineOutcome, Vec<SweepPoint>)> {
    if lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut best: Option<BaselineOutcome> = None;
    let mut points = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let w = TaskWeighting::uniform_aux(family.n_aux(), lambda)?;
        let mut out = train_fixed(family, model_spec, &w, steps, opt_cfg, seed)?;
        out.lambda = Some(lambda);
        points.push(SweepPoint {
            lambda,
            val: out.val,
            test: out.test,
        });
        let replace = match &best {
            None => true,
            Some(b) => {
                out.val.value > b.val.value
                    || (out.val.value == b.val.value && lambda < b.lambda.unwrap_or(f64::INFINITY))
            }
        };
        if replace {
            best = Some(out);
        }
    }
    let mut best = best.expect("grid is nonempty");
    best.runs = lambda_grid.len();
    best.evaluations = lambda_grid.len();
    Ok((best, points))
}

/// `max(0, cos)` of two gradients over the shared encoder parameters, or 0
/// when either shared block vanishes.
pub fn gcs_weight(model_spec: &ModelSpec, g_tgt: &ParamVector, g_aux: &ParamVector) -> Result<f64> {
    match shared_gcs(model_spec, g_tgt, g_aux) {
        Ok(c) => Ok(c.max(0.0)),
        Err(Error::ZeroNorm) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Each step weights auxiliary task `k` by `max(0, cos(g_tgt, g_k))`,
/// the cosine taken over shared encoder parameters (0 when either shared
/// gradient vanishes). Returns the outcome and the per-step weights.
pub fn run_gcs_weighting(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    steps: u64,
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<(BaselineOutcome, Vec<Vec<f64>>)> {
    let ctx = TrainContext {
        family,
        spec: model_spec,
        opt: opt_cfg,
        seed,
    };
    let start = ctx.init_params();
    let mut opt = opt_cfg.state(start.len(), steps)?;
    let all = TaskWeighting::uniform_aux(family.n_aux(), 1.0)?;
    let tasks = branch_data_view(family, &all)?;
    let mut trace = Vec::with_capacity(steps as usize);
    let params = train_dynamic(&start, &tasks, steps, &ctx, &mut opt, |_, grads| {
        let g_tgt = &grads[&TaskId::TARGET];
        let mut pairs = Vec::with_capacity(family.n_aux());
        for (&task, g) in grads.iter().filter(|(t, _)| **t != TaskId::TARGET) {
            pairs.push((task, gcs_weight(model_spec, g_tgt, g)?));
        }
        trace.push(pairs.iter().map(|(_, w)| *w).collect());
        TaskWeighting::from_pairs(&pairs)
    })?;
    Ok((outcome(&ctx, params)?, trace))
}

/// Equal weighting for `pretrain_steps`, then target-only fine-tuning of all
/// parameters for `finetune_steps`. One continuous optimizer run.
pub fn run_post_train(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    pretrain_steps: u64,
    finetune_steps: u64,
    opt_cfg: &OptConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    let ctx = TrainContext {
        family,
        spec: model_spec,
        opt: opt_cfg,
        seed,
    };
    let start = ctx.init_params();
    let mut opt = opt_cfg.state(start.len(), pretrain_steps + finetune_steps)?;
    let ew = TaskWeighting::uniform_aux(family.n_aux(), 1.0)?;
    let pre = train_branch(&start, &ew, pretrain_steps, &ctx, &mut opt)?;
    let params = train_branch(&pre, &TaskWeighting::target_only(), finetune_steps, &ctx, &mut opt)?;
    outcome(&ctx, params)
}
