//! Training a single branch under a fixed or per-step task weighting.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::numeric::{purpose, ParamVector, RngStream};
use crate::optim::{sgd_step, weighted_gradient, OptConfig, OptState, TaskWeighting};
use crate::tasks::{branch_data_view, DataSplit, TaskFamily, TaskId};

/// One candidate branch: the task weighting `ν^b` it trains under.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub branch_id: usize,
    pub weighting: TaskWeighting,
}

impl BranchSpec {
    pub fn new(branch_id: usize, weighting: TaskWeighting) -> Self {
        BranchSpec { branch_id, weighting }
    }
}

/// `K + 1` branches: `ω^0` trains the target alone and `ω^k` trains the
/// target together with auxiliary task `k`, both at weight 1.
pub fn make_omega_branches(n_aux: usize) -> Result<Vec<BranchSpec>> {
    if n_aux == 0 {
        return Err(Error::invalid("omega branches", "need at least one auxiliary task"));
    }
    let mut out = alloc::vec![BranchSpec::new(0, TaskWeighting::target_only())];
    for k in 1..=n_aux {
        out.push(BranchSpec::new(
            k,
            TaskWeighting::from_pairs(&[(TaskId(k as u32), 1.0)])?,
        ));
    }
    Ok(out)
}

/// The two branches of the basic procedure: target only, and the target
/// jointly with every auxiliary task mixed in at weight 1.
pub fn make_joint_branches(n_aux: usize) -> Result<Vec<BranchSpec>> {
    Ok(alloc::vec![
        BranchSpec::new(0, TaskWeighting::target_only()),
        BranchSpec::new(1, TaskWeighting::uniform_aux(n_aux, 1.0)?),
    ])
}

/// Everything a training step needs besides the parameters and optimizer.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub family: &'a TaskFamily,
    pub spec: &'a ModelSpec,
    pub opt: &'a OptConfig,
    pub seed: u64,
}

impl<'a> TrainContext<'a> {
    /// Mini-batch of `task` for global step `step`.
    ///
    /// Batches are keyed by `(seed, task, step)` only, so every branch (and
    /// every baseline) sees the same draw of a given task at a given step.
    pub fn batch(&self, split: &DataSplit, task: TaskId, step: u64) -> DataSplit {
        let mut rng = RngStream::keyed(self.seed, &[purpose::BATCH, task.0 as u64, step]);
        split.sample_batch(self.opt.batch_size, &mut rng)
    }

    /// Initial parameters for `seed`.
    pub fn init_params(&self) -> ParamVector {
        self.spec
            .init_params(&mut RngStream::keyed(self.seed, &[purpose::INIT]))
    }

    /// Per-task gradients at `params` on the batches of `step`.
    pub fn task_gradients(
        &self,
        params: &ParamVector,
        tasks: &BTreeMap<TaskId, &DataSplit>,
        step: u64,
    ) -> Result<BTreeMap<TaskId, ParamVector>> {
        let mut grads = BTreeMap::new();
        for (&task, split) in tasks {
            let batch = self.batch(split, task, step);
            let (_, mut g) = self.spec.loss_and_gradient(params, &batch).map_err(|e| match e {
                Error::NonFiniteLoss(task) => Error::Diverged {
                    task,
                    step,
                    branch: None,
                },
                other => other,
            })?;
            let scale = self.opt.loss_scale(task);
            if scale != 1.0 {
                g = crate::numeric::linear_combination(&[scale], &[&g])?;
            }
            grads.insert(task, g);
        }
        Ok(grads)
    }
}

/// `steps` SGD steps under a fixed weighting.
///
/// Each step draws one mini-batch per task with positive weight (see
/// [`branch_data_view`]) and descends along the weighted gradient.
pub fn train_branch(
    start: &ParamVector,
    weighting: &TaskWeighting,
    steps: u64,
    ctx: &TrainContext<'_>,
    opt: &mut OptState,
) -> Result<ParamVector> {
    let tasks = branch_data_view(ctx.family, weighting)?;
    train_dynamic(start, &tasks, steps, ctx, opt, |_, _| Ok(weighting.clone()))
}

/// Like [`train_branch`], but the weighting is recomputed every step from
/// the per-task gradients of that step.
pub fn train_dynamic<F>(
    start: &ParamVector,
    tasks: &BTreeMap<TaskId, &DataSplit>,
    steps: u64,
    ctx: &TrainContext<'_>,
    opt: &mut OptState,
    mut weigh: F,
) -> Result<ParamVector>
where
    F: FnMut(u64, &BTreeMap<TaskId, ParamVector>) -> Result<TaskWeighting>,
{
    if start.len() != ctx.spec.param_count() {
        return Err(Error::LengthMismatch {
            expected: ctx.spec.param_count(),
            found: start.len(),
        });
    }
    let mut params = start.clone();
    for _ in 0..steps {
        let step = opt.step_count();
        let grads = ctx.task_gradients(&params, tasks, step)?;
        let w = weigh(step, &grads)?;
        let g = weighted_gradient(&grads, &w)?;
        params = sgd_step(&params, &g, opt).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged {
                task: TaskId::TARGET,
                step,
                branch: None,
            },
            other => other,
        })?;
    }
    Ok(params)
}
