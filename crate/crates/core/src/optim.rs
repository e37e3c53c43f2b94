//! Task weightings, weighted gradient aggregation and SGD with momentum.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::{check_finite, linear_combination, ParamVector};
use crate::tasks::TaskId;

/// Nonnegative per-task coefficients with the target's weight pinned to 1.
///
/// Tasks absent from the map have weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeighting {
    weights: BTreeMap<TaskId, f64>,
}

impl TaskWeighting {
    pub fn target_only() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(TaskId::TARGET, 1.0);
        TaskWeighting { weights }
    }

    /// Builds a weighting from explicit entries. The target may be listed
    /// (it must then be 1) or omitted.
    pub fn new(weights: BTreeMap<TaskId, f64>) -> Result<Self> {
        let mut weights = weights;
        match weights.get(&TaskId::TARGET) {
            None => {
                weights.insert(TaskId::TARGET, 1.0);
            }
            Some(&1.0) => {}
            Some(&w) => {
                return Err(Error::invalid(
                    "task weighting",
                    alloc::format!("target weight must be 1, got {w}"),
                ))
            }
        }
        if let Some((id, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(
                "task weighting",
                alloc::format!("weight {w} for task {id} is not a finite nonnegative number"),
            ));
        }
        Ok(TaskWeighting { weights })
    }

    pub fn from_pairs(pairs: &[(TaskId, f64)]) -> Result<Self> {
        Self::new(pairs.iter().copied().collect())
    }

    /// `λ` on each of the auxiliary tasks `1..=n_aux`.
    pub fn uniform_aux(n_aux: usize, lambda: f64) -> Result<Self> {
        let pairs: Vec<(TaskId, f64)> = (1..=n_aux as u32).map(|k| (TaskId(k), lambda)).collect();
        Self::from_pairs(&pairs)
    }

    pub fn get(&self, id: TaskId) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    /// Entries in ascending task order, including zero weights that were set explicitly.
    pub fn iter(&self) -> impl Iterator<Item = (TaskId, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (*k, *v))
    }

    pub fn active_tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.iter().filter(|(_, w)| *w > 0.0).map(|(k, _)| k)
    }

    pub fn aux_sum(&self) -> f64 {
        self.iter().filter(|(k, _)| *k != TaskId::TARGET).map(|(_, w)| w).sum()
    }

    pub fn is_target_only(&self) -> bool {
        self.iter().all(|(k, w)| k == TaskId::TARGET || w == 0.0)
    }

    /// Whether the auxiliary weights satisfy `Σ_{k≠0} λ_k ≤ 1`.
    pub fn is_merge_point(&self) -> bool {
        self.aux_sum() <= 1.0 + 1e-12
    }

    /// Largest task id mentioned.
    pub fn max_task(&self) -> TaskId {
        *self.weights.keys().next_back().expect("target always present")
    }
}

/// `Σ_k λ_k g_k` over tasks with nonzero weight, in ascending task order.
pub fn weighted_gradient(per_task_grads: &BTreeMap<TaskId, ParamVector>, w: &TaskWeighting) -> Result<ParamVector> {
    let mut coeffs = Vec::new();
    let mut grads = Vec::new();
    for task in w.active_tasks() {
        let g = per_task_grads.get(&task).ok_or(Error::MissingGradient(task))?;
        coeffs.push(w.get(task));
        grads.push(g);
    }
    linear_combination(&coeffs, &grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `η_t = η (1 + cos(π t / T)) / 2`, held at 0 for `t ≥ T`.
    Cosine {
        total_steps: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    momentum_buffer: ParamVector,
    step_count: u64,
    base_lr: f64,
    momentum_coeff: f64,
    schedule: LrSchedule,
}

impl OptState {
    pub fn new(len: usize, base_lr: f64, momentum_coeff: f64, schedule: LrSchedule) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(Error::invalid("optimizer", "learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum_coeff) {
            return Err(Error::invalid("optimizer", "momentum must lie in [0, 1)"));
        }
        Ok(OptState {
            momentum_buffer: ParamVector::zeros(len),
            step_count: 0,
            base_lr,
            momentum_coeff,
            schedule,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn momentum_buffer(&self) -> &ParamVector {
        &self.momentum_buffer
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::Cosine { total_steps: 0 } => self.base_lr,
            LrSchedule::Cosine { total_steps } => {
                let t = step.min(total_steps) as f64 / total_steps as f64;
                self.base_lr * (1.0 + libm::cos(core::f64::consts::PI * t)) / 2.0
            }
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step_count)
    }

    /// Zeroes the momentum buffer; the step counter keeps running.
    pub fn reset_momentum(&mut self) {
        self.momentum_buffer = ParamVector::zeros(self.momentum_buffer.len());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

/// Optimizer and sampling recipe shared by every training procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    pub momentum: f64,
    pub schedule: ScheduleKind,
    pub batch_size: usize,
    /// Multiplier on a task's loss (and so its gradient); absent means 1.
    pub loss_scales: BTreeMap<TaskId, f64>,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            lr: 0.05,
            momentum: 0.9,
            schedule: ScheduleKind::Cosine,
            batch_size: 32,
            loss_scales: BTreeMap::new(),
        }
    }
}

impl OptConfig {
    /// Fresh optimizer state for a run of `total_steps` steps.
    pub fn state(&self, len: usize, total_steps: u64) -> Result<OptState> {
        if self.batch_size == 0 {
            return Err(Error::invalid("optimizer", "batch size must be positive"));
        }
        if self.loss_scales.values().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("optimizer", "loss scales must be positive"));
        }
        let schedule = match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant,
            ScheduleKind::Cosine => LrSchedule::Cosine { total_steps },
        };
        OptState::new(len, self.lr, self.momentum, schedule)
    }

    pub fn loss_scale(&self, task: TaskId) -> f64 {
        self.loss_scales.get(&task).copied().unwrap_or(1.0)
    }
}

/// One SGD-with-momentum step:
/// `buf ← μ·buf + g`, `θ ← θ − η_t·buf`, `t ← t + 1`.
///
/// On error `state` is left untouched.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, state: &mut OptState) -> Result<ParamVector> {
    let n = state.momentum_buffer.len();
    for v in [params, grad] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    let lr = state.current_lr();
    let mu = state.momentum_coeff;
    let buf: Vec<f64> = state
        .momentum_buffer
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(b, g)| mu * b + g)
        .collect();
    let next: Vec<f64> = params.as_slice().iter().zip(&buf).map(|(p, b)| p - lr * b).collect();
    check_finite(&buf)?;
    check_finite(&next)?;
    state.momentum_buffer = ParamVector::from_vec_unchecked(buf);
    state.step_count += 1;
    Ok(ParamVector::from_vec_unchecked(next))
}
