//! Fork/merge training.
//!
//! Every round forks the current parameters into one copy per branch, trains
//! each copy for `Δt` steps under its own task weighting, then replaces all
//! branches with the convex combination of their parameters that scores best
//! on the target's validation split.
//!
//! Branch momentum is zeroed whenever branches are synchronized to a merged
//! point; with a single live branch the merge is the identity and optimizer
//! state carries over, which makes a one-branch run identical to plain
//! single-task training.

mod branch;
mod exec;
pub mod search;

use alloc::vec::Vec;

pub use branch::{make_joint_branches, make_omega_branches, train_branch, train_dynamic, BranchSpec, TrainContext};
pub use exec::{Executor, Sequential};
pub use search::{greedy_search_lambda, search_lambda_binary, search_lambda_grid, GreedySearch, LambdaSearch};

use crate::error::{Error, Result};
use crate::metrics::PerfValue;
use crate::nn::ModelSpec;
use crate::numeric::{linear_combination, purpose, ParamVector, RngStream};
use crate::optim::{OptConfig, OptState};
use crate::tasks::{DataSplit, TaskFamily, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    Grid,
    Binary { iters: usize },
    Greedy,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct MergeSchedule {
    pub total_steps: u64,
    pub interval: u64,
    /// Sorted values in `[0, 1]` containing both 0 and 1. Also sets the
    /// number of points per coordinate in greedy search.
    pub lambda_grid: Vec<f64>,
    /// Used when two branches are live; more branches always search greedily.
    pub strategy: SearchStrategy,
    /// Keep this many branches after the first merge.
    pub prune_keep: Option<usize>,
    /// Evaluate `P̂` on a fixed random subset of this many validation rows.
    pub val_subsample: Option<usize>,
}

impl Default for MergeSchedule {
    fn default() -> Self {
        MergeSchedule {
            total_steps: 2000,
            interval: 200,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            strategy: SearchStrategy::Grid,
            prune_keep: None,
            val_subsample: None,
        }
    }
}

impl MergeSchedule {
    pub fn validate(&self, n_branches: usize) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("merge schedule", reason));
        if self.interval == 0 {
            return bad("interval must be positive");
        }
        let g = &self.lambda_grid;
        if g.first() != Some(&0.0) || g.last() != Some(&1.0) {
            return bad("lambda grid must start at 0 and end at 1");
        }
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lambda grid must be strictly increasing");
        }
        if let SearchStrategy::Binary { iters: 0 } = self.strategy {
            return bad("binary search needs at least one iteration");
        }
        if let Some(k) = self.prune_keep {
            if k == 0 || k >= n_branches {
                return bad("prune_keep must satisfy 1 <= K' < number of branches");
            }
        }
        if self.val_subsample == Some(0) {
            return bad("val_subsample must be positive");
        }
        Ok(())
    }

    /// `⌈T / Δt⌉`.
    pub fn rounds(&self) -> u64 {
        self.total_steps.div_ceil(self.interval)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub branch_id: usize,
    /// Standalone `P̂` of the branch's parameters before merging.
    pub val_perf: PerfValue,
    /// Merge coefficient `Λ*_b`.
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub round: usize,
    pub steps: u64,
    /// Live branches in construction order.
    pub candidates: Vec<CandidateRecord>,
    /// `P̂` of the merged parameters.
    pub merged_perf: PerfValue,
    /// `(λ, P̂)` pairs tried by a two-branch search.
    pub lambda_trace: Vec<(f64, PerfValue)>,
    /// Branch ids alive for the next round.
    pub survivors: Vec<usize>,
    pub evaluations: usize,
    pub elapsed_s: Option<f64>,
}

impl MergeRecord {
    pub fn coeffs(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.coeff).collect()
    }

    pub fn target_only(&self, target_branch: usize) -> Option<&CandidateRecord> {
        self.candidates.iter().find(|c| c.branch_id == target_branch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForkMergeResult {
    pub params: ParamVector,
    pub history: Vec<MergeRecord>,
    /// Branch id of the target-only branch.
    pub target_branch: usize,
    pub val: PerfValue,
    pub test: PerfValue,
    pub evaluations: usize,
}

impl ForkMergeResult {
    /// Final-round `λ*` of a two-branch run: the non-target branch's coefficient.
    pub fn final_lambda(&self) -> Option<f64> {
        let last = self.history.last()?;
        let others: Vec<&CandidateRecord> = last
            .candidates
            .iter()
            .filter(|c| c.branch_id != self.target_branch)
            .collect();
        match others.as_slice() {
            [only] => Some(only.coeff),
            _ => None,
        }
    }
}

/// Counting `P̂` on the target's validation split.
pub struct ValidationObjective<'a> {
    spec: &'a ModelSpec,
    split: DataSplit,
    evaluations: usize,
}

impl<'a> ValidationObjective<'a> {
    pub fn new(spec: &'a ModelSpec, family: &TaskFamily, subsample: Option<usize>, seed: u64) -> Self {
        let val = &family.target().val;
        let split = match subsample {
            Some(n) if n < val.len() => {
                let mut rows: Vec<usize> = (0..val.len()).collect();
                RngStream::keyed(seed, &[purpose::VAL_SUBSAMPLE]).shuffle(&mut rows);
                rows.truncate(n);
                rows.sort_unstable();
                val.gather(&rows)
            }
            _ => val.clone(),
        };
        ValidationObjective {
            spec,
            split,
            evaluations: 0,
        }
    }

    pub fn eval(&mut self, params: &ParamVector) -> Result<PerfValue> {
        self.evaluations += 1;
        self.spec.evaluate(params, &self.split, TaskId::TARGET)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

struct LiveBranch {
    spec: BranchSpec,
    params: ParamVector,
    opt: OptState,
}

struct Merge {
    coeffs: Vec<f64>,
    params: ParamVector,
    perf: PerfValue,
    standalone: Vec<PerfValue>,
    trace: Vec<(f64, PerfValue)>,
}

fn validate_branches(family: &TaskFamily, branch_specs: &[BranchSpec]) -> Result<usize> {
    if branch_specs.is_empty() {
        return Err(Error::Empty("branch list"));
    }
    let targets: Vec<usize> = branch_specs
        .iter()
        .enumerate()
        .filter(|(_, b)| b.weighting.is_target_only())
        .map(|(i, _)| i)
        .collect();
    if targets.len() != 1 {
        return Err(Error::invalid(
            "branches",
            alloc::format!("exactly one target-only branch required, found {}", targets.len()),
        ));
    }
    for (i, b) in branch_specs.iter().enumerate() {
        if branch_specs[..i].iter().any(|o| o.branch_id == b.branch_id) {
            return Err(Error::invalid(
                "branches",
                alloc::format!("duplicate branch id {}", b.branch_id),
            ));
        }
        for (task, _) in b.weighting.iter() {
            family.task(task)?;
        }
    }
    Ok(targets[0])
}

/// Runs fork/merge training from the seed's initial parameters.
pub fn run_forkmerge<E: Executor>(
    family: &TaskFamily,
    model_spec: &ModelSpec,
    schedule: &MergeSchedule,
    branch_specs: &[BranchSpec],
    opt_cfg: &OptConfig,
    seed: u64,
    executor: &E,
) -> Result<ForkMergeResult> {
    let target_idx = validate_branches(family, branch_specs)?;
    schedule.validate(branch_specs.len())?;
    let target_branch = branch_specs[target_idx].branch_id;
    let ctx = TrainContext {
        family,
        spec: model_spec,
        opt: opt_cfg,
        seed,
    };
    let start = ctx.init_params();
    let mut objective = ValidationObjective::new(model_spec, family, schedule.val_subsample, seed);

    let mut live: Vec<LiveBranch> = branch_specs
        .iter()
        .map(|b| {
            Ok(LiveBranch {
                spec: b.clone(),
                params: start.clone(),
                opt: opt_cfg.state(start.len(), schedule.total_steps)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut merged = start;
    let mut t = 0u64;
    let mut round = 0usize;
    while t < schedule.total_steps {
        let steps = schedule.interval.min(schedule.total_steps - t);
        let trained = executor.map(live.len(), |i| {
            let b = &live[i];
            let mut opt = b.opt.clone();
            train_branch(&b.params, &b.spec.weighting, steps, &ctx, &mut opt)
                .map(|p| (p, opt))
                .map_err(|e| e.in_branch(b.spec.branch_id))
        });
        for (b, out) in live.iter_mut().zip(trained) {
            let (params, opt) = out?;
            b.params = params;
            b.opt = opt;
        }

        let before = objective.evaluations();
        let m = merge_branches(&live, schedule, &mut objective)?;
        let evaluations = objective.evaluations() - before;

        let mut survivors: Vec<usize> = (0..live.len()).collect();
        if round == 0 {
            if let Some(keep) = schedule.prune_keep {
                let tgt = live
                    .iter()
                    .position(|b| b.spec.weighting.is_target_only())
                    .expect("validated");
                survivors = prune(&m.coeffs, tgt, keep);
            }
        }
        let candidates = live
            .iter()
            .zip(&m.coeffs)
            .zip(&m.standalone)
            .map(|((b, &coeff), &val_perf)| CandidateRecord {
                branch_id: b.spec.branch_id,
                val_perf,
                coeff,
            })
            .collect();

        let synchronize = live.len() > 1;
        let mut next = Vec::with_capacity(survivors.len());
        for (i, mut b) in live.into_iter().enumerate() {
            if !survivors.contains(&i) {
                continue;
            }
            if synchronize {
                b.params = m.params.clone();
                b.opt.reset_momentum();
            }
            next.push(b);
        }
        live = next;
        merged = m.params;

        history.push(MergeRecord {
            round,
            steps,
            candidates,
            merged_perf: m.perf,
            lambda_trace: m.trace,
            survivors: live.iter().map(|b| b.spec.branch_id).collect(),
            evaluations,
            elapsed_s: executor.now_seconds(),
        });
        t += steps;
        round += 1;
    }

    let val = objective.eval(&merged)?;
    let test = model_spec.evaluate(&merged, &family.target().test, TaskId::TARGET)?;
    Ok(ForkMergeResult {
        params: merged,
        history,
        target_branch,
        val,
        test,
        evaluations: objective.evaluations(),
    })
}

/// Chooses `Λ*` over the live branches and returns the merged parameters.
fn merge_branches(
    live: &[LiveBranch],
    schedule: &MergeSchedule,
    objective: &mut ValidationObjective<'_>,
) -> Result<Merge> {
    let tgt = live
        .iter()
        .position(|b| b.spec.weighting.is_target_only())
        .expect("target-only branch always survives");

    if live.len() == 1 {
        let perf = objective.eval(&live[0].params)?;
        return Ok(Merge {
            coeffs: alloc::vec![1.0],
            params: live[0].params.clone(),
            perf,
            standalone: alloc::vec![perf],
            trace: Vec::new(),
        });
    }

    if live.len() == 2 && schedule.strategy != SearchStrategy::Greedy {
        let other = 1 - tgt;
        let (theta0, theta1) = (&live[tgt].params, &live[other].params);
        let (search, standalone0, standalone1) = match schedule.strategy {
            SearchStrategy::Binary { iters } => {
                let p0 = objective.eval(theta0)?;
                let p1 = objective.eval(theta1)?;
                let mut s = search_lambda_binary(theta0, theta1, iters, |p| objective.eval(p))?;
                // The endpoints are candidates too; prefer them on ties.
                let mut trace = alloc::vec![(0.0, p0), (1.0, p1)];
                trace.append(&mut s.trace);
                let mut best = (0.0, p0);
                for &(l, p) in &trace[1..] {
                    if p.value > best.1.value || (p.value == best.1.value && l < best.0) {
                        best = (l, p);
                    }
                }
                s.lambda = best.0;
                s.perf = best.1;
                s.trace = trace;
                (s, p0, p1)
            }
            _ => {
                let s = search_lambda_grid(theta0, theta1, &schedule.lambda_grid, |p| objective.eval(p))?;
                let at = |l: f64| {
                    s.trace
                        .iter()
                        .find(|(x, _)| *x == l)
                        .map(|(_, p)| *p)
                        .expect("grid holds 0 and 1")
                };
                let (p0, p1) = (at(0.0), at(1.0));
                (s, p0, p1)
            }
        };
        let params = search::interpolate(theta0, theta1, search.lambda)?;
        let mut coeffs = alloc::vec![0.0; 2];
        coeffs[tgt] = 1.0 - search.lambda;
        coeffs[other] = search.lambda;
        let mut standalone = alloc::vec![standalone0; 2];
        standalone[other] = standalone1;
        return Ok(Merge {
            coeffs,
            params,
            perf: search.perf,
            standalone,
            trace: search.trace,
        });
    }

    // Greedy: score every branch, sort by decreasing P̂ (stable, so the
    // target-only branch wins ties when listed first), then search.
    let standalone: Vec<PerfValue> = live.iter().map(|b| objective.eval(&b.params)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..live.len()).collect();
    order.sort_by(|&a, &b| {
        standalone[b]
            .value
            .partial_cmp(&standalone[a].value)
            .expect("finite performance")
            .then_with(|| (a != tgt).cmp(&(b != tgt)))
            .then(a.cmp(&b))
    });
    let sorted: Vec<(&ParamVector, PerfValue)> = order.iter().map(|&i| (&live[i].params, standalone[i])).collect();
    let g = greedy_search_lambda(&sorted, schedule.lambda_grid.len(), |p| objective.eval(p))?;
    let mut coeffs = alloc::vec![0.0; live.len()];
    for (pos, &i) in order.iter().enumerate() {
        coeffs[i] = g.coeffs[pos];
    }
    let refs: Vec<&ParamVector> = live.iter().map(|b| &b.params).collect();
    let params = linear_combination(&coeffs, &refs)?;
    Ok(Merge {
        coeffs,
        params,
        perf: g.perf,
        standalone,
        trace: Vec::new(),
    })
}

/// Indices of branches that survive pruning, in construction order.
///
/// Branches with a zero coefficient are dropped, then the `keep` largest
/// coefficients are kept. The target-only branch `target` always survives
/// and counts toward `keep`.
pub fn prune(coeffs: &[f64], target: usize, keep: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..coeffs.len()).filter(|&i| i != target && coeffs[i] > 0.0).collect();
    others.sort_by(|&a, &b| coeffs[b].partial_cmp(&coeffs[a]).expect("finite").then(a.cmp(&b)));
    others.truncate(keep.saturating_sub(1));
    others.push(target);
    others.sort_unstable();
    others
}
