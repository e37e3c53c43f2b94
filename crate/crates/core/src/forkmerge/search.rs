//! Searching merge coefficients on validation performance.
//!
//! Every search takes the validation objective `P̂` as a closure and counts
//! how many times it was called. Ties always go to the candidate with less
//! auxiliary influence (smaller `λ`, or more weight on earlier candidates).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::PerfValue;
use crate::numeric::{linear_combination, ParamVector};

/// Result of a one-dimensional search over `(1 − λ) θ0 + λ θ1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub perf: PerfValue,
    pub evaluations: usize,
    /// Every `(λ, P̂)` evaluated, in evaluation order.
    pub trace: Vec<(f64, PerfValue)>,
}

impl LambdaSearch {
    fn consider(&mut self, lambda: f64, perf: PerfValue) {
        self.trace.push((lambda, perf));
        if better(perf, self.perf) || (perf.value == self.perf.value && lambda < self.lambda) {
            self.lambda = lambda;
            self.perf = perf;
        }
    }
}

fn better(a: PerfValue, b: PerfValue) -> bool {
    a.value > b.value
}

pub fn interpolate(theta0: &ParamVector, theta1: &ParamVector, lambda: f64) -> Result<ParamVector> {
    linear_combination(&[1.0 - lambda, lambda], &[theta0, theta1])
}

/// Exhaustive search over `grid`. Costs exactly `grid.len()` evaluations.
pub fn search_lambda_grid<F>(
    theta0: &ParamVector,
    theta1: &ParamVector,
    grid: &[f64],
    mut p_hat: F,
) -> Result<LambdaSearch>
where
    F: FnMut(&ParamVector) -> Result<PerfValue>,
{
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::invalid("lambda grid", "values must lie in [0, 1]"));
    }
    let mut best: Option<LambdaSearch> = None;
    for &lambda in grid {
        let perf = p_hat(&interpolate(theta0, theta1, lambda)?)?;
        match best.as_mut() {
            None => {
                best = Some(LambdaSearch {
                    lambda,
                    perf,
                    evaluations: 0,
                    trace: alloc::vec![(lambda, perf)],
                })
            }
            Some(b) => b.consider(lambda, perf),
        }
    }
    let mut out = best.expect("grid is nonempty");
    out.evaluations = grid.len();
    Ok(out)
}

/// Interval halving on `[0, 1]`.
///
/// Each iteration scores the midpoints of both halves of the current interval
/// and keeps the half whose midpoint scored higher (the lower half on ties).
/// Returns the best λ evaluated; costs exactly `2 · iters` evaluations.
pub fn search_lambda_binary<F>(
    theta0: &ParamVector,
    theta1: &ParamVector,
    iters: usize,
    mut p_hat: F,
) -> Result<LambdaSearch>
where
    F: FnMut(&ParamVector) -> Result<PerfValue>,
{
    if iters == 0 {
        return Err(Error::invalid("binary search", "needs at least one iteration"));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<LambdaSearch> = None;
    for _ in 0..iters {
        let quarter = (hi - lo) / 4.0;
        let (left, right) = (lo + quarter, hi - quarter);
        let pl = p_hat(&interpolate(theta0, theta1, left)?)?;
        let pr = p_hat(&interpolate(theta0, theta1, right)?)?;
        let mid = (lo + hi) / 2.0;
        if pr.value > pl.value {
            lo = mid;
        } else {
            hi = mid;
        }
        for (lambda, perf) in [(left, pl), (right, pr)] {
            match best.as_mut() {
                None => {
                    best = Some(LambdaSearch {
                        lambda,
                        perf,
                        evaluations: 0,
                        trace: alloc::vec![(lambda, perf)],
                    })
                }
                Some(b) => b.consider(lambda, perf),
            }
        }
    }
    let mut out = best.expect("at least one iteration");
    out.evaluations = 2 * iters;
    Ok(out)
}

/// Result of the greedy multi-branch search.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySearch {
    /// Convex coefficients aligned with the input candidates.
    pub coeffs: Vec<f64>,
    pub perf: PerfValue,
    pub evaluations: usize,
}

/// Greedy coordinate search for merge coefficients.
///
/// `candidates` must be sorted by decreasing standalone `P̂`, each paired with
/// that value. Starting from the unnormalized `Λ̃ = e_1`, each later
/// coefficient `Λ̃_b` is chosen from `grid_size` evenly spaced points of
/// `[0, U]`, `U` being the mean of the coefficients already fixed, to
/// maximize `P̂` of the L1-normalized combination. The point `Λ̃_b = 0`
/// reproduces the incumbent exactly and is not re-evaluated, so the cost is
/// at most `(B − 1) · grid_size` evaluations.
pub fn greedy_search_lambda<F>(
    candidates: &[(&ParamVector, PerfValue)],
    grid_size: usize,
    mut p_hat: F,
) -> Result<GreedySearch>
where
    F: FnMut(&ParamVector) -> Result<PerfValue>,
{
    let Some(first) = candidates.first() else {
        return Err(Error::Empty("candidate list"));
    };
    if grid_size == 0 {
        return Err(Error::invalid("greedy search", "grid size must be positive"));
    }
    if candidates.windows(2).any(|w| w[1].1.value > w[0].1.value) {
        return Err(Error::invalid(
            "greedy search",
            "candidates must be sorted by decreasing performance",
        ));
    }
    let thetas: Vec<&ParamVector> = candidates.iter().map(|(t, _)| *t).collect();
    let mut raw = alloc::vec![0.0; candidates.len()];
    raw[0] = 1.0;
    let mut best_perf = first.1;
    let mut evaluations = 0;

    for b in 1..candidates.len() {
        let upper = raw[..b].iter().sum::<f64>() / b as f64;
        let mut chosen = 0.0;
        for j in 1..grid_size {
            let v = upper * j as f64 / (grid_size - 1) as f64;
            raw[b] = v;
            let combo = linear_combination(&normalized(&raw[..=b]), &thetas[..=b])?;
            let perf = p_hat(&combo)?;
            evaluations += 1;
            if better(perf, best_perf) {
                best_perf = perf;
                chosen = v;
            }
        }
        raw[b] = chosen;
    }
    Ok(GreedySearch {
        coeffs: normalized(&raw),
        perf: best_perf,
        evaluations,
    })
}

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}
