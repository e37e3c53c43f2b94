//! Transfer diagnostics: transfer gain, negative-transfer classification,
//! gradient cosine similarity, confidence score discrepancy and `Δ_m`.

pub mod sweep;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::numeric::{dot_slices, ParamVector};
use crate::tasks::{DataSplit, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Fraction of correct predictions in `[0, 1]`.
    Accuracy,
    /// Negative mean squared error.
    NegMse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::NegMse => "neg_mse",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        match name {
            "accuracy" => Some(Metric::Accuracy),
            "neg_mse" => Some(Metric::NegMse),
            _ => None,
        }
    }

    /// Scale from stored values to reporting points (percent for accuracy).
    pub fn points_scale(self) -> f64 {
        match self {
            Metric::Accuracy => 100.0,
            Metric::NegMse => 1.0,
        }
    }
}

/// A performance measurement; higher is always better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfValue {
    pub value: f64,
    pub metric: Metric,
}

impl PerfValue {
    pub fn new(value: f64, metric: Metric) -> Self {
        PerfValue { value, metric }
    }

    pub fn accuracy(value: f64) -> Self {
        Self::new(value, Metric::Accuracy)
    }

    /// Value in reporting points: accuracy percentage points, or raw units.
    pub fn points(&self) -> f64 {
        self.value * self.metric.points_scale()
    }
}

/// `P(θ_ATL) − P(θ_STL)` in reporting points.
pub fn transfer_gain(perf_atl: PerfValue, perf_stl: PerfValue) -> Result<f64> {
    if perf_atl.metric != perf_stl.metric {
        return Err(Error::MetricMismatch);
    }
    Ok(perf_atl.points() - perf_stl.points())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferClass {
    Positive,
    WeakNegative,
    StrongNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    /// `(λ, TG)` pairs in the order measured.
    pub tg_by_lambda: Vec<(f64, f64)>,
    pub classification: TransferClass,
}

impl TransferReport {
    pub fn new(tg_by_lambda: Vec<(f64, f64)>) -> Result<Self> {
        let classification = classify_transfer(&tg_by_lambda)?;
        Ok(TransferReport {
            tg_by_lambda,
            classification,
        })
    }
}

/// Strong negative transfer when every `λ > 0` loses; weak when some
/// measurement loses but the best `λ > 0` does not.
pub fn classify_transfer(tg_by_lambda: &[(f64, f64)]) -> Result<TransferClass> {
    if tg_by_lambda.is_empty() {
        return Err(Error::Empty("transfer gain map"));
    }
    let best_positive = tg_by_lambda
        .iter()
        .filter(|(l, _)| *l > 0.0)
        .map(|(_, tg)| *tg)
        .fold(None, |acc: Option<f64>, tg| Some(acc.map_or(tg, |a| a.max(tg))));
    let Some(best) = best_positive else {
        return Err(Error::invalid("transfer gain map", "needs at least one λ > 0"));
    };
    if best < 0.0 {
        Ok(TransferClass::StrongNegative)
    } else if tg_by_lambda.iter().any(|(_, tg)| *tg < 0.0) {
        Ok(TransferClass::WeakNegative)
    } else {
        Ok(TransferClass::Positive)
    }
}

/// Cosine of the angle between two gradients, clamped to `[-1, 1]`.
pub fn gcs(g_i: &ParamVector, g_j: &ParamVector) -> Result<f64> {
    if g_i.len() != g_j.len() {
        return Err(Error::LengthMismatch {
            expected: g_i.len(),
            found: g_j.len(),
        });
    }
    cosine(g_i.as_slice(), g_j.as_slice())
}

/// [`gcs`] restricted to the shared encoder block of the layout.
///
/// Head blocks of two different tasks never overlap, so they only add to the
/// norms; the comparison that matters for conflict is on shared parameters.
pub fn shared_gcs(spec: &ModelSpec, g_i: &ParamVector, g_j: &ParamVector) -> Result<f64> {
    let n = spec.shared_len();
    if g_i.len() != g_j.len() || g_i.len() < n {
        return Err(Error::LengthMismatch {
            expected: spec.param_count(),
            found: g_j.len(),
        });
    }
    cosine(&g_i.as_slice()[..n], &g_j.as_slice()[..n])
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = libm::sqrt(dot_slices(a, a));
    let nb = libm::sqrt(dot_slices(b, b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot_slices(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − E_{x∼D'} max_y softmax(f_D(x))_y` for a model trained on `D`.
pub fn csd(spec: &ModelSpec, params_on_d: &ParamVector, d_prime: &DataSplit, task_id: TaskId) -> Result<f64> {
    Ok(1.0 - spec.mean_max_confidence(params_on_d, d_prime, task_id)?)
}

/// Average signed relative improvement of `method` over `baseline`:
/// `(1/K) Σ_k (−1)^{z_k} (M_m,k − M_b,k) / M_b,k`, as a fraction.
///
/// `lower_is_better[k]` is `z_k`.
pub fn delta_m(baseline: &[f64], method: &[f64], lower_is_better: &[bool]) -> Result<f64> {
    let k = baseline.len();
    if method.len() != k || lower_is_better.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            found: if method.len() != k {
                method.len()
            } else {
                lower_is_better.len()
            },
        });
    }
    if k == 0 {
        return Err(Error::Empty("metric list"));
    }
    if let Some(i) = baseline.iter().position(|&b| b == 0.0) {
        return Err(Error::ZeroBaseline(i));
    }
    let total: f64 = baseline
        .iter()
        .zip(method)
        .zip(lower_is_better)
        .map(|((b, m), &z)| {
            let rel = (m - b) / b;
            if z {
                -rel
            } else {
                rel
            }
        })
        .sum();
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn transfer_gain_examples() {
        let a = PerfValue::accuracy(0.7);
        assert_eq!(transfer_gain(a, a).unwrap(), 0.0);
        let real = transfer_gain(PerfValue::accuracy(0.852), PerfValue::accuracy(0.846)).unwrap();
        assert!((real - 0.6).abs() < 1e-9);
        let quickdraw = transfer_gain(PerfValue::accuracy(0.508), PerfValue::accuracy(0.730)).unwrap();
        assert!((quickdraw + 22.2).abs() < 1e-9);
        assert_eq!(
            transfer_gain(a, PerfValue::new(-1.0, Metric::NegMse)),
            Err(Error::MetricMismatch)
        );
    }

    #[test]
    fn classification_examples() {
        assert_eq!(
            classify_transfer(&[(0.5, 1.0), (1.0, 0.2)]).unwrap(),
            TransferClass::Positive
        );
        assert_eq!(
            classify_transfer(&[(0.5, 1.0), (1.0, -2.0)]).unwrap(),
            TransferClass::WeakNegative
        );
        assert_eq!(
            classify_transfer(&[(0.5, -1.0), (1.0, -2.0)]).unwrap(),
            TransferClass::StrongNegative
        );
        assert!(classify_transfer(&[]).is_err());
        assert!(classify_transfer(&[(0.0, 0.0)]).is_err());
        let report = TransferReport::new(vec![(0.0, 0.0), (0.25, -0.1), (1.0, 0.3)]).unwrap();
        assert_eq!(report.classification, TransferClass::WeakNegative);
    }

    #[test]
    fn gcs_examples() {
        assert_eq!(gcs(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        let g = pv(&[0.3, -2.0, 1.1]);
        let neg = pv(&[-0.3, 2.0, -1.1]);
        assert!((gcs(&g, &g).unwrap() - 1.0).abs() < 1e-15);
        assert!((gcs(&g, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(gcs(&g, &pv(&[0.0, 0.0, 0.0])), Err(Error::ZeroNorm));
    }

    #[test]
    fn delta_m_examples() {
        let b = [100.0, 50.0];
        assert_eq!(delta_m(&b, &b, &[false, false]).unwrap(), 0.0);
        let d = delta_m(&b, &[110.0, 45.0], &[false, false]).unwrap();
        assert!(d.abs() < 1e-15);
        let stl = [77.6, 41.4, 71.8, 73.0, 84.6, 70.2];
        let ew = [78.0, 38.1, 67.2, 50.8, 77.1, 67.0];
        let d = delta_m(&stl, &ew, &[false; 6]).unwrap() * 100.0;
        assert!((d + 9.62).abs() <= 0.01, "{d}");
        assert_eq!(delta_m(&[0.0], &[1.0], &[false]), Err(Error::ZeroBaseline(0)));
        assert!(delta_m(&[1.0], &[1.0, 2.0], &[false]).is_err());
    }

    #[test]
    fn delta_m_sign_flip_is_antisymmetric() {
        let up = delta_m(&[4.0], &[5.0], &[false]).unwrap();
        let down = delta_m(&[4.0], &[5.0], &[true]).unwrap();
        assert_eq!(up, -down);
    }
}
