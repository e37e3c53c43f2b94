//! Flat parameter vectors and deterministic random streams.

use alloc::vec::Vec;
use core::ops::Index;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// All parameters of a model, flattened into one fixed-length vector.
///
/// Every constructor and operation rejects NaN and infinities, so a value of
/// this type is always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(alloc::vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(ParamVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot_slices(&self.0, &self.0))
    }

    /// Writes `values` into `self[offset..offset + values.len()]`.
    pub fn set_block(&mut self, offset: usize, values: &[f64]) -> Result<()> {
        let end = offset + values.len();
        if end > self.0.len() {
            return Err(Error::LengthMismatch {
                expected: self.0.len(),
                found: end,
            });
        }
        check_finite(values)?;
        self.0[offset..end].copy_from_slice(values);
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Returns `Σ_b coeffs[b] · vectors[b]`.
///
/// Each output entry is accumulated over `b` in ascending order starting from
/// `coeffs[0] · vectors[0][i]`, so the result is bit-identical across runs.
/// With coefficients `[1, 0, ..]` the first vector is returned exactly.
pub fn linear_combination(coeffs: &[f64], vectors: &[&ParamVector]) -> Result<ParamVector> {
    if coeffs.len() != vectors.len() {
        return Err(Error::CountMismatch {
            coeffs: coeffs.len(),
            vectors: vectors.len(),
        });
    }
    let Some(first) = vectors.first() else {
        return Err(Error::Empty("vector list"));
    };
    check_finite(coeffs)?;
    let len = first.len();
    for v in vectors {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: v.len(),
            });
        }
    }

    let mut out: Vec<f64> = first.0.iter().map(|x| coeffs[0] * x).collect();
    for (c, v) in coeffs.iter().zip(vectors).skip(1) {
        for (o, x) in out.iter_mut().zip(&v.0) {
            *o += c * x;
        }
    }
    ParamVector::from_vec(out)
}

/// Inner product summed in ascending index order.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot_slices(&a.0, &b.0))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Stream-id namespaces, one per consumer of randomness.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const DATA_GEN: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const VAL_SUBSAMPLE: u64 = 5;
    pub const INTERPOLATE: u64 = 6;
}

/// Folds a sequence of words into one 64-bit stream id (splitmix64 finalizer).
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// A counter-based random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent
/// sequences for distinct ids under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    /// Shorthand for `RngStream::new(seed, stream_id(parts))`.
    pub fn keyed(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        // Lemire's multiply-shift with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(core::f64::consts::TAU * u2);
        self.spare_normal = Some(r * s);
        r * c
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
