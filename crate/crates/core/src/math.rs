//! Dense vector helpers and the counter-based random stream used everywhere
//! randomness is needed.
//!
//! All arithmetic is `f64`. Feature vectors live on the unit sphere; any
//! average of feature vectors is projected back onto it.

use crate::error::{Error, Result};

/// Norms below this are treated as zero when normalizing.
pub const MIN_NORM: f64 = 1e-12;

/// An L2-normalized feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Wraps a vector that is already unit-norm. Only checked in debug builds.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!((norm(&values) - 1.0).abs() < 1e-9);
        FeatureVector(values)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVector> {
    if v.is_empty() {
        return Err(Error::EmptyInput("vector to normalize"));
    }
    let n = norm(v);
    if !(n >= MIN_NORM) || !n.is_finite() {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(FeatureVector(v.iter().map(|x| x / n).collect()))
}

/// Mean of the given vectors, re-projected onto the unit sphere.
pub fn renormalized_mean<V: AsRef<[f64]>>(vs: &[V]) -> Result<FeatureVector> {
    let first = vs.first().ok_or(Error::EmptyInput("vectors to average"))?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0; dim];
    for v in vs {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::Shape {
                context: "renormalized_mean",
                expected: dim,
                got: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    l2_normalize(&sum)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "euclidean_distance",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v < b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA)))
}

/// Counter-based generator: draw `n` (0-based) is
/// `mix64(seed + (n + 1) * 0x9E3779B97F4A7C15)`, i.e. SplitMix64 addressed by
/// position. Streams can be split with [`RngStream::split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Restores a stream at an exact position.
    pub fn at(seed: u64, counter: u64) -> Self {
        RngStream { seed, counter }
    }

    /// A new stream whose seed is derived from this stream's seed and `tag`.
    pub fn split(&self, tag: u64) -> Self {
        RngStream::new(derive_seed(self.seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; consumes two draws per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift, without rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
