//! Score functions and duplicate statistics.
//!
//! A score function `h` maps cosine similarity in [-1, 1] onto a pairwise
//! collision probability in [0, 1] with the endpoints pinned: `h(-1) = 0`,
//! `h(1) = 1`. On top of it sit the expected duplicate count `N(j)` of a
//! pool slot, the pool diversity `p_d` (sum over ordered pairs of
//! non-collision probability), and the threshold `alpha*` at which two
//! samples count as nearly indistinguishable.

use crate::error::{Error, Result};
use crate::geometry::UnitVector;

/// Class label carried by samples for evaluation only. Eviction policies
/// never read it.
pub type ClassId = usize;

/// An embedding together with its hidden ground-truth class. `raw` holds the
/// ambient-space features when the owning memory re-encodes on refresh.
#[derive(Debug, Clone)]
pub struct Sample {
    pub embedding: UnitVector,
    pub label: ClassId,
    pub raw: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(embedding: UnitVector, label: ClassId) -> Self {
        Sample {
            embedding,
            label,
            raw: None,
        }
    }

    pub fn with_raw(embedding: UnitVector, label: ClassId, raw: Vec<f64>) -> Self {
        Sample {
            embedding,
            label,
            raw: Some(raw),
        }
    }
}

/// An ordered pool of samples with equal embedding dimension.
#[derive(Debug, Clone)]
pub struct SamplePool {
    samples: Vec<Sample>,
}

impl SamplePool {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("pool needs at least one sample"));
        }
        let d = samples[0].embedding.dim();
        for s in &samples {
            if s.embedding.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.embedding.dim(),
                });
            }
        }
        Ok(SamplePool { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &UnitVector> {
        self.samples.iter().map(|s| &s.embedding)
    }
}

/// Monotone map from cosine similarity to collision probability.
///
/// The gaussian kernel `exp(-(s-1)^2/tau)` is affinely renormalized so the
/// endpoints are exact: its raw value at `s = -1` is `exp(-4/tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreFunction {
    Linear,
    Gaussian { tau: f64 },
    Quadratic,
}

impl ScoreFunction {
    pub fn gaussian(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gaussian kernel needs tau > 0, got {tau}"
            )));
        }
        Ok(ScoreFunction::Gaussian { tau })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreFunction::Linear => "linear",
            ScoreFunction::Gaussian { .. } => "gaussian",
            ScoreFunction::Quadratic => "quadratic",
        }
    }

    /// Evaluation on an already-validated similarity in [-1, 1].
    fn eval(&self, s: f64) -> f64 {
        match *self {
            ScoreFunction::Linear => (s + 1.0) / 2.0,
            ScoreFunction::Gaussian { tau } => {
                let floor = (-4.0 / tau).exp();
                (((s - 1.0) * (s - 1.0) / -tau).exp() - floor) / (1.0 - floor)
            }
            ScoreFunction::Quadratic => {
                let t = (s + 1.0) / 2.0;
                t * t
            }
        }
    }
}

/// Tolerance band absorbing floating-point error in upstream normalization.
const CLAMP_BAND: f64 = 1e-9;

/// Collision probability `h(s)` for a cosine similarity `s`.
///
/// Values within `1e-9` of the ends are clamped onto [-1, 1]; anything
/// further out is an error rather than a clamp.
pub fn score(h: ScoreFunction, s: f64) -> Result<f64> {
    if !s.is_finite() || s < -1.0 - CLAMP_BAND || s > 1.0 + CLAMP_BAND {
        return Err(Error::SimilarityOutOfRange { value: s });
    }
    Ok(h.eval(s.clamp(-1.0, 1.0)))
}

/// `Pr(c_i = c_j) = h(z_i . z_j)`; symmetric in its arguments.
pub fn collision_prob(z_i: &UnitVector, z_j: &UnitVector, h: ScoreFunction) -> Result<f64> {
    if z_i.dim() != z_j.dim() {
        return Err(Error::DimensionMismatch {
            expected: z_i.dim(),
            got: z_j.dim(),
        });
    }
    score(h, z_i.dot(z_j))
}

/// Expected number of duplicates of slot `j`: the sum of collision
/// probabilities against every other slot. Lies in [0, k-1].
pub fn duplicate_count(j: usize, pool: &SamplePool, h: ScoreFunction) -> Result<f64> {
    let k = pool.len();
    if j >= k {
        return Err(Error::IndexOutOfBounds { index: j, len: k });
    }
    let z_j = &pool.samples()[j].embedding;
    let mut n = 0.0;
    for (i, s) in pool.samples().iter().enumerate() {
        if i != j {
            n += collision_prob(&s.embedding, z_j, h)?;
        }
    }
    Ok(n)
}

/// Pool diversity `p_d`: sum over all ordered pairs (i, j) of
/// `1 - Pr(c_i = c_j)`. Self-pairs are identically zero because `h(1) = 1`,
/// and are contributed as exact zeros.
pub fn pool_diversity(pool: &SamplePool, h: ScoreFunction) -> Result<f64> {
    let mut p_d = 0.0;
    for (i, a) in pool.samples().iter().enumerate() {
        for (j, b) in pool.samples().iter().enumerate() {
            if i == j {
                continue;
            }
            p_d += 1.0 - collision_prob(&a.embedding, &b.embedding, h)?;
        }
    }
    Ok(p_d)
}

/// The unique `alpha*` with `h(alpha*) = alpha`, so that collision
/// probability at least `alpha` is equivalent to cosine similarity at least
/// `alpha*`.
///
/// Linear and quadratic invert in closed form; the gaussian kernel is
/// inverted by bisection on [-1, 1]. The shipped kernels are all strictly
/// increasing; endpoints return exactly -1 and 1.
pub fn distinguishability_threshold(h: ScoreFunction, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidProbability(alpha));
    }
    if alpha == 0.0 {
        return Ok(-1.0);
    }
    if alpha == 1.0 {
        return Ok(1.0);
    }
    match h {
        ScoreFunction::Linear => Ok(2.0 * alpha - 1.0),
        ScoreFunction::Quadratic => Ok(2.0 * alpha.sqrt() - 1.0),
        ScoreFunction::Gaussian { .. } => {
            let mut lo = -1.0f64;
            let mut hi = 1.0f64;
            // 100 halvings drive the bracket to machine precision.
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if h.eval(mid) < alpha {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= f64::EPSILON {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// The three kernels exercised by the verification sweeps.
pub fn standard_score_functions() -> Vec<ScoreFunction> {
    vec![
        ScoreFunction::Linear,
        ScoreFunction::Gaussian { tau: 1.0 },
        ScoreFunction::Quadratic,
    ]
}
