//! Class-biased synthetic data streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::{make_etf, UnitVector};
use crate::nce::BiasSpec;
use crate::scoring::ClassId;

/// Knobs of one synthetic run.
#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub bias: BiasSpec,
    /// Raw-data dimension D.
    pub ambient_dim: usize,
    /// Representation dimension d.
    pub embed_dim: usize,
    /// Target cosine between distinct class prototypes.
    pub prototype_separation: f64,
    pub noise_sigma: f64,
    /// Training steps (each consuming `batch` stream pairs).
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 || self.ambient_dim < self.embed_dim {
            return Err(Error::InvalidParameter(format!(
                "need ambient_dim >= embed_dim >= 2, got D={} d={}",
                self.ambient_dim, self.embed_dim
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.batch < 1 {
            return Err(Error::InvalidParameter("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (anchor, positive) pair: two independent noisy views of the same
/// class prototype. The label is carried for evaluation only.
#[derive(Debug, Clone)]
pub struct StreamItem {
    pub anchor_raw: Vec<f64>,
    pub positive_raw: Vec<f64>,
    pub label: ClassId,
}

/// Reproducible stream of class-biased pairs.
#[derive(Debug, Clone)]
pub struct StreamSampler {
    prototypes: Vec<UnitVector>,
    bias: BiasSpec,
    noise_sigma: f64,
    rng: ChaCha12Rng,
}

/// Builds the sampler: unit prototypes at the configured separation in
/// ambient space, plus a seeded class/noise generator.
pub fn gen_stream(cfg: &StreamConfig) -> Result<StreamSampler> {
    cfg.validate()?;
    let frame = make_etf(
        cfg.bias.num_classes,
        cfg.ambient_dim,
        cfg.prototype_separation,
    )?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xD0A1);
    Ok(StreamSampler {
        prototypes: frame.class_vectors,
        bias: cfg.bias,
        noise_sigma: cfg.noise_sigma,
        rng,
    })
}

impl StreamSampler {
    pub fn prototypes(&self) -> &[UnitVector] {
        &self.prototypes
    }

    pub fn next_pair(&mut self) -> StreamItem {
        let label = self.sample_class();
        StreamItem {
            anchor_raw: self.noisy_view(label),
            positive_raw: self.noisy_view(label),
            label,
        }
    }

    fn sample_class(&mut self) -> ClassId {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for c in 0..self.bias.num_classes {
            acc += self.bias.rho(c);
            if u < acc {
                return c;
            }
        }
        self.bias.num_classes - 1
    }

    /// Raw datum `mu_c + sigma * eps` with isotropic Gaussian noise.
    pub fn noisy_view(&mut self, class: ClassId) -> Vec<f64> {
        let proto = self.prototypes[class].as_slice();
        if self.noise_sigma == 0.0 {
            return proto.to_vec();
        }
        proto
            .iter()
            .map(|&x| x + self.noise_sigma * randn(&mut self.rng))
            .collect()
    }
}

/// Standard normal via Box-Muller.
pub(crate) fn randn(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
