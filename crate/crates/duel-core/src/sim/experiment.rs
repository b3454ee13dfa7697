//! The full training loop: stream -> loss over {positive} u M -> weight
//! update -> memory replacement.

use crate::error::{Error, Result};
use crate::geometry::{mean_pairwise_similarity, UnitVector};
use crate::memory::{DuelMemory, EvictionPolicy, MemoryVariant};
use crate::scoring::{ClassId, Sample, ScoreFunction};
use crate::sim::encoder::{encoder_gradient, Encoder, LossKind};
use crate::sim::stream::{gen_stream, StreamConfig, StreamItem};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub policy: EvictionPolicy,
    pub variant: MemoryVariant,
    pub score: ScoreFunction,
    pub loss: LossKind,
    pub temperature: f64,
    pub lr: f64,
    pub memory_capacity: usize,
    /// Metrics are recorded every this many steps (and at the final step).
    pub eval_every: usize,
    /// Algorithm-1 style argmax over pool plus incoming.
    pub include_incoming: bool,
    /// Use other anchors' positives as extra (stop-gradient) negatives.
    pub batch_negatives: bool,
    /// Held-out labeled probe samples per class, drawn once at run start.
    pub probe_per_class: usize,
    /// Keep the per-replacement eviction log.
    pub log_evictions: bool,
}

impl ExperimentConfig {
    /// Defaults keep the encoder slow enough that stale stored embeddings
    /// stay comparable with fresh ones over a memory lifetime; a fast
    /// encoder decorrelates the pool and starves the policy of its
    /// duplicate signal.
    pub fn defaults(stream: StreamConfig, policy: EvictionPolicy) -> Self {
        ExperimentConfig {
            stream,
            policy,
            variant: MemoryVariant::StaleEmbedding,
            score: ScoreFunction::Linear,
            loss: LossKind::InfoNce,
            temperature: 0.7,
            lr: 0.01,
            memory_capacity: 256,
            eval_every: 100,
            include_incoming: false,
            batch_negatives: false,
            probe_per_class: 100,
            log_evictions: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        if self.memory_capacity > self.stream.steps * self.stream.batch {
            return Err(Error::InvalidParameter(format!(
                "memory capacity {} exceeds the stream budget {} x {}",
                self.memory_capacity, self.stream.steps, self.stream.batch
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidParameter("eval_every must be >= 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Aligned per-evaluation series. Similarities are measured on the fixed
/// probe set under the current encoder; composition metrics read the
/// memory's hidden labels; collision_rate is the fraction of negatives in
/// the step's batch that share the anchor's hidden class.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub steps: Vec<usize>,
    pub loss: Vec<f64>,
    pub intra_sim: Vec<f64>,
    pub inter_sim: Vec<f64>,
    pub mem_entropy: Vec<f64>,
    pub mem_max_frac: Vec<f64>,
    pub collision_rate: Vec<f64>,
}

impl RunMetrics {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Exact column order of the run CSV.
    pub const CSV_HEADER: &'static str =
        "step,loss,intra_sim,inter_sim,mem_entropy,mem_max_frac,collision_rate";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for i in 0..self.steps.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.steps[i],
                self.loss[i],
                self.intra_sim[i],
                self.inter_sim[i],
                self.mem_entropy[i],
                self.mem_max_frac[i],
                self.collision_rate[i]
            ));
        }
        out
    }

    fn push(
        &mut self,
        step: usize,
        loss: f64,
        intra: f64,
        inter: f64,
        entropy: f64,
        max_frac: f64,
        collision: f64,
    ) {
        self.steps.push(step);
        self.loss.push(loss);
        self.intra_sim.push(intra);
        self.inter_sim.push(inter);
        self.mem_entropy.push(entropy);
        self.mem_max_frac.push(max_frac);
        self.collision_rate.push(collision);
    }
}

/// One row of the optional eviction log CSV.
#[derive(Debug, Clone)]
pub struct EvictionLogRow {
    pub step: usize,
    pub evicted_index: usize,
    pub n_value: f64,
    /// Evaluation column; policies never read it.
    pub evicted_class: ClassId,
    pub policy: &'static str,
}

pub const EVICTION_CSV_HEADER: &str = "step,evicted_index,n_value,evicted_class,policy";

pub fn eviction_log_to_csv(rows: &[EvictionLogRow]) -> String {
    let mut out = String::from(EVICTION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.evicted_index, r.n_value, r.evicted_class, r.policy
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub evictions: Vec<EvictionLogRow>,
    /// Memory composition at the end of the run.
    pub final_max_class_fraction: f64,
    pub final_entropy_nats: f64,
    /// Mean of the recorded collision rates after the first quarter of the
    /// run (warmup discarded).
    pub mean_collision_rate: f64,
}

/// Runs the loop deterministically from the config seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut sampler = gen_stream(&cfg.stream)?;
    let mut encoder = Encoder::random(
        cfg.stream.embed_dim,
        cfg.stream.ambient_dim,
        cfg.stream.seed ^ 0x5EED_E4C0,
    )?;

    // Fixed labeled probe set, drawn before training and never mutated.
    let num_classes = cfg.stream.bias.num_classes;
    let mut probe: Vec<(Vec<f64>, ClassId)> = Vec::new();
    {
        let mut probe_sampler = gen_stream(&StreamConfig {
            seed: cfg.stream.seed ^ 0x9806_5EED,
            ..cfg.stream.clone()
        })?;
        for c in 0..num_classes {
            for _ in 0..cfg.probe_per_class {
                probe.push((probe_sampler.noisy_view(c), c));
            }
        }
    }

    let mut memory = DuelMemory::new(
        cfg.memory_capacity,
        cfg.score,
        cfg.policy,
        cfg.variant,
        cfg.stream.seed ^ 0x00D0_E15E,
    )?;
    memory.set_include_incoming(cfg.include_incoming);

    // Initial memory: the first stream samples, FIFO until capacity.
    while !memory.is_full() {
        let item = sampler.next_pair();
        memory.insert_replace(make_sample(&encoder, &item, cfg.variant)?)?;
    }

    let mut metrics = RunMetrics::default();
    let mut evictions: Vec<EvictionLogRow> = Vec::new();
    let mut collision_rates: Vec<f64> = Vec::new();

    for step in 1..=cfg.stream.steps {
        let batch: Vec<StreamItem> = (0..cfg.stream.batch).map(|_| sampler.next_pair()).collect();
        let negatives: Vec<UnitVector> = memory.negatives(memory.len(), 0)?;
        let negative_labels = memory.slot_labels();

        let (loss, grad) = encoder_gradient(
            &encoder,
            &batch,
            &negatives,
            cfg.loss,
            cfg.temperature,
            cfg.batch_negatives,
        )?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        encoder.step(&grad, cfg.lr)?;

        if cfg.variant == MemoryVariant::ReEncode {
            memory.refresh_embeddings(&encoder)?;
        }

        // Collision rate of this step's negative draws, before replacement.
        let mut collisions = 0usize;
        let mut pairs = 0usize;
        for item in &batch {
            for label in &negative_labels {
                pairs += 1;
                if *label == item.label {
                    collisions += 1;
                }
            }
            if cfg.batch_negatives {
                for other in &batch {
                    if !std::ptr::eq(item, other) {
                        pairs += 1;
                        if other.label == item.label {
                            collisions += 1;
                        }
                    }
                }
            }
        }
        let step_collision_rate = collisions as f64 / pairs.max(1) as f64;
        collision_rates.push(step_collision_rate);

        for item in &batch {
            let record = memory.insert_replace(make_sample(&encoder, item, cfg.variant)?)?;
            if cfg.log_evictions {
                if let Some(rec) = record {
                    evictions.push(EvictionLogRow {
                        step,
                        evicted_index: rec.evicted_index,
                        n_value: rec.n_value_at_eviction,
                        evicted_class: rec.evicted_sample.label,
                        policy: cfg.policy.name(),
                    });
                }
            }
        }

        if step % cfg.eval_every == 0 || step == cfg.stream.steps {
            let (intra, inter) = probe_similarities(&encoder, &probe, num_classes)?;
            let comp = memory.composition_metrics();
            metrics.push(
                step,
                loss,
                intra,
                inter,
                comp.entropy_nats,
                comp.max_class_fraction,
                step_collision_rate,
            );
        }
    }

    let comp = memory.composition_metrics();
    let warmup = collision_rates.len() / 4;
    let tail = &collision_rates[warmup..];
    let mean_collision_rate = tail.iter().sum::<f64>() / tail.len().max(1) as f64;

    Ok(RunOutput {
        metrics,
        evictions,
        final_max_class_fraction: comp.max_class_fraction,
        final_entropy_nats: comp.entropy_nats,
        mean_collision_rate,
    })
}

fn make_sample(encoder: &Encoder, item: &StreamItem, variant: MemoryVariant) -> Result<Sample> {
    let z = encoder.encode(&item.anchor_raw)?;
    Ok(match variant {
        MemoryVariant::StaleEmbedding => Sample::new(z, item.label),
        MemoryVariant::ReEncode => Sample::with_raw(z, item.label, item.anchor_raw.clone()),
    })
}

/// Pooled intra- and inter-class mean cosine similarity of the probe set
/// under the given encoder. Pure observer: touches neither encoder nor
/// memory state.
pub fn probe_similarities(
    encoder: &Encoder,
    probe: &[(Vec<f64>, ClassId)],
    num_classes: usize,
) -> Result<(f64, f64)> {
    let mut by_class: Vec<Vec<UnitVector>> = vec![Vec::new(); num_classes];
    for (raw, label) in probe {
        by_class[*label].push(encoder.encode(raw)?);
    }
    let mut intra_sum = 0.0;
    let mut intra_n = 0usize;
    let mut inter_sum = 0.0;
    let mut inter_n = 0usize;
    for a in 0..num_classes {
        if by_class[a].len() >= 2 {
            let m = mean_pairwise_similarity(&by_class[a], &by_class[a], true)?;
            let pairs = by_class[a].len() * (by_class[a].len() - 1);
            intra_sum += m * pairs as f64;
            intra_n += pairs;
        }
        for b in (a + 1)..num_classes {
            if by_class[a].is_empty() || by_class[b].is_empty() {
                continue;
            }
            let m = mean_pairwise_similarity(&by_class[a], &by_class[b], false)?;
            let pairs = by_class[a].len() * by_class[b].len();
            inter_sum += m * pairs as f64;
            inter_n += pairs;
        }
    }
    Ok((
        intra_sum / intra_n.max(1) as f64,
        inter_sum / inter_n.max(1) as f64,
    ))
}
