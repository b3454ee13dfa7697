//! Fixed-capacity working memory with duplicate-eliminating replacement.
//!
//! The memory keeps one running duplicate count `N(j)` per slot and updates
//! it in O(k) on every replacement (subtract the evicted slot's row, add the
//! inserted one's). A full O(k^2) resynchronization every
//! [`RESYNC_INTERVAL`] replacements bounds floating-point drift.
//!
//! Policies are label-blind: victim selection sees embeddings, cached
//! counts, and insertion timestamps only. Hidden class labels feed the
//! evaluation helpers ([`DuelMemory::composition_metrics`],
//! [`DuelMemory::slot_labels`]) and nothing else.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::scoring::{collision_prob, ClassId, Sample, SamplePool, ScoreFunction};

/// Replacements between full recomputations of the cached counts.
pub const RESYNC_INTERVAL: u32 = 1024;

/// Two N values within this band are treated as tied at the argmax.
const TIE_TOL: f64 = 1e-9;

/// How slot embeddings relate to raw inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryVariant {
    /// Embeddings frozen at insert time (momentum-queue style).
    StaleEmbedding,
    /// Raw features kept alongside; [`DuelMemory::refresh_embeddings`]
    /// re-encodes them with the current encoder.
    ReEncode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvictionPolicy {
    /// Evict the slot with the largest expected duplicate count.
    DuelNaive,
    /// Evict the oldest slot.
    Fifo,
    /// Uniform reservoir sampling over the whole stream.
    Reservoir,
}

impl EvictionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvictionPolicy::DuelNaive => "duel-naive",
            EvictionPolicy::Fifo => "fifo",
            EvictionPolicy::Reservoir => "reservoir",
        }
    }
}

/// Anything that can turn raw features into a unit embedding.
pub trait Embedder {
    fn embed(&self, raw: &[f64]) -> Result<UnitVector>;
}

impl<F> Embedder for F
where
    F: Fn(&[f64]) -> Result<UnitVector>,
{
    fn embed(&self, raw: &[f64]) -> Result<UnitVector> {
        self(raw)
    }
}

/// Audit record of one replacement.
#[derive(Debug, Clone)]
pub struct EvictionRecord {
    /// Slot index that was replaced. Under the include-incoming variant the
    /// incoming sample itself can lose the argmax; that case is reported as
    /// index `capacity` (the virtual slot the incoming occupied).
    pub evicted_index: usize,
    pub evicted_sample: Sample,
    pub n_value_at_eviction: f64,
    pub step: u64,
}

#[derive(Debug, Clone)]
struct Slot {
    sample: Sample,
    inserted_at: u64,
}

/// The adaptive duplicate-elimination memory.
#[derive(Debug, Clone)]
pub struct DuelMemory {
    capacity: usize,
    h: ScoreFunction,
    policy: EvictionPolicy,
    variant: MemoryVariant,
    include_incoming: bool,
    slots: Vec<Slot>,
    cached_counts: Vec<f64>,
    step: u64,
    stream_len: u64,
    replacements_since_resync: u32,
    reservoir_rng: ChaCha12Rng,
}

impl DuelMemory {
    pub fn new(
        capacity: usize,
        h: ScoreFunction,
        policy: EvictionPolicy,
        variant: MemoryVariant,
        seed: u64,
    ) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::CapacityTooSmall(capacity));
        }
        Ok(DuelMemory {
            capacity,
            h,
            policy,
            variant,
            include_incoming: false,
            slots: Vec::with_capacity(capacity),
            cached_counts: Vec::with_capacity(capacity),
            step: 0,
            stream_len: 0,
            replacements_since_resync: 0,
            reservoir_rng: ChaCha12Rng::seed_from_u64(seed),
        })
    }

    /// Put the incoming sample into the argmax pool as well (the general
    /// framework's insert-then-select order). Off by default: the safety
    /// theorem selects among the pre-existing pool.
    pub fn set_include_incoming(&mut self, on: bool) {
        self.include_incoming = on;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn score_function(&self) -> ScoreFunction {
        self.h
    }

    pub fn cached_counts(&self) -> &[f64] {
        &self.cached_counts
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &UnitVector> {
        self.slots.iter().map(|s| &s.sample.embedding)
    }

    /// Evaluation-only view of the hidden labels, aligned with slot order.
    pub fn slot_labels(&self) -> Vec<ClassId> {
        self.slots.iter().map(|s| s.sample.label).collect()
    }

    /// Snapshot of the contents as a pool (for diversity checks).
    pub fn to_pool(&self) -> Result<SamplePool> {
        SamplePool::new(self.slots.iter().map(|s| s.sample.clone()).collect())
    }

    /// Extension point of the general framework; the shipped policies are
    /// static, so this leaves the policy unchanged.
    pub fn update_policy(&mut self) {}

    /// Inserts `incoming`, evicting per the configured policy once full.
    /// Returns the eviction record, or `None` while warming up (and for
    /// reservoir draws that discard the incoming sample).
    pub fn insert_replace(&mut self, incoming: Sample) -> Result<Option<EvictionRecord>> {
        if let Some(first) = self.slots.first() {
            if incoming.embedding.dim() != first.sample.embedding.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.sample.embedding.dim(),
                    got: incoming.embedding.dim(),
                });
            }
        }
        if self.variant == MemoryVariant::ReEncode && incoming.raw.is_none() {
            return Err(Error::VariantMismatch(
                "re-encode memory requires raw features on every sample",
            ));
        }
        self.step += 1;
        self.stream_len += 1;

        if !self.is_full() {
            let mut n_new = 0.0;
            for (i, slot) in self.slots.iter().enumerate() {
                let p = collision_prob(&slot.sample.embedding, &incoming.embedding, self.h)?;
                self.cached_counts[i] += p;
                n_new += p;
            }
            self.slots.push(Slot {
                sample: incoming,
                inserted_at: self.step,
            });
            self.cached_counts.push(n_new);
            return Ok(None);
        }

        match self.policy {
            EvictionPolicy::DuelNaive => {
                if self.include_incoming {
                    // Argmax over the augmented pool: every slot's count
                    // gains its collision with the incoming, and the
                    // incoming itself competes with the sum of those terms.
                    let mut augmented = Vec::with_capacity(self.slots.len());
                    let mut incoming_n = 0.0;
                    for (i, slot) in self.slots.iter().enumerate() {
                        let p =
                            collision_prob(&slot.sample.embedding, &incoming.embedding, self.h)?;
                        augmented.push(self.cached_counts[i] + p);
                        incoming_n += p;
                    }
                    let max_aug = augmented.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if incoming_n >= max_aug - TIE_TOL {
                        // The incoming sample is itself the most duplicated:
                        // it never enters, the pool is unchanged.
                        return Ok(Some(EvictionRecord {
                            evicted_index: self.capacity,
                            evicted_sample: incoming,
                            n_value_at_eviction: incoming_n,
                            step: self.step,
                        }));
                    }
                    let victim = self.argmax_slot(&augmented, Some(&incoming.embedding))?;
                    let n_aug = augmented[victim];
                    let mut rec = self.replace_at(victim, incoming)?;
                    rec.n_value_at_eviction = n_aug;
                    return Ok(Some(rec));
                }
                let victim = self.select_victim(Some(&incoming.embedding))?;
                Ok(Some(self.replace_at(victim, incoming)?))
            }
            EvictionPolicy::Fifo => {
                let victim = self
                    .slots
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, s)| s.inserted_at)
                    .map(|(i, _)| i)
                    .expect("memory is full");
                Ok(Some(self.replace_at(victim, incoming)?))
            }
            EvictionPolicy::Reservoir => {
                let draw = self.reservoir_rng.gen_range(0..self.stream_len);
                if (draw as usize) < self.capacity {
                    Ok(Some(self.replace_at(draw as usize, incoming)?))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Index of the slot with maximal cached duplicate count. Ties (within
    /// 1e-9) go to the oldest slot.
    pub fn argmax_duplicates(&self) -> Result<usize> {
        if self.slots.is_empty() {
            return Err(Error::EmptyInput("argmax over an empty memory"));
        }
        self.select_victim(None)
    }

    /// Victim selection on the cached counts.
    fn select_victim(&self, incoming: Option<&UnitVector>) -> Result<usize> {
        self.argmax_slot(&self.cached_counts, incoming)
    }

    /// Among slots tied (within 1e-9) at the maximal N value, prefer the one
    /// most similar to the incoming sample (when given), then the oldest.
    /// The similarity preference keeps replacement from draining a class
    /// that merely ties the incoming sample's own; see the safety sweep.
    fn argmax_slot(&self, n_values: &[f64], incoming: Option<&UnitVector>) -> Result<usize> {
        let max_n = n_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut best: Option<(usize, f64)> = None;
        for (i, &n) in n_values.iter().enumerate() {
            if n < max_n - TIE_TOL {
                continue;
            }
            let sim_pref = match incoming {
                Some(z) => collision_prob(&self.slots[i].sample.embedding, z, self.h)?,
                None => 0.0,
            };
            best = match best {
                None => Some((i, sim_pref)),
                Some((bi, bs)) => {
                    if sim_pref > bs + TIE_TOL
                        || (sim_pref >= bs - TIE_TOL
                            && self.slots[i].inserted_at < self.slots[bi].inserted_at)
                    {
                        Some((i, sim_pref))
                    } else {
                        Some((bi, bs))
                    }
                }
            };
        }
        Ok(best.expect("nonempty memory").0)
    }

    fn replace_at(&mut self, victim: usize, incoming: Sample) -> Result<EvictionRecord> {
        let n_at_eviction = self.cached_counts[victim];
        let old = std::mem::replace(
            &mut self.slots[victim],
            Slot {
                sample: incoming,
                inserted_at: self.step,
            },
        );
        let z_new = self.slots[victim].sample.embedding.clone();
        let z_old = old.sample.embedding.clone();
        let mut n_new = 0.0;
        for (i, slot) in self.slots.iter().enumerate() {
            if i == victim {
                continue;
            }
            let zi = &slot.sample.embedding;
            let p_new = collision_prob(zi, &z_new, self.h)?;
            self.cached_counts[i] += p_new - collision_prob(zi, &z_old, self.h)?;
            n_new += p_new;
        }
        self.cached_counts[victim] = n_new;
        self.replacements_since_resync += 1;
        if self.replacements_since_resync >= RESYNC_INTERVAL {
            self.recompute_counts()?;
        }
        Ok(EvictionRecord {
            evicted_index: victim,
            evicted_sample: old.sample,
            n_value_at_eviction: n_at_eviction,
            step: self.step,
        })
    }

    /// Full O(k^2) recomputation of every cached count.
    pub fn recompute_counts(&mut self) -> Result<()> {
        for j in 0..self.slots.len() {
            let mut n = 0.0;
            for (i, slot) in self.slots.iter().enumerate() {
                if i != j {
                    n += collision_prob(&slot.sample.embedding, &self.slots[j].sample.embedding, self.h)?;
                }
            }
            self.cached_counts[j] = n;
        }
        self.replacements_since_resync = 0;
        Ok(())
    }

    /// Re-encodes every slot from its raw features and rebuilds the counts.
    pub fn refresh_embeddings(&mut self, encoder: &dyn Embedder) -> Result<()> {
        if self.variant != MemoryVariant::ReEncode {
            return Err(Error::VariantMismatch(
                "refresh_embeddings is only valid on the re-encode variant",
            ));
        }
        for slot in &mut self.slots {
            let raw = slot.sample.raw.as_ref().ok_or(Error::VariantMismatch(
                "re-encode slot is missing raw features",
            ))?;
            slot.sample.embedding = encoder.embed(raw)?;
        }
        self.recompute_counts()
    }

    /// Draws `m` embeddings uniformly without replacement. `m` equal to the
    /// current size returns the whole memory in slot order; the draw stream
    /// is reproducible from the seed.
    pub fn negatives(&self, m: usize, rng_seed: u64) -> Result<Vec<UnitVector>> {
        let k = self.slots.len();
        if m > k {
            return Err(Error::SampleTooLarge {
                requested: m,
                available: k,
            });
        }
        if m == k {
            return Ok(self.embeddings().cloned().collect());
        }
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        let mut idx: Vec<usize> = (0..k).collect();
        for i in 0..m {
            let j = rng.gen_range(i..k);
            idx.swap(i, j);
        }
        Ok(idx[..m]
            .iter()
            .map(|&i| self.slots[i].sample.embedding.clone())
            .collect())
    }

    /// Evaluation-only composition report from the hidden labels.
    pub fn composition_metrics(&self) -> CompositionMetrics {
        let mut histogram: BTreeMap<ClassId, usize> = BTreeMap::new();
        for slot in &self.slots {
            *histogram.entry(slot.sample.label).or_insert(0) += 1;
        }
        let total = self.slots.len();
        if total == 0 {
            return CompositionMetrics {
                histogram,
                max_class_fraction: 0.0,
                entropy_nats: 0.0,
            };
        }
        let max = histogram.values().copied().max().unwrap_or(0);
        let entropy = histogram
            .values()
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum();
        CompositionMetrics {
            histogram,
            max_class_fraction: max as f64 / total as f64,
            entropy_nats: entropy,
        }
    }
}

/// Per-class slot counts plus summary statistics (evaluation only).
#[derive(Debug, Clone)]
pub struct CompositionMetrics {
    pub histogram: BTreeMap<ClassId, usize>,
    pub max_class_fraction: f64,
    /// Shannon entropy of the slot class distribution, in nats.
    pub entropy_nats: f64,
}
