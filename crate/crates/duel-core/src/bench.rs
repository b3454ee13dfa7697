//! Incremental-vs-recompute maintenance benchmark.
//!
//! The memory updates its duplicate counts in O(k) per replacement; the
//! alternative is a full O(k^2) recomputation after every insert. This
//! module first asserts the two paths agree, then times both.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitVector};
use crate::memory::{DuelMemory, EvictionPolicy, MemoryVariant};
use crate::scoring::{Sample, ScoreFunction};

#[derive(Debug, Clone)]
pub struct MaintenanceBenchResult {
    pub k: usize,
    pub dim: usize,
    pub equivalence_ops: usize,
    pub equivalence_max_abs_err: f64,
    pub incremental_ops_per_sec: f64,
    pub recompute_ops_per_sec: f64,
    /// incremental / recompute throughput ratio.
    pub speedup: f64,
    /// Wall-clock seconds of one re-encode refresh at this size.
    pub refresh_seconds: f64,
}

fn random_unit(rng: &mut ChaCha12Rng, dim: usize) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// Runs the equivalence check (`equiv_ops` incremental replacements, then
/// max |cached - recomputed| must stay within 1e-6) followed by throughput
/// timing of both maintenance strategies and one re-encode refresh.
pub fn maintenance_bench(
    k: usize,
    dim: usize,
    equiv_ops: usize,
    seed: u64,
) -> Result<MaintenanceBenchResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut mem = DuelMemory::new(
        k,
        ScoreFunction::Linear,
        EvictionPolicy::DuelNaive,
        MemoryVariant::StaleEmbedding,
        seed,
    )?;
    while !mem.is_full() {
        mem.insert_replace(Sample::new(random_unit(&mut rng, dim), 0))?;
    }

    // Equivalence before any timing.
    for _ in 0..equiv_ops {
        mem.insert_replace(Sample::new(random_unit(&mut rng, dim), 0))?;
    }
    let cached = mem.cached_counts().to_vec();
    let mut resynced = mem.clone();
    resynced.recompute_counts()?;
    let max_err = cached
        .iter()
        .zip(resynced.cached_counts())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if max_err > 1e-6 {
        return Err(Error::EquivalenceFailed(max_err));
    }

    // Incremental throughput (includes the periodic resynchronization).
    let incremental_ops_per_sec = {
        let start = Instant::now();
        let mut ops = 0usize;
        while start.elapsed().as_secs_f64() < 0.25 && ops < 50_000 {
            for _ in 0..32 {
                mem.insert_replace(Sample::new(random_unit(&mut rng, dim), 0))?;
            }
            ops += 32;
        }
        ops as f64 / start.elapsed().as_secs_f64()
    };

    // Full-recompute maintenance: every replacement pays O(k^2).
    let recompute_ops_per_sec = {
        let start = Instant::now();
        let mut ops = 0usize;
        while (start.elapsed().as_secs_f64() < 0.4 || ops < 2) && ops < 5_000 {
            mem.insert_replace(Sample::new(random_unit(&mut rng, dim), 0))?;
            mem.recompute_counts()?;
            ops += 1;
        }
        ops as f64 / start.elapsed().as_secs_f64()
    };

    // Refresh cost of the re-encode variant at the same size.
    let refresh_seconds = {
        let mut re = DuelMemory::new(
            k,
            ScoreFunction::Linear,
            EvictionPolicy::DuelNaive,
            MemoryVariant::ReEncode,
            seed,
        )?;
        while !re.is_full() {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z = normalize(&raw)?;
            re.insert_replace(Sample::with_raw(z, 0, raw))?;
        }
        let embedder = |raw: &[f64]| normalize(raw);
        let start = Instant::now();
        re.refresh_embeddings(&embedder)?;
        start.elapsed().as_secs_f64()
    };

    Ok(MaintenanceBenchResult {
        k,
        dim,
        equivalence_ops: equiv_ops,
        equivalence_max_abs_err: max_err,
        incremental_ops_per_sec,
        recompute_ops_per_sec,
        speedup: incremental_ops_per_sec / recompute_ops_per_sec,
        refresh_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_pool_paths_agree() {
        // k = 2: both maintenance paths are within noise of each other but
        // must produce the same counts.
        let r = maintenance_bench(2, 8, 200, 3).unwrap();
        assert!(r.equivalence_max_abs_err <= 1e-6);
        assert!(r.incremental_ops_per_sec > 0.0 && r.recompute_ops_per_sec > 0.0);
    }

    #[test]
    fn medium_pool_shows_the_asymptotic_gap() {
        let r = maintenance_bench(256, 32, 300, 5).unwrap();
        assert!(
            r.speedup > 3.0,
            "expected a clear win at k=256, got {:.2}x",
            r.speedup
        );
    }
}
