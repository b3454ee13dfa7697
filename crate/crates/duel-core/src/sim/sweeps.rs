//! Verification sweeps: replacement safety, drift under bias, and the
//! gradient oracle grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::geometry::{make_etf, normalize, EtfFrame, UnitVector};
use crate::memory::{DuelMemory, EvictionPolicy, MemoryVariant};
use crate::nce::{
    analytic_etf_gradient, etf_drift_step, finite_diff_gradient, population_infonce_gradient,
    population_infonce_loss, span_coefficients, tangential_component, vector_norm, AnchorCase,
    BiasSpec,
};
use crate::scoring::{pool_diversity, Sample, ScoreFunction};
use crate::sim::stream::randn;

/// Configuration of the replacement-safety sweep.
#[derive(Debug, Clone)]
pub struct SafetySweepConfig {
    /// Trials per score function.
    pub trials: usize,
    pub score_functions: Vec<ScoreFunction>,
    pub class_sizes: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    /// Perturbation used for the reported (not asserted) noisy leg.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SafetySweepConfig {
    fn default() -> Self {
        SafetySweepConfig {
            trials: 10_000,
            score_functions: crate::scoring::standard_score_functions(),
            class_sizes: vec![3, 5, 10],
            pool_sizes: vec![4, 8, 16, 32, 64],
            noise_sigma: 0.05,
            seed: 0xD1CE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafetySweepReport {
    /// (score function name, trials, violations) for exact-vertex pools.
    pub per_function: Vec<(String, usize, usize)>,
    pub exact_trials: usize,
    pub exact_violations: usize,
    /// Most negative diversity delta seen on exact pools.
    pub worst_exact_delta: f64,
    /// Fraction of exact trials where the replacement swapped two
    /// latent-indistinguishable samples (diversity delta exactly zero by
    /// class identity).
    pub case_i_fraction: f64,
    pub noisy_trials: usize,
    pub noisy_violations: usize,
}

/// Replacement trial on one pool; returns (diversity before, after,
/// evicted class == incoming class).
fn replacement_trial(
    embeddings: &[UnitVector],
    classes: &[usize],
    incoming: UnitVector,
    incoming_class: usize,
    h: ScoreFunction,
) -> Result<(f64, f64, bool)> {
    let k = embeddings.len();
    let mut mem = DuelMemory::new(
        k,
        h,
        EvictionPolicy::DuelNaive,
        MemoryVariant::StaleEmbedding,
        0,
    )?;
    for (z, &c) in embeddings.iter().zip(classes) {
        mem.insert_replace(Sample::new(z.clone(), c))?;
    }
    let before = pool_diversity(&mem.to_pool()?, h)?;
    let record = mem
        .insert_replace(Sample::new(incoming, incoming_class))?
        .expect("full memory must evict");
    let after = pool_diversity(&mem.to_pool()?, h)?;
    Ok((before, after, record.evicted_sample.label == incoming_class))
}

/// Sweeps random exact-vertex pools (asserting nothing, counting
/// violations of `after >= before - 1e-12`) and the same pools with
/// noise-perturbed embeddings (reported only; the safety statement is
/// about exact frames).
pub fn theorem1_sweep(cfg: &SafetySweepConfig) -> Result<SafetySweepReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut per_function = Vec::new();
    let mut exact_trials = 0usize;
    let mut exact_violations = 0usize;
    let mut worst_exact_delta = f64::INFINITY;
    let mut case_i = 0usize;
    let mut noisy_trials = 0usize;
    let mut noisy_violations = 0usize;

    for &h in &cfg.score_functions {
        let mut violations_h = 0usize;
        for _ in 0..cfg.trials {
            let c = cfg.class_sizes[rng.gen_range(0..cfg.class_sizes.len())];
            let k = cfg.pool_sizes[rng.gen_range(0..cfg.pool_sizes.len())];
            let gamma = if rng.gen_bool(0.5) {
                EtfFrame::simplex_gamma(c)
            } else {
                -1.0 / c as f64
            };
            let frame = make_etf(c, c + 2, gamma)?;

            // Random class multiplicities: each slot lands on a uniform
            // random vertex.
            let classes: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
            let embeddings: Vec<UnitVector> = classes
                .iter()
                .map(|&cl| frame.class_vectors[cl].clone())
                .collect();
            let incoming_class = rng.gen_range(0..c);
            let incoming = frame.class_vectors[incoming_class].clone();

            let (before, after, evicted_same_class) =
                replacement_trial(&embeddings, &classes, incoming, incoming_class, h)?;
            let delta = after - before;
            exact_trials += 1;
            worst_exact_delta = worst_exact_delta.min(delta);
            if delta < -1e-12 {
                exact_violations += 1;
                violations_h += 1;
            }
            if evicted_same_class {
                case_i += 1;
            }

            // Noisy leg: perturb and renormalize, then rerun.
            if cfg.noise_sigma > 0.0 {
                let noisy: Vec<UnitVector> = embeddings
                    .iter()
                    .map(|z| {
                        let v: Vec<f64> = z
                            .as_slice()
                            .iter()
                            .map(|x| x + cfg.noise_sigma * randn(&mut rng))
                            .collect();
                        normalize(&v)
                    })
                    .collect::<Result<_>>()?;
                let incoming_idx = rng.gen_range(0..c);
                let v: Vec<f64> = frame.class_vectors[incoming_idx]
                    .as_slice()
                    .iter()
                    .map(|x| x + cfg.noise_sigma * randn(&mut rng))
                    .collect();
                let (nb, na, _) =
                    replacement_trial(&noisy, &classes, normalize(&v)?, incoming_idx, h)?;
                noisy_trials += 1;
                if na - nb < -1e-12 {
                    noisy_violations += 1;
                }
            }
        }
        per_function.push((h.name().to_string(), cfg.trials, violations_h));
    }

    Ok(SafetySweepReport {
        per_function,
        exact_trials,
        exact_violations,
        worst_exact_delta,
        case_i_fraction: case_i as f64 / exact_trials.max(1) as f64,
        noisy_trials,
        noisy_violations,
    })
}

/// One cell of the drift grid.
#[derive(Debug, Clone)]
pub struct DriftRow {
    pub num_classes: usize,
    pub bias_factor: f64,
    pub gamma: f64,
    pub class_id: usize,
    pub is_minority: bool,
    pub initial_alignment: f64,
    pub final_alignment: f64,
    /// Alignment with the dominant vertex decreased at every step.
    pub monotone_decreasing: bool,
    /// Alignment never moved beyond 1e-9.
    pub stationary: bool,
}

#[derive(Debug, Clone)]
pub struct DriftGridReport {
    pub rows: Vec<DriftRow>,
    pub steps: usize,
    pub lr: f64,
}

impl DriftGridReport {
    pub const CSV_HEADER: &'static str = "num_classes,bias_factor,gamma,class_id,is_minority,initial_alignment,final_alignment,monotone_decreasing,stationary";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.num_classes,
                r.bias_factor,
                r.gamma,
                r.class_id,
                r.is_minority,
                r.initial_alignment,
                r.final_alignment,
                r.monotone_decreasing,
                r.stationary
            ));
        }
        out
    }

    /// Total |alignment drift| of minority classes for one grid cell.
    pub fn minority_drift_magnitude(&self, num_classes: usize, bias: f64, gamma: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| {
                r.num_classes == num_classes
                    && r.bias_factor == bias
                    && (r.gamma - gamma).abs() < 1e-12
                    && r.is_minority
            })
            .map(|r| (r.initial_alignment - r.final_alignment).abs())
            .sum()
    }
}

/// Runs the drift grid: for each (|C|, bias factor, gamma) cell, every class
/// vector follows the population gradient for `steps` steps and its
/// alignment with the dominant vertex is tracked.
pub fn observation1_report(
    class_sizes: &[usize],
    bias_factors: &[f64],
    steps: usize,
    lr: f64,
    tau: f64,
) -> Result<DriftGridReport> {
    let mut rows = Vec::new();
    for &c in class_sizes {
        for &b in bias_factors {
            for gamma in [-1.0 / c as f64, EtfFrame::simplex_gamma(c)] {
                let frame = make_etf(c, c + 2, gamma)?;
                let spec = BiasSpec::from_bias_factor(c, 0, b)?;
                // Smallest population realizing the marginal exactly.
                let k = (b.round() as usize) + c - 1;
                let report = etf_drift_step(&frame.class_vectors, &spec, k, tau, lr, steps)?;
                for (class_id, series) in report.alignments.iter().enumerate() {
                    let initial = series[0];
                    let final_a = *series.last().expect("nonempty series");
                    let monotone = series.windows(2).all(|w| w[1] < w[0]);
                    let stationary = series.iter().all(|v| (v - initial).abs() <= 1e-9);
                    rows.push(DriftRow {
                        num_classes: c,
                        bias_factor: b,
                        gamma,
                        class_id,
                        is_minority: class_id != spec.c_max,
                        initial_alignment: initial,
                        final_alignment: final_a,
                        monotone_decreasing: monotone,
                        stationary,
                    });
                }
            }
        }
    }
    Ok(DriftGridReport { rows, steps, lr })
}

/// One cell of the gradient-verification grid.
#[derive(Debug, Clone)]
pub struct GradientGridRow {
    pub case: AnchorCase,
    pub num_classes: usize,
    pub bias_factor: f64,
    pub gamma: f64,
    pub coeff_self: f64,
    pub coeff_max: f64,
    /// Largest pairwise disagreement of the three gradient routes on the
    /// span coefficients, relative to the coefficient scale.
    pub oracle_rel_err: f64,
    /// Sphere-tangential norm of the exact population gradient.
    pub tangential_norm: f64,
}

pub const GRADIENT_CSV_HEADER: &str =
    "case,num_classes,bias_factor,gamma,coeff_self,coeff_max,oracle_rel_err,tangential_norm";

pub fn gradient_grid_csv(rows: &[GradientGridRow]) -> String {
    let mut out = String::from(GRADIENT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.case.name(),
            r.num_classes,
            r.bias_factor,
            r.gamma,
            r.coeff_self,
            r.coeff_max,
            r.oracle_rel_err,
            r.tangential_norm
        ));
    }
    out
}

/// Evaluates the three gradient routes (closed form, exact population,
/// central differences) on every grid cell and reports their worst pairwise
/// disagreement on the span coefficients.
pub fn gradient_grid_report(
    class_sizes: &[usize],
    bias_factors: &[f64],
    tau: f64,
) -> Result<Vec<GradientGridRow>> {
    let mut rows = Vec::new();
    for &c in class_sizes {
        for &b in bias_factors {
            for gamma in [-1.0 / c as f64, EtfFrame::simplex_gamma(c)] {
                let frame = make_etf(c, c + 2, gamma)?;
                let spec = BiasSpec::from_bias_factor(c, 0, b)?;
                let k = (b.round() as usize) + c - 1;
                let counts = spec.exact_counts(k)?;
                for case in [AnchorCase::Dominant, AnchorCase::Minority] {
                    let anchor = match case {
                        AnchorCase::Dominant => spec.c_max,
                        AnchorCase::Minority => (spec.c_max + 1) % c,
                    };
                    let analytic = analytic_etf_gradient(&spec, k, gamma, case)?;
                    let grad =
                        population_infonce_gradient(&frame.class_vectors, &counts, anchor, tau)?;
                    let (pop_self, pop_max, _) = span_coefficients(
                        &grad,
                        &frame.class_vectors[anchor],
                        &frame.class_vectors[spec.c_max],
                    );
                    let fd = finite_diff_gradient(
                        |z| population_infonce_loss(&frame.class_vectors, &counts, anchor, tau, z),
                        frame.class_vectors[anchor].as_slice(),
                        1e-5,
                    );
                    let (fd_self, fd_max, _) = span_coefficients(
                        &fd,
                        &frame.class_vectors[anchor],
                        &frame.class_vectors[spec.c_max],
                    );
                    let scale = analytic
                        .coeff_self
                        .abs()
                        .max(analytic.coeff_max.abs())
                        .max(1e-12);
                    let disagreements = [
                        analytic.coeff_self - pop_self,
                        analytic.coeff_max - pop_max,
                        analytic.coeff_self - fd_self,
                        analytic.coeff_max - fd_max,
                        pop_self - fd_self,
                        pop_max - fd_max,
                    ];
                    let oracle_rel_err = disagreements
                        .iter()
                        .map(|d| d.abs())
                        .fold(0.0f64, f64::max)
                        / scale;
                    let tangential =
                        tangential_component(&grad, &frame.class_vectors[anchor]);
                    rows.push(GradientGridRow {
                        case,
                        num_classes: c,
                        bias_factor: b,
                        gamma,
                        coeff_self: analytic.coeff_self,
                        coeff_max: analytic.coeff_max,
                        oracle_rel_err,
                        tangential_norm: vector_norm(&tangential),
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_slot_pool_gains_diversity_from_the_antipode() {
        let z = normalize(&[1.0, 0.0]).unwrap();
        let (before, after, _) = replacement_trial(
            &[z.clone(), z.clone()],
            &[0, 0],
            z.negated(),
            1,
            ScoreFunction::Linear,
        )
        .unwrap();
        assert_eq!(before, 0.0);
        assert!((after - 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_safety_sweep_has_no_violations() {
        let cfg = SafetySweepConfig {
            trials: 500,
            noise_sigma: 0.0,
            ..SafetySweepConfig::default()
        };
        let report = theorem1_sweep(&cfg).unwrap();
        assert_eq!(report.exact_violations, 0, "worst delta {}", report.worst_exact_delta);
        assert!(report.case_i_fraction > 0.0);
        assert_eq!(report.noisy_trials, 0);
    }

    #[test]
    fn matched_incoming_class_keeps_diversity_fixed() {
        // Incoming on the argmax class: latent-indistinguishable swap.
        let frame = make_etf(4, 6, EtfFrame::simplex_gamma(4)).unwrap();
        let classes = [0usize, 0, 0, 1, 2];
        let embeddings: Vec<UnitVector> = classes
            .iter()
            .map(|&c| frame.class_vectors[c].clone())
            .collect();
        for h in crate::scoring::standard_score_functions() {
            let (before, after, same) = replacement_trial(
                &embeddings,
                &classes,
                frame.class_vectors[0].clone(),
                0,
                h,
            )
            .unwrap();
            assert!(same);
            assert_eq!(before, after, "{}", h.name());
        }
    }

    #[test]
    fn drift_grid_flags_behave() {
        let report = observation1_report(&[5], &[1.0, 3.0, 27.0], 10, 0.1, 1.0).unwrap();
        for r in &report.rows {
            let zero_sum = (r.gamma - EtfFrame::simplex_gamma(r.num_classes)).abs() < 1e-12;
            if r.bias_factor == 1.0 && zero_sum {
                assert!(r.stationary, "{r:?}");
            }
            if r.bias_factor >= 3.0 && r.is_minority {
                assert!(r.monotone_decreasing, "{r:?}");
            }
        }
        // Larger bias drifts further at fixed steps.
        let gamma = EtfFrame::simplex_gamma(5);
        let d3 = report.minority_drift_magnitude(5, 3.0, gamma);
        let d27 = report.minority_drift_magnitude(5, 27.0, gamma);
        assert!(d27 > d3, "27x: {d27} vs 3x: {d3}");
    }

    #[test]
    fn gradient_grid_is_tight_on_one_cell() {
        let rows = gradient_grid_report(&[5], &[9.0], 1.0).unwrap();
        assert_eq!(rows.len(), 4); // 2 gammas x 2 cases
        for r in &rows {
            assert!(r.oracle_rel_err < 1e-5, "{r:?}");
            if r.case == AnchorCase::Dominant {
                assert_eq!(r.coeff_max, 0.0);
            } else {
                assert!(r.coeff_max > 0.0);
            }
        }
    }
}
