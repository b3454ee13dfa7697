//! Contrastive losses and closed-form gradients on equiangular frames.
//!
//! Two loss forms are provided: the logistic NCE loss
//! `log(1 + sum_i exp(-v_i))` over margins `v_i = a.(p - n_i)`, and the
//! softmax InfoNCE loss that the gradient analysis targets. For a frame of
//! class vectors with constant pairwise product `gamma` and a class-biased
//! population of negatives, the InfoNCE gradient of a vertex decomposes onto
//! `span{z_i, z_max}`; [`analytic_etf_gradient`] gives those coefficients in
//! closed form and [`population_infonce_gradient`] evaluates the same
//! gradient exactly on a finite population, so the two can be cross-checked
//! against finite differences.

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitVector};
use crate::scoring::ClassId;

/// Class marginal with one dominant class: `c_max` is drawn with
/// probability `rho_max`, every other class with `rho_min`.
#[derive(Debug, Clone, Copy)]
pub struct BiasSpec {
    pub num_classes: usize,
    pub c_max: ClassId,
    pub rho_max: f64,
}

impl BiasSpec {
    pub fn new(num_classes: usize, c_max: ClassId, rho_max: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "bias spec needs at least 2 classes, got {num_classes}"
            )));
        }
        if c_max >= num_classes {
            return Err(Error::InvalidParameter(format!(
                "c_max = {c_max} outside 0..{num_classes}"
            )));
        }
        let uniform = 1.0 / num_classes as f64;
        if !(rho_max >= uniform - 1e-12 && rho_max < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho_max = {rho_max} outside [1/|C|, 1) for |C| = {num_classes}"
            )));
        }
        Ok(BiasSpec {
            num_classes,
            c_max,
            rho_max,
        })
    }

    /// Spec from the bias factor `rho_max / rho_min`:
    /// `rho_max = b / (b + |C| - 1)`.
    pub fn from_bias_factor(num_classes: usize, c_max: ClassId, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bias factor must be >= 1, got {factor}"
            )));
        }
        let rho_max = factor / (factor + num_classes as f64 - 1.0);
        BiasSpec::new(num_classes, c_max, rho_max)
    }

    pub fn rho_min(&self) -> f64 {
        (1.0 - self.rho_max) / (self.num_classes as f64 - 1.0)
    }

    pub fn bias_factor(&self) -> f64 {
        self.rho_max / self.rho_min()
    }

    /// Marginal probability of class `c`.
    pub fn rho(&self, c: ClassId) -> f64 {
        if c == self.c_max {
            self.rho_max
        } else {
            self.rho_min()
        }
    }

    pub fn is_uniform(&self) -> bool {
        (self.rho_max - 1.0 / self.num_classes as f64).abs() < 1e-12
    }

    /// Integer class counts summing to `k` that realize the marginal
    /// exactly; errors if `k * rho` is not integral.
    pub fn exact_counts(&self, k: usize) -> Result<Vec<usize>> {
        let max = self.rho_max * k as f64;
        let min = self.rho_min() * k as f64;
        if (max - max.round()).abs() > 1e-9 || (min - min.round()).abs() > 1e-9 {
            return Err(Error::CountMismatch(format!(
                "k = {k} does not split into integer counts (k*rho_max = {max}, k*rho_min = {min})"
            )));
        }
        if max.round() < 1.0 || min.round() < 1.0 {
            return Err(Error::CountMismatch(format!(
                "k = {k} leaves a class empty (k*rho_max = {max}, k*rho_min = {min})"
            )));
        }
        Ok((0..self.num_classes)
            .map(|c| {
                if c == self.c_max {
                    max.round() as usize
                } else {
                    min.round() as usize
                }
            })
            .collect())
    }
}

/// One anchor with its positive and a set of negatives.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub anchor: UnitVector,
    pub positive: UnitVector,
    pub negatives: Vec<UnitVector>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(
        anchor: UnitVector,
        positive: UnitVector,
        negatives: Vec<UnitVector>,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let d = anchor.dim();
        if positive.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: positive.dim(),
            });
        }
        for n in &negatives {
            if n.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: n.dim(),
                });
            }
        }
        Ok(ContrastiveBatch {
            anchor,
            positive,
            negatives,
            temperature,
        })
    }
}

/// `log(1 + sum_i exp(x_i))` with the max factored out.
fn log1p_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().cloned().fold(0.0f64, f64::max); // include the implicit 1 = e^0
    m + (((-m).exp()) + xs.iter().map(|x| (x - m).exp()).sum::<f64>()).ln()
}

/// Logistic NCE loss over margins `v_i = a.(p - n_i)`. Zero negatives give
/// exactly zero; temperature is unused by this form.
pub fn logistic_nce_loss(batch: &ContrastiveBatch) -> Result<f64> {
    if batch.negatives.is_empty() {
        return Ok(0.0);
    }
    let a = &batch.anchor;
    let ap = a.dot(&batch.positive);
    Ok(log1p_sum_exp(
        batch.negatives.iter().map(|n| -(ap - a.dot(n))),
    ))
}

/// Softmax InfoNCE loss: cross-entropy of the positive against the
/// negatives at temperature `tau`.
pub fn info_nce_loss(batch: &ContrastiveBatch) -> Result<f64> {
    if batch.negatives.is_empty() {
        return Err(Error::EmptyInput("info_nce_loss needs at least 1 negative"));
    }
    let a = &batch.anchor;
    let tau = batch.temperature;
    let pos = a.dot(&batch.positive) / tau;
    // -log softmax = log(1 + sum exp(l_i - pos))
    Ok(log1p_sum_exp(
        batch.negatives.iter().map(|n| a.dot(n) / tau - pos),
    ))
}

/// Which side of the bias the anchor sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorCase {
    Dominant,
    Minority,
}

impl AnchorCase {
    pub fn name(&self) -> &'static str {
        match self {
            AnchorCase::Dominant => "dominant",
            AnchorCase::Minority => "minority",
        }
    }
}

/// Closed-form InfoNCE gradient of a frame vertex, expressed on
/// `span{z_i, z_max}`.
#[derive(Debug, Clone, Copy)]
pub struct EtfGradient {
    /// Coefficient of the anchor's own vertex `z_i`.
    pub coeff_self: f64,
    /// Coefficient of the dominant vertex `z_max`; identically zero in the
    /// dominant case (where `z_max` is `z_i`).
    pub coeff_max: f64,
    pub case: AnchorCase,
}

/// Exact span coefficients of the population InfoNCE gradient at a frame
/// vertex, for `k` negatives distributed as `spec` over a frame with
/// off-diagonal `gamma` (temperature 1).
///
/// With `P- = exp(gamma) / (k * (rho*e + (1-rho)*exp(gamma)))` for the
/// anchor-class marginal `rho`, the dominant case is
/// `k P- (-1 + rho_max - rho_min) z_i` and the minority case
/// `-k P- z_i + k P- (rho_max - rho_min) z_max`, plus in both cases the
/// projection of `k rho_min P- * S` where `S` is the vertex sum. `S`
/// vanishes at `gamma = -1/(|C|-1)` (the zero-sum frame), recovering the
/// bare two-term form; at other `gamma` the projection keeps the
/// coefficients aligned with the exact population gradient.
pub fn analytic_etf_gradient(
    spec: &BiasSpec,
    k: usize,
    gamma: f64,
    case: AnchorCase,
) -> Result<EtfGradient> {
    let c = spec.num_classes as f64;
    if !(gamma > -1.0 && gamma < 1.0) || 1.0 + (c - 1.0) * gamma < -1e-12 {
        return Err(Error::InvalidParameter(format!(
            "infeasible gamma = {gamma} for |C| = {c}"
        )));
    }
    let rho_max = spec.rho_max;
    let rho_min = spec.rho_min();
    let rho = match case {
        AnchorCase::Dominant => rho_max,
        AnchorCase::Minority => rho_min,
    };
    if k as f64 * rho <= 0.0 {
        return Err(Error::InvalidParameter(
            "population size k leaves the anchor class empty".into(),
        ));
    }
    let e1 = 1.0f64.exp();
    let eg = gamma.exp();
    let p_neg = eg / (k as f64 * (rho * e1 + (1.0 - rho) * eg));
    let kp = k as f64 * p_neg;

    // Inner product of the vertex sum with any vertex; zero on the
    // zero-sum frame.
    let s_dot = 1.0 + (c - 1.0) * gamma;

    match case {
        AnchorCase::Dominant => Ok(EtfGradient {
            // S projects onto span{z_i} with coefficient s_dot.
            coeff_self: kp * (-1.0 + rho_max - rho_min) + kp * rho_min * s_dot,
            coeff_max: 0.0,
            case,
        }),
        AnchorCase::Minority => {
            // Orthogonal projection of S onto span{z_i, z_max} is
            // alpha*(z_i + z_max) with alpha = s_dot / (1 + gamma).
            let alpha = s_dot / (1.0 + gamma);
            Ok(EtfGradient {
                coeff_self: kp * (rho_min * alpha - 1.0),
                coeff_max: kp * (rho_max - rho_min + rho_min * alpha),
                case,
            })
        }
    }
}

/// Exact InfoNCE gradient of the anchor at `vectors[anchor_class]` against
/// a finite population holding `class_counts[c]` samples at `vectors[c]`.
///
/// The population consists of the `k = sum(counts)` samples besides the
/// anchor; the anchor's positives are the samples of its own class, so its
/// class count must be positive. Returns the full ambient gradient vector.
pub fn population_infonce_gradient(
    vectors: &[UnitVector],
    class_counts: &[usize],
    anchor_class: ClassId,
    tau: f64,
) -> Result<Vec<f64>> {
    if vectors.len() != class_counts.len() {
        return Err(Error::CountMismatch(format!(
            "{} class vectors vs {} counts",
            vectors.len(),
            class_counts.len()
        )));
    }
    if anchor_class >= vectors.len() || class_counts[anchor_class] == 0 {
        return Err(Error::CountMismatch(format!(
            "anchor class {anchor_class} has no population samples"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let anchor = &vectors[anchor_class];
    let d = anchor.dim();

    // Softmax over the population at the anchor.
    let logits: Vec<f64> = vectors.iter().map(|z| anchor.dot(z) / tau).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .zip(class_counts)
        .map(|(l, &n)| n as f64 * (l - m).exp())
        .collect();
    let z_norm: f64 = weights.iter().sum();

    // grad = (1/tau) * (sum_c n_c P_c z_c - z_positive)
    let mut grad = vec![0.0; d];
    for (c, z) in vectors.iter().enumerate() {
        let w = weights[c] / z_norm;
        for (g, x) in grad.iter_mut().zip(z.as_slice()) {
            *g += w * x;
        }
    }
    for (g, x) in grad.iter_mut().zip(vectors[anchor_class].as_slice()) {
        *g -= x;
    }
    for g in grad.iter_mut() {
        *g /= tau;
    }
    Ok(grad)
}

/// The population-averaged InfoNCE loss as a function of a free anchor
/// position (used by the finite-difference oracle; the anchor is NOT part
/// of the population).
pub fn population_infonce_loss(
    vectors: &[UnitVector],
    class_counts: &[usize],
    anchor_class: ClassId,
    tau: f64,
    anchor: &[f64],
) -> f64 {
    let pos = &vectors[anchor_class];
    let dot = |z: &UnitVector| -> f64 {
        z.as_slice()
            .iter()
            .zip(anchor)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let logits: Vec<f64> = vectors.iter().map(|z| dot(z) / tau).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits
        .iter()
        .zip(class_counts)
        .map(|(l, &n)| n as f64 * (l - m).exp())
        .sum::<f64>()
        .ln();
    -dot(pos) / tau + lse
}

/// Central finite differences of `loss` in ambient coordinates.
///
/// The stencil evaluates the raw perturbed vector without renormalizing, to
/// match differentiation of the unconstrained loss.
pub fn finite_diff_gradient<F>(loss: F, z: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(
        (1e-8..=1e-3).contains(&eps),
        "finite-difference step {eps} outside [1e-8, 1e-3]"
    );
    let mut grad = vec![0.0; z.len()];
    let mut probe = z.to_vec();
    for i in 0..z.len() {
        probe[i] = z[i] + eps;
        let up = loss(&probe);
        probe[i] = z[i] - eps;
        let down = loss(&probe);
        probe[i] = z[i];
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Decomposes `grad` onto `span{z_i, z_max}` by solving the 2x2 Gram
/// system; returns (coeff_self, coeff_max, off_span_norm). When the anchor
/// is the dominant vertex the span is one-dimensional and coeff_max is 0.
pub fn span_coefficients(
    grad: &[f64],
    z_i: &UnitVector,
    z_max: &UnitVector,
) -> (f64, f64, f64) {
    let d = |u: &UnitVector| -> f64 {
        u.as_slice()
            .iter()
            .zip(grad)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let g_i = d(z_i);
    let g_m = d(z_max);
    let gamma = z_i.dot(z_max);
    let (a, b) = if (gamma - 1.0).abs() < 1e-12 {
        (g_i, 0.0)
    } else {
        let det = 1.0 - gamma * gamma;
        ((g_i - gamma * g_m) / det, (g_m - gamma * g_i) / det)
    };
    let mut off = 0.0;
    for (idx, g) in grad.iter().enumerate() {
        let r = g - a * z_i.as_slice()[idx] - b * z_max.as_slice()[idx];
        off += r * r;
    }
    (a, b, off.sqrt())
}

/// Component of `grad` orthogonal to `z` (the sphere-tangential part).
pub fn tangential_component(grad: &[f64], z: &UnitVector) -> Vec<f64> {
    let radial: f64 = grad
        .iter()
        .zip(z.as_slice())
        .map(|(g, x)| g * x)
        .sum();
    grad.iter()
        .zip(z.as_slice())
        .map(|(g, x)| g - radial * x)
        .collect()
}

pub fn vector_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trajectory of one class vector's alignment with the dominant vertex
/// across drift steps.
#[derive(Debug, Clone)]
pub struct DriftReport {
    /// `alignments[c][t]` = `z_c . z_max` after `t` steps (index 0 is the
    /// initial frame).
    pub alignments: Vec<Vec<f64>>,
    pub final_vectors: Vec<UnitVector>,
}

/// Runs `steps` simultaneous gradient-descent updates of every class vector
/// under the population InfoNCE gradient, renormalizing after each step,
/// and records each class's alignment with the dominant vertex.
pub fn etf_drift_step(
    vectors: &[UnitVector],
    spec: &BiasSpec,
    k: usize,
    tau: f64,
    lr: f64,
    steps: usize,
) -> Result<DriftReport> {
    if !(lr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let counts = spec.exact_counts(k)?;
    let mut current: Vec<UnitVector> = vectors.to_vec();
    let mut alignments: Vec<Vec<f64>> = (0..current.len())
        .map(|c| vec![current[c].dot(&current[spec.c_max])])
        .collect();
    for _ in 0..steps {
        let grads: Vec<Vec<f64>> = (0..current.len())
            .map(|c| population_infonce_gradient(&current, &counts, c, tau))
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(current.len());
        for (z, g) in current.iter().zip(&grads) {
            let moved: Vec<f64> = z
                .as_slice()
                .iter()
                .zip(g)
                .map(|(x, gi)| x - lr * gi)
                .collect();
            next.push(normalize(&moved)?);
        }
        current = next;
        for (c, series) in alignments.iter_mut().enumerate() {
            series.push(current[c].dot(&current[spec.c_max]));
        }
    }
    Ok(DriftReport {
        alignments,
        final_vectors: current,
    })
}
