//! Desk-scale encoder: a linear map onto the sphere.
//!
//! `f(x) = normalize(W x)` keeps every gradient closed-form while still
//! letting biased negatives distort the learned geometry. Negatives never
//! receive gradient (they come from the memory with stop-gradient); anchors
//! and positives both do, via the chain rule through normalization.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitVector};
use crate::memory::Embedder;
use crate::sim::stream::{randn, StreamItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    InfoNce,
    Logistic,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::InfoNce => "info-nce",
            LossKind::Logistic => "logistic",
        }
    }
}

/// Row-major `d x D` weight matrix with `f(x) = normalize(W x)`.
#[derive(Debug, Clone)]
pub struct Encoder {
    weights: Vec<f64>,
    embed_dim: usize,
    ambient_dim: usize,
}

impl Encoder {
    /// Gaussian initialization scaled by `1/sqrt(D)`.
    pub fn random(embed_dim: usize, ambient_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(0xE7C0);
        let scale = 1.0 / (ambient_dim as f64).sqrt();
        let weights: Vec<f64> = (0..embed_dim * ambient_dim)
            .map(|_| scale * randn(&mut rng))
            .collect();
        Encoder::from_weights(weights, embed_dim, ambient_dim)
    }

    pub fn from_weights(weights: Vec<f64>, embed_dim: usize, ambient_dim: usize) -> Result<Self> {
        if weights.len() != embed_dim * ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: embed_dim * ambient_dim,
                got: weights.len(),
            });
        }
        // Loud failure on degenerate initialization.
        for r in 0..embed_dim {
            if weights[r * ambient_dim..(r + 1) * ambient_dim]
                .iter()
                .all(|&w| w == 0.0)
            {
                return Err(Error::InvalidParameter(format!("weight row {r} is zero")));
            }
        }
        for c in 0..ambient_dim {
            if (0..embed_dim).all(|r| weights[r * ambient_dim + c] == 0.0) {
                return Err(Error::InvalidParameter(format!("weight column {c} is zero")));
            }
        }
        Ok(Encoder {
            weights,
            embed_dim,
            ambient_dim,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `W x`, before normalization.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        Ok((0..self.embed_dim)
            .map(|r| {
                self.weights[r * self.ambient_dim..(r + 1) * self.ambient_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum()
            })
            .collect())
    }

    pub fn encode(&self, x: &[f64]) -> Result<UnitVector> {
        normalize(&self.apply(x)?)
    }

    /// One SGD step `W <- W - lr * grad`.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        Ok(())
    }
}

impl Embedder for Encoder {
    fn embed(&self, raw: &[f64]) -> Result<UnitVector> {
        self.encode(raw)
    }
}

/// Per-item loss pieces shared by value and gradient paths.
struct ItemTerms {
    loss: f64,
    /// dL/dz_anchor
    grad_anchor: Vec<f64>,
    /// dL/dz_positive
    grad_positive: Vec<f64>,
}

fn item_terms(per_item_negatives: &[&UnitVector], z_a: &UnitVector, z_p: &UnitVector, kind: LossKind, tau: f64) -> ItemTerms {
    let d = z_a.dim();
    let mut grad_anchor = vec![0.0; d];
    let mut grad_positive = vec![0.0; d];
    match kind {
        LossKind::Logistic => {
            if per_item_negatives.is_empty() {
                return ItemTerms {
                    loss: 0.0,
                    grad_anchor,
                    grad_positive,
                };
            }
            let ap = z_a.dot(z_p);
            // s_i = -v_i = a.n_i - a.p; stable weights w_i = e^{s_i}/(1 + sum e^{s_j})
            let s: Vec<f64> = per_item_negatives.iter().map(|n| z_a.dot(n) - ap).collect();
            let m = s.iter().cloned().fold(0.0f64, f64::max);
            let denom = (-m).exp() + s.iter().map(|x| (x - m).exp()).sum::<f64>();
            let loss = m + denom.ln();
            let mut w_sum = 0.0;
            for (n, si) in per_item_negatives.iter().zip(&s) {
                let w = (si - m).exp() / denom;
                w_sum += w;
                for ((ga, ni), pi) in grad_anchor.iter_mut().zip(n.as_slice()).zip(z_p.as_slice()) {
                    *ga += w * (ni - pi);
                }
            }
            for (gp, ai) in grad_positive.iter_mut().zip(z_a.as_slice()) {
                *gp = -w_sum * ai;
            }
            ItemTerms {
                loss,
                grad_anchor,
                grad_positive,
            }
        }
        LossKind::InfoNce => {
            let pos_logit = z_a.dot(z_p) / tau;
            let neg_logits: Vec<f64> =
                per_item_negatives.iter().map(|n| z_a.dot(n) / tau).collect();
            let m = neg_logits
                .iter()
                .cloned()
                .fold(pos_logit, f64::max);
            let e_pos = (pos_logit - m).exp();
            let denom = e_pos + neg_logits.iter().map(|l| (l - m).exp()).sum::<f64>();
            let q_pos = e_pos / denom;
            let loss = -(q_pos.ln());
            // dL/dz_a = ((q_p - 1) z_p + sum q_i n_i) / tau
            for (ga, pi) in grad_anchor.iter_mut().zip(z_p.as_slice()) {
                *ga = (q_pos - 1.0) * pi / tau;
            }
            for (n, l) in per_item_negatives.iter().zip(&neg_logits) {
                let q = (l - m).exp() / denom;
                for (ga, ni) in grad_anchor.iter_mut().zip(n.as_slice()) {
                    *ga += q * ni / tau;
                }
            }
            for (gp, ai) in grad_positive.iter_mut().zip(z_a.as_slice()) {
                *gp = (q_pos - 1.0) * ai / tau;
            }
            ItemTerms {
                loss,
                grad_anchor,
                grad_positive,
            }
        }
    }
}

fn check_batch(
    enc: &Encoder,
    batch: &[StreamItem],
    negatives: &[UnitVector],
    kind: LossKind,
    tau: f64,
    in_batch_negatives: bool,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch must hold at least one pair"));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    for n in negatives {
        if n.dim() != enc.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: enc.embed_dim,
                got: n.dim(),
            });
        }
    }
    if kind == LossKind::InfoNce
        && negatives.is_empty()
        && !(in_batch_negatives && batch.len() > 1)
    {
        return Err(Error::EmptyInput("InfoNCE needs at least one negative"));
    }
    Ok(())
}

/// Mean batch loss under the current weights. Negatives are constants.
pub fn batch_loss(
    enc: &Encoder,
    batch: &[StreamItem],
    negatives: &[UnitVector],
    kind: LossKind,
    tau: f64,
    in_batch_negatives: bool,
) -> Result<f64> {
    Ok(loss_and_gradient_impl(enc, batch, negatives, kind, tau, in_batch_negatives, false)?.0)
}

/// Mean batch loss and its exact gradient with respect to the weights,
/// flattened row-major. Anchors and positives both carry gradient;
/// negatives (memory or in-batch) are stop-gradient.
pub fn encoder_gradient(
    enc: &Encoder,
    batch: &[StreamItem],
    negatives: &[UnitVector],
    kind: LossKind,
    tau: f64,
    in_batch_negatives: bool,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) =
        loss_and_gradient_impl(enc, batch, negatives, kind, tau, in_batch_negatives, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

#[allow(clippy::type_complexity)]
fn loss_and_gradient_impl(
    enc: &Encoder,
    batch: &[StreamItem],
    negatives: &[UnitVector],
    kind: LossKind,
    tau: f64,
    in_batch_negatives: bool,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_batch(enc, batch, negatives, kind, tau, in_batch_negatives)?;
    let b = batch.len();
    let d = enc.embed_dim;
    let big_d = enc.ambient_dim;

    let mut pre_a = Vec::with_capacity(b);
    let mut pre_p = Vec::with_capacity(b);
    let mut z_a = Vec::with_capacity(b);
    let mut z_p = Vec::with_capacity(b);
    for item in batch {
        let ua = enc.apply(&item.anchor_raw)?;
        let up = enc.apply(&item.positive_raw)?;
        z_a.push(normalize(&ua)?);
        z_p.push(normalize(&up)?);
        pre_a.push(ua);
        pre_p.push(up);
    }

    let mut total_loss = 0.0;
    let mut grad = if want_grad {
        Some(vec![0.0; d * big_d])
    } else {
        None
    };

    for i in 0..b {
        let mut per_item: Vec<&UnitVector> = negatives.iter().collect();
        if in_batch_negatives {
            for (j, zp) in z_p.iter().enumerate() {
                if j != i {
                    per_item.push(zp);
                }
            }
        }
        let terms = item_terms(&per_item, &z_a[i], &z_p[i], kind, tau);
        total_loss += terms.loss;
        if let Some(g) = grad.as_mut() {
            accumulate_through_normalization(
                g,
                &terms.grad_anchor,
                &z_a[i],
                &pre_a[i],
                &batch[i].anchor_raw,
                big_d,
            );
            accumulate_through_normalization(
                g,
                &terms.grad_positive,
                &z_p[i],
                &pre_p[i],
                &batch[i].positive_raw,
                big_d,
            );
        }
    }

    let inv_b = 1.0 / b as f64;
    total_loss *= inv_b;
    if let Some(g) = grad.as_mut() {
        for v in g.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok((total_loss, grad))
}

/// Adds `((I - z z^T) g / |u|) x^T` into the flattened weight gradient.
fn accumulate_through_normalization(
    grad: &mut [f64],
    g_z: &[f64],
    z: &UnitVector,
    pre: &[f64],
    x: &[f64],
    ambient_dim: usize,
) {
    let u_norm = crate::geometry::dot(pre, pre).sqrt();
    let radial: f64 = g_z.iter().zip(z.as_slice()).map(|(g, zi)| g * zi).sum();
    for (r, (g, zi)) in g_z.iter().zip(z.as_slice()).enumerate() {
        let ju = (g - radial * zi) / u_norm;
        if ju == 0.0 {
            continue;
        }
        let row = &mut grad[r * ambient_dim..(r + 1) * ambient_dim];
        for (gw, xi) in row.iter_mut().zip(x) {
            *gw += ju * xi;
        }
    }
}
