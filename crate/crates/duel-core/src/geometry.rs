//! Hypersphere primitives and equiangular frame construction.
//!
//! Representations live on the unit sphere in `d` dimensions. The frame
//! builder places one unit vector per class so that every distinct pair has
//! the same inner product `gamma`; class clusters used by the analytic
//! gradient checks and the simulator replicate these vertices.

use crate::error::{Error, Result};

/// Norm tolerance enforced after construction or renormalization.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// A point on the unit hypersphere. Construction goes through [`normalize`],
/// so the Euclidean norm is 1 within [`UNIT_NORM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    /// Inner product. Dimensions are the caller's responsibility here;
    /// public operations validate them and return shape errors.
    pub fn dot(&self, other: &UnitVector) -> f64 {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        dot(&self.coords, &other.coords)
    }

    /// Antipodal point.
    pub fn negated(&self) -> UnitVector {
        UnitVector {
            coords: self.coords.iter().map(|x| -x).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Projects `v` onto the unit sphere.
///
/// Zero-norm input is rejected rather than silently renormalized so that
/// degenerate encoders fail loudly. Idempotent on unit vectors.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "unit vectors need dimension >= 2, got {}",
            v.len()
        )));
    }
    let n = norm(v);
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(UnitVector {
        coords: v.iter().map(|x| x / n).collect(),
    })
}

/// `|C|` unit vectors with constant pairwise inner product `off_diagonal`.
///
/// Two conventions show up in practice: `-1/(|C|-1)` makes the vertices sum
/// to zero (the regular simplex), while `-1/|C|` leaves a residual mean with
/// squared norm 1. Both are constructible here; callers pick.
#[derive(Debug, Clone)]
pub struct EtfFrame {
    pub class_vectors: Vec<UnitVector>,
    pub off_diagonal: f64,
    pub num_classes: usize,
}

impl EtfFrame {
    /// Sum of all class vectors (zero at `off_diagonal = -1/(|C|-1)`).
    pub fn vertex_sum(&self) -> Vec<f64> {
        let d = self.class_vectors[0].dim();
        let mut s = vec![0.0; d];
        for v in &self.class_vectors {
            for (si, xi) in s.iter_mut().zip(v.as_slice()) {
                *si += xi;
            }
        }
        s
    }

    /// The zero-sum off-diagonal value for `num_classes` vectors.
    pub fn simplex_gamma(num_classes: usize) -> f64 {
        -1.0 / (num_classes as f64 - 1.0)
    }
}

/// Builds an equiangular frame by factoring the Gram matrix
/// `G = (1-gamma) I + gamma J`.
///
/// `G` has eigenvalue `1-gamma` with multiplicity `|C|-1` and
/// `1+(|C|-1) gamma` on the all-ones direction, so a symmetric square root
/// is `a I + b J` with `a = sqrt(1-gamma)` and
/// `b = (sqrt(1+(|C|-1) gamma) - a)/|C|`. Rows are the frame vectors,
/// zero-padded to `dim` and renormalized.
pub fn make_etf(num_classes: usize, dim: usize, off_diagonal: f64) -> Result<EtfFrame> {
    let c = num_classes;
    if c < 2 {
        return Err(Error::InvalidParameter(format!(
            "frame needs at least 2 classes, got {c}"
        )));
    }
    if dim < c {
        return Err(Error::FrameInfeasible {
            num_classes: c,
            dim,
            off_diagonal,
            reason: format!("need dim >= num_classes to embed {c} equiangular vectors"),
        });
    }
    let gamma = off_diagonal;
    let ones_eigenvalue = 1.0 + (c as f64 - 1.0) * gamma;
    // Pre-band admits gamma = -1/(|C|-1) up to 1e-12 of rounding; below that
    // the Gram matrix has a negative eigenvalue and no real factorization.
    if gamma >= 1.0 || ones_eigenvalue < -1e-12 * (c as f64) {
        return Err(Error::FrameInfeasible {
            num_classes: c,
            dim,
            off_diagonal,
            reason: format!(
                "Gram eigenvalue 1+(|C|-1)*gamma = {ones_eigenvalue:.6e} violates the \
                 positive-semidefinite condition (requires 0 <= and gamma < 1)"
            ),
        });
    }

    let a = (1.0 - gamma).sqrt();
    // At gamma = -1/(|C|-1) the ones-eigenvalue is zero in exact arithmetic
    // but rounds to +-1e-16; sqrt would inflate that to 1e-8 and break the
    // zero-sum property, so snap it.
    let snapped = if ones_eigenvalue.abs() <= 1e-12 * c as f64 {
        0.0
    } else {
        ones_eigenvalue.max(0.0)
    };
    let b = (snapped.sqrt() - a) / c as f64;

    let mut class_vectors = Vec::with_capacity(c);
    for i in 0..c {
        let mut row = vec![b; c];
        row[i] = a + b;
        row.resize(dim, 0.0);
        class_vectors.push(normalize(&row)?);
    }
    Ok(EtfFrame {
        class_vectors,
        off_diagonal: gamma,
        num_classes: c,
    })
}

/// Arithmetic mean of inner products over all ordered pairs (a, b).
///
/// With `exclude_self` the groups must be the same collection (by value) and
/// the diagonal pairs are dropped; this is the intra-class average. Without
/// it every ordered pair counts, as for inter-class averages.
pub fn mean_pairwise_similarity(
    group_a: &[UnitVector],
    group_b: &[UnitVector],
    exclude_self: bool,
) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyInput("mean_pairwise_similarity needs nonempty groups"));
    }
    if exclude_self && (group_a.len() != group_b.len() || group_a.len() < 2) {
        return Err(Error::InvalidParameter(
            "exclude_self requires group_a = group_b with at least 2 elements".into(),
        ));
    }
    let d = group_a[0].dim();
    for v in group_a.iter().chain(group_b) {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.dim(),
            });
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, va) in group_a.iter().enumerate() {
        for (j, vb) in group_b.iter().enumerate() {
            if exclude_self && i == j {
                continue;
            }
            sum += va.dot(vb);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
