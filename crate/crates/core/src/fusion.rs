//! View sets, the primary-weighted coupling scheme and fused embeddings.
//!
//! A listing contributes one [`ViewSet`] per modality. Index 0 is always the
//! seller-curated primary view (primary image or title); the rest are
//! auxiliary views. Fusion collapses a view set into one vector with simplex
//! weights, so that only a single vector per modality needs to be stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::transport::SimplexWeights;

/// Norm below which a vector is treated as zero when renormalizing.
pub const ZERO_NORM: f64 = 1e-12;

/// A finite vector in the shared latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Builds the unit vector `e_axis` of length `dim`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut values = vec![T::zero(); dim];
        values[axis] = T::one();
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        scalar::norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_dim(self.dim(), other.dim())?;
        Ok(scalar::dot(&self.values, &other.values))
    }

    /// True when the Euclidean norm is within `tol` of one.
    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm().as_f64() - 1.0).abs() <= tol
    }

    pub fn normalized(&self) -> Result<Self> {
        renormalize(self.values.clone()).map(|values| Self { values })
    }
}

impl<T> AsRef<[T]> for Embedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
}

/// Ordered views of one modality of one listing; element 0 is the primary.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet<T> {
    views: Vec<Embedding<T>>,
    modality: Modality,
}

impl<T: Scalar> ViewSet<T> {
    pub fn new(views: Vec<Embedding<T>>, modality: Modality) -> Result<Self> {
        let first = views.first().ok_or(Error::Empty)?;
        let dim = first.dim();
        for v in &views[1..] {
            check_dim(dim, v.dim())?;
        }
        Ok(Self { views, modality })
    }

    pub fn from_rows(rows: Vec<Vec<T>>, modality: Modality) -> Result<Self> {
        let views = rows.into_iter().map(Embedding::new).collect::<Result<Vec<_>>>()?;
        Self::new(views, modality)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.views[0].dim()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn primary(&self) -> &Embedding<T> {
        &self.views[0]
    }

    pub fn auxiliaries(&self) -> &[Embedding<T>] {
        &self.views[1..]
    }

    pub fn views(&self) -> &[Embedding<T>] {
        &self.views
    }
}

/// Fixed primary-view weight `alpha` in the open interval (0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightScheme<T = f64> {
    alpha: T,
}

impl<T: Scalar> WeightScheme<T> {
    pub const DEFAULT_ALPHA: f64 = 0.6;

    pub fn new(alpha: T) -> Result<Self> {
        if alpha > T::zero() && alpha < T::one() {
            Ok(Self { alpha })
        } else {
            Err(Error::ConfigInvalid(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }
}

impl<T: Scalar> Default for WeightScheme<T> {
    fn default() -> Self {
        Self { alpha: T::lit(Self::DEFAULT_ALPHA) }
    }
}

/// Weights `[alpha, (1-alpha)/(n-1), ...]` for a set of `view_count` views.
///
/// A single-view set puts all of its mass on the primary.
pub fn design_weights<T: Scalar>(view_count: usize, scheme: WeightScheme<T>) -> Result<SimplexWeights<T>> {
    let values = match view_count {
        0 => return Err(Error::Empty),
        1 => vec![T::one()],
        n => {
            let alpha = scheme.alpha();
            let rest = (T::one() - alpha) / T::from_usize(n - 1).unwrap();
            std::iter::once(alpha).chain(std::iter::repeat_n(rest, n - 1)).collect()
        }
    };
    SimplexWeights::new(values)
}

/// Simplex-weighted sum of the views, optionally rescaled to unit length.
pub fn fuse<T: Scalar>(views: &ViewSet<T>, weights: &SimplexWeights<T>, renormalize: bool) -> Result<Embedding<T>> {
    check_dim(views.len(), weights.len())?;
    let rows: Vec<&[T]> = views.views().iter().map(Embedding::as_slice).collect();
    finish(weighted_sum(&rows, weights.as_slice()), renormalize)
}

/// Two-view fusion `alpha * primary + (1 - alpha) * auxiliary`.
///
/// Produces the same bits as [`fuse`] over `[primary, auxiliary]` with weights
/// `[alpha, 1 - alpha]`.
pub fn fuse_rolled<T: Scalar>(
    primary: &Embedding<T>,
    auxiliary: &Embedding<T>,
    scheme: WeightScheme<T>,
    renormalize: bool,
) -> Result<Embedding<T>> {
    check_dim(primary.dim(), auxiliary.dim())?;
    let alpha = scheme.alpha();
    let sum = weighted_sum(&[primary.as_slice(), auxiliary.as_slice()], &[alpha, T::one() - alpha]);
    finish(sum, renormalize)
}

/// Element-wise mean of the text and image embeddings of a listing.
pub fn fuse_multimodal<T: Scalar>(
    text_fused: &Embedding<T>,
    image_fused: &Embedding<T>,
    renormalize: bool,
) -> Result<Embedding<T>> {
    check_dim(text_fused.dim(), image_fused.dim())?;
    let half = T::lit(0.5);
    let mean = text_fused
        .as_slice()
        .iter()
        .zip(image_fused.as_slice())
        .map(|(&t, &i)| (t + i) * half)
        .collect();
    finish(mean, renormalize)
}

fn weighted_sum<T: Scalar>(rows: &[&[T]], weights: &[T]) -> Vec<T> {
    let mut acc = vec![T::zero(); rows[0].len()];
    for (row, &w) in rows.iter().zip(weights) {
        for (a, &x) in acc.iter_mut().zip(row.iter()) {
            *a += w * x;
        }
    }
    acc
}

fn finish<T: Scalar>(values: Vec<T>, renormalize: bool) -> Result<Embedding<T>> {
    let values = if renormalize { self::renormalize(values)? } else { values };
    Embedding::new(values)
}

pub(crate) fn renormalize<T: Scalar>(mut values: Vec<T>) -> Result<Vec<T>> {
    let n = scalar::norm(&values);
    if !(n.as_f64() >= ZERO_NORM) {
        return Err(Error::ZeroNorm { norm: n.as_f64() });
    }
    for v in &mut values {
        *v /= n;
    }
    Ok(values)
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
