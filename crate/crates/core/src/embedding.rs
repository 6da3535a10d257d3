//! Geometry on the embedding hypersphere, triplet hinge losses and identity
//! centroids.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};
use crate::Label;

/// Norms below this are treated as a degenerate (zero) encoder output.
pub const ZERO_NORM: f64 = 1e-12;

/// Margin used for every loss term unless overridden.
pub const DEFAULT_MARGIN: f64 = 0.2;

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }
}

impl<T> Deref for EmbeddingVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> AsRef<[T]> for EmbeddingVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Sample modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

/// Index triple into a single list of embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self { anchor, positive, negative }
    }
}

pub type TripletSet = Vec<Triplet>;

/// Sample reference tagged with the modality table it indexes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tagged {
    pub modality: Modality,
    pub index: usize,
}

impl Tagged {
    pub fn audio(index: usize) -> Self {
        Self { modality: Modality::Audio, index }
    }

    pub fn visual(index: usize) -> Self {
        Self { modality: Modality::Visual, index }
    }
}

/// Triplet whose members may come from different modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrossmodalTriplet {
    pub anchor: Tagged,
    pub positive: Tagged,
    pub negative: Tagged,
}

impl CrossmodalTriplet {
    pub fn modalities(&self) -> (Modality, Modality, Modality) {
        (self.anchor.modality, self.positive.modality, self.negative.modality)
    }
}

/// Plain (not renormalized) mean of one identity's source embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCentroid<T> {
    pub identity: Label,
    pub mean: Vec<T>,
}

/// Margins and transfer weight of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    /// Margin of the primary within-modality loss.
    pub margin: T,
    /// Margin of the transfer term; defaults to `margin`.
    pub transfer_margin: T,
    /// Weight of the transfer term.
    pub lambda: T,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(margin: T, lambda: T) -> Result<Self> {
        Self { margin, transfer_margin: margin, lambda }.validated()
    }

    pub fn with_transfer_margin(mut self, margin: T) -> Result<Self> {
        self.transfer_margin = margin;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let check = |key: &'static str, v: T| {
            if v.is_finite() && v >= T::zero() {
                Ok(())
            } else {
                Err(Error::InvalidConfig { key, reason: format!("must be finite and >= 0, got {v}") })
            }
        };
        check("margin", self.margin)?;
        check("transfer_margin", self.transfer_margin)?;
        check("lambda", self.lambda)?;
        Ok(self)
    }
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        let margin = T::lit(DEFAULT_MARGIN);
        Self { margin, transfer_margin: margin, lambda: T::one() }
    }
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Projects `v` onto the unit hypersphere.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<EmbeddingVector<T>> {
    let n = norm(v);
    if !(n >= T::lit(ZERO_NORM)) {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector(v.iter().map(|&x| x / n).collect()))
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, found: b })
    }
}

/// Euclidean distance between two vectors of equal dimension.
pub fn pairwise_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(squared_distance(a, b).sqrt())
}

/// `max(0, d(a, p) - d(a, n) + margin)`.
pub fn triplet_hinge<T: Scalar>(anchor: &[T], positive: &[T], negative: &[T], margin: T) -> Result<T> {
    let d_ap = pairwise_distance(anchor, positive)?;
    let d_an = pairwise_distance(anchor, negative)?;
    Ok(hinge(d_ap, d_an, margin))
}

#[inline]
pub(crate) fn hinge<T: Scalar>(d_ap: T, d_an: T, margin: T) -> T {
    (d_ap - d_an + margin).max(T::zero())
}

fn lookup<T, V: AsRef<[T]>>(table: &[V], index: usize) -> Result<&[T]> {
    table
        .get(index)
        .map(AsRef::as_ref)
        .ok_or(Error::IndexOutOfRange { index, len: table.len() })
}

/// Mean hinge loss over a triplet set; zero for an empty set.
pub fn mean_triplet_loss<T: Scalar, V: AsRef<[T]>>(embeddings: &[V], triplets: &[Triplet], margin: T) -> Result<T> {
    if triplets.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for t in triplets {
        total = total
            + triplet_hinge(
                lookup(embeddings, t.anchor)?,
                lookup(embeddings, t.positive)?,
                lookup(embeddings, t.negative)?,
                margin,
            )?;
    }
    Ok(total / T::from_count(triplets.len()))
}

/// Mean hinge loss over crossmodal triplets, each member read from the table
/// of its own modality.
pub fn mean_crossmodal_loss<T: Scalar, V: AsRef<[T]>, W: AsRef<[T]>>(
    audio: &[V],
    visual: &[W],
    triplets: &[CrossmodalTriplet],
    margin: T,
) -> Result<T> {
    if triplets.is_empty() {
        return Ok(T::zero());
    }
    let get = |tag: Tagged| match tag.modality {
        Modality::Audio => lookup(audio, tag.index),
        Modality::Visual => lookup(visual, tag.index),
    };
    let mut total = T::zero();
    for t in triplets {
        total = total + triplet_hinge(get(t.anchor)?, get(t.positive)?, get(t.negative)?, margin)?;
    }
    Ok(total / T::from_count(triplets.len()))
}

/// `primary + lambda * transfer`.
#[inline]
pub fn combined_loss<T: Scalar>(primary: T, transfer: T, lambda: T) -> T {
    primary + lambda * transfer
}

/// Component-wise mean of one identity's embeddings.
pub fn identity_centroid<T: Scalar, V: AsRef<[T]>>(identity: Label, embeddings: &[V]) -> Result<IdentityCentroid<T>> {
    let first = embeddings.first().ok_or(Error::EmptyIdentity)?.as_ref();
    let mut mean = vec![T::zero(); first.len()];
    for e in embeddings {
        let e = e.as_ref();
        check_dims(mean.len(), e.len())?;
        for (m, &x) in mean.iter_mut().zip(e) {
            *m = *m + x;
        }
    }
    let n = T::from_count(embeddings.len());
    mean.iter_mut().for_each(|m| *m = *m / n);
    Ok(IdentityCentroid { identity, mean })
}

/// Centroids for every identity in `labels`, ordered by label.
///
/// With `renormalize` set, each mean is projected back onto the hypersphere.
pub fn identity_centroids<T: Scalar, V: AsRef<[T]>>(
    embeddings: &[V],
    labels: &[Label],
    renormalize: bool,
) -> Result<Vec<IdentityCentroid<T>>> {
    check_dims(embeddings.len(), labels.len())?;
    let mut groups: std::collections::BTreeMap<Label, Vec<&[T]>> = Default::default();
    for (e, &y) in embeddings.iter().zip(labels) {
        groups.entry(y).or_default().push(e.as_ref());
    }
    groups
        .into_iter()
        .map(|(y, members)| {
            let mut c = identity_centroid(y, &members)?;
            if renormalize {
                c.mean = l2_normalize(&c.mean)?.into_inner();
            }
            Ok(c)
        })
        .collect()
}
