//! Triplet-set construction: per-batch within-modality mining and the three
//! crossmodal transfer sets (target embedding, relative distance, clustering
//! structure).
//!
//! Every constructor is a deterministic enumeration returning triples in
//! ascending order, so outputs can be compared directly against exhaustive
//! enumeration.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{CrossmodalTriplet, IdentityCentroid, Modality, Tagged, Triplet, TripletSet};
use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};
use crate::Label;

/// Modality patterns allowed in target-transfer triplets: all eight except
/// `(V,V,V)`, `(V,V,A)` and `(A,A,A)`.
pub const VALID_MODALITY_COMBOS: [(Modality, Modality, Modality); 5] = {
    use Modality::{Audio as A, Visual as V};
    [(A, A, V), (A, V, A), (A, V, V), (V, A, A), (V, A, V)]
};

pub fn is_valid_combo(combo: (Modality, Modality, Modality)) -> bool {
    VALID_MODALITY_COMBOS.contains(&combo)
}

/// Default per-set, per-epoch cap on transfer triplets.
pub const DEFAULT_TRANSFER_CAP: usize = 10_000;

/// Which negatives within-modality mining keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningPolicy {
    /// Keep negatives with `d(a,n) < d(a,p)`.
    pub use_hard: bool,
    /// Keep negatives with `d(a,p) <= d(a,n) < d(a,p) + margin`.
    pub use_semihard: bool,
    pub cap: Option<usize>,
    pub seed: u64,
}

impl MiningPolicy {
    pub fn new(use_hard: bool, use_semihard: bool, cap: Option<usize>, seed: u64) -> Result<Self> {
        if !use_hard && !use_semihard {
            return Err(Error::InvalidConfig {
                key: "mining",
                reason: "at least one of hard / semi-hard negatives must be enabled".into(),
            });
        }
        if cap == Some(0) {
            return Err(Error::InvalidConfig { key: "mining_cap", reason: "must be positive".into() });
        }
        Ok(Self { use_hard, use_semihard, cap, seed })
    }
}

impl Default for MiningPolicy {
    fn default() -> Self {
        Self { use_hard: true, use_semihard: true, cap: None, seed: 0 }
    }
}

/// Identity to cluster-id assignment (ids in `0..num_clusters`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMapping {
    pub num_clusters: usize,
    pub map: BTreeMap<Label, usize>,
}

impl ClusterMapping {
    pub fn cluster_of(&self, identity: Label) -> Result<usize> {
        self.map.get(&identity).copied().ok_or(Error::UnmappedIdentity(identity))
    }
}

/// Membership rule for clustering-structure triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StructureRule {
    /// Positive: another identity of the anchor's cluster. Negative: any
    /// identity of a different cluster.
    #[default]
    SameClusterPositive,
    /// Positive and negative both outside the anchor's cluster.
    Literal,
}

/// Full pairwise distance matrix, row-major.
struct DistanceTable<T> {
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> DistanceTable<T> {
    fn between<V: AsRef<[T]>, W: AsRef<[T]>>(rows: &[V], cols: &[W]) -> Result<Self> {
        let dim = rows.first().map(|v| v.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            let r = r.as_ref();
            for c in cols {
                let c = c.as_ref();
                if let Some(d) = dim {
                    if r.len() != d || c.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, found: r.len().max(c.len()) });
                    }
                }
                values.push(squared_distance(r, c).sqrt());
            }
        }
        Ok(Self { cols: cols.len(), values })
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }
}

fn check_labels(embeddings: usize, labels: usize) -> Result<()> {
    if embeddings == labels {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: embeddings, found: labels })
    }
}

/// Mines hard and/or semi-hard triplets inside one mini-batch.
pub fn mine_within_modality<T: Scalar, V: AsRef<[T]>>(
    embeddings: &[V],
    labels: &[Label],
    margin: T,
    policy: &MiningPolicy,
) -> Result<TripletSet> {
    check_labels(embeddings.len(), labels.len())?;
    let n = labels.len();
    let has_pair = (0..n).any(|a| (0..n).any(|p| p != a && labels[p] == labels[a]));
    let has_negative = labels.iter().any(|&y| y != labels[0]);
    if !has_pair || !has_negative {
        return Err(Error::DegenerateBatch);
    }
    let dist = DistanceTable::between(embeddings, embeddings)?;
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = dist.get(a, p);
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                let d_an = dist.get(a, neg);
                let hard = d_an < d_ap;
                let semihard = d_ap <= d_an && d_an < d_ap + margin;
                if (policy.use_hard && hard) || (policy.use_semihard && semihard) {
                    out.push(Triplet::new(a, p, neg));
                }
            }
        }
    }
    Ok(match policy.cap {
        Some(cap) => cap_triplets(out, cap, policy.seed),
        None => out,
    })
}

/// Crossmodal triplets violating the margin, over the valid modality patterns.
///
/// Audio and visual indices refer to positions in their own tables; labels
/// share one identity namespace.
pub fn build_target_set<T: Scalar, V: AsRef<[T]>, W: AsRef<[T]>>(
    audio: &[V],
    audio_labels: &[Label],
    visual: &[W],
    visual_labels: &[Label],
    margin: T,
) -> Result<Vec<CrossmodalTriplet>> {
    check_labels(audio.len(), audio_labels.len())?;
    check_labels(visual.len(), visual_labels.len())?;
    if audio.is_empty() {
        return Err(Error::EmptyModality("audio"));
    }
    if visual.is_empty() {
        return Err(Error::EmptyModality("visual"));
    }
    let aa = DistanceTable::between(audio, audio)?;
    let av = DistanceTable::between(audio, visual)?;
    let vv = DistanceTable::between(visual, visual)?;
    let dist = |x: Tagged, y: Tagged| match (x.modality, y.modality) {
        (Modality::Audio, Modality::Audio) => aa.get(x.index, y.index),
        (Modality::Audio, Modality::Visual) => av.get(x.index, y.index),
        (Modality::Visual, Modality::Audio) => av.get(y.index, x.index),
        (Modality::Visual, Modality::Visual) => vv.get(x.index, y.index),
    };
    let table = |m: Modality| -> (usize, &[Label]) {
        match m {
            Modality::Audio => (audio.len(), audio_labels),
            Modality::Visual => (visual.len(), visual_labels),
        }
    };

    let mut out = Vec::new();
    for &(ma, mp, mn) in &VALID_MODALITY_COMBOS {
        let (na, la) = table(ma);
        let (np, lp) = table(mp);
        let (nn, ln) = table(mn);
        for ia in 0..na {
            let anchor = Tagged { modality: ma, index: ia };
            for ip in 0..np {
                let positive = Tagged { modality: mp, index: ip };
                if lp[ip] != la[ia] || positive == anchor {
                    continue;
                }
                let d_ap = dist(anchor, positive);
                for ineg in 0..nn {
                    if ln[ineg] == la[ia] {
                        continue;
                    }
                    let negative = Tagged { modality: mn, index: ineg };
                    if d_ap + margin > dist(anchor, negative) {
                        out.push(CrossmodalTriplet { anchor, positive, negative });
                    }
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Audio triplets across three identities whose source-space centroid
/// ordering `d(M_a, M_p) < d(M_a, M_n)` is violated by margin in audio space.
pub fn build_relative_set<T: Scalar, V: AsRef<[T]>>(
    audio: &[V],
    labels: &[Label],
    centroids: &[IdentityCentroid<T>],
    margin: T,
) -> Result<TripletSet> {
    check_labels(audio.len(), labels.len())?;
    let mut ids: Vec<Label> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let slot: BTreeMap<Label, usize> = ids.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let by_identity: BTreeMap<Label, &[T]> = centroids.iter().map(|c| (c.identity, c.mean.as_slice())).collect();
    let means = ids
        .iter()
        .map(|&y| by_identity.get(&y).copied().ok_or(Error::MissingCentroid(y)))
        .collect::<Result<Vec<_>>>()?;
    let ident = DistanceTable::between(&means, &means)?;
    let dist = DistanceTable::between(audio, audio)?;
    let cls: Vec<usize> = labels.iter().map(|y| slot[y]).collect();

    let n = audio.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if cls[p] == cls[a] {
                continue;
            }
            let source_ap = ident.get(cls[a], cls[p]);
            let d_ap = dist.get(a, p);
            for neg in 0..n {
                if cls[neg] == cls[a] || !(source_ap < ident.get(cls[a], cls[neg])) {
                    continue;
                }
                if d_ap + margin > dist.get(a, neg) {
                    out.push(Triplet::new(a, p, neg));
                }
            }
        }
    }
    Ok(out)
}

/// Audio triplets labelled by the source-space cluster of each identity.
pub fn build_structure_set<T: Scalar, V: AsRef<[T]>>(
    audio: &[V],
    labels: &[Label],
    mapping: &ClusterMapping,
    margin: T,
    rule: StructureRule,
) -> Result<TripletSet> {
    check_labels(audio.len(), labels.len())?;
    let cluster = labels.iter().map(|&y| mapping.cluster_of(y)).collect::<Result<Vec<_>>>()?;
    let dist = DistanceTable::between(audio, audio)?;
    let n = audio.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            let positive_ok = match rule {
                StructureRule::SameClusterPositive => cluster[p] == cluster[a] && labels[p] != labels[a],
                StructureRule::Literal => cluster[p] != cluster[a],
            };
            if !positive_ok {
                continue;
            }
            let d_ap = dist.get(a, p);
            for neg in 0..n {
                if cluster[neg] == cluster[a] {
                    continue;
                }
                if d_ap + margin > dist.get(a, neg) {
                    out.push(Triplet::new(a, p, neg));
                }
            }
        }
    }
    Ok(out)
}

/// Uniformly subsamples `items` down to `cap` elements, keeping their
/// relative order. Returns the input untouched when it already fits.
pub fn cap_triplets<X>(items: Vec<X>, cap: usize, seed: u64) -> Vec<X> {
    assert!(cap >= 1, "cap must be positive");
    if items.len() <= cap {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, items.len(), cap).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, x)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(x)
            } else {
                None
            }
        })
        .collect()
}
