//! Verification (EER, ROC AUC), clustering quality (WCP, WCE, OCI-k) and
//! retrieval (Prec@K) metrics.

use std::collections::{BTreeMap, HashMap};

use crate::clustering::MergeTrace;
use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

/// Distances of same-identity pairs and of different-identity pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScorePairs<T> {
    pub positive: Vec<T>,
    pub negative: Vec<T>,
}

impl<T: Scalar> ScorePairs<T> {
    /// All unordered pairs of `embeddings`, split by label equality.
    pub fn all_pairs<V: AsRef<[T]>, L: PartialEq>(embeddings: &[V], labels: &[L]) -> Self {
        let mut pairs = Self { positive: Vec::new(), negative: Vec::new() };
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                let d = squared_distance(embeddings[i].as_ref(), embeddings[j].as_ref()).sqrt();
                if labels[i] == labels[j] {
                    pairs.positive.push(d);
                } else {
                    pairs.negative.push(d);
                }
            }
        }
        pairs
    }

    fn check(&self) -> Result<()> {
        if self.positive.is_empty() || self.negative.is_empty() {
            Err(Error::EmptyScores)
        } else {
            Ok(())
        }
    }
}

fn sorted<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Crossing of two error curves sampled at consecutive thresholds, by linear
/// interpolation between the last non-negative and first non-positive gap.
pub(crate) fn interpolate_crossing<T: Scalar>(prev: (T, T), next: (T, T)) -> T {
    let gap_prev = prev.0 - prev.1;
    let gap_next = next.0 - next.1;
    if gap_next == T::zero() {
        return next.0;
    }
    let s = gap_prev / (gap_prev - gap_next);
    prev.0 + s * (next.0 - prev.0)
}

/// Equal error rate of a distance-based verifier that accepts a pair when its
/// distance is below the threshold.
///
/// Thresholds sweep the pooled distances plus `+inf`; at threshold `t`,
/// FNR is the fraction of positive distances `>= t` and FPR the fraction of
/// negative distances `< t`.
pub fn eer<T: Scalar>(scores: &ScorePairs<T>) -> Result<T> {
    scores.check()?;
    let pos = sorted(&scores.positive);
    let neg = sorted(&scores.negative);
    let mut thresholds: Vec<T> = pos.iter().chain(&neg).copied().collect();
    thresholds = sorted(&thresholds);
    thresholds.dedup();
    let (np, nn) = (T::from_count(pos.len()), T::from_count(neg.len()));

    let (mut ip, mut ineg) = (0usize, 0usize);
    let mut prev: Option<(T, T)> = None;
    for t in thresholds.into_iter().map(Some).chain(std::iter::once(None)) {
        let point = match t {
            Some(t) => {
                while ip < pos.len() && pos[ip] < t {
                    ip += 1;
                }
                while ineg < neg.len() && neg[ineg] < t {
                    ineg += 1;
                }
                (T::from_count(pos.len() - ip) / np, T::from_count(ineg) / nn)
            }
            None => (T::zero(), T::one()),
        };
        if point.0 <= point.1 {
            return Ok(match prev {
                Some(prev) => interpolate_crossing(prev, point),
                None => point.0,
            });
        }
        prev = Some(point);
    }
    unreachable!("the +inf threshold always yields FNR <= FPR")
}

/// Probability that a random positive distance is smaller than a random
/// negative one, counting ties as one half.
pub fn roc_auc<T: Scalar>(scores: &ScorePairs<T>) -> Result<T> {
    scores.check()?;
    let pos = sorted(&scores.positive);
    let mut twice_wins: u128 = 0;
    for &n in &scores.negative {
        let below = pos.partition_point(|&p| p < n);
        let not_above = pos.partition_point(|&p| p <= n);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    let total = 2 * scores.positive.len() as u128 * scores.negative.len() as u128;
    Ok(T::lit(twice_wins as f64 / total as f64))
}

/// Clusters of ground-truth labels, one entry per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPartition<L> {
    pub clusters: Vec<Vec<L>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ClusterStats {
    size: usize,
    majority: usize,
    /// `size * entropy` in bits.
    weighted_entropy: f64,
}

fn cluster_stats<'a, L: Ord + 'a>(labels: impl IntoIterator<Item = &'a L>) -> ClusterStats {
    let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    stats_from_counts(counts.values().copied())
}

fn stats_from_counts(counts: impl Iterator<Item = usize> + Clone) -> ClusterStats {
    let size: usize = counts.clone().sum();
    let majority = counts.clone().max().unwrap_or(0);
    let n = size as f64;
    let entropy: f64 = counts
        .filter(|&c| c > 0 && c < size)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    ClusterStats { size, majority, weighted_entropy: n * entropy }
}

impl<L: Ord> LabeledPartition<L> {
    pub fn new(clusters: Vec<Vec<L>>) -> Result<Self> {
        let p = Self { clusters };
        p.stats()?;
        Ok(p)
    }

    fn stats(&self) -> Result<Vec<ClusterStats>> {
        if self.clusters.is_empty() || self.clusters.iter().any(Vec::is_empty) {
            return Err(Error::EmptyPartition);
        }
        Ok(self.clusters.iter().map(|c| cluster_stats(c)).collect())
    }

    pub fn num_segments(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

fn wcp_of(stats: &[ClusterStats]) -> f64 {
    let n: usize = stats.iter().map(|s| s.size).sum();
    stats.iter().map(|s| s.majority).sum::<usize>() as f64 / n as f64
}

fn wce_of(stats: &[ClusterStats]) -> f64 {
    let n: usize = stats.iter().map(|s| s.size).sum();
    stats.iter().map(|s| s.weighted_entropy).sum::<f64>() / n as f64
}

fn oci_of(stats: &[ClusterStats]) -> usize {
    stats.iter().map(|s| 1 + s.size - s.majority).sum()
}

/// Weighted cluster purity: `(1/N) sum_c n_c * purity_c`.
pub fn wcp<L: Ord>(partition: &LabeledPartition<L>) -> Result<f64> {
    Ok(wcp_of(&partition.stats()?))
}

/// Weighted cluster entropy (base 2): `(1/N) sum_c n_c * entropy_c`.
pub fn wce<L: Ord>(partition: &LabeledPartition<L>) -> Result<f64> {
    Ok(wce_of(&partition.stats()?))
}

/// Operator clicks: one per cluster plus one per segment outside its
/// cluster's majority identity.
pub fn oci_k<L: Ord>(partition: &LabeledPartition<L>) -> Result<usize> {
    Ok(oci_of(&partition.stats()?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub num_clusters: usize,
    pub wcp: f64,
    pub wce: f64,
    pub oci_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringCurve {
    /// From `N` singletons down to one cluster.
    pub points: Vec<CurvePoint>,
    pub min_oci_k: usize,
    /// Cluster count at the minimum; the largest count wins ties.
    pub min_oci_k_clusters: usize,
    pub oci_k_at_ideal: Option<usize>,
}

impl ClusteringCurve {
    pub fn at(&self, num_clusters: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.num_clusters == num_clusters)
    }
}

/// Replays a merge trace and scores every intermediate partition.
pub fn clustering_curve<T: Scalar, L: Ord + Clone>(
    trace: &MergeTrace<T>,
    labels: &[L],
    ideal_clusters: Option<usize>,
) -> Result<ClusteringCurve> {
    if labels.len() != trace.leaves || trace.leaves == 0 {
        return Err(Error::LabelMismatch { labels: labels.len(), leaves: trace.leaves });
    }
    let mut ids: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    let classes = ids.len();
    // per active cluster: label histogram and cached stats, keyed by creation id
    let mut hist: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut stats: BTreeMap<usize, ClusterStats> = BTreeMap::new();
    for (leaf, l) in labels.iter().enumerate() {
        let mut h = vec![0; classes];
        h[ids[l]] = 1;
        stats.insert(leaf, stats_from_counts(h.iter().copied()));
        hist.insert(leaf, h);
    }

    let snapshot = |stats: &BTreeMap<usize, ClusterStats>| {
        let s: Vec<ClusterStats> = stats.values().copied().collect();
        CurvePoint { num_clusters: s.len(), wcp: wcp_of(&s), wce: wce_of(&s), oci_k: oci_of(&s) }
    };
    let mut points = vec![snapshot(&stats)];
    for m in &trace.merges {
        let (ha, hb) = match (hist.remove(&m.a), hist.remove(&m.b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::LabelMismatch { labels: labels.len(), leaves: trace.leaves }),
        };
        stats.remove(&m.a);
        stats.remove(&m.b);
        let merged: Vec<usize> = ha.iter().zip(&hb).map(|(x, y)| x + y).collect();
        stats.insert(m.merged, stats_from_counts(merged.iter().copied()));
        hist.insert(m.merged, merged);
        points.push(snapshot(&stats));
    }

    let best = points.iter().min_by_key(|p| p.oci_k).expect("at least the singleton state");
    let oci_k_at_ideal = ideal_clusters.and_then(|k| points.iter().find(|p| p.num_clusters == k)).map(|p| p.oci_k);
    Ok(ClusteringCurve { min_oci_k: best.oci_k, min_oci_k_clusters: best.num_clusters, oci_k_at_ideal, points })
}

/// Gallery size per retrieval run: one correct item plus distractors.
pub const GALLERY_SIZE: usize = 10;

/// One retrieval run.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery<T> {
    pub query: Vec<T>,
    pub correct: Vec<T>,
    pub distractors: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalScore {
    /// 1 when the correct item ranks within the top K.
    #[default]
    HitRate,
    /// Hits divided by K.
    StrictPrecision,
}

impl<T: Scalar> RetrievalQuery<T> {
    /// Zero-based rank of the correct item; distractors at equal distance
    /// rank ahead of it.
    pub fn rank(&self) -> Result<usize> {
        if self.distractors.len() + 1 != GALLERY_SIZE {
            return Err(Error::BadGallerySize { expected: GALLERY_SIZE, found: self.distractors.len() + 1 });
        }
        let d = squared_distance(&self.query, &self.correct);
        Ok(self.distractors.iter().filter(|x| squared_distance(&self.query, x) <= d).count())
    }
}

/// Mean retrieval score at cut-off `k` over all queries.
pub fn prec_at_k<T: Scalar>(queries: &[RetrievalQuery<T>], k: usize, score: RetrievalScore) -> Result<f64> {
    if !(1..=GALLERY_SIZE).contains(&k) {
        return Err(Error::BadCutoff { k, max: GALLERY_SIZE });
    }
    if queries.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut total = 0.0;
    for q in queries {
        if q.rank()? < k {
            total += match score {
                RetrievalScore::HitRate => 1.0,
                RetrievalScore::StrictPrecision => 1.0 / k as f64,
            };
        }
    }
    Ok(total / queries.len() as f64)
}
