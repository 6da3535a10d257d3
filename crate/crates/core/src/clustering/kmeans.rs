use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mining::ClusterMapping;
use crate::scalar::{squared_distance, Scalar};
use crate::Label;

pub const RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub centers: Vec<Vec<T>>,
    /// Cluster index of every input point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub inertia: T,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<T>,
}

/// Nearest center per point (ties go to the lower center index) and the
/// resulting inertia, plus each point's squared distance.
fn assign<T: Scalar, V: AsRef<[T]>>(points: &[V], centers: &[Vec<T>]) -> (Vec<usize>, Vec<T>, T) {
    let mut assignment = Vec::with_capacity(points.len());
    let mut costs = Vec::with_capacity(points.len());
    for p in points {
        let mut best = (0, T::infinity());
        for (c, center) in centers.iter().enumerate() {
            let d = squared_distance(p.as_ref(), center);
            if d < best.1 {
                best = (c, d);
            }
        }
        assignment.push(best.0);
        costs.push(best.1);
    }
    let inertia = costs.iter().copied().sum();
    (assignment, costs, inertia)
}

fn plus_plus<T: Scalar, V: AsRef<[T]>>(points: &[V], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].as_ref().to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p.as_ref(), &centers[0]).as_f64()).collect();
    while centers.len() < k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..points.len()),
        };
        let center = points[pick].as_ref().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &center).as_f64());
        }
        centers.push(center);
    }
    centers
}

fn lloyd<T: Scalar, V: AsRef<[T]>>(points: &[V], mut centers: Vec<Vec<T>>) -> KMeansResult<T> {
    let dim = centers[0].len();
    let (mut assignment, mut costs, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![T::zero(); dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, &x) in sums[c].iter_mut().zip(p.as_ref()) {
                *s = *s + x;
            }
        }
        for (c, (sum, &n)) in sums.into_iter().zip(&counts).enumerate() {
            if n > 0 {
                let n = T::from_count(n);
                centers[c] = sum.into_iter().map(|s| s / n).collect();
            } else {
                // empty cluster: move it onto the worst-served point
                let far = (0..points.len())
                    .fold(0, |best, i| if costs[i] > costs[best] { i } else { best });
                centers[c] = points[far].as_ref().to_vec();
                costs[far] = T::zero();
            }
        }
        let (next, next_costs, next_inertia) = assign(points, &centers);
        debug_assert!(
            next_inertia <= inertia + T::lit(1e-9) * (T::one() + inertia.abs()),
            "k-means inertia increased: {inertia} -> {next_inertia}"
        );
        history.push(next_inertia);
        let converged = next == assignment;
        assignment = next;
        costs = next_costs;
        inertia = next_inertia;
        if converged {
            break;
        }
    }
    KMeansResult { centers, assignment, inertia, inertia_history: history }
}

/// K-Means with k-means++ seeding, keeping the best of [`RESTARTS`] runs by
/// inertia. Deterministic given `seed`.
pub fn kmeans<T: Scalar, V: AsRef<[T]>>(points: &[V], k: usize, seed: u64) -> Result<KMeansResult<T>> {
    if k == 0 {
        return Err(Error::InvalidConfig { key: "clusters", reason: "must be at least 1".into() });
    }
    if points.len() < k {
        return Err(Error::TooFewPoints { needed: k, got: points.len() });
    }
    let dim = points[0].as_ref().len();
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.as_ref().len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Identity-to-cluster map from a K-Means run over per-identity points;
/// `identities[i]` names the identity of point `i`.
pub fn cluster_mapping<T>(result: &KMeansResult<T>, identities: &[Label]) -> ClusterMapping {
    ClusterMapping {
        num_clusters: result.centers.len(),
        map: identities.iter().copied().zip(result.assignment.iter().copied()).collect(),
    }
}
