use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

/// One merge. Leaves carry ids `0..n`; the cluster created by the `k`-th
/// merge gets id `n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent<T> {
    /// Smaller of the two merged ids.
    pub a: usize,
    pub b: usize,
    /// Euclidean distance between the two cluster means.
    pub distance: T,
    pub merged: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeTrace<T> {
    pub leaves: usize,
    pub merges: Vec<MergeEvent<T>>,
}

impl<T: Scalar> MergeTrace<T> {
    /// Flat cluster index (`0..num_clusters`, in order of first leaf) of
    /// every leaf after merging down to `num_clusters` clusters.
    pub fn cut(&self, num_clusters: usize) -> Vec<usize> {
        let num_clusters = num_clusters.clamp(1, self.leaves.max(1));
        let steps = self.leaves - num_clusters;
        // union-find over creation ids
        let mut parent: Vec<usize> = (0..self.leaves + steps).collect();
        for m in &self.merges[..steps] {
            parent[m.a] = m.merged;
            parent[m.b] = m.merged;
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut relabel = std::collections::HashMap::new();
        (0..self.leaves)
            .map(|leaf| {
                let r = root(leaf);
                let next = relabel.len();
                *relabel.entry(r).or_insert(next)
            })
            .collect()
    }
}

/// Centroid-linkage agglomerative clustering: repeatedly merges the two
/// clusters whose means are closest. Ties go to the lexicographically
/// smallest pair of creation ids.
pub fn agglomerative<T: Scalar, V: AsRef<[T]>>(points: &[V]) -> Result<MergeTrace<T>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let dim = points[0].as_ref().len();
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.as_ref().len() });
    }

    let total = 2 * n - 1;
    let mut means: Vec<Vec<T>> = points.iter().map(|p| p.as_ref().to_vec()).collect();
    let mut sizes = vec![1usize; n];
    // active ids, always ascending since new ids are the largest so far
    let mut active: Vec<usize> = (0..n).collect();
    // squared distances, row-major over creation ids
    let mut dist = vec![T::zero(); total * total];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&means[i], &means[j]);
            dist[i * total + j] = d;
            dist[j * total + i] = d;
        }
    }

    let mut merges = Vec::with_capacity(n - 1);
    while active.len() > 1 {
        let mut best: Option<(usize, usize, T)> = None;
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let d = dist[i * total + j];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, d) = best.expect("two active clusters");
        let new_id = means.len();
        let (si, sj) = (sizes[i], sizes[j]);
        let size = si + sj;
        let (wi, wj) = (T::from_count(si), T::from_count(sj));
        let denom = T::from_count(size);
        let mean: Vec<T> = means[i].iter().zip(&means[j]).map(|(&a, &b)| (a * wi + b * wj) / denom).collect();
        active.retain(|&c| c != i && c != j);
        for &c in &active {
            let dc = squared_distance(&means[c], &mean);
            dist[c * total + new_id] = dc;
            dist[new_id * total + c] = dc;
        }
        active.push(new_id);
        means.push(mean);
        sizes.push(size);
        merges.push(MergeEvent { a: i, b: j, distance: d.sqrt(), merged: new_id, size });
    }
    Ok(MergeTrace { leaves: n, merges })
}
