//! K-Means over identity centroids and centroid-linkage agglomerative
//! clustering over embeddings.

mod agglomerative;
mod kmeans;

pub use agglomerative::{agglomerative, MergeEvent, MergeTrace};
pub use kmeans::{cluster_mapping, kmeans, KMeansResult, MAX_ITERATIONS, RESTARTS};
