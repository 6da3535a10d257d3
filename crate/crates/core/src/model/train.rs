//! Mini-batch training loop with per-epoch transfer-set construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::{cluster_mapping, kmeans};
use crate::embedding::{identity_centroids, IdentityCentroid, LossConfig, Triplet};
use crate::error::{Error, Result};
use crate::mining::{
    build_relative_set, build_structure_set, build_target_set, cap_triplets, mine_within_modality, ClusterMapping,
    MiningPolicy, StructureRule, DEFAULT_TRANSFER_CAP,
};
use crate::model::{
    init_encoder, loss_and_gradients, mean_pool, rmsprop_step, EncoderParams, EncoderSpec, Objective, OptimizerState,
    TransferSet,
};
use crate::scalar::Scalar;
use crate::Label;

/// Which crossmodal regularizer is added to the primary loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum TransferKind {
    #[default]
    None,
    Target,
    Relative,
    Structure,
}

impl TransferKind {
    pub const ALL: [TransferKind; 4] = [TransferKind::None, TransferKind::Target, TransferKind::Relative, TransferKind::Structure];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferKind::None => "none",
            TransferKind::Target => "target",
            TransferKind::Relative => "relative",
            TransferKind::Structure => "structure",
        }
    }
}

impl std::fmt::Display for TransferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TransferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig { key: "transfer", reason: format!("unknown transfer kind `{s}`") })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    /// Identities per mini-batch.
    pub batch_identities: usize,
    /// Samples drawn per identity in a mini-batch.
    pub samples_per_identity: usize,
    pub loss: LossConfig<T>,
    pub learning_rate: T,
    pub transfer: TransferKind,
    /// K-Means cluster count for structure transfer.
    pub clusters: Option<usize>,
    pub mining: MiningPolicy,
    /// Upper bound on transfer triplets per epoch.
    pub transfer_cap: usize,
    pub structure_rule: StructureRule,
    /// Project identity centroids back onto the hypersphere.
    pub renormalize_centroids: bool,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            hidden_dim: EncoderSpec::DEFAULT_HIDDEN,
            embedding_dim: EncoderSpec::DEFAULT_EMBEDDING,
            epochs: 50,
            batch_identities: 8,
            samples_per_identity: 4,
            loss: LossConfig::default(),
            learning_rate: T::lit(OptimizerState::<T>::DEFAULT_LEARNING_RATE),
            transfer: TransferKind::None,
            clusters: None,
            mining: MiningPolicy::default(),
            transfer_cap: DEFAULT_TRANSFER_CAP,
            structure_rule: StructureRule::default(),
            renormalize_centroids: false,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &'static str, reason: &str| Err(Error::InvalidConfig { key, reason: reason.into() });
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.batch_identities < 2 {
            return fail("batch_identities", "must be at least 2");
        }
        if self.samples_per_identity < 2 {
            return fail("samples_per_identity", "must be at least 2");
        }
        if self.transfer_cap == 0 {
            return fail("transfer_cap", "must be positive");
        }
        if self.transfer == TransferKind::Structure && !matches!(self.clusters, Some(c) if c >= 2) {
            return fail("clusters", "structure transfer needs a cluster count of at least 2");
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return fail("embedding_dim", "layer sizes must be positive");
        }
        if !(self.learning_rate > T::zero()) {
            return fail("learning_rate", "must be positive");
        }
        Ok(())
    }
}

/// Mean-pooled target-modality training inputs with identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<Label>,
}

impl<T: Scalar> TrainSet<T> {
    /// Pools every frame sequence; all must share one frame dimension.
    pub fn from_frames<V: AsRef<[T]>>(sequences: &[Vec<V>], labels: Vec<Label>) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: sequences.len(), found: labels.len() });
        }
        let inputs = sequences.iter().map(|s| mean_pool(s)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
                return Err(Error::DimensionMismatch { expected: first.len(), found: bad.len() });
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn num_identities(&self) -> usize {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Frozen source-modality knowledge: per-sample embeddings, identity
/// centroids and (for structure transfer) the K-Means cluster mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSource<T> {
    pub embeddings: Vec<Vec<T>>,
    pub labels: Vec<Label>,
    pub centroids: Vec<IdentityCentroid<T>>,
    pub mapping: Option<ClusterMapping>,
}

impl<T: Scalar> TransferSource<T> {
    /// Computes centroids and, when `clusters` is given, clusters them.
    pub fn new(
        embeddings: Vec<Vec<T>>,
        labels: Vec<Label>,
        clusters: Option<usize>,
        renormalize: bool,
        seed: u64,
    ) -> Result<Self> {
        let centroids = identity_centroids(&embeddings, &labels, renormalize)?;
        let mapping = match clusters {
            Some(c) => {
                let means: Vec<&[T]> = centroids.iter().map(|m| m.mean.as_slice()).collect();
                let ids: Vec<Label> = centroids.iter().map(|m| m.identity).collect();
                let result = kmeans(&means, c, seed)?;
                Some(cluster_mapping(&result, &ids))
            }
            None => None,
        };
        Ok(Self { embeddings, labels, centroids, mapping })
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    /// Means over the epoch's mini-batches.
    pub primary_loss: f64,
    pub transfer_loss: f64,
    pub total_loss: f64,
    /// Within-modality triplets mined, summed over mini-batches.
    pub primary_triplets: usize,
    /// Transfer triplets satisfying the selection rule, before capping.
    pub transfer_found: usize,
    /// Transfer triplets actually used after capping.
    pub transfer_used: usize,
}

/// Embeds every pooled input.
pub fn encode_all<T: Scalar>(params: &EncoderParams<T>, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    inputs.iter().map(|x| Ok(params.forward(x)?.embedding.into_inner())).collect()
}

/// Groups sample indices into balanced mini-batches: identities are shuffled
/// and taken `per_batch` at a time, each contributing up to
/// `samples_per_identity` randomly chosen samples. A trailing group with a
/// single identity is folded into the previous batch.
pub fn balanced_batches<R: Rng>(labels: &[Label], per_batch: usize, samples_per_identity: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_identity: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_identity.entry(y).or_default().push(i);
    }
    let mut identities: Vec<Label> = by_identity.keys().copied().collect();
    identities.shuffle(rng);
    let mut groups: Vec<Vec<Label>> = identities.chunks(per_batch.max(1)).map(<[Label]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().unwrap_or_default();
        groups.last_mut().expect("at least one group").extend(tail);
    }
    groups
        .into_iter()
        .map(|group| {
            let mut batch = Vec::new();
            for y in group {
                let mut members = by_identity[&y].clone();
                members.shuffle(rng);
                members.truncate(samples_per_identity);
                batch.extend(members);
            }
            batch.sort_unstable();
            batch
        })
        .collect()
}

fn build_transfer<T: Scalar>(
    params: &EncoderParams<T>,
    set: &TrainSet<T>,
    source: &TransferSource<T>,
    config: &TrainConfig<T>,
) -> Result<TransferSet> {
    let audio = encode_all(params, &set.inputs)?;
    let margin = config.loss.transfer_margin;
    Ok(match config.transfer {
        TransferKind::None => TransferSet::None,
        TransferKind::Target => {
            TransferSet::Crossmodal(build_target_set(&audio, &set.labels, &source.embeddings, &source.labels, margin)?)
        }
        TransferKind::Relative => TransferSet::Audio(build_relative_set(&audio, &set.labels, &source.centroids, margin)?),
        TransferKind::Structure => {
            let mapping = source.mapping.as_ref().ok_or_else(|| Error::InvalidConfig {
                key: "clusters",
                reason: "transfer source carries no cluster mapping".into(),
            })?;
            TransferSet::Audio(build_structure_set(&audio, &set.labels, mapping, margin, config.structure_rule)?)
        }
    })
}

/// Splits an epoch's transfer set into `parts` contiguous chunks.
fn chunk_transfer(set: &TransferSet, parts: usize) -> Vec<TransferSet> {
    fn split<X: Clone>(items: &[X], parts: usize) -> Vec<Vec<X>> {
        (0..parts).map(|i| items[i * items.len() / parts..(i + 1) * items.len() / parts].to_vec()).collect()
    }
    match set {
        TransferSet::None => vec![TransferSet::None; parts],
        TransferSet::Audio(t) => split(t, parts).into_iter().map(TransferSet::Audio).collect(),
        TransferSet::Crossmodal(t) => split(t, parts).into_iter().map(TransferSet::Crossmodal).collect(),
    }
}

fn cap_and_shuffle(set: TransferSet, cap: usize, rng: &mut ChaCha8Rng) -> TransferSet {
    let seed = rng.random();
    match set {
        TransferSet::None => TransferSet::None,
        TransferSet::Audio(t) => {
            let mut t = cap_triplets(t, cap, seed);
            t.shuffle(rng);
            TransferSet::Audio(t)
        }
        TransferSet::Crossmodal(t) => {
            let mut t = cap_triplets(t, cap, seed);
            t.shuffle(rng);
            TransferSet::Crossmodal(t)
        }
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains the target encoder on `set`, regularized by `source` according to
/// `config.transfer`. Deterministic given the inputs and `config.seed`.
///
/// Batch sampling and transfer-set sampling draw from separate random
/// streams, so the batch sequence does not depend on the transfer kind.
pub fn train<T: Scalar>(
    set: &TrainSet<T>,
    source: Option<&TransferSource<T>>,
    config: &TrainConfig<T>,
) -> Result<(EncoderParams<T>, Vec<EpochStats>)> {
    config.validate()?;
    if set.num_identities() < 2 {
        return Err(Error::InsufficientData(format!("training needs at least 2 identities, found {}", set.num_identities())));
    }
    let source = match (config.transfer, source) {
        (TransferKind::None, _) => None,
        (_, Some(s)) => Some(s),
        (kind, None) => {
            return Err(Error::InsufficientData(format!("{kind} transfer requires source-modality embeddings")));
        }
    };
    let empty_source = Vec::new();
    let source_table = source.map_or(&empty_source, |s| &s.embeddings);

    let spec = EncoderSpec::new(set.input_dim(), config.hidden_dim, config.embedding_dim)?;
    let mut params = init_encoder::<T>(spec, config.seed);
    let mut optimizer = OptimizerState::new(&params, config.learning_rate)?;
    let mut batch_rng = rng_stream(config.seed, 1);
    let mut transfer_rng = rng_stream(config.seed, 2);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = balanced_batches(&set.labels, config.batch_identities, config.samples_per_identity, &mut batch_rng);
        let (transfer_found, chunks) = match source {
            Some(src) => {
                let full = build_transfer(&params, set, src, config)?;
                let found = full.len();
                let capped = cap_and_shuffle(full, config.transfer_cap, &mut transfer_rng);
                (found, chunk_transfer(&capped, batches.len()))
            }
            None => (0, chunk_transfer(&TransferSet::None, batches.len())),
        };

        let mut stats = EpochStats {
            epoch,
            batches: batches.len(),
            primary_loss: 0.0,
            transfer_loss: 0.0,
            total_loss: 0.0,
            primary_triplets: 0,
            transfer_found,
            transfer_used: 0,
        };
        for (b, (batch, transfer)) in batches.iter().zip(&chunks).enumerate() {
            let embedded = batch.iter().map(|&i| Ok(params.forward(&set.inputs[i])?.embedding)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<Label> = batch.iter().map(|&i| set.labels[i]).collect();
            let policy = MiningPolicy { seed: config.mining.seed ^ (((epoch as u64) << 32) | b as u64), ..config.mining };
            let primary: Vec<Triplet> = match mine_within_modality(&embedded, &labels, config.loss.margin, &policy) {
                Ok(local) => local.iter().map(|t| Triplet::new(batch[t.anchor], batch[t.positive], batch[t.negative])).collect(),
                Err(Error::DegenerateBatch) => Vec::new(),
                Err(e) => return Err(e),
            };
            let objective = Objective { inputs: &set.inputs, source: source_table, primary: &primary, transfer, loss: config.loss };
            let (loss, grads) = loss_and_gradients(&params, &objective)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            rmsprop_step(&mut params, &grads, &mut optimizer)?;
            stats.primary_loss += loss.primary.as_f64();
            stats.transfer_loss += loss.transfer.as_f64();
            stats.total_loss += loss.total.as_f64();
            stats.primary_triplets += primary.len();
            stats.transfer_used += transfer.len();
        }
        let nb = batches.len().max(1) as f64;
        stats.primary_loss /= nb;
        stats.transfer_loss /= nb;
        stats.total_loss /= nb;
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(stats);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set() -> TrainSet<f64> {
        // four well-separated identities, three noisy samples each
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for y in 0..4usize {
            for _ in 0..3 {
                let mut x = vec![0.0; 4];
                x[y] = 1.0;
                x.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
                inputs.push(x);
                labels.push(y);
            }
        }
        TrainSet { inputs, labels }
    }

    fn small_config() -> TrainConfig<f64> {
        TrainConfig { hidden_dim: 6, embedding_dim: 3, epochs: 5, batch_identities: 4, samples_per_identity: 3, seed: 9, ..Default::default() }
    }

    #[test]
    fn batches_are_balanced() {
        let labels: Vec<Label> = (0..10).flat_map(|y| std::iter::repeat_n(y, 5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = balanced_batches(&labels, 3, 2, &mut rng);
        // 10 identities in groups of 3 -> 3,3,4 after folding the singleton tail
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6, 8]);
        let mut seen: Vec<Label> = batches.iter().flatten().map(|&i| labels[i]).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set();
        let cfg = small_config();
        let (p1, h1) = train(&set, None, &cfg).unwrap();
        let (p2, h2) = train(&set, None, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 5);
    }

    #[test]
    fn validation_errors() {
        let set = toy_set();
        let cfg = TrainConfig { transfer: TransferKind::Structure, clusters: None, ..small_config() };
        assert!(matches!(train(&set, None, &cfg), Err(Error::InvalidConfig { key: "clusters", .. })));
        let cfg = TrainConfig { transfer: TransferKind::Target, ..small_config() };
        assert!(matches!(train(&set, None, &cfg), Err(Error::InsufficientData(_))));
        let one = TrainSet { inputs: vec![vec![1.0; 4]; 3], labels: vec![0; 3] };
        assert!(matches!(train(&one, None, &small_config()), Err(Error::InsufficientData(_))));
        assert!("bogus".parse::<TransferKind>().is_err());
        assert_eq!("relative".parse::<TransferKind>().unwrap(), TransferKind::Relative);
    }
}
