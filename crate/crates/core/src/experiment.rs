//! End-to-end runs: source encoder, transfer-regularized target encoder and
//! evaluation on held-out identities.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::agglomerative;
use crate::data::{Dataset, Split};
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::metrics::{clustering_curve, eer, prec_at_k, roc_auc, ClusteringCurve, RetrievalQuery, RetrievalScore, ScorePairs, GALLERY_SIZE};
use crate::model::{encode_all, train, EncoderParams, EpochStats, TrainConfig, TrainSet, TransferKind, TransferSource};
use crate::Label;

/// Mean-pooled samples of one modality, labelled through `index`.
pub fn pooled_set(dataset: &Dataset, modality: Modality, index: &BTreeMap<String, Label>) -> Result<TrainSet<f64>> {
    let (seqs, labels) = dataset.sequences(modality, index)?;
    if seqs.is_empty() {
        return Err(Error::EmptyModality(modality.as_str()));
    }
    TrainSet::from_frames(&seqs, labels)
}

/// Trains the source (visual) encoder without transfer.
pub fn train_source_encoder(train_set: &Dataset, config: &TrainConfig<f64>) -> Result<(EncoderParams<f64>, Vec<EpochStats>)> {
    let index = train_set.identity_index();
    let set = pooled_set(train_set, Modality::Visual, &index)?;
    let config = TrainConfig { transfer: TransferKind::None, ..config.clone() };
    train(&set, None, &config)
}

/// Frozen source embeddings of the training visual samples, their identity
/// centroids and, for structure transfer, the centroid clustering.
pub fn build_source(source: &EncoderParams<f64>, train_set: &Dataset, config: &TrainConfig<f64>) -> Result<TransferSource<f64>> {
    let index = train_set.identity_index();
    let set = pooled_set(train_set, Modality::Visual, &index)?;
    let embeddings = encode_all(source, &set.inputs)?;
    let clusters = if config.transfer == TransferKind::Structure { config.clusters } else { None };
    TransferSource::new(embeddings, set.labels, clusters, config.renormalize_centroids, config.seed)
}

/// Trains the target (audio) encoder.
pub fn train_target_encoder(
    train_set: &Dataset,
    source: Option<&TransferSource<f64>>,
    config: &TrainConfig<f64>,
) -> Result<(EncoderParams<f64>, Vec<EpochStats>)> {
    let index = train_set.identity_index();
    let set = pooled_set(train_set, Modality::Audio, &index)?;
    train(&set, source, config)
}

/// Verification and clustering quality of one modality on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub eer: f64,
    pub auc: f64,
    pub curve: ClusteringCurve,
    pub ideal_clusters: usize,
    pub num_samples: usize,
}

/// All-pairs EER and AUC plus the agglomerative clustering curve of the
/// embedded `modality` samples of `test_set`. The ideal cluster count
/// defaults to the number of test identities.
pub fn evaluate(params: &EncoderParams<f64>, test_set: &Dataset, modality: Modality, ideal_clusters: Option<usize>) -> Result<Evaluation> {
    let index = test_set.identity_index();
    let set = pooled_set(test_set, modality, &index)?;
    if set.num_identities() < 2 {
        return Err(Error::InsufficientData(format!(
            "evaluation needs at least 2 test identities to form negative pairs, found {}",
            set.num_identities()
        )));
    }
    let embeddings = encode_all(params, &set.inputs)?;
    let scores = ScorePairs::all_pairs(&embeddings, &set.labels);
    let trace = agglomerative(&embeddings)?;
    let ideal = ideal_clusters.unwrap_or(set.num_identities());
    let curve = clustering_curve(&trace, &set.labels, Some(ideal))?;
    Ok(Evaluation { eer: eer(&scores)?, auc: roc_auc(&scores)?, curve, ideal_clusters: ideal, num_samples: set.inputs.len() })
}

/// Prec@1..=10 for one query/gallery modality pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: Modality,
    pub gallery: Modality,
    pub queries: usize,
    pub prec: [f64; GALLERY_SIZE],
}

fn embedded(params: &EncoderParams<f64>, set: &Dataset, modality: Modality, index: &BTreeMap<String, Label>) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    let set = pooled_set(set, modality, index)?;
    Ok((encode_all(params, &set.inputs)?, set.labels))
}

/// Retrieval runs over the four query/gallery settings. Each run picks a
/// random query sample, a random other sample of the same identity from the
/// gallery modality, and one random sample from each of nine other random
/// identities.
pub fn retrieval(
    audio: &EncoderParams<f64>,
    visual: &EncoderParams<f64>,
    test_set: &Dataset,
    queries: usize,
    score: RetrievalScore,
    seed: u64,
) -> Result<Vec<RetrievalResult>> {
    let index = test_set.identity_index();
    if index.len() < GALLERY_SIZE {
        return Err(Error::InsufficientData(format!(
            "retrieval needs at least {GALLERY_SIZE} test identities, found {}",
            index.len()
        )));
    }
    let tables: BTreeMap<Modality, (Vec<Vec<f64>>, Vec<Label>)> = [
        (Modality::Audio, embedded(audio, test_set, Modality::Audio, &index)?),
        (Modality::Visual, embedded(visual, test_set, Modality::Visual, &index)?),
    ]
    .into();
    let by_identity = |m: Modality| {
        let mut map: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, &y) in tables[&m].1.iter().enumerate() {
            map.entry(y).or_default().push(i);
        }
        map
    };
    let groups: BTreeMap<Modality, BTreeMap<Label, Vec<usize>>> =
        [(Modality::Audio, by_identity(Modality::Audio)), (Modality::Visual, by_identity(Modality::Visual))].into();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = [
        (Modality::Audio, Modality::Audio),
        (Modality::Visual, Modality::Visual),
        (Modality::Audio, Modality::Visual),
        (Modality::Visual, Modality::Audio),
    ];
    let mut out = Vec::new();
    for (qm, gm) in settings {
        let (q_emb, q_lab) = &tables[&qm];
        let (g_emb, _) = &tables[&gm];
        let gallery = &groups[&gm];
        let mut runs = Vec::with_capacity(queries);
        let mut attempts = 0;
        while runs.len() < queries {
            attempts += 1;
            if attempts > 100 * queries.max(1) {
                return Err(Error::InsufficientData("too few samples per identity for same-modality retrieval".into()));
            }
            let qi = rng.random_range(0..q_emb.len());
            let y = q_lab[qi];
            let candidates: Vec<usize> = gallery
                .get(&y)
                .map(|v| v.iter().copied().filter(|&g| qm != gm || g != qi).collect())
                .unwrap_or_default();
            let Some(&correct) = candidates.choose(&mut rng) else { continue };
            let mut others: Vec<Label> = gallery.keys().copied().filter(|&z| z != y).collect();
            others.shuffle(&mut rng);
            let distractors = others[..GALLERY_SIZE - 1]
                .iter()
                .map(|z| g_emb[*gallery[z].choose(&mut rng).expect("non-empty identity")].clone())
                .collect();
            runs.push(RetrievalQuery { query: q_emb[qi].clone(), correct: g_emb[correct].clone(), distractors });
        }
        let mut prec = [0.0; GALLERY_SIZE];
        for (k, p) in prec.iter_mut().enumerate() {
            *p = prec_at_k(&runs, k + 1, score)?;
        }
        out.push(RetrievalResult { query: qm, gallery: gm, queries, prec });
    }
    Ok(out)
}

/// Everything needed for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Target encoder, including the transfer kind and weight.
    pub target: TrainConfig<f64>,
    /// Source encoder; its transfer kind is ignored.
    pub source: TrainConfig<f64>,
    pub ideal_clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub source: EncoderParams<f64>,
    pub source_history: Vec<EpochStats>,
    pub target: EncoderParams<f64>,
    pub history: Vec<EpochStats>,
    pub evaluation: Evaluation,
}

/// Trains on the `train` split of `dataset` and evaluates the target encoder
/// on the `test` split. A pre-trained source encoder may be supplied.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig, source: Option<&EncoderParams<f64>>) -> Result<ExperimentResult> {
    let train_set = dataset.subset(Split::Train);
    let test_set = dataset.subset(Split::Test);
    if config.target.transfer != TransferKind::None {
        train_set.require_both_modalities()?;
    }
    let (source, source_history) = match source {
        Some(p) => (p.clone(), Vec::new()),
        None => train_source_encoder(&train_set, &config.source)?,
    };
    let transfer = match config.target.transfer {
        TransferKind::None => None,
        _ => Some(build_source(&source, &train_set, &config.target)?),
    };
    let (target, history) = train_target_encoder(&train_set, transfer.as_ref(), &config.target)?;
    let evaluation = evaluate(&target, &test_set, Modality::Audio, config.ideal_clusters)?;
    Ok(ExperimentResult { source, source_history, target, history, evaluation })
}
