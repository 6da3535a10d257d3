//! Datasets of per-sample frame sequences: synthetic generation, JSON-lines
//! storage, identity-disjoint splits and CSV result export.

mod export;
mod jsonl;
mod synthetic;

pub use export::{
    export_curve_csv, export_history_csv, export_metrics_csv, export_sweep_csv, load_groups_csv, save_groups_csv,
    MetricsRow, SweepRow, METRICS_HEADER, SWEEP_HEADER,
};
pub use jsonl::{load_jsonl, save_jsonl};
pub use synthetic::{generate_synthetic, identity_name, SyntheticConfig, SyntheticData};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub identity: String,
    pub modality: Modality,
    pub split: Split,
    pub frames: Vec<Vec<f64>>,
}

impl Sample {
    pub fn frame_dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Checks that frames are non-empty, finite and of equal length.
    /// `line` is reported in errors.
    pub(crate) fn validate(&self, line: usize) -> Result<()> {
        let schema = |message: String| Error::SchemaError { line, message };
        if self.sample_id.is_empty() {
            return Err(schema("empty sample_id".into()));
        }
        if self.identity.is_empty() {
            return Err(schema("empty identity".into()));
        }
        let dim = self.frame_dim();
        if dim == 0 {
            return Err(schema(format!("sample `{}` has no frame values", self.sample_id)));
        }
        for f in &self.frames {
            if f.len() != dim {
                return Err(Error::InconsistentFrameDim { line, expected: dim, found: f.len() });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(schema(format!("sample `{}` has a non-finite value", self.sample_id)));
            }
        }
        Ok(())
    }
}

/// Validated collection of samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates every sample, unique sample ids, one frame dimension per
    /// modality, and disjoint train/test identities.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        Self::with_lines(samples, |i| i + 1)
    }

    /// As [`Dataset::new`], reporting sample `i` at `line_of(i)`.
    pub(crate) fn with_lines(samples: Vec<Sample>, line_of: impl Fn(usize) -> usize) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut dims: BTreeMap<Modality, usize> = BTreeMap::new();
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            let line = line_of(i);
            s.validate(line)?;
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::SchemaError { line, message: format!("duplicate sample_id `{}`", s.sample_id) });
            }
            let dim = *dims.entry(s.modality).or_insert(s.frame_dim());
            if dim != s.frame_dim() {
                return Err(Error::InconsistentFrameDim { line, expected: dim, found: s.frame_dim() });
            }
            let split = *splits.entry(&s.identity).or_insert(s.split);
            if split != s.split {
                return Err(Error::InvalidDataset(format!("identity `{}` appears in both train and test", s.identity)));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identities(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.identity.as_str()).collect()
    }

    pub fn frame_dim(&self, modality: Modality) -> Option<usize> {
        self.samples.iter().find(|s| s.modality == modality).map(Sample::frame_dim)
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples.iter().filter(|s| s.modality == modality).count()
    }

    /// Samples with the given split tag.
    pub fn subset(&self, split: Split) -> Dataset {
        Dataset { samples: self.samples.iter().filter(|s| s.split == split).cloned().collect() }
    }

    /// Samples of one modality, in dataset order.
    pub fn modality(&self, modality: Modality) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.modality == modality)
    }

    /// Dense label per identity, assigned in sorted identity order.
    pub fn identity_index(&self) -> BTreeMap<String, Label> {
        self.identities().into_iter().enumerate().map(|(i, id)| (id.to_owned(), i)).collect()
    }

    /// Frame sequences and dense labels of one modality.
    pub fn sequences(&self, modality: Modality, index: &BTreeMap<String, Label>) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Label>)> {
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for s in self.modality(modality) {
            let y = *index
                .get(&s.identity)
                .ok_or_else(|| Error::InvalidDataset(format!("identity `{}` missing from the label index", s.identity)))?;
            seqs.push(s.frames.clone());
            labels.push(y);
        }
        Ok((seqs, labels))
    }

    /// Checks that every identity has at least one sample of each modality.
    pub fn require_both_modalities(&self) -> Result<()> {
        let audio: BTreeSet<&str> = self.modality(Modality::Audio).map(|s| s.identity.as_str()).collect();
        let visual: BTreeSet<&str> = self.modality(Modality::Visual).map(|s| s.identity.as_str()).collect();
        if let Some(id) = audio.symmetric_difference(&visual).next() {
            return Err(Error::InvalidDataset(format!("identity `{id}` lacks samples in one modality")));
        }
        Ok(())
    }
}

/// Partitions identities at random into train and test, tagging each sample
/// with its identity's side. The test side gets `round(test_fraction * K)`
/// identities, clamped so both sides are non-empty.
pub fn split_by_identity(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig { key: "test_fraction", reason: format!("{test_fraction} is not in (0, 1)") });
    }
    let mut ids: Vec<&str> = dataset.identities().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::TooFewIdentities(ids.len()));
    }
    let n_test = ((test_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: BTreeSet<&str> = ids[..n_test].iter().copied().collect();

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in dataset.samples() {
        let mut s = s.clone();
        if test_ids.contains(s.identity.as_str()) {
            s.split = Split::Test;
            test.push(s);
        } else {
            s.split = Split::Train;
            train.push(s);
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}

/// Concatenation of two datasets, revalidated.
pub fn merge(a: Dataset, b: Dataset) -> Result<Dataset> {
    let mut samples = a.into_samples();
    samples.extend(b.into_samples());
    Dataset::new(samples)
}
