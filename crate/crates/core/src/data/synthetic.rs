use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{merge, split_by_identity, Dataset, Sample, Split};
use crate::embedding::Modality;
use crate::error::{Error, Result};

/// Latent-factor model behind a synthetic crossmodal dataset.
///
/// Each identity has a unit latent `u` drawn around one of `groups` centroids
/// on the latent sphere. Visual samples are single noisy frames of `P_V u`;
/// audio samples are `frames_per_audio_sample` noisy frames of `P_A u'`,
/// where `u'` keeps the leading `floor(crossmodal_share * latent_dim)` entries
/// of `u` and takes the rest from an independent draw around the same group
/// centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub groups: usize,
    pub latent_dim: usize,
    pub audio_frame_dim: usize,
    pub visual_frame_dim: usize,
    pub frames_per_audio_sample: usize,
    pub samples_per_identity: usize,
    pub noise_sigma_audio: f64,
    pub noise_sigma_visual: f64,
    pub crossmodal_share: f64,
    /// Standard deviation of identity latents around their group centroid.
    pub group_spread: f64,
    /// Fraction of identities tagged as test.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_identities: 40,
            groups: 5,
            latent_dim: 16,
            audio_frame_dim: 20,
            visual_frame_dim: 16,
            frames_per_audio_sample: 5,
            samples_per_identity: 6,
            noise_sigma_audio: 0.5,
            noise_sigma_visual: 0.1,
            crossmodal_share: 1.0,
            group_spread: 0.3,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &'static str, reason: String| Err(Error::InvalidConfig { key, reason });
        if self.groups < 1 {
            return fail("groups", "must be at least 1".into());
        }
        if self.num_identities < self.groups {
            return fail("identities", format!("{} identities cannot fill {} groups", self.num_identities, self.groups));
        }
        for (key, v) in [
            ("latent_dim", self.latent_dim),
            ("audio_dim", self.audio_frame_dim),
            ("visual_dim", self.visual_frame_dim),
            ("frames", self.frames_per_audio_sample),
            ("samples", self.samples_per_identity),
        ] {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        for (key, v) in [
            ("noise_audio", self.noise_sigma_audio),
            ("noise_visual", self.noise_sigma_visual),
            ("group_spread", self.group_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(key, format!("{v} is not a finite non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.crossmodal_share) {
            return fail("share", format!("{} is not in [0, 1]", self.crossmodal_share));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail("test_fraction", format!("{} is not in (0, 1)", self.test_fraction));
        }
        Ok(())
    }
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Group index per identity; never used for training.
    pub groups: BTreeMap<String, usize>,
    pub group_centroids: Vec<Vec<f64>>,
    /// Visual-side latent `u` per identity.
    pub latents: BTreeMap<String, Vec<f64>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn around(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let z = normal_vec(rng, center.len());
    unit(center.iter().zip(z).map(|(c, z)| c + spread * z).collect())
}

/// Rows of a `rows x cols` Gaussian matrix scaled by `1/sqrt(cols)`.
fn projection(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (cols as f64).sqrt();
    (0..rows).map(|_| normal_vec(rng, cols).into_iter().map(|x| x * s).collect()).collect()
}

fn observe(rng: &mut ChaCha8Rng, p: &[Vec<f64>], u: &[f64], sigma: f64) -> Vec<f64> {
    p.iter()
        .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:04}")
}

/// Generates a dataset deterministically from `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let l = config.latent_dim;
    let shared = (config.crossmodal_share * l as f64).floor() as usize;

    let group_centroids: Vec<Vec<f64>> = (0..config.groups).map(|_| unit(normal_vec(&mut rng, l))).collect();
    let p_v = projection(&mut rng, config.visual_frame_dim, l);
    let p_a = projection(&mut rng, config.audio_frame_dim, l);

    let mut samples = Vec::new();
    let mut groups = BTreeMap::new();
    let mut latents = BTreeMap::new();
    for i in 0..config.num_identities {
        let name = identity_name(i);
        let g = i % config.groups;
        let u = around(&mut rng, &group_centroids[g], config.group_spread);
        let other = around(&mut rng, &group_centroids[g], config.group_spread);
        let u_audio: Vec<f64> = u[..shared].iter().chain(&other[shared..]).copied().collect();
        for j in 0..config.samples_per_identity {
            let frame = observe(&mut rng, &p_v, &u, config.noise_sigma_visual);
            samples.push(Sample {
                sample_id: format!("{name}-v{j:03}"),
                identity: name.clone(),
                modality: Modality::Visual,
                split: Split::Train,
                frames: vec![frame],
            });
        }
        for j in 0..config.samples_per_identity {
            let frames =
                (0..config.frames_per_audio_sample).map(|_| observe(&mut rng, &p_a, &u_audio, config.noise_sigma_audio)).collect();
            samples.push(Sample {
                sample_id: format!("{name}-a{j:03}"),
                identity: name.clone(),
                modality: Modality::Audio,
                split: Split::Train,
                frames,
            });
        }
        groups.insert(name.clone(), g);
        latents.insert(name, u);
    }

    let all = Dataset::new(samples)?;
    let dataset = if config.num_identities >= 2 {
        let (train, test) = split_by_identity(&all, config.test_fraction, config.seed)?;
        merge(train, test)?
    } else {
        all
    };
    Ok(SyntheticData { dataset, groups, group_centroids, latents })
}
