//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Every reference value here is computed by code in this file (brute-force
//! enumeration, exact rational arithmetic, direct finite differences) or
//! written out by hand; nothing is read back from the library under test.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodal_core::clustering::{agglomerative, cluster_mapping, kmeans};
use xmodal_core::data::{export_history_csv, generate_synthetic, Split, SyntheticConfig};
use xmodal_core::embedding::{CrossmodalTriplet, IdentityCentroid, LossConfig, Modality, Tagged, Triplet};
use xmodal_core::experiment::{retrieval, run_experiment, train_source_encoder, ExperimentConfig};
use xmodal_core::metrics::{clustering_curve, eer, oci_k, roc_auc, wce, wcp, LabeledPartition, RetrievalScore, ScorePairs};
use xmodal_core::mining::{
    build_relative_set, build_structure_set, build_target_set, mine_within_modality, ClusterMapping, MiningPolicy, StructureRule,
};
use xmodal_core::model::{
    encode_all, init_encoder, loss_and_gradients, mean_pool, Checkpoint, EncoderParams, EncoderSpec, Objective, TrainConfig,
    TransferKind, TransferSet,
};
use xmodal_core::Label;

// gradient check
const GRAD_INSTANCES: usize = 25;
const GRAD_FD_STEP: f64 = 1e-6;
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_TOLERANCE: f64 = 1e-4;
/// Instances whose selected hinges sit closer than this to their kink are redrawn.
const KINK_GUARD: f64 = 1e-3;

// triplet-set oracles
const MINING_INSTANCES: usize = 200;

// metric oracles
const EER_INSTANCES: usize = 1000;
const EXACT_TOLERANCE: f64 = 1e-12;
const WCE_TOLERANCE: f64 = 1e-4;

// directional reproduction
const DIRECTION_SEEDS: std::ops::Range<u64> = 1000..1020;
const CONTROL_SEEDS: std::ops::Range<u64> = 1000..1010;
const SIGN_TEST_ALPHA: f64 = 0.05;

// hypersphere and determinism
const NORM_TOLERANCE: f64 = 1e-6;

// crossmodal retrieval
const RETRIEVAL_SEEDS: [u64; 3] = [2000, 2001, 2002];
const RETRIEVAL_QUERIES: usize = 500;
const CHANCE: f64 = 0.1;
const RETRIEVAL_MARGIN_OVER_CHANCE: f64 = 0.1;

// clustering
const KMEANS_INSTANCES: usize = 200;
const INERTIA_SLACK: f64 = 1e-12;

/// Largest deviation from unit norm seen in any encoder output.
static NORM_DEVIATION: Mutex<(f64, usize)> = Mutex::new((0.0, 0));

fn record_norms(embeddings: &[Vec<f64>]) {
    let mut g = NORM_DEVIATION.lock().unwrap();
    for e in embeddings {
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        g.0 = g.0.max((n - 1.0).abs());
        g.1 += 1;
    }
}

fn encode(params: &EncoderParams<f64>, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let out = encode_all(params, inputs).unwrap();
    record_norms(&out);
    out
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Labels with `per[i]` copies of identity `i`.
fn labels_from_counts(per: &[usize]) -> Vec<Label> {
    per.iter().enumerate().flat_map(|(y, &c)| std::iter::repeat_n(y, c)).collect()
}

// ---------------------------------------------------------------------------
// 1. gradients

struct GradInstance {
    params: EncoderParams<f64>,
    inputs: Vec<Vec<f64>>,
    source: Vec<Vec<f64>>,
    primary: Vec<Triplet>,
    transfer: TransferSet,
    loss: LossConfig<f64>,
}

fn hinge(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    dist(a, p) - dist(a, n) + margin
}

fn draw_grad_instance(kind: TransferKind, rng: &mut ChaCha8Rng) -> Option<GradInstance> {
    let min_ids = if matches!(kind, TransferKind::Relative | TransferKind::Structure) { 3 } else { 2 };
    let k = rng.random_range(min_ids..=4);
    let per: Vec<usize> = (0..k).map(|_| rng.random_range(2..=3)).collect();
    let labels = labels_from_counts(&per);
    let frame_dim = rng.random_range(2..=6);
    let d = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=5);
    let spec = EncoderSpec::new(frame_dim, hidden, d).unwrap();
    let params: EncoderParams<f64> = init_encoder(spec, rng.random());
    let inputs: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| {
            let frames: Vec<Vec<f64>> = (0..rng.random_range(1..=3)).map(|_| gaussian(rng, frame_dim)).collect();
            mean_pool(&frames).unwrap()
        })
        .collect();
    let margin = rng.random_range(0.1..0.5);
    let transfer_margin = rng.random_range(0.1..0.5);
    let lambda = if kind == TransferKind::None { 0.0 } else { rng.random_range(0.25..2.0) };
    let loss = LossConfig::new(margin, lambda).unwrap().with_transfer_margin(transfer_margin).unwrap();
    let emb = encode(&params, &inputs);
    let primary = mine_within_modality(&emb, &labels, margin, &MiningPolicy::default()).ok()?;

    let mut source = Vec::new();
    let transfer = match kind {
        TransferKind::None => TransferSet::None,
        TransferKind::Target => {
            let mut vlabels = Vec::new();
            for y in 0..k {
                for _ in 0..rng.random_range(1..=2) {
                    source.push(unit(gaussian(rng, d)));
                    vlabels.push(y);
                }
            }
            TransferSet::Crossmodal(build_target_set(&emb, &labels, &source, &vlabels, transfer_margin).unwrap())
        }
        TransferKind::Relative => {
            let centroids: Vec<IdentityCentroid<f64>> =
                (0..k).map(|y| IdentityCentroid { identity: y, mean: gaussian(rng, d) }).collect();
            TransferSet::Audio(build_relative_set(&emb, &labels, &centroids, transfer_margin).unwrap())
        }
        TransferKind::Structure => {
            // identities 0 and 1 share a cluster so same-cluster positives exist
            let mut map = std::collections::BTreeMap::new();
            map.insert(0, 0);
            map.insert(1, 0);
            map.insert(2, 1);
            for y in 3..k {
                map.insert(y, rng.random_range(0..2));
            }
            let mapping = ClusterMapping { num_clusters: 2, map };
            TransferSet::Audio(build_structure_set(&emb, &labels, &mapping, transfer_margin, StructureRule::default()).unwrap())
        }
    };
    if kind != TransferKind::None && transfer.is_empty() {
        return None;
    }
    if primary.is_empty() && transfer.is_empty() {
        return None;
    }

    // reject instances sitting on a hinge kink
    let pick = |t: Tagged| -> &[f64] {
        match t.modality {
            Modality::Audio => &emb[t.index],
            Modality::Visual => &source[t.index],
        }
    };
    let mut closest = f64::INFINITY;
    for t in &primary {
        closest = closest.min(hinge(&emb[t.anchor], &emb[t.positive], &emb[t.negative], margin).abs());
    }
    match &transfer {
        TransferSet::None => {}
        TransferSet::Audio(ts) => {
            for t in ts {
                closest = closest.min(hinge(&emb[t.anchor], &emb[t.positive], &emb[t.negative], transfer_margin).abs());
            }
        }
        TransferSet::Crossmodal(ts) => {
            for t in ts {
                closest = closest.min(hinge(pick(t.anchor), pick(t.positive), pick(t.negative), transfer_margin).abs());
            }
        }
    }
    if closest < KINK_GUARD {
        return None;
    }
    Some(GradInstance { params, inputs, source, primary, transfer, loss })
}

fn max_gradient_error(inst: &GradInstance) -> f64 {
    let objective = Objective {
        inputs: &inst.inputs,
        source: &inst.source,
        primary: &inst.primary,
        transfer: &inst.transfer,
        loss: inst.loss,
    };
    let (_, analytic) = loss_and_gradients(&inst.params, &objective).unwrap();
    let mut probe = inst.params.clone();
    let mut worst = 0.0_f64;
    for b in 0..4 {
        for i in 0..inst.params.blocks()[b].1.len() {
            let x = inst.params.blocks()[b].1[i];
            probe.blocks_mut()[b].1[i] = x + GRAD_FD_STEP;
            let plus = objective.loss(&probe).unwrap().total;
            probe.blocks_mut()[b].1[i] = x - GRAD_FD_STEP;
            let minus = objective.loss(&probe).unwrap().total;
            probe.blocks_mut()[b].1[i] = x;
            let numeric = (plus - minus) / (2.0 * GRAD_FD_STEP);
            let a = analytic.blocks()[b].1[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in TransferKind::ALL {
        let mut done = 0;
        let mut worst = 0.0_f64;
        let mut attempts = 0;
        while done < GRAD_INSTANCES && attempts < 100 * GRAD_INSTANCES {
            attempts += 1;
            if let Some(inst) = draw_grad_instance(kind, &mut rng) {
                worst = worst.max(max_gradient_error(&inst));
                done += 1;
            }
        }
        pass &= done == GRAD_INSTANCES && worst < GRAD_TOLERANCE;
        parts.push(format!("{kind} {done} instances max rel err {worst:.2e}"));
    }
    Outcome::new(pass, format!("{} (tol {GRAD_TOLERANCE:.0e})", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 2. triplet sets

/// Embeddings on an integer grid (exact distance ties) or Gaussian.
fn draw_points(rng: &mut ChaCha8Rng, n: usize, d: usize, grid: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| if grid { (0..d).map(|_| rng.random_range(-1..=1) as f64).collect() } else { gaussian(rng, d) })
        .collect()
}

fn oracle_mining(emb: &[Vec<f64>], labels: &[Label], margin: f64, hard: bool, semihard: bool) -> Option<BTreeSet<(usize, usize, usize)>> {
    let n = emb.len();
    let has_pair = (0..n).any(|a| (0..n).any(|p| a != p && labels[a] == labels[p]));
    let has_neg = (0..n).any(|a| (0..n).any(|b| labels[a] != labels[b]));
    if !has_pair || !has_neg {
        return None;
    }
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in 0..n {
            for q in 0..n {
                if a == p || labels[a] != labels[p] || labels[q] == labels[a] {
                    continue;
                }
                let (dp, dn) = (dist(&emb[a], &emb[p]), dist(&emb[a], &emb[q]));
                let is_hard = dn < dp;
                let is_semi = dp <= dn && dn < dp + margin;
                if (hard && is_hard) || (semihard && is_semi) {
                    out.insert((a, p, q));
                }
            }
        }
    }
    Some(out)
}

fn all_combos() -> Vec<(Modality, Modality, Modality)> {
    let ms = [Modality::Audio, Modality::Visual];
    let mut v = Vec::new();
    for a in ms {
        for p in ms {
            for n in ms {
                v.push((a, p, n));
            }
        }
    }
    v
}

fn allowed_combo(c: (Modality, Modality, Modality)) -> bool {
    use Modality::{Audio as A, Visual as V};
    !matches!(c, (V, V, V) | (V, V, A) | (A, A, A))
}

fn oracle_target(
    audio: &[Vec<f64>],
    al: &[Label],
    visual: &[Vec<f64>],
    vl: &[Label],
    margin: f64,
) -> BTreeSet<CrossmodalTriplet> {
    let items: Vec<(Tagged, &[f64], Label)> = audio
        .iter()
        .zip(al)
        .enumerate()
        .map(|(i, (e, &y))| (Tagged::audio(i), e.as_slice(), y))
        .chain(visual.iter().zip(vl).enumerate().map(|(i, (e, &y))| (Tagged::visual(i), e.as_slice(), y)))
        .collect();
    let mut out = BTreeSet::new();
    for a in &items {
        for p in &items {
            for n in &items {
                let combo = (a.0.modality, p.0.modality, n.0.modality);
                if !allowed_combo(combo) || a.0 == p.0 || p.2 != a.2 || n.2 == a.2 {
                    continue;
                }
                if dist(a.1, p.1) + margin > dist(a.1, n.1) {
                    out.insert(CrossmodalTriplet { anchor: a.0, positive: p.0, negative: n.0 });
                }
            }
        }
    }
    out
}

fn oracle_relative(emb: &[Vec<f64>], labels: &[Label], means: &[Vec<f64>], margin: f64) -> BTreeSet<(usize, usize, usize)> {
    let n = emb.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in 0..n {
            for q in 0..n {
                let (ya, yp, yn) = (labels[a], labels[p], labels[q]);
                if ya == yp || ya == yn {
                    continue;
                }
                if dist(&means[ya], &means[yp]) < dist(&means[ya], &means[yn]) && dist(&emb[a], &emb[p]) + margin > dist(&emb[a], &emb[q]) {
                    out.insert((a, p, q));
                }
            }
        }
    }
    out
}

fn oracle_structure(emb: &[Vec<f64>], labels: &[Label], cluster: &[usize], margin: f64, literal: bool) -> BTreeSet<(usize, usize, usize)> {
    let n = emb.len();
    let c = |i: usize| cluster[labels[i]];
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in 0..n {
            for q in 0..n {
                let selected = if literal {
                    c(a) != c(p) && c(a) != c(q)
                } else {
                    c(a) == c(p) && labels[a] != labels[p] && c(a) != c(q)
                };
                if selected && dist(&emb[a], &emb[p]) + margin > dist(&emb[a], &emb[q]) {
                    out.insert((a, p, q));
                }
            }
        }
    }
    out
}

fn as_set(ts: &[Triplet]) -> Option<BTreeSet<(usize, usize, usize)>> {
    let set: BTreeSet<_> = ts.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
    (set.len() == ts.len()).then_some(set)
}

fn triplet_sets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    let mut emitted: BTreeSet<(Modality, Modality, Modality)> = BTreeSet::new();
    let mut sizes = [0usize; 4];
    for inst in 0..MINING_INSTANCES {
        let k = rng.random_range(2..=5);
        let per: Vec<usize> = (0..k).map(|_| rng.random_range(1..=4)).collect();
        let labels = labels_from_counts(&per);
        let d = rng.random_range(2..=4);
        let grid = inst % 2 == 0;
        let emb = draw_points(&mut rng, labels.len(), d, grid);
        let margin = [0.2, 0.5, 1.0][rng.random_range(0..3)];

        for (hard, semihard) in [(true, true), (true, false), (false, true)] {
            let policy = MiningPolicy::new(hard, semihard, None, 0).unwrap();
            let got = mine_within_modality(&emb, &labels, margin, &policy).ok().map(|t| as_set(&t));
            let want = oracle_mining(&emb, &labels, margin, hard, semihard);
            match (got, want) {
                (None, None) => {}
                (Some(Some(g)), Some(w)) if g == w => sizes[0] += g.len(),
                _ => mismatches.push(format!("mining #{inst} hard={hard} semihard={semihard}")),
            }
        }

        let mut vper: Vec<usize> = (0..k).map(|_| rng.random_range(0..=3)).collect();
        vper[0] = vper[0].max(1);
        let vlabels = labels_from_counts(&vper);
        let visual = draw_points(&mut rng, vlabels.len(), d, grid);
        let got = build_target_set(&emb, &labels, &visual, &vlabels, margin).unwrap();
        let got_set: BTreeSet<_> = got.iter().copied().collect();
        emitted.extend(got.iter().map(|t| t.modalities()));
        if got_set.len() != got.len() || got_set != oracle_target(&emb, &labels, &visual, &vlabels, margin) {
            mismatches.push(format!("target #{inst}"));
        }
        sizes[1] += got.len();

        let means = draw_points(&mut rng, k, d, grid);
        let centroids: Vec<IdentityCentroid<f64>> = means.iter().enumerate().map(|(y, m)| IdentityCentroid { identity: y, mean: m.clone() }).collect();
        let got = build_relative_set(&emb, &labels, &centroids, margin).unwrap();
        if as_set(&got) != Some(oracle_relative(&emb, &labels, &means, margin)) {
            mismatches.push(format!("relative #{inst}"));
        }
        sizes[2] += got.len();

        let c = rng.random_range(1..=3);
        let cluster: Vec<usize> = (0..k).map(|_| rng.random_range(0..c)).collect();
        let mapping = ClusterMapping { num_clusters: c, map: cluster.iter().copied().enumerate().collect() };
        for (rule, literal) in [(StructureRule::SameClusterPositive, false), (StructureRule::Literal, true)] {
            let got = build_structure_set(&emb, &labels, &mapping, margin, rule).unwrap();
            if as_set(&got) != Some(oracle_structure(&emb, &labels, &cluster, margin, literal)) {
                mismatches.push(format!("structure #{inst} literal={literal}"));
            }
            sizes[3] += got.len();
        }
    }
    let valid: BTreeSet<_> = all_combos().into_iter().filter(|&c| allowed_combo(c)).collect();
    let combos_ok = emitted == valid && valid.len() == 5;
    let pass = mismatches.is_empty() && combos_ok && sizes.iter().all(|&s| s > 0);
    let mut detail = format!(
        "{MINING_INSTANCES} instances, triplets checked mining {} target {} relative {} structure {}; {} modality combos emitted",
        sizes[0],
        sizes[1],
        sizes[2],
        sizes[3],
        emitted.len()
    );
    if !mismatches.is_empty() {
        detail.push_str(&format!("; mismatches: {}", mismatches.iter().take(5).cloned().collect::<Vec<_>>().join(", ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 3. metrics

/// Exact rational `num / den`.
#[derive(Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Threshold sweep in exact arithmetic: at each pooled value (ascending) and
/// finally at +inf, FNR = #pos >= t / P and FPR = #neg < t / N. The first
/// point with FNR <= FPR is linearly interpolated against its predecessor.
fn oracle_eer(pos: &[f64], neg: &[f64]) -> Ratio {
    let (np, nn) = (pos.len() as i128, neg.len() as i128);
    let mut ts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    // (#pos >= t, #neg < t) as counts
    let mut points: Vec<(i128, i128)> = ts
        .iter()
        .map(|&t| (pos.iter().filter(|&&p| p >= t).count() as i128, neg.iter().filter(|&&n| n < t).count() as i128))
        .collect();
    points.push((0, nn));
    let gap = |(a, b): (i128, i128)| a * nn - b * np; // sign of FNR - FPR, scaled by P*N
    let idx = points.iter().position(|&p| gap(p) <= 0).unwrap();
    let (a2, _) = points[idx];
    if idx == 0 {
        return Ratio { num: a2, den: np };
    }
    let (a1, _) = points[idx - 1];
    let (g1, g2) = (gap(points[idx - 1]), gap(points[idx]));
    if g2 == 0 {
        return Ratio { num: a2, den: np };
    }
    // FNR1 + g1 / (g1 - g2) * (FNR2 - FNR1)
    let d = g1 - g2;
    Ratio { num: a1 * d + g1 * (a2 - a1), den: np * d }
}

fn oracle_auc(pos: &[f64], neg: &[f64]) -> Ratio {
    let mut twice = 0i128;
    for &p in pos {
        for &n in neg {
            twice += if p < n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    Ratio { num: twice, den: 2 * (pos.len() * neg.len()) as i128 }
}

struct PartitionFixture {
    clusters: Vec<&'static str>,
    wcp: f64,
    wce: f64,
    oci: usize,
}

fn partition_fixtures() -> Vec<PartitionFixture> {
    let h3 = 3f64.log2();
    // entropy of a 2/3, 1/3 split
    let h21 = -(2.0 / 3.0 * (2.0f64 / 3.0).log2() + 1.0 / 3.0 * (1.0f64 / 3.0).log2());
    vec![
        PartitionFixture { clusters: vec!["AAB", "BB"], wcp: 0.8, wce: 3.0 * h21 / 5.0, oci: 3 },
        PartitionFixture { clusters: vec!["AAABB"], wcp: 0.6, wce: -(0.6f64 * 0.6f64.log2() + 0.4 * 0.4f64.log2()), oci: 3 },
        PartitionFixture { clusters: vec!["AB"], wcp: 0.5, wce: 1.0, oci: 2 },
        PartitionFixture { clusters: vec!["AA", "B", "CCC"], wcp: 1.0, wce: 0.0, oci: 3 },
        PartitionFixture { clusters: vec!["A", "B", "C", "A"], wcp: 1.0, wce: 0.0, oci: 4 },
        PartitionFixture { clusters: vec!["ABC"], wcp: 1.0 / 3.0, wce: h3, oci: 3 },
        PartitionFixture { clusters: vec!["AABB", "C"], wcp: 0.6, wce: 0.8, oci: 4 },
        PartitionFixture { clusters: vec!["AAAB", "BBC", "C"], wcp: 6.0 / 8.0, wce: (4.0 * 0.811_278_124_459_132_9 + 3.0 * h21) / 8.0, oci: 5 },
    ]
}

fn metrics() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for i in 0..EER_INSTANCES {
        let np = rng.random_range(1..=4);
        let nn = rng.random_range(1..=8 - np);
        let draw = |rng: &mut ChaCha8Rng| if i % 2 == 0 { rng.random_range(0..6) as f64 } else { rng.random_range(0.0..1.0) };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        let s = ScorePairs { positive: pos.clone(), negative: neg.clone() };
        let e = (eer(&s).unwrap() - oracle_eer(&pos, &neg).value()).abs();
        let a = (roc_auc(&s).unwrap() - oracle_auc(&pos, &neg).value()).abs();
        worst = worst.max(e).max(a);
        if e > EXACT_TOLERANCE || a > EXACT_TOLERANCE {
            failures.push(format!("score set #{i} {pos:?} / {neg:?}"));
        }
    }

    let fixed = |pos: &[f64], neg: &[f64]| ScorePairs { positive: pos.to_vec(), negative: neg.to_vec() };
    let checks: [(&str, f64, f64); 6] = [
        ("eer separated", eer(&fixed(&[0.1, 0.2], &[0.3, 0.4])).unwrap(), 0.0),
        ("eer 1/3", eer(&fixed(&[0.1, 0.2, 0.6], &[0.3, 0.5, 0.7])).unwrap(), 1.0 / 3.0),
        ("eer inverted", eer(&fixed(&[0.8, 0.9], &[0.1, 0.2])).unwrap(), 1.0),
        ("auc separated", roc_auc(&fixed(&[0.1, 0.2], &[0.3, 0.4])).unwrap(), 1.0),
        ("auc identical", roc_auc(&fixed(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5),
        ("auc 0.75", roc_auc(&fixed(&[0.1, 0.6], &[0.3, 0.7])).unwrap(), 0.75),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > EXACT_TOLERANCE {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    }

    for f in partition_fixtures() {
        let p = LabeledPartition::new(f.clusters.iter().map(|c| c.chars().collect::<Vec<char>>()).collect()).unwrap();
        let (gp, ge, go) = (wcp(&p).unwrap(), wce(&p).unwrap(), oci_k(&p).unwrap());
        if (gp - f.wcp).abs() > EXACT_TOLERANCE || (ge - f.wce).abs() > WCE_TOLERANCE || go != f.oci {
            failures.push(format!("partition {:?}: got ({gp}, {ge}, {go})", f.clusters));
        }
    }
    let worked = LabeledPartition::new(vec![vec!['A', 'A', 'B'], vec!['B', 'B']]).unwrap();
    if (wce(&worked).unwrap() - 0.5510).abs() > WCE_TOLERANCE {
        failures.push("worked WCE example".into());
    }

    // curve endpoints on random traces
    for i in 0..50 {
        let n = rng.random_range(2..=12);
        let pts = draw_points(&mut rng, n, 2, false);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let curve = clustering_curve(&agglomerative(&pts).unwrap(), &labels, None).unwrap();
        let first = curve.points[0];
        let last = curve.points[curve.points.len() - 1];
        let max_class = (0..4).map(|c| labels.iter().filter(|&&l| l == c).count()).max().unwrap();
        if first.num_clusters != n || first.wcp != 1.0 || first.wce != 0.0 || first.oci_k != n {
            failures.push(format!("curve start #{i}"));
        }
        if last.num_clusters != 1 || last.oci_k != 1 + n - max_class || curve.points.len() != n {
            failures.push(format!("curve end #{i}"));
        }
    }
    let trace = agglomerative(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
    let curve = clustering_curve(&trace, &['A', 'A', 'B'], None).unwrap();
    let two = curve.at(2).unwrap();
    let one = curve.at(1).unwrap();
    if two.wcp != 1.0 || two.oci_k != 2 || (one.wcp - 2.0 / 3.0).abs() > EXACT_TOLERANCE || one.oci_k != 2 {
        failures.push("curve on {0,1,5}".into());
    }

    let pass = failures.is_empty();
    let mut detail = format!("{EER_INSTANCES} random score sets, max |eer/auc - oracle| {worst:.1e}; {} partition fixtures; 50 curves", partition_fixtures().len());
    if !pass {
        detail.push_str(&format!("; failures: {}", failures.iter().take(5).cloned().collect::<Vec<_>>().join(", ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 4. zero transfer weight

fn small_data(seed: u64) -> xmodal_core::data::Dataset {
    let cfg = SyntheticConfig { num_identities: 12, groups: 3, samples_per_identity: 4, seed, ..Default::default() };
    generate_synthetic(&cfg).unwrap().dataset
}

fn small_train(seed: u64) -> TrainConfig<f64> {
    TrainConfig { hidden_dim: 12, embedding_dim: 6, epochs: 4, clusters: Some(3), seed, ..TrainConfig::default() }
}

fn checkpoint_text(params: &EncoderParams<f64>, seed: u64) -> String {
    Checkpoint::new(params.clone(), seed).to_text()
}

fn zero_weight() -> Outcome {
    let mut diverged = Vec::new();
    let mut runs = 0;
    for seed in 0..3 {
        let data = small_data(seed);
        let source_cfg = small_train(seed);
        let (source, _) = train_source_encoder(&data.subset(Split::Train), &source_cfg).unwrap();
        let run = |kind: TransferKind, lambda: f64| {
            let mut target = TrainConfig { transfer: kind, ..small_train(seed) };
            target.loss.lambda = lambda;
            let cfg = ExperimentConfig { target, source: source_cfg.clone(), ideal_clusters: None };
            let r = run_experiment(&data, &cfg, Some(&source)).unwrap();
            checkpoint_text(&r.target, seed)
        };
        let baseline = run(TransferKind::None, 1.0);
        for kind in [TransferKind::Target, TransferKind::Relative, TransferKind::Structure] {
            runs += 1;
            if run(kind, 0.0) != baseline {
                diverged.push(format!("{kind} seed {seed}"));
            }
            // sanity: a positive weight does change the result
            if run(kind, 1.0) == baseline {
                diverged.push(format!("{kind} seed {seed} ignores a positive weight"));
            }
        }
    }
    let detail = if diverged.is_empty() {
        format!("{runs} zero-weight runs byte-identical to the baseline checkpoint")
    } else {
        format!("diverged: {}", diverged.join(", "))
    };
    Outcome::new(diverged.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 5. transfer beats the audio-only baseline

fn direction_data(seed: u64, share: f64) -> xmodal_core::data::Dataset {
    let cfg = SyntheticConfig {
        num_identities: 40,
        groups: 5,
        crossmodal_share: share,
        latent_dim: 4,
        audio_frame_dim: 256,
        noise_sigma_audio: 2.0,
        samples_per_identity: 3,
        group_spread: 0.2,
        seed,
        ..Default::default()
    };
    generate_synthetic(&cfg).unwrap().dataset
}

fn direction_config(kind: TransferKind, seed: u64) -> TrainConfig<f64> {
    TrainConfig { transfer: kind, clusters: Some(10), seed, ..TrainConfig::default() }
}

/// Test EER for the baseline and each transfer kind on one dataset.
fn eers(seed: u64, share: f64) -> [f64; 4] {
    let data = direction_data(seed, share);
    let source_cfg = direction_config(TransferKind::None, seed);
    let (source, _) = train_source_encoder(&data.subset(Split::Train), &source_cfg).unwrap();
    let mut out = [0.0; 4];
    for (slot, kind) in out.iter_mut().zip(TransferKind::ALL) {
        let cfg = ExperimentConfig { target: direction_config(kind, seed), source: source_cfg.clone(), ideal_clusters: None };
        let r = run_experiment(&data, &cfg, Some(&source)).unwrap();
        let test = data.subset(Split::Test);
        let index = test.identity_index();
        let (seqs, _) = test.sequences(Modality::Audio, &index).unwrap();
        let pooled: Vec<Vec<f64>> = seqs.iter().map(|s| mean_pool(s).unwrap()).collect();
        encode(&r.target, &pooled);
        *slot = r.evaluation.eer;
    }
    out
}

/// One-sided sign test: P(at least `wins` successes of `n` fair coin flips).
fn sign_test(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0_f64; // C(n, 0)
    for k in 0..=n {
        if k >= wins {
            total += c;
        }
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

struct Direction {
    wins: usize,
    n: usize,
    mean_gain: f64,
    p: f64,
}

fn summarize(rows: &[[f64; 4]], kind: usize) -> Direction {
    let n = rows.len();
    let wins = rows.iter().filter(|r| r[kind] < r[0]).count();
    let mean_gain = rows.iter().map(|r| r[0] - r[kind]).sum::<f64>() / n as f64;
    Direction { wins, n, mean_gain, p: sign_test(wins, n) }
}

fn direction() -> Outcome {
    let rows: Vec<[f64; 4]> = DIRECTION_SEEDS.map(|s| eers(s, 1.0)).collect();
    let control: Vec<[f64; 4]> = CONTROL_SEEDS.map(|s| eers(s, 0.0)).collect();
    let mean = |rows: &[[f64; 4]], k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    let mut pass = true;
    let mut parts = vec![format!("baseline EER {:.4}", mean(&rows, 0))];
    for (k, kind) in TransferKind::ALL.iter().enumerate().skip(1) {
        let d = summarize(&rows, k);
        pass &= d.mean_gain > 0.0 && d.p < SIGN_TEST_ALPHA;
        parts.push(format!("{kind} {:.4} (wins {}/{}, gain {:+.4}, p {:.4})", mean(&rows, k), d.wins, d.n, d.mean_gain, d.p));
    }
    let ctrl: Vec<String> = TransferKind::ALL
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, kind)| {
            let d = summarize(&control, k);
            format!("{kind} wins {}/{} gain {:+.4}", d.wins, d.n, d.mean_gain)
        })
        .collect();
    parts.push(format!("share=0 control: {}", ctrl.join(", ")));
    Outcome::new(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 6. unit norm and determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for kind in TransferKind::ALL {
        let mut files = Vec::new();
        for rep in 0..2 {
            let data = small_data(7);
            let mut target = small_train(7);
            target.transfer = kind;
            let cfg = ExperimentConfig { target, source: small_train(7), ideal_clusters: None };
            let r = run_experiment(&data, &cfg, None).unwrap();
            let hist = dir.path().join(format!("{kind}-{rep}.csv"));
            let src_hist = dir.path().join(format!("{kind}-{rep}-source.csv"));
            export_history_csv(&r.history, &hist).unwrap();
            export_history_csv(&r.source_history, &src_hist).unwrap();
            let test = data.subset(Split::Test);
            let index = test.identity_index();
            let (seqs, _) = test.sequences(Modality::Audio, &index).unwrap();
            let pooled: Vec<Vec<f64>> = seqs.iter().map(|s| mean_pool(s).unwrap()).collect();
            encode(&r.target, &pooled);
            files.push((
                std::fs::read(&hist).unwrap(),
                std::fs::read(&src_hist).unwrap(),
                checkpoint_text(&r.target, 7),
                checkpoint_text(&r.source, 7),
            ));
        }
        if files[0] != files[1] {
            differing.push(kind.to_string());
        }
    }
    let (dev, count) = *NORM_DEVIATION.lock().unwrap();
    let pass = differing.is_empty() && dev <= NORM_TOLERANCE && count > 0;
    let mut detail = format!("{count} encoder outputs, max | |e| - 1 | {dev:.1e}; repeated runs byte-identical for {} kinds", 4 - differing.len());
    if !differing.is_empty() {
        detail.push_str(&format!("; differing: {}", differing.join(", ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 7. crossmodal retrieval

fn crossmodal() -> Outcome {
    let mut av = Vec::new();
    let mut va = Vec::new();
    for &seed in &RETRIEVAL_SEEDS {
        let data = direction_data(seed, 1.0);
        let cfg = ExperimentConfig {
            target: direction_config(TransferKind::Target, seed),
            source: direction_config(TransferKind::None, seed),
            ideal_clusters: None,
        };
        let r = run_experiment(&data, &cfg, None).unwrap();
        let test = data.subset(Split::Test);
        let res = retrieval(&r.target, &r.source, &test, RETRIEVAL_QUERIES, RetrievalScore::HitRate, seed).unwrap();
        for s in &res {
            match (s.query, s.gallery) {
                (Modality::Audio, Modality::Visual) => av.push(s.prec[0]),
                (Modality::Visual, Modality::Audio) => va.push(s.prec[0]),
                _ => {}
            }
        }
        let index = test.identity_index();
        for m in [Modality::Audio, Modality::Visual] {
            let params = if m == Modality::Audio { &r.target } else { &r.source };
            let (seqs, _) = test.sequences(m, &index).unwrap();
            let pooled: Vec<Vec<f64>> = seqs.iter().map(|s| mean_pool(s).unwrap()).collect();
            encode(params, &pooled);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_av, m_va) = (mean(&av), mean(&va));
    let need = CHANCE + RETRIEVAL_MARGIN_OVER_CHANCE;
    Outcome::new(
        m_av >= need && m_va >= need,
        format!(
            "hit@1 audio->visual {m_av:.3}, visual->audio {m_va:.3} over {RETRIEVAL_QUERIES} queries x {} seeds (need >= {need:.2})",
            RETRIEVAL_SEEDS.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. clustering

fn clustering() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut iterations = 0;
    for i in 0..KMEANS_INSTANCES {
        let n = rng.random_range(2..=30);
        let k = rng.random_range(1..=n.min(6));
        let d = rng.random_range(1..=4);
        let pts = draw_points(&mut rng, n, d, i % 3 == 0);
        let r = kmeans(&pts, k, rng.random()).unwrap();
        iterations += r.inertia_history.len();
        if r.inertia_history.windows(2).any(|w| w[1] > w[0] + INERTIA_SLACK * (1.0 + w[0])) {
            failures.push(format!("inertia increased on instance #{i}"));
        }
        let recomputed: f64 = pts.iter().zip(&r.assignment).map(|(p, &c)| dist(p, &r.centers[c]).powi(2)).sum();
        if (recomputed - r.inertia).abs() > 1e-9 * (1.0 + recomputed) {
            failures.push(format!("inertia mismatch on instance #{i}"));
        }
    }

    let line: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&x| vec![x]).collect();
    let r = kmeans(&line, 2, 0).unwrap();
    let a = &r.assignment;
    let mut centers: Vec<f64> = r.centers.iter().map(|c| c[0]).collect();
    centers.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if !(a[0] == a[1] && a[2] == a[3] && a[0] != a[2] && centers == [0.5, 10.5]) {
        failures.push(format!("{{0,1,10,11}}: assignment {a:?}, centers {centers:?}"));
    }
    let mapping = cluster_mapping(&r, &[7, 8, 9, 10]);
    if mapping.map[&7] != mapping.map[&8] || mapping.map[&9] != mapping.map[&10] || mapping.map[&7] == mapping.map[&9] {
        failures.push("cluster mapping of {0,1,10,11}".into());
    }

    let trace = agglomerative(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
    let got: Vec<(usize, usize, f64, usize, usize)> = trace.merges.iter().map(|m| (m.a, m.b, m.distance, m.merged, m.size)).collect();
    let want = vec![(0, 1, 1.0, 3, 2), (2, 3, 4.5, 4, 3)];
    if got != want {
        failures.push(format!("{{0,1,5}} trace {got:?}"));
    }

    let pass = failures.is_empty();
    let mut detail = format!("{KMEANS_INSTANCES} k-means runs ({iterations} Lloyd steps) with non-increasing inertia; {{0,1}}/{{10,11}} recovered; {{0,1,5}} trace exact");
    if !pass {
        detail = format!("failures: {}", failures.join(", "));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------

fn main() {
    let started = Instant::now();
    type Check = fn() -> Outcome;
    // determinism runs last so it sees every encoder output produced above
    let order: [(usize, &str, Check); 8] = [
        (1, "gradient correctness", gradients),
        (2, "triplet-set oracle equivalence", triplet_sets),
        (3, "metric oracles", metrics),
        (4, "zero transfer weight reduces to baseline", zero_weight),
        (5, "transfer lowers test EER", direction),
        (7, "crossmodal retrieval above chance", crossmodal),
        (8, "clustering components", clustering),
        (6, "hypersphere and determinism", determinism),
    ];
    let mut results: Vec<(usize, &str, Outcome, f64)> = order
        .iter()
        .map(|&(id, name, check)| {
            let t = Instant::now();
            let outcome = check();
            (id, name, outcome, t.elapsed().as_secs_f64())
        })
        .collect();
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, outcome, secs) in &results {
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {status}: {name} [{secs:.1}s] {}", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("acceptance: {}/{} passed in {:.1}s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
