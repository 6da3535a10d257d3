use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use xmodal_core::data::{
    export_curve_csv, export_history_csv, export_metrics_csv, export_sweep_csv, generate_synthetic, load_jsonl, save_groups_csv,
    save_jsonl, Dataset, MetricsRow, Split, SweepRow,
};
use xmodal_core::embedding::Modality;
use xmodal_core::experiment::{
    build_source, evaluate, retrieval, run_experiment, train_source_encoder, train_target_encoder, Evaluation, ExperimentConfig,
};
use xmodal_core::metrics::RetrievalScore;
use xmodal_core::model::{load_checkpoint, save_checkpoint, Checkpoint, EncoderParams, EpochStats, TrainConfig, TransferKind};
use xmodal_core::Error;

use crate::config::{Command, ConfigError, RunConfig};
use crate::svg::{line_plot, Series};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const GROUPS_FILE: &str = "groups.csv";
pub const TARGET_CKPT: &str = "target.ckpt";
pub const SOURCE_CKPT: &str = "source.ckpt";
pub const RUN_CONF: &str = "run.conf";

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Core(Error),
    /// Some sweep runs failed; the rest completed.
    Partial { failed: usize, total: usize },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } => Failure::Config(e.into()),
            other => Failure::Core(other),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Partial { .. } => 1,
            Failure::Config(_) => 2,
            Failure::Core(Error::NonFiniteLoss { .. } | Error::ZeroVector) => 4,
            Failure::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Partial { failed, total } => write!(f, "{failed} of {total} sweep runs failed"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Core(Error::Io { path: path.to_owned(), source: e }))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Core(Error::Io { path: path.to_owned(), source: e }))
}

pub fn gen(cfg: &RunConfig) -> Outcome {
    cfg.synthetic.validate()?;
    let out = cfg.require_path("out")?;
    let data = generate_synthetic(&cfg.synthetic)?;
    create_dir(out)?;
    save_jsonl(&data.dataset, out.join(DATASET_FILE))?;
    save_groups_csv(&data.groups, out.join(GROUPS_FILE))?;
    let ds = &data.dataset;
    println!(
        "identities {} (train {}, test {}), audio samples {}, visual samples {}",
        ds.identities().len(),
        ds.subset(Split::Train).identities().len(),
        ds.subset(Split::Test).identities().len(),
        ds.count(Modality::Audio),
        ds.count(Modality::Visual)
    );
    println!("wrote {} and {}", out.join(DATASET_FILE).display(), out.join(GROUPS_FILE).display());
    Ok(())
}

fn log_history(label: &str, kind: TransferKind, history: &[EpochStats]) {
    for h in history {
        println!(
            "{label} epoch {:>4} loss {:.6} primary {:.6} transfer {:.6} triplets {} |T_{}| {} used {}",
            h.epoch,
            h.total_loss,
            h.primary_loss,
            h.transfer_loss,
            h.primary_triplets,
            match kind {
                TransferKind::None => "none",
                TransferKind::Target => "tar",
                TransferKind::Relative => "rel",
                TransferKind::Structure => "str",
            },
            h.transfer_found,
            h.transfer_used
        );
    }
}

fn load_split(path: &Path, split: Split) -> Result<Dataset, Failure> {
    let ds = load_jsonl(path)?.subset(split);
    if ds.is_empty() {
        let name = if split == Split::Train { "train" } else { "test" };
        return Err(Error::InsufficientData(format!("{} has no {name} samples", path.display())).into());
    }
    Ok(ds)
}

pub fn train(cfg: &RunConfig) -> Outcome {
    let target_cfg = cfg.train_config()?;
    let source_cfg = cfg.source_config()?;
    let data = cfg.require_path("data")?;
    let out = cfg.require_path("out")?;
    let train_set = load_split(data, Split::Train)?;
    if target_cfg.transfer != TransferKind::None {
        train_set.require_both_modalities()?;
    }

    let source = match &cfg.source {
        Some(path) => load_checkpoint::<f64>(path)?.params,
        None => {
            let (params, history) = train_source_encoder(&train_set, &source_cfg)?;
            log_history("source", TransferKind::None, &history);
            create_dir(out)?;
            export_history_csv(&history, out.join("source_history.csv"))?;
            params
        }
    };
    let transfer = match target_cfg.transfer {
        TransferKind::None => None,
        _ => Some(build_source(&source, &train_set, &target_cfg)?),
    };
    let (target, history) = train_target_encoder(&train_set, transfer.as_ref(), &target_cfg)?;
    log_history("target", target_cfg.transfer, &history);

    create_dir(out)?;
    save_checkpoint(&Checkpoint::new(source, source_cfg.seed), out.join(SOURCE_CKPT))?;
    save_checkpoint(&Checkpoint::new(target, target_cfg.seed), out.join(TARGET_CKPT))?;
    export_history_csv(&history, out.join("history.csv"))?;
    write_text(&out.join(RUN_CONF), &cfg.to_train_text())?;
    println!("wrote {}", out.join(TARGET_CKPT).display());
    Ok(())
}

fn run_id(kind: TransferKind, lambda: f64, clusters: Option<usize>, seed: u64) -> String {
    match clusters {
        Some(c) => format!("{kind}-l{lambda}-c{c}-s{seed}"),
        None => format!("{kind}-l{lambda}-s{seed}"),
    }
}

fn metrics_row(id: String, t: &TrainConfig<f64>, e: &Evaluation) -> MetricsRow {
    MetricsRow {
        run_id: id,
        transfer_kind: t.transfer.to_string(),
        lambda: t.loss.lambda,
        clusters: if t.transfer == TransferKind::Structure { t.clusters } else { None },
        eer: e.eer,
        auc: e.auc,
        min_ocik: e.curve.min_oci_k,
        min_ocik_nclusters: e.curve.min_oci_k_clusters,
        ocik_at_ideal: e.curve.oci_k_at_ideal,
        seed: t.seed,
    }
}

fn curve_svg(e: &Evaluation) -> (String, String) {
    let pts = |f: &dyn Fn(&xmodal_core::metrics::CurvePoint) -> f64| -> Vec<(f64, f64)> {
        e.curve.points.iter().map(|p| (p.num_clusters as f64, f(p))).collect()
    };
    let quality = line_plot(
        "Clustering quality",
        "number of clusters",
        "value",
        &[Series { name: "WCP".into(), points: pts(&|p| p.wcp) }, Series { name: "WCE".into(), points: pts(&|p| p.wce) }],
    );
    let clicks = line_plot(
        "Operator clicks",
        "number of clusters",
        "OCI-k",
        &[Series { name: "OCI-k".into(), points: pts(&|p| p.oci_k as f64) }],
    );
    (quality, clicks)
}

pub fn eval(cfg: &RunConfig) -> Outcome {
    let data = cfg.require_path("data")?;
    let model = cfg.require_path("model")?;
    let out = cfg.require_path("out")?;
    let test_set = load_split(data, Split::Test)?;
    let target = load_checkpoint::<f64>(model.join(TARGET_CKPT))?.params;

    let mut run = RunConfig::default();
    let conf = model.join(RUN_CONF);
    if conf.exists() {
        run.apply_file(Command::Train, &conf)?;
    }
    let t = run.train_config()?;
    let evaluation = evaluate(&target, &test_set, Modality::Audio, cfg.ideal_clusters)?;
    let id = cfg.run_id.clone().unwrap_or_else(|| run_id(t.transfer, t.loss.lambda, t.clusters.filter(|_| t.transfer == TransferKind::Structure), t.seed));

    create_dir(out)?;
    export_metrics_csv(&[metrics_row(id, &t, &evaluation)], out.join("metrics.csv"))?;
    export_curve_csv(&evaluation.curve.points, out.join("curve.csv"))?;
    println!(
        "eer {:.4} auc {:.4} min_ocik {} at {} clusters, ocik at {} clusters {}",
        evaluation.eer,
        evaluation.auc,
        evaluation.curve.min_oci_k,
        evaluation.curve.min_oci_k_clusters,
        evaluation.ideal_clusters,
        evaluation.curve.oci_k_at_ideal.map_or("n/a".into(), |v| v.to_string())
    );
    if cfg.svg {
        let (quality, clicks) = curve_svg(&evaluation);
        write_text(&out.join("curve.svg"), &quality)?;
        write_text(&out.join("ocik.svg"), &clicks)?;
    }

    if cfg.retrieval {
        let source = load_checkpoint::<f64>(model.join(SOURCE_CKPT))?.params;
        let score = if cfg.strict { RetrievalScore::StrictPrecision } else { RetrievalScore::HitRate };
        let results = retrieval(&target, &source, &test_set, cfg.queries, score, cfg.synthetic.seed)?;
        let mut text = String::from("query,gallery,queries,k,prec\n");
        let mut series = Vec::new();
        for r in &results {
            for (k, p) in r.prec.iter().enumerate() {
                text.push_str(&format!("{},{},{},{},{}\n", r.query.as_str(), r.gallery.as_str(), r.queries, k + 1, p));
            }
            println!("retrieval {}->{} prec@1 {:.4}", r.query.as_str(), r.gallery.as_str(), r.prec[0]);
            series.push(Series {
                name: format!("{}->{}", r.query.as_str(), r.gallery.as_str()),
                points: r.prec.iter().enumerate().map(|(k, &p)| ((k + 1) as f64, p)).collect(),
            });
        }
        write_text(&out.join("retrieval.csv"), &text)?;
        if cfg.svg {
            write_text(&out.join("retrieval.svg"), &line_plot("Retrieval", "K", "Prec@K", &series))?;
        }
    }
    Ok(())
}

struct Job {
    point: usize,
    config: TrainConfig<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sweep(cfg: &RunConfig) -> Outcome {
    let data = cfg.require_path("data")?;
    let out = cfg.require_path("out")?;
    let base = cfg.train_config()?;
    let dataset = load_jsonl(data)?;
    if dataset.subset(Split::Test).is_empty() {
        return Err(Error::InsufficientData(format!("{} has no test samples", data.display())).into());
    }

    // grid points: (kind, lambda, clusters)
    let mut points: Vec<(TransferKind, f64, Option<usize>)> = Vec::new();
    for &kind in &cfg.transfers {
        match kind {
            TransferKind::None => points.push((kind, 0.0, None)),
            TransferKind::Structure => {
                if cfg.cluster_counts.is_empty() {
                    return Err(ConfigError::new("clusters", "structure transfer needs at least one cluster count").into());
                }
                for &l in &cfg.lambdas {
                    for &c in &cfg.cluster_counts {
                        points.push((kind, l, Some(c)));
                    }
                }
            }
            _ => points.extend(cfg.lambdas.iter().map(|&l| (kind, l, None))),
        }
    }
    let mut jobs = Vec::new();
    for (p, &(kind, lambda, clusters)) in points.iter().enumerate() {
        for &seed in &cfg.seeds {
            let mut config = TrainConfig { transfer: kind, clusters, seed, ..base.clone() };
            config.loss.lambda = lambda;
            config.validate()?;
            jobs.push(Job { point: p, config });
        }
    }

    let source_cfg = cfg.source_config()?;
    let train_set = dataset.subset(Split::Train);
    let sources: BTreeMap<u64, Result<EncoderParams<f64>, String>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..source_cfg.clone() };
            (seed, train_source_encoder(&train_set, &c).map(|r| r.0).map_err(|e| e.to_string()))
        })
        .collect();

    let results: Vec<Result<MetricsRow, String>> = jobs
        .par_iter()
        .map(|job| {
            let source = sources[&job.config.seed].as_ref().map_err(|e| format!("source encoder: {e}"))?;
            let exp = ExperimentConfig { target: job.config.clone(), source: source_cfg.clone(), ideal_clusters: cfg.ideal_clusters };
            let r = run_experiment(&dataset, &exp, Some(source)).map_err(|e| e.to_string())?;
            let (kind, lambda, clusters) = points[job.point];
            Ok(metrics_row(run_id(kind, lambda, clusters, job.config.seed), &job.config, &r.evaluation))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failed = 0;
    let mut per_point: Vec<Vec<&MetricsRow>> = vec![Vec::new(); points.len()];
    for (job, res) in jobs.iter().zip(&results) {
        match res {
            Ok(m) => {
                per_point[job.point].push(m);
                rows.push(SweepRow {
                    row_kind: "run".into(),
                    run_id: m.run_id.clone(),
                    transfer_kind: m.transfer_kind.clone(),
                    lambda: m.lambda,
                    clusters: m.clusters,
                    eer: m.eer,
                    auc: m.auc,
                    min_ocik: m.min_ocik as f64,
                    min_ocik_nclusters: Some(m.min_ocik_nclusters),
                    ocik_at_ideal: m.ocik_at_ideal.map(|v| v as f64),
                    seed: Some(m.seed),
                    eer_std: None,
                    min_ocik_std: None,
                    n_runs: 1,
                });
            }
            Err(e) => {
                failed += 1;
                eprintln!("run {} seed {} failed: {e}", job.point, job.config.seed);
            }
        }
    }
    let mut summaries = Vec::new();
    for (p, &(kind, lambda, clusters)) in points.iter().enumerate() {
        let runs = &per_point[p];
        if runs.is_empty() {
            continue;
        }
        let (eer, eer_std) = mean_std(&runs.iter().map(|r| r.eer).collect::<Vec<_>>());
        let (auc, _) = mean_std(&runs.iter().map(|r| r.auc).collect::<Vec<_>>());
        let (ocik, ocik_std) = mean_std(&runs.iter().map(|r| r.min_ocik as f64).collect::<Vec<_>>());
        let ideal: Option<Vec<f64>> = runs.iter().map(|r| r.ocik_at_ideal.map(|v| v as f64)).collect();
        summaries.push(SweepRow {
            row_kind: "summary".into(),
            run_id: match clusters {
                Some(c) => format!("{kind}-l{lambda}-c{c}"),
                None => format!("{kind}-l{lambda}"),
            },
            transfer_kind: kind.to_string(),
            lambda,
            clusters,
            eer,
            auc,
            min_ocik: ocik,
            min_ocik_nclusters: None,
            ocik_at_ideal: ideal.map(|v| mean_std(&v).0),
            seed: None,
            eer_std: Some(eer_std),
            min_ocik_std: Some(ocik_std),
            n_runs: runs.len(),
        });
        println!("{kind} lambda {lambda} clusters {clusters:?}: eer {eer:.4} ± {eer_std:.4}, min ocik {ocik:.1} ({} runs)", runs.len());
    }

    create_dir(out)?;
    let mut all = rows;
    all.extend(summaries.iter().cloned());
    export_sweep_csv(&all, out.join("sweep.csv"))?;
    if cfg.svg {
        write_text(&out.join("sweep_eer.svg"), &sweep_svg(&summaries))?;
    }
    println!("wrote {}", out.join("sweep.csv").display());
    if failed > 0 {
        return Err(Failure::Partial { failed, total: jobs.len() });
    }
    Ok(())
}

/// Mean EER against lambda per transfer kind, or against cluster count for
/// structure transfer when several counts were swept.
fn sweep_svg(summaries: &[SweepRow]) -> String {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let by_clusters = summaries.iter().filter_map(|s| s.clusters).collect::<std::collections::BTreeSet<_>>().len() > 1;
    for s in summaries {
        let (name, x) = match (s.clusters, by_clusters) {
            (Some(c), true) => (format!("{} (lambda {})", s.transfer_kind, s.lambda), c as f64),
            _ => (s.transfer_kind.clone(), s.lambda),
        };
        series.entry(name).or_default().push((x, s.eer));
    }
    let series: Vec<Series> = series
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect();
    let x_label = if by_clusters { "number of clusters" } else { "lambda" };
    line_plot("Sweep: mean EER", x_label, "EER", &series)
}
