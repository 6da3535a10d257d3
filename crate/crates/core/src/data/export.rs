use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CurvePoint;
use crate::model::EpochStats;

pub const METRICS_HEADER: [&str; 10] =
    ["run_id", "transfer_kind", "lambda", "clusters", "eer", "auc", "min_ocik", "min_ocik_nclusters", "ocik_at_ideal", "seed"];

pub const SWEEP_HEADER: [&str; 14] = [
    "row_kind",
    "run_id",
    "transfer_kind",
    "lambda",
    "clusters",
    "eer",
    "auc",
    "min_ocik",
    "min_ocik_nclusters",
    "ocik_at_ideal",
    "seed",
    "eer_std",
    "min_ocik_std",
    "n_runs",
];

/// One evaluated run. Optional fields are written as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub transfer_kind: String,
    pub lambda: f64,
    pub clusters: Option<usize>,
    pub eer: f64,
    pub auc: f64,
    pub min_ocik: usize,
    pub min_ocik_nclusters: usize,
    pub ocik_at_ideal: Option<usize>,
    pub seed: u64,
}

/// A sweep row: either one run (`row_kind = "run"`) or the mean and standard
/// deviation over the seeds of one grid point (`row_kind = "summary"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub row_kind: String,
    pub run_id: String,
    pub transfer_kind: String,
    pub lambda: f64,
    pub clusters: Option<usize>,
    pub eer: f64,
    pub auc: f64,
    pub min_ocik: f64,
    pub min_ocik_nclusters: Option<usize>,
    pub ocik_at_ideal: Option<f64>,
    pub seed: Option<u64>,
    pub eer_std: Option<f64>,
    pub min_ocik_std: Option<f64>,
    pub n_runs: usize,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the metrics table; an empty slice yields a header-only file.
pub fn export_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), &METRICS_HEADER, rows)
}

pub fn export_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), &SWEEP_HEADER, rows)
}

pub fn export_history_csv(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record([
        "epoch",
        "batches",
        "primary_loss",
        "transfer_loss",
        "total_loss",
        "primary_triplets",
        "transfer_found",
        "transfer_used",
    ])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.batches.to_string(),
            h.primary_loss.to_string(),
            h.transfer_loss.to_string(),
            h.total_loss.to_string(),
            h.primary_triplets.to_string(),
            h.transfer_found.to_string(),
            h.transfer_used.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn export_curve_csv(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["num_clusters", "wcp", "wce", "oci_k"])?;
    for p in points {
        w.write_record([p.num_clusters.to_string(), p.wcp.to_string(), p.wce.to_string(), p.oci_k.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sidecar ground-truth groups, one `identity,group` row per identity.
pub fn save_groups_csv(groups: &BTreeMap<String, usize>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["identity", "group"])?;
    for (id, g) in groups {
        w.write_record([id.as_str(), &g.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_groups_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let (id, g): (String, usize) = row?;
        out.insert(id, g);
    }
    Ok(out)
}
