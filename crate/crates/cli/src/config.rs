//! Plain-text `key = value` run configuration shared by config files and
//! command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use xmodal_core::data::SyntheticConfig;
use xmodal_core::embedding::LossConfig;
use xmodal_core::mining::{MiningPolicy, StructureRule};
use xmodal_core::model::{TrainConfig, TransferKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Eval,
    Sweep,
}

const GEN_KEYS: &[&str] = &[
    "identities",
    "groups",
    "latent_dim",
    "audio_dim",
    "visual_dim",
    "frames",
    "samples",
    "noise_audio",
    "noise_visual",
    "share",
    "group_spread",
    "test_fraction",
    "seed",
    "out",
];

const TRAIN_KEYS: &[&str] = &[
    "data",
    "out",
    "source",
    "transfer",
    "lambda",
    "margin",
    "transfer_margin",
    "lr",
    "clusters",
    "epochs",
    "source_epochs",
    "hidden",
    "embedding_dim",
    "batch_identities",
    "samples_per_identity",
    "transfer_cap",
    "mining",
    "structure_rule",
    "renormalize_centroids",
    "seed",
];

const EVAL_KEYS: &[&str] = &["data", "model", "out", "ideal_clusters", "retrieval", "queries", "strict", "svg", "run_id", "seed"];

const SWEEP_ONLY_KEYS: &[&str] = &["seeds", "ideal_clusters", "svg"];

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
        }
    }

    pub fn accepts(self, key: &str) -> bool {
        match self {
            Command::Gen => GEN_KEYS.contains(&key),
            Command::Train => TRAIN_KEYS.contains(&key),
            Command::Eval => EVAL_KEYS.contains(&key),
            Command::Sweep => (TRAIN_KEYS.contains(&key) && key != "source") || SWEEP_ONLY_KEYS.contains(&key),
        }
    }
}

/// Configuration problem, reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration key `{}`: {}", self.key, self.message)
    }
}

impl From<xmodal_core::Error> for ConfigError {
    fn from(e: xmodal_core::Error) -> Self {
        match e {
            xmodal_core::Error::InvalidConfig { key, reason } => ConfigError::new(key, reason),
            other => ConfigError::new("config", other.to_string()),
        }
    }
}

/// Merged view of every setting a command may need.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig<f64>,
    pub margin: f64,
    pub transfer_margin: Option<f64>,
    pub lambda: f64,
    pub source_epochs: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub ideal_clusters: Option<usize>,
    pub retrieval: bool,
    pub queries: usize,
    pub strict: bool,
    pub svg: bool,
    pub run_id: Option<String>,
    pub transfers: Vec<TransferKind>,
    pub lambdas: Vec<f64>,
    pub cluster_counts: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::<f64>::default();
        Self {
            synthetic: SyntheticConfig::default(),
            margin: train.loss.margin,
            transfer_margin: None,
            lambda: train.loss.lambda,
            train,
            source_epochs: None,
            data: None,
            out: None,
            model: None,
            source: None,
            ideal_clusters: None,
            retrieval: false,
            queries: 500,
            strict: false,
            svg: false,
            run_id: None,
            transfers: vec![TransferKind::Target],
            lambdas: vec![1.0],
            cluster_counts: Vec::new(),
            seeds: vec![0],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::new(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError::new(key, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    let items = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::new(key, "empty list"));
    }
    Ok(items)
}

/// Seeds as a comma list whose items may be inclusive ranges `a..b`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>, ConfigError> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse("seeds", a)?, parse("seeds", b.trim_start_matches('='))?);
                if a > b {
                    return Err(ConfigError::new("seeds", format!("empty range `{item}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse("seeds", item)?),
        }
    }
    if out.is_empty() {
        return Err(ConfigError::new("seeds", "empty list"));
    }
    Ok(out)
}

fn parse_mining(value: &str) -> Result<(bool, bool), ConfigError> {
    match value.trim() {
        "both" | "hard+semihard" => Ok((true, true)),
        "hard" => Ok((true, false)),
        "semihard" => Ok((false, true)),
        other => Err(ConfigError::new("mining", format!("expected both, hard or semihard, got `{other}`"))),
    }
}

fn parse_rule(value: &str) -> Result<StructureRule, ConfigError> {
    match value.trim() {
        "same-cluster" => Ok(StructureRule::SameClusterPositive),
        "literal" => Ok(StructureRule::Literal),
        other => Err(ConfigError::new("structure_rule", format!("expected same-cluster or literal, got `{other}`"))),
    }
}

/// Normalizes `--flag-name` style keys to `flag_name`.
pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl RunConfig {
    /// Applies one setting, rejecting keys the command does not know.
    pub fn set(&mut self, command: Command, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = normalize_key(key);
        let k = key.as_str();
        if !command.accepts(k) {
            return Err(ConfigError::new(k, format!("unknown key for `{}`", command.name())));
        }
        let sweep = command == Command::Sweep;
        let s = &mut self.synthetic;
        let t = &mut self.train;
        match k {
            "identities" => s.num_identities = parse(k, value)?,
            "groups" => s.groups = parse(k, value)?,
            "latent_dim" => s.latent_dim = parse(k, value)?,
            "audio_dim" => s.audio_frame_dim = parse(k, value)?,
            "visual_dim" => s.visual_frame_dim = parse(k, value)?,
            "frames" => s.frames_per_audio_sample = parse(k, value)?,
            "samples" => s.samples_per_identity = parse(k, value)?,
            "noise_audio" => s.noise_sigma_audio = parse(k, value)?,
            "noise_visual" => s.noise_sigma_visual = parse(k, value)?,
            "share" => s.crossmodal_share = parse(k, value)?,
            "group_spread" => s.group_spread = parse(k, value)?,
            "test_fraction" => s.test_fraction = parse(k, value)?,
            "seed" => {
                let seed = parse(k, value)?;
                s.seed = seed;
                t.seed = seed;
            }
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "data" => self.data = Some(PathBuf::from(value.trim())),
            "model" => self.model = Some(PathBuf::from(value.trim())),
            "source" => self.source = Some(PathBuf::from(value.trim())),
            "transfer" if sweep => self.transfers = parse_list(k, value)?,
            "transfer" => t.transfer = parse(k, value)?,
            "lambda" if sweep => self.lambdas = parse_list(k, value)?,
            "lambda" => self.lambda = parse(k, value)?,
            "margin" => self.margin = parse(k, value)?,
            "transfer_margin" => self.transfer_margin = Some(parse(k, value)?),
            "lr" => t.learning_rate = parse(k, value)?,
            "clusters" if sweep => self.cluster_counts = parse_list(k, value)?,
            "clusters" => t.clusters = Some(parse(k, value)?),
            "epochs" => t.epochs = parse(k, value)?,
            "source_epochs" => self.source_epochs = Some(parse(k, value)?),
            "hidden" => t.hidden_dim = parse(k, value)?,
            "embedding_dim" => t.embedding_dim = parse(k, value)?,
            "batch_identities" => t.batch_identities = parse(k, value)?,
            "samples_per_identity" => t.samples_per_identity = parse(k, value)?,
            "transfer_cap" => t.transfer_cap = parse(k, value)?,
            "mining" => {
                let (hard, semi) = parse_mining(value)?;
                t.mining = MiningPolicy::new(hard, semi, t.mining.cap, t.mining.seed)?;
            }
            "structure_rule" => t.structure_rule = parse_rule(value)?,
            "renormalize_centroids" => t.renormalize_centroids = parse_bool(k, value)?,
            "ideal_clusters" => self.ideal_clusters = Some(parse(k, value)?),
            "retrieval" => self.retrieval = parse_bool(k, value)?,
            "queries" => self.queries = parse(k, value)?,
            "strict" => self.strict = parse_bool(k, value)?,
            "svg" => self.svg = parse_bool(k, value)?,
            "run_id" => self.run_id = Some(value.trim().to_owned()),
            "seeds" => self.seeds = parse_seeds(value)?,
            _ => return Err(ConfigError::new(k, "unhandled key")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file.
    pub fn apply_file(&mut self, command: Command, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        self.apply_text(command, &text)
    }

    pub fn apply_text(&mut self, command: Command, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new("config", format!("line {}: expected `key = value`", n + 1)))?;
            self.set(command, key, value)?;
        }
        Ok(())
    }

    /// Loss and training settings with margins and weight folded in.
    pub fn train_config(&self) -> Result<TrainConfig<f64>, ConfigError> {
        let mut loss = LossConfig::new(self.margin, self.lambda)?;
        if let Some(m) = self.transfer_margin {
            loss = loss.with_transfer_margin(m)?;
        }
        let cfg = TrainConfig { loss, ..self.train.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Settings for the source encoder: no transfer, its own epoch count.
    pub fn source_config(&self) -> Result<TrainConfig<f64>, ConfigError> {
        let base = self.train_config()?;
        Ok(TrainConfig {
            transfer: TransferKind::None,
            epochs: self.source_epochs.unwrap_or(base.epochs),
            clusters: None,
            ..base
        })
    }

    pub fn require_path(&self, key: &'static str) -> Result<&Path, ConfigError> {
        let p = match key {
            "data" => &self.data,
            "out" => &self.out,
            "model" => &self.model,
            _ => &None,
        };
        p.as_deref().ok_or_else(|| ConfigError::new(key, "required"))
    }

    /// Resolved training settings as a re-loadable `key = value` file.
    pub fn to_train_text(&self) -> String {
        let t = &self.train;
        let mut lines = vec![
            "# resolved training configuration".to_owned(),
            format!("transfer = {}", t.transfer),
            format!("lambda = {}", self.lambda),
            format!("margin = {}", self.margin),
        ];
        if let Some(m) = self.transfer_margin {
            lines.push(format!("transfer_margin = {m}"));
        }
        lines.push(format!("lr = {}", t.learning_rate));
        if let Some(c) = t.clusters {
            lines.push(format!("clusters = {c}"));
        }
        lines.extend([
            format!("epochs = {}", t.epochs),
            format!("source_epochs = {}", self.source_epochs.unwrap_or(t.epochs)),
            format!("hidden = {}", t.hidden_dim),
            format!("embedding_dim = {}", t.embedding_dim),
            format!("batch_identities = {}", t.batch_identities),
            format!("samples_per_identity = {}", t.samples_per_identity),
            format!("transfer_cap = {}", t.transfer_cap),
            format!(
                "mining = {}",
                match (t.mining.use_hard, t.mining.use_semihard) {
                    (true, true) => "both",
                    (true, false) => "hard",
                    _ => "semihard",
                }
            ),
            format!(
                "structure_rule = {}",
                match t.structure_rule {
                    StructureRule::SameClusterPositive => "same-cluster",
                    StructureRule::Literal => "literal",
                }
            ),
            format!("renormalize_centroids = {}", t.renormalize_centroids),
            format!("seed = {}", t.seed),
        ]);
        lines.join("\n") + "\n"
    }
}
