//! `xmodal`: generate synthetic crossmodal data, train audio encoders with
//! visual-to-audio transfer, evaluate, and sweep hyperparameters.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};

use commands::Failure;
use config::{Command, ConfigError, RunConfig};

/// (key, value name, help). Boolean keys have no value name.
const FLAGS: &[(&str, Option<&str>, &str)] = &[
    ("identities", Some("N"), "number of synthetic identities (default 40)"),
    ("groups", Some("G"), "latent attribute groups (default 5)"),
    ("latent_dim", Some("L"), "latent dimension (default 16)"),
    ("audio_dim", Some("D"), "audio frame dimension (default 20)"),
    ("visual_dim", Some("D"), "visual frame dimension (default 16)"),
    ("frames", Some("F"), "frames per audio sample (default 5)"),
    ("samples", Some("S"), "samples per identity and modality (default 6)"),
    ("noise_audio", Some("SIGMA"), "audio frame noise (default 0.5)"),
    ("noise_visual", Some("SIGMA"), "visual frame noise (default 0.1)"),
    ("share", Some("R"), "fraction of latent dims shared across modalities (default 1)"),
    ("group_spread", Some("SIGMA"), "spread of identity latents around their group (default 0.3)"),
    ("test_fraction", Some("F"), "fraction of identities held out for testing (default 0.25)"),
    ("seed", Some("SEED"), "random seed (default 0)"),
    ("seeds", Some("LIST"), "sweep seeds, e.g. 1..5 or 1,4,9"),
    ("data", Some("FILE"), "dataset in JSON-lines format"),
    ("model", Some("DIR"), "directory written by `train`"),
    ("source", Some("FILE"), "pre-trained visual encoder checkpoint"),
    ("out", Some("DIR"), "output directory"),
    ("transfer", Some("KIND"), "none | target | relative | structure (sweep: comma list)"),
    ("lambda", Some("W"), "transfer weight; default 1.0, tune per transfer kind (sweep: comma list)"),
    ("margin", Some("ALPHA"), "triplet margin (default 0.2)"),
    ("transfer_margin", Some("ALPHA"), "margin of the transfer term (default: --margin)"),
    ("lr", Some("ETA"), "RMSProp learning rate (default 1e-3)"),
    ("clusters", Some("C"), "K-Means clusters for structure transfer (sweep: comma list)"),
    ("epochs", Some("N"), "training epochs (default 50)"),
    ("source_epochs", Some("N"), "visual encoder epochs (default: --epochs)"),
    ("hidden", Some("H"), "hidden layer width (default 64)"),
    ("embedding_dim", Some("D"), "embedding dimension (default 128)"),
    ("batch_identities", Some("N"), "identities per mini-batch (default 8)"),
    ("samples_per_identity", Some("N"), "samples per identity in a mini-batch (default 4)"),
    ("transfer_cap", Some("N"), "max transfer triplets per epoch (default 10000)"),
    ("mining", Some("MODE"), "both | hard | semihard (default both)"),
    ("structure_rule", Some("RULE"), "same-cluster | literal (default same-cluster)"),
    ("renormalize_centroids", None, "project identity centroids onto the sphere"),
    ("ideal_clusters", Some("N"), "cluster count for OCI-k reporting (default: test identities)"),
    ("retrieval", None, "also evaluate crossmodal retrieval"),
    ("queries", Some("N"), "retrieval runs per setting (default 500)"),
    ("strict", None, "report hits/K instead of hit rate"),
    ("svg", None, "write SVG plots"),
    ("run_id", Some("ID"), "run identifier in the metrics CSV"),
];

fn subcommand(command: Command, about: &'static str) -> clap::Command {
    let mut c = clap::Command::new(command.name()).about(about).arg(
        Arg::new("config").long("config").value_name("FILE").value_parser(clap::value_parser!(PathBuf)).help("key = value settings file"),
    );
    for &(key, value, help) in FLAGS {
        if !command.accepts(key) {
            continue;
        }
        let arg = Arg::new(key).long(key.replace('_', "-")).help(help);
        c = c.arg(match value {
            Some(v) => arg.value_name(v).allow_hyphen_values(true),
            None => arg.action(ArgAction::SetTrue),
        });
    }
    c
}

fn cli() -> clap::Command {
    clap::Command::new("xmodal")
        .about("Crossmodal transfer of embedding structure from faces to voices")
        .subcommand_required(true)
        .subcommand(subcommand(Command::Gen, "Generate a synthetic crossmodal dataset"))
        .subcommand(subcommand(Command::Train, "Train the visual source and audio target encoders"))
        .subcommand(subcommand(Command::Eval, "Evaluate a trained audio encoder on the test split"))
        .subcommand(subcommand(Command::Sweep, "Train and evaluate over a grid of settings and seeds"))
}

fn resolve(command: Command, m: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(command, path)?;
    }
    for &(key, value, _) in FLAGS {
        if !command.accepts(key) {
            continue;
        }
        match value {
            Some(_) => {
                if let Some(v) = m.get_one::<String>(key) {
                    cfg.set(command, key, v)?;
                }
            }
            None => {
                if m.get_flag(key) {
                    cfg.set(command, key, "true")?;
                }
            }
        }
    }
    Ok(cfg)
}

fn thread_pool() -> Result<rayon::ThreadPool, ConfigError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("XMODAL_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| ConfigError::new("XMODAL_THREADS", format!("expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| ConfigError::new("XMODAL_THREADS", e.to_string()))
}

fn run(m: &ArgMatches) -> Result<(), Failure> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let command = match name {
        "gen" => Command::Gen,
        "train" => Command::Train,
        "eval" => Command::Eval,
        _ => Command::Sweep,
    };
    let cfg = resolve(command, sub)?;
    let pool = thread_pool()?;
    pool.install(|| match command {
        Command::Gen => commands::gen(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Sweep => commands::sweep(&cfg),
    })
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
