use std::path::{Path, PathBuf};

use clap::Args;
use iqsei::dataset::{load_dataset, load_sidecar};
use iqsei::eval::write_csv;
use iqsei::nn::search::{random_search, SearchSpace};
use iqsei::nn::{load_checkpoint, save_checkpoint, train, NetworkConfig, NetworkModel, TrainConfig};
use iqsei::{Error, Result};
use serde::{Deserialize, Serialize};

use super::resolve;
use crate::manifest::{manifest_for_file, ManifestBuilder};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,

    /// Training dataset (`.rfpd`).
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Checkpoint to write (`.rfpm`).
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Continue from the checkpoint at `--out` if it exists.
    #[arg(long)]
    resume: bool,

    /// Maximum total epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

/// The estimator topology: two convolutions, optional pooling, three hidden
/// dense layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub filters: [usize; 2],
    pub kernel_widths: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    pub dense: [usize; 3],
    /// Fixed factor on the output; set it near the target's range (e.g. 10
    /// for phase in degrees).
    #[serde(default = "unit")]
    pub output_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            filters: [64, 16],
            kernel_widths: [8, 4],
            pool: Some(2),
            dense: [256, 128, 64],
            output_scale: 1.0,
        }
    }
}

impl NetworkSection {
    pub fn build(&self, frame_len: usize) -> NetworkConfig {
        NetworkConfig::conv_dense(frame_len, self.filters, self.kernel_widths, self.pool, self.dense)
            .with_output_scale(self.output_scale)
    }
}

/// Random topology search in place of the fixed `network` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub resume: bool,
    pub init_seed: u64,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            dataset: "dataset.rfpd".into(),
            checkpoint: "model.rfpm".into(),
            resume: false,
            init_seed: 1,
            network: NetworkSection::default(),
            training: TrainConfig::default(),
            search: None,
        }
    }
}

/// `model.rfpm` becomes `model.history.csv`.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.csv")
}

pub fn run(args: TrainArgs, rt: Runtime) -> Result<()> {
    let Some(cfg) = resolve(&args.common, |c: &mut TrainCommandConfig| {
        if let Some(d) = &args.dataset {
            c.dataset = d.clone();
        }
        if let Some(o) = &args.out {
            c.checkpoint = o.clone();
        }
        if args.resume {
            c.resume = true;
        }
        if let Some(e) = args.epochs {
            c.training.max_epochs = e;
        }
    })?
    else {
        return Ok(());
    };
    let mut manifest = ManifestBuilder::new("train", &cfg, rt.threads, rt.deterministic)?;
    manifest.seed("init_seed", cfg.init_seed);
    manifest.seed("shuffle_seed", cfg.training.seed);
    manifest.input(&cfg.dataset);

    let ds = load_dataset(&cfg.dataset)?;
    if ds.is_grid {
        return Err(Error::config(format!(
            "{} is an evaluation grid, not a training dataset",
            cfg.dataset.display()
        )));
    }
    let dataset_crc = load_sidecar(&cfg.dataset).ok().map(|s| s.crc32);

    let resuming = cfg.resume && cfg.checkpoint.exists();
    let mut model = if resuming {
        let m = load_checkpoint(&cfg.checkpoint)?;
        if m.config().frame_len() != ds.frame_len {
            return Err(Error::config(format!(
                "checkpoint expects {}-sample frames, dataset has {}",
                m.config().frame_len(),
                ds.frame_len
            )));
        }
        eprintln!("resuming from epoch {}", m.meta.epochs_trained);
        m
    } else if let Some(search) = &cfg.search {
        manifest.seed("search_seed", search.seed);
        let (m, candidates) = random_search(
            &search.space,
            search.trials,
            ds.train(),
            ds.val(),
            ds.target,
            &cfg.training,
            search.seed,
        )?;
        for (i, c) in candidates.iter().enumerate() {
            eprintln!("candidate {i}: val loss {:.6}", c.val_loss);
        }
        m
    } else {
        NetworkModel::new(cfg.network.build(ds.frame_len), cfg.init_seed)?
    };
    if cfg.search.is_none() || resuming {
        train(&mut model, ds.train(), ds.val(), ds.target, &cfg.training, |s| {
            eprintln!(
                "epoch {:>3}  train {:.6}  val {:.6}",
                s.epoch, s.train_loss, s.val_loss
            )
        })?;
    }
    model.meta.dataset_crc32 = dataset_crc;

    if let Some(parent) = cfg.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    save_checkpoint(&cfg.checkpoint, &model)?;
    let history = history_path(&cfg.checkpoint);
    write_csv(
        &history,
        &["epoch", "train_loss", "val_loss"],
        model
            .meta
            .history
            .iter()
            .map(|s| vec![s.epoch as f64, s.train_loss, s.val_loss]),
    )?;
    manifest.output(&cfg.checkpoint);
    manifest.output(&history);
    manifest.write(&manifest_for_file(&cfg.checkpoint))?;
    println!(
        "wrote {} ({} epochs, best val loss {})",
        cfg.checkpoint.display(),
        model.meta.epochs_trained,
        model
            .meta
            .best_val_loss
            .map_or("n/a".to_string(), |v| format!("{v:.6}"))
    );
    Ok(())
}
