use std::path::PathBuf;

use clap::Args;
use iqsei::dataset::{build_dataset, build_eval_grid, save_dataset, sidecar_path, DatasetSpec, EvalGrid, Target};
use iqsei::signal::ModFamily;
use iqsei::Result;
use serde::{Deserialize, Serialize};

use super::resolve;
use crate::manifest::{manifest_for_file, ManifestBuilder};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: Common,

    /// Output dataset path (`.rfpd`).
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    /// When present, a fixed-offset evaluation grid is written instead of
    /// train/val/test splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<EvalGrid>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            out: "dataset.rfpd".into(),
            dataset: DatasetSpec::wide(ModFamily::Qam, Target::GainImbalance),
            grid: None,
        }
    }
}

pub fn run(args: GenerateArgs, rt: Runtime) -> Result<()> {
    let Some(cfg) = resolve(&args.common, |c: &mut GenerateConfig| {
        if let Some(o) = &args.out {
            c.out = o.clone();
        }
        if let Some(s) = args.seed {
            c.dataset.master_seed = s;
        }
    })?
    else {
        return Ok(());
    };
    cfg.dataset.validate()?;
    let mut manifest = ManifestBuilder::new("generate", &cfg, rt.threads, rt.deterministic)?;
    manifest.seed("master_seed", cfg.dataset.master_seed);

    let ds = match &cfg.grid {
        Some(grid) => build_eval_grid(&cfg.dataset, grid)?,
        None => build_dataset(&cfg.dataset)?,
    };
    if let Some(parent) = cfg.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    let crc = save_dataset(&cfg.out, &ds, &cfg.dataset, cfg.grid.as_ref())?;
    manifest.output(&cfg.out);
    manifest.output(&sidecar_path(&cfg.out));
    manifest.write(&manifest_for_file(&cfg.out))?;
    println!("wrote {} frames to {} (crc32 {crc:08x})", ds.len(), cfg.out.display());
    Ok(())
}
