use std::path::PathBuf;

use clap::Args;
use iqsei::dataset::{load_dataset, load_sidecar};
use iqsei::eval::{snr_sweep, EvalReport, ReportMeta};
use iqsei::{seed, Error, Result};
use serde::{Deserialize, Serialize};

use super::{load_model, resolve};
use crate::manifest::{manifest_in_dir, ManifestBuilder};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,

    /// Estimator checkpoint (`.rfpm`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Evaluation grid dataset (`.rfpd`).
    #[arg(long)]
    grid: Option<PathBuf>,

    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Error statistics over freshly generated frames at each SNR, drawn from
/// the grid's recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub frames_per_snr: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: PathBuf,
    pub grid: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_sweep: Option<SweepSection>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            checkpoint: "model.rfpm".into(),
            grid: "grid.rfpd".into(),
            out_dir: "eval".into(),
            snr_sweep: Some(SweepSection {
                snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
                frames_per_snr: 2000,
                seed: 7,
            }),
        }
    }
}

pub fn run(args: EvaluateArgs, rt: Runtime) -> Result<()> {
    let Some(cfg) = resolve(&args.common, |c: &mut EvaluateConfig| {
        if let Some(p) = &args.checkpoint {
            c.checkpoint = p.clone();
        }
        if let Some(p) = &args.grid {
            c.grid = p.clone();
        }
        if let Some(p) = &args.out {
            c.out_dir = p.clone();
        }
    })?
    else {
        return Ok(());
    };
    let mut manifest = ManifestBuilder::new("evaluate", &cfg, rt.threads, rt.deterministic)?;
    manifest.input(&cfg.checkpoint);
    manifest.input(&cfg.grid);

    let (model, model_crc) = load_model(&cfg.checkpoint)?;
    let grid = load_dataset(&cfg.grid)?;
    let sidecar = load_sidecar(&cfg.grid)?;
    if !grid.is_grid {
        return Err(Error::config(format!("{} is not an evaluation grid", cfg.grid.display())));
    }
    if model.meta.target.is_some_and(|t| t != grid.target) {
        return Err(Error::config(format!(
            "model estimates {:?} but the grid is labelled {:?}",
            model.meta.target.unwrap(),
            grid.target
        )));
    }

    let sweep = match &cfg.snr_sweep {
        Some(s) => {
            manifest.seed("snr_sweep_seed", s.seed);
            let mut spec = sidecar.spec.clone();
            spec.master_seed = seed::derive(s.seed, sidecar.spec.master_seed);
            snr_sweep(&model, &spec, &s.snr_db, s.frames_per_snr)?
        }
        None => Vec::new(),
    };
    let meta = ReportMeta {
        model_crc32: Some(model_crc),
        target: grid.target,
        grid: sidecar.grid.clone(),
        grid_snr_db: Some(sidecar.spec.snr_db),
        nmse_note: None,
    };
    let report = EvalReport::build(&model, &grid, sweep, meta)?;
    report.write(&cfg.out_dir)?;
    for f in ["bias_curve.csv", "snr_sweep.csv", "scatter.csv", "report.json"] {
        manifest.output(&cfg.out_dir.join(f));
    }
    manifest.write(&manifest_in_dir(&cfg.out_dir))?;

    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    println!(
        "nmse {}  mse {:.6}  r {}  ({} grid values)",
        show(report.nmse),
        report.mse,
        show(report.pearson_r),
        report.bias_curve.len()
    );
    if let Some(note) = &report.meta.nmse_note {
        println!("nmse undefined: {note}");
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}
