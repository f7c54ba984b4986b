use std::path::PathBuf;

use clap::Args;
use iqsei::dataset::{load_dataset, load_sidecar};
use iqsei::decision::{
    fit_groups, min_separation, write_p_value_csv, write_separation_csv, DecisionModel, FitFailure,
    PValueRow, SeparationRow,
};
use iqsei::eval::GridEstimates;
use iqsei::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{create_dir, load_model, resolve, tag};
use crate::manifest::{manifest_in_dir, ManifestBuilder};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct FitDecisionArgs {
    #[command(flatten)]
    common: Common,

    /// Estimator checkpoint (`.rfpm`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Evaluation grids, one per SNR (repeatable).
    #[arg(long = "grid")]
    grids: Vec<PathBuf>,

    /// Goodness-of-fit significance level.
    #[arg(long)]
    significance: Option<f64>,

    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDecisionConfig {
    pub checkpoint: PathBuf,
    /// Grid datasets, each generated at a single SNR.
    pub grids: Vec<PathBuf>,
    pub significance: f64,
    /// Pairwise error rates for the minimum-separation table.
    pub separation_targets: Vec<f64>,
    pub out_dir: PathBuf,
}

impl Default for FitDecisionConfig {
    fn default() -> Self {
        FitDecisionConfig {
            checkpoint: "model.rfpm".into(),
            grids: Vec::new(),
            significance: 0.05,
            separation_targets: vec![0.05, 0.1, 0.2],
            out_dir: "decision".into(),
        }
    }
}

/// Outcome at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrFit {
    pub snr_db: f64,
    pub grid: PathBuf,
    pub p_values: PValueRow,
    /// Decision model file, absent when no model could be built.
    pub decision_model: Option<PathBuf>,
    pub failed_fits: Vec<FitFailure>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub significance: f64,
    pub per_snr: Vec<SnrFit>,
    pub separation: Vec<SeparationRow>,
}

pub fn run(args: FitDecisionArgs, rt: Runtime) -> Result<()> {
    let Some(cfg) = resolve(&args.common, |c: &mut FitDecisionConfig| {
        if let Some(p) = &args.checkpoint {
            c.checkpoint = p.clone();
        }
        if !args.grids.is_empty() {
            c.grids = args.grids.clone();
        }
        if let Some(s) = args.significance {
            c.significance = s;
        }
        if let Some(p) = &args.out {
            c.out_dir = p.clone();
        }
    })?
    else {
        return Ok(());
    };
    if cfg.grids.is_empty() {
        return Err(Error::config("at least one grid is required"));
    }
    if !(cfg.significance > 0.0 && cfg.significance < 1.0) {
        return Err(Error::config("significance must lie in (0, 1)"));
    }
    let mut manifest = ManifestBuilder::new("fit-decision", &cfg, rt.threads, rt.deterministic)?;
    manifest.input(&cfg.checkpoint);
    let (model, _) = load_model(&cfg.checkpoint)?;
    create_dir(&cfg.out_dir)?;

    let mut per_snr = Vec::new();
    let mut separation = Vec::new();
    for path in &cfg.grids {
        manifest.input(path);
        let grid = load_dataset(path)?;
        let sidecar = load_sidecar(path)?;
        if !grid.is_grid {
            return Err(Error::config(format!("{} is not an evaluation grid", path.display())));
        }
        let snr = sidecar.spec.snr_db;
        if snr.lo != snr.hi {
            return Err(Error::config(format!(
                "{} spans SNR {}..{} dB; fit grids must be generated at one SNR",
                path.display(),
                snr.lo,
                snr.hi
            )));
        }
        let estimates = GridEstimates::new(&grid, &model)?;
        let (fits, failed_fits) = fit_groups(estimates.groups())?;
        let mut notes = Vec::new();
        let mean_p = if fits.is_empty() {
            f64::NAN
        } else {
            fits.iter().map(|f| f.gof_p_value).sum::<f64>() / fits.len() as f64
        };
        let p_values = PValueRow {
            snr_db: snr.lo,
            mean_p_value: mean_p,
            n_fits: fits.len(),
            accepted: mean_p >= cfg.significance,
        };
        let decision_model = match DecisionModel::new(fits.clone(), cfg.significance) {
            Ok(dm) => {
                let out = cfg.out_dir.join(format!("decision_snr{}.json", tag(snr.lo)));
                dm.save(&out)?;
                manifest.output(&out);
                Some(out)
            }
            Err(e) => {
                notes.push(format!("no decision model: {e}"));
                None
            }
        };
        for &t in &cfg.separation_targets {
            match min_separation(&fits, t) {
                Ok(sep) => separation.push(SeparationRow {
                    snr_db: snr.lo,
                    target_err: t,
                    min_separation: sep,
                }),
                Err(e) => notes.push(format!("no separation at {t}: {e}")),
            }
        }
        per_snr.push(SnrFit {
            snr_db: snr.lo,
            grid: path.clone(),
            p_values,
            decision_model,
            failed_fits,
            notes,
        });
    }
    per_snr.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    separation.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db).then(a.target_err.total_cmp(&b.target_err)));

    let rows: Vec<PValueRow> = per_snr.iter().map(|s| s.p_values).collect();
    let p_csv = cfg.out_dir.join("p_values.csv");
    let sep_csv = cfg.out_dir.join("separation.csv");
    let summary_path = cfg.out_dir.join("summary.json");
    write_p_value_csv(&p_csv, &rows)?;
    write_separation_csv(&sep_csv, &separation)?;
    let summary = FitSummary {
        significance: cfg.significance,
        per_snr,
        separation,
    };
    iqsei::fsutil::write_atomic_bytes(&summary_path, &serde_json::to_vec_pretty(&summary)?)?;
    for p in [&p_csv, &sep_csv, &summary_path] {
        manifest.output(p);
    }
    manifest.write(&manifest_in_dir(&cfg.out_dir))?;

    println!("{:>8}  {:>12}  {:>6}  accepted", "SNR dB", "mean p", "fits");
    for s in &summary.per_snr {
        let r = s.p_values;
        println!("{:>8}  {:>12.4}  {:>6}  {}", r.snr_db, r.mean_p_value, r.n_fits, r.accepted);
        for f in &s.failed_fits {
            println!("          offset {}: {}", f.offset, f.reason);
        }
        for n in &s.notes {
            println!("          {n}");
        }
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}
