use std::path::{Path, PathBuf};

use clap::Args;
use iqsei::decision::write_separation_csv;
use iqsei::eval::Estimator;
use iqsei::nn::NetworkModel;
use iqsei::sei::{run_scenario, write_accuracy_csv, ArmReport, Scenario};
use iqsei::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{create_dir, load_model, resolve};
use crate::manifest::{manifest_in_dir, ManifestBuilder};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct SeiArgs {
    #[command(flatten)]
    common: Common,

    /// Scenario file (TOML), replacing the configured scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Estimator arm as NAME=CHECKPOINT (repeatable).
    #[arg(long = "arm", value_name = "NAME=CHECKPOINT")]
    arms: Vec<String>,

    /// Captures per decision to sweep, e.g. `1,2,5,10`.
    #[arg(long, value_delimiter = ',')]
    captures: Vec<usize>,

    /// Trials per SNR point.
    #[arg(long)]
    trials: Option<usize>,

    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    pub name: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeiConfig {
    pub significance: f64,
    pub out_dir: PathBuf,
    pub arms: Vec<ArmSection>,
    pub scenario: Scenario,
}

impl Default for SeiConfig {
    fn default() -> Self {
        SeiConfig {
            significance: 0.05,
            out_dir: "sei".into(),
            arms: Vec::new(),
            scenario: Scenario::table2(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn parse_arm(s: &str) -> Result<ArmSection> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(ArmSection {
            name: name.into(),
            checkpoint: path.into(),
        }),
        _ => Err(Error::config(format!("arm {s:?} is not NAME=CHECKPOINT"))),
    }
}

/// Serialized result of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeiReport {
    pub scenario: Scenario,
    pub significance: f64,
    pub arms: Vec<ArmReport>,
}

pub fn run(args: SeiArgs, rt: Runtime) -> Result<()> {
    let scenario = args.scenario.as_deref().map(load_scenario).transpose()?;
    let arms = args.arms.iter().map(|a| parse_arm(a)).collect::<Result<Vec<_>>>()?;
    let Some(cfg) = resolve(&args.common, |c: &mut SeiConfig| {
        if let Some(s) = scenario {
            c.scenario = s;
        }
        if !arms.is_empty() {
            c.arms = arms;
        }
        if !args.captures.is_empty() {
            c.scenario.captures = args.captures.clone();
        }
        if let Some(t) = args.trials {
            c.scenario.trials_per_snr = t;
        }
        if let Some(o) = &args.out {
            c.out_dir = o.clone();
        }
    })?
    else {
        return Ok(());
    };
    if cfg.arms.is_empty() {
        return Err(Error::config("at least one --arm NAME=CHECKPOINT is required"));
    }
    cfg.scenario.validate()?;
    let mut manifest = ManifestBuilder::new("sei", &cfg, rt.threads, rt.deterministic)?;
    manifest.seed("scenario_seed", cfg.scenario.seed);
    if let Some(p) = &args.scenario {
        manifest.input(p);
    }

    let mut models: Vec<(String, NetworkModel<f32>)> = Vec::new();
    for arm in &cfg.arms {
        manifest.input(&arm.checkpoint);
        let (m, _) = load_model(&arm.checkpoint)?;
        if m.config().frame_len() != cfg.scenario.frame_len {
            return Err(Error::config(format!(
                "arm {} expects {}-sample captures, the scenario uses {}",
                arm.name,
                m.config().frame_len(),
                cfg.scenario.frame_len
            )));
        }
        models.push((arm.name.clone(), m));
    }
    let estimators: Vec<(&str, &dyn Estimator)> =
        models.iter().map(|(n, m)| (n.as_str(), m as &dyn Estimator)).collect();
    let reports = run_scenario(&cfg.scenario, &estimators, cfg.significance)?;

    create_dir(&cfg.out_dir)?;
    for r in &reports {
        let acc = cfg.out_dir.join(format!("accuracy_{}.csv", r.name));
        write_accuracy_csv(&acc, &r.accuracy)?;
        manifest.output(&acc);
        if !r.separation.is_empty() {
            let sep = cfg.out_dir.join(format!("separation_{}.csv", r.name));
            write_separation_csv(&sep, &r.separation)?;
            manifest.output(&sep);
        }
    }
    let report = SeiReport {
        scenario: cfg.scenario.clone(),
        significance: cfg.significance,
        arms: reports,
    };
    let json = cfg.out_dir.join("sei_report.json");
    iqsei::fsutil::write_atomic_bytes(&json, &serde_json::to_vec_pretty(&report)?)?;
    manifest.output(&json);
    manifest.write(&manifest_in_dir(&cfg.out_dir))?;

    for r in &report.arms {
        println!("arm {}", r.name);
        println!("{:>8}  {:>4}  {:>9}  95% interval", "SNR dB", "K", "accuracy");
        for a in &r.accuracy {
            println!(
                "{:>8}  {:>4}  {:>9.4}  [{:.4}, {:.4}]",
                a.snr_db, a.k_captures, a.accuracy, a.ci_low, a.ci_high
            );
        }
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}
