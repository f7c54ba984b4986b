use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use iqsei::dataset::load_sidecar;
use iqsei::eval::EvalReport;
use iqsei::{fsutil, Error, Result};
use serde::{Deserialize, Serialize};

use super::fit_decision::FitSummary;
use super::sei::SeiReport;
use super::{load_model, resolve};
use crate::manifest::{manifest_for_file, ManifestBuilder, RunManifest};
use crate::{Common, Runtime};

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: Common,

    /// Directories to scan for run manifests (repeatable).
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,

    /// Markdown file to write.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            inputs: vec![".".into()],
            out: "report.md".into(),
        }
    }
}

fn find_manifests(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            find_manifests(&path, found)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("manifest.json"))
        {
            found.push(path);
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fsutil::read(path)?)?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn section(md: &mut String, manifest_path: &Path, m: &RunManifest) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    writeln!(md, "## {} — `{}`\n", m.command, manifest_path.display()).unwrap();
    writeln!(md, "- tool version {}, {:.1} s, {} thread(s)", m.tool_version, m.wall_clock_s, m.threads).unwrap();
    for (name, seed) in &m.seeds {
        writeln!(md, "- seed `{name}` = {seed}").unwrap();
    }
    writeln!(md).unwrap();
    match m.command.as_str() {
        "generate" => {
            if let Some(out) = m.outputs.first() {
                if let Ok(s) = load_sidecar(out) {
                    writeln!(
                        md,
                        "{} frames of {} samples, target {:?}, crc32 {:08x}\n",
                        s.frames, s.spec.frame_len, s.spec.target, s.crc32
                    )
                    .unwrap();
                }
            }
        }
        "train" => {
            if let Some(out) = m.outputs.first() {
                if let Ok((model, _)) = load_model(out) {
                    writeln!(
                        md,
                        "{} epochs, best validation MSE {} at epoch {}, {} parameters\n",
                        model.meta.epochs_trained,
                        opt(model.meta.best_val_loss),
                        model.meta.best_epoch.map_or("n/a".into(), |e| e.to_string()),
                        model.net.num_parameters()
                    )
                    .unwrap();
                }
            }
        }
        "evaluate" => {
            let r: EvalReport = read_json(&dir.join("report.json"))?;
            writeln!(md, "| NMSE | MSE | r | grid values |\n|---|---|---|---|").unwrap();
            writeln!(md, "| {} | {:.6} | {} | {} |\n", opt(r.nmse), r.mse, opt(r.pearson_r), r.bias_curve.len()).unwrap();
            if !r.snr_sweep.is_empty() {
                writeln!(md, "| SNR dB | mean error | std error |\n|---|---|---|").unwrap();
                for p in &r.snr_sweep {
                    writeln!(md, "| {} | {:.5} | {:.5} |", p.snr_db, p.mean_err, p.std_err).unwrap();
                }
                writeln!(md).unwrap();
            }
        }
        "fit-decision" => {
            let s: FitSummary = read_json(&dir.join("summary.json"))?;
            writeln!(md, "| SNR dB | mean p-value | fits | accepted |\n|---|---|---|---|").unwrap();
            for f in &s.per_snr {
                let r = f.p_values;
                writeln!(md, "| {} | {:.4} | {} | {} |", r.snr_db, r.mean_p_value, r.n_fits, r.accepted).unwrap();
            }
            writeln!(md).unwrap();
        }
        "sei" => {
            let s: SeiReport = read_json(&dir.join("sei_report.json"))?;
            for arm in &s.arms {
                writeln!(md, "Arm `{}`:\n\n| SNR dB | K | accuracy | 95% interval |\n|---|---|---|---|", arm.name).unwrap();
                for a in &arm.accuracy {
                    writeln!(
                        md,
                        "| {} | {} | {:.4} | [{:.4}, {:.4}] |",
                        a.snr_db, a.k_captures, a.accuracy, a.ci_low, a.ci_high
                    )
                    .unwrap();
                }
                writeln!(md).unwrap();
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn run(args: ReportArgs, rt: Runtime) -> Result<()> {
    let Some(cfg) = resolve(&args.common, |c: &mut ReportConfig| {
        if !args.inputs.is_empty() {
            c.inputs = args.inputs.clone();
        }
        if let Some(o) = &args.out {
            c.out = o.clone();
        }
    })?
    else {
        return Ok(());
    };
    let mut manifest = ManifestBuilder::new("report", &cfg, rt.threads, rt.deterministic)?;
    let own = manifest_for_file(&cfg.out);
    let mut found = Vec::new();
    for dir in &cfg.inputs {
        find_manifests(dir, &mut found)?;
    }
    found.retain(|p| p.canonicalize().ok() != own.canonicalize().ok());
    found.sort();
    found.dedup();

    let mut md = String::from("# Run report\n\n");
    let mut n = 0;
    for path in &found {
        let Ok(m) = read_json::<RunManifest>(path) else {
            continue;
        };
        if m.command == "report" {
            continue;
        }
        manifest.input(path);
        section(&mut md, path, &m)?;
        n += 1;
    }
    if n == 0 {
        md.push_str("No runs found.\n");
    }
    if let Some(parent) = cfg.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    fsutil::write_atomic_bytes(&cfg.out, md.as_bytes())?;
    manifest.output(&cfg.out);
    manifest.write(&own)?;
    println!("summarized {n} run(s) into {}", cfg.out.display());
    Ok(())
}
