//! Estimator quality metrics and evaluation sweeps.
//!
//! Every report is a pure function of the estimator and the frames it is fed,
//! so re-running an evaluation reproduces it bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetSpec, EvalGrid, Interval, Splits, Target};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::{Network, NetworkModel};
use crate::signal::IqFrame;

/// Anything that maps captures to point estimates of one impairment.
pub trait Estimator: Sync {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>>;
}

impl Estimator for Network<f32> {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        self.predict(frames)
    }
}

impl Estimator for NetworkModel<f32> {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        self.net.predict(frames)
    }
}

/// Returns the true offset of every frame: the ideal estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleEstimator(pub Target);

impl Estimator for OracleEstimator {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        Ok(frames.iter().map(|f| self.0.value(&f.truth)).collect())
    }
}

fn check_pair(p: &[f64], m: &[f64]) -> Result<()> {
    if p.is_empty() || p.len() != m.len() {
        return Err(Error::Shape {
            expected: vec![m.len()],
            actual: vec![p.len()],
        });
    }
    Ok(())
}

/// Arithmetic mean, accumulated relative to the first element so that a
/// constant series has exactly its own value as mean.
pub fn mean(v: &[f64]) -> f64 {
    let Some(&shift) = v.first() else {
        return f64::NAN;
    };
    shift + v.iter().map(|x| x - shift).sum::<f64>() / v.len() as f64
}

/// Bessel-corrected sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Normalized mean squared error, `mean((P - M)^2) / (mean(P) * mean(M))`.
pub fn nmse(p: &[f64], m: &[f64]) -> Result<f64> {
    check_pair(p, m)?;
    let denom = mean(p) * mean(m);
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::UndefinedMetric(format!(
            "normalizer mean(P) * mean(M) = {denom}"
        )));
    }
    let mse = p.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
    Ok(mse / denom)
}

pub fn mse(p: &[f64], m: &[f64]) -> Result<f64> {
    check_pair(p, m)?;
    Ok(p.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64)
}

/// Pearson linear correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Running mean after each successive estimate.
pub fn cumulative_moving_average(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            acc += x;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Estimator statistics at one true offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub truth: f64,
    pub bias: f64,
    pub sample_variance: f64,
    pub n: usize,
    /// Cumulative moving average of the estimates; its last entry is their
    /// mean.
    #[serde(skip)]
    pub cma: Vec<f64>,
}

impl BiasPoint {
    pub fn new(truth: f64, estimates: &[f64]) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} estimates at offset {truth}; at least 2 are needed",
                estimates.len()
            )));
        }
        let cma = cumulative_moving_average(estimates);
        Ok(BiasPoint {
            truth,
            bias: mean(estimates) - truth,
            sample_variance: sample_variance(estimates),
            n: estimates.len(),
            cma,
        })
    }
}

/// Estimates of a fixed-offset grid, grouped by true value.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEstimates {
    pub truths: Vec<f64>,
    pub estimates: Vec<f64>,
    /// `(truth, start, end)` ranges into the two vectors.
    groups: Vec<(f64, usize, usize)>,
}

impl GridEstimates {
    pub fn new(grid: &Dataset, est: &dyn Estimator) -> Result<Self> {
        let estimates = est.estimate(&grid.frames)?;
        let truths = grid.labels();
        let mut groups = Vec::new();
        let mut start = 0;
        for (value, frames) in grid.grid_groups() {
            groups.push((value, start, start + frames.len()));
            start += frames.len();
        }
        Ok(GridEstimates {
            truths,
            estimates,
            groups,
        })
    }

    pub fn groups(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.groups
            .iter()
            .map(|&(v, s, e)| (v, &self.estimates[s..e]))
    }

    pub fn bias_curve(&self) -> Result<Vec<BiasPoint>> {
        self.groups().map(|(v, e)| BiasPoint::new(v, e)).collect()
    }
}

/// Bias and variance at each grid value of `grid`.
pub fn bias_curve(est: &dyn Estimator, grid: &Dataset) -> Result<Vec<BiasPoint>> {
    GridEstimates::new(grid, est)?.bias_curve()
}

pub fn average_variance(curve: &[BiasPoint]) -> f64 {
    curve.iter().map(|p| p.sample_variance).sum::<f64>() / curve.len() as f64
}

pub fn average_bias(curve: &[BiasPoint]) -> f64 {
    curve.iter().map(|p| p.bias).sum::<f64>() / curve.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub mean_err: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Error statistics over frames with uniformly drawn true offsets at each
/// SNR. Every SNR uses the same frame seeds, so only the noise level changes
/// between points.
pub fn snr_sweep(
    est: &dyn Estimator,
    spec: &DatasetSpec,
    snrs: &[f64],
    frames_per_snr: usize,
) -> Result<Vec<SnrPoint>> {
    snrs.iter()
        .map(|&snr| {
            let mut s = spec.clone();
            s.snr_db = Interval::point(snr);
            s.splits = Splits {
                train: 0,
                val: 0,
                test: frames_per_snr,
            };
            let ds = crate::dataset::build_dataset(&s)?;
            let errors: Vec<f64> = est
                .estimate(&ds.frames)?
                .iter()
                .zip(ds.labels())
                .map(|(e, t)| e - t)
                .collect();
            if errors.len() < 2 {
                return Err(Error::InsufficientData("snr sweep needs 2 frames per SNR".into()));
            }
            Ok(SnrPoint {
                snr_db: snr,
                mean_err: mean(&errors),
                std_err: sample_variance(&errors).sqrt(),
                n: errors.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSizeRow {
    pub frame_len: usize,
    pub snr_db: f64,
    pub average_bias: f64,
    pub average_variance: f64,
}

/// Tabulates average bias and variance per input size and SNR. Each entry is
/// `(frame_len, snr_db, bias curve)`.
pub fn input_size_study(entries: &[(usize, f64, Vec<BiasPoint>)]) -> Vec<InputSizeRow> {
    let mut rows: Vec<InputSizeRow> = entries
        .iter()
        .map(|(len, snr, curve)| InputSizeRow {
            frame_len: *len,
            snr_db: *snr,
            average_bias: average_bias(curve),
            average_variance: average_variance(curve),
        })
        .collect();
    rows.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then(a.frame_len.cmp(&b.frame_len))
    });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// CRC32 of the estimator's checkpoint, when it came from one.
    pub model_crc32: Option<u32>,
    pub target: Target,
    pub grid: Option<EvalGrid>,
    pub grid_snr_db: Option<Interval>,
    /// Why `nmse` is absent, when it is.
    pub nmse_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nmse: Option<f64>,
    pub mse: f64,
    pub pearson_r: Option<f64>,
    pub bias_curve: Vec<BiasPoint>,
    pub snr_sweep: Vec<SnrPoint>,
    pub meta: ReportMeta,
    #[serde(skip)]
    pub scatter: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Grid metrics of `est`, plus an optional SNR sweep.
    pub fn build(
        est: &dyn Estimator,
        grid: &Dataset,
        snr_sweep: Vec<SnrPoint>,
        meta: ReportMeta,
    ) -> Result<Self> {
        let g = GridEstimates::new(grid, est)?;
        let mut meta = meta;
        let nmse = match nmse(&g.estimates, &g.truths) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(why)) => {
                meta.nmse_note = Some(why);
                None
            }
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            nmse,
            mse: mse(&g.estimates, &g.truths)?,
            pearson_r: pearson_r(&g.truths, &g.estimates).ok(),
            bias_curve: g.bias_curve()?,
            snr_sweep,
            meta,
            scatter: g.truths.iter().copied().zip(g.estimates.iter().copied()).collect(),
        })
    }

    /// Writes `bias_curve.csv`, `snr_sweep.csv`, `scatter.csv` and
    /// `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(
            &dir.join("bias_curve.csv"),
            &["truth", "bias", "sample_variance"],
            self.bias_curve
                .iter()
                .map(|p| vec![p.truth, p.bias, p.sample_variance]),
        )?;
        write_csv(
            &dir.join("snr_sweep.csv"),
            &["snr_db", "mean_err", "std_err"],
            self.snr_sweep
                .iter()
                .map(|p| vec![p.snr_db, p.mean_err, p.std_err]),
        )?;
        write_csv(
            &dir.join("scatter.csv"),
            &["truth", "estimate"],
            self.scatter.iter().map(|&(t, e)| vec![t, e]),
        )?;
        fsutil::write_atomic_bytes(
            &dir.join("report.json"),
            &serde_json::to_vec_pretty(self)?,
        )
    }
}

/// Writes a numeric table atomically.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Malformed(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(format!("csv: {e}")))?;
    fsutil::write_atomic_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_hand_cases() {
        assert_eq!(nmse(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(nmse(&[3.0, 1.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(nmse(&[0.4, 0.7], &[0.4, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn nmse_undefined_for_zero_means() {
        assert!(matches!(
            nmse(&[1.0, -1.0], &[0.5, 0.5]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            nmse(&[-1.0, -0.5], &[0.5, 0.5]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(nmse(&[], &[]), Err(Error::Shape { .. })));
        assert!(matches!(nmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn pearson_of_exact_line_is_one() {
        let x = [0.1, 0.4, -0.3, 0.9];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson_r(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn exact_estimates_have_no_bias_or_variance() {
        let p = BiasPoint::new(0.3, &[0.3; 10]).unwrap();
        assert_eq!((p.bias, p.sample_variance), (0.0, 0.0));
        assert!(matches!(
            BiasPoint::new(0.3, &[0.3]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn cma_ends_at_the_mean() {
        let v = [1.0, 2.0, 4.0, 8.0, -3.0];
        let cma = cumulative_moving_average(&v);
        assert_eq!(cma[0], 1.0);
        assert_eq!(cma[1], 1.5);
        assert_eq!(*cma.last().unwrap(), mean(&v));
    }

    #[test]
    fn input_size_rows_are_sorted() {
        let curve = |var: f64| vec![BiasPoint::new(0.0, &[-var.sqrt(), var.sqrt()]).unwrap()];
        let rows = input_size_study(&[
            (2048, 10.0, curve(1.0)),
            (512, 10.0, curve(4.0)),
            (1024, 0.0, curve(9.0)),
        ]);
        let keys: Vec<(usize, f64)> = rows.iter().map(|r| (r.frame_len, r.snr_db)).collect();
        assert_eq!(keys, vec![(1024, 0.0), (512, 10.0), (2048, 10.0)]);
        assert!((rows[1].average_variance - 8.0).abs() < 1e-12);
    }
}
