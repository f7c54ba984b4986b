//! Gaussian decision layer: fits to estimator output, goodness of fit,
//! Bayes-optimal boundaries, mis-identification probabilities and the
//! minimum offset separation that keeps mis-identification below a target.
//!
//! All classes are assumed equally likely.

mod special;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mean, sample_variance};
use crate::fsutil;

pub use special::{
    chi2_cdf, chi2_sf, erfc, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_quantile, normal_sf,
};

/// Fewest samples a fit or goodness-of-fit test accepts.
pub const MIN_SAMPLES: usize = 30;
/// Smallest expected count per goodness-of-fit bin.
pub const MIN_EXPECTED: f64 = 5.0;
/// Smallest number of bins that leaves the test a degree of freedom.
pub const MIN_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma2: f64,
    /// True offset whose estimates were fitted, when known.
    pub offset: Option<f64>,
    pub n_samples: usize,
    pub gof_p_value: f64,
}

impl GaussianFit {
    /// A fit with known parameters and no data behind it.
    pub fn from_moments(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite() && mu.is_finite()) {
            return Err(Error::DegenerateFit(format!("mu = {mu}, sigma2 = {sigma2}")));
        }
        Ok(GaussianFit {
            mu,
            sigma2,
            offset: None,
            n_samples: 0,
            gof_p_value: 1.0,
        })
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        -0.5 * ((x - self.mu).powi(2) / self.sigma2 + (2.0 * std::f64::consts::PI * self.sigma2).ln())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mu) / self.sigma())
    }

    /// `P(X > x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        normal_sf((x - self.mu) / self.sigma())
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.sigma() * normal_quantile(p)
    }
}

/// Sample mean and Bessel-corrected variance of `estimates`, with a
/// chi-squared goodness-of-fit p-value attached.
pub fn fit_gaussian(estimates: &[f64]) -> Result<GaussianFit> {
    if estimates.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples; a fit needs at least {MIN_SAMPLES}",
            estimates.len()
        )));
    }
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite sample".into()));
    }
    // Sorting makes the moments independent of input order.
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut fit = GaussianFit::from_moments(mean(&sorted), sample_variance(&sorted))?;
    fit.n_samples = sorted.len();
    fit.gof_p_value = chi2_gof(&sorted, &fit)?;
    Ok(fit)
}

/// Number of equal-probability bins for `n` samples: about `2 n^(2/5)`,
/// capped so that every bin expects at least five samples.
pub fn gof_bins(n: usize) -> usize {
    let by_rule = (2.0 * (n as f64).powf(0.4)).floor() as usize;
    let by_count = (n as f64 / MIN_EXPECTED).floor() as usize;
    by_rule.min(by_count)
}

/// Pearson chi-squared goodness of fit of `samples` against `fit`, using
/// equal-probability bins under the fitted Gaussian. Two parameters were
/// estimated, so the statistic has `bins - 3` degrees of freedom.
pub fn chi2_gof(samples: &[f64], fit: &GaussianFit) -> Result<f64> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{n} samples; the goodness-of-fit test needs at least {MIN_SAMPLES}"
        )));
    }
    let k = gof_bins(n);
    if k < MIN_BINS {
        return Err(Error::InsufficientData(format!(
            "only {k} usable bins; at least {MIN_BINS} are needed"
        )));
    }
    let mut counts = vec![0usize; k];
    for &x in samples {
        // Bin index from the fitted CDF; the upper edge of each bin is
        // inclusive of nothing but its own probability mass.
        let u = fit.cdf(x);
        let b = ((u * k as f64).floor() as usize).min(k - 1);
        counts[b] += 1;
    }
    let expected = n as f64 / k as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    Ok(chi2_sf(stat, (k - 3) as f64).clamp(0.0, 1.0))
}

/// Points where two Gaussian densities are equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    /// Every crossing, ascending.
    pub roots: Vec<f64>,
    /// The crossing used for decisions: the one between the means, or the
    /// one nearest their midpoint when neither lies between them.
    pub operative: f64,
}

/// Bayes-optimal boundary between two equally likely Gaussian classes.
pub fn bayes_boundary(a: &GaussianFit, b: &GaussianFit) -> Result<Boundary> {
    if a.mu == b.mu && a.sigma2 == b.sigma2 {
        return Err(Error::NoBoundary(format!(
            "identical fits N({}, {})",
            a.mu, a.sigma2
        )));
    }
    let mid = 0.5 * (a.mu + b.mu);
    if a.sigma2 == b.sigma2 {
        return Ok(Boundary {
            roots: vec![mid],
            operative: mid,
        });
    }
    // (x - ma)^2 / va - (x - mb)^2 / vb + ln(va / vb) = 0, written as
    // qa x^2 + qb x + qc = 0.
    let qa = 1.0 / a.sigma2 - 1.0 / b.sigma2;
    let qb = -2.0 * (a.mu / a.sigma2 - b.mu / b.sigma2);
    let qc = a.mu * a.mu / a.sigma2 - b.mu * b.mu / b.sigma2 + (a.sigma2 / b.sigma2).ln();
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        // Two Gaussians with different variances always cross twice; a
        // negative discriminant can only be rounding.
        return Err(Error::NoBoundary(format!("discriminant {disc}")));
    }
    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
    let mut roots = if q == 0.0 {
        vec![0.0, 0.0]
    } else {
        vec![q / qa, qc / q]
    };
    roots.sort_by(f64::total_cmp);
    let (lo, hi) = if a.mu < b.mu { (a.mu, b.mu) } else { (b.mu, a.mu) };
    let operative = roots
        .iter()
        .copied()
        .find(|r| *r > lo && *r < hi)
        .unwrap_or_else(|| {
            *roots
                .iter()
                .min_by(|x, y| (*x - mid).abs().total_cmp(&(*y - mid).abs()))
                .unwrap()
        });
    Ok(Boundary { roots, operative })
}

/// Which side of a boundary counts as the wrong one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Above,
    Below,
}

/// Probability that an estimate from `fit` lands on `wrong_side` of `d`.
pub fn misid_probability(fit: &GaussianFit, d: f64, wrong_side: Side) -> f64 {
    let z = (d - fit.mu) / fit.sigma();
    match wrong_side {
        Side::Above => normal_sf(z),
        Side::Below => normal_sf(-z),
    }
    .clamp(0.0, 1.0)
}

/// Average mis-identification of a two-class decision between `a` (lower
/// mean) and `b`.
pub fn pair_error(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let (lo, hi) = if a.mu <= b.mu { (a, b) } else { (b, a) };
    if lo.mu == hi.mu && lo.sigma2 == hi.sigma2 {
        // Indistinguishable classes: a coin flip.
        return Ok(0.5);
    }
    let d = bayes_boundary(lo, hi)?.operative;
    Ok(0.5 * (misid_probability(lo, d, Side::Above) + misid_probability(hi, d, Side::Below)))
}

/// Smallest offset spacing at which the average pairwise mis-identification
/// over all grid pairs with that spacing falls below `target_err`. `fits`
/// must cover an evenly spaced offset grid, in any order. `Ok(None)` means no spacing
/// within the grid achieves the target.
pub fn min_separation(fits: &[GaussianFit], target_err: f64) -> Result<Option<f64>> {
    if !(target_err > 0.0 && target_err < 0.5) {
        return Err(Error::config(format!("target error {target_err} outside (0, 0.5)")));
    }
    let mut fits = fits.to_vec();
    fits.sort_by(|a, b| a.offset.unwrap_or(f64::NAN).total_cmp(&b.offset.unwrap_or(f64::NAN)));
    let offsets: Vec<f64> = fits
        .iter()
        .map(|f| {
            f.offset
                .ok_or_else(|| Error::config("min_separation needs fits tagged with offsets"))
        })
        .collect::<Result<_>>()?;
    if fits.len() < 2 {
        return Err(Error::InsufficientData("min_separation needs two fits".into()));
    }
    let step = (offsets[offsets.len() - 1] - offsets[0]) / (offsets.len() - 1) as f64;
    if step.is_nan() || step <= 0.0 || offsets.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step.max(1.0)) {
        return Err(Error::config("fits must lie on an evenly spaced, increasing grid"));
    }
    for s in 1..fits.len() {
        let mut total = 0.0;
        for i in 0..fits.len() - s {
            total += pair_error(&fits[i], &fits[i + s])?;
        }
        if total / ((fits.len() - s) as f64) < target_err {
            return Ok(Some(s as f64 * step));
        }
    }
    Ok(None)
}

/// Ordered fits with the boundaries and error rates they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionModel {
    /// Strictly increasing in `mu`.
    pub fits: Vec<GaussianFit>,
    /// Operative boundary between each adjacent pair of fits.
    pub boundaries: Vec<Boundary>,
    /// Decision thresholds: the running maximum of the operative
    /// boundaries. Heavily overlapping fits can put a boundary below its
    /// predecessor; the class between them is then dominated on both sides
    /// and its region is empty.
    pub edges: Vec<f64>,
    /// `pairwise[i][j]`: probability that an estimate from class `i` falls
    /// on `j`'s side of the two-class boundary between them.
    pub pairwise: Vec<Vec<f64>>,
    /// `confusion[i][j]`: probability that `classify` assigns an estimate
    /// from class `i` to class `j`.
    pub confusion: Vec<Vec<f64>>,
    pub significance: f64,
}

impl DecisionModel {
    pub fn new(mut fits: Vec<GaussianFit>, significance: f64) -> Result<Self> {
        if fits.is_empty() {
            return Err(Error::InsufficientData("a decision model needs a fit".into()));
        }
        if !(significance > 0.0 && significance < 1.0) {
            return Err(Error::config(format!("significance {significance} outside (0, 1)")));
        }
        fits.sort_by(|a, b| a.mu.total_cmp(&b.mu));
        if let Some(w) = fits.windows(2).find(|w| w[0].mu >= w[1].mu) {
            return Err(Error::NoBoundary(format!(
                "two fits share the mean {}",
                w[0].mu
            )));
        }
        let boundaries: Vec<Boundary> = fits
            .windows(2)
            .map(|w| bayes_boundary(&w[0], &w[1]))
            .collect::<Result<_>>()?;
        let edges: Vec<f64> = boundaries
            .iter()
            .scan(f64::NEG_INFINITY, |hi, b| {
                *hi = hi.max(b.operative);
                Some(*hi)
            })
            .collect();
        let n = fits.len();
        let mut pairwise = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = bayes_boundary(&fits[i], &fits[j])?.operative;
                let side = if fits[j].mu > fits[i].mu { Side::Above } else { Side::Below };
                pairwise[i][j] = misid_probability(&fits[i], d, side);
            }
        }
        let confusion = fits
            .iter()
            .map(|f| {
                (0..n)
                    .map(|j| {
                        let lo = if j == 0 { 0.0 } else { f.cdf(edges[j - 1]) };
                        let hi = if j == n - 1 { 1.0 } else { f.cdf(edges[j]) };
                        (hi - lo).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(DecisionModel {
            fits,
            boundaries,
            edges,
            pairwise,
            confusion,
            significance,
        })
    }

    /// Fits every `(offset, estimates)` group. Groups that cannot be fitted
    /// are returned alongside the model instead of failing it.
    pub fn from_groups<'a>(
        groups: impl IntoIterator<Item = (f64, &'a [f64])>,
        significance: f64,
    ) -> Result<(Self, Vec<FitFailure>)> {
        let (fits, failures) = fit_groups(groups)?;
        Ok((Self::new(fits, significance)?, failures))
    }

    /// Index of the class whose region contains `estimate`. An estimate on a
    /// boundary goes to the lower class.
    pub fn classify(&self, estimate: f64) -> usize {
        self.edges.partition_point(|&e| e < estimate)
    }

    pub fn offsets(&self) -> Vec<Option<f64>> {
        self.fits.iter().map(|f| f.offset).collect()
    }

    /// Mean goodness-of-fit p-value over the fits.
    pub fn mean_p_value(&self) -> f64 {
        self.fits.iter().map(|f| f.gof_p_value).sum::<f64>() / self.fits.len() as f64
    }

    /// Whether the Gaussian model is accepted at the model's significance.
    pub fn gaussian_accepted(&self) -> bool {
        self.mean_p_value() >= self.significance
    }

    /// The same fits with every variance divided by `k`: the distribution of
    /// the mean of `k` independent estimates.
    pub fn averaged(&self, k: usize) -> Result<Self> {
        let fits = self
            .fits
            .iter()
            .map(|f| GaussianFit {
                sigma2: f.sigma2 / k.max(1) as f64,
                ..*f
            })
            .collect();
        Self::new(fits, self.significance)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: DecisionModel = serde_json::from_slice(bytes)?;
        // Re-deriving catches hand-edited or inconsistent files.
        let rebuilt = Self::new(m.fits.clone(), m.significance)?;
        if rebuilt.edges != m.edges {
            return Err(Error::Malformed("decision edges do not match the fits".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic_bytes(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fsutil::read(path)?)
    }
}

/// Fits every `(offset, estimates)` group, setting aside groups that cannot
/// be fitted.
pub fn fit_groups<'a>(
    groups: impl IntoIterator<Item = (f64, &'a [f64])>,
) -> Result<(Vec<GaussianFit>, Vec<FitFailure>)> {
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (offset, est) in groups {
        match fit_gaussian(est) {
            Ok(f) => fits.push(f.with_offset(offset)),
            Err(e @ (Error::DegenerateFit(_) | Error::InsufficientData(_))) => {
                failures.push(FitFailure {
                    offset,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((fits, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub offset: f64,
    pub reason: String,
}

/// One row of a goodness-of-fit summary: the mean p-value over a grid at one
/// SNR and whether the Gaussian model is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub snr_db: f64,
    pub mean_p_value: f64,
    pub n_fits: usize,
    pub accepted: bool,
}

impl PValueRow {
    pub fn new(snr_db: f64, model: &DecisionModel) -> Self {
        PValueRow {
            snr_db,
            mean_p_value: model.mean_p_value(),
            n_fits: model.fits.len(),
            accepted: model.gaussian_accepted(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub snr_db: f64,
    pub target_err: f64,
    /// `None` when no spacing within the grid reaches the target.
    pub min_separation: Option<f64>,
}

/// Minimum separation for every `(snr, fits)` pair and target error.
pub fn separation_vs_snr(
    per_snr: &[(f64, Vec<GaussianFit>)],
    targets: &[f64],
) -> Result<Vec<SeparationRow>> {
    let mut rows = Vec::new();
    for (snr, fits) in per_snr {
        for &t in targets {
            rows.push(SeparationRow {
                snr_db: *snr,
                target_err: t,
                min_separation: min_separation(fits, t)?,
            });
        }
    }
    Ok(rows)
}

/// Writes `separation_vs_snr.csv`; unreachable targets leave the last
/// column empty.
pub fn write_separation_csv(path: &Path, rows: &[SeparationRow]) -> Result<()> {
    let mut out = String::from("snr_db,target_err,min_separation\n");
    for r in rows {
        let sep = r.min_separation.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.snr_db, r.target_err, sep));
    }
    fsutil::write_atomic_bytes(path, out.as_bytes())
}

/// Writes the goodness-of-fit summary as CSV.
pub fn write_p_value_csv(path: &Path, rows: &[PValueRow]) -> Result<()> {
    let mut out = String::from("snr_db,mean_p_value,n_fits,accepted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.snr_db, r.mean_p_value, r.n_fits, r.accepted
        ));
    }
    fsutil::write_atomic_bytes(path, out.as_bytes())
}
