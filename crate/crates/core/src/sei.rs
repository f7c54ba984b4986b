//! Specific emitter identification: route each capture by modulation family
//! to its gain-imbalance estimator, aggregate the point estimates of several
//! captures and classify the result with a Gaussian decision model.
//!
//! Decisions use the gain imbalance only.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_eval_grid, DatasetSpec, EvalGrid, Interval, Splits, Target};
use crate::decision::{fit_groups, min_separation, DecisionModel, GaussianFit, SeparationRow};
use crate::error::{Error, Result};
use crate::eval::{Estimator, GridEstimates};
use crate::seed;
use crate::signal::{
    synthesize_frame_with, ImpairmentParams, IqFrame, ModFamily, ModulationScheme,
    SynthesisOptions, Timing, DEFAULT_ROLLOFF,
};

const CALIBRATION_STREAM: u64 = 11;
const TRIAL_STREAM: u64 = 12;

/// A transmitter with a fixed IQ imbalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterProfile {
    pub id: String,
    pub alpha: f64,
    pub theta_deg: f64,
    pub scheme: ModulationScheme,
}

/// Decides the modulation family of a capture.
pub trait ModulationClassifier: Send + Sync {
    fn classify(&self, frame: &IqFrame) -> ModFamily;
}

/// Reads the family the capture was generated with.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleClassifier;

impl ModulationClassifier for OracleClassifier {
    fn classify(&self, frame: &IqFrame) -> ModFamily {
        frame.scheme.family()
    }
}

/// Where modulation labels come from.
#[derive(Clone)]
pub enum ClassifierMode {
    Oracle,
    Plugin(Arc<dyn ModulationClassifier>),
}

impl ClassifierMode {
    pub fn classify(&self, frame: &IqFrame) -> ModFamily {
        match self {
            ClassifierMode::Oracle => OracleClassifier.classify(frame),
            ClassifierMode::Plugin(c) => c.classify(frame),
        }
    }
}

/// How the estimates of several captures become one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Classify the mean estimate against fits whose variances are divided
    /// by the number of captures.
    #[default]
    Mean,
    /// Classify every capture and take the most common class; ties go to
    /// the lower class.
    Vote,
}

/// Estimator and decision model for one modulation family.
#[derive(Clone)]
pub struct Route {
    pub estimator: Arc<dyn Estimator>,
    /// Single-capture decision model.
    pub decision: DecisionModel,
}

#[derive(Clone)]
pub struct SeiSystem {
    pub routes: BTreeMap<ModFamily, Route>,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub family: ModFamily,
    /// Index into the route's decision model.
    pub class: usize,
    /// Offset of the chosen class, when its fit was tagged with one.
    pub offset: Option<f64>,
    /// Aggregated point estimate (the mean of `estimates`).
    pub estimate: f64,
    pub estimates: Vec<f64>,
}

fn vote(classes: impl Iterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for c in classes {
        counts[c] += 1;
    }
    // First maximum: ties go to the lower class.
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0
}

impl SeiSystem {
    pub fn new(aggregation: Aggregation) -> Self {
        SeiSystem {
            routes: BTreeMap::new(),
            aggregation,
        }
    }

    pub fn with_route(mut self, family: ModFamily, route: Route) -> Self {
        self.routes.insert(family, route);
        self
    }

    pub fn route(&self, family: ModFamily) -> Result<&Route> {
        self.routes
            .get(&family)
            .ok_or_else(|| Error::Routing(format!("no estimator for {family}")))
    }

    /// Identifies the emitter behind `captures`, all labelled `family`.
    pub fn identify(&self, captures: &[IqFrame], family: ModFamily) -> Result<Identification> {
        if captures.is_empty() {
            return Err(Error::InsufficientData("identify needs a capture".into()));
        }
        let route = self.route(family)?;
        let estimates = route.estimator.estimate(captures)?;
        self.decide(family, route, estimates)
    }

    fn decide(&self, family: ModFamily, route: &Route, estimates: Vec<f64>) -> Result<Identification> {
        let k = estimates.len();
        let estimate = estimates.iter().sum::<f64>() / k as f64;
        let class = match self.aggregation {
            Aggregation::Mean if k == 1 => route.decision.classify(estimate),
            Aggregation::Mean => route.decision.averaged(k)?.classify(estimate),
            Aggregation::Vote => vote(
                estimates.iter().map(|&e| route.decision.classify(e)),
                route.decision.fits.len(),
            ),
        };
        Ok(Identification {
            family,
            class,
            offset: route.decision.fits[class].offset,
            estimate,
            estimates,
        })
    }

    /// Labels each capture group with `classifier` and identifies it.
    /// Groups whose captures disagree on the family are routed by the
    /// first capture.
    pub fn identify_labelled(
        &self,
        captures: &[IqFrame],
        classifier: &ClassifierMode,
    ) -> Result<Identification> {
        let first = captures
            .first()
            .ok_or_else(|| Error::InsufficientData("identify needs a capture".into()))?;
        self.identify(captures, classifier.classify(first))
    }
}

/// A set of emitters observed under common capture conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub emitters: Vec<EmitterProfile>,
    pub frame_len: usize,
    pub sps: f64,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    pub snr_db: Vec<f64>,
    /// Captures per decision to evaluate.
    pub captures: Vec<usize>,
    pub trials_per_snr: usize,
    /// Single-capture estimates per emitter used to fit its Gaussian.
    pub calibration_captures: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Even offset grid for the minimum-separation view, if wanted.
    #[serde(default)]
    pub separation_grid: Option<EvalGrid>,
    #[serde(default)]
    pub separation_targets: Vec<f64>,
    pub seed: u64,
}

fn default_rolloff() -> f64 {
    DEFAULT_ROLLOFF
}

impl Scenario {
    /// Five synchronized QPSK emitters with closely spaced gain imbalances,
    /// at 5 to 35 dB.
    pub fn table2() -> Self {
        let alphas = [0.1, 0.13, 0.15, 0.17, 0.19];
        let thetas = [3.0, 3.3, 3.6, 3.9, 4.2];
        let emitters = alphas
            .iter()
            .zip(thetas)
            .enumerate()
            .map(|(i, (&alpha, theta_deg))| EmitterProfile {
                id: format!("emitter-{}", i + 1),
                alpha,
                theta_deg,
                scheme: ModulationScheme::qpsk(),
            })
            .collect();
        Scenario {
            name: "table2".into(),
            emitters,
            frame_len: 1024,
            sps: 4.0,
            timing: Timing::SymbolAligned,
            rolloff: DEFAULT_ROLLOFF,
            snr_db: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
            captures: vec![1, 10],
            trials_per_snr: 2000,
            calibration_captures: 500,
            aggregation: Aggregation::Mean,
            separation_grid: Some(EvalGrid {
                lo: 0.0,
                hi: 0.3,
                step: 0.01,
                frames_per_value: 100,
            }),
            separation_targets: vec![0.05, 0.1, 0.2],
            seed: 2019,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emitters.len() < 2 {
            return Err(Error::config("a scenario needs at least two emitters"));
        }
        if self.captures.is_empty() || self.captures.contains(&0) {
            return Err(Error::config("captures per decision must be positive"));
        }
        if self.trials_per_snr == 0 || self.snr_db.is_empty() || self.frame_len == 0 {
            return Err(Error::config("scenario needs trials, SNRs and a frame length"));
        }
        for e in &self.emitters {
            self.params(e, self.snr_db[0]).validate()?;
        }
        for &snr in &self.snr_db {
            self.params(&self.emitters[0], snr).validate()?;
        }
        let mut alphas: Vec<f64> = self.emitters.iter().map(|e| e.alpha).collect();
        alphas.sort_by(f64::total_cmp);
        if alphas.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("emitters must have distinct gain imbalances"));
        }
        Ok(())
    }

    fn params(&self, e: &EmitterProfile, snr_db: f64) -> ImpairmentParams {
        ImpairmentParams {
            alpha: e.alpha,
            theta_deg: e.theta_deg,
            freq_offset: 0.0,
            sps: self.sps,
            snr_db,
        }
    }

    fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            rolloff: self.rolloff,
            timing: self.timing,
        }
    }

    fn capture(&self, e: &EmitterProfile, snr_db: f64, frame_seed: u64) -> Result<IqFrame> {
        synthesize_frame_with(e.scheme, &self.params(e, snr_db), self.frame_len, frame_seed, &self.options())
    }

    fn snr_seed(&self, stream: u64, snr_index: usize) -> u64 {
        seed::derive(seed::substream(self.seed, stream), snr_index as u64)
    }

    /// Calibration captures for every emitter at one SNR, emitter-major.
    pub fn calibration_frames(&self, snr_index: usize) -> Result<Vec<IqFrame>> {
        let base = self.snr_seed(CALIBRATION_STREAM, snr_index);
        let snr = self.snr_db[snr_index];
        let n = self.calibration_captures;
        (0..self.emitters.len() * n)
            .into_par_iter()
            .map(|i| self.capture(&self.emitters[i / n], snr, seed::derive(base, i as u64)))
            .collect()
    }

    /// Test trials at one SNR: trial `t` comes from emitter
    /// `t mod emitters` and holds the largest number of captures; smaller
    /// decisions use its leading captures.
    pub fn trial_frames(&self, snr_index: usize) -> Result<Vec<(usize, Vec<IqFrame>)>> {
        let base = self.snr_seed(TRIAL_STREAM, snr_index);
        let snr = self.snr_db[snr_index];
        let k_max = *self.captures.iter().max().unwrap_or(&1);
        (0..self.trials_per_snr)
            .into_par_iter()
            .map(|t| {
                let emitter = t % self.emitters.len();
                let trial_seed = seed::derive(base, t as u64);
                let frames = (0..k_max)
                    .map(|c| self.capture(&self.emitters[emitter], snr, seed::derive(trial_seed, c as u64)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((emitter, frames))
            })
            .collect()
    }

    /// Dataset recipe covering the scenario's capture conditions with gain
    /// drawn from `alpha`, for evaluation grids.
    pub fn grid_spec(&self, alpha: Interval, snr_db: f64) -> Result<DatasetSpec> {
        let scheme = self.emitters[0].scheme;
        let theta_lo = self.emitters.iter().map(|e| e.theta_deg).fold(f64::INFINITY, f64::min);
        let theta_hi = self.emitters.iter().map(|e| e.theta_deg).fold(f64::NEG_INFINITY, f64::max);
        Ok(DatasetSpec {
            family: scheme.family(),
            orders: vec![scheme.order()],
            target: Target::GainImbalance,
            frame_len: self.frame_len,
            splits: Splits {
                train: 0,
                val: 0,
                test: 1,
            },
            alpha,
            theta_deg: Interval::new(theta_lo, theta_hi),
            freq_offset: Interval::point(0.0),
            sps: Interval::point(self.sps),
            snr_db: Interval::point(snr_db),
            master_seed: seed::derive(seed::substream(self.seed, 13), snr_db.to_bits()),
            timing: self.timing,
            rolloff: self.rolloff,
        })
    }
}

/// Fits one Gaussian per emitter from calibration estimates laid out
/// emitter-major, tagged with the emitter's gain imbalance.
pub fn known_emitter_model(
    scenario: &Scenario,
    estimates: &[f64],
    significance: f64,
) -> Result<DecisionModel> {
    let n = scenario.calibration_captures;
    let groups = scenario
        .emitters
        .iter()
        .enumerate()
        .map(|(i, e)| (e.alpha, &estimates[i * n..(i + 1) * n]));
    let (model, failures) = DecisionModel::from_groups(groups, significance)?;
    if let Some(f) = failures.first() {
        return Err(Error::DegenerateFit(format!(
            "emitter at alpha {}: {}",
            f.offset, f.reason
        )));
    }
    if model.fits.len() != scenario.emitters.len() {
        return Err(Error::DegenerateFit("emitter fits collapsed".into()));
    }
    Ok(model)
}

/// Class index of each emitter in a known-emitter model (fits are ordered by
/// mean estimate, which need not follow the emitter order).
fn emitter_classes(scenario: &Scenario, model: &DecisionModel) -> Vec<usize> {
    scenario
        .emitters
        .iter()
        .map(|e| {
            model
                .fits
                .iter()
                .position(|f| f.offset == Some(e.alpha))
                .expect("every emitter has a fit")
        })
        .collect()
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n_f)) / (1.0 + z2 / n_f);
    let half = z / (1.0 + z2 / n_f) * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub snr_db: f64,
    pub k_captures: usize,
    pub accuracy: f64,
    pub n_trials: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Results of one estimator on a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub accuracy: Vec<AccuracyRow>,
    /// Single-capture fits per SNR.
    pub fits: Vec<(f64, Vec<GaussianFit>)>,
    pub separation: Vec<SeparationRow>,
}

impl ArmReport {
    pub fn accuracy_at(&self, snr_db: f64, k: usize) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|r| r.snr_db == snr_db && r.k_captures == k)
            .map(|r| r.accuracy)
    }
}

/// Runs every named estimator on identical calibration and test captures.
/// Each arm calibrates its own per-SNR decision model from its own output.
pub fn run_scenario(
    scenario: &Scenario,
    arms: &[(&str, &dyn Estimator)],
    significance: f64,
) -> Result<Vec<ArmReport>> {
    scenario.validate()?;
    if arms.is_empty() {
        return Err(Error::config("at least one estimator is required"));
    }
    let mut reports: Vec<ArmReport> = arms
        .iter()
        .map(|(name, _)| ArmReport {
            name: name.to_string(),
            accuracy: Vec::new(),
            fits: Vec::new(),
            separation: Vec::new(),
        })
        .collect();
    for (si, &snr) in scenario.snr_db.iter().enumerate() {
        let calibration = scenario.calibration_frames(si)?;
        let trials = scenario.trial_frames(si)?;
        let flat: Vec<IqFrame> = trials.iter().flat_map(|(_, f)| f.iter().cloned()).collect();
        let k_max = trials.first().map(|(_, f)| f.len()).unwrap_or(1);
        let grid = match &scenario.separation_grid {
            Some(g) => {
                let spec = scenario.grid_spec(Interval::new(g.lo, g.hi), snr)?;
                Some(build_eval_grid(&spec, g)?)
            }
            None => None,
        };
        for ((_, est), report) in arms.iter().zip(&mut reports) {
            let cal = est.estimate(&calibration)?;
            let model = known_emitter_model(scenario, &cal, significance)?;
            let classes = emitter_classes(scenario, &model);
            let all = est.estimate(&flat)?;
            for &k in &scenario.captures {
                let system = SeiSystem::new(scenario.aggregation);
                let route = Route {
                    estimator: Arc::new(NullEstimator),
                    decision: model.clone(),
                };
                let correct = trials
                    .iter()
                    .enumerate()
                    .map(|(t, (emitter, _))| {
                        let e = all[t * k_max..t * k_max + k].to_vec();
                        let family = scenario.emitters[*emitter].scheme.family();
                        let id = system.decide(family, &route, e)?;
                        Ok(usize::from(id.class == classes[*emitter]))
                    })
                    .sum::<Result<usize>>()?;
                let n = trials.len();
                let (ci_low, ci_high) = wilson_interval(correct, n, 1.959_963_984_540_054);
                report.accuracy.push(AccuracyRow {
                    snr_db: snr,
                    k_captures: k,
                    accuracy: correct as f64 / n as f64,
                    n_trials: n,
                    ci_low,
                    ci_high,
                });
            }
            report.fits.push((snr, model.fits.clone()));
            if let Some(grid) = &grid {
                let g = GridEstimates::new(grid, *est)?;
                let (grid_fits, _) = fit_groups(g.groups())?;
                for &t in &scenario.separation_targets {
                    report.separation.push(SeparationRow {
                        snr_db: snr,
                        target_err: t,
                        min_separation: min_separation(&grid_fits, t)?,
                    });
                }
            }
        }
    }
    Ok(reports)
}

/// Stand-in for routes whose estimates were computed up front.
struct NullEstimator;

impl Estimator for NullEstimator {
    fn estimate(&self, _: &[IqFrame]) -> Result<Vec<f64>> {
        Err(Error::Internal("estimates are supplied directly".into()))
    }
}

/// Table II accuracy of a single narrow-range estimator.
pub fn run_table2_scenario(
    scenario: &Scenario,
    narrow: &dyn Estimator,
    significance: f64,
) -> Result<ArmReport> {
    Ok(run_scenario(scenario, &[("narrow", narrow)], significance)?.remove(0))
}

/// Narrow- and wide-range estimators on identical captures.
pub fn wide_vs_narrow_study(
    scenario: &Scenario,
    narrow: &dyn Estimator,
    wide: &dyn Estimator,
    significance: f64,
) -> Result<(ArmReport, ArmReport)> {
    let mut r = run_scenario(scenario, &[("narrow", narrow), ("wide", wide)], significance)?;
    let wide_report = r.pop().unwrap();
    Ok((r.pop().unwrap(), wide_report))
}

/// Writes `accuracy_vs_snr.csv` with Wilson 95% bounds.
pub fn write_accuracy_csv(path: &std::path::Path, rows: &[AccuracyRow]) -> Result<()> {
    let mut out = String::from("snr_db,k_captures,accuracy,n_trials,ci_low,ci_high\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.snr_db, r.k_captures, r.accuracy, r.n_trials, r.ci_low, r.ci_high
        ));
    }
    crate::fsutil::write_atomic_bytes(path, out.as_bytes())
}
