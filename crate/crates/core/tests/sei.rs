use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use iqsei::dataset::Target;
use iqsei::decision::{DecisionModel, GaussianFit};
use iqsei::eval::{sample_variance, Estimator, OracleEstimator};
use iqsei::sei::{
    run_table2_scenario, wide_vs_narrow_study, write_accuracy_csv, Aggregation, ClassifierMode,
    ModulationClassifier, Route, Scenario, SeiSystem,
};
use iqsei::signal::{IqFrame, ModFamily};
use iqsei::{seed, Error, Result};
use rand_distr::{Distribution, Normal};

/// True gain plus Gaussian noise seeded by the capture, shrinking with SNR.
struct NoisyEstimator {
    sigma_at_0db: f64,
}

impl Estimator for NoisyEstimator {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        Ok(frames
            .iter()
            .map(|f| {
                let sigma = self.sigma_at_0db * 10f64.powf(-f.truth.snr_db / 20.0);
                let mut rng = seed::rng(f.seed);
                f.truth.alpha + Normal::new(0.0, sigma).unwrap().sample(&mut rng)
            })
            .collect())
    }
}

struct CountingEstimator(AtomicUsize);

impl Estimator for CountingEstimator {
    fn estimate(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        self.0.fetch_add(frames.len(), Ordering::SeqCst);
        Ok(vec![0.0; frames.len()])
    }
}

fn small_scenario() -> Scenario {
    Scenario {
        frame_len: 64,
        trials_per_snr: 300,
        calibration_captures: 200,
        snr_db: vec![5.0, 15.0, 25.0, 35.0],
        separation_grid: None,
        ..Scenario::table2()
    }
}

fn emitter_model(sigma2: f64) -> DecisionModel {
    let fits = Scenario::table2()
        .emitters
        .iter()
        .map(|e| GaussianFit::from_moments(e.alpha, sigma2).unwrap().with_offset(e.alpha))
        .collect();
    DecisionModel::new(fits, 0.05).unwrap()
}

fn psk_system(estimator: Arc<dyn Estimator>, aggregation: Aggregation) -> SeiSystem {
    SeiSystem::new(aggregation).with_route(
        ModFamily::Psk,
        Route {
            estimator,
            decision: emitter_model(1e-4),
        },
    )
}

#[test]
fn oracle_estimator_identifies_every_emitter() {
    let scenario = small_scenario();
    let system = psk_system(Arc::new(OracleEstimator(Target::GainImbalance)), Aggregation::Mean);
    for (emitter, frames) in scenario.trial_frames(0).unwrap().iter().take(50) {
        let id = system.identify(&frames[..1], ModFamily::Psk).unwrap();
        assert_eq!(id.class, *emitter);
        assert_eq!(id.offset, Some(scenario.emitters[*emitter].alpha));
        let id = system
            .identify_labelled(frames, &ClassifierMode::Oracle)
            .unwrap();
        assert_eq!(id.class, *emitter);
    }
}

#[test]
fn routing_never_crosses_families() {
    let qam = Arc::new(CountingEstimator(AtomicUsize::new(0)));
    let psk = Arc::new(CountingEstimator(AtomicUsize::new(0)));
    let system = SeiSystem::new(Aggregation::Mean)
        .with_route(
            ModFamily::Qam,
            Route {
                estimator: qam.clone(),
                decision: emitter_model(1e-4),
            },
        )
        .with_route(
            ModFamily::Psk,
            Route {
                estimator: psk.clone(),
                decision: emitter_model(1e-4),
            },
        );
    let frames = small_scenario().trial_frames(0).unwrap();
    for (_, f) in frames.iter().take(20) {
        system.identify_labelled(f, &ClassifierMode::Oracle).unwrap();
    }
    assert_eq!(qam.0.load(Ordering::SeqCst), 0);
    assert_eq!(psk.0.load(Ordering::SeqCst), 20 * 10);

    let psk_only = psk_system(psk, Aggregation::Mean);
    assert!(matches!(
        psk_only.identify(&frames[0].1, ModFamily::Qam),
        Err(Error::Routing(_))
    ));
    assert!(psk_only.identify(&[], ModFamily::Psk).is_err());
}

#[test]
fn plugin_classifier_is_consulted() {
    struct AlwaysQam;
    impl ModulationClassifier for AlwaysQam {
        fn classify(&self, _: &IqFrame) -> ModFamily {
            ModFamily::Qam
        }
    }
    let system = psk_system(Arc::new(OracleEstimator(Target::GainImbalance)), Aggregation::Mean);
    let frames = small_scenario().trial_frames(0).unwrap();
    let err = system.identify_labelled(&frames[0].1, &ClassifierMode::Plugin(Arc::new(AlwaysQam)));
    assert!(matches!(err, Err(Error::Routing(_))));
}

#[test]
fn averaging_reduces_variance_by_about_k() {
    let scenario = Scenario {
        trials_per_snr: 1000,
        ..small_scenario()
    };
    let est = NoisyEstimator { sigma_at_0db: 0.1 };
    let trials = scenario.trial_frames(1).unwrap();
    let system = psk_system(Arc::new(NoisyEstimator { sigma_at_0db: 0.1 }), Aggregation::Mean);
    let alpha0 = scenario.emitters[0].alpha;
    let from_first: Vec<&Vec<IqFrame>> = trials
        .iter()
        .filter(|(e, _)| *e == 0)
        .map(|(_, f)| f)
        .collect();
    let single: Vec<f64> = from_first
        .iter()
        .map(|f| est.estimate(&f[..1]).unwrap()[0] - alpha0)
        .collect();
    let v1 = sample_variance(&single);
    for k in [4, 10] {
        let means: Vec<f64> = from_first
            .iter()
            .map(|f| system.identify(&f[..k], ModFamily::Psk).unwrap().estimate)
            .collect();
        let ratio = v1 / sample_variance(&means);
        assert!(ratio >= k as f64 / 2.0 && ratio <= 2.0 * k as f64, "k {k}: {ratio}");
    }
}

#[test]
fn identification_is_deterministic() {
    let system = psk_system(Arc::new(NoisyEstimator { sigma_at_0db: 0.3 }), Aggregation::Vote);
    let frames = small_scenario().trial_frames(0).unwrap();
    for (_, f) in frames.iter().take(10) {
        assert_eq!(
            system.identify(f, ModFamily::Psk).unwrap(),
            system.identify(f, ModFamily::Psk).unwrap()
        );
    }
}

#[test]
fn more_captures_help_on_the_table2_scenario() {
    let scenario = small_scenario();
    let report = run_table2_scenario(&scenario, &NoisyEstimator { sigma_at_0db: 0.3 }, 0.05).unwrap();
    for &snr in &scenario.snr_db {
        let k1 = report.accuracy_at(snr, 1).unwrap();
        let k10 = report.accuracy_at(snr, 10).unwrap();
        assert!(k10 >= k1, "snr {snr}: {k10} < {k1}");
        if snr >= 10.0 {
            assert!(k1 >= 0.2);
        }
    }
    assert!(report.accuracy_at(35.0, 10).unwrap() > 0.95);
    let row = report.accuracy[0];
    assert!(row.ci_low <= row.accuracy && row.accuracy <= row.ci_high);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("accuracy_vs_snr.csv");
    write_accuracy_csv(&path, &report.accuracy).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("snr_db,k_captures,accuracy,n_trials"));
    assert_eq!(text.lines().count(), 1 + 2 * scenario.snr_db.len());
}

#[test]
fn vote_aggregation_also_improves_with_captures() {
    let scenario = Scenario {
        aggregation: Aggregation::Vote,
        snr_db: vec![25.0],
        ..small_scenario()
    };
    let report = run_table2_scenario(&scenario, &NoisyEstimator { sigma_at_0db: 0.3 }, 0.05).unwrap();
    assert!(report.accuracy_at(25.0, 10).unwrap() >= report.accuracy_at(25.0, 1).unwrap());
}

#[test]
fn tighter_estimator_wins_on_identical_captures() {
    let scenario = Scenario {
        separation_grid: Some(iqsei::dataset::EvalGrid {
            lo: 0.0,
            hi: 0.3,
            step: 0.02,
            frames_per_value: 40,
        }),
        separation_targets: vec![0.05, 0.2],
        ..small_scenario()
    };
    let (narrow, wide) = wide_vs_narrow_study(
        &scenario,
        &NoisyEstimator { sigma_at_0db: 0.2 },
        &NoisyEstimator { sigma_at_0db: 1.0 },
        0.05,
    )
    .unwrap();
    for &snr in &scenario.snr_db {
        assert!(narrow.accuracy_at(snr, 1).unwrap() >= wide.accuracy_at(snr, 1).unwrap());
    }
    assert_eq!(narrow.separation.len(), 2 * scenario.snr_db.len());
    assert_eq!(narrow.fits.len(), scenario.snr_db.len());
}

#[test]
fn different_estimators_give_different_boundaries() {
    let scenario = small_scenario();
    let a = run_table2_scenario(&scenario, &NoisyEstimator { sigma_at_0db: 0.2 }, 0.05).unwrap();
    let b = run_table2_scenario(&scenario, &NoisyEstimator { sigma_at_0db: 0.6 }, 0.05).unwrap();
    assert_ne!(a.fits, b.fits);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = small_scenario();
    s.emitters.truncate(1);
    assert!(matches!(
        run_table2_scenario(&s, &OracleEstimator(Target::GainImbalance), 0.05),
        Err(Error::Config(_))
    ));
    let mut s = small_scenario();
    s.captures = vec![0];
    assert!(s.validate().is_err());
    let mut s = small_scenario();
    s.emitters[1].alpha = s.emitters[0].alpha;
    assert!(s.validate().is_err());
}
