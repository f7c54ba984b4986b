use num_complex::{Complex32, Complex64};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::impair::{add_noise_in_place, apply_freq_offset, apply_iq_imbalance, mean_power, noise_variance};
use super::pulse::{modulate, pulse_delay, steady_state, RRC_SPAN_SYMBOLS};
use super::{build_constellation, ImpairmentParams, IqFrame, ModulationScheme, DEFAULT_ROLLOFF};
use crate::error::{Error, Result};
use crate::seed;

const NOISE_STREAM: u64 = 1;

/// Where a frame starts within the generated waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Uniform over the transient-free region (unsynchronized capture).
    #[default]
    RandomCrop,
    /// First sample is a symbol peak. Requires an integer `sps`.
    SymbolAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub rolloff: f64,
    pub timing: Timing,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            rolloff: DEFAULT_ROLLOFF,
            timing: Timing::RandomCrop,
        }
    }
}

/// A synthesized frame together with its noise-free counterpart.
#[derive(Debug, Clone)]
pub struct FrameSynthesis {
    pub frame: IqFrame,
    /// The same crop before noise was added.
    pub clean: Vec<Complex64>,
    /// Every transmitted symbol of the underlying waveform.
    pub symbols: Vec<Complex64>,
    /// Offset of the crop within the generated waveform.
    pub start: usize,
}

pub fn random_symbols<R: Rng>(scheme: ModulationScheme, n: usize, rng: &mut R) -> Vec<Complex64> {
    let points = build_constellation(scheme);
    (0..n)
        .map(|_| points[rng.random_range(0..points.len())])
        .collect()
}

pub fn synthesize_frame(
    scheme: ModulationScheme,
    params: &ImpairmentParams,
    n_samples: usize,
    seed: u64,
) -> Result<IqFrame> {
    synthesize_frame_with(scheme, params, n_samples, seed, &SynthesisOptions::default())
}

pub fn synthesize_frame_with(
    scheme: ModulationScheme,
    params: &ImpairmentParams,
    n_samples: usize,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<IqFrame> {
    synthesize_with_reference(scheme, params, n_samples, seed, options).map(|s| s.frame)
}

/// Full frame recipe. Every random draw comes from `seed`.
pub fn synthesize_with_reference(
    scheme: ModulationScheme,
    params: &ImpairmentParams,
    n_samples: usize,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<FrameSynthesis> {
    params.validate()?;
    if n_samples == 0 {
        return Err(Error::config("frame length must be positive"));
    }
    let sps = params.sps;
    let aligned_rate = match options.timing {
        Timing::RandomCrop => None,
        Timing::SymbolAligned => {
            let r = sps.round();
            if (sps - r).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "symbol-aligned frames need an integer sps, got {sps}"
                )));
            }
            Some(r as usize)
        }
    };

    let mut rng = seed::rng(seed);
    let n_symbols = (n_samples as f64 / sps).ceil() as usize + 3 * RRC_SPAN_SYMBOLS + 4;
    let symbols = random_symbols(scheme, n_symbols, &mut rng);

    let wave = modulate(&symbols, sps, options.rolloff)?;
    let wave = apply_iq_imbalance(&wave, params.alpha, params.theta_deg);
    let wave = apply_freq_offset(&wave, params.freq_offset);

    let (lo, hi) = steady_state(wave.len(), sps);
    if hi < lo + n_samples {
        return Err(Error::Internal(format!(
            "generated {} steady-state samples, frame needs {n_samples}",
            hi.saturating_sub(lo)
        )));
    }
    let start = match aligned_rate {
        None => rng.random_range(lo..=hi - n_samples),
        Some(rate) => {
            let delay = pulse_delay(sps) as usize;
            let k_lo = lo.saturating_sub(delay).div_ceil(rate);
            let k_hi = (hi - n_samples - delay) / rate;
            rng.random_range(k_lo..=k_hi) * rate + delay
        }
    };

    let signal_power = mean_power(&wave[lo..hi]);
    let clean = wave[start..start + n_samples].to_vec();
    let mut noisy = clean.clone();
    let mut noise_rng = seed::rng(seed::substream(seed, NOISE_STREAM));
    add_noise_in_place(
        &mut noisy,
        noise_variance(signal_power, params.snr_db),
        &mut noise_rng,
    );

    let samples = noisy
        .iter()
        .map(|z| Complex32::new(z.re as f32, z.im as f32))
        .collect();
    Ok(FrameSynthesis {
        frame: IqFrame {
            samples,
            truth: *params,
            scheme,
            seed,
        },
        clean,
        symbols,
        start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{demodulate, ModFamily};

    fn params(snr_db: f64) -> ImpairmentParams {
        ImpairmentParams {
            alpha: 0.2,
            theta_deg: -4.0,
            freq_offset: 0.03,
            sps: 2.7,
            snr_db,
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let s = ModulationScheme::new(ModFamily::Qam, 16).unwrap();
        let a = synthesize_frame(s, &params(10.0), 1024, 77).unwrap();
        let b = synthesize_frame(s, &params(10.0), 1024, 77).unwrap();
        assert_eq!(a, b);
        let c = synthesize_frame(s, &params(10.0), 1024, 78).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn frames_have_requested_length_and_are_finite() {
        for (fam, order) in [(ModFamily::Qam, 8), (ModFamily::Psk, 2), (ModFamily::Qam, 64)] {
            let s = ModulationScheme::new(fam, order).unwrap();
            for n in [512, 1024, 2048] {
                for sps in [1.62, 3.0, 5.4] {
                    let p = ImpairmentParams { sps, ..params(0.0) };
                    let f = synthesize_frame(s, &p, n, 5).unwrap();
                    assert_eq!(f.len(), n);
                    assert!(f.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
                }
            }
        }
    }

    #[test]
    fn aligned_clean_frame_demodulates() {
        let s = ModulationScheme::new(ModFamily::Qam, 16).unwrap();
        let p = ImpairmentParams::ideal(4.0, 35.0);
        let opts = SynthesisOptions {
            timing: Timing::SymbolAligned,
            ..Default::default()
        };
        let syn = synthesize_with_reference(s, &p, 1024, 3, &opts).unwrap();
        // re-insert the crop into a zero-padded timeline starting at the
        // modulator origin, so the receiver's timing applies unchanged
        let mut timeline = vec![Complex64::new(0.0, 0.0); syn.start];
        timeline.extend(syn.frame.samples.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)));
        let rx = demodulate(&timeline, 4.0, 0.35).unwrap();
        let first = syn.start / 4 + RRC_SPAN_SYMBOLS;
        let last = rx.len() - RRC_SPAN_SYMBOLS;
        let points = build_constellation(s);
        let scale: f64 = {
            let num: f64 = (first..last).map(|k| (rx[k] * syn.symbols[k].conj()).re).sum();
            let den: f64 = (first..last).map(|k| syn.symbols[k].norm_sqr()).sum();
            num / den
        };
        for (k, (&rk, &sym)) in rx.iter().zip(&syn.symbols).enumerate().take(last).skip(first) {
            let r = rk / scale;
            let nearest = points
                .iter()
                .min_by(|a, b| (r - **a).norm().total_cmp(&(r - **b).norm()))
                .unwrap();
            assert_eq!(*nearest, sym, "symbol {k}");
        }
    }

    #[test]
    fn aligned_needs_integer_sps() {
        let opts = SynthesisOptions {
            timing: Timing::SymbolAligned,
            ..Default::default()
        };
        let err = synthesize_frame_with(ModulationScheme::qpsk(), &params(10.0), 256, 1, &opts);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn measured_snr_matches_request() {
        let s = ModulationScheme::qpsk();
        let p = params(10.0);
        let mut total = 0.0;
        let n = 400;
        for seed in 0..n {
            let syn = synthesize_with_reference(s, &p, 1024, seed, &SynthesisOptions::default()).unwrap();
            let sig = mean_power(&syn.clean);
            let noise: f64 = syn
                .frame
                .samples
                .iter()
                .zip(&syn.clean)
                .map(|(y, x)| (Complex64::new(y.re as f64, y.im as f64) - x).norm_sqr())
                .sum::<f64>()
                / 1024.0;
            total += 10.0 * (sig / noise).log10();
        }
        let mean = total / n as f64;
        assert!((mean - 10.0).abs() < 0.2, "{mean}");
    }
}
