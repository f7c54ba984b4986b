//! Root-raised-cosine pulse shaping, fractional-rate modulation and the
//! matching receiver used for round-trip checks.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::impair::mean_power;
use super::resample::PolyphaseResampler;
use crate::error::{Error, Result};

/// Filter span of the RRC pulse, in symbols.
pub const RRC_SPAN_SYMBOLS: usize = 11;
const RESAMPLER_PHASES: usize = 64;

/// Unit-energy RRC taps at an integer oversampling factor. The length is
/// odd and the peak sits at index `len / 2`.
pub fn rrc_taps(sps: usize, rolloff: f64) -> Vec<f64> {
    let half = (RRC_SPAN_SYMBOLS * sps) / 2;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|n| rrc_impulse((n as f64 - half as f64) / sps as f64, rolloff))
        .collect();
    let energy = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= energy);
    taps
}

/// RRC impulse response at time `t` in symbol periods (unnormalized).
fn rrc_impulse(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 + beta * (4.0 / PI - 1.0);
    }
    if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

fn integer_sps(sps: f64) -> Option<usize> {
    let r = sps.round();
    ((sps - r).abs() < 1e-9).then_some(r as usize)
}

/// Oversampling used to shape at a fractional rate before resampling.
fn base_rate(sps: f64) -> usize {
    2 * sps.ceil() as usize
}

fn check_args(n: usize, sps: f64, rolloff: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InsufficientData("empty symbol list".into()));
    }
    if !(sps.is_finite() && sps > 1.0) {
        return Err(Error::config(format!("sps = {sps} must exceed 1")));
    }
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::config(format!("rolloff = {rolloff} outside (0, 1]")));
    }
    Ok(())
}

fn shape_integer(symbols: &[Complex64], sps: usize, taps: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); (symbols.len() - 1) * sps + taps.len()];
    for (k, s) in symbols.iter().enumerate() {
        let base = k * sps;
        for (j, h) in taps.iter().enumerate() {
            out[base + j] += s * *h;
        }
    }
    out
}

fn convolve_real(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); signal.len() + taps.len() - 1];
    for (n, x) in signal.iter().enumerate() {
        for (j, h) in taps.iter().enumerate() {
            out[n + j] += x * *h;
        }
    }
    out
}

/// Sample index (possibly fractional) of symbol 0's pulse peak in the output
/// of [`pulse_shape`] / [`modulate`].
pub fn pulse_delay(sps: f64) -> f64 {
    match integer_sps(sps) {
        Some(l) => ((RRC_SPAN_SYMBOLS * l) / 2) as f64,
        None => {
            let base = base_rate(sps);
            ((RRC_SPAN_SYMBOLS * base) / 2) as f64 * sps / base as f64
        }
    }
}

/// RRC pulse train at `sps` samples per symbol, without power normalization.
///
/// Integer rates are shaped directly. Fractional rates are shaped at an even
/// integer rate above `sps` and then resampled with the polyphase filter.
pub fn pulse_shape(symbols: &[Complex64], sps: f64, rolloff: f64) -> Result<Vec<Complex64>> {
    check_args(symbols.len(), sps, rolloff)?;
    match integer_sps(sps) {
        Some(l) => Ok(shape_integer(symbols, l, &rrc_taps(l, rolloff))),
        None => {
            let base = base_rate(sps);
            let shaped = shape_integer(symbols, base, &rrc_taps(base, rolloff));
            Ok(PolyphaseResampler::new(sps / base as f64, RESAMPLER_PHASES).process(&shaped))
        }
    }
}

/// Pulse-shaped baseband scaled to unit average power over the steady-state
/// part of the waveform (filter ramp-up and ramp-down excluded).
pub fn modulate(symbols: &[Complex64], sps: f64, rolloff: f64) -> Result<Vec<Complex64>> {
    let mut out = pulse_shape(symbols, sps, rolloff)?;
    let (lo, hi) = steady_state(out.len(), sps);
    let power = if hi > lo {
        mean_power(&out[lo..hi])
    } else {
        mean_power(&out)
    };
    if power > 0.0 {
        let scale = power.sqrt().recip();
        out.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(out)
}

/// Sample range of a modulated waveform that is free of filter transients.
pub(crate) fn steady_state(len: usize, sps: f64) -> (usize, usize) {
    let edge = (RRC_SPAN_SYMBOLS as f64 * sps).ceil() as usize;
    (edge.min(len), len.saturating_sub(edge))
}

/// Matched-filter receiver: converts back to an integer rate if needed,
/// filters with the RRC and samples at the symbol peaks. Returns one value per
/// transmitted symbol, assuming `signal` starts at the modulator's first
/// output sample; symbols whose peak falls outside the signal are omitted.
pub fn demodulate(signal: &[Complex64], sps: f64, rolloff: f64) -> Result<Vec<Complex64>> {
    check_args(signal.len(), sps, rolloff)?;
    let (rate, at_rate) = match integer_sps(sps) {
        Some(l) => (l, signal.to_vec()),
        None => {
            let base = base_rate(sps);
            let up = PolyphaseResampler::new(base as f64 / sps, RESAMPLER_PHASES).process(signal);
            (base, up)
        }
    };
    let taps = rrc_taps(rate, rolloff);
    let filtered = convolve_real(&at_rate, &taps);
    let delay = taps.len() - 1;
    Ok((0..)
        .map(|k| k * rate + delay)
        .take_while(|&i| i < filtered.len())
        .map(|i| filtered[i])
        .collect())
}
