use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

/// Transmitter IQ imbalance on the in-phase branch:
/// `(1 + alpha) * e^{j theta} * I + j * Q`.
pub fn apply_iq_imbalance(signal: &[Complex64], alpha: f64, theta_deg: f64) -> Vec<Complex64> {
    let gain = Complex64::from_polar(1.0 + alpha, theta_deg.to_radians());
    signal
        .iter()
        .map(|x| gain * x.re + Complex64::new(0.0, x.im))
        .collect()
}

/// Multiplies sample `n` by `e^{j 2 pi f n}`.
pub fn apply_freq_offset(signal: &[Complex64], f_norm: f64) -> Vec<Complex64> {
    if f_norm == 0.0 {
        return signal.to_vec();
    }
    signal
        .iter()
        .enumerate()
        .map(|(n, x)| {
            // reduce the phase first so long signals keep full precision
            let cycles = (f_norm * n as f64).fract();
            x * Complex64::from_polar(1.0, 2.0 * PI * cycles)
        })
        .collect()
}

pub fn mean_power(signal: &[Complex64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    signal.iter().map(|x| x.norm_sqr()).sum::<f64>() / signal.len() as f64
}

/// Adds circularly symmetric white Gaussian noise at `snr_db` relative to the
/// measured power of `signal`. `snr_db = +inf` returns the input unchanged.
pub fn add_awgn(signal: &[Complex64], snr_db: f64, rng_seed: u64) -> Result<Vec<Complex64>> {
    if signal.is_empty() {
        return Err(Error::InsufficientData("empty signal".into()));
    }
    let power = mean_power(signal);
    if power <= 0.0 {
        return Err(Error::InsufficientData(
            "zero-power signal has no defined SNR".into(),
        ));
    }
    let mut out = signal.to_vec();
    let mut rng = seed::rng(rng_seed);
    add_noise_in_place(&mut out, noise_variance(power, snr_db), &mut rng);
    Ok(out)
}

pub(crate) fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Total complex variance `variance`, half in each quadrature.
pub(crate) fn add_noise_in_place<R: Rng>(signal: &mut [Complex64], variance: f64, rng: &mut R) {
    if variance == 0.0 {
        return;
    }
    let sigma = (variance / 2.0).sqrt();
    for x in signal.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *x += Complex64::new(re * sigma, im * sigma);
    }
}
