//! Fractional-rate conversion with a windowed-sinc polyphase filter bank.

use std::f64::consts::PI;

use num_complex::Complex64;

const KAISER_BETA: f64 = 7.0;
/// Filter half-width, in samples of the lower of the two rates.
const HALF_WIDTH_LOW_RATE: f64 = 24.0;

/// Resamples by an arbitrary real ratio (output rate / input rate).
///
/// The prototype lowpass is a Kaiser-windowed sinc with its cutoff at the
/// lower of the two Nyquist frequencies. It is tabulated at `phases`
/// fractional offsets per input sample; intermediate offsets are linearly
/// interpolated between neighbouring phases. Output sample `m` sits at input
/// time `m / ratio`, so the conversion introduces no delay.
#[derive(Debug, Clone)]
pub struct PolyphaseResampler {
    ratio: f64,
    phases: usize,
    half_width: usize,
    table: Vec<f64>,
}

impl PolyphaseResampler {
    pub fn new(ratio: f64, phases: usize) -> Self {
        assert!(ratio.is_finite() && ratio > 0.0, "ratio must be positive");
        assert!(phases > 0);
        let narrow = ratio.min(1.0);
        let cutoff = 0.5 * narrow;
        let half_width = (HALF_WIDTH_LOW_RATE / narrow).ceil() as usize;
        let taps = 2 * half_width;
        let i0_beta = bessel_i0(KAISER_BETA);

        let mut table = vec![0.0; (phases + 1) * taps];
        for p in 0..=phases {
            let frac = p as f64 / phases as f64;
            let row = &mut table[p * taps..(p + 1) * taps];
            for (j, coef) in row.iter_mut().enumerate() {
                let k = j as f64 - (half_width as f64 - 1.0);
                let tau = frac - k;
                let u = tau / half_width as f64;
                let window = if u.abs() <= 1.0 {
                    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta
                } else {
                    0.0
                };
                *coef = 2.0 * cutoff * sinc(2.0 * cutoff * tau) * window;
            }
            let dc: f64 = row.iter().sum();
            row.iter_mut().for_each(|c| *c /= dc);
        }

        PolyphaseResampler {
            ratio,
            phases,
            half_width,
            table,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Number of output samples produced from `n` input samples.
    pub fn output_len(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        ((n - 1) as f64 * self.ratio).floor() as usize + 1
    }

    pub fn process(&self, input: &[Complex64]) -> Vec<Complex64> {
        let taps = 2 * self.half_width;
        let n_out = self.output_len(input.len());
        let mut out = Vec::with_capacity(n_out);
        let mut coefs = vec![0.0; taps];
        for m in 0..n_out {
            let t = m as f64 / self.ratio;
            let n0 = t.floor();
            let pos = (t - n0) * self.phases as f64;
            let p0 = (pos.floor() as usize).min(self.phases - 1);
            let w = pos - p0 as f64;
            let lo = &self.table[p0 * taps..(p0 + 1) * taps];
            let hi = &self.table[(p0 + 1) * taps..(p0 + 2) * taps];
            for j in 0..taps {
                coefs[j] = (1.0 - w) * lo[j] + w * hi[j];
            }

            let first = n0 as isize - (self.half_width as isize - 1);
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, c) in coefs.iter().enumerate() {
                let idx = first + j as isize;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += input[idx as usize] * *c;
                }
            }
            out.push(acc);
        }
        out
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, f: f64) -> Vec<Complex64> {
        (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f * i as f64))
            .collect()
    }

    #[test]
    fn bessel_i0_reference() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(7.0) - 168.593_908_510_289_6).abs() < 1e-9);
    }

    #[test]
    fn unit_ratio_reproduces_input() {
        let x = tone(300, 0.1);
        let y = PolyphaseResampler::new(1.0, 64).process(&x);
        assert_eq!(y.len(), x.len());
        for i in 40..260 {
            assert!((y[i] - x[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn in_band_tone_is_interpolated() {
        // 0.08 cycles/input sample, resampled to 1.37x: expect the same tone at
        // 0.08/1.37 cycles per output sample
        let f = 0.08;
        let ratio = 1.37;
        let x = tone(2000, f);
        let y = PolyphaseResampler::new(ratio, 64).process(&x);
        let n = y.len();
        for (m, &ym) in y.iter().enumerate().take(n - 200).skip(200) {
            let expect = Complex64::from_polar(1.0, 2.0 * PI * f * m as f64 / ratio);
            assert!((ym - expect).norm() < 2e-3, "m={m} err={}", (ym - expect).norm());
        }
    }

    #[test]
    fn decimation_round_trip() {
        let f = 0.05;
        let x = tone(3000, f);
        let down = PolyphaseResampler::new(0.4, 64).process(&x);
        let up = PolyphaseResampler::new(2.5, 64).process(&down);
        for i in 400..up.len().min(x.len()) - 400 {
            assert!((up[i] - x[i]).norm() < 5e-3);
        }
    }

    #[test]
    fn out_of_band_tone_is_rejected_when_decimating() {
        // 0.35 cycles/sample is above the 0.25 output Nyquist at ratio 0.5
        let x = tone(4000, 0.35);
        let y = PolyphaseResampler::new(0.5, 64).process(&x);
        let power: f64 =
            y[200..y.len() - 200].iter().map(|v| v.norm_sqr()).sum::<f64>() / (y.len() - 400) as f64;
        assert!(power < 1e-4, "{power}");
    }
}
