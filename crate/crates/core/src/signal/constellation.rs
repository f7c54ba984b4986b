//! Unit-power QAM and PSK constellations.
//!
//! Points are indexed by symbol value, so `points[v]` is the point that
//! carries bit pattern `v`. Square QAM and PSK use Gray labelling; 8QAM is a
//! 4x2 rectangle (Gray per axis) and 32QAM is the usual 6x6 cross with the
//! corners removed, labelled in raster order.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ModFamily, ModulationScheme};

pub fn build_constellation(scheme: ModulationScheme) -> Vec<Complex64> {
    let raw = match (scheme.family(), scheme.order()) {
        (ModFamily::Psk, m) => psk_points(m),
        (ModFamily::Qam, 8) => rect_qam(4, 2),
        (ModFamily::Qam, 32) => cross_qam32(),
        (ModFamily::Qam, m) => {
            let side = (m as f64).sqrt().round() as usize;
            rect_qam(side, side)
        }
    };
    normalize_unit_power(raw)
}

fn gray(v: usize) -> usize {
    v ^ (v >> 1)
}

fn psk_points(order: u32) -> Vec<Complex64> {
    let m = order as usize;
    let offset = if m == 4 { PI / 4.0 } else { 0.0 };
    let mut points = vec![Complex64::new(0.0, 0.0); m];
    for pos in 0..m {
        let angle = 2.0 * PI * pos as f64 / m as f64 + offset;
        points[gray(pos)] = Complex64::from_polar(1.0, angle);
    }
    points
}

/// Grid of `ni` x `nq` odd-integer levels, labelled with Gray code per axis
/// (I bits in the high part of the symbol value).
fn rect_qam(ni: usize, nq: usize) -> Vec<Complex64> {
    let level = |pos: usize, n: usize| 2.0 * pos as f64 - (n as f64 - 1.0);
    let q_bits = nq.trailing_zeros();
    let mut points = vec![Complex64::new(0.0, 0.0); ni * nq];
    for pi in 0..ni {
        for pq in 0..nq {
            let v = (gray(pi) << q_bits) | gray(pq);
            points[v] = Complex64::new(level(pi, ni), level(pq, nq));
        }
    }
    points
}

fn cross_qam32() -> Vec<Complex64> {
    let mut points = Vec::with_capacity(32);
    for q in (0..6).rev() {
        for i in 0..6 {
            let corner = (i == 0 || i == 5) && (q == 0 || q == 5);
            if !corner {
                points.push(Complex64::new(
                    2.0 * i as f64 - 5.0,
                    2.0 * q as f64 - 5.0,
                ));
            }
        }
    }
    points
}

fn normalize_unit_power(points: Vec<Complex64>) -> Vec<Complex64> {
    let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
    let scale = power.sqrt().recip();
    points.into_iter().map(|p| p * scale).collect()
}
