//! Complex-baseband waveform synthesis with transmitter IQ imbalance.
//!
//! The transmitter model is the baseband equivalent of a quadrature
//! modulator whose in-phase branch carries a gain error `alpha` and a phase
//! error `theta`:
//!
//! ```text
//! z = (1 + alpha) * e^{j theta} * Re(x) + j * Im(x)
//! ```
//!
//! A frame is built as symbols -> RRC pulse shaping at a (possibly
//! fractional) samples-per-symbol rate -> unit power normalization ->
//! IQ imbalance -> carrier frequency offset -> AWGN -> random crop.

mod constellation;
mod frame;
mod impair;
mod pulse;
mod resample;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use constellation::build_constellation;
pub use frame::{
    random_symbols, synthesize_frame, synthesize_frame_with, synthesize_with_reference,
    SynthesisOptions, Timing,
};
pub use impair::{add_awgn, apply_freq_offset, apply_iq_imbalance, mean_power};
pub use pulse::{demodulate, modulate, pulse_shape, rrc_taps, RRC_SPAN_SYMBOLS};
pub use resample::PolyphaseResampler;

/// Roll-off of the transmit RRC filter.
pub const DEFAULT_ROLLOFF: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModFamily {
    Qam,
    Psk,
}

impl ModFamily {
    pub fn supported_orders(self) -> &'static [u32] {
        match self {
            ModFamily::Qam => &[8, 16, 32, 64],
            ModFamily::Psk => &[2, 4, 8, 16],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModFamily::Qam => "qam",
            ModFamily::Psk => "psk",
        }
    }
}

impl fmt::Display for ModFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qam" => Ok(ModFamily::Qam),
            "psk" => Ok(ModFamily::Psk),
            other => Err(Error::config(format!("unknown modulation family {other:?}"))),
        }
    }
}

/// A modulation family together with its order, e.g. 16QAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct ModulationScheme {
    family: ModFamily,
    order: u32,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    family: ModFamily,
    order: u32,
}

impl TryFrom<SchemeRepr> for ModulationScheme {
    type Error = Error;

    fn try_from(r: SchemeRepr) -> Result<Self> {
        ModulationScheme::new(r.family, r.order)
    }
}

impl From<ModulationScheme> for SchemeRepr {
    fn from(s: ModulationScheme) -> Self {
        SchemeRepr {
            family: s.family,
            order: s.order,
        }
    }
}

impl ModulationScheme {
    pub fn new(family: ModFamily, order: u32) -> Result<Self> {
        if !family.supported_orders().contains(&order) {
            return Err(Error::config(format!(
                "unsupported {family} order {order} (supported: {:?})",
                family.supported_orders()
            )));
        }
        Ok(ModulationScheme { family, order })
    }

    pub fn family(&self) -> ModFamily {
        self.family
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn qpsk() -> Self {
        ModulationScheme {
            family: ModFamily::Psk,
            order: 4,
        }
    }

    /// Compact one-byte code used by the dataset format: family in the high
    /// bit, log2(order) in the low bits.
    pub(crate) fn code(&self) -> u8 {
        let fam = match self.family {
            ModFamily::Qam => 0,
            ModFamily::Psk => 0x80,
        };
        fam | self.order.trailing_zeros() as u8
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        let family = if code & 0x80 == 0 {
            ModFamily::Qam
        } else {
            ModFamily::Psk
        };
        let bits = (code & 0x7f) as u32;
        if bits > 6 {
            return Err(Error::Malformed(format!("bad scheme code {code:#x}")));
        }
        ModulationScheme::new(family, 1 << bits)
            .map_err(|_| Error::Malformed(format!("bad scheme code {code:#x}")))
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.family, self.order) {
            (ModFamily::Psk, 2) => f.write_str("BPSK"),
            (ModFamily::Psk, 4) => f.write_str("QPSK"),
            (fam, order) => write!(f, "{order}{}", fam.as_str().to_uppercase()),
        }
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    /// Accepts `BPSK`, `QPSK`, or `<order><family>` such as `16qam`, `8PSK`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "bpsk" => return ModulationScheme::new(ModFamily::Psk, 2),
            "qpsk" => return ModulationScheme::new(ModFamily::Psk, 4),
            _ => {}
        }
        let split = lower
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(|| Error::config(format!("bad modulation {s:?}")))?;
        let order: u32 = lower[..split]
            .parse()
            .map_err(|_| Error::config(format!("bad modulation {s:?}")))?;
        ModulationScheme::new(lower[split..].parse()?, order)
    }
}

/// Ground-truth impairments of one capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentParams {
    /// Linear gain imbalance; the in-phase branch is scaled by `1 + alpha`.
    pub alpha: f64,
    /// Phase imbalance of the in-phase branch, degrees.
    pub theta_deg: f64,
    /// Carrier offset as a fraction of the sample rate.
    pub freq_offset: f64,
    /// Samples per symbol.
    pub sps: f64,
    pub snr_db: f64,
}

impl ImpairmentParams {
    pub const ALPHA_LIMIT: f64 = 0.9;
    pub const THETA_LIMIT_DEG: f64 = 10.0;
    pub const FREQ_LIMIT: f64 = 0.1;
    pub const SNR_RANGE_DB: (f64, f64) = (0.0, 35.0);

    /// Clean reference transmitter: no imbalance, no offset.
    pub fn ideal(sps: f64, snr_db: f64) -> Self {
        ImpairmentParams {
            alpha: 0.0,
            theta_deg: 0.0,
            freq_offset: 0.0,
            sps,
            snr_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        check("alpha", self.alpha, -Self::ALPHA_LIMIT, Self::ALPHA_LIMIT)?;
        check(
            "theta_deg",
            self.theta_deg,
            -Self::THETA_LIMIT_DEG,
            Self::THETA_LIMIT_DEG,
        )?;
        check("freq_offset", self.freq_offset, -Self::FREQ_LIMIT, Self::FREQ_LIMIT)?;
        check("snr_db", self.snr_db, Self::SNR_RANGE_DB.0, Self::SNR_RANGE_DB.1)?;
        if !(self.sps.is_finite() && self.sps > 1.0) {
            return Err(Error::config(format!("sps = {} must exceed 1", self.sps)));
        }
        Ok(())
    }
}

/// One capture of raw IQ plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex32>,
    pub truth: ImpairmentParams,
    pub scheme: ModulationScheme,
    pub seed: u64,
}

impl IqFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
