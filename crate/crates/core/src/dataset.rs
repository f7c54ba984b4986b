//! Labelled dataset generation, fixed-offset evaluation grids and the
//! `.rfpd` binary format.
//!
//! Layout of an `.rfpd` file (all integers and floats little-endian):
//!
//! ```text
//! 0   magic "RFPD"
//! 4   u32 format version
//! 8   u64 frame count
//! 16  u64 frame length (complex samples)
//! 24  u32 target (0 = gain, 1 = phase)
//! 28  u32 flags (bit 0: per-frame metadata block, bit 1: evaluation grid)
//! 32  u64 training frames
//! 40  u64 validation frames
//! 48  u64 test frames
//! 56  u32 metadata record size in bytes
//! 60  u32 reserved (zero)
//! 64  payload: frame count x frame length x (I, Q) as f32
//!     labels: frame count x f32
//!     metadata (if flagged): per frame u64 seed, u8 scheme code, 7 pad
//!       bytes, f64 alpha, theta_deg, freq_offset, sps, snr_db
//!     u32 CRC32 of everything above
//! ```
//!
//! A JSON sidecar next to the binary mirrors the generating spec.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::seed;
use crate::signal::{
    synthesize_frame_with, ImpairmentParams, IqFrame, ModFamily, ModulationScheme,
    SynthesisOptions, Timing, DEFAULT_ROLLOFF,
};

pub const DATASET_MAGIC: [u8; 4] = *b"RFPD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;
const META_RECORD_LEN: usize = 56;
const FLAG_METADATA: u32 = 1;
const FLAG_GRID: u32 = 2;
const PARAM_STREAM: u64 = 2;

/// Which impairment a dataset labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    GainImbalance,
    PhaseImbalance,
}

impl Target {
    pub fn value(self, p: &ImpairmentParams) -> f64 {
        match self {
            Target::GainImbalance => p.alpha,
            Target::PhaseImbalance => p.theta_deg,
        }
    }

    fn code(self) -> u32 {
        match self {
            Target::GainImbalance => 0,
            Target::PhaseImbalance => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Target::GainImbalance),
            1 => Ok(Target::PhaseImbalance),
            other => Err(Error::Malformed(format!("unknown target code {other}"))),
        }
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo - 1e-12 && v <= self.hi + 1e-12
    }

    pub fn within(&self, outer: &Interval) -> bool {
        outer.contains(self.lo) && outer.contains(self.hi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Recipe for a labelled dataset. Every frame draws its impairments
/// independently and uniformly from the ranges below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub family: ModFamily,
    pub orders: Vec<u32>,
    pub target: Target,
    pub frame_len: usize,
    pub splits: Splits,
    pub alpha: Interval,
    pub theta_deg: Interval,
    pub freq_offset: Interval,
    pub sps: Interval,
    pub snr_db: Interval,
    pub master_seed: u64,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
}

fn default_rolloff() -> f64 {
    DEFAULT_ROLLOFF
}

impl DatasetSpec {
    /// Full-range recipe: every order of `family`, gain in [-0.9, 0.9],
    /// phase in [-10, 10] degrees, carrier offsets up to 0.1 of the sample
    /// rate, 1.2x to 4x the Nyquist rate of the shaped signal and SNR in
    /// [0, 25] dB. Desk-scale split sizes.
    pub fn wide(family: ModFamily, target: Target) -> Self {
        let nyquist_sps = 1.0 + DEFAULT_ROLLOFF;
        DatasetSpec {
            family,
            orders: family.supported_orders().to_vec(),
            target,
            frame_len: 1024,
            splits: Splits {
                train: 100_000,
                val: 5_000,
                test: 5_000,
            },
            alpha: Interval::new(-0.9, 0.9),
            theta_deg: Interval::new(-10.0, 10.0),
            freq_offset: Interval::new(-0.1, 0.1),
            sps: Interval::new(1.2 * nyquist_sps, 4.0 * nyquist_sps),
            snr_db: Interval::new(0.0, 25.0),
            master_seed: 1,
            timing: Timing::RandomCrop,
            rolloff: DEFAULT_ROLLOFF,
        }
    }

    /// Synchronized QPSK recipe with small imbalances: gain in [0, 0.3],
    /// phase in [0, 5] degrees, SNR in [0, 35] dB, no carrier or rate
    /// offset, symbol-aligned captures at 4 samples per symbol.
    pub fn narrow(target: Target) -> Self {
        DatasetSpec {
            family: ModFamily::Psk,
            orders: vec![4],
            alpha: Interval::new(0.0, 0.3),
            theta_deg: Interval::new(0.0, 5.0),
            freq_offset: Interval::point(0.0),
            sps: Interval::point(4.0),
            snr_db: Interval::new(0.0, 35.0),
            timing: Timing::SymbolAligned,
            ..DatasetSpec::wide(ModFamily::Psk, target)
        }
    }

    pub fn n_frames(&self) -> usize {
        self.splits.total()
    }

    pub fn target_range(&self) -> Interval {
        match self.target {
            Target::GainImbalance => self.alpha,
            Target::PhaseImbalance => self.theta_deg,
        }
    }

    pub fn schemes(&self) -> Result<Vec<ModulationScheme>> {
        self.orders
            .iter()
            .map(|&o| ModulationScheme::new(self.family, o))
            .collect()
    }

    fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            rolloff: self.rolloff,
            timing: self.timing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 {
            return Err(Error::config("dataset must contain at least one frame"));
        }
        if self.frame_len == 0 {
            return Err(Error::config("frame_len must be positive"));
        }
        if self.orders.is_empty() {
            return Err(Error::config("at least one modulation order is required"));
        }
        self.schemes()?;
        let limits = [
            ("alpha", self.alpha, ImpairmentParams::ALPHA_LIMIT),
            ("theta_deg", self.theta_deg, ImpairmentParams::THETA_LIMIT_DEG),
            ("freq_offset", self.freq_offset, ImpairmentParams::FREQ_LIMIT),
        ];
        for (name, iv, limit) in limits {
            check_interval(name, iv)?;
            if !iv.within(&Interval::new(-limit, limit)) {
                return Err(Error::config(format!(
                    "{name} range [{}, {}] exceeds [-{limit}, {limit}]",
                    iv.lo, iv.hi
                )));
            }
        }
        check_interval("snr_db", self.snr_db)?;
        let (slo, shi) = ImpairmentParams::SNR_RANGE_DB;
        if !self.snr_db.within(&Interval::new(slo, shi)) {
            return Err(Error::config(format!(
                "snr_db range [{}, {}] exceeds [{slo}, {shi}]",
                self.snr_db.lo, self.snr_db.hi
            )));
        }
        check_interval("sps", self.sps)?;
        if self.sps.lo <= 1.0 {
            return Err(Error::config("sps must exceed 1"));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::config(format!("rolloff {} outside (0, 1]", self.rolloff)));
        }
        Ok(())
    }

    fn draw_params<R: Rng>(&self, rng: &mut R) -> ImpairmentParams {
        ImpairmentParams {
            alpha: self.alpha.sample(rng),
            theta_deg: self.theta_deg.sample(rng),
            freq_offset: self.freq_offset.sample(rng),
            sps: self.sps.sample(rng),
            snr_db: self.snr_db.sample(rng),
        }
    }

    /// Synthesizes frame `index`. `fixed_target` pins the labelled offset.
    fn make_frame(
        &self,
        schemes: &[ModulationScheme],
        index: u64,
        fixed_target: Option<f64>,
    ) -> Result<IqFrame> {
        let frame_seed = seed::derive(self.master_seed, index);
        let mut rng = seed::rng(seed::substream(frame_seed, PARAM_STREAM));
        let scheme = schemes[rng.random_range(0..schemes.len())];
        let mut params = self.draw_params(&mut rng);
        if let Some(v) = fixed_target {
            match self.target {
                Target::GainImbalance => params.alpha = v,
                Target::PhaseImbalance => params.theta_deg = v,
            }
        }
        synthesize_frame_with(scheme, &params, self.frame_len, frame_seed, &self.options())
    }
}

fn check_interval(name: &str, iv: Interval) -> Result<()> {
    if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
        return Err(Error::config(format!(
            "{name} range [{}, {}] is not a valid interval",
            iv.lo, iv.hi
        )));
    }
    Ok(())
}

/// Evenly spaced offsets at which fixed-offset evaluation frames are made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub frames_per_value: usize,
}

impl EvalGrid {
    /// Grid values from `lo` to `hi` inclusive.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.lo.is_finite() && self.hi >= self.lo) {
            return Err(Error::config(format!(
                "bad grid lo={} hi={} step={}",
                self.lo, self.hi, self.step
            )));
        }
        let steps = (self.hi - self.lo) / self.step;
        let n = steps.round();
        if (steps - n).abs() > 1e-6 {
            return Err(Error::config(format!(
                "grid span {} is not a multiple of step {}",
                self.hi - self.lo,
                self.step
            )));
        }
        Ok((0..=n as usize)
            .map(|k| round_grid(self.lo + k as f64 * self.step))
            .collect())
    }
}

/// Snaps accumulated float error so that e.g. -0.9 + 90 * 0.01 is exactly 0.
fn round_grid(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// An in-memory dataset. Frames are stored train, then validation, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub target: Target,
    pub frame_len: usize,
    pub frames: Vec<IqFrame>,
    pub splits: Splits,
    /// Set for fixed-offset evaluation grids (all frames in the test split).
    pub is_grid: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn label(&self, i: usize) -> f64 {
        self.target.value(&self.frames[i].truth)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.frames.iter().map(|f| self.target.value(&f.truth)).collect()
    }

    pub fn train(&self) -> &[IqFrame] {
        &self.frames[..self.splits.train]
    }

    pub fn val(&self) -> &[IqFrame] {
        &self.frames[self.splits.train..self.splits.train + self.splits.val]
    }

    pub fn test(&self) -> &[IqFrame] {
        &self.frames[self.splits.train + self.splits.val..]
    }

    /// Distinct target values of a grid dataset, in file order.
    pub fn grid_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for f in &self.frames {
            let v = self.target.value(&f.truth);
            if out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    /// Frames grouped by identical target value, in file order.
    pub fn grid_groups(&self) -> Vec<(f64, &[IqFrame])> {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=self.frames.len() {
            let boundary = i == self.frames.len()
                || self.target.value(&self.frames[i].truth)
                    != self.target.value(&self.frames[start].truth);
            if boundary {
                groups.push((
                    self.target.value(&self.frames[start].truth),
                    &self.frames[start..i],
                ));
                start = i;
            }
        }
        groups
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn encoded_len(&self) -> usize {
        let n = self.frames.len();
        HEADER_LEN + n * self.frame_len * 8 + n * 4 + n * META_RECORD_LEN + 4
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut w = CrcWriter::new(w);
        let mut flags = FLAG_METADATA;
        if self.is_grid {
            flags |= FLAG_GRID;
        }
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(&DATASET_MAGIC);
        header.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        header.extend_from_slice(&(self.frame_len as u64).to_le_bytes());
        header.extend_from_slice(&self.target.code().to_le_bytes());
        header.extend_from_slice(&flags.to_le_bytes());
        header.extend_from_slice(&(self.splits.train as u64).to_le_bytes());
        header.extend_from_slice(&(self.splits.val as u64).to_le_bytes());
        header.extend_from_slice(&(self.splits.test as u64).to_le_bytes());
        header.extend_from_slice(&(META_RECORD_LEN as u32).to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        debug_assert_eq!(header.len(), HEADER_LEN);
        w.write_all(&header)?;

        let mut buf = Vec::with_capacity(self.frame_len * 8);
        for f in &self.frames {
            buf.clear();
            for z in &f.samples {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        for f in &self.frames {
            w.write_all(&(self.target.value(&f.truth) as f32).to_le_bytes())?;
        }
        for f in &self.frames {
            let t = &f.truth;
            let mut rec = Vec::with_capacity(META_RECORD_LEN);
            rec.extend_from_slice(&f.seed.to_le_bytes());
            rec.push(f.scheme.code());
            rec.extend_from_slice(&[0u8; 7]);
            for v in [t.alpha, t.theta_deg, t.freq_offset, t.sps, t.snr_db] {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&rec)?;
        }
        let crc = w.finish();
        w.inner.write_all(&crc.to_le_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                needed: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: DATASET_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: DATASET_VERSION,
            });
        }
        let n = r.u64()? as usize;
        let frame_len = r.u64()? as usize;
        let target = Target::from_code(r.u32()?)?;
        let flags = r.u32()?;
        let splits = Splits {
            train: r.u64()? as usize,
            val: r.u64()? as usize,
            test: r.u64()? as usize,
        };
        let meta_len = r.u32()? as usize;
        r.u32()?;
        if splits.total() != n {
            return Err(Error::Malformed(format!(
                "split sizes sum to {}, header says {n} frames",
                splits.total()
            )));
        }
        if flags & FLAG_METADATA == 0 || meta_len != META_RECORD_LEN {
            return Err(Error::Malformed(
                "metadata block missing or of unknown size".into(),
            ));
        }
        let expected = n
            .checked_mul(frame_len * 8 + 4 + META_RECORD_LEN)
            .and_then(|v| v.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| Error::Malformed("header sizes overflow".into()))?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                needed: expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        fsutil::verify_crc(bytes)?;

        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut frame = Vec::with_capacity(frame_len);
            for _ in 0..frame_len {
                let re = r.f32()?;
                let im = r.f32()?;
                frame.push(Complex32::new(re, im));
            }
            samples.push(frame);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.f32()?);
        }
        let mut frames = Vec::with_capacity(n);
        for (samples, label) in samples.into_iter().zip(labels) {
            let seed = r.u64()?;
            let code = r.take(8)?[0];
            let truth = ImpairmentParams {
                alpha: r.f64()?,
                theta_deg: r.f64()?,
                freq_offset: r.f64()?,
                sps: r.f64()?,
                snr_db: r.f64()?,
            };
            if target.value(&truth) as f32 != label {
                return Err(Error::Malformed(
                    "label block disagrees with frame metadata".into(),
                ));
            }
            frames.push(IqFrame {
                samples,
                truth,
                scheme: ModulationScheme::from_code(code)?,
                seed,
            });
        }
        debug_assert_eq!(r.position(), expected - 4);
        Ok(Dataset {
            target,
            frame_len,
            frames,
            splits,
            is_grid: flags & FLAG_GRID != 0,
        })
    }

    /// Payload CRC as stored in the file trailer.
    pub fn checksum(&self) -> u32 {
        let mut sink = CrcWriter::new(std::io::sink());
        self.write_to(&mut sink).expect("sink cannot fail");
        sink.finish()
    }
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        CrcWriter {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn finish(&mut self) -> u32 {
        std::mem::take(&mut self.hasher).finalize()
    }
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Builds the train/validation/test frames of `spec`. Frame `i` depends only
/// on `(master_seed, i)`, so generation is parallel and reproducible.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let schemes = spec.schemes()?;
    let frames = (0..spec.n_frames() as u64)
        .into_par_iter()
        .map(|i| spec.make_frame(&schemes, i, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        target: spec.target,
        frame_len: spec.frame_len,
        frames,
        splits: spec.splits,
        is_grid: false,
    })
}

/// Builds `frames_per_value` frames at every grid offset; all other
/// impairments are drawn from `spec`. The whole set is the test split.
pub fn build_eval_grid(spec: &DatasetSpec, grid: &EvalGrid) -> Result<Dataset> {
    spec.validate()?;
    let values = grid.values()?;
    let range = spec.target_range();
    if !Interval::new(grid.lo, grid.hi).within(&range) {
        return Err(Error::config(format!(
            "grid [{}, {}] outside the {:?} range [{}, {}]",
            grid.lo, grid.hi, spec.target, range.lo, range.hi
        )));
    }
    if grid.frames_per_value == 0 {
        return Err(Error::config("frames_per_value must be positive"));
    }
    let schemes = spec.schemes()?;
    let per = grid.frames_per_value;
    let frames = (0..(values.len() * per) as u64)
        .into_par_iter()
        .map(|i| spec.make_frame(&schemes, i, Some(values[i as usize / per])))
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len();
    Ok(Dataset {
        target: spec.target,
        frame_len: spec.frame_len,
        frames,
        splits: Splits {
            train: 0,
            val: 0,
            test: n,
        },
        is_grid: true,
    })
}

/// JSON sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub spec: DatasetSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<EvalGrid>,
    pub frames: usize,
    pub crc32: u32,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (binary) and its JSON sidecar atomically.
pub fn save_dataset(
    path: &Path,
    dataset: &Dataset,
    spec: &DatasetSpec,
    grid: Option<&EvalGrid>,
) -> Result<u32> {
    let mut crc = 0;
    fsutil::write_atomic(path, |w| {
        let mut tee = CrcWriter::new(w);
        dataset.write_to(&mut tee)?;
        crc = tee.finish();
        Ok(())
    })?;
    let sidecar = DatasetSidecar {
        spec: spec.clone(),
        grid: grid.cloned(),
        frames: dataset.len(),
        crc32: crc,
    };
    fsutil::write_atomic_bytes(
        &sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok(crc)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&fsutil::read(path)?)
}

pub fn load_sidecar(path: &Path) -> Result<DatasetSidecar> {
    let p = sidecar_path(path);
    Ok(serde_json::from_slice(&fsutil::read(&p)?)?)
}
