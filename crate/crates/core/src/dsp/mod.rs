//! Log-mel frontend: STFT, HTK mel filterbank, global normalization and the
//! binary mel file format.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{resample, AudioBuffer, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;


/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-7;
/// Lower clamp on normalizer standard deviations.
pub const MIN_STD: f64 = 1e-5;

const MEL_MAGIC: &[u8; 4] = b"RQMF";

/// Frontend parameters; the hop is `sample_rate / token_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub token_rate: u32,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_SAMPLE_RATE,
            token_rate: 25,
            n_fft: 2048,
            n_mels: 128,
            fmin: 0.0,
            fmax: 12_000.0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_rate == 0 || self.sample_rate % self.token_rate != 0 {
            return Err(Error::Config(format!(
                "token_rate {} must divide sample_rate {}",
                self.token_rate, self.sample_rate
            )));
        }
        if !self.n_fft.is_power_of_two() || self.hop() > self.n_fft {
            return Err(Error::Config(format!(
                "n_fft {} must be a power of two no smaller than the hop {}",
                self.n_fft,
                self.hop()
            )));
        }
        if self.n_mels == 0 || !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(
                "mel bands need n_mels >= 1 and 0 <= fmin < fmax <= sample_rate / 2".into(),
            ));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (self.sample_rate / self.token_rate.max(1)) as usize
    }

    /// Time in seconds at the center of the analysis window of frame `t`.
    pub fn frame_center(&self, t: usize) -> f64 {
        (t * self.hop()) as f64 / self.sample_rate as f64 + self.n_fft as f64 / (2.0 * self.sample_rate as f64)
    }
}

/// Complex STFT, row-major `n_frames x n_bins`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

struct StftPlan {
    n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    fn new(n_fft: usize) -> Self {
        Self {
            n_fft,
            window: hann(n_fft),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    fn run(&self, buf: &AudioBuffer, hop: usize) -> Spectrogram {
        let x = buf.samples();
        let n_frames = x.len() / hop;
        let n_bins = self.n_fft / 2 + 1;
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut frame = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = t * hop;
            for (i, c) in frame.iter_mut().enumerate() {
                let s = x.get(start + i).copied().unwrap_or(0.0) as f64;
                *c = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut frame, &mut scratch);
            data.extend_from_slice(&frame[..n_bins]);
        }
        Spectrogram {
            n_frames,
            n_bins,
            sample_rate: buf.sample_rate(),
            hop,
            data,
        }
    }
}

/// Hann-windowed STFT with frames starting at `k * hop`, zero-padded at the
/// tail; `floor(len / hop)` frames.
pub fn stft(buf: &AudioBuffer, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if !n_fft.is_power_of_two() || hop == 0 || hop > n_fft {
        return Err(Error::InvalidArgument(format!(
            "stft needs a power-of-two n_fft and 0 < hop <= n_fft (got {}, {})",
            n_fft, hop
        )));
    }
    Ok(StftPlan::new(n_fft).run(buf, hop))
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale with unit peak.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels + 2` edge frequencies in Hz.
    edges: Vec<f64>,
    /// Per band: first FFT bin and its weights.
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        if n_mels == 0 || !(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate as f64 / 2.0) {
            return Err(Error::InvalidArgument(
                "mel filterbank needs n_mels >= 1 and 0 <= fmin < fmax <= sr / 2".into(),
            ));
        }
        let (m0, m1) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let mut fb = Self {
            edges,
            bands: Vec::with_capacity(n_mels),
        };
        for k in 0..n_mels {
            let mut first = None;
            let mut w = Vec::new();
            for b in 0..n_bins {
                let v = fb.weight(k, b as f64 * bin_hz);
                if v > 0.0 {
                    first.get_or_insert(b);
                    // pad any interior gaps so the weights stay contiguous
                    let start = first.unwrap();
                    w.resize(b - start, 0.0);
                    w.push(v);
                }
            }
            fb.bands.push((first.unwrap_or(0), w));
        }
        Ok(fb)
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    /// Peak frequency of band `k`.
    pub fn center_hz(&self, k: usize) -> f64 {
        self.edges[k + 1]
    }

    /// Continuous triangle response of band `k` at `f` Hz.
    pub fn weight(&self, k: usize, f: f64) -> f64 {
        let (lo, c, hi) = (self.edges[k], self.edges[k + 1], self.edges[k + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo)
        } else {
            (hi - f) / (hi - c)
        }
    }

    /// Band energies of one power spectrum frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-mel energies, `frames` is `T x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrameSequence<T: Scalar> {
    frames: Tensor<T>,
    frame_rate: f64,
}

impl<T: Scalar> MelFrameSequence<T> {
    pub fn new(frames: Tensor<T>, frame_rate: f64) -> Result<Self> {
        frames.dims2()?;
        if !frames.all_finite() {
            return Err(Error::NonFinite("mel frames".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidArgument("frame rate must be positive".into()));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<T> {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, t: usize) -> &[T] {
        self.frames.row(t)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_frames() as f64 / self.frame_rate
    }

    /// Frames `[start, start + len)`, clamped.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        let d = self.n_mels();
        let s = start.min(self.n_frames());
        let e = (s + len).min(self.n_frames());
        let data = self.frames.data()[s * d..e * d].to_vec();
        Self {
            frames: Tensor::matrix(e - s, d, data).expect("consistent crop"),
            frame_rate: self.frame_rate,
        }
    }

    pub fn cast<U: Scalar>(&self) -> MelFrameSequence<U> {
        MelFrameSequence {
            frames: self.frames.cast(),
            frame_rate: self.frame_rate,
        }
    }
}

/// `ln(max(E, 1e-7))` of HTK mel band energies of `|X|^2`.
pub fn log_mel<T: Scalar>(spec: &Spectrogram, d: usize, fmin: f64, fmax: f64) -> Result<MelFrameSequence<T>> {
    let fb = MelFilterbank::new(spec.sample_rate, (spec.n_bins - 1) * 2, d, fmin, fmax)?;
    log_mel_with(spec, &fb)
}

fn log_mel_with<T: Scalar>(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelFrameSequence<T>> {
    let d = fb.n_mels();
    let mut out = Vec::with_capacity(spec.n_frames * d);
    let mut power = vec![0.0; spec.n_bins];
    let mut energies = vec![0.0; d];
    for t in 0..spec.n_frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        fb.apply(&power, &mut energies);
        out.extend(energies.iter().map(|&e| T::of(e.max(LOG_FLOOR).ln())));
    }
    MelFrameSequence::new(Tensor::matrix(spec.n_frames, d, out)?, spec.frame_rate())
}

/// Reusable frontend holding the FFT plan and filterbank.
pub struct Frontend {
    cfg: FrontendConfig,
    plan: StftPlan,
    filterbank: MelFilterbank,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let filterbank = MelFilterbank::new(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)?;
        Ok(Self {
            plan: StftPlan::new(cfg.n_fft),
            filterbank,
            cfg,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Resample to the configured rate if needed, then log-mel.
    pub fn featurize<T: Scalar>(&self, buf: &AudioBuffer) -> Result<MelFrameSequence<T>> {
        let resampled;
        let buf = if buf.sample_rate() == self.cfg.sample_rate {
            buf
        } else {
            resampled = resample(buf, self.cfg.sample_rate)?;
            &resampled
        };
        let spec = self.plan.run(buf, self.cfg.hop());
        log_mel_with(&spec, &self.filterbank)
    }
}

/// Per-band mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streaming per-band statistics (Welford), mergeable across shards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl NormStats {
    pub fn new(d: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push<T: Scalar>(&mut self, frame: &[T]) -> Result<()> {
        if frame.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "frame has {} bands, statistics have {}",
                frame.len(),
                self.mean.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(frame) {
            let x = x.as_f64();
            let delta = x - *m;
            *m += delta / n;
            *m2 += delta * (x - *m);
        }
        Ok(())
    }

    pub fn push_sequence<T: Scalar>(&mut self, mf: &MelFrameSequence<T>) -> Result<()> {
        for t in 0..mf.n_frames() {
            self.push(mf.frame(t))?;
        }
        Ok(())
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &NormStats) -> Result<()> {
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        if other.mean.len() != self.mean.len() {
            return Err(Error::Shape("merging statistics of different widths".into()));
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Population statistics; std clamped at [`MIN_STD`].
    pub fn finish(&self) -> Result<Normalizer> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("cannot fit a normalizer to an empty corpus".into()));
        }
        let n = self.count as f64;
        Ok(Normalizer {
            mean: self.mean.clone(),
            std: self.m2.iter().map(|m2| (m2 / n).sqrt().max(MIN_STD)).collect(),
        })
    }
}

pub fn fit_normalizer<'a, T: Scalar>(corpus: impl IntoIterator<Item = &'a MelFrameSequence<T>>) -> Result<Normalizer> {
    let mut stats: Option<NormStats> = None;
    for mf in corpus {
        stats.get_or_insert_with(|| NormStats::new(mf.n_mels())).push_sequence(mf)?;
    }
    stats.unwrap_or_default().finish()
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, mf: &MelFrameSequence<T>) -> Result<MelFrameSequence<T>> {
        let d = mf.n_mels();
        if d != self.dim() {
            return Err(Error::Shape(format!(
                "normalizer has {} bands, frames have {}",
                self.dim(),
                d
            )));
        }
        let data = mf
            .frames
            .data()
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&x, (m, s))| T::of((x.as_f64() - m) / s))
            })
            .collect();
        MelFrameSequence::new(Tensor::matrix(mf.n_frames(), d, data)?, mf.frame_rate)
    }
}

pub fn apply_normalizer<T: Scalar>(n: &Normalizer, mf: &MelFrameSequence<T>) -> Result<MelFrameSequence<T>> {
    n.apply(mf)
}

/// Little-endian f32 mel file: `"RQMF"`, u32 T, u32 d, f32 frame rate, data.
pub fn write_mel_file<T: Scalar>(path: &Path, mf: &MelFrameSequence<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 4 * mf.frames.len());
    bytes.extend_from_slice(MEL_MAGIC);
    bytes.extend_from_slice(&(mf.n_frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(mf.n_mels() as u32).to_le_bytes());
    bytes.extend_from_slice(&(mf.frame_rate as f32).to_le_bytes());
    for &v in mf.frames.data() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    crate::util::write_atomic(path, &bytes)
}

pub fn read_mel_file<T: Scalar>(path: &Path) -> Result<MelFrameSequence<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MEL_MAGIC {
        return Err(Error::format(path, "not a mel frame file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (t, d) = (word(4) as usize, word(8) as usize);
    let rate = f32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as f64;
    if bytes.len() != 16 + 4 * t * d {
        return Err(Error::format(path, format!("expected {} x {} frames", t, d)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    MelFrameSequence::new(Tensor::matrix(t, d, data)?, rate)
}
