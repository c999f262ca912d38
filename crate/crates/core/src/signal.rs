//! Amplitude-compressed STFT representation and audio utilities.
//!
//! Analysis: reflect-padded centered frames of a periodic Hann window,
//! unnormalized forward DFT, one-sided spectrum. Synthesis: `1/N` inverse
//! DFT and windowed overlap-add divided by the summed squared window, which
//! inverts the analysis exactly for consistent spectrograms.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Predictor;

pub const FFT_SIZE: usize = 512;
pub const HOP: usize = 128;
pub const COMPRESSION_EXPONENT: f64 = 0.5;
pub const COMPRESSION_SCALE: f64 = 0.15;
/// Returned by [`si_sdr`] when the estimate is an exact rescaling of the reference.
pub const SI_SDR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "waveform has non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Complex one-sided spectrogram, `bins x frames`, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::InvalidParameter(format!(
                "spectrogram data has {} entries, expected {bins} x {frames}",
                data.len()
            )));
        }
        Ok(Self { bins, frames, data })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            bins: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Real and imaginary parts stacked into a `2 x bins x frames` tensor.
    pub fn stack(&self) -> StackedSpectrogram {
        let mut data = Vec::with_capacity(2 * self.data.len());
        data.extend(self.data.iter().map(|c| c.re));
        data.extend(self.data.iter().map(|c| c.im));
        StackedSpectrogram {
            shape: [2, self.bins, self.frames],
            data,
        }
    }
}

/// Channel-stacked real tensor, flat row-major with shape `[2, F, K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedSpectrogram {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl StackedSpectrogram {
    pub fn from_vector(bins: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * bins * frames {
            return Err(Error::Dimension {
                expected: 2 * bins * frames,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: [2, bins, frames],
            data,
        })
    }

    pub fn unstack(&self) -> Result<Spectrogram> {
        let [c, bins, frames] = self.shape;
        let n = bins * frames;
        if c != 2 || self.data.len() != 2 * n {
            return Err(Error::InvalidParameter(format!(
                "stacked spectrogram shape {:?} does not match {} entries",
                self.shape,
                self.data.len()
            )));
        }
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect();
        Spectrogram::new(bins, frames, data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// STFT/iSTFT pair at a fixed frame size and hop.
pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Self::new(FFT_SIZE, HOP).expect("default parameters are valid")
    }
}

/// Maps a padded index onto `0..len` by mirror reflection without repeating the edge.
fn reflect(index: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = index.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if fft_size < 2 || fft_size % 2 != 0 || hop == 0 || hop > fft_size {
            return Err(Error::InvalidParameter(format!(
                "unsupported STFT geometry: fft_size {fft_size}, hop {hop}"
            )));
        }
        let n = fft_size as f64;
        let window = (0..fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft_size,
            hop,
            window,
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn stft(&self, samples: &[f64]) -> Result<Spectrogram> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        let pad = (self.fft_size / 2) as isize;
        let frames = self.frames_for(samples.len());
        let bins = self.bins();
        let mut data = vec![Complex64::default(); bins * frames];
        let mut buf = vec![Complex64::default(); self.fft_size];
        for k in 0..frames {
            let start = (k * self.hop) as isize - pad;
            for (n, b) in buf.iter_mut().enumerate() {
                let src = reflect(start + n as isize, samples.len());
                *b = Complex64::new(samples[src] * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for f in 0..bins {
                data[f * frames + k] = buf[f];
            }
        }
        Spectrogram::new(bins, frames, data)
    }

    pub fn istft(&self, spec: &Spectrogram, length: usize) -> Result<Vec<f64>> {
        let bins = self.bins();
        if spec.bins != bins {
            return Err(Error::InvalidParameter(format!(
                "spectrogram has {} bins, expected {bins}",
                spec.bins
            )));
        }
        if spec.frames != self.frames_for(length) {
            return Err(Error::InvalidParameter(format!(
                "spectrogram has {} frames, a {length}-sample signal needs {}",
                spec.frames,
                self.frames_for(length)
            )));
        }
        let pad = self.fft_size / 2;
        let total = (spec.frames - 1) * self.hop + self.fft_size;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::default(); self.fft_size];
        let scale = 1.0 / self.fft_size as f64;
        for k in 0..spec.frames {
            for (f, slot) in buf[..bins].iter_mut().enumerate() {
                *slot = spec.get(f, k);
            }
            for f in bins..self.fft_size {
                buf[f] = buf[self.fft_size - f].conj();
            }
            self.inverse.process(&mut buf);
            let offset = k * self.hop;
            for n in 0..self.fft_size {
                let w = self.window[n];
                acc[offset + n] += buf[n].re * scale * w;
                norm[offset + n] += w * w;
            }
        }
        Ok((0..length)
            .map(|i| {
                let p = i + pad;
                if norm[p] > 1e-12 {
                    acc[p] / norm[p]
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn stft(w: &Waveform) -> Result<Spectrogram> {
    Stft::default().stft(&w.samples)
}

pub fn istft(spec: &Spectrogram, length: usize, sample_rate: u32) -> Result<Waveform> {
    Waveform::new(Stft::default().istft(spec, length)?, sample_rate)
}

/// `b |x|^p e^{i arg x}`.
pub fn compress_with(x: Complex64, b: f64, p: f64) -> Complex64 {
    let mag = x.norm();
    if mag == 0.0 {
        return Complex64::default();
    }
    x * (b * mag.powf(p) / mag)
}

/// Inverse of [`compress_with`]: `(|m| / b)^{1/p} e^{i arg m}`.
pub fn decompress_with(m: Complex64, b: f64, p: f64) -> Complex64 {
    let mag = m.norm();
    if mag == 0.0 {
        return Complex64::default();
    }
    m * ((mag / b).powf(1.0 / p) / mag)
}

pub fn compress(x: Complex64) -> Complex64 {
    compress_with(x, COMPRESSION_SCALE, COMPRESSION_EXPONENT)
}

pub fn decompress(m: Complex64) -> Complex64 {
    decompress_with(m, COMPRESSION_SCALE, COMPRESSION_EXPONENT)
}

/// Waveform to channel-stacked compressed spectrogram.
pub fn analyze(w: &Waveform) -> Result<StackedSpectrogram> {
    Ok(stft(w)?.map(compress).stack())
}

/// Channel-stacked compressed spectrogram back to a waveform of `length` samples.
pub fn synthesize(spec: &StackedSpectrogram, length: usize, sample_rate: u32) -> Result<Waveform> {
    istft(&spec.unstack()?.map(decompress), length, sample_rate)
}

/// Spectral gate: per-bin gain `max(gain_floor, 1 - noise_f / |X|)` where
/// `noise_f` is the `noise_percentile`-th percentile of bin `f`'s magnitudes.
pub fn spectral_gate_predict(
    y: &Waveform,
    gain_floor: f64,
    noise_percentile: f64,
) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&gain_floor) {
        return Err(Error::Domain {
            name: "gain_floor",
            value: gain_floor,
            domain: "[0, 1]",
        });
    }
    if !(0.0..=100.0).contains(&noise_percentile) {
        return Err(Error::Domain {
            name: "noise_percentile",
            value: noise_percentile,
            domain: "[0, 100]",
        });
    }
    if y.samples.iter().all(|&s| s == 0.0) {
        return Ok(y.clone());
    }
    let stft = Stft::default();
    let spec = stft.stft(&y.samples)?;
    let frames = spec.frames();
    let mut gated = spec.data.clone();
    let mut mags = vec![0.0; frames];
    for f in 0..spec.bins() {
        for (k, m) in mags.iter_mut().enumerate() {
            *m = spec.get(f, k).norm();
        }
        let noise = percentile(&mut mags, noise_percentile);
        for k in 0..frames {
            let c = &mut gated[f * frames + k];
            let mag = c.norm();
            let gain = if mag > 0.0 {
                (1.0 - noise / mag).max(gain_floor).min(1.0)
            } else {
                gain_floor
            };
            *c *= gain;
        }
    }
    let spec = Spectrogram::new(spec.bins(), frames, gated)?;
    Waveform::new(stft.istft(&spec, y.len())?, y.sample_rate)
}

/// Linear-interpolated percentile; reorders `values`.
fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// The spectral gate acting on channel-stacked compressed spectrograms of a
/// fixed-length signal, for use as the sampler's predictor.
#[derive(Debug, Clone, Copy)]
pub struct SpectralGatePredictor {
    pub length: usize,
    pub sample_rate: u32,
    pub gain_floor: f64,
    pub noise_percentile: f64,
}

impl Predictor for SpectralGatePredictor {
    fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        let stft = Stft::default();
        let stacked =
            StackedSpectrogram::from_vector(stft.bins(), stft.frames_for(self.length), y.to_vec())?;
        let wave = synthesize(&stacked, self.length, self.sample_rate)?;
        let gated = spectral_gate_predict(&wave, self.gain_floor, self.noise_percentile)?;
        Ok(analyze(&gated)?.data)
    }
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at ±[`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_sdr_samples(&reference.samples, &estimate.samples)
}

pub fn si_sdr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidParameter(
            "SI-SDR reference is all zeros".into(),
        ));
    }
    let alpha = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| r * e)
        .sum::<f64>()
        / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let proj = alpha * r;
        target += proj * proj;
        residual += (e - proj) * (e - proj);
    }
    if residual == 0.0 {
        return Ok(if target == 0.0 {
            -SI_SDR_CAP_DB
        } else {
            SI_SDR_CAP_DB
        });
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Reads a mono 16-bit PCM WAV file, scaling samples by `1/32768`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Wav(format!(
            "{}: only mono 16-bit PCM is supported (got {} channels, {} bits, {:?})",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV file, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &w.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// 16-bit code for a sample after clipping to `[-1, 1]`.
pub fn quantize(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * 32768.0)
        .round()
        .clamp(-32768.0, 32767.0) as i16
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    Error::Wav(format!("{}: {e}", path.display()))
}
