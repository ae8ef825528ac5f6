//! Waveform I/O, STFT analysis/synthesis and observation normalization.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Multichannel signal, channels × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl MultichannelWaveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one channel".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let m = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((m, len), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Float32,
}

/// What `write_wav` had to do to fit the samples into the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteReport {
    /// Samples outside the representable range that were saturated.
    pub clipped: usize,
}

impl WriteReport {
    pub fn saturated(&self) -> bool {
        self.clipped > 0
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported wav format", path.display()))
        }
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads 16/24-bit PCM or 32-bit float WAV. Integer PCM is scaled by
/// `2^(bits-1)`, so full scale maps to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() || m == 0 {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    let len = interleaved.len() / m;
    let samples = Array2::from_shape_fn((m, len), |(c, i)| interleaved[i * m + c]);
    MultichannelWaveform::new(samples, spec.sample_rate)
}

/// Writes a WAV file. Integer encodings round to nearest and saturate; the
/// number of saturated samples is reported.
pub fn write_wav(
    path: impl AsRef<Path>,
    waveform: &MultichannelWaveform,
    encoding: WavEncoding,
) -> Result<WriteReport> {
    let path = path.as_ref();
    if waveform.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Pcm24 => (24, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: waveform.channels() as u16,
        sample_rate: waveform.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    let mut report = WriteReport::default();
    let full = f64::from(1u32 << (bits.min(31) - 1));
    for i in 0..waveform.len() {
        for c in 0..waveform.channels() {
            let x = waveform.samples[(c, i)];
            let res = match encoding {
                WavEncoding::Float32 => writer.write_sample(x as f32),
                _ => {
                    let q = (x * full).round();
                    let clamped = q.clamp(-full, full - 1.0);
                    if clamped != q {
                        report.clipped += 1;
                    }
                    writer.write_sample(clamped as i32)
                }
            };
            res.map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Square root of the periodic Hann window, used for analysis and synthesis.
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..n)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
                    s.abs()
                })
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub dft_length: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 2048,
            dft_length: 2048,
            hop: 512,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.dft_length / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.dft_length < self.window_length {
            return Err(Error::InvalidStftConfig(format!(
                "need 0 < window ({}) <= dft length ({})",
                self.window_length, self.dft_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(Error::InvalidStftConfig(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.window_length
            )));
        }
        Ok(())
    }

    /// Relative ripple of the steady-state overlap-added squared window.
    pub fn cola_ripple(&self) -> f64 {
        let w = self.window.coefficients(self.window_length);
        let mut acc = vec![0.0; self.hop];
        for (i, v) in w.iter().enumerate() {
            acc[i % self.hop] += v * v;
        }
        let max = acc.iter().copied().fold(f64::MIN, f64::max);
        let min = acc.iter().copied().fold(f64::MAX, f64::min);
        if max <= 0.0 {
            return f64::INFINITY;
        }
        (max - min) / max
    }

    /// Validates and additionally requires the analysis/synthesis pair to
    /// overlap-add to a constant.
    pub fn validate_cola(&self) -> Result<()> {
        self.validate()?;
        let ripple = self.cola_ripple();
        if ripple > 1e-9 {
            return Err(Error::NonCola {
                hop: self.hop,
                ripple,
            });
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.window_length / 2
    }

    /// Number of frames covering `len` samples after half-window padding.
    pub fn frames_for(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        1 + (padded.saturating_sub(self.window_length)).div_ceil(self.hop)
    }
}

/// One-sided multichannel STFT, channels × frames × bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub coefficients: Array3<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the analysed signal, for exact-length synthesis.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn channels(&self) -> usize {
        self.coefficients.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.coefficients.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.coefficients.shape()[2]
    }

    /// Same geometry, new coefficients.
    pub fn with_coefficients(&self, coefficients: Array3<Complex64>) -> Result<Self> {
        if coefficients.shape()[1..] != self.coefficients.shape()[1..] {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                coefficients.shape(),
                self.coefficients.shape()
            )));
        }
        Ok(Self {
            coefficients,
            ..self.clone()
        })
    }
}

pub fn stft(waveform: &MultichannelWaveform, config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let len = waveform.len();
    if len < config.window_length {
        return Err(Error::SignalTooShort {
            len,
            window: config.window_length,
        });
    }
    let n = config.window_length;
    let nfft = config.dft_length;
    let frames = config.frames_for(len);
    let bins = config.bins();
    let pad = config.pad();
    let win = config.window.coefficients(n);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut out = Array3::zeros((waveform.channels(), frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in 0..waveform.channels() {
        let x = waveform.channel(c);
        for t in 0..frames {
            let start = (t * config.hop) as isize - pad as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if i < n && idx >= 0 && (idx as usize) < len {
                    x[idx as usize] * win[i]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..bins {
                out[(c, t, f)] = buf[f];
            }
        }
    }
    Ok(ComplexSpectrogram {
        coefficients: out,
        config: *config,
        sample_rate: waveform.sample_rate,
        signal_len: len,
    })
}

/// Weighted overlap-add synthesis, normalized per sample by the summed
/// squared window, trimmed to the analysed length.
pub fn istft(spec: &ComplexSpectrogram) -> Result<MultichannelWaveform> {
    let config = spec.config;
    config.validate_cola()?;
    let n = config.window_length;
    let nfft = config.dft_length;
    let bins = config.bins();
    if spec.bins() != bins {
        return Err(Error::ShapeMismatch(format!(
            "{} bins for dft length {nfft}",
            spec.bins()
        )));
    }
    let frames = spec.frames();
    let pad = config.pad();
    let win = config.window.coefficients(n);
    let total = (frames - 1) * config.hop + n;
    let ifft = FftPlanner::new().plan_fft_inverse(nfft);
    let mut norm = vec![0.0; total];
    for t in 0..frames {
        for i in 0..n {
            norm[t * config.hop + i] += win[i] * win[i];
        }
    }
    let mut out = Array2::zeros((spec.channels(), spec.signal_len));
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut acc = vec![0.0; total];
    for c in 0..spec.channels() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for f in 0..bins {
                buf[f] = spec.coefficients[(c, t, f)];
            }
            // Hermitian completion; DC and Nyquist are taken as real.
            buf[0].im = 0.0;
            if nfft % 2 == 0 {
                buf[nfft / 2].im = 0.0;
            }
            for f in bins..nfft {
                buf[f] = buf[nfft - f].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let base = t * config.hop;
            for i in 0..n {
                acc[base + i] += buf[i].re / nfft as f64 * win[i];
            }
        }
        for i in 0..spec.signal_len {
            let k = i + pad;
            if k < total && norm[k] > 1e-12 {
                out[(c, i)] = acc[k] / norm[k];
            }
        }
    }
    MultichannelWaveform::new(out, spec.sample_rate)
}

/// Unit-norm observations per TF bin with the valid-bin mask, frames × bins × M.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedObservations {
    pub z: Array3<Complex64>,
    pub valid: Array2<bool>,
    pub epsilon: f64,
}

impl NormalizedObservations {
    pub fn frames(&self) -> usize {
        self.valid.nrows()
    }

    pub fn bins(&self) -> usize {
        self.valid.ncols()
    }

    pub fn channels(&self) -> usize {
        self.z.shape()[2]
    }

    /// Valid frame indices and their observations at frequency `f`.
    pub fn bin(&self, f: usize) -> FrequencyData {
        let m = self.channels();
        let mut frames = Vec::new();
        let mut z = Vec::new();
        for t in 0..self.frames() {
            if self.valid[(t, f)] {
                frames.push(t);
                z.extend((0..m).map(|c| self.z[(t, f, c)]));
            }
        }
        FrequencyData { frames, z, m }
    }
}

/// Observations of one frequency bin, valid frames only, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyData {
    pub frames: Vec<usize>,
    z: Vec<Complex64>,
    m: usize,
}

impl FrequencyData {
    pub fn new(z: Vec<Vec<Complex64>>) -> Result<Self> {
        let m = z.first().map_or(0, Vec::len);
        if z.iter().any(|v| v.len() != m) {
            return Err(Error::ShapeMismatch("observations differ in dimension".into()));
        }
        Ok(Self {
            frames: (0..z.len()).collect(),
            z: z.into_iter().flatten().collect(),
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn obs(&self, i: usize) -> &[Complex64] {
        &self.z[i * self.m..(i + 1) * self.m]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.z.chunks_exact(self.m.max(1))
    }
}

/// `1e-8` times the largest bin norm.
pub fn default_epsilon(spec: &ComplexSpectrogram) -> f64 {
    let (m, t, f) = spec.coefficients.dim();
    let mut best: f64 = 0.0;
    for ti in 0..t {
        for fi in 0..f {
            let n2: f64 = (0..m).map(|c| spec.coefficients[(c, ti, fi)].norm_sqr()).sum();
            best = best.max(n2);
        }
    }
    let e = 1e-8 * best.sqrt();
    if e > 0.0 {
        e
    } else {
        f64::MIN_POSITIVE
    }
}

pub fn normalize_observations(
    spec: &ComplexSpectrogram,
    epsilon: f64,
) -> Result<NormalizedObservations> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (m, t, f) = spec.coefficients.dim();
    let mut z = Array3::zeros((t, f, m));
    let mut valid = Array2::from_elem((t, f), false);
    for ti in 0..t {
        for fi in 0..f {
            let n2: f64 = (0..m).map(|c| spec.coefficients[(c, ti, fi)].norm_sqr()).sum();
            let n = n2.sqrt();
            if n >= epsilon && n.is_finite() {
                valid[(ti, fi)] = true;
                for c in 0..m {
                    z[(ti, fi, c)] = spec.coefficients[(c, ti, fi)] / n;
                }
            }
        }
    }
    Ok(NormalizedObservations { z, valid, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(m: usize, len: usize, seed: u64) -> MultichannelWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((m, len), |_| rng.random_range(-1.0..1.0));
        MultichannelWaveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn default_config_is_cola() {
        let c = StftConfig::default();
        assert!(c.cola_ripple() < 1e-12);
        c.validate_cola().unwrap();
        let bad = StftConfig {
            hop: 700,
            ..c
        };
        assert!(matches!(bad.validate_cola(), Err(Error::NonCola { .. })));
    }

    #[test]
    fn round_trip_small_config() {
        let x = noise(2, 3000, 5);
        let c = StftConfig {
            window_length: 256,
            dft_length: 512,
            hop: 64,
            window: Window::SqrtHann,
        };
        let s = stft(&x, &c).unwrap();
        assert_eq!(s.bins(), 257);
        let y = istft(&s).unwrap();
        let err = (&y.samples - &x.samples).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let c = StftConfig::default();
        let k = 100;
        let fs = 16_000.0;
        let freq = k as f64 * fs / c.dft_length as f64;
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect();
        let w = MultichannelWaveform::from_channels(vec![x], 16_000).unwrap();
        let s = stft(&w, &c).unwrap();
        let t = 6;
        let mags: Vec<f64> = (0..s.bins()).map(|f| s.coefficients[(0, t, f)].norm()).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, k);
        // Sine-window sidelobes stay below -23 dB of the peak.
        let bound = mags[k] * 10f64.powf(-23.0 / 20.0);
        for (f, m) in mags.iter().enumerate() {
            if f.abs_diff(k) >= 2 {
                assert!(*m <= bound, "bin {f}: {m} > {bound}");
            }
        }
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let x = noise(1, 100, 1);
        assert!(matches!(
            stft(&x, &StftConfig::default()),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn normalization_threshold_and_values() {
        let mut coef = Array3::zeros((2, 1, 2));
        coef[(0, 0, 0)] = Complex64::new(2.0, 0.0);
        coef[(0, 0, 1)] = Complex64::new(0.5e-3, 0.0);
        let spec = ComplexSpectrogram {
            coefficients: coef,
            config: StftConfig::default(),
            sample_rate: 16_000,
            signal_len: 0,
        };
        let obs = normalize_observations(&spec, 1e-3).unwrap();
        assert!(obs.valid[(0, 0)]);
        assert!(!obs.valid[(0, 1)]);
        assert_eq!(obs.z[(0, 0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(obs.z[(0, 0, 1)], Complex64::new(0.0, 0.0));
        assert!(normalize_observations(&spec, 0.0).is_err());
    }

    #[test]
    fn wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x = noise(3, 500, 9).samples.mapv(|v| f64::from(v as f32));
        let w = MultichannelWaveform::new(x, 8000).unwrap();
        let rep = write_wav(&p, &w, WavEncoding::Float32).unwrap();
        assert!(!rep.saturated());
        let back = read_wav(&p).unwrap();
        assert_eq!(back, w);

        let loud = MultichannelWaveform::from_channels(vec![vec![0.5, 1.5, -2.0, 32767.0 / 32768.0]], 8000).unwrap();
        let rep = write_wav(&p, &loud, WavEncoding::Pcm16).unwrap();
        assert_eq!(rep.clipped, 2);
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples()[(0, 1)], 32767.0 / 32768.0);
        assert_eq!(back.samples()[(0, 2)], -1.0);
        assert!((back.samples()[(0, 3)] - 32767.0 / 32768.0).abs() < 1e-9);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_wav("/nonexistent/a.wav"), Err(Error::Io { .. })));
    }
}
