//! Desk-scale reverberant test mixtures: synthetic impulse responses,
//! convolutive mixing, and JSON-lines manifests.

use crate::error::{Error, Result};
use crate::evaluation::Condition;
use crate::signal_io::{read_wav, write_wav, MultichannelWaveform, WavEncoding};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Channel whose reverberant images serve as evaluation references.
pub const REFERENCE_CHANNEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRirConfig {
    pub m: usize,
    pub n: usize,
    /// Seconds; 0 is anechoic.
    pub rt60: f64,
    pub sample_rate: u32,
    /// Direct-path delays are drawn within `0..=max_delay` samples.
    pub max_delay: usize,
    /// Per-source inter-channel delay slope is drawn from `[-max_slope, max_slope]` samples.
    pub max_slope: f64,
    /// Minimum slope difference between any two sources.
    pub min_slope_gap: f64,
    /// Response length; `None` covers 1.5 x rt60 past the latest direct path.
    pub taps: Option<usize>,
    /// Direct-to-reverberant energy ratio in dB.
    pub drr_db: f64,
    pub seed: Option<u64>,
}

impl Default for SyntheticRirConfig {
    fn default() -> Self {
        Self {
            m: 3,
            n: 2,
            rt60: 0.3,
            sample_rate: DEFAULT_SAMPLE_RATE,
            max_delay: 24,
            max_slope: 3.0,
            min_slope_gap: 1.0,
            taps: None,
            drr_db: 3.0,
            seed: None,
        }
    }
}

impl SyntheticRirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("m and n must be positive".into()));
        }
        if !(self.rt60 >= 0.0) {
            return Err(Error::InvalidArgument(format!("rt60 must be >= 0, got {}", self.rt60)));
        }
        if self.taps == Some(0) {
            return Err(Error::InvalidArgument("taps must be >= 1".into()));
        }
        if self.max_slope * 2.0 < self.min_slope_gap * (self.n as f64 - 1.0) {
            return Err(Error::InvalidArgument("slope range too small for the requested gap".into()));
        }
        Ok(())
    }

    fn tail_len(&self) -> usize {
        (1.5 * self.rt60 * self.sample_rate as f64).ceil() as usize
    }
}

/// Impulse responses indexed `[source][channel][tap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rirs {
    pub h: Vec<Vec<Vec<f64>>>,
    pub sample_rate: u32,
}

impl Rirs {
    pub fn sources(&self) -> usize {
        self.h.len()
    }

    pub fn channels(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    /// Unit direct path at delay zero on every channel.
    pub fn identity(n: usize, m: usize, sample_rate: u32) -> Self {
        Self {
            h: vec![vec![vec![1.0]; m]; n],
            sample_rate,
        }
    }
}

/// Direct tap on a linear-array delay pattern followed by an exponentially
/// decaying Gaussian tail whose amplitude falls 60 dB in `rt60`.
pub fn synth_rir<R: Rng + ?Sized>(config: &SyntheticRirConfig, rng: &mut R) -> Result<Rirs> {
    config.validate()?;
    match config.seed {
        Some(s) => synth_rir_inner(config, &mut ChaCha8Rng::seed_from_u64(s)),
        None => synth_rir_inner(config, rng),
    }
}

fn synth_rir_inner<R: Rng + ?Sized>(config: &SyntheticRirConfig, rng: &mut R) -> Result<Rirs> {
    let fs = config.sample_rate as f64;
    // Slopes with a minimum pairwise gap, by rejection.
    let mut slopes: Vec<f64> = Vec::with_capacity(config.n);
    let mut tries = 0;
    while slopes.len() < config.n {
        let s = (rng.random::<f64>() * 2.0 - 1.0) * config.max_slope;
        tries += 1;
        if slopes.iter().all(|o: &f64| (o - s).abs() >= config.min_slope_gap) || tries > 10_000 {
            slopes.push(s);
        }
    }
    let span = config.max_slope * (config.m as f64 - 1.0);
    let tail = if config.rt60 > 0.0 { config.tail_len() } else { 0 };
    let taps = config.taps.unwrap_or(config.max_delay + 1 + tail);
    let decay = (1000f64).ln() / (config.rt60 * fs).max(f64::MIN_POSITIVE);
    // Tail energy sum_k (g e^{-decay k})^2 ~ g^2 / (1 - e^{-2 decay}).
    let tail_gain = if config.rt60 > 0.0 {
        let drr = 10f64.powf(config.drr_db / 10.0);
        (-(-2.0 * decay).exp_m1() / drr).sqrt()
    } else {
        0.0
    };
    let mut h = Vec::with_capacity(config.n);
    for slope in slopes {
        let free = (config.max_delay as f64 - span).max(0.0);
        let offset = rng.random::<f64>() * free + if slope < 0.0 { span } else { 0.0 };
        let mut per_channel = Vec::with_capacity(config.m);
        for c in 0..config.m {
            let d = (offset + slope * c as f64).round().clamp(0.0, config.max_delay as f64) as usize;
            let mut resp = vec![0.0; taps];
            if d < taps {
                resp[d] = 1.0;
            }
            for (k, r) in resp.iter_mut().enumerate().skip(d + 1) {
                let g: f64 = StandardNormal.sample(rng);
                *r = tail_gain * g * (-decay * (k - d) as f64).exp();
            }
            if tail == 0 {
                resp.truncate(d + 1);
            }
            per_channel.push(resp);
        }
        h.push(per_channel);
    }
    Ok(Rirs {
        h,
        sample_rate: config.sample_rate,
    })
}

/// Linear convolution truncated to `x.len()`.
pub fn convolve(x: &[f64], h: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let len = x.len();
    if len == 0 || h.is_empty() {
        return vec![0.0; len];
    }
    if h.len() <= 32 {
        let mut y = vec![0.0; len];
        for (k, hk) in h.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            for t in k..len {
                y[t] += hk * x[t - k];
            }
        }
        return y;
    }
    let size = (len + h.len() - 1).next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let load = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        for (d, s) in b.iter_mut().zip(v) {
            d.re = *s;
        }
        b
    };
    let mut a = load(x);
    let mut b = load(h);
    fft.process(&mut a);
    fft.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    ifft.process(&mut a);
    a[..len].iter().map(|c| c.re / size as f64).collect()
}

#[derive(Debug, Clone)]
pub struct GeneratedMixture {
    pub mixture: MultichannelWaveform,
    /// Gain-scaled reverberant images, `[source][channel][sample]`.
    pub images: Vec<Vec<Vec<f64>>>,
}

impl GeneratedMixture {
    /// Images at the evaluation channel.
    pub fn references(&self, channel: usize) -> Vec<Vec<f64>> {
        self.images.iter().map(|im| im[channel].clone()).collect()
    }
}

/// `mixture = sum_n gain_n (source_n * rir_n)` on every channel.
pub fn generate_mixture(sources: &[MultichannelWaveform], rirs: &Rirs, gains: &[f64]) -> Result<GeneratedMixture> {
    let n = sources.len();
    if n == 0 || rirs.sources() != n || gains.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} sources, {} responses, {} gains",
            rirs.sources(),
            gains.len()
        )));
    }
    let len = sources[0].len();
    for s in sources {
        if s.channels() != 1 {
            return Err(Error::InvalidArgument("sources must be single-channel".into()));
        }
        if s.sample_rate() != rirs.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "sample rate {} vs responses at {}",
                s.sample_rate(),
                rirs.sample_rate
            )));
        }
        if s.len() != len {
            return Err(Error::ShapeMismatch("sources differ in length".into()));
        }
    }
    let m = rirs.channels();
    let mut planner = FftPlanner::new();
    let images: Vec<Vec<Vec<f64>>> = sources
        .iter()
        .zip(&rirs.h)
        .zip(gains)
        .map(|((s, h), g)| {
            let x: Vec<f64> = s.channel(0).iter().map(|v| v * g).collect();
            h.iter().map(|hc| convolve(&x, hc, &mut planner)).collect()
        })
        .collect();
    let mut mix = Array2::zeros((m, len));
    for im in &images {
        for (c, ch) in im.iter().enumerate() {
            for (t, v) in ch.iter().enumerate() {
                mix[(c, t)] += v;
            }
        }
    }
    Ok(GeneratedMixture {
        mixture: MultichannelWaveform::new(mix, rirs.sample_rate)?,
        images,
    })
}

/// Gains giving every source image the same power at `channel` (RMS `level`).
pub fn equal_power_gains(sources: &[MultichannelWaveform], rirs: &Rirs, channel: usize, level: f64) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    sources
        .iter()
        .zip(&rirs.h)
        .map(|(s, h)| {
            let x: Vec<f64> = s.channel(0).to_vec();
            let y = convolve(&x, &h[channel], &mut planner);
            let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
            if rms > 0.0 {
                level / rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Speech-like test signal: voiced harmonic syllables with formant
/// envelopes, occasional noise bursts, and silent gaps.
pub fn synth_source<R: Rng + ?Sized>(seconds: f64, sample_rate: u32, rng: &mut R) -> MultichannelWaveform {
    let fs = sample_rate as f64;
    let len = (seconds * fs).round() as usize;
    let mut x = vec![0.0; len];
    let f0_base = 90.0 + 160.0 * rng.random::<f64>();
    let mut t = (rng.random::<f64>() * 0.2 * fs) as usize;
    let normal = Normal::new(0.0, 1.0).unwrap();
    while t < len {
        let dur = ((0.08 + 0.22 * rng.random::<f64>()) * fs) as usize;
        let end = (t + dur).min(len);
        let f1 = 300.0 + 600.0 * rng.random::<f64>();
        let f2 = 900.0 + 1600.0 * rng.random::<f64>();
        let glide = 0.8 + 0.4 * rng.random::<f64>();
        let voiced = rng.random::<f64>() < 0.8;
        let amp = 0.5 + rng.random::<f64>();
        let mut phase = 0.0;
        for (i, s) in x[t..end].iter_mut().enumerate() {
            let u = i as f64 / (end - t).max(1) as f64;
            let env = (std::f64::consts::PI * u).sin().powi(2) * amp;
            if voiced {
                let f0 = f0_base * (1.0 + (glide - 1.0) * u);
                phase += 2.0 * std::f64::consts::PI * f0 / fs;
                let mut v = 0.0;
                let mut k = 1.0;
                while k * f0 < 0.45 * fs && k <= 40.0 {
                    let fk = k * f0;
                    let formant = 1.0 / (1.0 + ((fk - f1) / 120.0).powi(2)) + 0.6 / (1.0 + ((fk - f2) / 200.0).powi(2));
                    v += (formant + 0.02) * (k * phase).sin() / k.sqrt();
                    k += 1.0;
                }
                *s += env * v;
            } else {
                *s += 0.3 * env * normal.sample(rng);
            }
        }
        let gap = if rng.random::<f64>() < 0.15 { 0.25 + 0.3 * rng.random::<f64>() } else { 0.03 + 0.15 * rng.random::<f64>() };
        t = end + (gap * fs) as usize;
    }
    MultichannelWaveform::from_channels(vec![x], sample_rate).expect("single channel")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    /// Single-channel WAV, relative to the manifest directory.
    Path(PathBuf),
    Synthetic { seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RirSpec {
    /// One multichannel WAV per source.
    Files(Vec<PathBuf>),
    Synthetic(SyntheticRirConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub sources: Vec<SourceSpec>,
    pub rir: RirSpec,
    /// Explicit gains; default is equal image power at the reference channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    pub labels: Condition,
    /// Overrides the derived `manifest seed ^ index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureManifest {
    pub records: Vec<ManifestRecord>,
    pub seed: u64,
    pub sample_rate: u32,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl MixtureManifest {
    pub fn new(records: Vec<ManifestRecord>, seed: u64) -> Self {
        Self {
            records,
            seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn record_seed(&self, index: usize) -> u64 {
        self.records[index].seed.unwrap_or(self.seed ^ index as u64)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Parses a JSON-lines manifest; blank lines and `#` comments are ignored.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<MixtureManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
        validate_record(&r)?;
        records.push(r);
    }
    let mut m = MixtureManifest::new(records, 0);
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

fn validate_record(r: &ManifestRecord) -> Result<()> {
    let bad = |msg: String| Err(Error::Manifest(format!("record {}: {msg}", r.id)));
    if r.sources.len() != r.labels.n {
        return bad(format!("{} sources but N = {}", r.sources.len(), r.labels.n));
    }
    if let Some(g) = &r.gains {
        if g.len() != r.sources.len() {
            return bad(format!("{} gains for {} sources", g.len(), r.sources.len()));
        }
    }
    match &r.rir {
        RirSpec::Files(f) if f.len() != r.sources.len() => bad(format!("{} RIR files for {} sources", f.len(), r.sources.len())),
        RirSpec::Synthetic(c) if c.n != r.labels.n || c.m != r.labels.m => bad("synthetic RIR shape disagrees with labels".into()),
        _ => Ok(()),
    }
}

/// A rendered record plus the metadata written next to it.
#[derive(Debug, Clone)]
pub struct RenderedMixture {
    pub id: String,
    pub mixture: MultichannelWaveform,
    /// Reverberant images at [`REFERENCE_CHANNEL`].
    pub references: Vec<Vec<f64>>,
    pub meta: MixtureMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMeta {
    pub id: String,
    pub labels: Condition,
    pub gains: Vec<f64>,
    pub seed: u64,
    pub sample_rate: u32,
    pub reference_channel: usize,
    pub sources: Vec<SourceSpec>,
    pub rir: RirSpec,
}

pub fn render_record(manifest: &MixtureManifest, index: usize) -> Result<RenderedMixture> {
    let rec = &manifest.records[index];
    let seed = manifest.record_seed(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = |e: Error| Error::Manifest(format!("record {}: {e}", rec.id));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { manifest.base_dir.join(p) };
    let mut sources = Vec::with_capacity(rec.sources.len());
    for s in &rec.sources {
        sources.push(match s {
            SourceSpec::Path(p) => {
                let w = read_wav(resolve(p)).map_err(ctx)?;
                if w.channels() != 1 {
                    return Err(ctx(Error::InvalidArgument(format!("{} is not mono", p.display()))));
                }
                w
            }
            SourceSpec::Synthetic { seconds } => synth_source(*seconds, manifest.sample_rate, &mut rng),
        });
    }
    // equalize lengths by zero-padding to the longest source
    let len = sources.iter().map(|s| s.len()).max().unwrap_or(0);
    let sources: Vec<MultichannelWaveform> = sources
        .into_iter()
        .map(|s| {
            let mut x = s.channel(0).to_vec();
            x.resize(len, 0.0);
            MultichannelWaveform::from_channels(vec![x], s.sample_rate())
        })
        .collect::<Result<_>>()
        .map_err(ctx)?;
    let rirs = match &rec.rir {
        RirSpec::Synthetic(c) => {
            let mut c = c.clone();
            c.sample_rate = manifest.sample_rate;
            synth_rir(&c, &mut rng).map_err(ctx)?
        }
        RirSpec::Files(files) => {
            let mut h = Vec::new();
            let mut rate = manifest.sample_rate;
            for f in files {
                let w = read_wav(resolve(f)).map_err(ctx)?;
                rate = w.sample_rate();
                h.push((0..w.channels()).map(|c| w.channel(c).to_vec()).collect());
            }
            Rirs { h, sample_rate: rate }
        }
    };
    let gains = match &rec.gains {
        Some(g) => g.clone(),
        None => equal_power_gains(&sources, &rirs, REFERENCE_CHANNEL, 0.05),
    };
    let gen = generate_mixture(&sources, &rirs, &gains).map_err(ctx)?;
    Ok(RenderedMixture {
        id: rec.id.clone(),
        references: gen.references(REFERENCE_CHANNEL),
        mixture: gen.mixture,
        meta: MixtureMeta {
            id: rec.id.clone(),
            labels: rec.labels,
            gains,
            seed,
            sample_rate: manifest.sample_rate,
            reference_channel: REFERENCE_CHANNEL,
            sources: rec.sources.clone(),
            rir: rec.rir.clone(),
        },
    })
}

/// Paths of one materialized record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub mixture: PathBuf,
    pub references: Vec<PathBuf>,
    pub meta: PathBuf,
    pub labels: Condition,
}

pub const DATASET_INDEX: &str = "dataset.json";

/// Renders every record and writes `<id>/mixture.wav`, `<id>/ref<k>.wav`
/// (float32) and `<id>/meta.json`, plus a `dataset.json` index.
pub fn materialize(manifest: &MixtureManifest, out_dir: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let out_dir = out_dir.as_ref();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let entries = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| {
            let r = render_record(manifest, i)?;
            let dir = out_dir.join(&r.id);
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
            let mix = dir.join("mixture.wav");
            write_wav(&mix, &r.mixture, WavEncoding::Float32)?;
            let mut refs = Vec::new();
            for (k, x) in r.references.iter().enumerate() {
                let p = dir.join(format!("ref{k}.wav"));
                write_wav(&p, &MultichannelWaveform::from_channels(vec![x.clone()], r.mixture.sample_rate())?, WavEncoding::Float32)?;
                refs.push(p);
            }
            let meta = dir.join("meta.json");
            std::fs::write(&meta, serde_json::to_string_pretty(&r.meta)?).map_err(io(&meta))?;
            Ok(DatasetEntry {
                id: r.id,
                mixture: mix,
                references: refs,
                meta,
                labels: r.meta.labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = out_dir.join(DATASET_INDEX);
    std::fs::write(&index, serde_json::to_string_pretty(&entries)?).map_err(io(&index))?;
    Ok(entries)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let index = dir.as_ref().join(DATASET_INDEX);
    let text = std::fs::read_to_string(&index).map_err(|source| Error::Io {
        path: index.clone(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Fully synthetic manifest of `count` records for one condition.
pub fn desk_manifest(count: usize, condition: Condition, seconds: f64, seed: u64, prefix: &str) -> MixtureManifest {
    let records = (0..count)
        .map(|i| ManifestRecord {
            id: format!("{prefix}{i:04}"),
            sources: vec![SourceSpec::Synthetic { seconds }; condition.n],
            rir: RirSpec::Synthetic(SyntheticRirConfig {
                m: condition.m,
                n: condition.n,
                rt60: condition.rt60,
                ..Default::default()
            }),
            gains: None,
            labels: condition,
            seed: None,
        })
        .collect();
    MixtureManifest::new(records, seed)
}
