//! Waveform in, separated sources out: STFT, normalization, per-frequency
//! fitting, permutation alignment, masking and overlap-add synthesis.

use crate::error::{Error, Result};
use crate::mixture_fit::{
    cacg_reference_fit, fit_frequency, fit_from_init, kmeans_init, FitConfig, FitStatus, Responsibilities,
};
use crate::perm_align::{align_permutations_with, apply_permutations, AlignConfig, MaskTensor, PermutationMap};
use crate::signal_io::{
    default_epsilon, istft, normalize_observations, stft, ComplexSpectrogram, FrequencyData,
    MultichannelWaveform, NormalizedObservations, StftConfig,
};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Which mixture channels the masks are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    /// Single-channel estimates from one reference channel.
    Reference(usize),
    AllChannels,
}

impl Default for ChannelPolicy {
    fn default() -> Self {
        ChannelPolicy::Reference(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SeparationConfig {
    pub stft: StftConfig,
    pub fit: FitConfig,
    pub align: AlignConfig,
    pub channel_policy: ChannelPolicy,
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.stft.validate_cola()?;
        self.fit.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub sources: Vec<MultichannelWaveform>,
    /// Aligned masks.
    pub masks: MaskTensor,
    pub permutation: PermutationMap,
    pub loglik: Vec<Vec<f64>>,
    pub status: Vec<FitStatus>,
    pub epsilon: f64,
}

impl SeparationResult {
    pub fn failed_bins(&self) -> usize {
        self.status.iter().filter(|s| **s == FitStatus::Failed).count()
    }

    pub fn skipped_bins(&self) -> usize {
        self.status.iter().filter(|s| **s == FitStatus::Skipped).count()
    }
}

/// Per-frequency random stream: a function of the run seed and the bin only.
pub fn bin_rng(seed: u64, f: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(f as u64 + 1);
    rng
}

/// Per-bin fit outputs before alignment.
#[derive(Debug, Clone)]
pub struct BinFits {
    pub masks: MaskTensor,
    pub loglik: Vec<Vec<f64>>,
    pub status: Vec<FitStatus>,
}

fn assemble(obs: &NormalizedObservations, n: usize, per_bin: Vec<(Responsibilities, Vec<f64>, FitStatus)>) -> Result<BinFits> {
    let (t, f) = obs.valid.dim();
    let mut gamma = Array3::from_elem((n, t, f), 1.0 / n as f64);
    let mut loglik = Vec::with_capacity(f);
    let mut status = Vec::with_capacity(f);
    for (fi, (masks, ll, st)) in per_bin.into_iter().enumerate() {
        if st == FitStatus::Ok {
            let frames = (0..t).filter(|&ti| obs.valid[(ti, fi)]);
            for (row, ti) in frames.enumerate() {
                for k in 0..n {
                    gamma[(k, ti, fi)] = masks.get(row, k);
                }
            }
        }
        loglik.push(ll);
        status.push(st);
    }
    Ok(BinFits {
        masks: MaskTensor::new(gamma, obs.valid.clone())?,
        loglik,
        status,
    })
}

/// Independently fits every frequency bin (in parallel).
pub fn fit_all_bins(obs: &NormalizedObservations, fit: &FitConfig) -> Result<BinFits> {
    fit.validate()?;
    let per_bin = (0..obs.bins())
        .into_par_iter()
        .map(|fi| {
            let data = obs.bin(fi);
            let out = fit_frequency(&data, fit, &mut bin_rng(fit.seed, fi))?;
            Ok((out.masks, out.state.loglik_trace, out.status))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(obs, fit.n_sources, per_bin)
}

/// k-means initial masks for every bin, drawn from the same streams as [`fit_all_bins`].
pub fn initial_masks(obs: &NormalizedObservations, fit: &FitConfig) -> Vec<Responsibilities> {
    (0..obs.bins())
        .into_par_iter()
        .map(|fi| {
            let data = obs.bin(fi);
            kmeans_init(&data, fit.n_sources, fit.kmeans_attempts, &mut bin_rng(fit.seed, fi))
        })
        .collect()
}

fn fit_bin_from_init(data: &FrequencyData, fit: &FitConfig, init: &Responsibilities) -> (Responsibilities, Vec<f64>, FitStatus) {
    if data.is_empty() {
        return (Responsibilities::uniform(0, fit.n_sources), vec![], FitStatus::Skipped);
    }
    match fit_from_init(data, fit, init) {
        Ok(r) => (r.masks, r.state.loglik_trace, r.status),
        Err(e) => {
            log::warn!("bin fit failed: {e}");
            (Responsibilities::uniform(data.len(), fit.n_sources), vec![], FitStatus::Failed)
        }
    }
}

/// Fits every bin from given initial masks (matched-initialization runs).
pub fn fit_all_bins_from(obs: &NormalizedObservations, fit: &FitConfig, inits: &[Responsibilities]) -> Result<BinFits> {
    fit.validate()?;
    if inits.len() != obs.bins() {
        return Err(Error::ShapeMismatch(format!("{} inits for {} bins", inits.len(), obs.bins())));
    }
    let per_bin = (0..obs.bins())
        .into_par_iter()
        .map(|fi| fit_bin_from_init(&obs.bin(fi), fit, &inits[fi]))
        .collect();
    assemble(obs, fit.n_sources, per_bin)
}

/// The dedicated cACGMM reference applied to every bin from given initial masks.
pub fn cacg_all_bins(obs: &NormalizedObservations, fit: &FitConfig, inits: &[Responsibilities]) -> Result<BinFits> {
    let per_bin = (0..obs.bins())
        .into_par_iter()
        .map(|fi| {
            let data = obs.bin(fi);
            if data.is_empty() {
                return (Responsibilities::uniform(0, fit.n_sources), vec![], FitStatus::Skipped);
            }
            match cacg_reference_fit(&data, fit.n_sources, fit.max_outer_iters, &inits[fi], fit.warmstart_iters) {
                Ok(r) => (r.masks, vec![], FitStatus::Ok),
                Err(e) => {
                    log::warn!("reference fit failed: {e}");
                    (Responsibilities::uniform(data.len(), fit.n_sources), vec![], FitStatus::Failed)
                }
            }
        })
        .collect();
    assemble(obs, fit.n_sources, per_bin)
}

/// Source `n` spectrogram is `gamma_n * y` on the selected channels.
pub fn apply_masks(
    spec: &ComplexSpectrogram,
    masks: &MaskTensor,
    policy: ChannelPolicy,
) -> Result<Vec<ComplexSpectrogram>> {
    let (m, t, f) = spec.coefficients.dim();
    let (n, mt, mf) = masks.gamma.dim();
    if (mt, mf) != (t, f) {
        return Err(Error::ShapeMismatch(format!(
            "masks {:?} vs spectrogram {:?}",
            masks.gamma.dim(),
            spec.coefficients.dim()
        )));
    }
    let channels: Vec<usize> = match policy {
        ChannelPolicy::Reference(c) if c < m => vec![c],
        ChannelPolicy::Reference(c) => {
            return Err(Error::InvalidArgument(format!("reference channel {c} of {m}")))
        }
        ChannelPolicy::AllChannels => (0..m).collect(),
    };
    (0..n)
        .map(|k| {
            let out = Array3::from_shape_fn((channels.len(), t, f), |(c, ti, fi)| {
                spec.coefficients[(channels[c], ti, fi)] * masks.gamma[(k, ti, fi)]
            });
            spec.with_coefficients(out)
        })
        .collect()
}

/// Front end shared by all runs: STFT and normalized observations.
pub fn analyze(mixture: &MultichannelWaveform, config: &SeparationConfig) -> Result<(ComplexSpectrogram, NormalizedObservations)> {
    let spec = stft(mixture, &config.stft).map_err(|e| e.in_stage("stft"))?;
    let eps = config.fit.epsilon.unwrap_or_else(|| default_epsilon(&spec));
    let obs = normalize_observations(&spec, eps).map_err(|e| e.in_stage("normalize"))?;
    Ok((spec, obs))
}

/// Aligns, masks and synthesizes from per-bin fits.
pub fn finish(
    spec: &ComplexSpectrogram,
    obs: &NormalizedObservations,
    fits: BinFits,
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    let (permutation, _) = align_permutations_with(&fits.masks, &config.align);
    let masks = apply_permutations(&fits.masks, &permutation).map_err(|e| e.in_stage("align"))?;
    let sources = apply_masks(spec, &masks, config.channel_policy)
        .map_err(|e| e.in_stage("mask"))?
        .iter()
        .map(istft)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("istft"))?;
    Ok(SeparationResult {
        sources,
        masks,
        permutation,
        loglik: fits.loglik,
        status: fits.status,
        epsilon: obs.epsilon,
    })
}

pub fn separate(mixture: &MultichannelWaveform, config: &SeparationConfig) -> Result<SeparationResult> {
    config.validate()?;
    if mixture.channels() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 channels, got {}",
            mixture.channels()
        )));
    }
    let (spec, obs) = analyze(mixture, config)?;
    let fits = fit_all_bins(&obs, &config.fit).map_err(|e| e.in_stage("fit"))?;
    let result = finish(&spec, &obs, fits, config)?;
    if result.failed_bins() > 0 {
        log::warn!("{} frequency bins fell back to uniform masks", result.failed_bins());
    }
    Ok(result)
}

const MASK_MAGIC: &[u8; 8] = b"CSTMASK1";

/// Writes masks in the `CSTMASK1` format: magic, then little-endian `u32`
/// N, T, F, a dtype byte (1 = f64), three zero bytes, T*F valid bytes
/// (frame-major), then N*T*F little-endian f64 values in (n, t, f) order.
pub fn write_masks(path: impl AsRef<Path>, masks: &MaskTensor) -> Result<()> {
    let path = path.as_ref();
    let (n, t, f) = masks.gamma.dim();
    let mut buf = Vec::with_capacity(24 + t * f + 8 * n * t * f);
    buf.extend_from_slice(MASK_MAGIC);
    for d in [n, t, f] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&[1, 0, 0, 0]);
    buf.extend(masks.valid.iter().map(|&v| v as u8));
    for x in masks.gamma.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::File::create(path).and_then(|mut fh| fh.write_all(&buf)).map_err(io)
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<MaskTensor> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut fh| fh.read_to_end(&mut buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let bad = |msg: &str| Error::InvalidArgument(format!("{}: {msg}", path.display()));
    if buf.len() < 24 || &buf[..8] != MASK_MAGIC {
        return Err(bad("not a mask file"));
    }
    let dim = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, t, f) = (dim(0), dim(1), dim(2));
    if buf[20] != 1 {
        return Err(bad("unsupported dtype"));
    }
    let body = 24 + t * f;
    if buf.len() != body + 8 * n * t * f {
        return Err(bad("truncated"));
    }
    let valid = Array2::from_shape_vec((t, f), buf[24..body].iter().map(|&b| b != 0).collect())
        .map_err(|e| bad(&e.to_string()))?;
    let vals: Vec<f64> = buf[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let gamma = Array3::from_shape_vec((n, t, f), vals).map_err(|e| bad(&e.to_string()))?;
    MaskTensor::new(gamma, valid)
}
