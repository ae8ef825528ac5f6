//! Run configuration: a TOML file, overridden by command-line flags, and
//! snapshotted verbatim into every run directory.

use anyhow::{bail, Context, Result};
use cstmm::experiment::{ArmSpec, NuSpec};
use cstmm::mixture_fit::{EigenUpdate, FitConfig, ShapeKind};
use cstmm::perm_align::AlignConfig;
use cstmm::pipeline::{ChannelPolicy, SeparationConfig};
use cstmm::signal_io::StftConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const OUTPUT_ENV: &str = "CSTMM_OUTPUT_DIR";
pub const SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Source count for `separate`; sweeps take N from each mixture's labels.
    pub sources: usize,
    pub iters: usize,
    pub warmstart: usize,
    pub kmeans_attempts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub eigen_update: EigenUpdate,
    pub early_stop: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            sources: f.n_sources,
            iters: f.max_outer_iters,
            warmstart: f.warmstart_iters,
            kmeans_attempts: f.kmeans_attempts,
            epsilon: None,
            eigen_update: f.eigen_update,
            early_stop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Single-model runs (`separate`).
    pub nu: NuSpec,
    pub shape: ShapeKind,
    /// Sweep grid, one full-shape arm per entry, unless `arms` is given.
    pub nu_list: Vec<NuSpec>,
    pub arms: Vec<ArmSpec>,
    /// Arm the others are compared against (default: the ν = M arm, else the last).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub filter_len: usize,
    /// ν used for the large-ν recovery arms.
    pub large_nu: f64,
    /// Also compare against the high-concentration update at ν = ∞.
    pub hca_limits: bool,
    pub write_masks: bool,
    pub stft: StftConfig,
    pub fit: FitSection,
    pub align: AlignConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            nu: NuSpec::Value(1.0),
            shape: ShapeKind::Full,
            nu_list: vec![NuSpec::Value(1.0), NuSpec::M],
            arms: vec![],
            baseline: None,
            dataset: None,
            output_dir: None,
            filter_len: cstmm::evaluation::DEFAULT_FILTER_LEN,
            large_nu: cstmm::experiment::RECOVERY_NU,
            hca_limits: false,
            write_masks: false,
            stft: StftConfig::default(),
            fit: FitSection::default(),
            align: AlignConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Everything checkable without touching data.
    pub fn validate(&self) -> Result<()> {
        self.separation(self.fit.sources.max(2), 2).validate()?;
        if self.filter_len == 0 {
            bail!("filter_len must be >= 1");
        }
        if !(self.large_nu > 0.0) || !self.large_nu.is_finite() {
            bail!("large_nu must be positive and finite");
        }
        if self.fit.sources == 0 {
            bail!("sources must be >= 1");
        }
        let arms = self.sweep_arms();
        if arms.is_empty() {
            bail!("no sweep arms: set nu_list or arms");
        }
        for (i, a) in arms.iter().enumerate() {
            if arms[..i].iter().any(|b| b.name == a.name) {
                bail!("duplicate arm name {:?}", a.name);
            }
        }
        Ok(())
    }

    pub fn sweep_arms(&self) -> Vec<ArmSpec> {
        if !self.arms.is_empty() {
            return self.arms.clone();
        }
        self.nu_list.iter().map(|nu| ArmSpec::cstmm(*nu, self.shape)).collect()
    }

    /// Pipeline configuration for an `m`-channel, `n`-source mixture.
    pub fn separation(&self, n: usize, m: usize) -> SeparationConfig {
        SeparationConfig {
            stft: self.stft.clone(),
            fit: FitConfig {
                n_sources: n,
                nu: self.nu.resolve(m),
                shape: self.shape,
                max_outer_iters: self.fit.iters,
                kmeans_attempts: self.fit.kmeans_attempts,
                warmstart_iters: self.fit.warmstart,
                epsilon: self.fit.epsilon,
                seed: self.seed,
                eigen_update: self.fit.eigen_update,
                early_stop: self.fit.early_stop,
            },
            align: self.align,
            channel_policy: ChannelPolicy::Reference(0),
        }
    }

    /// `--out`, else the config's `output_dir`, else `$CSTMM_OUTPUT_DIR/<command>`,
    /// else `./cstmm-out/<command>`.
    pub fn resolve_output(&self, flag: Option<&Path>, command: &str) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
            _ => PathBuf::from("cstmm-out").join(command),
        }
    }
}
