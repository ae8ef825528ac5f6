//! Paired multi-arm runs over a dataset: ν sweeps and inclusion-recovery checks.
//!
//! Every arm of one mixture shares the STFT front end and the k-means
//! initial masks, so arm differences come from the model alone.

use crate::dirstats::Nu;
use crate::error::{Error, Result};
use crate::evaluation::{paired_report, sdri, Condition, ConditionRow, MixtureRow};
use crate::mixgen::{DatasetEntry, RenderedMixture, REFERENCE_CHANNEL};
use crate::mixture_fit::{EigenUpdate, FitConfig, ShapeKind};
use crate::perm_align::MaskTensor;
use crate::pipeline::{analyze, cacg_all_bins, finish, fit_all_bins_from, initial_masks, BinFits, SeparationConfig};
use crate::signal_io::{read_wav, MultichannelWaveform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Degrees of freedom as written in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuSpec {
    Value(f64),
    /// ν = number of channels of the mixture at hand.
    M,
    Inf,
}

impl NuSpec {
    pub fn resolve(self, m: usize) -> Nu {
        match self {
            NuSpec::Value(v) => Nu::Finite(v),
            NuSpec::M => Nu::Finite(m as f64),
            NuSpec::Inf => Nu::Infinite,
        }
    }
}

impl fmt::Display for NuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuSpec::Value(v) => write!(f, "{v}"),
            NuSpec::M => f.write_str("M"),
            NuSpec::Inf => f.write_str("inf"),
        }
    }
}

impl FromStr for NuSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(NuSpec::M),
            "inf" | "Inf" | "infinity" => Ok(NuSpec::Inf),
            t => match t.parse::<f64>() {
                Ok(v) if v.is_infinite() && v > 0.0 => Ok(NuSpec::Inf),
                Ok(v) if v > 0.0 => Ok(NuSpec::Value(v)),
                _ => Err(Error::InvalidArgument(format!("nu must be a positive number, \"M\" or \"inf\", got {s:?}"))),
            },
        }
    }
}

impl Serialize for NuSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NuSpec::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for NuSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => NuSpec::from_str(&v.to_string()).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmModel {
    Cstmm {
        nu: NuSpec,
        #[serde(default = "full_shape")]
        shape: ShapeKind,
        #[serde(default)]
        update: EigenUpdate,
    },
    /// Dedicated cACGMM reference implementation.
    Cacg,
}

fn full_shape() -> ShapeKind {
    ShapeKind::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub model: ArmModel,
}

impl ArmSpec {
    pub fn cstmm(nu: NuSpec, shape: ShapeKind) -> Self {
        let suffix = match shape {
            ShapeKind::Full => "",
            ShapeKind::RankOne => "-rank1",
        };
        Self {
            name: format!("nu={nu}{suffix}"),
            model: ArmModel::Cstmm {
                nu,
                shape,
                update: EigenUpdate::Auto,
            },
        }
    }

    /// Same arm with the high-concentration update everywhere.
    pub fn hca(mut self) -> Self {
        if let ArmModel::Cstmm { update, .. } = &mut self.model {
            *update = EigenUpdate::Hca;
            self.name.push_str("-hca");
        }
        self
    }

    pub fn cacg() -> Self {
        Self {
            name: "cacg".into(),
            model: ArmModel::Cacg,
        }
    }

    fn fit(&self, obs: &crate::signal_io::NormalizedObservations, base: &FitConfig, inits: &[crate::mixture_fit::Responsibilities], m: usize) -> Result<BinFits> {
        match &self.model {
            ArmModel::Cstmm { nu, shape, update } => {
                let fit = FitConfig {
                    nu: nu.resolve(m),
                    shape: *shape,
                    eigen_update: *update,
                    ..base.clone()
                };
                fit_all_bins_from(obs, &fit, inits)
            }
            ArmModel::Cacg => cacg_all_bins(obs, base, inits),
        }
    }
}

/// A mixture with its evaluation references.
#[derive(Debug, Clone)]
pub struct MixtureItem {
    pub id: String,
    pub mixture: MultichannelWaveform,
    pub references: Vec<Vec<f64>>,
    pub labels: Condition,
}

impl From<RenderedMixture> for MixtureItem {
    fn from(r: RenderedMixture) -> Self {
        Self {
            id: r.id,
            mixture: r.mixture,
            references: r.references,
            labels: r.meta.labels,
        }
    }
}

impl MixtureItem {
    pub fn load(entry: &DatasetEntry) -> Result<Self> {
        let mixture = read_wav(&entry.mixture)?;
        let references = entry
            .references
            .iter()
            .map(|p| Ok(read_wav(p)?.channel(0).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: entry.id.clone(),
            mixture,
            references,
            labels: entry.labels,
        })
    }
}

/// One arm's outcome on one mixture.
#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub sdri: Vec<f64>,
    pub sdr: Vec<f64>,
    pub input_sdr: Vec<f64>,
    /// Unaligned per-bin masks.
    pub raw_masks: MaskTensor,
    pub failed_bins: usize,
}

impl ArmOutcome {
    pub fn mean_sdri(&self) -> f64 {
        self.sdri.iter().sum::<f64>() / self.sdri.len() as f64
    }
}

/// Runs every arm on one mixture with shared analysis and initial masks.
/// The source count comes from the mixture's labels.
pub fn run_arms(item: &MixtureItem, config: &SeparationConfig, arms: &[ArmSpec], filter_len: usize) -> Vec<Result<ArmOutcome>> {
    let mut cfg = config.clone();
    cfg.fit.n_sources = item.labels.n;
    // Channel 0 is always the evaluation channel.
    cfg.channel_policy = crate::pipeline::ChannelPolicy::Reference(REFERENCE_CHANNEL);
    let front = cfg
        .validate()
        .and_then(|_| analyze(&item.mixture, &cfg))
        .map(|(spec, obs)| {
            let inits = initial_masks(&obs, &cfg.fit);
            (spec, obs, inits)
        });
    let (spec, obs, inits) = match front {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return arms.iter().map(|_| Err(Error::InvalidArgument(msg.clone()))).collect();
        }
    };
    let m = item.mixture.channels();
    let mix0 = item.mixture.channel(REFERENCE_CHANNEL).to_vec();
    arms.iter()
        .map(|arm| {
            let fits = arm.fit(&obs, &cfg.fit, &inits, m).map_err(|e| e.in_stage("fit"))?;
            let raw_masks = fits.masks.clone();
            let res = finish(&spec, &obs, fits, &cfg)?;
            let est: Vec<Vec<f64>> = res
                .sources
                .iter()
                .map(|s| {
                    let mut x = s.channel(0).to_vec();
                    x.resize(mix0.len(), 0.0);
                    x
                })
                .collect();
            let r = sdri(&est, &item.references, &mix0, filter_len).map_err(|e| e.in_stage("evaluate"))?;
            Ok(ArmOutcome {
                sdri: r.sdri,
                sdr: r.sdr,
                input_sdr: r.input_sdr,
                raw_masks,
                failed_bins: res.failed_bins(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFailure {
    pub mixture: String,
    pub arm: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMean {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "RT60")]
    pub rt60: f64,
    pub system: String,
    pub mean_sdri: f64,
    pub mixtures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<MixtureRow>,
    pub means: Vec<ArmMean>,
    /// Each non-baseline arm against the baseline, per condition.
    pub paired: Vec<ConditionRow>,
    pub failures: Vec<MixtureFailure>,
    pub baseline: Option<String>,
}

/// The arm the others are compared against: an explicit name, else the
/// first full ν = M arm, else the last arm.
pub fn pick_baseline(arms: &[ArmSpec], name: Option<&str>) -> Result<Option<usize>> {
    if arms.len() < 2 {
        return Ok(None);
    }
    if let Some(n) = name {
        return arms
            .iter()
            .position(|a| a.name == n)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("baseline arm {n:?} not found")));
    }
    let m_arm = arms.iter().position(|a| {
        matches!(
            a.model,
            ArmModel::Cstmm {
                nu: NuSpec::M,
                shape: ShapeKind::Full,
                ..
            }
        )
    });
    Ok(Some(m_arm.unwrap_or(arms.len() - 1)))
}

fn same_condition(a: &Condition, b: &Condition) -> bool {
    a.m == b.m && a.n == b.n && a.rt60.to_bits() == b.rt60.to_bits()
}

pub fn sweep(items: &[MixtureItem], config: &SeparationConfig, arms: &[ArmSpec], baseline: Option<&str>, filter_len: usize) -> Result<SweepReport> {
    if arms.is_empty() {
        return Err(Error::InvalidArgument("no arms".into()));
    }
    let base = pick_baseline(arms, baseline)?;
    let outcomes: Vec<Vec<Result<ArmOutcome>>> = items.par_iter().map(|it| run_arms(it, config, arms, filter_len)).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (it, per_arm) in items.iter().zip(&outcomes) {
        for (arm, o) in arms.iter().zip(per_arm) {
            match o {
                Ok(o) => {
                    for k in 0..o.sdri.len() {
                        rows.push(MixtureRow {
                            mixture: it.id.clone(),
                            m: it.labels.m,
                            n: it.labels.n,
                            rt60: it.labels.rt60,
                            system: arm.name.clone(),
                            source: k,
                            sdr: o.sdr[k],
                            input_sdr: o.input_sdr[k],
                            sdri: o.sdri[k],
                        });
                    }
                    if o.failed_bins > 0 {
                        log::warn!("{} / {}: {} bins fell back to uniform masks", it.id, arm.name, o.failed_bins);
                    }
                }
                Err(e) => failures.push(MixtureFailure {
                    mixture: it.id.clone(),
                    arm: arm.name.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    let mut conditions: Vec<Condition> = Vec::new();
    for it in items {
        if !conditions.iter().any(|c| same_condition(c, &it.labels)) {
            conditions.push(it.labels);
        }
    }
    let mut means = Vec::new();
    for c in &conditions {
        for (ai, arm) in arms.iter().enumerate() {
            let v: Vec<f64> = items
                .iter()
                .zip(&outcomes)
                .filter(|(it, _)| same_condition(&it.labels, c))
                .filter_map(|(_, o)| o[ai].as_ref().ok().map(ArmOutcome::mean_sdri))
                .collect();
            means.push(ArmMean {
                m: c.m,
                n: c.n,
                rt60: c.rt60,
                system: arm.name.clone(),
                mean_sdri: v.iter().sum::<f64>() / v.len().max(1) as f64,
                mixtures: v.len(),
            });
        }
    }

    let mut paired = Vec::new();
    if let Some(b) = base {
        for (ai, arm) in arms.iter().enumerate().filter(|(i, _)| *i != b) {
            let mut groups = Vec::new();
            for c in &conditions {
                let (mut a, mut bb) = (Vec::new(), Vec::new());
                for (_, o) in items.iter().zip(&outcomes).filter(|(it, _)| same_condition(&it.labels, c)) {
                    if let (Ok(x), Ok(y)) = (&o[ai], &o[b]) {
                        a.push(x.mean_sdri());
                        bb.push(y.mean_sdri());
                    }
                }
                if a.len() >= 2 {
                    groups.push((*c, a, bb));
                } else {
                    log::warn!("condition {c:?}: fewer than 2 complete pairs for {}", arm.name);
                }
            }
            for s in paired_report(&groups)? {
                paired.push(ConditionRow::new(&s, &arm.name, &arms[b].name));
            }
        }
    }
    Ok(SweepReport {
        rows,
        means,
        paired,
        failures,
        baseline: base.map(|b| arms[b].name.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryArm {
    pub name: String,
    pub system: String,
    pub reference: String,
    pub mixtures: usize,
    pub mean_abs_sdri_diff: f64,
    pub max_abs_sdri_diff: f64,
    pub max_mask_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub arms: Vec<RecoveryArm>,
    pub failures: Vec<MixtureFailure>,
    pub large_nu: f64,
}

pub const RECOVERY_NU: f64 = 1e4;

/// (name, system, reference) for the three inclusion checks. The limit
/// references use the exact Bingham/Watson minorizer. With `with_hca_limits`,
/// two extra pairs compare against the high-concentration update at ν = ∞.
pub fn recovery_pairs(large_nu: f64, with_hca_limits: bool) -> Vec<(&'static str, ArmSpec, ArmSpec)> {
    let inf = |shape| ArmSpec::cstmm(NuSpec::Inf, shape);
    let big = |shape| ArmSpec::cstmm(NuSpec::Value(large_nu), shape);
    let mut v = vec![
        ("cacg", ArmSpec::cstmm(NuSpec::M, ShapeKind::Full), ArmSpec::cacg()),
        ("bingham", big(ShapeKind::Full), inf(ShapeKind::Full)),
        ("watson", big(ShapeKind::RankOne), inf(ShapeKind::RankOne)),
    ];
    if with_hca_limits {
        v.push(("bingham-hca", big(ShapeKind::Full), inf(ShapeKind::Full).hca()));
        v.push(("watson-hca", big(ShapeKind::RankOne), inf(ShapeKind::RankOne).hca()));
    }
    v
}

fn max_mask_diff(a: &MaskTensor, b: &MaskTensor) -> f64 {
    let (n, t, f) = a.gamma.dim();
    let mut worst = 0.0f64;
    for k in 0..n {
        for ti in 0..t {
            for fi in 0..f {
                if a.valid[(ti, fi)] {
                    worst = worst.max((a.gamma[(k, ti, fi)] - b.gamma[(k, ti, fi)]).abs());
                }
            }
        }
    }
    worst
}

pub fn recover(
    items: &[MixtureItem],
    config: &SeparationConfig,
    large_nu: f64,
    with_hca_limits: bool,
    filter_len: usize,
) -> Result<RecoveryReport> {
    recover_pairs(items, config, &recovery_pairs(large_nu, with_hca_limits), large_nu, filter_len)
}

/// [`recover`] restricted to the given `(name, system, reference)` pairs.
pub fn recover_pairs(
    items: &[MixtureItem],
    config: &SeparationConfig,
    pairs: &[(&'static str, ArmSpec, ArmSpec)],
    large_nu: f64,
    filter_len: usize,
) -> Result<RecoveryReport> {
    // identical arms (the ν = 10⁴ systems) are fitted once
    let mut arms: Vec<ArmSpec> = Vec::new();
    let index = |a: &ArmSpec, arms: &mut Vec<ArmSpec>| match arms.iter().position(|x| x == a) {
        Some(i) => i,
        None => {
            arms.push(a.clone());
            arms.len() - 1
        }
    };
    let slots: Vec<(usize, usize)> = pairs.iter().map(|(_, a, b)| (index(a, &mut arms), index(b, &mut arms))).collect();
    let mut cfg = config.clone();
    // finite-ν = M arm must take the exact fixed-point update
    cfg.fit.eigen_update = EigenUpdate::Auto;
    let outcomes: Vec<Vec<Result<ArmOutcome>>> = items.par_iter().map(|it| run_arms(it, &cfg, &arms, filter_len)).collect();
    let mut failures = Vec::new();
    let mut out = Vec::new();
    for (pi, (name, sys, reference)) in pairs.iter().enumerate() {
        let (mut sum, mut count, mut max_d, mut max_m, mut mixtures) = (0.0, 0usize, 0.0f64, 0.0f64, 0usize);
        for (it, o) in items.iter().zip(&outcomes) {
            match (&o[slots[pi].0], &o[slots[pi].1]) {
                (Ok(a), Ok(b)) => {
                    mixtures += 1;
                    for (x, y) in a.sdri.iter().zip(&b.sdri) {
                        let d = (x - y).abs();
                        sum += d;
                        count += 1;
                        max_d = max_d.max(d);
                    }
                    max_m = max_m.max(max_mask_diff(&a.raw_masks, &b.raw_masks));
                }
                (a, b) => {
                    for (arm, r) in [(sys, a), (reference, b)] {
                        if let Err(e) = r {
                            failures.push(MixtureFailure {
                                mixture: it.id.clone(),
                                arm: arm.name.clone(),
                                error: e.to_string(),
                            });
                        }
                    }
                }
            }
        }
        out.push(RecoveryArm {
            name: (*name).into(),
            system: sys.name.clone(),
            reference: reference.name.clone(),
            mixtures,
            mean_abs_sdri_diff: if count > 0 { sum / count as f64 } else { f64::NAN },
            max_abs_sdri_diff: max_d,
            max_mask_diff: max_m,
        });
    }
    Ok(RecoveryReport {
        arms: out,
        failures,
        large_nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixgen::{desk_manifest, render_record};
    use crate::pipeline::separate;
    use crate::signal_io::StftConfig;

    fn small_config() -> SeparationConfig {
        let mut c = SeparationConfig::default();
        c.stft = StftConfig {
            window_length: 512,
            dft_length: 512,
            hop: 128,
            ..Default::default()
        };
        c.fit.max_outer_iters = 8;
        c.fit.seed = 3;
        c
    }

    fn items(count: usize, rt60: f64) -> Vec<MixtureItem> {
        let man = desk_manifest(count, Condition { m: 3, n: 2, rt60 }, 1.0, 21, "x");
        (0..count).map(|i| render_record(&man, i).unwrap().into()).collect()
    }

    #[test]
    fn nu_spec_parses_and_round_trips() {
        assert_eq!("M".parse::<NuSpec>().unwrap(), NuSpec::M);
        assert_eq!("inf".parse::<NuSpec>().unwrap(), NuSpec::Inf);
        assert_eq!("2.5".parse::<NuSpec>().unwrap(), NuSpec::Value(2.5));
        assert!("0".parse::<NuSpec>().is_err());
        assert!("x".parse::<NuSpec>().is_err());
        let v = vec![NuSpec::Value(1.0), NuSpec::M, NuSpec::Inf];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[1.0,"M","inf"]"#);
        assert_eq!(serde_json::from_str::<Vec<NuSpec>>(&s).unwrap(), v);
        assert_eq!(NuSpec::M.resolve(4), Nu::Finite(4.0));
    }

    #[test]
    fn shared_init_path_matches_standalone_separation() {
        let it = &items(1, 0.0)[0];
        let cfg = small_config();
        let arm = ArmSpec::cstmm(NuSpec::Value(1.0), ShapeKind::Full);
        let o = run_arms(it, &cfg, &[arm], 512).pop().unwrap().unwrap();
        let mut c2 = cfg.clone();
        c2.fit.nu = Nu::Finite(1.0);
        let direct = separate(&it.mixture, &c2).unwrap();
        let (raw, _) = (o.raw_masks, ());
        let aligned = crate::perm_align::apply_permutations(&raw, &direct.permutation).unwrap();
        assert_eq!(aligned.gamma, direct.masks.gamma);
    }

    #[test]
    fn sweep_pairs_arms_and_is_deterministic() {
        let its = items(3, 0.1);
        let cfg = small_config();
        let arms = [ArmSpec::cstmm(NuSpec::Value(1.0), ShapeKind::Full), ArmSpec::cstmm(NuSpec::M, ShapeKind::Full)];
        let r = sweep(&its, &cfg, &arms, None, 64).unwrap();
        assert_eq!(r.baseline.as_deref(), Some("nu=M"));
        assert_eq!(r.rows.len(), 3 * 2 * 2);
        assert_eq!(r.paired.len(), 1);
        assert_eq!(r.paired[0].n_pairs, 3);
        assert!(r.failures.is_empty());
        let r2 = sweep(&its, &cfg, &arms, None, 64).unwrap();
        assert_eq!(r, r2);

        let single = sweep(&its, &cfg, &arms[..1], None, 64).unwrap();
        assert!(single.paired.is_empty());
        assert_eq!(single.means.len(), 1);
    }

    #[test]
    fn recovery_cacg_arm_is_exact() {
        let its = items(2, 0.2);
        let r = recover(&its, &small_config(), RECOVERY_NU, false, 64).unwrap();
        let cacg = &r.arms[0];
        assert_eq!(cacg.mixtures, 2);
        assert!(cacg.max_mask_diff <= 1e-8, "{cacg:?}");
        assert!(cacg.mean_abs_sdri_diff <= 1e-6, "{cacg:?}");
        for a in &r.arms {
            assert!(a.mean_abs_sdri_diff.is_finite());
        }
    }
}
