use crate::config::{RunConfig, SNAPSHOT};
use crate::plot;
use anyhow::{bail, ensure, Context, Result};
use cstmm::evaluation::{sdri, write_csv, compute_sdr, Condition};
use cstmm::experiment::{self, MixtureFailure, MixtureItem, RecoveryReport, SweepReport};
use cstmm::mixgen::{load_dataset, load_manifest, materialize};
use cstmm::pipeline::{self, analyze, cacg_all_bins, finish, initial_masks, write_masks};
use cstmm::signal_io::{read_wav, write_wav, MultichannelWaveform, WavEncoding};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub enum ExitStatus {
    Clean,
    RecordFailures(usize),
}

fn status(failures: usize) -> ExitStatus {
    if failures == 0 {
        ExitStatus::Clean
    } else {
        ExitStatus::RecordFailures(failures)
    }
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// The config as it ran, minus its location, so a copy can be re-run elsewhere.
fn snapshot(cfg: &RunConfig, out: &Path) -> Result<RunConfig> {
    let mut snap = cfg.clone();
    snap.output_dir = None;
    let path = out.join(SNAPSHOT);
    std::fs::write(&path, snap.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(snap)
}

pub fn mix(manifest: &Path, out: &Path, seed: u64, sample_rate: u32) -> Result<ExitStatus> {
    let mut m = load_manifest(manifest)?;
    m.seed = seed;
    m.sample_rate = sample_rate;
    let entries = materialize(&m, out)?;
    println!("wrote {} mixtures to {}", entries.len(), out.display());
    Ok(ExitStatus::Clean)
}

#[derive(Debug, Serialize, Deserialize)]
struct SeparationSummary {
    version: String,
    input: PathBuf,
    model: String,
    sources: Vec<PathBuf>,
    masks: Option<PathBuf>,
    failed_bins: usize,
    skipped_bins: usize,
    epsilon: f64,
}

pub fn separate(input: &Path, cfg: &RunConfig, out: &Path, reference_cacg: bool) -> Result<ExitStatus> {
    let mixture = read_wav(input)?;
    let sep = cfg.separation(cfg.fit.sources, mixture.channels());
    ensure!(mixture.channels() >= 2, "need at least 2 channels, got {}", mixture.channels());
    let result = if reference_cacg {
        let (spec, obs) = analyze(&mixture, &sep)?;
        let inits = initial_masks(&obs, &sep.fit);
        let fits = cacg_all_bins(&obs, &sep.fit, &inits).map_err(|e| e.in_stage("fit"))?;
        finish(&spec, &obs, fits, &sep)?
    } else {
        pipeline::separate(&mixture, &sep)?
    };
    create_dir(out)?;
    let mut paths = Vec::new();
    for (k, s) in result.sources.iter().enumerate() {
        let mut x = s.channel(0).to_vec();
        x.resize(mixture.len(), 0.0);
        let p = out.join(format!("source_{k}.wav"));
        let rep = write_wav(&p, &MultichannelWaveform::from_channels(vec![x], mixture.sample_rate())?, WavEncoding::Float32)?;
        if rep.saturated() {
            log::warn!("{}: samples clipped", p.display());
        }
        paths.push(p);
    }
    let masks = if cfg.write_masks {
        let p = out.join("masks.cstmask");
        write_masks(&p, &result.masks)?;
        Some(p)
    } else {
        None
    };
    snapshot(cfg, out)?;
    write_json(
        &out.join("separation.json"),
        &SeparationSummary {
            version: env!("CARGO_PKG_VERSION").into(),
            input: input.to_path_buf(),
            model: if reference_cacg { "cacg".into() } else { format!("cstmm nu={}", cfg.nu) },
            sources: paths.clone(),
            masks,
            failed_bins: result.failed_bins(),
            skipped_bins: result.skipped_bins(),
            epsilon: result.epsilon,
        },
    )?;
    if result.failed_bins() > 0 {
        log::warn!("{} frequency bins fell back to uniform masks", result.failed_bins());
    }
    println!("wrote {} sources to {}", paths.len(), out.display());
    Ok(ExitStatus::Clean)
}

/// Loads every record; unreadable ones become failures.
fn load_items(cfg: &RunConfig) -> Result<(Vec<MixtureItem>, Vec<MixtureFailure>)> {
    let Some(dir) = &cfg.dataset else { bail!("no dataset: pass --dataset or set `dataset` in the config") };
    let entries = load_dataset(dir)?;
    let loaded: Vec<_> = entries.par_iter().map(|e| (e.id.clone(), MixtureItem::load(e))).collect();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in loaded {
        match r {
            Ok(it) => items.push(it),
            Err(e) => failures.push(MixtureFailure {
                mixture: id,
                arm: "load".into(),
                error: e.to_string(),
            }),
        }
    }
    Ok((items, failures))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport<R> {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub report: R,
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<ExitStatus> {
    let (items, mut failures) = load_items(cfg)?;
    let arms = cfg.sweep_arms();
    let base = cfg.separation(2, 2);
    let mut report: SweepReport = experiment::sweep(&items, &base, &arms, cfg.baseline.as_deref(), cfg.filter_len)?;
    failures.append(&mut report.failures);
    report.failures = failures;
    create_dir(out)?;
    let snap = snapshot(cfg, out)?;
    write_csv(out.join("mixtures.csv"), &report.rows)?;
    write_csv(out.join("means.csv"), &report.means)?;
    write_csv(out.join("conditions.csv"), &report.paired)?;
    write_csv(out.join("failures.csv"), &report.failures)?;
    let n_fail = report.failures.len();
    for c in &report.paired {
        println!(
            "M={} N={} RT60={}: {} {:.2} dB vs {} {:.2} dB, delta {:+.3} dB (SE {:.3}, p_holm {:.3e}, d_z {:+.2}, n={})",
            c.m, c.n, c.rt60, c.system_a, c.mean_sdri_a, c.system_b, c.mean_sdri_b, c.delta, c.se, c.p_holm, c.d_z, c.n_pairs
        );
    }
    if report.paired.is_empty() {
        for m in &report.means {
            println!("M={} N={} RT60={}: {} {:.2} dB over {} mixtures", m.m, m.n, m.rt60, m.system, m.mean_sdri, m.mixtures);
        }
    }
    write_json(
        &out.join("report.json"),
        &RunReport {
            version: env!("CARGO_PKG_VERSION").into(),
            command: "sweep".into(),
            config: snap,
            report,
        },
    )?;
    Ok(status(n_fail))
}

pub fn recover(cfg: &RunConfig, out: &Path) -> Result<ExitStatus> {
    let (items, mut failures) = load_items(cfg)?;
    let base = cfg.separation(2, 2);
    let mut report: RecoveryReport = experiment::recover(&items, &base, cfg.large_nu, cfg.hca_limits, cfg.filter_len)?;
    failures.append(&mut report.failures);
    report.failures = failures;
    create_dir(out)?;
    let snap = snapshot(cfg, out)?;
    write_csv(out.join("recovery.csv"), &report.arms)?;
    for a in &report.arms {
        println!(
            "{}: {} vs {} over {} mixtures: mean |dSDRi| {:.3e} dB, max |dSDRi| {:.3e} dB, max mask diff {:.3e}",
            a.name, a.system, a.reference, a.mixtures, a.mean_abs_sdri_diff, a.max_abs_sdri_diff, a.max_mask_diff
        );
    }
    let n_fail = report.failures.len();
    write_json(
        &out.join("report.json"),
        &RunReport {
            version: env!("CARGO_PKG_VERSION").into(),
            command: "recover".into(),
            config: snap,
            report,
        },
    )?;
    Ok(status(n_fail))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

fn mono(path: &Path) -> Result<Vec<f64>> {
    let w = read_wav(path)?;
    if w.channels() != 1 {
        log::warn!("{}: using channel 0 of {}", path.display(), w.channels());
    }
    Ok(w.channel(0).to_vec())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    estimate: String,
    reference: String,
    sdr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_sdr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sdri: Option<f64>,
}

pub fn eval(estimates: &Path, references: &Path, mixture: Option<&Path>, filter_len: usize, out: Option<&Path>) -> Result<ExitStatus> {
    let est_files = wav_files(estimates)?;
    let mut ref_files = wav_files(references)?;
    // a dataset record keeps its mixture next to the references
    if let Some(mp) = mixture.and_then(|m| m.canonicalize().ok()) {
        ref_files.retain(|p| p.canonicalize().ok().as_ref() != Some(&mp));
    }
    ensure!(
        est_files.len() == ref_files.len() && !ref_files.is_empty(),
        "{} estimate files vs {} reference files",
        est_files.len(),
        ref_files.len()
    );
    let est = est_files.iter().map(|p| mono(p)).collect::<Result<Vec<_>>>()?;
    let refs = ref_files.iter().map(|p| mono(p)).collect::<Result<Vec<_>>>()?;
    let name = |p: &PathBuf| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let rows: Vec<EvalRow> = match mixture {
        Some(mp) => {
            let mix = read_wav(mp)?.channel(0).to_vec();
            let r = sdri(&est, &refs, &mix, filter_len)?;
            (0..refs.len())
                .map(|k| EvalRow {
                    estimate: name(&est_files[r.pairing[k]]),
                    reference: name(&ref_files[k]),
                    sdr: r.sdr[k],
                    input_sdr: Some(r.input_sdr[k]),
                    sdri: Some(r.sdri[k]),
                })
                .collect()
        }
        None => {
            let r = compute_sdr(&est, &refs, filter_len)?;
            (0..refs.len())
                .map(|k| EvalRow {
                    estimate: name(&est_files[r.pairing[k]]),
                    reference: name(&ref_files[k]),
                    sdr: r.sdr[k],
                    input_sdr: None,
                    sdri: None,
                })
                .collect()
        }
    };
    match out {
        Some(p) => write_csv(p, &rows)?,
        None => {
            let mut w = csv_stdout();
            for r in &rows {
                w.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.estimate,
                    r.reference,
                    r.sdr,
                    r.input_sdr.map(|v| v.to_string()).unwrap_or_default(),
                    r.sdri.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            print!("{w}");
        }
    }
    Ok(ExitStatus::Clean)
}

fn csv_stdout() -> String {
    "estimate,reference,sdr,input_sdr,sdri\n".to_string()
}

pub fn plot(report: &Path, out: &Path) -> Result<ExitStatus> {
    let text = std::fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let run: RunReport<SweepReport> = serde_json::from_str(&text).with_context(|| format!("{} is not a sweep report", report.display()))?;
    let series = plot::series_from_means(&run.report.means, &run.config.sweep_arms());
    ensure!(!series.is_empty(), "report has no cSTMM arms to plot");
    let conditions: Vec<Condition> = run.report.means.iter().map(|m| Condition { m: m.m, n: m.n, rt60: m.rt60 }).collect();
    log::info!("plotting {} conditions", conditions.len());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(out, plot::render_svg(&series, "SDRi vs ν")).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(ExitStatus::Clean)
}
