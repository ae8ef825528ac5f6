//! SDRi-vs-ν curves as a standalone SVG (log ν axis, one line per condition).

use cstmm::experiment::{ArmMean, ArmModel, ArmSpec, NuSpec};
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 170.0;
const PAD_T: f64 = 24.0;
const PAD_B: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (ν, mean SDRi); ν = ∞ is drawn at the right edge.
    pub points: Vec<(f64, f64)>,
}

/// Groups per-condition arm means into curves. Arms that are not cSTMM
/// (the cACG reference) have no ν and are skipped.
pub fn series_from_means(means: &[ArmMean], arms: &[ArmSpec]) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for m in means {
        let Some(arm) = arms.iter().find(|a| a.name == m.system) else { continue };
        let ArmModel::Cstmm { nu, .. } = arm.model else { continue };
        let x = match nu {
            NuSpec::Value(v) => v,
            NuSpec::M => m.m as f64,
            NuSpec::Inf => f64::INFINITY,
        };
        if m.mixtures == 0 {
            continue;
        }
        let label = format!("M={} N={} RT60={}s", m.m, m.n, m.rt60);
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, m.mean_sdri)),
            None => out.push(Series { label, points: vec![(x, m.mean_sdri)] }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|k| k * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut v = Vec::new();
    while t <= hi + 1e-9 * step {
        v.push(t);
        t += step;
    }
    v
}

pub fn render_svg(series: &[Series], title: &str) -> String {
    let finite: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).filter(|x| x.is_finite()).collect();
    let has_inf = series.iter().any(|s| s.points.iter().any(|p| p.0.is_infinite()));
    let (mut lx0, mut lx1) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x.log10()), b.max(x.log10())));
    if !lx0.is_finite() {
        (lx0, lx1) = (0.0, 1.0);
    }
    if lx1 - lx0 < 1e-9 {
        lx0 -= 0.5;
        lx1 += 0.5;
    }
    let inf_pos = lx1 + 0.12 * (lx1 - lx0).max(1.0);
    let xmax = if has_inf { inf_pos } else { lx1 };
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|y| y.is_finite()).collect();
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let margin = ((y1 - y0) * 0.08).max(0.05);
    y0 -= margin;
    y1 += margin;

    let px = |lx: f64| PAD_L + (lx - lx0) / (xmax - lx0) * (W - PAD_L - PAD_R);
    let py = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);
    let xpos = |x: f64| if x.is_infinite() { px(inf_pos) } else { px(x.log10()) };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{}</text>"#, (PAD_L + W - PAD_R) / 2.0, escape(title));
    let (bx0, bx1, by0, by1) = (PAD_L, W - PAD_R, PAD_T, H - PAD_B);
    let _ = writeln!(s, r#"<rect x="{bx0}" y="{by0}" width="{}" height="{}" fill="none" stroke="black"/>"#, bx1 - bx0, by1 - by0);
    for t in nice_ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(s, r##"<line x1="{bx0}" y1="{y:.2}" x2="{bx1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{t}</text>"##, bx0 - 6.0, y + 4.0);
    }
    let mut e = lx0.ceil() as i32;
    while (e as f64) <= lx1 + 1e-9 {
        let x = px(e as f64);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{by0}" x2="{x:.2}" y2="{by1}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##, by1 + 16.0, fmt_pow(e));
        e += 1;
    }
    if has_inf {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">∞</text>"#, px(inf_pos), by1 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">ν</text>"#, (bx0 + bx1) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">mean SDRi [dB]</text>"#, (by0 + by1) / 2.0);
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|(x, y)| format!("{:.2},{:.2}", xpos(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for (x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, xpos(*x), py(*y));
        }
        let ly = PAD_T + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            bx1 + 10.0,
            bx1 + 30.0,
            bx1 + 36.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_pow(e: i32) -> String {
    match e {
        0 => "1".into(),
        1 => "10".into(),
        _ => format!("1e{e}"),
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
