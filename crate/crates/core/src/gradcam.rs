//! Gradient-weighted class activation maps over time.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{detection_score, score_cotangent, LayerId, Model, Phase};
use crate::plot::escape;
use crate::tensor::{interp_linear, Scalar};
use crate::window::{Picks, Window, CHANNEL_NAMES};

/// Last convolution before the output projection.
pub const DEFAULT_LAYER: LayerId = LayerId::Merge(0);

#[derive(Clone, Debug, PartialEq)]
pub struct GradCam {
    pub layer: LayerId,
    pub class: Phase,
    /// Detection score the map explains.
    pub score: f64,
    /// Per-channel weights: time-mean of the score gradient.
    pub alphas: Vec<f64>,
    /// ReLU of the weighted feature sum at the layer's own resolution.
    pub coarse: Vec<f64>,
    /// `coarse` resampled to the input length.
    pub heatmap: Vec<f64>,
}

impl GradCam {
    /// Heatmap scaled to a peak of one; an all-zero map stays zero.
    pub fn normalized(&self) -> Vec<f64> {
        let peak = self.heatmap.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            self.heatmap.iter().map(|v| v / peak).collect()
        } else {
            self.heatmap.clone()
        }
    }
}

/// Combine per-channel weights with feature maps: `ReLU(Σ_k α_k A_k)`.
pub fn weighted_map(alphas: &[f64], features: &[Vec<f64>]) -> Vec<f64> {
    let len = features.first().map_or(0, Vec::len);
    (0..len)
        .map(|t| {
            alphas
                .iter()
                .zip(features)
                .map(|(a, f)| a * f[t])
                .sum::<f64>()
                .max(0.0)
        })
        .collect()
}

pub fn gradcam<T: Scalar>(model: &Model<T>, window: &Window, class: Phase, layer: LayerId) -> Result<GradCam> {
    let idx = model.layer_index(layer)?;
    let trace = model.forward_window(window)?;
    let grads = model.backward(&trace, &score_cotangent(&trace.probs, class))?;
    let a = &trace.outputs[idx];
    let g = &grads.features[idx];
    if a.length() < 1 {
        return Err(Error::InvalidLayer(format!("layer {layer} has no time axis")));
    }
    let to_f64 = |c: &[T]| c.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect::<Vec<f64>>();
    let alphas: Vec<f64> = (0..g.channels())
        .map(|c| to_f64(g.channel(c)).iter().sum::<f64>() / g.length() as f64)
        .collect();
    let features: Vec<Vec<f64>> = (0..a.channels()).map(|c| to_f64(a.channel(c))).collect();
    let coarse = weighted_map(&alphas, &features);
    let heatmap = interp_linear(&coarse, window.len());
    Ok(GradCam {
        layer,
        class,
        score: detection_score(&trace.probs, class).to_f64().unwrap_or(f64::NAN),
        alphas,
        coarse,
        heatmap,
    })
}

/// Largest fraction of total heat inside any contiguous span of `span` samples.
/// A diffuse map scores near `span / len`, a focused one near 1.
pub fn peak_window_fraction(heatmap: &[f64], span: usize) -> f64 {
    let total: f64 = heatmap.iter().sum();
    if total <= 0.0 || heatmap.is_empty() {
        return 0.0;
    }
    let span = span.clamp(1, heatmap.len());
    let mut acc: f64 = heatmap[..span].iter().sum();
    let mut best = acc;
    for t in span..heatmap.len() {
        acc += heatmap[t] - heatmap[t - span];
        best = best.max(acc);
    }
    best / total
}

/// Fraction of the top-decile heat that lies within `tolerance` samples of
/// either pick.
pub fn top_decile_near_picks(heatmap: &[f64], picks: &Picks, tolerance: usize) -> f64 {
    let mut sorted: Vec<f64> = heatmap.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = heatmap.len().div_ceil(10).max(1);
    if sorted[0] <= 0.0 {
        return 0.0;
    }
    // ties at zero are not heat
    let cut = sorted[k - 1].max(f64::MIN_POSITIVE);
    let near = |t: usize| t.abs_diff(picks.p_time) <= tolerance || t.abs_diff(picks.s_time) <= tolerance;
    let (mut hit, mut total) = (0.0, 0.0);
    for (t, &v) in heatmap.iter().enumerate() {
        if v >= cut {
            total += v;
            if near(t) {
                hit += v;
            }
        }
    }
    hit / total
}

#[derive(Serialize)]
struct HeatRow {
    sample_index: usize,
    amplitude_e: f32,
    amplitude_n: f32,
    amplitude_z: f32,
    heatmap: f64,
}

pub fn write_csv(path: impl AsRef<Path>, window: &Window, cam: &GradCam) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (t, &h) in cam.heatmap.iter().enumerate() {
        w.serialize(HeatRow {
            sample_index: t,
            amplitude_e: window.channel(0)[t],
            amplitude_n: window.channel(1)[t],
            amplitude_z: window.channel(2)[t],
            heatmap: h,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Three stacked traces with the normalized heatmap as background shading.
pub fn render_svg(window: &Window, cam: &GradCam) -> String {
    const W: f64 = 900.0;
    const ROW: f64 = 120.0;
    const LEFT: f64 = 40.0;
    let len = window.len().max(2);
    let heat = cam.normalized();
    let x = |t: usize| LEFT + (W - LEFT - 10.0) * t as f64 / (len - 1) as f64;
    let height = 30.0 + 3.0 * ROW;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="18" text-anchor="middle">window {} Grad-CAM, class {}, layer {}</text>"#,
        W / 2.0,
        window.id,
        cam.class,
        cam.layer
    );
    // shade in bins to keep the file small
    let bins = 300.min(len);
    let per = len as f64 / bins as f64;
    for b in 0..bins {
        let (lo, hi) = ((b as f64 * per) as usize, (((b + 1) as f64 * per) as usize).min(len));
        let v = heat[lo..hi.max(lo + 1).min(len)].iter().cloned().fold(0.0, f64::max);
        if v > 0.01 {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="30" width="{:.2}" height="{:.0}" fill="red" fill-opacity="{:.3}"/>"#,
                x(lo),
                (x(hi.min(len - 1)) - x(lo)).max(0.5),
                3.0 * ROW,
                0.5 * v
            );
        }
    }
    for c in 0..3 {
        let data = window.channel(c);
        let peak = data.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::EPSILON);
        let mid = 30.0 + ROW * (c as f64 + 0.5);
        let step = (len / 1500).max(1);
        let pts: Vec<String> = (0..data.len())
            .step_by(step)
            .map(|t| format!("{:.1},{:.1}", x(t), mid - 0.45 * ROW * (data[t] / peak) as f64))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="0.6"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{}</text>"#, mid + 4.0, escape(CHANNEL_NAMES[c]));
    }
    if let Some(p) = window.picks {
        for (t, col) in [(p.p_time, "blue"), (p.s_time, "green")] {
            let _ = writeln!(
                s,
                r#"<line x1="{0:.1}" x2="{0:.1}" y1="30" y2="{1:.0}" stroke="{col}" stroke-dasharray="4 3"/>"#,
                x(t),
                30.0 + 3.0 * ROW
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
