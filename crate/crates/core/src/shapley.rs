//! Exact channel-level Shapley attribution.
//!
//! Each of the E, N, Z channels is a player. A coalition keeps its channels
//! and replaces the others with a baseline; its value is the time-max class
//! probability of the masked window. With three players all eight coalitions
//! are evaluated and the attributions follow in closed form.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{detection_score, Model, Phase};
use crate::tensor::{FeatureMap, Scalar};
use crate::window::{Label, Window, CHANNEL_NAMES};

/// Replacement for dropped channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Zeros,
    ChannelMean,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" | "zero" => Ok(Baseline::Zeros),
            "mean" | "channel_mean" => Ok(Baseline::ChannelMean),
            other => Err(Error::InvalidInput(format!("unknown baseline `{other}` (zeros or mean)"))),
        }
    }
}

/// Keep/drop flags for (E, N, Z), packed as `4·m_E + 2·m_N + m_Z` so that
/// index 0b100 is the E-only coalition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mask(pub u8);

impl Mask {
    pub const FULL: Mask = Mask(0b111);
    pub const EMPTY: Mask = Mask(0);

    pub fn new(e: bool, n: bool, z: bool) -> Self {
        Mask((e as u8) << 2 | (n as u8) << 1 | z as u8)
    }

    pub fn keeps(self, channel: usize) -> bool {
        self.0 & (1 << (2 - channel)) != 0
    }

    pub fn all() -> impl Iterator<Item = Mask> {
        (0..8u8).map(Mask)
    }
}

/// Produce a window whose dropped channels are replaced by the baseline.
pub fn mask_coalition(window: &Window, mask: Mask, baseline: Baseline) -> Window {
    if mask == Mask::FULL {
        return window.clone();
    }
    let mut s = window.samples.clone();
    for c in 0..3 {
        if mask.keeps(c) {
            continue;
        }
        let ch = s.channel_mut(c);
        let fill = match baseline {
            Baseline::Zeros => 0.0,
            Baseline::ChannelMean => (ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64) as f32,
        };
        ch.iter_mut().for_each(|v| *v = fill);
    }
    window.with_samples(s)
}

/// Anything that maps a three-channel window to per-class time-max scores.
pub trait ClassScorer: Sync {
    /// Scores in class order N, P, S.
    fn class_scores(&self, input: &FeatureMap<f32>) -> Result<[f64; 3]>;
}

impl<T: Scalar> ClassScorer for Model<T> {
    fn class_scores(&self, input: &FeatureMap<f32>) -> Result<[f64; 3]> {
        let probs = self.predict(&input.cast())?;
        Ok([Phase::N, Phase::P, Phase::S].map(|c| detection_score(&probs, c).to_f64().unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionValues {
    /// Indexed by [`Mask`].
    pub v: [f64; 8],
    pub class: Phase,
}

impl CoalitionValues {
    pub fn get(&self, e: u8, n: u8, z: u8) -> f64 {
        self.v[Mask::new(e != 0, n != 0, z != 0).0 as usize]
    }
}

/// Coalition values for both P and S from the same eight forward passes.
pub fn coalition_values_pair(
    scorer: &impl ClassScorer,
    window: &Window,
    baseline: Baseline,
) -> Result<(CoalitionValues, CoalitionValues)> {
    let mut p = [0.0; 8];
    let mut s = [0.0; 8];
    for mask in Mask::all() {
        let masked = mask_coalition(window, mask, baseline);
        let scores = scorer.class_scores(&masked.samples)?;
        p[mask.0 as usize] = scores[Phase::P.channel()];
        s[mask.0 as usize] = scores[Phase::S.channel()];
    }
    Ok((
        CoalitionValues { v: p, class: Phase::P },
        CoalitionValues { v: s, class: Phase::S },
    ))
}

pub fn coalition_values(
    scorer: &impl ClassScorer,
    window: &Window,
    class: Phase,
    baseline: Baseline,
) -> Result<CoalitionValues> {
    let mut v = [0.0; 8];
    for mask in Mask::all() {
        let scores = scorer.class_scores(&mask_coalition(window, mask, baseline).samples)?;
        v[mask.0 as usize] = scores[class.channel()];
    }
    Ok(CoalitionValues { v, class })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Signed attributions for E, N, Z.
    pub phi: [f64; 3],
    pub class: Phase,
}

impl Attribution {
    pub fn abs(&self) -> [f64; 3] {
        self.phi.map(f64::abs)
    }

    /// Channel with the largest |φ|, first in E, N, Z order on ties.
    pub fn dominant(&self) -> usize {
        let a = self.abs();
        let mut best = 0;
        for c in 1..3 {
            if a[c] > a[best] {
                best = c;
            }
        }
        best
    }
}

/// Three-player Shapley values with weights 1/3, 1/6, 1/6, 1/3.
pub fn shapley_from_values(values: &CoalitionValues) -> Attribution {
    let v = |m: &str| {
        let b = m.as_bytes();
        values.get(b[0] - b'0', b[1] - b'0', b[2] - b'0')
    };
    let third = 1.0 / 3.0;
    let sixth = 1.0 / 6.0;
    let phi_e = third * (v("100") - v("000"))
        + sixth * (v("110") - v("010"))
        + sixth * (v("101") - v("001"))
        + third * (v("111") - v("011"));
    let phi_n = third * (v("010") - v("000"))
        + sixth * (v("110") - v("100"))
        + sixth * (v("011") - v("001"))
        + third * (v("111") - v("101"));
    let phi_z = third * (v("001") - v("000"))
        + sixth * (v("101") - v("100"))
        + sixth * (v("011") - v("010"))
        + third * (v("111") - v("110"));
    Attribution {
        phi: [phi_e, phi_n, phi_z],
        class: values.class,
    }
}

/// Everything the gate and reports need about one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowExplanation {
    pub window_id: usize,
    pub label: Label,
    pub baseline: Baseline,
    pub values_p: CoalitionValues,
    pub values_s: CoalitionValues,
    pub phi_p: Attribution,
    pub phi_s: Attribution,
    /// `max(score(P), score(S))` of the unmasked window.
    pub event_prob: f64,
}

impl WindowExplanation {
    pub fn s6(&self) -> f64 {
        crate::gate::s6(&self.phi_p, &self.phi_s)
    }
}

pub fn explain_window(scorer: &impl ClassScorer, window: &Window, baseline: Baseline) -> Result<WindowExplanation> {
    let (values_p, values_s) = coalition_values_pair(scorer, window, baseline)?;
    let full = Mask::FULL.0 as usize;
    Ok(WindowExplanation {
        window_id: window.id,
        label: window.label,
        baseline,
        event_prob: values_p.v[full].max(values_s.v[full]),
        phi_p: shapley_from_values(&values_p),
        phi_s: shapley_from_values(&values_s),
        values_p,
        values_s,
    })
}

/// Explain a batch in parallel; results keep the input order.
pub fn explain_batch(scorer: &impl ClassScorer, windows: &[Window], baseline: Baseline) -> Result<Vec<WindowExplanation>> {
    windows
        .par_iter()
        .map(|w| explain_window(scorer, w, baseline))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelImportance {
    pub component: String,
    pub mean_abs: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Percentage of windows where this channel has the largest |φ|.
    pub pct_dominant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceStats {
    pub class: Phase,
    pub population: String,
    pub n: usize,
    pub channels: Vec<ChannelImportance>,
    /// Per-window |φ| for E, N, Z, for histogram and violin products.
    pub abs_phi: Vec<[f64; 3]>,
}

const Z_95: f64 = 1.96;

/// Mean |φ|, normal-approximation 95% CI and dominance frequency per channel.
pub fn importance_stats(attributions: &[Attribution], class: Phase, population: &str) -> Result<ImportanceStats> {
    if attributions.is_empty() {
        return Err(Error::Empty("attribution batch"));
    }
    let n = attributions.len();
    let abs_phi: Vec<[f64; 3]> = attributions.iter().map(Attribution::abs).collect();
    let mut dominant = [0usize; 3];
    for a in attributions {
        dominant[a.dominant()] += 1;
    }
    let channels = (0..3)
        .map(|c| {
            let mean = abs_phi.iter().map(|a| a[c]).sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (abs_phi.iter().map(|a| (a[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let half = Z_95 * sd / (n as f64).sqrt();
            ChannelImportance {
                component: CHANNEL_NAMES[c].to_string(),
                mean_abs: mean,
                ci_lo: mean - half,
                ci_hi: mean + half,
                pct_dominant: 100.0 * dominant[c] as f64 / n as f64,
            }
        })
        .collect();
    Ok(ImportanceStats {
        class,
        population: population.to_string(),
        n,
        channels,
        abs_phi,
    })
}

pub fn batch_importance(
    scorer: &impl ClassScorer,
    windows: &[Window],
    class: Phase,
    population: &str,
    baseline: Baseline,
) -> Result<ImportanceStats> {
    if windows.is_empty() {
        return Err(Error::Empty("window batch"));
    }
    let atts = windows
        .par_iter()
        .map(|w| coalition_values(scorer, w, class, baseline).map(|v| shapley_from_values(&v)))
        .collect::<Result<Vec<_>>>()?;
    importance_stats(&atts, class, population)
}

#[derive(Serialize)]
struct ImportanceRow<'a> {
    class: String,
    component: &'a str,
    mean_abs_phi: f64,
    ci_lo: f64,
    ci_hi: f64,
    pct_dominant: f64,
    population: &'a str,
    n: usize,
}

/// Summary table, one row per (class, population, component).
pub fn write_importance_csv(path: impl AsRef<Path>, stats: &[ImportanceStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stats {
        for c in &s.channels {
            w.serialize(ImportanceRow {
                class: s.class.to_string(),
                component: &c.component,
                mean_abs_phi: c.mean_abs,
                ci_lo: c.ci_lo,
                ci_hi: c.ci_hi,
                pct_dominant: c.pct_dominant,
                population: &s.population,
                n: s.n,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raw per-window |φ| table: `window, class, population, abs_E, abs_N, abs_Z`.
pub fn write_abs_phi_csv(path: impl AsRef<Path>, stats: &[ImportanceStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window", "class", "population", "abs_E", "abs_N", "abs_Z"])?;
    for s in stats {
        for (i, a) in s.abs_phi.iter().enumerate() {
            w.write_record([
                i.to_string(),
                s.class.to_string(),
                s.population.clone(),
                a[0].to_string(),
                a[1].to_string(),
                a[2].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
