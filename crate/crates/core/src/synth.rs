//! Synthetic three-component microseismic windows.
//!
//! Events carry a vertically polarised P arrival and a horizontally
//! polarised S arrival, each a wavelet followed by a short decaying coda, on
//! top of coloured Gaussian background noise. Noise windows are background
//! only, sometimes with a non-seismic transient (a spike or short burst on a
//! single channel). The transient model is a stand-in; field data would
//! have a richer zoo of disturbances.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::window::{Label, Picks, SourceMeta, Window, DEFAULT_LENGTH, DEFAULT_SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavelet {
    Ricker,
    DampedSine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub length: usize,
    pub sample_rate: f64,
    /// Allowed P pick range `[lo, hi]` in samples.
    pub p_window: (usize, usize),
    /// Allowed S minus P delay `[lo, hi]` in samples.
    pub sp_delay: (usize, usize),
    pub wavelet: Wavelet,
    /// Dominant wavelet frequency range in Hz.
    pub freq_range: (f64, f64),
    /// Z : horizontal amplitude ratio of the P arrival.
    pub p_polarization: f64,
    /// Horizontal : Z amplitude ratio of the S arrival.
    pub s_polarization: f64,
    pub p_amplitude: (f64, f64),
    /// S amplitude as a multiple of the P amplitude.
    pub s_to_p: (f64, f64),
    /// Coda amplitude relative to its phase, and e-folding time range in samples.
    pub coda_level: f64,
    pub coda_decay: (f64, f64),
    /// Background noise standard deviation range.
    pub background_sd: (f64, f64),
    pub transient_probability: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            sample_rate: DEFAULT_SAMPLE_RATE as f64,
            p_window: (300, 1500),
            sp_delay: (100, 900),
            wavelet: Wavelet::Ricker,
            freq_range: (5.0, 25.0),
            p_polarization: 3.0,
            s_polarization: 3.0,
            p_amplitude: (0.5, 1.5),
            s_to_p: (1.2, 2.5),
            coda_level: 0.3,
            coda_decay: (30.0, 120.0),
            background_sd: (0.03, 0.12),
            transient_probability: 0.3,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Same geometry with very little background noise.
    pub fn high_snr() -> Self {
        Self {
            background_sd: (0.005, 0.01),
            ..Self::default()
        }
    }

    /// Half-width of the wavelet in samples at the lowest frequency.
    pub fn wavelet_support(&self) -> usize {
        (self.sample_rate / self.freq_range.0).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.p_window.0 > self.p_window.1 || self.sp_delay.0 > self.sp_delay.1 || self.sp_delay.0 == 0 {
            return bad("p_window and sp_delay must be non-empty ranges with a positive delay".into());
        }
        let latest = self.p_window.1 + self.sp_delay.1 + self.wavelet_support();
        if latest >= self.length {
            return bad(format!(
                "latest S arrival plus wavelet support ({latest}) must fit in {} samples",
                self.length
            ));
        }
        if !(self.p_polarization > 1.0 && self.s_polarization > 1.0) {
            return bad("polarization ratios must exceed 1".into());
        }
        if !(self.freq_range.0 > 0.0 && self.freq_range.0 <= self.freq_range.1 && self.freq_range.1 < self.sample_rate / 2.0) {
            return bad(format!("invalid frequency range {:?}", self.freq_range));
        }
        let ranges = [self.p_amplitude, self.s_to_p, self.coda_decay, self.background_sd];
        if ranges.iter().any(|r| !(r.0 > 0.0 && r.0 <= r.1)) {
            return bad("amplitude, decay and noise ranges must be positive and ordered".into());
        }
        if !(0.0..=1.0).contains(&self.transient_probability) {
            return bad("transient_probability must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Split a base seed into independent per-item seeds (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..r.1)
    }
}

fn wavelet_value(kind: Wavelet, freq: f64, t_sec: f64) -> f64 {
    match kind {
        Wavelet::Ricker => {
            let a = (PI * freq * t_sec).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        }
        Wavelet::DampedSine => {
            if t_sec < 0.0 {
                0.0
            } else {
                (2.0 * PI * freq * t_sec).sin() * (-t_sec * freq * 1.5).exp() / 0.7
            }
        }
    }
}

/// Discrete wavelet centred on index `half`.
fn wavelet_kernel(kind: Wavelet, freq: f64, rate: f64, half: usize) -> Vec<f64> {
    (0..=2 * half)
        .map(|i| wavelet_value(kind, freq, (i as f64 - half as f64) / rate))
        .collect()
}

/// AR(1) Gaussian noise with unit marginal variance scaled to `sd`.
fn coloured_noise(rng: &mut impl Rng, len: usize, sd: f64, coeff: f64) -> Vec<f64> {
    let innov = (1.0 - coeff * coeff).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    (0..len)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = coeff * x + innov * e;
            sd * x
        })
        .collect()
}

/// One seismic phase: wavelet at `pick` plus an exponentially decaying coda
/// of wavelet-filtered noise, returned as a scalar trace to be projected
/// onto the components.
fn phase_trace(rng: &mut impl Rng, cfg: &GenConfig, pick: usize, freq: f64) -> Vec<f64> {
    let len = cfg.length;
    let half = (2.0 * cfg.sample_rate / freq).ceil() as usize;
    let kernel = wavelet_kernel(cfg.wavelet, freq, cfg.sample_rate, half);
    let decay = uniform(rng, cfg.coda_decay);
    let mut trace = vec![0.0; len];
    for (i, &k) in kernel.iter().enumerate() {
        let t = pick as isize + i as isize - half as isize;
        if (0..len as isize).contains(&t) {
            trace[t as usize] += k;
        }
    }
    // coda: white noise filtered by the wavelet, under an exponential envelope
    let coda_len = ((5.0 * decay) as usize).min(len - pick);
    let white: Vec<f64> = (0..coda_len + kernel.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    for n in 1..coda_len {
        let filtered: f64 = kernel.iter().enumerate().map(|(i, &k)| k * white[n + i]).sum::<f64>() / norm;
        trace[pick + n] += cfg.coda_level * filtered * (-(n as f64) / decay).exp();
    }
    trace
}

fn to_map(rows: [Vec<f64>; 3]) -> FeatureMap<f32> {
    let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
    let len = rows[0].len();
    FeatureMap::new(3, len, data).expect("three equal rows")
}

/// Remove each channel's mean, then divide all channels by the single largest
/// absolute value so inter-channel ratios survive and the peak is 1.
pub fn normalize(w: &Window) -> Result<Window> {
    let mut s = w.samples.clone();
    for c in 0..3 {
        let ch = s.channel_mut(c);
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
        ch.iter_mut().for_each(|v| *v = (*v as f64 - mean) as f32);
    }
    let peak = s.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::InvalidInput(format!(
            "window {} is all zero after demeaning and cannot be normalized",
            w.id
        )));
    }
    s.as_mut_slice().iter_mut().for_each(|v| *v /= peak);
    Ok(w.with_samples(s))
}

/// Synthesize a normalized event window.
pub fn make_event(rng: &mut impl Rng, cfg: &GenConfig) -> Result<Window> {
    cfg.validate()?;
    let len = cfg.length;
    let p_time = rng.gen_range(cfg.p_window.0..=cfg.p_window.1);
    let s_time = p_time + rng.gen_range(cfg.sp_delay.0..=cfg.sp_delay.1);
    let p_amp = uniform(rng, cfg.p_amplitude);
    let s_amp = p_amp * uniform(rng, cfg.s_to_p);
    let p_freq = uniform(rng, cfg.freq_range);
    // S energy sits at lower frequency than P
    let s_freq = (p_freq * rng.gen_range(0.5..0.9)).max(cfg.freq_range.0);
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let sd = uniform(rng, cfg.background_sd);
    let coeff = rng.gen_range(0.5..0.95);

    let p_trace = phase_trace(rng, cfg, p_time, p_freq);
    let s_trace = phase_trace(rng, cfg, s_time, s_freq);
    let p_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let s_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let p_h = p_amp / cfg.p_polarization;
    let s_z = s_amp / cfg.s_polarization;
    // radial P motion along the azimuth, transverse S motion across it
    let p_gain = [p_h * azimuth.sin(), p_h * azimuth.cos(), p_amp];
    let s_gain = [s_amp * azimuth.cos(), -s_amp * azimuth.sin(), s_z];

    let rows = [0, 1, 2].map(|c| {
        let bg = coloured_noise(rng, len, sd, coeff);
        (0..len)
            .map(|t| bg[t] + p_sign * p_gain[c] * p_trace[t] + s_sign * s_gain[c] * s_trace[t])
            .collect::<Vec<f64>>()
    });
    let mut w = Window::new(0, to_map(rows), Label::Signal, Some(Picks { p_time, s_time }))?;
    w.sample_rate = cfg.sample_rate as f32;
    w.meta = Some(SourceMeta {
        p_amplitude: p_amp,
        s_amplitude: s_amp,
        p_freq,
        s_freq,
        azimuth,
        background_sd: sd,
        transient: false,
    });
    normalize(&w)
}

/// Synthesize a normalized noise-only window.
pub fn make_noise(rng: &mut impl Rng, cfg: &GenConfig) -> Result<Window> {
    cfg.validate()?;
    let len = cfg.length;
    let sd = uniform(rng, cfg.background_sd);
    let coeff = rng.gen_range(0.5..0.95);
    let mut rows = [0, 1, 2].map(|_| coloured_noise(rng, len, sd, coeff));
    let transient = rng.gen_bool(cfg.transient_probability);
    if transient {
        let ch = rng.gen_range(0..3);
        let at = rng.gen_range(0..len);
        let amp = sd * rng.gen_range(4.0..20.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if rng.gen_bool(0.5) {
            // spike, one to three samples wide
            for t in at..(at + rng.gen_range(1..=3)).min(len) {
                rows[ch][t] += amp;
            }
        } else {
            let freq = rng.gen_range(20.0..40.0f64).min(cfg.sample_rate / 2.5);
            let half = (2.0 * cfg.sample_rate / freq).ceil() as usize;
            let kernel = wavelet_kernel(Wavelet::DampedSine, freq, cfg.sample_rate, half);
            for (i, &k) in kernel.iter().enumerate() {
                let t = at + i;
                if t < len {
                    rows[ch][t] += amp * k;
                }
            }
        }
    }
    let mut w = Window::new(0, to_map(rows), Label::Noise, None)?;
    w.sample_rate = cfg.sample_rate as f32;
    w.meta = Some(SourceMeta {
        background_sd: sd,
        transient,
        ..SourceMeta::default()
    });
    normalize(&w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Harmonic,
    Random,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Harmonic => "harmonic",
            NoiseKind::Random => "random",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "harmonic" => Ok(NoiseKind::Harmonic),
            "random" => Ok(NoiseKind::Random),
            other => Err(Error::InvalidInput(format!(
                "unknown noise kind `{other}` (expected harmonic or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub relative_amplitude: f64,
    /// Frequency range of harmonic noise in Hz; equal bounds fix the frequency.
    pub freq_range: (f64, f64),
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, relative_amplitude: f64, seed: u64) -> Self {
        Self {
            kind,
            relative_amplitude,
            freq_range: (5.0, 30.0),
            seed,
        }
    }

    /// Deterministic generator for the noise added to one window.
    pub fn rng_for(&self, window_id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, window_id as u64))
    }
}

/// Noise to be mixed into `w`, scaled so its peak is
/// `relative_amplitude × max|w|`.
pub fn noise_component(w: &Window, spec: &NoiseSpec, rng: &mut impl Rng) -> FeatureMap<f32> {
    let len = w.len();
    let rate = w.sample_rate as f64;
    let rows = [0, 1, 2].map(|_| match spec.kind {
        NoiseKind::Harmonic => {
            let f = uniform(rng, spec.freq_range);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (0..len)
                .map(|t| (2.0 * PI * f * t as f64 / rate + phase).sin())
                .collect::<Vec<f64>>()
        }
        NoiseKind::Random => (0..len).map(|_| StandardNormal.sample(rng)).collect(),
    });
    let peak = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = spec.relative_amplitude * w.max_abs() as f64;
    let scale = if peak > 0.0 { target / peak } else { 0.0 };
    to_map(rows.map(|r| r.into_iter().map(|v| v * scale).collect()))
}

/// Add scaled noise and re-normalize. Amplitude zero returns the window unchanged.
pub fn inject_noise(w: &Window, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<Window> {
    if spec.relative_amplitude == 0.0 {
        return Ok(w.clone());
    }
    if !(spec.relative_amplitude > 0.0 && spec.relative_amplitude.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "relative amplitude must be finite and non-negative, got {}",
            spec.relative_amplitude
        )));
    }
    let mut noisy = noise_component(w, spec, rng);
    noisy.add_assign(&w.samples);
    normalize(&w.with_samples(noisy))
}
