//! Three-component waveform windows, the unit of detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar};

pub const CHANNEL_NAMES: [&str; 3] = ["E", "N", "Z"];
pub const DEFAULT_LENGTH: usize = 3001;
pub const DEFAULT_SAMPLE_RATE: f32 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Signal,
    Noise,
}

impl Label {
    pub fn is_signal(self) -> bool {
        matches!(self, Label::Signal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Signal => "signal",
            Label::Noise => "noise",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" => Ok(Label::Signal),
            "noise" => Ok(Label::Noise),
            other => Err(Error::InvalidInput(format!("unknown label `{other}`"))),
        }
    }
}

/// P and S arrival sample indices of an event window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Picks {
    pub p_time: usize,
    pub s_time: usize,
}

impl Picks {
    pub fn validate(&self, length: usize) -> Result<()> {
        if self.p_time < self.s_time && self.s_time < length {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "picks must satisfy 0 <= p ({}) < s ({}) < length ({length})",
                self.p_time, self.s_time
            )))
        }
    }
}

/// Generator parameters recorded alongside a synthetic window.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceMeta {
    pub p_amplitude: f64,
    pub s_amplitude: f64,
    pub p_freq: f64,
    pub s_freq: f64,
    pub azimuth: f64,
    pub background_sd: f64,
    pub transient: bool,
}

/// One E/N/Z waveform window with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub id: usize,
    pub samples: FeatureMap<f32>,
    pub sample_rate: f32,
    pub label: Label,
    pub picks: Option<Picks>,
    pub meta: Option<SourceMeta>,
}

impl Window {
    pub fn new(id: usize, samples: FeatureMap<f32>, label: Label, picks: Option<Picks>) -> Result<Self> {
        let w = Self {
            id,
            samples,
            sample_rate: DEFAULT_SAMPLE_RATE,
            label,
            picks,
            meta: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.channels() != 3 {
            return Err(Error::shape("window channels", 3, self.samples.channels()));
        }
        if !self.samples.is_finite() {
            return Err(Error::InvalidInput(format!("window {} has non-finite samples", self.id)));
        }
        match (self.label, self.picks) {
            (Label::Signal, Some(p)) => p.validate(self.len()),
            (Label::Noise, None) => Ok(()),
            (Label::Signal, None) => Err(Error::InvalidInput(format!(
                "signal window {} has no picks",
                self.id
            ))),
            (Label::Noise, Some(_)) => Err(Error::InvalidInput(format!(
                "noise window {} carries picks",
                self.id
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.length()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        self.samples.channel(c)
    }

    pub fn max_abs(&self) -> f32 {
        self.samples.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn to_map<T: Scalar>(&self) -> FeatureMap<T> {
        self.samples.cast()
    }

    pub fn with_samples(&self, samples: FeatureMap<f32>) -> Self {
        Self {
            samples,
            ..self.clone()
        }
    }
}
