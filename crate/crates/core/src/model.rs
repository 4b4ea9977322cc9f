//! Fixed-topology 1D encoder-decoder phase picker.
//!
//! Layout for `S` stages and widths `w_0..w_S`:
//!
//! ```text
//! input (3) -> entry conv (w0) -> down_0 .. down_{S-1}  (stride-s convs)
//!                                         |
//! up_{k}: deconv back to the level-k length, concat with the level-k
//!         encoder map, merge_k conv (2 w_k -> w_k)
//!                                         |
//! output conv (w0 -> 3, kernel 1) -> softmax over N, P, S
//! ```
//!
//! Every layer except `output` is followed by a ReLU.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv1d, conv1d_adjoint, relu, relu_adjoint, softmax_adjoint, softmax_classes, transposed_conv1d,
    transposed_conv1d_adjoint, ConvParams, FeatureMap, ParamGrads, Scalar, CLASS_COUNT,
};
use crate::window::Window;

/// Initial noise-class logit offset, `ln(0.98 / 0.01)`.
const OUTPUT_NOISE_BIAS: f64 = 4.58;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_length: usize,
    pub input_channels: usize,
    pub class_count: usize,
    pub stage_count: usize,
    pub kernel_size: usize,
    pub stage_stride: usize,
    pub channel_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_length: 3001,
            input_channels: 3,
            class_count: 3,
            stage_count: 4,
            kernel_size: 7,
            stage_stride: 4,
            channel_widths: vec![8, 11, 16, 22, 32],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks: 64 samples, stride 2.
    pub fn toy() -> Self {
        Self {
            input_length: 64,
            stage_stride: 2,
            channel_widths: vec![4, 6, 8, 10, 12],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_channels != 3 {
            return bad(format!("input_channels must be 3, got {}", self.input_channels));
        }
        if self.class_count != CLASS_COUNT {
            return bad(format!("class_count must be 3, got {}", self.class_count));
        }
        if self.stage_count == 0 {
            return bad("stage_count must be at least 1".into());
        }
        if self.channel_widths.len() != self.stage_count + 1 {
            return bad(format!(
                "channel_widths needs {} entries for {} stages, got {}",
                self.stage_count + 1,
                self.stage_count,
                self.channel_widths.len()
            ));
        }
        if self.channel_widths.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.stage_stride < 2 {
            return bad(format!("stage_stride must be at least 2, got {}", self.stage_stride));
        }
        let min_len = (self.stage_stride as u128).saturating_pow(self.stage_count as u32);
        if (self.input_length as u128) < min_len {
            return bad(format!(
                "input_length {} is shorter than stride^stages = {min_len}",
                self.input_length
            ));
        }
        Ok(())
    }

    /// Encoder lengths from the input down to the bottleneck.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut v = vec![self.input_length];
        for _ in 0..self.stage_count {
            let l = *v.last().unwrap();
            v.push(l.div_ceil(self.stage_stride));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerId {
    Entry,
    Down(usize),
    Up(usize),
    Merge(usize),
    Output,
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Entry => write!(f, "entry"),
            LayerId::Down(k) => write!(f, "down{k}"),
            LayerId::Up(k) => write!(f, "up{k}"),
            LayerId::Merge(k) => write!(f, "merge{k}"),
            LayerId::Output => write!(f, "output"),
        }
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let level = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.parse::<usize>().ok());
        match s {
            "entry" => Ok(LayerId::Entry),
            "output" => Ok(LayerId::Output),
            _ => level("down")
                .map(LayerId::Down)
                .or_else(|| level("up").map(LayerId::Up))
                .or_else(|| level("merge").map(LayerId::Merge))
                .ok_or_else(|| Error::InvalidLayer(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Transposed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub id: LayerId,
    pub kind: LayerKind,
    pub params: ConvParams<T>,
}

/// Output class channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    N,
    P,
    S,
}

impl Phase {
    pub fn channel(self) -> usize {
        match self {
            Phase::N => 0,
            Phase::P => 1,
            Phase::S => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::N => "N",
            Phase::P => "P",
            Phase::S => "S",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "N" => Ok(Phase::N),
            "P" => Ok(Phase::P),
            "S" => Ok(Phase::S),
            _ => Err(Error::InvalidInput(format!("unknown class `{s}` (expected P, S or N)"))),
        }
    }
}

/// Activations retained from one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace<T> {
    pub input: FeatureMap<T>,
    /// Output of every layer in model order (post-ReLU, logits for `output`).
    pub outputs: Vec<FeatureMap<T>>,
    pub probs: FeatureMap<T>,
}

/// Gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct GradientRecord<T> {
    pub params: Vec<ParamGrads<T>>,
    /// Gradient with respect to each layer's output, in model order.
    pub features: Vec<FeatureMap<T>>,
    pub input: FeatureMap<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<T>>,
    pub stage_lengths: Vec<usize>,
}

fn layer_order(stages: usize) -> Vec<LayerId> {
    let mut ids = vec![LayerId::Entry];
    ids.extend((0..stages).map(LayerId::Down));
    for k in (0..stages).rev() {
        ids.push(LayerId::Up(k));
        ids.push(LayerId::Merge(k));
    }
    ids.push(LayerId::Output);
    ids
}

impl<T: Scalar> Model<T> {
    /// Build the network with fan-in scaled uniform initialisation.
    pub fn assemble(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.kernel_size;
        let s = config.stage_stride;
        let w = &config.channel_widths;
        let mut layers = Vec::new();
        for id in layer_order(config.stage_count) {
            let (kind, in_ch, out_ch, kernel, stride) = match id {
                LayerId::Entry => (LayerKind::Conv, config.input_channels, w[0], k, 1),
                LayerId::Down(l) => (LayerKind::Conv, w[l], w[l + 1], k, s),
                LayerId::Up(l) => (LayerKind::Transposed, w[l + 1], w[l], k, s),
                LayerId::Merge(l) => (LayerKind::Conv, 2 * w[l], w[l], k, 1),
                LayerId::Output => (LayerKind::Conv, w[0], config.class_count, 1, 1),
            };
            let mut params = ConvParams::zeros(in_ch, out_ch, kernel, stride);
            let fan_in = match kind {
                LayerKind::Conv => (in_ch * kernel) as f64,
                // each transposed output sample sees about kernel / stride taps per channel
                LayerKind::Transposed => (in_ch * kernel) as f64 / stride as f64,
            };
            let gain = if id == LayerId::Output { 3.0 } else { 6.0 };
            let bound = (gain / fan_in).sqrt();
            for v in params.weights.iter_mut() {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
            if id == LayerId::Output {
                // start near the class prior: almost every sample is noise
                params.bias[Phase::N.channel()] = T::lit(OUTPUT_NOISE_BIAS);
            }
            layers.push(Layer { id, kind, params });
        }
        Ok(Self {
            stage_lengths: config.stage_lengths(),
            config,
            layers,
        })
    }

    pub fn from_parts(config: ModelConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        let reference = Model::<T>::assemble(config.clone())?;
        if reference.layers.len() != layers.len() {
            return Err(Error::shape("layer count", reference.layers.len(), layers.len()));
        }
        for (r, l) in reference.layers.iter().zip(&layers) {
            l.params.validate()?;
            let same = r.id == l.id
                && r.kind == l.kind
                && r.params.in_channels == l.params.in_channels
                && r.params.out_channels == l.params.out_channels
                && r.params.kernel_size == l.params.kernel_size
                && r.params.stride == l.params.stride;
            if !same {
                return Err(Error::InvalidConfig(format!("layer {} does not match the configured topology", r.id)));
            }
        }
        Ok(Self {
            stage_lengths: config.stage_lengths(),
            config,
            layers,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    id: l.id,
                    kind: l.kind,
                    params: l.params.cast(),
                })
                .collect(),
            stage_lengths: self.stage_lengths.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.parameter_count()).sum()
    }

    pub fn layer_index(&self, id: LayerId) -> Result<usize> {
        let s = self.config.stage_count;
        let idx = match id {
            LayerId::Entry => 0,
            LayerId::Down(k) if k < s => 1 + k,
            LayerId::Up(k) if k < s => 1 + s + 2 * (s - 1 - k),
            LayerId::Merge(k) if k < s => 2 + s + 2 * (s - 1 - k),
            LayerId::Output => 1 + 3 * s,
            other => return Err(Error::InvalidLayer(other.to_string())),
        };
        Ok(idx)
    }

    /// Index of the layer whose output is the level-`k` encoder map
    /// (`entry` for level 0, `down{k-1}` otherwise).
    fn encoder_index(&self, level: usize) -> usize {
        level
    }

    fn apply(&self, idx: usize, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let layer = &self.layers[idx];
        let y = match (layer.kind, layer.id) {
            (LayerKind::Transposed, LayerId::Up(k)) => {
                transposed_conv1d(input, &layer.params, self.stage_lengths[k])?
            }
            _ => conv1d(input, &layer.params)?,
        };
        Ok(if layer.id == LayerId::Output { y } else { relu(&y) })
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<ActivationTrace<T>> {
        let expected = (self.config.input_channels, self.config.input_length);
        if input.shape() != expected {
            return Err(Error::shape(
                "model input",
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", input.channels(), input.length()),
            ));
        }
        let mut outputs: Vec<FeatureMap<T>> = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let y = match layer.id {
                LayerId::Entry => self.apply(idx, input)?,
                LayerId::Down(_) | LayerId::Output | LayerId::Up(_) => {
                    let prev = &outputs[idx - 1];
                    self.apply(idx, prev)?
                }
                LayerId::Merge(k) => {
                    let cat = outputs[self.encoder_index(k)].concat_channels(&outputs[idx - 1])?;
                    self.apply(idx, &cat)?
                }
            };
            outputs.push(y);
        }
        let probs = softmax_classes(outputs.last().unwrap())?;
        Ok(ActivationTrace {
            input: input.clone(),
            outputs,
            probs,
        })
    }

    pub fn forward_window(&self, window: &Window) -> Result<ActivationTrace<T>> {
        self.forward(&window.to_map())
    }

    pub fn predict(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward(input)?.probs)
    }

    /// Input feeding layer `idx`, rebuilt from the trace.
    fn layer_input(&self, trace: &ActivationTrace<T>, idx: usize) -> Result<FeatureMap<T>> {
        Ok(match self.layers[idx].id {
            LayerId::Entry => trace.input.clone(),
            LayerId::Merge(k) => trace.outputs[self.encoder_index(k)].concat_channels(&trace.outputs[idx - 1])?,
            _ => trace.outputs[idx - 1].clone(),
        })
    }

    /// Backpropagate a cotangent on the class probabilities through a trace.
    pub fn backward(&self, trace: &ActivationTrace<T>, output_cotangent: &FeatureMap<T>) -> Result<GradientRecord<T>> {
        if trace.outputs.len() != self.layers.len()
            || trace
                .outputs
                .iter()
                .zip(&self.layers)
                .any(|(o, l)| o.channels() != l.params.out_channels)
        {
            return Err(Error::shape(
                "activation trace",
                format!("{} layers", self.layers.len()),
                format!("{} outputs", trace.outputs.len()),
            ));
        }
        if output_cotangent.shape() != trace.probs.shape() {
            return Err(Error::shape(
                "output cotangent",
                format!("{}x{}", trace.probs.channels(), trace.probs.length()),
                format!("{}x{}", output_cotangent.channels(), output_cotangent.length()),
            ));
        }
        let n = self.layers.len();
        let mut features: Vec<FeatureMap<T>> = trace
            .outputs
            .iter()
            .map(|o| FeatureMap::zeros(o.channels(), o.length()))
            .collect();
        let mut params: Vec<Option<ParamGrads<T>>> = vec![None; n];
        features[n - 1] = softmax_adjoint(&trace.probs, output_cotangent)?;
        let mut input_grad = FeatureMap::zeros(trace.input.channels(), trace.input.length());

        for idx in self.backward_order() {
            let layer = &self.layers[idx];
            let d_pre = if layer.id == LayerId::Output {
                features[idx].clone()
            } else {
                relu_adjoint(&trace.outputs[idx], &features[idx])
            };
            let x = self.layer_input(trace, idx)?;
            let (dx, g) = match layer.kind {
                LayerKind::Conv => conv1d_adjoint(&x, &layer.params, &d_pre)?,
                LayerKind::Transposed => transposed_conv1d_adjoint(&x, &layer.params, &d_pre)?,
            };
            params[idx] = Some(g);
            match layer.id {
                LayerId::Entry => input_grad = dx,
                LayerId::Merge(k) => {
                    let enc_ch = self.layers[self.encoder_index(k)].params.out_channels;
                    let (d_enc, d_up) = dx.split_channels(enc_ch);
                    let e = self.encoder_index(k);
                    features[e].add_assign(&d_enc);
                    features[idx - 1].add_assign(&d_up);
                }
                _ => features[idx - 1].add_assign(&dx),
            }
        }
        Ok(GradientRecord {
            params: params.into_iter().map(Option::unwrap).collect(),
            features,
            input: input_grad,
        })
    }

    /// Reverse topological order: decoder (output first), then encoder.
    fn backward_order(&self) -> Vec<usize> {
        (0..self.layers.len()).rev().collect()
    }

    pub fn layer(&self, id: LayerId) -> Result<&Layer<T>> {
        Ok(&self.layers[self.layer_index(id)?])
    }
}

/// Maximum over time of one class channel.
pub fn detection_score<T: Scalar>(probs: &FeatureMap<T>, class: Phase) -> T {
    probs
        .channel(class.channel())
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m })
}

/// `max(score(P), score(S))`.
pub fn event_score<T: Scalar>(probs: &FeatureMap<T>) -> T {
    detection_score(probs, Phase::P).max(detection_score(probs, Phase::S))
}

/// First time index attaining the class maximum.
pub fn argmax_time<T: Scalar>(probs: &FeatureMap<T>, class: Phase) -> usize {
    let ch = probs.channel(class.channel());
    let mut best = 0;
    for (t, &v) in ch.iter().enumerate() {
        if v > ch[best] {
            best = t;
        }
    }
    best
}

/// Cotangent of the time-max score: a unit spike at the argmax sample.
pub fn score_cotangent<T: Scalar>(probs: &FeatureMap<T>, class: Phase) -> FeatureMap<T> {
    let mut d = FeatureMap::zeros(probs.channels(), probs.length());
    d.set(class.channel(), argmax_time(probs, class), T::one());
    d
}
