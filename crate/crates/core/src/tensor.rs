//! Minimal 1D numeric kernels with exact adjoints.
//!
//! Everything here works on [`FeatureMap`], a dense `channels × length` grid
//! stored channel-major. Strided convolutions use symmetric zero "same"
//! padding so that a length `L` input yields `ceil(L / stride)` outputs, with
//! output sample `p` centred on input sample `p * stride`.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type used by the kernels (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A `channels × length` grid of values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    length: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::InvalidInput(format!(
                "feature map needs at least one channel and one sample, got {channels}x{length}"
            )));
        }
        if data.len() != channels * length {
            return Err(Error::shape(
                "feature map data",
                channels * length,
                data.len(),
            ));
        }
        Ok(Self { channels, length, data })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            data: vec![T::zero(); channels * length],
        }
    }

    pub fn from_channels(rows: &[Vec<T>]) -> Result<Self> {
        let length = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != length) {
            return Err(Error::InvalidInput("ragged channel lengths".into()));
        }
        Self::new(rows.len(), length, rows.concat())
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let l = self.length;
        &mut self.data[c * l..(c + 1) * l]
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> T {
        self.data[c * self.length + t]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: T) {
        self.data[c * self.length + t] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            length: self.length,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            length: self.length,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap())
            .sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stack the channels of `self` on top of those of `other`.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.length != other.length {
            return Err(Error::shape("channel concat", self.length, other.length));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            length: self.length,
            data,
        })
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): split after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let cut = first * self.length;
        (
            Self {
                channels: first,
                length: self.length,
                data: self.data[..cut].to_vec(),
            },
            Self {
                channels: self.channels - first,
                length: self.length,
                data: self.data[cut..].to_vec(),
            },
        )
    }
}

/// Weights and bias of a 1D convolution or transposed convolution.
///
/// Weights are laid out `out × in × kernel` for both layer kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let p = Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            weights: vec![T::zero(); out_channels * in_channels * kernel_size],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(
                "stride and channel counts must be at least 1".into(),
            ));
        }
        let expected = self.out_channels * self.in_channels * self.kernel_size;
        if self.weights.len() != expected {
            return Err(Error::shape("conv weights", expected, self.weights.len()));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape("conv bias", self.out_channels, self.bias.len()));
        }
        Ok(())
    }

    #[inline]
    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, j: usize) -> T {
        self.weights[(o * self.in_channels + i) * self.kernel_size + j]
    }

    #[inline]
    pub fn weight_mut(&mut self, o: usize, i: usize, j: usize) -> &mut T {
        &mut self.weights[(o * self.in_channels + i) * self.kernel_size + j]
    }

    /// Length produced by [`conv1d`] for an input of `len` samples.
    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    /// Target lengths accepted by [`transposed_conv1d`] for an input of `len` samples.
    pub fn transposed_len_range(&self, len: usize) -> (usize, usize) {
        (self.stride * (len - 1) + 1, self.stride * len + self.kernel_size)
    }

    /// Parameters of the transposed layer that is the exact adjoint of this
    /// convolution (in/out swapped, zero bias).
    pub fn adjoint_params(&self) -> Self {
        let mut t = Self::zeros(self.out_channels, self.in_channels, self.kernel_size, self.stride);
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for j in 0..self.kernel_size {
                    *t.weight_mut(i, o, j) = self.weight(o, i, j);
                }
            }
        }
        t
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        let c = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        ConvParams {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            weights: self.weights.iter().map(c).collect(),
            bias: self.bias.iter().map(c).collect(),
        }
    }
}

/// Gradients with respect to a layer's weights and bias, same layout as [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(p: &ConvParams<T>) -> Self {
        Self {
            weights: vec![T::zero(); p.weights.len()],
            bias: vec![T::zero(); p.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.bias)
    }
}

/// Weight addressing for the shared sliding-window kernels: the weight
/// coupling "wide-side" channel `o` to "narrow-side" channel `i` at tap `j`
/// lives at `o * o_stride + i * i_stride + j`.
#[derive(Clone, Copy)]
struct Taps {
    o_stride: usize,
    i_stride: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Taps {
    /// Tap `j` reads narrow-side sample `p·s + j − pad`, which is sample
    /// `p + offset` of polyphase row `phase`.
    #[inline]
    fn phase_offset(&self, j: usize) -> (usize, isize) {
        let d = j as isize - self.pad as isize;
        let s = self.stride as isize;
        (d.rem_euclid(s) as usize, d.div_euclid(s))
    }

    /// Output positions `p < out_len` whose source index `p + offset` lies in `[0, rows)`.
    #[inline]
    fn valid(&self, offset: isize, rows: usize, out_len: usize) -> std::ops::Range<usize> {
        let lo = (-offset).max(0) as usize;
        let hi = (rows as isize - offset).clamp(0, out_len as isize) as usize;
        lo..hi.max(lo)
    }
}

/// Polyphase split of a narrow-side map: row `i·s + r` holds samples
/// `r, r + s, r + 2s, ..` of channel `i`, zero-filled to `ceil(L / s)`.
/// Samples past the end read as zero, matching the zero padding.
fn split_phases<T: Scalar>(x: &FeatureMap<T>, s: usize) -> (std::borrow::Cow<'_, [T]>, usize) {
    if s == 1 {
        return (std::borrow::Cow::Borrowed(&x.data), x.length);
    }
    let lq = x.length.div_ceil(s);
    let mut buf = vec![T::zero(); x.channels * s * lq];
    for i in 0..x.channels {
        for (t, &v) in x.channel(i).iter().enumerate() {
            buf[(i * s + t % s) * lq + t / s] = v;
        }
    }
    (std::borrow::Cow::Owned(buf), lq)
}

/// `y[o][p] += Σ_i Σ_j w(o,i,j) · x[i][p·s + j − pad]`
fn gather<T: Scalar>(x: &FeatureMap<T>, w: &[T], taps: Taps, y: &mut FeatureMap<T>) {
    let s = taps.stride;
    let (buf, lq) = split_phases(x, s);
    let ly = y.length;
    for o in 0..y.channels {
        let yo = &mut y.data[o * ly..(o + 1) * ly];
        for i in 0..x.channels {
            for j in 0..taps.kernel {
                let wv = w[o * taps.o_stride + i * taps.i_stride + j];
                let (r, off) = taps.phase_offset(j);
                let range = taps.valid(off, lq, ly);
                if range.is_empty() {
                    continue;
                }
                let start = (range.start as isize + off) as usize;
                let row = &buf[(i * s + r) * lq + start..(i * s + r) * lq + start + range.len()];
                for (dst, &v) in yo[range].iter_mut().zip(row) {
                    *dst += wv * v;
                }
            }
        }
    }
}

/// `x[i][p·s + j − pad] += Σ_o Σ_j w(o,i,j) · y[o][p]`, dropping taps outside `x`.
fn scatter<T: Scalar>(y: &FeatureMap<T>, w: &[T], taps: Taps, x: &mut FeatureMap<T>) {
    let s = taps.stride;
    let (lx, ly) = (x.length, y.length);
    let lq = lx.div_ceil(s);
    let mut buf = vec![T::zero(); x.channels * s * lq];
    for o in 0..y.channels {
        let yo = &y.data[o * ly..(o + 1) * ly];
        for i in 0..x.channels {
            for j in 0..taps.kernel {
                let wv = w[o * taps.o_stride + i * taps.i_stride + j];
                let (r, off) = taps.phase_offset(j);
                let range = taps.valid(off, lq, ly);
                if range.is_empty() {
                    continue;
                }
                let start = (range.start as isize + off) as usize;
                let row = &mut buf[(i * s + r) * lq + start..(i * s + r) * lq + start + range.len()];
                for (dst, &v) in row.iter_mut().zip(&yo[range]) {
                    *dst += wv * v;
                }
            }
        }
    }
    for i in 0..x.channels {
        let xi = &mut x.data[i * lx..(i + 1) * lx];
        for (t, v) in xi.iter_mut().enumerate() {
            *v += buf[(i * s + t % s) * lq + t / s];
        }
    }
}

/// `dw(o,i,j) = Σ_p y[o][p] · x[i][p·s + j − pad]`
fn weight_grad<T: Scalar>(x: &FeatureMap<T>, y: &FeatureMap<T>, taps: Taps, dw: &mut [T]) {
    let s = taps.stride;
    let (buf, lq) = split_phases(x, s);
    let ly = y.length;
    for o in 0..y.channels {
        let yo = &y.data[o * ly..(o + 1) * ly];
        for i in 0..x.channels {
            for j in 0..taps.kernel {
                let (r, off) = taps.phase_offset(j);
                let range = taps.valid(off, lq, ly);
                if range.is_empty() {
                    continue;
                }
                let start = (range.start as isize + off) as usize;
                let row = &buf[(i * s + r) * lq + start..(i * s + r) * lq + start + range.len()];
                let mut acc = T::zero();
                for (&a, &b) in yo[range].iter().zip(row) {
                    acc += a * b;
                }
                dw[o * taps.o_stride + i * taps.i_stride + j] += acc;
            }
        }
    }
}

fn conv_taps<T: Scalar>(p: &ConvParams<T>) -> Taps {
    Taps {
        o_stride: p.in_channels * p.kernel_size,
        i_stride: p.kernel_size,
        kernel: p.kernel_size,
        stride: p.stride,
        pad: p.padding(),
    }
}

/// For a transposed layer the wide side is the layer output (`out` channels)
/// and the narrow side its input, so the roles of the weight axes swap.
fn transposed_taps<T: Scalar>(p: &ConvParams<T>) -> Taps {
    Taps {
        o_stride: p.kernel_size,
        i_stride: p.in_channels * p.kernel_size,
        kernel: p.kernel_size,
        stride: p.stride,
        pad: p.padding(),
    }
}

fn add_bias<T: Scalar>(y: &mut FeatureMap<T>, bias: &[T]) {
    for (c, &b) in bias.iter().enumerate() {
        y.channel_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(d: &FeatureMap<T>) -> Vec<T> {
    (0..d.channels)
        .map(|c| d.channel(c).iter().fold(T::zero(), |a, &b| a + b))
        .collect()
}

/// Strided "same" convolution; output length is `ceil(L / stride)`.
pub fn conv1d<T: Scalar>(input: &FeatureMap<T>, p: &ConvParams<T>) -> Result<FeatureMap<T>> {
    if input.channels != p.in_channels {
        return Err(Error::shape("conv1d input channels", p.in_channels, input.channels));
    }
    let mut y = FeatureMap::zeros(p.out_channels, p.output_len(input.length));
    gather(input, &p.weights, conv_taps(p), &mut y);
    add_bias(&mut y, &p.bias);
    Ok(y)
}

/// Gradients of `Σ d_output ⊙ conv1d(input, p)` with respect to input, weights and bias.
pub fn conv1d_adjoint<T: Scalar>(
    input: &FeatureMap<T>,
    p: &ConvParams<T>,
    d_output: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, ParamGrads<T>)> {
    if input.channels != p.in_channels {
        return Err(Error::shape("conv1d input channels", p.in_channels, input.channels));
    }
    let expected = (p.out_channels, p.output_len(input.length));
    if d_output.shape() != expected {
        return Err(Error::shape(
            "conv1d output cotangent",
            format!("{}x{}", expected.0, expected.1),
            format!("{}x{}", d_output.channels, d_output.length),
        ));
    }
    let taps = conv_taps(p);
    let mut d_input = FeatureMap::zeros(input.channels, input.length);
    scatter(d_output, &p.weights, taps, &mut d_input);
    let mut grads = ParamGrads::zeros_like(p);
    weight_grad(input, d_output, taps, &mut grads.weights);
    grads.bias = bias_grad(d_output);
    Ok((d_input, grads))
}

/// Transposed ("de-") convolution cropped or zero-extended to exactly `target_length`.
///
/// With zero bias this is the adjoint of [`conv1d`] under
/// [`ConvParams::adjoint_params`].
pub fn transposed_conv1d<T: Scalar>(
    input: &FeatureMap<T>,
    p: &ConvParams<T>,
    target_length: usize,
) -> Result<FeatureMap<T>> {
    check_transposed(input, p, target_length)?;
    let mut y = FeatureMap::zeros(p.out_channels, target_length);
    scatter(input, &p.weights, transposed_taps(p), &mut y);
    add_bias(&mut y, &p.bias);
    Ok(y)
}

pub fn transposed_conv1d_adjoint<T: Scalar>(
    input: &FeatureMap<T>,
    p: &ConvParams<T>,
    d_output: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, ParamGrads<T>)> {
    check_transposed(input, p, d_output.length)?;
    if d_output.channels != p.out_channels {
        return Err(Error::shape(
            "transposed conv output cotangent channels",
            p.out_channels,
            d_output.channels,
        ));
    }
    let taps = transposed_taps(p);
    let mut d_input = FeatureMap::zeros(input.channels, input.length);
    gather(d_output, &p.weights, taps, &mut d_input);
    let mut grads = ParamGrads::zeros_like(p);
    weight_grad(d_output, input, taps, &mut grads.weights);
    grads.bias = bias_grad(d_output);
    Ok((d_input, grads))
}

fn check_transposed<T: Scalar>(input: &FeatureMap<T>, p: &ConvParams<T>, target: usize) -> Result<()> {
    if input.channels != p.in_channels {
        return Err(Error::shape(
            "transposed conv input channels",
            p.in_channels,
            input.channels,
        ));
    }
    let (lo, hi) = p.transposed_len_range(input.length);
    if target < lo || target > hi {
        return Err(Error::InfeasibleLength {
            target,
            input: input.length,
            stride: p.stride,
            kernel: p.kernel_size,
            lo,
            hi,
        });
    }
    Ok(())
}

pub fn relu<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Pass `d` through where `x > 0`; `x` may be either the pre-activation or
/// the ReLU output, since both are positive on the same support.
pub fn relu_adjoint<T: Scalar>(x: &FeatureMap<T>, d: &FeatureMap<T>) -> FeatureMap<T> {
    debug_assert_eq!(x.shape(), d.shape());
    let data = x
        .data
        .iter()
        .zip(&d.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    FeatureMap {
        channels: x.channels,
        length: x.length,
        data,
    }
}

pub const CLASS_COUNT: usize = 3;

/// Per-sample softmax across the three class channels (N, P, S).
pub fn softmax_classes<T: Scalar>(logits: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    if logits.channels != CLASS_COUNT {
        return Err(Error::shape("softmax class channels", CLASS_COUNT, logits.channels));
    }
    let l = logits.length;
    let mut out = FeatureMap::zeros(CLASS_COUNT, l);
    for t in 0..l {
        let z = [logits.data[t], logits.data[l + t], logits.data[2 * l + t]];
        let m = z[0].max(z[1]).max(z[2]);
        let e = z.map(|v| (v - m).exp());
        let s = e[0] + e[1] + e[2];
        for c in 0..CLASS_COUNT {
            out.data[c * l + t] = e[c] / s;
        }
    }
    Ok(out)
}

/// Softmax Jacobian-vector product: `dz_c = p_c (dp_c − Σ_k p_k dp_k)`.
pub fn softmax_adjoint<T: Scalar>(probs: &FeatureMap<T>, d_probs: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    if probs.channels != CLASS_COUNT || probs.shape() != d_probs.shape() {
        return Err(Error::shape(
            "softmax cotangent",
            format!("3x{}", probs.length),
            format!("{}x{}", d_probs.channels, d_probs.length),
        ));
    }
    let l = probs.length;
    let mut out = FeatureMap::zeros(CLASS_COUNT, l);
    for t in 0..l {
        let dot = (0..CLASS_COUNT).fold(T::zero(), |a, c| a + probs.data[c * l + t] * d_probs.data[c * l + t]);
        for c in 0..CLASS_COUNT {
            let idx = c * l + t;
            out.data[idx] = probs.data[idx] * (d_probs.data[idx] - dot);
        }
    }
    Ok(out)
}

/// Piecewise-linear resampling that keeps both endpoints.
pub fn interp_linear<T: Scalar>(s: &[T], target_length: usize) -> Vec<T> {
    let n = s.len();
    if n == 0 || target_length == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![s[0]; target_length];
    }
    if target_length == 1 {
        return vec![s[0]];
    }
    if target_length == n {
        return s.to_vec();
    }
    let step = (n - 1) as f64 / (target_length - 1) as f64;
    (0..target_length)
        .map(|t| {
            if t == target_length - 1 {
                return s[n - 1];
            }
            let x = t as f64 * step;
            let k = (x.floor() as usize).min(n - 2);
            let frac = T::lit(x - k as f64);
            s[k] + (s[k + 1] - s[k]) * frac
        })
        .collect()
}
