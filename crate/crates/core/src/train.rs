//! Supervised training: Gaussian pick targets, cross-entropy and Adam.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{FeatureMap, ParamGrads, Scalar, CLASS_COUNT};
use crate::window::{Picks, Window};

pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Width of the Gaussian P/S targets, in samples.
    pub mask_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            mask_sigma: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.epochs > 0, "epochs must be at least 1"),
            (self.batch_size > 0, "batch size must be at least 1"),
            (self.learning_rate >= 0.0, "learning rate must be non-negative"),
            (self.mask_sigma > 0.0, "mask sigma must be positive"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)"),
            (self.epsilon > 0.0, "epsilon must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).to_string())),
            None => Ok(()),
        }
    }
}

/// Target traces in channel order N, P, S.
///
/// P and S are unit-peak Gaussians at the picks and N takes the remainder,
/// so every sample lies on the probability simplex.
pub fn label_masks<T: Scalar>(picks: Option<Picks>, length: usize, sigma: f64) -> Result<FeatureMap<T>> {
    let mut m = FeatureMap::zeros(CLASS_COUNT, length);
    let Some(p) = picks else {
        m.channel_mut(0).iter_mut().for_each(|v| *v = T::one());
        return Ok(m);
    };
    p.validate(length)?;
    let bump = |t: usize, centre: usize| {
        let d = t as f64 - centre as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    };
    for t in 0..length {
        let (mut pv, mut sv) = (bump(t, p.p_time), bump(t, p.s_time));
        let total = pv + sv;
        if total > 1.0 {
            pv /= total;
            sv /= total;
        }
        m.set(0, t, T::lit((1.0 - pv - sv).max(0.0)));
        m.set(1, t, T::lit(pv));
        m.set(2, t, T::lit(sv));
    }
    Ok(m)
}

/// Mean over time of `−Σ_c target_c ln(max(prob_c, 1e-7))` and its gradient
/// with respect to the probabilities.
pub fn cross_entropy<T: Scalar>(probs: &FeatureMap<T>, targets: &FeatureMap<T>) -> Result<(f64, FeatureMap<T>)> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(
            "cross entropy targets",
            format!("{}x{}", probs.channels(), probs.length()),
            format!("{}x{}", targets.channels(), targets.length()),
        ));
    }
    let n = probs.length() as f64;
    let floor = T::lit(PROB_FLOOR);
    let mut loss = 0.0;
    let mut grad = FeatureMap::zeros(probs.channels(), probs.length());
    for ((p, t), g) in probs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .zip(grad.as_mut_slice())
    {
        let clipped = if *p > floor { *p } else { floor };
        loss -= t.to_f64().unwrap() * clipped.to_f64().unwrap().ln();
        if *p > floor {
            *g = -*t / (*p * T::lit(n));
        }
    }
    Ok((loss / n, grad))
}

/// Adam moment state for every layer of a model.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<ParamGrads<T>>,
    v: Vec<ParamGrads<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<_> = model.layers.iter().map(|l| ParamGrads::zeros_like(&l.params)).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &[ParamGrads<T>]) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = T::lit(self.lr / c1);
        let c2 = T::lit(c2);
        let eps = T::lit(self.epsilon);
        for (((layer, g), m), v) in model.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let pairs = layer
                .params
                .weights
                .iter_mut()
                .zip(&g.weights)
                .zip(m.weights.iter_mut().zip(v.weights.iter_mut()))
                .chain(
                    layer
                        .params
                        .bias
                        .iter_mut()
                        .zip(&g.bias)
                        .zip(m.bias.iter_mut().zip(v.bias.iter_mut())),
                );
            for ((w, &gi), (mi, vi)) in pairs {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w -= lr * *mi / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

/// Loss and parameter gradients for one window.
pub fn window_gradient<T: Scalar>(
    model: &Model<T>,
    window: &Window,
    sigma: f64,
) -> Result<(f64, Vec<ParamGrads<T>>)> {
    let trace = model.forward_window(window)?;
    let targets = label_masks(window.picks, window.len(), sigma)?;
    let (loss, d_probs) = cross_entropy(&trace.probs, &targets)?;
    let grads = model.backward(&trace, &d_probs)?;
    Ok((loss, grads.params))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Mean training loss per epoch, measured on the batches as they were visited.
    pub history: Vec<f64>,
}

/// Mini-batch Adam training. Batch gradients are evaluated in parallel and
/// reduced in window order, so results do not depend on the thread count.
pub fn train<T: Scalar>(model: &Model<T>, data: &[Window], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = model.clone();
    let mut opt = Adam::new(&model, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let inv_batch_cache = |n: usize| T::lit(1.0 / n as f64);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; data.len()];
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<ParamGrads<T>>)>> = batch
                .par_iter()
                .map(|&i| window_gradient(&model, &data[i], cfg.mask_sigma))
                .collect();
            let mut total: Option<Vec<ParamGrads<T>>> = None;
            for (&i, r) in batch.iter().zip(results) {
                let (loss, g) = r?;
                losses[i] = loss;
                match total.as_mut() {
                    None => total = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut total = total.expect("non-empty batch");
            let scale = inv_batch_cache(batch.len());
            total.iter_mut().for_each(|g| g.scale(scale));
            if cfg.learning_rate > 0.0 {
                opt.step(&mut model, &total);
            }
        }
        let mean = losses.iter().sum::<f64>() / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        history.push(mean);
    }
    Ok(TrainOutcome { model, history })
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,mean_loss")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(f, "{e},{l}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::tests::{fd_grad, rel_err};

    #[test]
    fn no_event_mask() {
        let m = label_masks::<f32>(None, 50, 10.0).unwrap();
        assert!(m.channel(0).iter().all(|&v| v == 1.0));
        assert!(m.channel(1).iter().chain(m.channel(2)).all(|&v| v == 0.0));
    }

    #[test]
    fn event_mask_peaks_at_pick() {
        let picks = Some(Picks { p_time: 1000, s_time: 1500 });
        let m = label_masks::<f64>(picks, 3001, 10.0).unwrap();
        assert_eq!(m.get(1, 1000), 1.0);
        assert_eq!(m.get(2, 1500), 1.0);
        // exp(-1/2) one sigma away
        assert!((m.get(1, 1010) - (-0.5f64).exp()).abs() < 1e-12);
        let argmax = (0..3001).max_by(|&a, &b| m.get(1, a).total_cmp(&m.get(1, b))).unwrap();
        assert_eq!(argmax, 1000);
        for t in 0..3001 {
            let s = m.get(0, t) + m.get(1, t) + m.get(2, t);
            assert!((s - 1.0).abs() < 1e-6);
            assert!((0..3).all(|c| m.get(c, t) >= 0.0));
        }
    }

    #[test]
    fn overlapping_picks_stay_on_simplex() {
        let m = label_masks::<f64>(Some(Picks { p_time: 100, s_time: 105 }), 300, 10.0).unwrap();
        for t in 0..300 {
            let s = m.get(0, t) + m.get(1, t) + m.get(2, t);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn picks_out_of_range() {
        assert!(label_masks::<f32>(Some(Picks { p_time: 10, s_time: 50 }), 50, 10.0).is_err());
        assert!(label_masks::<f32>(Some(Picks { p_time: 20, s_time: 10 }), 50, 10.0).is_err());
    }

    #[test]
    fn one_hot_loss_is_tiny() {
        let t = label_masks::<f64>(None, 20, 10.0).unwrap();
        let (loss, _) = cross_entropy(&t, &t).unwrap();
        assert!(loss <= 1e-5);
    }

    #[test]
    fn uniform_loss_is_ln3() {
        let probs = FeatureMap::new(3, 40, vec![1.0f64 / 3.0; 120]).unwrap();
        let t = label_masks::<f64>(Some(Picks { p_time: 5, s_time: 30 }), 40, 3.0).unwrap();
        let (loss, _) = cross_entropy(&probs, &t).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-4);
        assert!((loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..60).map(|_| rng.gen_range(0.05..1.0)).collect();
        let probs = FeatureMap::new(3, 20, raw).unwrap();
        let t = label_masks::<f64>(Some(Picks { p_time: 4, s_time: 12 }), 20, 2.0).unwrap();
        let (_, g) = cross_entropy(&probs, &t).unwrap();
        let fd = fd_grad(probs.as_slice(), 1e-6, |v| {
            cross_entropy(&FeatureMap::new(3, 20, v.to_vec()).unwrap(), &t).unwrap().0
        });
        assert!(rel_err(g.as_slice(), &fd) < 1e-4);
    }

    #[test]
    fn shape_mismatch() {
        let a = FeatureMap::<f32>::zeros(3, 10);
        let b = FeatureMap::<f32>::zeros(3, 11);
        assert!(cross_entropy(&a, &b).is_err());
    }

    #[test]
    fn zero_gradient_step_is_noop() {
        let mut m = Model::<f32>::assemble(ModelConfig::toy()).unwrap();
        let before = m.clone();
        let mut opt = Adam::new(&m, &TrainConfig::default());
        let zeros: Vec<_> = m.layers.iter().map(|l| ParamGrads::zeros_like(&l.params)).collect();
        opt.step(&mut m, &zeros);
        assert_eq!(m, before);
    }

    #[test]
    fn empty_dataset() {
        let m = Model::<f32>::assemble(ModelConfig::toy()).unwrap();
        assert!(matches!(train(&m, &[], &TrainConfig::default()), Err(Error::Empty(_))));
    }
}
