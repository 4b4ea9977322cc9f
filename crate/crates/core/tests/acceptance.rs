//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seisxai::bench::{noise_sweep, read_sweep_csv, write_sweep_csv, ConfusionCounts, SweepConfig};
use seisxai::dataset::{self, Dataset};
use seisxai::gate::PolicyKind;
use seisxai::gradcam::{gradcam, peak_window_fraction, top_decile_near_picks, DEFAULT_LAYER};
use seisxai::model::{detection_score, event_score, score_cotangent, LayerId, Model, ModelConfig, Phase};
use seisxai::shapley::{explain_batch, explain_window, Baseline, WindowExplanation};
use seisxai::synth::{GenConfig, NoiseKind};
use seisxai::tensor::{
    conv1d, conv1d_adjoint, relu, relu_adjoint, softmax_adjoint, softmax_classes, transposed_conv1d,
    transposed_conv1d_adjoint, ConvParams, FeatureMap, Scalar,
};
use seisxai::train::{train, TrainConfig};
use seisxai::weights;
use seisxai::window::Window;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- shared state

const TRAIN_SEED: u64 = 1;

fn toy_gen() -> GenConfig {
    GenConfig {
        length: 64,
        p_window: (10, 20),
        sp_delay: (10, 20),
        ..GenConfig::default()
    }
}

/// Default-size model trained on 200 synthetic windows.
fn trained() -> &'static Model<f32> {
    static MODEL: OnceLock<Model<f32>> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = dataset::generate(&GenConfig::default(), 100, 100, TRAIN_SEED, 0).unwrap();
        let model = Model::<f32>::assemble(ModelConfig::default()).unwrap();
        train(&model, &data.windows, &TrainConfig::default()).unwrap().model
    })
}

/// 500 signal and 500 noise windows explained by the trained model.
fn explained() -> &'static (Vec<Window>, Vec<WindowExplanation>) {
    static EX: OnceLock<(Vec<Window>, Vec<WindowExplanation>)> = OnceLock::new();
    EX.get_or_init(|| {
        let ds = dataset::generate(&GenConfig::default(), 500, 500, 77, 50_000).unwrap();
        let ex = explain_batch(trained(), &ds.windows, Baseline::Zeros).unwrap();
        (ds.windows, ex)
    })
}

// ---------------------------------------------------------------- 1

fn swap_en(w: &Window) -> Window {
    let rows = [w.channel(1).to_vec(), w.channel(0).to_vec(), w.channel(2).to_vec()];
    w.with_samples(FeatureMap::from_channels(&rows).unwrap())
}

fn shapley_exactness() -> Outcome {
    let (_, ex) = explained();
    ensure(ex.len() == 1000, "expected 1000 explained windows")?;
    let mut worst = 0.0f64;
    for e in ex {
        for (phi, v) in [(&e.phi_p, &e.values_p), (&e.phi_s, &e.values_s)] {
            let gap = phi.phi.iter().sum::<f64>() - (v.get(1, 1, 1) - v.get(0, 0, 0));
            worst = worst.max(gap.abs());
        }
    }
    ensure(worst <= 1e-6, format!("efficiency gap {worst:e}"))?;

    // toy models for the axioms
    let windows = dataset::generate(&toy_gen(), 10, 10, 5, 0).unwrap().windows;
    let mut null = Model::<f64>::assemble(ModelConfig::toy()).unwrap();
    let entry = null.layer_index(LayerId::Entry).unwrap();
    let p = &mut null.layers[entry].params;
    for o in 0..p.out_channels {
        for j in 0..p.kernel_size {
            *p.weight_mut(o, 0, j) = 0.0;
        }
    }
    let mut null_worst = 0.0f64;
    for w in &windows {
        let e = explain_window(&null, w, Baseline::Zeros).map_err(e2s)?;
        null_worst = null_worst.max(e.phi_p.phi[0].abs()).max(e.phi_s.phi[0].abs());
    }
    ensure(null_worst <= 1e-12, format!("null player phi_E = {null_worst:e}"))?;

    let mut sym = Model::<f64>::assemble(ModelConfig { seed: 3, ..ModelConfig::toy() }).unwrap();
    let p = &mut sym.layers[entry].params;
    for o in 0..p.out_channels {
        for j in 0..p.kernel_size {
            *p.weight_mut(o, 1, j) = p.weight(o, 0, j);
        }
    }
    let mut sym_worst = 0.0f64;
    for w in &windows {
        let a = explain_window(&sym, w, Baseline::Zeros).map_err(e2s)?;
        let b = explain_window(&sym, &swap_en(w), Baseline::Zeros).map_err(e2s)?;
        for (x, y) in [(&a.phi_p, &b.phi_p), (&a.phi_s, &b.phi_s)] {
            sym_worst = sym_worst
                .max((x.phi[0] - y.phi[1]).abs())
                .max((x.phi[1] - y.phi[0]).abs())
                .max((x.phi[2] - y.phi[2]).abs());
        }
        // E and N carrying the same trace are interchangeable players
        let twin = w.with_samples(
            FeatureMap::from_channels(&[w.channel(0).to_vec(), w.channel(0).to_vec(), w.channel(2).to_vec()]).unwrap(),
        );
        let t = explain_window(&sym, &twin, Baseline::Zeros).map_err(e2s)?;
        sym_worst = sym_worst
            .max((t.phi_p.phi[0] - t.phi_p.phi[1]).abs())
            .max((t.phi_s.phi[0] - t.phi_s.phi[1]).abs());
    }
    ensure(sym_worst <= 1e-9, format!("symmetry violated by {sym_worst:e}"))?;
    Ok(format!(
        "1000 windows x 2 classes, max efficiency gap {worst:.1e}; null-player {null_worst:.1e}; symmetry {sym_worst:.1e}"
    ))
}

// ---------------------------------------------------------------- 2

fn fd(values: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = values.to_vec();
    (0..v.len())
        .map(|k| {
            let orig = v[k];
            v[k] = orig + h;
            let up = f(&v);
            v[k] = orig - h;
            let down = f(&v);
            v[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / n(a).max(n(b)).max(1e-30)
}

fn f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

fn rand_map(rng: &mut ChaCha8Rng, c: usize, l: usize) -> FeatureMap<f64> {
    FeatureMap::new(c, l, (0..c * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_params(rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize, s: usize) -> ConvParams<f64> {
    let mut p = ConvParams::zeros(i, o, k, s);
    p.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    p.bias.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    p
}

/// Analytic gradient in precision `T` against a 64-bit central-difference oracle.
/// Returns the worst relative error over input, weight and bias gradients.
fn layer_check<T: Scalar>(transposed: bool, rng: &mut ChaCha8Rng) -> f64 {
    let (ci, co, k, s, l) = (2, 3, 7, 4, 16);
    let x = rand_map(rng, ci, l).cast::<T>().cast::<f64>();
    let p = rand_params(rng, ci, co, k, s).cast::<T>().cast::<f64>();
    let target = s * (l - 1) + 1 + 2;
    let fwd = |x: &FeatureMap<f64>, p: &ConvParams<f64>| {
        if transposed {
            transposed_conv1d(x, p, target).unwrap()
        } else {
            conv1d(x, p).unwrap()
        }
    };
    let y = fwd(&x, &p);
    let dy = rand_map(rng, y.channels(), y.length()).cast::<T>().cast::<f64>();
    let (xt, pt, dyt) = (x.cast::<T>(), p.cast::<T>(), dy.cast::<T>());
    let (dx, g) = if transposed {
        transposed_conv1d_adjoint(&xt, &pt, &dyt).unwrap()
    } else {
        conv1d_adjoint(&xt, &pt, &dyt).unwrap()
    };
    let h = 1e-6;
    let fx = fd(x.as_slice(), h, |v| {
        fwd(&FeatureMap::new(ci, l, v.to_vec()).unwrap(), &p).dot(&dy)
    });
    let fw = fd(&p.weights, h, |v| {
        let mut q = p.clone();
        q.weights = v.to_vec();
        fwd(&x, &q).dot(&dy)
    });
    let fb = fd(&p.bias, h, |v| {
        let mut q = p.clone();
        q.bias = v.to_vec();
        fwd(&x, &q).dot(&dy)
    });
    rel_err(&f64s(dx.as_slice()), &fx)
        .max(rel_err(&f64s(&g.weights), &fw))
        .max(rel_err(&f64s(&g.bias), &fb))
}

fn pointwise_check<T: Scalar>(rng: &mut ChaCha8Rng) -> f64 {
    let (c, l) = (3, 16);
    let h = 1e-6;
    // relu: keep inputs away from the kink
    let x = rand_map(rng, c, l).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let x = x.cast::<T>().cast::<f64>();
    let dy = rand_map(rng, c, l).cast::<T>().cast::<f64>();
    let an = relu_adjoint(&relu(&x.cast::<T>()), &dy.cast::<T>());
    let num = fd(x.as_slice(), h, |v| relu(&FeatureMap::new(c, l, v.to_vec()).unwrap()).dot(&dy));
    let e_relu = rel_err(&f64s(an.as_slice()), &num);
    // softmax over classes
    let probs = softmax_classes(&x.cast::<T>()).unwrap();
    let an = softmax_adjoint(&probs, &dy.cast::<T>()).unwrap();
    let num = fd(x.as_slice(), h, |v| {
        softmax_classes(&FeatureMap::new(c, l, v.to_vec()).unwrap()).unwrap().dot(&dy)
    });
    e_relu.max(rel_err(&f64s(an.as_slice()), &num))
}

/// End-to-end max-score gradient of a toy model: input and every parameter.
fn model_check<T: Scalar>(seed: u64, class: Phase) -> f64 {
    let m64 = Model::<f64>::assemble(ModelConfig { seed, ..ModelConfig::toy() }).unwrap();
    // round the oracle to the precision under test so both see the same model
    let m_t = m64.cast::<T>();
    let m64 = m_t.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_map(&mut rng, 3, 64).cast::<T>().cast::<f64>();
    let score = |m: &Model<f64>, x: &FeatureMap<f64>| detection_score(&m.forward(x).unwrap().probs, class);
    let trace = m_t.forward(&x.cast::<T>()).unwrap();
    let g = m_t.backward(&trace, &score_cotangent(&trace.probs, class)).unwrap();
    // deep-layer gradients are small, so a smaller step is roundoff-bound
    let h = 1e-4;
    let mut worst = rel_err(
        &f64s(g.input.as_slice()),
        &fd(x.as_slice(), h, |v| score(&m64, &FeatureMap::new(3, 64, v.to_vec()).unwrap())),
    );
    for (li, layer) in m64.layers.iter().enumerate() {
        let fw = fd(&layer.params.weights, h, |v| {
            let mut m = m64.clone();
            m.layers[li].params.weights = v.to_vec();
            score(&m, &x)
        });
        let fb = fd(&layer.params.bias, h, |v| {
            let mut m = m64.clone();
            m.layers[li].params.bias = v.to_vec();
            score(&m, &x)
        });
        worst = worst
            .max(rel_err(&f64s(&g.params[li].weights), &fw))
            .max(rel_err(&f64s(&g.params[li].bias), &fb));
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // worst relative error per check: [layers, pointwise, model] x [64-bit, 32-bit]
    let mut worst = [[0.0f64; 2]; 3];
    let mut bump = |i: usize, e64: f64, e32: f64| {
        worst[i][0] = worst[i][0].max(e64);
        worst[i][1] = worst[i][1].max(e32);
    };
    for _ in 0..3 {
        for transposed in [false, true] {
            bump(0, layer_check::<f64>(transposed, &mut rng), layer_check::<f32>(transposed, &mut rng));
        }
        bump(1, pointwise_check::<f64>(&mut rng), pointwise_check::<f32>(&mut rng));
    }
    for (seed, class) in [(11, Phase::P), (12, Phase::S), (13, Phase::N)] {
        bump(2, model_check::<f64>(seed, class), model_check::<f32>(seed, class));
    }
    let detail = format!(
        "max rel err 64-bit/32-bit: conv+deconv {:.1e}/{:.1e}, relu+softmax {:.1e}/{:.1e}, toy model end-to-end {:.1e}/{:.1e}",
        worst[0][0], worst[0][1], worst[1][0], worst[1][1], worst[2][0], worst[2][1]
    );
    let e64 = worst.iter().map(|w| w[0]).fold(0.0, f64::max);
    let e32 = worst.iter().map(|w| w[1]).fold(0.0, f64::max);
    ensure(e64 < 1e-7 && e32 < 1e-4, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn arithmetic_fixtures() -> Outcome {
    let two = |v: f64| format!("{v:.2}");
    let m = ConfusionCounts { tp: 4360, fp: 50, fn_: 140, tn: 0 }.metrics();
    let got = (two(m.precision), two(m.recall), two(m.f1));
    ensure(
        got == ("0.99".into(), "0.97".into(), "0.98".into()),
        format!("gated metrics {got:?}"),
    )?;
    let b = ConfusionCounts { tp: 4314, fp: 45, fn_: 186, tn: 0 }.metrics();
    ensure(two(b.f1) == "0.97", format!("baseline F1 {}", two(b.f1)))?;
    Ok(format!(
        "gated P/R/F1 = {}/{}/{}, baseline F1 = {}",
        got.0,
        got.1,
        got.2,
        two(b.f1)
    ))
}

// ---------------------------------------------------------------- 4

fn end_to_end_detection() -> Outcome {
    let model = trained();
    let test = dataset::generate(&GenConfig::default(), 100, 100, 2, 1000).map_err(e2s)?;
    let c = ConfusionCounts::from_pairs(test.windows.iter().map(|w| {
        let p = event_score(&model.forward_window(w).unwrap().probs);
        (p >= 0.5, w.label.is_signal())
    }));
    let f1 = c.metrics().f1;
    ensure(f1 >= 0.90, format!("F1 {f1:.3} (tp {} fp {} fn {})", c.tp, c.fp, c.fn_))?;
    Ok(format!(
        "200 held-out windows, threshold 0.5: tp {} fp {} fn {} tn {}, F1 {f1:.3}",
        c.tp, c.fp, c.fn_, c.tn
    ))
}

// ---------------------------------------------------------------- 5

fn physics_attribution() -> Outcome {
    let (_, ex) = explained();
    let (sig, noi): (Vec<&WindowExplanation>, Vec<&WindowExplanation>) = ex.iter().partition(|e| e.label.is_signal());
    ensure(sig.len() >= 500, "need at least 500 signal windows")?;
    let mut dom_p = [0usize; 3];
    let mut dom_s = [0usize; 3];
    for e in &sig {
        dom_p[e.phi_p.dominant()] += 1;
        dom_s[e.phi_s.dominant()] += 1;
    }
    let n = sig.len() as f64;
    let horiz = 100.0 * (dom_s[0] + dom_s[1]) as f64 / n;
    let mean = |v: &[&WindowExplanation]| v.iter().map(|e| e.s6()).sum::<f64>() / v.len() as f64;
    let (s6_sig, s6_noise) = (mean(&sig), mean(&noi));
    let detail = format!(
        "P dominance E/N/Z = {}/{}/{}; S horizontal dominance {horiz:.1}%; mean S6 signal {s6_sig:.3} vs noise {s6_noise:.3}",
        dom_p[0], dom_p[1], dom_p[2]
    );
    ensure(dom_p[2] > dom_p[0] && dom_p[2] > dom_p[1], format!("Z not the P plurality: {detail}"))?;
    ensure(horiz >= 70.0, format!("S horizontal dominance too low: {detail}"))?;
    ensure(s6_sig >= 3.0 * s6_noise, format!("S6 separation too small: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn gating_benefit() -> Outcome {
    let model = trained();
    let pool = dataset::generate(&GenConfig::default(), 100, 100, 79, 70_000).map_err(e2s)?;
    let test = dataset::generate(&GenConfig::default(), 100, 100, 80, 80_000).map_err(e2s)?;
    let cfg = SweepConfig {
        n_splits: 5,
        policies: vec![PolicyKind::ProbOnly, PolicyKind::ShapOnly],
        seed: 6,
        ..SweepConfig::default()
    };
    let table = noise_sweep(model, &pool.windows, &test.windows, &cfg).map_err(e2s)?;
    let f1 = |k, a, p| table.summary_for(k, a, p).map(|r| r.mean_f1).unwrap();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for kind in [NoiseKind::Harmonic, NoiseKind::Random] {
        let mut margins = Vec::new();
        for &a in cfg.amplitudes.iter().filter(|a| **a >= 1.5) {
            let d = f1(kind, a, PolicyKind::ShapOnly) - f1(kind, a, PolicyKind::ProbOnly);
            margins.push(format!("{a}:{d:+.3}"));
            if d < 0.0 {
                failures.push(format!("{} at {a}: ShapOnly - ProbOnly = {d:.3}", kind.as_str()));
            }
        }
        for p in [PolicyKind::ProbOnly, PolicyKind::ShapOnly] {
            let (lo, hi) = (f1(kind, 0.0, p), f1(kind, 5.0, p));
            lines.push(format!("{}/{} F1 {lo:.3}->{hi:.3}", kind.as_str(), p.as_str()));
            if hi > lo {
                failures.push(format!("{}/{} improves from 0 to 5", kind.as_str(), p.as_str()));
            }
        }
        lines.push(format!("{} margins [{}]", kind.as_str(), margins.join(" ")));
    }
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join(", ")))
    }
}

// ---------------------------------------------------------------- 7

fn gradcam_locality() -> Outcome {
    let model = trained();
    let ds = dataset::generate(&GenConfig::high_snr(), 100, 0, 78, 60_000).map_err(e2s)?;
    let tolerance = ds.manifest.sample_rate as usize; // one second
    let mut pass = 0;
    for w in &ds.windows {
        let probs = model.forward_window(w).map_err(e2s)?.probs;
        let class = if detection_score(&probs, Phase::P) >= detection_score(&probs, Phase::S) {
            Phase::P
        } else {
            Phase::S
        };
        let cam = gradcam(model, w, class, DEFAULT_LAYER).map_err(e2s)?;
        ensure(cam.heatmap.len() == w.len(), format!("window {} heatmap length {}", w.id, cam.heatmap.len()))?;
        ensure(
            cam.heatmap.iter().all(|v| *v >= 0.0),
            format!("window {} has a negative heatmap value", w.id),
        )?;
        if top_decile_near_picks(&cam.heatmap, &w.picks.unwrap(), tolerance) >= 0.5 {
            pass += 1;
        }
    }
    // diffuseness on noise windows is informational only
    let noise = dataset::generate(&GenConfig::default(), 0, 20, 81, 61_000).map_err(e2s)?;
    let span = 2 * tolerance;
    let conc = |ws: &[Window]| {
        ws.iter()
            .map(|w| peak_window_fraction(&gradcam(model, w, Phase::P, DEFAULT_LAYER).unwrap().heatmap, span))
            .sum::<f64>()
            / ws.len() as f64
    };
    let (c_sig, c_noise) = (conc(&ds.windows[..20]), conc(&noise.windows));
    let detail = format!(
        "{pass}/100 windows with top-decile heat within 1 s of a pick (layer {DEFAULT_LAYER}); \
         2-s concentration events {c_sig:.2}, noise {c_noise:.2}"
    );
    ensure(pass >= 70, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for n in names {
        let (x, y) = (std::fs::read(a.join(n)).map_err(e2s)?, std::fs::read(b.join(n)).map_err(e2s)?);
        ensure(x == y, format!("{n} differs between identical runs"))?;
    }
    Ok(())
}

fn train_toy(data: &[Window], threads: usize) -> Model<f32> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let m = Model::<f32>::assemble(ModelConfig { seed: 4, ..ModelConfig::toy() }).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 4,
            ..TrainConfig::default()
        };
        train(&m, data, &cfg).unwrap().model
    })
}

fn determinism_io() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let files = [dataset::MANIFEST, dataset::SAMPLES, dataset::LABELS, dataset::META];
    let ds = dataset::build_dataset(&GenConfig::default(), 6, 6, 21, 0, &a).map_err(e2s)?;
    dataset::build_dataset(&GenConfig::default(), 6, 6, 21, 0, &b).map_err(e2s)?;
    same_files(&a, &b, &files)?;
    let back = Dataset::read(&a).map_err(e2s)?;
    ensure(back == ds, "dataset roundtrip changed the data")?;

    let toy = dataset::generate(&toy_gen(), 8, 8, 22, 0).map_err(e2s)?;
    let (m1, m2) = (train_toy(&toy.windows, 1), train_toy(&toy.windows, 2));
    ensure(
        weights::encode(&m1) == weights::encode(&m2),
        "weights differ across runs with the same seed",
    )?;
    let wpath = tmp.path().join("model.pnw");
    weights::save(trained(), &wpath).map_err(e2s)?;
    let loaded = weights::load(&wpath).map_err(e2s)?;
    ensure(&loaded == trained(), "weights roundtrip changed the model")?;
    ensure(
        weights::encode(&loaded) == std::fs::read(&wpath).map_err(e2s)?,
        "re-encoded weights differ",
    )?;

    let pool = dataset::generate(&toy_gen(), 10, 10, 23, 100).map_err(e2s)?;
    let test = dataset::generate(&toy_gen(), 6, 6, 24, 200).map_err(e2s)?;
    let cfg = SweepConfig {
        amplitudes: vec![0.0, 1.0],
        n_splits: 2,
        train_per_class: 5,
        seed: 25,
        ..SweepConfig::default()
    };
    for dir in [&a, &b] {
        let t = noise_sweep(&m1, &pool.windows, &test.windows, &cfg).map_err(e2s)?;
        write_sweep_csv(dir.join("sweep.csv"), &t.rows).map_err(e2s)?;
        ensure(
            read_sweep_csv(dir.join("sweep.csv")).map_err(e2s)? == t.rows,
            "sweep CSV does not reparse to the same table",
        )?;
    }
    same_files(&a, &b, &["sweep.csv"])?;
    Ok("datasets, weights (1 vs 2 threads) and sweep CSVs byte-identical; roundtrips bit-exact".into())
}

// ---------------------------------------------------------------- driver

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("shapley exactness", shapley_exactness),
        ("gradient correctness", gradient_correctness),
        ("arithmetic fixtures", arithmetic_fixtures),
        ("end-to-end detection", end_to_end_detection),
        ("physics-consistent attribution", physics_attribution),
        ("gating benefit under noise", gating_benefit),
        ("grad-cam locality", gradcam_locality),
        ("determinism and io", determinism_io),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] {}. {name}: {d} ({secs:.1}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {d} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
