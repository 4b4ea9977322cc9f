//! Detection metrics and the noise-robustness benchmark.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{evaluate, tune_thresholds, PolicyKind, ScoredRecord, TunedPolicy};
use crate::plot::{Chart, Line, PALETTE};
use crate::shapley::{explain_window, Baseline, ClassScorer};
use crate::synth::{derive_seed, inject_noise, NoiseKind, NoiseSpec};
use crate::window::Window;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    /// Tally `(predicted_signal, actual_signal)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Precision, recall and F1; any 0/0 is reported as 0.
    pub fn metrics(&self) -> Metrics {
        Metrics {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    c.metrics()
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub split: usize,
    pub policy: PolicyKind,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SweepResult {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            tn: self.tn,
        }
    }
}

/// Score windows under one noise condition. Noise for window `id` depends
/// only on the spec and the id.
pub fn score_windows(
    scorer: &impl ClassScorer,
    windows: &[Window],
    spec: &NoiseSpec,
    baseline: Baseline,
) -> Result<Vec<(usize, ScoredRecord)>> {
    windows
        .par_iter()
        .map(|w| {
            let noisy = inject_noise(w, spec, &mut spec.rng_for(w.id))?;
            let ex = explain_window(scorer, &noisy, baseline)?;
            Ok((
                w.id,
                ScoredRecord {
                    event_prob: ex.event_prob,
                    s6: ex.s6(),
                    label: w.label,
                },
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub results: Vec<SweepResult>,
    pub tuned: Vec<TunedPolicy>,
    /// Ids of every window the threshold search saw.
    pub tuned_on: Vec<usize>,
    pub evaluated_on: Vec<usize>,
}

fn check_disjoint(train: &[usize], test: &[usize]) -> Result<()> {
    let train: HashSet<usize> = train.iter().copied().collect();
    match test.iter().find(|id| train.contains(id)) {
        Some(&id) => Err(Error::OverlappingSplits(id)),
        None => Ok(()),
    }
}

/// Tune each policy on the train records and evaluate on the test records.
pub fn evaluate_split(
    train: &[(usize, ScoredRecord)],
    test: &[(usize, ScoredRecord)],
    policies: &[PolicyKind],
    kind: NoiseKind,
    amplitude: f64,
    split: usize,
) -> Result<SplitOutcome> {
    let train_ids: Vec<usize> = train.iter().map(|r| r.0).collect();
    let test_ids: Vec<usize> = test.iter().map(|r| r.0).collect();
    check_disjoint(&train_ids, &test_ids)?;
    let train_recs: Vec<ScoredRecord> = train.iter().map(|r| r.1).collect();
    let test_recs: Vec<ScoredRecord> = test.iter().map(|r| r.1).collect();
    let mut results = Vec::with_capacity(policies.len());
    let mut tuned = Vec::with_capacity(policies.len());
    for &policy in policies {
        let t = tune_thresholds(&train_recs, policy)?;
        let c = evaluate(&test_recs, &t.policy);
        let m = c.metrics();
        results.push(SweepResult {
            kind,
            amplitude,
            split,
            policy,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        });
        tuned.push(t);
    }
    Ok(SplitOutcome {
        results,
        tuned,
        tuned_on: train_ids,
        evaluated_on: test_ids,
    })
}

/// Score, tune and evaluate one split under one noise condition.
pub fn run_split(
    scorer: &impl ClassScorer,
    train: &[Window],
    test: &[Window],
    spec: &NoiseSpec,
    policies: &[PolicyKind],
    baseline: Baseline,
    split: usize,
) -> Result<SplitOutcome> {
    let ids = |ws: &[Window]| ws.iter().map(|w| w.id).collect::<Vec<_>>();
    check_disjoint(&ids(train), &ids(test))?;
    let tr = score_windows(scorer, train, spec, baseline)?;
    let te = score_windows(scorer, test, spec, baseline)?;
    evaluate_split(&tr, &te, policies, spec.kind, spec.relative_amplitude, split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub amplitudes: Vec<f64>,
    pub kinds: Vec<NoiseKind>,
    pub policies: Vec<PolicyKind>,
    pub n_splits: usize,
    /// Signal and noise windows drawn per class for each train split.
    pub train_per_class: usize,
    pub baseline: Baseline,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0],
            kinds: vec![NoiseKind::Harmonic, NoiseKind::Random],
            policies: PolicyKind::ALL.to_vec(),
            n_splits: 5,
            train_per_class: 50,
            baseline: Baseline::Zeros,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() || self.kinds.is_empty() || self.policies.is_empty() {
            return Err(Error::InvalidConfig("sweep needs amplitudes, kinds and policies".into()));
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidConfig(format!("amplitude {a} must be finite and non-negative")));
        }
        if self.n_splits == 0 || self.train_per_class == 0 {
            return Err(Error::InvalidConfig("need at least one split and one window per class".into()));
        }
        Ok(())
    }

    /// Noise spec for a condition; shared by every split.
    pub fn noise_spec(&self, kind: NoiseKind, amplitude_index: usize) -> NoiseSpec {
        let k = self.kinds.iter().position(|&x| x == kind).unwrap_or(0) as u64;
        NoiseSpec::new(
            kind,
            self.amplitudes[amplitude_index],
            derive_seed(self.seed, 1_000 * (k + 1) + amplitude_index as u64),
        )
    }
}

/// Balanced train draws from the pool, one per split.
pub fn draw_splits(pool: &[Window], cfg: &SweepConfig) -> Result<Vec<Vec<usize>>> {
    let sig: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label.is_signal()).collect();
    let noi: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i].label.is_signal()).collect();
    if sig.len() < cfg.train_per_class || noi.len() < cfg.train_per_class {
        return Err(Error::InvalidConfig(format!(
            "train pool has {} signal and {} noise windows, need {} of each",
            sig.len(),
            noi.len(),
            cfg.train_per_class
        )));
    }
    Ok((0..cfg.n_splits)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10_000 + s as u64));
            let mut pick = sig.choose_multiple(&mut rng, cfg.train_per_class).copied().collect::<Vec<_>>();
            pick.extend(noi.choose_multiple(&mut rng, cfg.train_per_class));
            pick.sort_unstable();
            pick
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub policy: PolicyKind,
    pub splits: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub sd_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepResult>,
    pub summary: Vec<SummaryRow>,
    /// Tuned policies, aligned with `rows`.
    pub tuned: Vec<TunedPolicy>,
}

impl SweepTable {
    pub fn summary_for(&self, kind: NoiseKind, amplitude: f64, policy: PolicyKind) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.kind == kind && r.amplitude == amplitude && r.policy == policy)
    }
}

pub fn summarize(rows: &[SweepResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(NoiseKind, f64, PolicyKind)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.kind, r.amplitude, r.policy)) {
            keys.push((r.kind, r.amplitude, r.policy));
        }
    }
    keys.into_iter()
        .map(|(kind, amplitude, policy)| {
            let sel: Vec<&SweepResult> = rows
                .iter()
                .filter(|r| r.kind == kind && r.amplitude == amplitude && r.policy == policy)
                .collect();
            let n = sel.len() as f64;
            let mean = |f: fn(&SweepResult) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_f1 = mean(|r| r.f1);
            let sd_f1 = if sel.len() > 1 {
                (sel.iter().map(|r| (r.f1 - mean_f1).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                kind,
                amplitude,
                policy,
                splits: sel.len(),
                mean_precision: mean(|r| r.precision),
                mean_recall: mean(|r| r.recall),
                mean_f1,
                sd_f1,
            }
        })
        .collect()
}

/// Full sweep: every kind × amplitude × split × policy. Each condition is
/// scored once; splits only change which pool windows the thresholds are
/// tuned on. `test` is held fixed.
pub fn noise_sweep(scorer: &impl ClassScorer, pool: &[Window], test: &[Window], cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let splits = draw_splits(pool, cfg)?;
    let used: Vec<usize> = {
        let mut u: Vec<usize> = splits.iter().flatten().copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let used_windows: Vec<Window> = used.iter().map(|&i| pool[i].clone()).collect();
    let ids = |ws: &[Window]| ws.iter().map(|w| w.id).collect::<Vec<_>>();
    check_disjoint(&ids(&used_windows), &ids(test))?;

    let mut rows = Vec::new();
    let mut tuned = Vec::new();
    for &kind in &cfg.kinds {
        for (ai, &amp) in cfg.amplitudes.iter().enumerate() {
            let spec = cfg.noise_spec(kind, ai);
            log::info!("scoring {} noise at amplitude {amp}", kind.as_str());
            let pool_scores = score_windows(scorer, &used_windows, &spec, cfg.baseline)?;
            let test_scores = score_windows(scorer, test, &spec, cfg.baseline)?;
            for (s, split) in splits.iter().enumerate() {
                let train: Vec<(usize, ScoredRecord)> = split
                    .iter()
                    .map(|i| pool_scores[used.binary_search(i).expect("drawn index")])
                    .collect();
                let out = evaluate_split(&train, &test_scores, &cfg.policies, kind, amp, s)?;
                rows.extend(out.results);
                tuned.extend(out.tuned);
            }
        }
    }
    Ok(SweepTable {
        summary: summarize(&rows),
        rows,
        tuned,
    })
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean F1 against amplitude, one line and ±1 sd band per (kind, policy).
pub fn render_f1_svg(summary: &[SummaryRow]) -> String {
    let mut pairs: Vec<(NoiseKind, PolicyKind)> = Vec::new();
    for r in summary {
        if !pairs.contains(&(r.kind, r.policy)) {
            pairs.push((r.kind, r.policy));
        }
    }
    let max_amp = summary.iter().map(|r| r.amplitude).fold(0.0, f64::max);
    let lines: Vec<Line> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(kind, policy))| {
            let mut pts: Vec<&SummaryRow> = summary.iter().filter(|r| r.kind == kind && r.policy == policy).collect();
            pts.sort_by(|a, b| a.amplitude.total_cmp(&b.amplitude));
            Line {
                label: format!("{} / {}", kind.as_str(), policy.as_str()),
                color: PALETTE[i % PALETTE.len()].to_string(),
                points: pts.iter().map(|r| (r.amplitude, r.mean_f1)).collect(),
                band: Some(
                    pts.iter()
                        .map(|r| (r.amplitude, r.mean_f1 - r.sd_f1, r.mean_f1 + r.sd_f1))
                        .collect(),
                ),
            }
        })
        .collect();
    Chart {
        x_range: (0.0, max_amp.max(1.0)),
        y_range: (0.0, 1.0),
        x_label: "relative noise amplitude".into(),
        y_label: "F1".into(),
        title: "Detection F1 under injected noise".into(),
        ..Chart::default()
    }
    .render(&lines)
}

/// Write sweep.csv, sweep_summary.csv and f1_vs_amplitude.svg.
pub fn write_report(dir: impl AsRef<Path>, table: &SweepTable) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(dir.join("sweep.csv"), &table.rows)?;
    write_summary_csv(dir.join("sweep_summary.csv"), &table.summary)?;
    std::fs::write(dir.join("f1_vs_amplitude.svg"), render_f1_svg(&table.summary))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FeatureMap;
    use crate::window::Label;

    #[test]
    fn metric_fixtures() {
        let m = ConfusionCounts { tp: 4360, fp: 50, fn_: 140, tn: 0 }.metrics();
        assert!((m.precision - 0.99).abs() < 0.005);
        assert!((m.recall - 0.97).abs() < 0.005);
        assert!((m.f1 - 0.98).abs() < 0.005);
        let m = ConfusionCounts { tp: 4314, fp: 45, fn_: 186, tn: 0 }.metrics();
        assert!((m.f1 - 0.97).abs() < 0.005);
        let m = ConfusionCounts::default().metrics();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 }.metrics();
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn tally() {
        let c = ConfusionCounts::from_pairs([(true, true), (true, false), (false, true), (false, false), (true, true)]);
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 1 });
        assert_eq!(c.total(), 5);
    }

    /// Scores a window by its Z energy so that signal-heavy windows score high.
    struct Energy;

    impl ClassScorer for Energy {
        fn class_scores(&self, x: &FeatureMap<f32>) -> Result<[f64; 3]> {
            let e = |c: usize| x.channel(c).iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.length() as f64;
            let p = (e(2) * 10.0).min(1.0);
            let s = ((e(0) + e(1)) * 5.0).min(1.0);
            Ok([1.0 - p.max(s), p, s])
        }
    }

    fn windows(n: usize, offset: usize) -> Vec<Window> {
        let cfg = crate::synth::GenConfig {
            length: 400,
            p_window: (50, 150),
            sp_delay: (50, 150),
            ..Default::default()
        };
        crate::dataset::generate(&cfg, n, n, 9, offset).unwrap().windows
    }

    #[test]
    fn overlap_rejected() {
        let w = windows(3, 0);
        let spec = NoiseSpec::new(NoiseKind::Random, 1.0, 1);
        let err = run_split(&Energy, &w, &w[2..], &spec, &[PolicyKind::ProbOnly], Baseline::Zeros, 0).unwrap_err();
        assert!(matches!(err, Error::OverlappingSplits(_)));
    }

    #[test]
    fn sweep_matches_direct_splits_and_never_tunes_on_test() {
        let pool = windows(12, 0);
        let test = windows(6, 1000);
        let cfg = SweepConfig {
            amplitudes: vec![0.0, 2.0],
            n_splits: 2,
            train_per_class: 5,
            seed: 4,
            ..Default::default()
        };
        let table = noise_sweep(&Energy, &pool, &test, &cfg).unwrap();
        assert_eq!(table.rows.len(), 2 * 2 * 2 * 3);
        assert_eq!(table.summary.len(), 2 * 2 * 3);
        let again = noise_sweep(&Energy, &pool, &test, &cfg).unwrap();
        assert_eq!(table, again);

        let splits = draw_splits(&pool, &cfg).unwrap();
        let test_ids: HashSet<usize> = test.iter().map(|w| w.id).collect();
        let mut i = 0;
        for &kind in &cfg.kinds {
            for ai in 0..cfg.amplitudes.len() {
                let spec = cfg.noise_spec(kind, ai);
                for (s, split) in splits.iter().enumerate() {
                    let train: Vec<Window> = split.iter().map(|&k| pool[k].clone()).collect();
                    assert_eq!(train.iter().filter(|w| w.label == Label::Signal).count(), 5);
                    let out = run_split(&Energy, &train, &test, &spec, &cfg.policies, cfg.baseline, s).unwrap();
                    assert!(out.tuned_on.iter().all(|id| !test_ids.contains(id)));
                    assert_eq!(out.evaluated_on.len(), test.len());
                    for r in out.results {
                        assert_eq!(r, table.rows[i]);
                        i += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn csv_and_svg_reports() {
        let pool = windows(8, 0);
        let test = windows(4, 500);
        let cfg = SweepConfig {
            amplitudes: vec![0.0, 1.0, 3.0],
            n_splits: 2,
            train_per_class: 4,
            ..Default::default()
        };
        let table = noise_sweep(&Energy, &pool, &test, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &table).unwrap();
        let back = read_sweep_csv(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(back, table.rows);
        let header = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(header.starts_with("kind,amplitude,split,policy,tp,fp,fn,tn,precision,recall,f1\n"));
        let svg = std::fs::read_to_string(dir.path().join("f1_vs_amplitude.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), cfg.kinds.len() * cfg.policies.len());
    }

    #[test]
    fn summary_statistics() {
        let row = |split, f1| SweepResult {
            kind: NoiseKind::Random,
            amplitude: 1.0,
            split,
            policy: PolicyKind::ShapOnly,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            precision: 0.0,
            recall: 0.0,
            f1,
        };
        let s = summarize(&[row(0, 0.8), row(1, 0.9), row(2, 1.0)]);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean_f1 - 0.9).abs() < 1e-12);
        assert!((s[0].sd_f1 - 0.1).abs() < 1e-12);
    }
}
