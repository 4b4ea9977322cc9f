//! SHAP-gated inference: the S6 evidence statistic, decision policies and
//! F1-maximising threshold search.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::ConfusionCounts;
use crate::error::{Error, Result};
use crate::shapley::Attribution;
use crate::window::Label;

/// Thresholds reported for the field dataset, used as defaults.
pub const REFERENCE_PROB_THRESHOLD: f64 = 0.87;
pub const REFERENCE_SHAP_THRESHOLD: f64 = 0.18;

const GRID_STEP: f64 = 0.01;

/// Mean of the six absolute channel attributions for P and S.
pub fn s6(att_p: &Attribution, att_s: &Attribution) -> f64 {
    att_p.phi.iter().chain(&att_s.phi).map(|v| v.abs()).sum::<f64>() / 6.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ProbOnly,
    ShapOnly,
    Combined,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::ProbOnly, PolicyKind::ShapOnly, PolicyKind::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ProbOnly => "prob_only",
            PolicyKind::ShapOnly => "shap_only",
            PolicyKind::Combined => "combined",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "prob_only" | "prob" => Ok(PolicyKind::ProbOnly),
            "shap_only" | "shap" => Ok(PolicyKind::ShapOnly),
            "combined" => Ok(PolicyKind::Combined),
            other => Err(Error::InvalidInput(format!(
                "unknown policy `{other}` (prob_only, shap_only or combined)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub kind: PolicyKind,
    pub prob_threshold: Option<f64>,
    pub shap_threshold: Option<f64>,
}

impl GatePolicy {
    pub fn prob_only(t: f64) -> Self {
        Self {
            kind: PolicyKind::ProbOnly,
            prob_threshold: Some(t),
            shap_threshold: None,
        }
    }

    pub fn shap_only(t: f64) -> Self {
        Self {
            kind: PolicyKind::ShapOnly,
            prob_threshold: None,
            shap_threshold: Some(t),
        }
    }

    pub fn combined(prob: f64, shap: f64) -> Self {
        Self {
            kind: PolicyKind::Combined,
            prob_threshold: Some(prob),
            shap_threshold: Some(shap),
        }
    }

    /// Reference thresholds for a policy kind.
    pub fn reference(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::ProbOnly => Self::prob_only(REFERENCE_PROB_THRESHOLD),
            PolicyKind::ShapOnly => Self::shap_only(REFERENCE_SHAP_THRESHOLD),
            PolicyKind::Combined => Self::combined(REFERENCE_PROB_THRESHOLD, REFERENCE_SHAP_THRESHOLD),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need_prob = matches!(self.kind, PolicyKind::ProbOnly | PolicyKind::Combined);
        let need_shap = matches!(self.kind, PolicyKind::ShapOnly | PolicyKind::Combined);
        let check = |name: &str, v: Option<f64>, needed: bool| match v {
            None if needed => Err(Error::InvalidConfig(format!(
                "{} policy needs a {name} threshold",
                self.kind.as_str()
            ))),
            Some(t) if !t.is_finite() => Err(Error::InvalidConfig(format!("{name} threshold must be finite"))),
            _ => Ok(()),
        };
        check("probability", self.prob_threshold, need_prob)?;
        check("SHAP", self.shap_threshold, need_shap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateInput {
    /// `max(score(P), score(S))`.
    pub event_prob: f64,
    pub s6: f64,
}

/// Apply a policy. Thresholds are inclusive.
///
/// `Combined` accepts on probability alone and otherwise falls back to the
/// S6 evidence.
pub fn decide(input: GateInput, policy: &GatePolicy) -> Label {
    let prob_ok = || policy.prob_threshold.is_some_and(|t| input.event_prob >= t);
    let shap_ok = || policy.shap_threshold.is_some_and(|t| input.s6 >= t);
    let signal = match policy.kind {
        PolicyKind::ProbOnly => prob_ok(),
        PolicyKind::ShapOnly => shap_ok(),
        PolicyKind::Combined => prob_ok() || shap_ok(),
    };
    if signal {
        Label::Signal
    } else {
        Label::Noise
    }
}

/// One scored window: gate inputs plus the true label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub event_prob: f64,
    pub s6: f64,
    pub label: Label,
}

impl ScoredRecord {
    pub fn input(&self) -> GateInput {
        GateInput {
            event_prob: self.event_prob,
            s6: self.s6,
        }
    }
}

pub fn evaluate(records: &[ScoredRecord], policy: &GatePolicy) -> ConfusionCounts {
    ConfusionCounts::from_pairs(
        records
            .iter()
            .map(|r| (decide(r.input(), policy).is_signal(), r.label.is_signal())),
    )
}

/// Compare two confusion tables by F1, then precision, exactly.
fn rank(a: &ConfusionCounts, b: &ConfusionCounts) -> Ordering {
    // F1 = 2tp / (2tp + fp + fn); compare by cross-multiplication
    let f1 = |c: &ConfusionCounts| (2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let prec = |c: &ConfusionCounts| (c.tp, c.tp + c.fp);
    let cmp = |(an, ad): (u64, u64), (bn, bd): (u64, u64)| {
        // 0/0 counts as zero
        let (ad, bd) = (ad.max(1), bd.max(1));
        (an as u128 * bd as u128).cmp(&(bn as u128 * ad as u128))
    };
    cmp(f1(a), f1(b)).then_with(|| cmp(prec(a), prec(b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedPolicy {
    pub policy: GatePolicy,
    pub train_f1: f64,
    pub train_counts: ConfusionCounts,
}

fn grid(max: f64) -> Vec<f64> {
    let steps = (max / GRID_STEP).ceil().max(0.0) as usize;
    (0..=steps).map(|k| k as f64 / 100.0).collect()
}

/// Exhaustive grid search (step 0.01) for the F1-maximising thresholds.
/// Ties go to higher precision, then to lower thresholds.
pub fn tune_thresholds(records: &[ScoredRecord], kind: PolicyKind) -> Result<TunedPolicy> {
    let signals = records.iter().filter(|r| r.label.is_signal()).count();
    if signals == 0 {
        return Err(Error::SingleClass("noise"));
    }
    if signals == records.len() {
        return Err(Error::SingleClass("signal"));
    }
    let max_s6 = records.iter().map(|r| r.s6).fold(0.0, f64::max);
    let prob_grid = grid(1.0);
    let shap_grid = grid(max_s6);
    let candidates: Vec<GatePolicy> = match kind {
        PolicyKind::ProbOnly => prob_grid.iter().map(|&p| GatePolicy::prob_only(p)).collect(),
        PolicyKind::ShapOnly => shap_grid.iter().map(|&s| GatePolicy::shap_only(s)).collect(),
        PolicyKind::Combined => prob_grid
            .iter()
            .flat_map(|&p| shap_grid.iter().map(move |&s| GatePolicy::combined(p, s)))
            .collect(),
    };
    let mut best: Option<(GatePolicy, ConfusionCounts)> = None;
    for cand in candidates {
        let counts = evaluate(records, &cand);
        // strict improvement only, so the earliest (lowest) thresholds win ties
        if best.as_ref().is_none_or(|(_, b)| rank(&counts, b) == Ordering::Greater) {
            best = Some((cand, counts));
        }
    }
    let (policy, counts) = best.expect("non-empty grid");
    Ok(TunedPolicy {
        policy,
        train_f1: counts.metrics().f1,
        train_counts: counts,
    })
}

#[derive(Serialize, Deserialize)]
struct PolicyRecord {
    kind: PolicyKind,
    prob_threshold: Option<f64>,
    shap_threshold: Option<f64>,
    train_f1: Option<f64>,
}

pub fn write_policy(path: impl AsRef<Path>, policy: &GatePolicy, train_f1: Option<f64>) -> Result<()> {
    let rec = PolicyRecord {
        kind: policy.kind,
        prob_threshold: policy.prob_threshold,
        shap_threshold: policy.shap_threshold,
        train_f1,
    };
    let text = toml::to_string(&rec).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<(GatePolicy, Option<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let rec: PolicyRecord =
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("bad policy record: {e}")))?;
    let policy = GatePolicy {
        kind: rec.kind,
        prob_threshold: rec.prob_threshold,
        shap_threshold: rec.shap_threshold,
    };
    policy.validate()?;
    Ok((policy, rec.train_f1))
}

#[derive(Serialize, Deserialize)]
struct ScoredRow {
    event_prob: f64,
    s6: f64,
    label: Label,
}

pub fn write_scored_csv(path: impl AsRef<Path>, records: &[ScoredRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(ScoredRow {
            event_prob: r.event_prob,
            s6: r.s6,
            label: r.label,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Read `event_prob,s6,label` rows; extra columns are ignored.
pub fn read_scored_csv(path: impl AsRef<Path>) -> Result<Vec<ScoredRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<ScoredRow>()
        .map(|r| {
            let r = r?;
            Ok(ScoredRecord {
                event_prob: r.event_prob,
                s6: r.s6,
                label: r.label,
            })
        })
        .collect()
}
