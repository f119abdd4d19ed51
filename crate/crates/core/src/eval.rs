//! Detection rates, threshold calibration, ROC sweeps and method comparison.
//!
//! Every detector is reduced to a score with "alarm iff score < Λ", so one
//! set of routines serves densities and negated distances alike.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::LabeledTrace;
use crate::baselines::{kalman_detect, location_fusion_config, KalmanConfig};
use crate::datamodel::{DetectionRecord, Hypothesis};
use crate::error::{Error, Result};
use crate::fusion::ExclusionMode;
use crate::geo::EcefPosition;
use crate::pipeline::{fuse_epoch, EpochState, Pipeline, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// `n_tp / n_p`, absent without positives.
    pub p_tp: Option<f64>,
    /// `n_fp / (n − n_p)`, absent without negatives.
    pub p_fp: Option<f64>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_p: usize,
    pub n: usize,
}

fn rates(n_tp: usize, n_fp: usize, n_p: usize, n: usize) -> Rates {
    Rates {
        p_tp: (n_p > 0).then(|| n_tp as f64 / n_p as f64),
        p_fp: (n > n_p).then(|| n_fp as f64 / (n - n_p) as f64),
        n_tp,
        n_fp,
        n_p,
        n,
    }
}

/// Rates of the recorded decisions. Records without a truth label are
/// skipped.
pub fn score(records: &[DetectionRecord]) -> Rates {
    let (mut tp, mut fp, mut p, mut n) = (0, 0, 0, 0);
    for r in records {
        let Some(truth) = r.truth_label else { continue };
        n += 1;
        let alarm = r.decision == Hypothesis::H1;
        match truth {
            Hypothesis::H1 => {
                p += 1;
                tp += alarm as usize;
            }
            Hypothesis::H0 => fp += alarm as usize,
        }
    }
    rates(tp, fp, p, n)
}

/// `(score, truth)` per labeled record. Records without a score never alarm.
pub fn scored(records: &[DetectionRecord]) -> Vec<(f64, Hypothesis)> {
    records
        .iter()
        .filter_map(|r| {
            r.truth_label
                .map(|t| (r.score().unwrap_or(f64::INFINITY), t))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub p_tp: Option<f64>,
    pub p_fp: Option<f64>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_p: usize,
    pub n: usize,
}

pub fn evaluate_at(scores: &[(f64, Hypothesis)], lambda: f64) -> RocPoint {
    let (mut tp, mut fp, mut p) = (0, 0, 0);
    for &(s, t) in scores {
        let alarm = s < lambda;
        match t {
            Hypothesis::H1 => {
                p += 1;
                tp += alarm as usize;
            }
            Hypothesis::H0 => fp += alarm as usize,
        }
    }
    let r = rates(tp, fp, p, scores.len());
    RocPoint {
        lambda,
        p_tp: r.p_tp,
        p_fp: r.p_fp,
        n_tp: tp,
        n_fp: fp,
        n_p: p,
        n: scores.len(),
    }
}

/// Largest threshold whose false-positive rate on `negatives` does not
/// exceed `target`: the `⌊target·n⌋`-th smallest negative score, so at most
/// that many negatives score strictly below it.
pub fn calibrate_lambda(negatives: &[f64], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidInput(format!(
            "target false-positive rate {target} outside [0, 1]"
        )));
    }
    if negatives.is_empty() {
        return Err(Error::InvalidInput(
            "no negative epochs to calibrate on".into(),
        ));
    }
    let mut s = negatives.to_vec();
    s.sort_by(f64::total_cmp);
    let k = (target * s.len() as f64 + 1e-9).floor() as usize;
    Ok(if k >= s.len() { f64::INFINITY } else { s[k] })
}

/// ROC points at explicit thresholds, sorted by `(p_fp, p_tp)`.
pub fn roc_sweep(scores: &[(f64, Hypothesis)], lambdas: &[f64]) -> Result<Vec<RocPoint>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty threshold list".into()));
    }
    let mut pts: Vec<RocPoint> = lambdas
        .par_iter()
        .map(|&l| evaluate_at(scores, l))
        .collect();
    sort_points(&mut pts);
    Ok(pts)
}

/// ROC points at thresholds calibrated on the negatives to each target
/// false-positive rate.
pub fn roc_at_targets(scores: &[(f64, Hypothesis)], targets: &[f64]) -> Result<Vec<RocPoint>> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("empty target list".into()));
    }
    let neg: Vec<f64> = scores
        .iter()
        .filter(|(_, t)| *t == Hypothesis::H0)
        .map(|(s, _)| *s)
        .collect();
    let lambdas = targets
        .iter()
        .map(|&t| calibrate_lambda(&neg, t))
        .collect::<Result<Vec<_>>>()?;
    roc_sweep(scores, &lambdas)
}

fn sort_points(pts: &mut [RocPoint]) {
    pts.sort_by(|a, b| {
        let key = |p: &RocPoint| (p.p_fp.unwrap_or(0.0), p.p_tp.unwrap_or(0.0));
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.lambda.total_cmp(&b.lambda))
    });
}

/// Thresholds at every distinct score plus `+∞`, which traces the full
/// empirical ROC curve.
pub fn all_thresholds(scores: &[(f64, Hypothesis)]) -> Vec<f64> {
    let mut l: Vec<f64> = scores
        .iter()
        .map(|(s, _)| *s)
        .filter(|s| s.is_finite())
        .collect();
    l.sort_by(f64::total_cmp);
    l.dedup();
    l.push(f64::INFINITY);
    l
}

/// Distance from each H1 record's recovered position to the truth.
pub fn recovery_errors(records: &[DetectionRecord], truth: &[EcefPosition]) -> Vec<f64> {
    records
        .iter()
        .zip(truth)
        .filter(|(r, _)| r.decision == Hypothesis::H1)
        .filter_map(|(r, t)| r.recovered_position.map(|p| p.distance(*t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProposedExclusion,
    ProposedNoExclusion,
    LocationFusion,
    Kalman,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ProposedExclusion,
        Method::ProposedNoExclusion,
        Method::LocationFusion,
        Method::Kalman,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ProposedExclusion => "proposed_exclusion",
            Method::ProposedNoExclusion => "proposed_no_exclusion",
            Method::LocationFusion => "location_fusion",
            Method::Kalman => "kalman",
        }
    }
}

/// Records from stage-1 states under one detector setting.
pub fn fuse_states(
    states: &[EpochState],
    trace: &LabeledTrace,
    config: &PipelineConfig,
) -> Vec<DetectionRecord> {
    let frame = trace.trace.frame();
    states
        .iter()
        .zip(&trace.truth_labels)
        .map(|(s, &t)| {
            let mut r = fuse_epoch(s, &frame, &config.filter, &config.detector, false).record;
            r.truth_label = Some(t);
            r
        })
        .collect()
}

pub fn process(trace: &LabeledTrace, config: &PipelineConfig) -> Vec<EpochState> {
    Pipeline::new(config.clone(), &trace.anchors, trace.trace.frame()).process_trace(&trace.trace)
}

/// Per-epoch records of every method on one labeled trace.
pub fn run_methods(
    trace: &LabeledTrace,
    config: &PipelineConfig,
    kalman: &KalmanConfig,
) -> Vec<(Method, Vec<DetectionRecord>)> {
    let states = process(trace, config);
    let mut with = config.clone();
    if with.detector.exclusion == ExclusionMode::Off {
        with.detector.exclusion = ExclusionMode::FromPeak;
    }
    let mut without = config.clone();
    without.detector.exclusion = ExclusionMode::Off;
    let fusion_cfg = location_fusion_config(config);
    let fusion_states = process(trace, &fusion_cfg);
    vec![
        (
            Method::ProposedExclusion,
            fuse_states(&states, trace, &with),
        ),
        (
            Method::ProposedNoExclusion,
            fuse_states(&states, trace, &without),
        ),
        (
            Method::LocationFusion,
            fuse_states(&fusion_states, trace, &fusion_cfg),
        ),
        (
            Method::Kalman,
            kalman_detect(&trace.trace, kalman, Some(&trace.truth_labels)),
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub target_fp: f64,
    pub lambda: f64,
    pub p_fp: f64,
    pub p_tp: f64,
}

/// Every method at each target false-positive rate, thresholds calibrated
/// on the trace's negatives.
pub fn compare_methods(
    trace: &LabeledTrace,
    config: &PipelineConfig,
    kalman: &KalmanConfig,
    targets: &[f64],
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for (method, records) in run_methods(trace, config, kalman) {
        let s = scored(&records);
        for &t in targets {
            let neg: Vec<f64> = s
                .iter()
                .filter(|(_, h)| *h == Hypothesis::H0)
                .map(|(v, _)| *v)
                .collect();
            let lambda = calibrate_lambda(&neg, t)?;
            let p = evaluate_at(&s, lambda);
            rows.push(ComparisonRow {
                method,
                target_fp: t,
                lambda,
                p_fp: p.p_fp.unwrap_or(0.0),
                p_tp: p.p_tp.unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}

/// Mean over traces of rows keyed by `(method, target_fp)`; `lambda` is
/// the mean threshold.
pub fn average_rows(per_trace: &[Vec<ComparisonRow>]) -> Vec<ComparisonRow> {
    let Some(first) = per_trace.first() else {
        return Vec::new();
    };
    let n = per_trace.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mean = |f: fn(&ComparisonRow) -> f64| {
                per_trace.iter().map(|rows| f(&rows[i])).sum::<f64>() / n
            };
            ComparisonRow {
                method: r.method,
                target_fp: r.target_fp,
                lambda: mean(|r| r.lambda),
                p_fp: mean(|r| r.p_fp),
                p_tp: mean(|r| r.p_tp),
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Columns: `lambda,p_fp,p_tp,n_tp,n_fp,n_p,n`.
pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "p_fp", "p_tp", "n_tp", "n_fp", "n_p", "n"])?;
    for p in points {
        w.write_record([
            format!("{}", p.lambda),
            fmt_opt(p.p_fp),
            fmt_opt(p.p_tp),
            p.n_tp.to_string(),
            p.n_fp.to_string(),
            p.n_p.to_string(),
            p.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Threshold-ordered `(lambda, p_fp, p_tp)` triples.
pub fn write_relation_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "p_fp", "p_tp"])?;
    for p in &pts {
        w.write_record([format!("{}", p.lambda), fmt_opt(p.p_fp), fmt_opt(p.p_tp)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `method,target_fp,lambda,p_fp,p_tp`.
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "target_fp", "lambda", "p_fp", "p_tp"])?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            format!("{}", r.target_fp),
            format!("{}", r.lambda),
            format!("{}", r.p_fp),
            format!("{}", r.p_tp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_detections_jsonl(out: &mut impl Write, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(decision: Hypothesis, truth: Hypothesis) -> DetectionRecord {
        DetectionRecord {
            epoch: 1,
            likelihood: None,
            distance: None,
            decision,
            recovered_position: None,
            truth_label: Some(truth),
            flags: Vec::new(),
        }
    }

    #[test]
    fn counting_examples() {
        use Hypothesis::*;
        let mut rs: Vec<_> = (0..10)
            .map(|i| rec(if i < 9 { H1 } else { H0 }, H1))
            .collect();
        rs.extend((0..5).map(|_| rec(H0, H0)));
        let r = score(&rs);
        assert_eq!((r.p_tp, r.p_fp), (Some(0.9), Some(0.0)));
        let all_h1: Vec<_> = rs.iter().map(|r| rec(H1, r.truth_label.unwrap())).collect();
        assert_eq!(score(&all_h1).p_fp, Some(1.0));
    }

    #[test]
    fn calibration_bounds_false_positives() {
        let neg: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let l = calibrate_lambda(&neg, 0.05).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(neg.iter().filter(|&&v| v < l).count(), 5);
        assert_eq!(calibrate_lambda(&neg, 1.0).unwrap(), f64::INFINITY);
        assert!(calibrate_lambda(&[], 0.1).is_err());
    }
}
