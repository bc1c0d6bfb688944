//! Multi-label evaluation: micro/macro F1, precision@n, micro PR AUC, Pearson
//! correlation and frequency-binned F1.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::LabelGroup;
use crate::error::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;
/// Scores strictly above this value count as predicted present.
pub const DECISION_THRESHOLD: f64 = 0.5;
pub const N_FREQUENCY_BINS: usize = 10;

/// Row-major `n_docs × n_labels` scores with matching binary gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    n_docs: usize,
    n_labels: usize,
    scores: Vec<f64>,
    gold: Vec<bool>,
}

impl PredictionMatrix {
    pub fn new(n_docs: usize, n_labels: usize, scores: Vec<f64>, gold: Vec<bool>) -> Result<Self> {
        if scores.len() != n_docs * n_labels || gold.len() != scores.len() {
            return Err(Error::Dimension(format!(
                "prediction matrix {n_docs}x{n_labels} got {} scores and {} gold cells",
                scores.len(),
                gold.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("score {s} outside [0,1]")));
        }
        Ok(PredictionMatrix {
            n_docs,
            n_labels,
            scores,
            gold,
        })
    }

    pub fn from_rows(scores: &[Vec<f64>], gold: &[Vec<bool>]) -> Result<Self> {
        let n_docs = scores.len();
        let n_labels = scores.first().map_or(0, Vec::len);
        if gold.len() != n_docs || scores.iter().any(|r| r.len() != n_labels) {
            return Err(Error::Dimension("ragged prediction rows".into()));
        }
        if gold.iter().any(|r| r.len() != n_labels) {
            return Err(Error::Dimension("ragged gold rows".into()));
        }
        Self::new(
            n_docs,
            n_labels,
            scores.concat(),
            gold.iter().flatten().copied().collect(),
        )
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn score(&self, d: usize, j: usize) -> f64 {
        self.scores[d * self.n_labels + j]
    }

    pub fn gold(&self, d: usize, j: usize) -> bool {
        self.gold[d * self.n_labels + j]
    }

    pub fn predicted(&self, d: usize, j: usize) -> bool {
        self.score(d, j) > DECISION_THRESHOLD
    }

    pub fn support(&self, j: usize) -> usize {
        (0..self.n_docs).filter(|&d| self.gold(d, j)).count()
    }

    pub fn all_labels(&self) -> Vec<usize> {
        (0..self.n_labels).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn count(m: &PredictionMatrix, labels: &[usize]) -> Self {
        let mut c = Confusion::default();
        for d in 0..m.n_docs {
            for &j in labels {
                match (m.predicted(d, j), m.gold(d, j)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_subset(m: &PredictionMatrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("label subset"));
    }
    if let Some(&j) = labels.iter().find(|&&j| j >= m.n_labels) {
        return Err(Error::Dimension(format!(
            "label {j} out of range {}",
            m.n_labels
        )));
    }
    Ok(())
}

pub fn micro_f1(m: &PredictionMatrix, labels: &[usize]) -> Result<f64> {
    check_subset(m, labels)?;
    Ok(Confusion::count(m, labels).f1())
}

/// Mean per-label F1. Every label in `labels` must have gold support.
pub fn macro_f1(m: &PredictionMatrix, labels: &[usize]) -> Result<f64> {
    check_subset(m, labels)?;
    if let Some(&j) = labels.iter().find(|&&j| m.support(j) == 0) {
        return Err(Error::Data(format!(
            "label {j} has no gold positives; macro F1 undefined"
        )));
    }
    let sum: f64 = labels.iter().map(|&j| Confusion::count(m, &[j]).f1()).sum();
    Ok(sum / labels.len() as f64)
}

/// Mean over documents of the hit rate among the `n` top-scored labels. Equal
/// scores are ranked by lower label index.
pub fn precision_at_n(m: &PredictionMatrix, n: usize) -> Result<f64> {
    if n == 0 || n > m.n_labels {
        return Err(Error::Config(format!(
            "P@{n} needs 1 <= n <= {}",
            m.n_labels
        )));
    }
    if m.n_docs == 0 {
        return Err(Error::Empty("no documents"));
    }
    let mut order: Vec<usize> = Vec::with_capacity(m.n_labels);
    let mut total = 0.0;
    for d in 0..m.n_docs {
        order.clear();
        order.extend(0..m.n_labels);
        order.sort_by(|&a, &b| m.score(d, b).total_cmp(&m.score(d, a)).then(a.cmp(&b)));
        let hits = order[..n].iter().filter(|&&j| m.gold(d, j)).count();
        total += hits as f64 / n as f64;
    }
    Ok(total / m.n_docs as f64)
}

/// Operating point of the `score > threshold` decision rule, pooled over all cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn pr_point(m: &PredictionMatrix, threshold: f64) -> PrPoint {
    let mut c = Confusion::default();
    for (&s, &g) in m.scores.iter().zip(&m.gold) {
        match (s > threshold, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    PrPoint {
        threshold,
        precision: c.precision(),
        recall: c.recall(),
    }
}

/// Every distinct operating point of `score > t` for `t` in `[0, 1)`, in order of
/// increasing recall. Each point's threshold is the lowest score it admits.
pub fn pr_curve(m: &PredictionMatrix) -> Result<Vec<PrPoint>> {
    let positives = m.gold.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Err(Error::Data(
            "PR AUC needs at least one gold positive".into(),
        ));
    }
    let mut cells: Vec<(f64, bool)> = m
        .scores
        .iter()
        .zip(&m.gold)
        .filter(|(&s, _)| s > 0.0)
        .map(|(&s, &g)| (s, g))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < cells.len() {
        let s = cells[i].0;
        while i < cells.len() && cells[i].0 == s {
            if cells[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: s,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Area under the pooled micro precision–recall curve, with precision held
/// constant over each recall step.
pub fn pr_auc(m: &PredictionMatrix) -> Result<f64> {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in pr_curve(m)? {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(area)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension("pearson inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Data("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Data("pearson undefined for zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Two-sided p-value of a Pearson coefficient `r` over `n` points (t-test, n−2 d.o.f.).
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let dof = (n - 2) as f64;
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n_labels: usize,
    /// `None` for an empty bin.
    pub micro_f1: Option<f64>,
}

/// Micro F1 over ten equal-width bins of `ln(train_count)`. Only labels with a
/// training count and at least one gold positive in `m` take part.
pub fn frequency_binned_f1(m: &PredictionMatrix, train_counts: &[usize]) -> Result<Vec<BinRow>> {
    if train_counts.len() != m.n_labels {
        return Err(Error::Dimension(
            "train counts do not match the label space".into(),
        ));
    }
    let eligible: Vec<usize> = (0..m.n_labels)
        .filter(|&j| train_counts[j] > 0 && m.support(j) > 0)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(
            "no labels occur in both train and evaluation data".into(),
        ));
    }
    let logs: Vec<f64> = eligible
        .iter()
        .map(|&j| (train_counts[j] as f64).ln())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / N_FREQUENCY_BINS as f64;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); N_FREQUENCY_BINS];
    for (&j, &x) in eligible.iter().zip(&logs) {
        let b = if width > 0.0 {
            (((x - lo) / width).floor() as usize).min(N_FREQUENCY_BINS - 1)
        } else {
            0
        };
        members[b].push(j);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(b, labels)| BinRow {
            bin_lo: lo + width * b as f64,
            bin_hi: if b + 1 == N_FREQUENCY_BINS {
                hi
            } else {
                lo + width * (b + 1) as f64
            },
            n_labels: labels.len(),
            micro_f1: if labels.is_empty() {
                None
            } else {
                Some(Confusion::count(m, labels).f1())
            },
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub p_at: Vec<usize>,
    /// Labels for macro F1; labels without gold support are skipped.
    pub macro_subset: Option<Vec<usize>>,
    pub groups: Option<Vec<LabelGroup>>,
    pub train_counts: Option<Vec<usize>>,
    /// Identifies the label space so that reports can be compared safely.
    pub label_space_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub label_space_id: String,
    pub n_docs: usize,
    pub n_labels: usize,
    pub threshold: f64,
    pub micro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub counts: Confusion,
    pub macro_f1: Option<f64>,
    pub macro_labels: usize,
    pub precision_at: BTreeMap<usize, f64>,
    pub pr_auc: Option<f64>,
    pub group_micro_f1: BTreeMap<String, f64>,
    pub log_base: String,
    pub frequency_bins: Option<Vec<BinRow>>,
}

impl MetricsReport {
    pub fn compute(m: &PredictionMatrix, opts: &ReportOptions) -> Result<Self> {
        let all = m.all_labels();
        check_subset(m, &all)?;
        let counts = Confusion::count(m, &all);
        let mut precision_at = BTreeMap::new();
        for &n in &opts.p_at {
            precision_at.insert(n, precision_at_n(m, n)?);
        }
        let (macro_f1, macro_labels) = match &opts.macro_subset {
            Some(subset) => {
                let supported: Vec<usize> = subset
                    .iter()
                    .copied()
                    .filter(|&j| j < m.n_labels && m.support(j) > 0)
                    .collect();
                if supported.is_empty() {
                    (None, 0)
                } else {
                    (Some(macro_f1(m, &supported)?), supported.len())
                }
            }
            None => (None, 0),
        };
        let has_positive = m.gold.iter().any(|&g| g);
        let pr_auc = if has_positive { Some(pr_auc(m)?) } else { None };
        let mut group_micro_f1 = BTreeMap::new();
        if let Some(groups) = &opts.groups {
            if groups.len() != m.n_labels {
                return Err(Error::Dimension(
                    "group tags do not match the label space".into(),
                ));
            }
            for g in [
                LabelGroup::Procedure,
                LabelGroup::Diagnosis,
                LabelGroup::None,
            ] {
                let members: Vec<usize> = (0..m.n_labels).filter(|&j| groups[j] == g).collect();
                if !members.is_empty() {
                    group_micro_f1
                        .insert(g.as_str().to_string(), Confusion::count(m, &members).f1());
                }
            }
        }
        let frequency_bins = match &opts.train_counts {
            Some(tc) => Some(frequency_binned_f1(m, tc)?),
            None => None,
        };
        Ok(MetricsReport {
            format_version: REPORT_FORMAT_VERSION,
            label_space_id: opts.label_space_id.clone(),
            n_docs: m.n_docs,
            n_labels: m.n_labels,
            threshold: DECISION_THRESHOLD,
            micro_f1: counts.f1(),
            micro_precision: counts.precision(),
            micro_recall: counts.recall(),
            counts,
            macro_f1,
            macro_labels,
            precision_at,
            pr_auc,
            group_micro_f1,
            log_base: "e".into(),
            frequency_bins,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Elementwise `b − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub micro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub macro_f1: Option<f64>,
    pub pr_auc: Option<f64>,
    pub precision_at: BTreeMap<usize, f64>,
    pub group_micro_f1: BTreeMap<String, f64>,
    /// Per-bin delta; `None` where either side has an empty bin.
    pub frequency_bins: Option<Vec<Option<f64>>>,
}

fn opt_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<ReportDelta> {
    if a.label_space_id != b.label_space_id || a.n_labels != b.n_labels {
        return Err(Error::Data(
            "reports are over different label spaces".into(),
        ));
    }
    let precision_at = a
        .precision_at
        .iter()
        .filter_map(|(n, va)| b.precision_at.get(n).map(|vb| (*n, vb - va)))
        .collect();
    let group_micro_f1 = a
        .group_micro_f1
        .iter()
        .filter_map(|(g, va)| b.group_micro_f1.get(g).map(|vb| (g.clone(), vb - va)))
        .collect();
    let frequency_bins = match (&a.frequency_bins, &b.frequency_bins) {
        (Some(ba), Some(bb)) => {
            let same_edges = ba.len() == bb.len()
                && ba
                    .iter()
                    .zip(bb)
                    .all(|(x, y)| x.bin_lo == y.bin_lo && x.bin_hi == y.bin_hi);
            if !same_edges {
                return Err(Error::Data("reports use different frequency bins".into()));
            }
            Some(
                ba.iter()
                    .zip(bb)
                    .map(|(x, y)| opt_delta(x.micro_f1, y.micro_f1))
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(ReportDelta {
        micro_f1: b.micro_f1 - a.micro_f1,
        micro_precision: b.micro_precision - a.micro_precision,
        micro_recall: b.micro_recall - a.micro_recall,
        macro_f1: opt_delta(a.macro_f1, b.macro_f1),
        pr_auc: opt_delta(a.pr_auc, b.pr_auc),
        precision_at,
        group_micro_f1,
        frequency_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm(scores: &[&[f64]], gold: &[&[u8]]) -> PredictionMatrix {
        let s: Vec<Vec<f64>> = scores.iter().map(|r| r.to_vec()).collect();
        let g: Vec<Vec<bool>> = gold
            .iter()
            .map(|r| r.iter().map(|&x| x == 1).collect())
            .collect();
        PredictionMatrix::from_rows(&s, &g).unwrap()
    }

    #[test]
    fn micro_f1_examples() {
        let perfect = pm(&[&[0.9, 0.1], &[0.2, 0.8]], &[&[1, 0], &[0, 1]]);
        assert_eq!(micro_f1(&perfect, &[0, 1]).unwrap(), 1.0);
        // TP=2, FP=1, FN=1
        let m = pm(
            &[&[0.9, 0.9, 0.1], &[0.9, 0.1, 0.1]],
            &[&[1, 0, 1], &[1, 0, 0]],
        );
        let c = Confusion::count(&m, &[0, 1, 2]);
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 1));
        assert!((micro_f1(&m, &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let neg = pm(&[&[0.1, 0.2]], &[&[1, 1]]);
        assert_eq!(micro_f1(&neg, &[0, 1]).unwrap(), 0.0);
        assert!(micro_f1(&neg, &[]).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let m = pm(&[&[0.5]], &[&[1]]);
        assert_eq!(micro_f1(&m, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_examples() {
        let m = pm(&[&[0.9, 0.1], &[0.1, 0.1]], &[&[1, 0], &[0, 1]]);
        assert_eq!(macro_f1(&m, &[0, 1]).unwrap(), 0.5);
        let zero_support = pm(&[&[0.9, 0.1]], &[&[1, 0]]);
        assert!(macro_f1(&zero_support, &[0, 1]).is_err());
        assert_eq!(macro_f1(&zero_support, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn precision_at_n_examples() {
        let m = pm(&[&[0.9, 0.8, 0.1]], &[&[1, 0, 1]]);
        assert_eq!(precision_at_n(&m, 2).unwrap(), 0.5);
        assert!(precision_at_n(&m, 4).is_err());
        let none = pm(&[&[0.9, 0.8, 0.1]], &[&[0, 0, 0]]);
        assert_eq!(precision_at_n(&none, 1).unwrap(), 0.0);
        // ties resolve to the lower label index
        let tie = pm(&[&[0.5, 0.5, 0.5]], &[&[0, 1, 0]]);
        assert_eq!(precision_at_n(&tie, 1).unwrap(), 0.0);
        assert_eq!(precision_at_n(&tie, 2).unwrap(), 0.5);
    }

    #[test]
    fn pr_auc_examples() {
        let m = pm(&[&[0.9, 0.1]], &[&[0, 1]]);
        assert!((pr_auc(&m).unwrap() - 0.5).abs() < 1e-15);
        let perfect = pm(
            &[&[0.9, 0.3, 0.2], &[0.1, 0.8, 0.05]],
            &[&[1, 0, 0], &[0, 1, 0]],
        );
        assert_eq!(pr_auc(&perfect).unwrap(), 1.0);
        let none = pm(&[&[0.9]], &[&[0]]);
        assert!(pr_auc(&none).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        // sxy = 3, sxx = 2, syy = 14/3 -> 3 / sqrt(28/3)
        let r = pearson(&x, &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 3.0 / (28.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.98198).abs() < 1e-5);
        assert!(pearson(&x, &[1.0, 1.0, 1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_p_value_behaves() {
        assert!(pearson_p_value(0.0, 50).unwrap() > 0.99);
        assert!(pearson_p_value(0.479, 200).unwrap() < 0.001);
        // r = 0.5, n = 10: t = 1.633 on 8 dof, two-sided p ~ 0.1411
        assert!((pearson_p_value(0.5, 10).unwrap() - 0.1411).abs() < 1e-3);
    }

    #[test]
    fn frequency_bins_examples() {
        let n_labels = 10;
        let gold: Vec<Vec<bool>> = vec![vec![true; n_labels]];
        let scores = vec![vec![0.9; n_labels]];
        let m = PredictionMatrix::from_rows(&scores, &gold).unwrap();
        let same = frequency_binned_f1(&m, &[5; 10]).unwrap();
        assert_eq!(same[0].n_labels, 10);
        assert!(same[1..].iter().all(|b| b.n_labels == 0));

        // ln(2^k) = k ln 2: ten equally spaced points
        let spread: Vec<usize> = (1..=10).map(|k| 1usize << k).collect();
        let bins = frequency_binned_f1(&m, &spread).unwrap();
        assert!(bins.iter().all(|b| b.n_labels == 1));
        assert!(bins.iter().all(|b| b.micro_f1 == Some(1.0)));
        assert!(frequency_binned_f1(&m, &[0; 10]).is_err());
    }

    #[test]
    fn compare_reports_examples() {
        let gold: &[&[u8]] = &[&[1, 0], &[0, 1]];
        let good = pm(&[&[0.9, 0.1], &[0.2, 0.8]], gold);
        let bad = pm(&[&[0.1, 0.1], &[0.2, 0.3]], gold);
        let opts = ReportOptions {
            p_at: vec![1],
            label_space_id: "x".into(),
            ..Default::default()
        };
        let a = MetricsReport::compute(&bad, &opts).unwrap();
        let b = MetricsReport::compute(&good, &opts).unwrap();
        let d = compare_reports(&a, &a).unwrap();
        assert_eq!(d.micro_f1, 0.0);
        assert_eq!(d.precision_at[&1], 0.0);
        assert_eq!(compare_reports(&a, &b).unwrap().micro_f1, 1.0);
        let other = MetricsReport {
            label_space_id: "y".into(),
            ..b.clone()
        };
        assert!(compare_reports(&a, &other).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let m = pm(&[&[0.9, 0.1], &[0.2, 0.8]], &[&[1, 0], &[0, 1]]);
        let opts = ReportOptions {
            p_at: vec![1, 2],
            macro_subset: Some(vec![0, 1]),
            groups: Some(vec![LabelGroup::Procedure, LabelGroup::Diagnosis]),
            train_counts: Some(vec![3, 7]),
            label_space_id: "ls".into(),
        };
        let r = MetricsReport::compute(&m, &opts).unwrap();
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().contains("\"format_version\": 1"));
    }

    fn matrix() -> impl Strategy<Value = PredictionMatrix> {
        (1usize..8, 1usize..8).prop_flat_map(|(n, l)| {
            (
                prop::collection::vec(0.0f64..=1.0, n * l),
                prop::collection::vec(any::<bool>(), n * l),
            )
                .prop_map(move |(s, g)| PredictionMatrix::new(n, l, s, g).unwrap())
        })
    }

    proptest! {
        #[test]
        fn union_micro_f1_between_groups(m in matrix(), split in 0usize..8) {
            let l = m.n_labels();
            let split = split.min(l);
            prop_assume!(split > 0 && split < l);
            let a: Vec<usize> = (0..split).collect();
            let b: Vec<usize> = (split..l).collect();
            let fa = micro_f1(&m, &a).unwrap();
            let fb = micro_f1(&m, &b).unwrap();
            let fu = micro_f1(&m, &m.all_labels()).unwrap();
            prop_assert!(fu >= fa.min(fb) - 1e-12 && fu <= fa.max(fb) + 1e-12);
        }

        #[test]
        fn precision_at_n_is_monotone_invariant(m in matrix(), n in 1usize..8) {
            let n = n.min(m.n_labels());
            let transformed = PredictionMatrix::new(
                m.n_docs(), m.n_labels(),
                m.scores.iter().map(|s| s.powi(3) * 0.5).collect(),
                m.gold.clone()).unwrap();
            prop_assert_eq!(precision_at_n(&m, n).unwrap(), precision_at_n(&transformed, n).unwrap());
        }

        #[test]
        fn micro_f1_matches_pr_point(m in matrix()) {
            let p = pr_point(&m, DECISION_THRESHOLD);
            let c = Confusion::count(&m, &m.all_labels());
            prop_assert_eq!(p.precision, c.precision());
            prop_assert_eq!(p.recall, c.recall());
        }

        #[test]
        fn metrics_ignore_document_order(m in matrix(), rot in 0usize..8) {
            let n = m.n_docs();
            let l = m.n_labels();
            let perm: Vec<usize> = (0..n).map(|d| (d + rot) % n).collect();
            let scores = perm.iter().flat_map(|&d| (0..l).map(move |j| (d, j))).map(|(d, j)| m.score(d, j)).collect();
            let gold = perm.iter().flat_map(|&d| (0..l).map(move |j| (d, j))).map(|(d, j)| m.gold(d, j)).collect();
            let p = PredictionMatrix::new(n, l, scores, gold).unwrap();
            let all = m.all_labels();
            prop_assert_eq!(micro_f1(&m, &all).unwrap(), micro_f1(&p, &all).unwrap());
            prop_assert!((precision_at_n(&m, 1).unwrap() - precision_at_n(&p, 1).unwrap()).abs() < 1e-12);
            if m.gold.iter().any(|&g| g) {
                prop_assert!((pr_auc(&m).unwrap() - pr_auc(&p).unwrap()).abs() < 1e-12);
            }
        }
    }
}
