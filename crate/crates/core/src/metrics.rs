//! Confusion matrices, per-class one-vs-rest metrics, ROC curves and the
//! JSON/CSV evaluation report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rows are actual classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if k == 0 || counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Usage(format!("confusion matrix must be {k}x{k} to match its class names")));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Plain-text table, rows labelled "actual", columns "predicted".
    pub fn render(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(|n| n.len() + 10)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(8);
        let mut out = format!("{:<width$}", "");
        for n in &self.class_names {
            out.push_str(&format!(" {:>width$}", format!("predicted {n}")));
        }
        out.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(&format!("{:<width$}", format!("actual {n}")));
            for c in row {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(actual, predicted)` index pairs.
pub fn confusion_from_predictions(actual: &[usize], predicted: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Usage(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&a, &p)) in actual.iter().zip(predicted).enumerate() {
        if a >= k || p >= k {
            return Err(Error::Usage(format!(
                "pair {i} ({a}, {p}) has a class index outside 0..{k}"
            )));
        }
        counts[a][p] += 1;
    }
    ConfusionMatrix::new(counts, class_names.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    /// Sensitivity.
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    /// One entry per 0/0 ratio that was reported as 0.
    pub warnings: Vec<String>,
}

/// `num / den`, or 0 with a warning when `den` is 0.
fn ratio(num: u64, den: u64, what: &str, class: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} of {class} is 0/0, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics for every class. For class `c`: TP is the diagonal
/// cell, FN the rest of row `c`, FP the rest of column `c`, TN everything
/// else.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<ConfusionMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("confusion matrix is empty".into()));
    }
    let k = cm.num_classes();
    let mut warnings = Vec::new();
    let classes = (0..k)
        .map(|c| {
            let name = &cm.class_names[c];
            let tp = cm.counts[c][c];
            let fn_ = cm.counts[c].iter().sum::<u64>() - tp;
            let fp = (0..k).map(|r| cm.counts[r][c]).sum::<u64>() - tp;
            let tn = total - tp - fn_ - fp;
            let precision = ratio(tp, tp + fp, "precision", name, &mut warnings);
            let recall = ratio(tp, tp + fn_, "recall", name, &mut warnings);
            let specificity = ratio(tn, tn + fp, "specificity", name, &mut warnings);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                warnings.push(format!("f1 of {name} is 0/0, reported as 0"));
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                specificity,
                f1,
            }
        })
        .collect();
    Ok(ConfusionMetrics {
        accuracy: cm.trace() as f64 / total as f64,
        classes,
        warnings,
    })
}

/// Receiver operating characteristic of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class_name: String,
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve of `scores` against binary `labels` (true = positive).
///
/// The threshold sweeps the distinct scores from high to low; samples with
/// equal scores enter together, so ties produce a diagonal segment. The area
/// is integrated with the trapezoid rule and therefore equals the
/// Mann-Whitney probability that a positive outscores a negative, ties
/// counting one half.
pub fn roc_curve(scores: &[f64], labels: &[bool], class_name: &str) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Usage("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Usage(format!(
            "ROC for {class_name} needs both positive and negative samples (got {pos} and {neg})"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0.0; // twice the area, in units of 1/(pos*neg)
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as f64;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        class_name: class_name.to_string(),
        points,
        auc: area2 / (2.0 * pos as f64 * neg as f64),
    })
}

/// One-vs-rest ROC curves from per-sample class probabilities. Classes
/// without both positive and negative samples are skipped and reported in
/// the returned warnings.
pub fn one_vs_rest_roc(
    probabilities: &[Vec<f64>],
    actual: &[usize],
    class_names: &[String],
) -> Result<(Vec<RocCurve>, Vec<String>)> {
    if probabilities.len() != actual.len() {
        return Err(Error::Usage(format!(
            "{} probability rows but {} labels",
            probabilities.len(),
            actual.len()
        )));
    }
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let scores: Vec<f64> = probabilities
            .iter()
            .map(|p| p.get(c).copied().ok_or_else(|| Error::Usage(format!("probability row lacks class {c}"))))
            .collect::<Result<_>>()?;
        let labels: Vec<bool> = actual.iter().map(|&a| a == c).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            warnings.push(format!("AUC of {name} is undefined on this set (single-class labels)"));
            continue;
        }
        curves.push(roc_curve(&scores, &labels, name)?);
    }
    Ok((curves, warnings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Everything an evaluation run produces. Serializes to the report JSON;
/// ROC points go to the separate CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub schema_version: u32,
    pub model: String,
    pub accuracy: f64,
    pub classes: Vec<ClassReport>,
    pub confusion: Vec<Vec<u64>>,
    pub auc: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub roc: Vec<RocCurve>,
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, cm: &ConfusionMatrix, roc: Vec<RocCurve>) -> Result<Self> {
        let m = metrics_from_confusion(cm)?;
        Ok(MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.into(),
            accuracy: m.accuracy,
            classes: cm
                .class_names
                .iter()
                .zip(&m.classes)
                .map(|(name, c)| ClassReport {
                    name: name.clone(),
                    precision: c.precision,
                    recall: c.recall,
                    specificity: c.specificity,
                    f1: c.f1,
                })
                .collect(),
            confusion: cm.counts.clone(),
            auc: roc.iter().map(|r| (r.class_name.clone(), r.auc)).collect(),
            warnings: m.warnings,
            roc,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `class,fpr,tpr` rows, classes in report order, points in curve order.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,fpr,tpr\n");
        for r in &self.roc {
            for (fpr, tpr) in &r.points {
                out.push_str(&format!("{},{fpr},{tpr}\n", r.class_name));
            }
        }
        out
    }

    /// Metrics table rounded half away from zero to 4 decimals.
    pub fn render_table(&self) -> String {
        let mut out = format!("accuracy {}\n", round4(self.accuracy));
        out.push_str("class        specificity  precision  recall  f1\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{:<12} {:<12} {:<10} {:<7} {}\n",
                c.name,
                round4(c.specificity),
                round4(c.precision),
                round4(c.recall),
                round4(c.f1)
            ));
        }
        out
    }
}

/// Formats with 4 decimals, rounding half away from zero.
pub fn round4(v: f64) -> String {
    format!("{:.4}", (v * 1e4).round() / 1e4)
}

pub fn write_report(report: &MetricsReport, json_path: impl AsRef<Path>, roc_csv_path: impl AsRef<Path>) -> Result<()> {
    let (jp, rp) = (json_path.as_ref(), roc_csv_path.as_ref());
    fs::write(jp, report.to_json()).map_err(|e| Error::io(jp, e))?;
    fs::write(rp, report.roc_csv()).map_err(|e| Error::io(rp, e))?;
    Ok(())
}

/// Reads a report JSON and, optionally, its ROC CSV.
pub fn read_report(json_path: impl AsRef<Path>, roc_csv_path: Option<&Path>) -> Result<MetricsReport> {
    let jp = json_path.as_ref();
    let text = fs::read_to_string(jp).map_err(|e| Error::io(jp, e))?;
    let mut report: MetricsReport =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", jp.display())))?;
    if let Some(rp) = roc_csv_path {
        let text = fs::read_to_string(rp).map_err(|e| Error::io(rp, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut curves: Vec<RocCurve> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", rp.display())))?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Data(format!("{}: bad number in {rec:?}", rp.display())))
            };
            let name = rec.get(0).unwrap_or("").to_string();
            let point = (parse(1)?, parse(2)?);
            match curves.last_mut() {
                Some(c) if c.class_name == name => c.points.push(point),
                _ => curves.push(RocCurve {
                    auc: report.auc.get(&name).copied().unwrap_or(f64::NAN),
                    class_name: name,
                    points: vec![point],
                }),
            }
        }
        report.roc = curves;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        ["covid", "normal", "pneumonia"][..k].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_classifier_is_diagonal() {
        let a = [0, 1, 2, 2, 1, 0, 0];
        let cm = confusion_from_predictions(&a, &a, &names(3)).unwrap();
        assert_eq!(cm.counts, vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn table_two_outcomes() {
        // 39 covid (38 caught, 1 missed) and 81 normal, all correct.
        let mut actual = vec![0; 39];
        actual.extend(vec![1; 81]);
        let mut predicted = vec![0; 38];
        predicted.push(1);
        predicted.extend(vec![1; 81]);
        let cm = confusion_from_predictions(&actual, &predicted, &names(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![38, 1], vec![0, 81]]);
    }

    #[test]
    fn prediction_errors() {
        assert!(matches!(confusion_from_predictions(&[0, 1], &[0], &names(2)), Err(Error::Usage(_))));
        assert!(matches!(confusion_from_predictions(&[0, 2], &[0, 1], &names(2)), Err(Error::Usage(_))));
        let empty = ConfusionMatrix::new(vec![vec![0, 0], vec![0, 0]], names(2)).unwrap();
        assert!(matches!(metrics_from_confusion(&empty), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_denominators_warn() {
        let cm = ConfusionMatrix::new(vec![vec![0, 0], vec![0, 5]], names(2)).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.classes[0].precision, 0.0);
        assert_eq!(m.classes[0].recall, 0.0);
        assert_eq!(m.classes[0].f1, 0.0);
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn binary_recall_is_other_specificity() {
        let cm = ConfusionMatrix::new(vec![vec![17, 4], vec![6, 30]], names(2)).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.classes[0].recall, m.classes[1].specificity);
        assert_eq!(m.classes[1].recall, m.classes[0].specificity);
        assert_eq!(m.accuracy, 47.0 / 57.0);
    }

    #[test]
    fn roc_basic_cases() {
        let r = roc_curve(&[0.9, 0.9, 0.1, 0.1], &[true, true, false, false], "covid").unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));

        // Pairs (0.8,0.6) (0.8,0.2) (0.4,0.2) win, (0.4,0.6) loses: 3/4.
        let r = roc_curve(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false], "covid").unwrap();
        assert_eq!(r.auc, 0.75);

        let tied = roc_curve(&[0.5; 4], &[true, false, true, false], "x").unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);

        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true], "x"), Err(Error::Usage(_))));
    }

    #[test]
    fn one_vs_rest_skips_absent_classes() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.6, 0.3, 0.1]];
        let (curves, warnings) = one_vs_rest_roc(&probs, &[0, 1, 0], &names(3)).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(curves.iter().all(|c| c.auc == 1.0));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round4(0.99375), "0.9938");
        assert_eq!(round4(0.98333333), "0.9833");
        assert_eq!(round4(1.0), "1.0000");
    }

    #[test]
    fn confusion_render_orientation() {
        let cm = ConfusionMatrix::new(vec![vec![38, 1], vec![0, 81]], names(2)).unwrap();
        let text = cm.render();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("predicted covid") && lines[0].contains("predicted normal"));
        assert!(lines[1].starts_with("actual covid") && lines[1].trim_end().ends_with('1'));
        assert!(lines[2].starts_with("actual normal") && lines[2].trim_end().ends_with("81"));
    }

    #[test]
    fn write_to_empty_path_fails() {
        let cm = ConfusionMatrix::new(vec![vec![1, 0], vec![0, 1]], names(2)).unwrap();
        let r = MetricsReport::new("m", &cm, Vec::new()).unwrap();
        assert!(matches!(write_report(&r, "", ""), Err(Error::Io { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for (i, &si) in scores.iter().enumerate() {
                for (j, &sj) in scores.iter().enumerate() {
                    if labels[i] && !labels[j] {
                        pairs += 1.0;
                        wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                    }
                }
            }
            wins / pairs
        }

        proptest! {
            #[test]
            fn auc_equals_pair_count(
                data in proptest::collection::vec((0u8..12, any::<bool>()), 2..60)
            ) {
                let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 11.0).collect();
                let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
                prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
                let r = roc_curve(&scores, &labels, "c").unwrap();
                prop_assert!((r.auc - mann_whitney(&scores, &labels)).abs() < 1e-12);
                prop_assert_eq!(r.points[0], (0.0, 0.0));
                prop_assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
                for w in r.points.windows(2) {
                    prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
                }
            }

            #[test]
            fn accuracy_is_trace_over_total(counts in proptest::collection::vec(0u64..50, 9)) {
                let rows: Vec<Vec<u64>> = counts.chunks(3).enumerate()
                    .map(|(i, r)| r.iter().enumerate().map(|(j, &c)| if i == j { c + 60 } else { c }).collect())
                    .collect();
                let cm = ConfusionMatrix::new(rows, names(3)).unwrap();
                let m = metrics_from_confusion(&cm).unwrap();
                prop_assert_eq!(m.accuracy, cm.trace() as f64 / cm.total() as f64);
                for c in &m.classes {
                    for v in [c.precision, c.recall, c.specificity, c.f1] {
                        prop_assert!((0.0..=1.0).contains(&v));
                    }
                }
            }
        }
    }
}
