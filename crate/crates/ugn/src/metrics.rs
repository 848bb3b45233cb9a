//! Evaluation measures: accuracy with macro precision/recall/F1, area
//! under the precision-recall curve, Pearson correlation, and HITS@1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Ordered named scalars, serializable as `key<TAB>value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy plus macro-averaged precision, recall, and F1 over the classes
/// observed in either vector.
pub fn classification_metrics(pred: &[usize], truth: &[usize]) -> Result<MetricReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(UgnError::InvalidArgument(format!(
            "prediction/truth lengths {} vs {} (nonempty, equal required)",
            pred.len(),
            truth.len()
        )));
    }
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    let classes: BTreeSet<usize> = pred.iter().chain(truth).copied().collect();
    let mut psum = 0.0;
    let mut rsum = 0.0;
    let mut fsum = 0.0;
    for &c in &classes {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as f64;
        let fp = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t != c)
            .count() as f64;
        let fn_ = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p != c && t == c)
            .count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        psum += p;
        rsum += r;
        fsum += f;
    }
    let k = classes.len() as f64;
    let mut report = MetricReport::new();
    report.push("accuracy", correct as f64 / pred.len() as f64);
    report.push("macro_precision", psum / k);
    report.push("macro_recall", rsum / k);
    report.push("macro_f1", fsum / k);
    report.push("samples", pred.len() as f64);
    Ok(report)
}

/// Area under the precision-recall step curve. Tied scores enter the
/// curve together; both classes must be present.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(UgnError::InvalidArgument(format!(
            "score/label lengths {} vs {} (nonempty, equal required)",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(UgnError::InvalidArgument(
            "AUPRC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Take the whole group of tied scores at once.
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Sample Pearson correlation. Both inputs need length >= 2 and nonzero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(UgnError::InvalidArgument(format!(
            "pearson lengths {} vs {} (equal, >= 2 required)",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(UgnError::InvalidArgument(
            "pearson undefined for zero-variance input".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of two square matrices over their
/// upper-triangle off-diagonal entries.
pub fn pearson_matrices(a: &Tensor, b: &Tensor) -> Result<f64> {
    let sh = a.shape();
    if sh != b.shape() || sh.len() != 2 || sh[0] != sh[1] {
        return Err(UgnError::shape("pearson_matrices", a.shape(), b.shape()));
    }
    let n = sh[0];
    let mut xs = Vec::with_capacity(n * (n - 1) / 2);
    let mut ys = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            xs.push(a.get2(i, j));
            ys.push(b.get2(i, j));
        }
    }
    pearson(&xs, &ys)
}

/// Fraction of queries whose top prediction matches the truth.
pub fn hits_at_1(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(UgnError::InvalidArgument(format!(
            "prediction/truth lengths {} vs {} (nonempty, equal required)",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force AUPRC: evaluate precision/recall at every distinct
    /// score threshold and accumulate the step area.
    fn auprc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let positives = labels.iter().filter(|&&l| l).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= t {
                    if l {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / positives;
            let precision = tp / (tp + fp);
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn accuracy_cases() {
        let r = classification_metrics(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((r.get("accuracy").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let r = classification_metrics(&[1, 1], &[1, 1]).unwrap();
        assert_eq!(r.get("accuracy").unwrap(), 1.0);
        let r = classification_metrics(&[0, 1], &[1, 0]).unwrap();
        assert_eq!(r.get("accuracy").unwrap(), 0.0);
    }

    #[test]
    fn accuracy_is_mean_indicator() {
        let pred = [0usize, 2, 1, 1, 0, 2, 2];
        let truth = [0usize, 1, 1, 2, 0, 2, 0];
        let r = classification_metrics(&pred, &truth).unwrap();
        let brute: f64 = pred
            .iter()
            .zip(&truth)
            .map(|(a, b)| if a == b { 1.0 } else { 0.0 })
            .sum::<f64>()
            / pred.len() as f64;
        assert_eq!(r.get("accuracy").unwrap(), brute);
    }

    #[test]
    fn macro_f1_perfect_prediction() {
        let r = classification_metrics(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(r.get("macro_f1").unwrap(), 1.0);
        assert_eq!(r.get("macro_precision").unwrap(), 1.0);
        assert_eq!(r.get("macro_recall").unwrap(), 1.0);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(hits_at_1(&[], &[]).is_err());
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn auprc_perfect_ranking() {
        assert_eq!(auprc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn auprc_one_class_errors() {
        assert!(auprc(&[0.9, 0.1], &[true, true]).is_err());
        assert!(auprc(&[0.9, 0.1], &[false, false]).is_err());
    }

    #[test]
    fn auprc_matches_oracle_on_fixed_instances() {
        let cases: Vec<(Vec<f64>, Vec<bool>)> = vec![
            (vec![0.1, 0.9], vec![true, false]),
            (
                vec![0.7, 0.7, 0.3, 0.2, 0.9],
                vec![true, false, true, false, true],
            ),
            (
                vec![0.5, 0.5, 0.5, 0.1],
                vec![true, true, false, false],
            ),
        ];
        for (scores, labels) in cases {
            let got = auprc(&scores, &labels).unwrap();
            let want = auprc_oracle(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn auprc_monotone_transform_invariant() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65];
        let labels = [false, true, false, true, true];
        let base = auprc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        let got = auprc(&squashed, &labels).unwrap();
        assert!((base - got).abs() < 1e-15);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn pearson_matrices_ignore_diagonal() {
        // Matrices differ only on the diagonal: correlation must be 1.
        let a = Tensor::from_rows(&[
            vec![1.0, 0.3, 0.7],
            vec![0.3, 1.0, -0.2],
            vec![0.7, -0.2, 1.0],
        ])
        .unwrap();
        let mut b = a.clone();
        b.set2(1, 1, -5.0);
        assert!((pearson_matrices(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hits_at_1_fraction() {
        let r = hits_at_1(&[1, 2, 3, 4, 5, 0, 0, 0, 0, 0], &[1, 2, 3, 9, 9, 9, 9, 9, 9, 9])
            .unwrap();
        assert!((r - 0.3).abs() < 1e-15);
    }

    #[test]
    fn report_round_trips_as_text() {
        let mut r = MetricReport::new();
        r.push("accuracy", 0.875);
        r.push("samples", 8.0);
        assert_eq!(r.to_text(), "accuracy\t0.875\nsamples\t8\n");
    }
}
