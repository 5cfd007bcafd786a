//! Closed-set segmentation metrics and open-vocabulary point queries.

use std::collections::HashSet;

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::scalar::{self, sigmoid, Scalar};
use crate::trainer::Prob3D;

/// Argmax per row; ties go to the lowest class index.
pub fn predict_labels<S: Scalar>(probs: &Prob3D<S>) -> Vec<usize> {
    (0..probs.len())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(pred: &[usize], gt: &[usize], classes: usize) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&p, &g) in pred.iter().zip(gt) {
            m.add(g, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, gt: usize, pred: usize) -> Result<()> {
        if gt >= self.classes || pred >= self.classes {
            return Err(Error::Invalid(format!(
                "label pair (gt {gt}, pred {pred}) outside {} classes",
                self.classes
            )));
        }
        self.counts[gt * self.classes + pred] += 1;
        Ok(())
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Dimension {
                context: "confusion matrix merge",
                expected: self.classes,
                found: other.classes,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let col: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, col - tp, row - tp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub iou: Option<f64>,
    /// Per-class accuracy, i.e. recall.
    pub acc: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub miou: f64,
    pub macc: f64,
    pub precision: f64,
    pub recall: f64,
    pub evaluated: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let valid: Vec<f64> = values.flatten().collect();
    (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Result<Self> {
        if m.total() == 0 {
            return Err(Error::Invalid("empty evaluation set".into()));
        }
        let per_class: Vec<ClassMetrics> = (0..m.classes())
            .map(|c| {
                let (tp, fp, fn_) = m.tp_fp_fn(c);
                ClassMetrics {
                    iou: ratio(tp, tp + fp + fn_),
                    acc: ratio(tp, tp + fn_),
                    precision: ratio(tp, tp + fp),
                }
            })
            .collect();
        let macc = mean(per_class.iter().map(|c| c.acc)).unwrap_or(0.0);
        Ok(Self {
            miou: mean(per_class.iter().map(|c| c.iou)).unwrap_or(0.0),
            macc,
            precision: mean(per_class.iter().map(|c| c.precision)).unwrap_or(0.0),
            recall: macc,
            evaluated: m.total(),
            per_class,
        })
    }
}

pub fn compute_metrics(pred: &[usize], gt: &[usize], classes: usize) -> Result<MetricsReport> {
    MetricsReport::from_confusion(&ConfusionMatrix::from_labels(pred, gt, classes)?)
}

/// Named disjoint class subsets (e.g. head/common/tail).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    sets: Vec<(String, Vec<usize>)>,
}

impl ClassSplit {
    pub fn new(sets: Vec<(String, Vec<usize>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, classes) in &sets {
            for &c in classes {
                if !seen.insert(c) {
                    return Err(Error::Invalid(format!(
                        "class {c} appears in more than one split (at {name})"
                    )));
                }
            }
        }
        Ok(Self { sets })
    }

    /// Parses `name:0,1,2;other:3,4`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sets = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, list) = part
                .split_once(':')
                .ok_or_else(|| Error::Invalid(format!("split {part:?} must look like name:0,1")))?;
            let classes = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Invalid(format!("bad class index {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push((name.trim().to_string(), classes));
        }
        Self::new(sets)
    }

    pub fn sets(&self) -> &[(String, Vec<usize>)] {
        &self.sets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub name: String,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
}

pub fn split_metrics(report: &MetricsReport, split: &ClassSplit) -> Result<Vec<SplitMetrics>> {
    split
        .sets
        .iter()
        .map(|(name, classes)| {
            if let Some(&bad) = classes.iter().find(|&&c| c >= report.per_class.len()) {
                return Err(Error::Invalid(format!("split {name} references unknown class {bad}")));
            }
            Ok(SplitMetrics {
                name: name.clone(),
                miou: mean(classes.iter().map(|&c| report.per_class[c].iou)),
                macc: mean(classes.iter().map(|&c| report.per_class[c].acc)),
            })
        })
        .collect()
}

/// Points whose probability for the query exceeds `threshold`.
pub fn query<S: Scalar>(f3d: &[S], q: &EmbeddingVector<S>, tau2: S, threshold: S) -> Result<Vec<bool>> {
    let dim = q.dim();
    if f3d.len() % dim != 0 {
        return Err(Error::Dimension {
            context: "query vs point features",
            expected: dim,
            found: f3d.len(),
        });
    }
    Ok(f3d
        .chunks_exact(dim)
        .map(|f| {
            let cos = scalar::dot(f, q.as_slice()).max(-S::one()).min(S::one());
            sigmoid(cos / tau2) > threshold
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

/// Flat `key = value` block.
pub fn format_report(report: &MetricsReport, splits: &[SplitMetrics]) -> String {
    let mut out = format!(
        "evaluated = {}\nmiou = {:.6}\nmacc = {:.6}\nprecision = {:.6}\nrecall = {:.6}\n",
        report.evaluated, report.miou, report.macc, report.precision, report.recall
    );
    for s in splits {
        out.push_str(&format!(
            "{}.miou = {}\n{}.macc = {}\n",
            s.name,
            opt(s.miou),
            s.name,
            opt(s.macc)
        ));
    }
    out
}

/// Tab-separated per-class table: index, name, IoU, Acc, precision, recall.
pub fn format_class_table(report: &MetricsReport, names: &[String]) -> String {
    let mut out = String::from("index\tname\tiou\tacc\tprecision\trecall\n");
    for (c, m) in report.per_class.iter().enumerate() {
        let name = names.get(c).map_or("-", String::as_str);
        out.push_str(&format!(
            "{c}\t{name}\t{}\t{}\t{}\t{}\n",
            opt(m.iou),
            opt(m.acc),
            opt(m.precision),
            opt(m.acc)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use proptest::prelude::*;

    #[test]
    fn argmax_and_ties() {
        let p = Prob3D {
            classes: 2,
            data: vec![0.1, 0.9, 0.5, 0.5],
        };
        assert_eq!(predict_labels(&p), vec![1, 0]);
    }

    #[test]
    fn perfect_prediction() {
        let gt = vec![0, 1, 2, 2, 1];
        let r = compute_metrics(&gt, &gt, 4).unwrap();
        assert_eq!((r.miou, r.macc, r.precision, r.recall), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.per_class[3].iou, None);
    }

    #[test]
    fn disjoint_prediction() {
        let r = compute_metrics(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(r.per_class[0].iou, Some(0.0));
        assert_eq!(r.per_class[1].iou, Some(0.0));
        assert_eq!(r.per_class[1].acc, None);
        assert_eq!(r.miou, 0.0);
    }

    #[test]
    fn hand_counted_matrix() {
        // [[2,1],[1,2]]: TP0=2, FP0=1, FN0=1.
        let gt = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 0, 1, 1];
        let m = ConfusionMatrix::from_labels(&pred, &gt, 2).unwrap();
        assert_eq!((m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1)), (2, 1, 1, 2));
        let r = MetricsReport::from_confusion(&m).unwrap();
        assert_eq!(r.per_class[0].iou, Some(0.5));
        assert_eq!(r.per_class[1].iou, Some(0.5));
        assert_eq!(r.miou, 0.5);
        assert!((r.macc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
        assert!(compute_metrics(&[2], &[0], 2).is_err());
    }

    #[test]
    fn splits() {
        let gt = [0, 0, 1, 1, 2, 2];
        let pred = [0, 1, 1, 1, 2, 0];
        let r = compute_metrics(&pred, &gt, 3).unwrap();
        let all = split_metrics(&r, &ClassSplit::parse("all:0,1,2").unwrap()).unwrap();
        assert!((all[0].miou.unwrap() - r.miou).abs() < 1e-15);
        let single = split_metrics(&r, &ClassSplit::parse("one:1").unwrap()).unwrap();
        assert_eq!(single[0].miou, r.per_class[1].iou);
        let parts = split_metrics(&r, &ClassSplit::parse("head:0;tail:1,2").unwrap()).unwrap();
        let recombined = (parts[0].miou.unwrap() * 1.0 + parts[1].miou.unwrap() * 2.0) / 3.0;
        assert!((recombined - r.miou).abs() < 1e-15);
        assert!(split_metrics(&r, &ClassSplit::parse("x:5").unwrap()).is_err());
        assert!(ClassSplit::parse("a:1;b:1").is_err());
    }

    #[test]
    fn query_examples() {
        let f = vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8];
        let q = normalize(&[1.0, 0.0]).unwrap();
        assert_eq!(query(&f, &q, 0.1, 0.5).unwrap(), vec![true, false, true]);
        assert_eq!(query(&f, &q, 0.1, 1.0).unwrap(), vec![false; 3]);
        let own = normalize(&[0.6, 0.8]).unwrap();
        assert!(query(&f, &own, 0.1, 0.9999).unwrap()[2]);
    }

    #[test]
    fn report_formats() {
        let r = compute_metrics(&[0, 1], &[0, 1], 3).unwrap();
        let text = format_report(&r, &[]);
        assert!(text.contains("miou = 1.000000"));
        let table = format_class_table(&r, &["a".into(), "b".into(), "c".into()]);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("2\tc\tnan"));
    }

    proptest! {
        #[test]
        fn permutation_invariance(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let perm = [2usize, 0, 3, 1];
            let (gt, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = compute_metrics(&pred, &gt, 4).unwrap();
            let gt_p: Vec<usize> = gt.iter().map(|&c| perm[c]).collect();
            let pred_p: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
            let rp = compute_metrics(&pred_p, &gt_p, 4).unwrap();
            prop_assert!((r.miou - rp.miou).abs() < 1e-12);
            prop_assert!((r.macc - rp.macc).abs() < 1e-12);
            for c in 0..4 {
                prop_assert_eq!(r.per_class[c], rp.per_class[perm[c]]);
            }
            prop_assert_eq!(r.evaluated, pairs.len() as u64);
            prop_assert_eq!(r.recall, r.macc);
        }

        #[test]
        fn argmax_invariant_under_monotone_map(row in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let p = Prob3D { classes: row.len(), data: row.clone() };
            let q = Prob3D { classes: row.len(), data: row.iter().map(|v| (3.0 * v).exp()).collect() };
            prop_assert_eq!(predict_labels(&p), predict_labels(&q));
        }
    }
}
