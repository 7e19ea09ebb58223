//! Per-class IoU and mIoU against ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassId, LabelSet, UNLABELED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are ground truth, columns predictions, both over ids `0..=C`.
    pub confusion: Vec<Vec<u64>>,
    /// IoU per class name, for classes with at least one ground-truth point.
    pub per_class_iou: BTreeMap<String, f64>,
    /// Classes of the label set without ground-truth points.
    pub absent_classes: Vec<String>,
    pub miou: f64,
    /// Fraction of scored points predicted `unlabeled`.
    pub unlabeled_fraction: f64,
    /// Points with a ground-truth label.
    pub evaluated_points: u64,
}

/// Scores `pred` against `gt`. Points with `gt == 0` are skipped; predicted
/// `unlabeled` on a scored point counts as a false negative.
pub fn evaluate(pred: &[ClassId], gt: &[ClassId], labels: &LabelSet) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::Argument(format!(
            "prediction has {} labels but ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = labels.len();
    let mut confusion = vec![vec![0u64; n]; n];
    for (&p, &g) in pred.iter().zip(gt) {
        if g == UNLABELED {
            continue;
        }
        if p as usize >= n || g as usize >= n {
            return Err(Error::Argument(format!(
                "label id {} outside the label set",
                p.max(g)
            )));
        }
        confusion[g as usize][p as usize] += 1;
    }

    let mut per_class_iou = BTreeMap::new();
    let mut absent_classes = Vec::new();
    let mut sum = 0.0;
    for k in 1..n {
        let tp = confusion[k][k];
        let gt_k: u64 = confusion[k].iter().sum();
        if gt_k == 0 {
            absent_classes.push(labels.name(k as ClassId).unwrap_or_default().to_string());
            continue;
        }
        let pred_k: u64 = confusion.iter().map(|row| row[k]).sum();
        let iou = tp as f64 / (gt_k + pred_k - tp) as f64;
        sum += iou;
        per_class_iou.insert(labels.name(k as ClassId).unwrap_or_default().to_string(), iou);
    }
    let evaluated_points: u64 = confusion.iter().flatten().sum();
    let unlabeled: u64 = confusion.iter().map(|row| row[0]).sum();
    Ok(EvalReport {
        miou: if per_class_iou.is_empty() {
            0.0
        } else {
            sum / per_class_iou.len() as f64
        },
        per_class_iou,
        absent_classes,
        unlabeled_fraction: if evaluated_points == 0 {
            0.0
        } else {
            unlabeled as f64 / evaluated_points as f64
        },
        evaluated_points,
        confusion,
    })
}

/// Evaluation restricted to points where `keep` is true.
pub fn evaluate_masked(
    pred: &[ClassId],
    gt: &[ClassId],
    keep: impl Fn(usize) -> bool,
    labels: &LabelSet,
) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return evaluate(pred, gt, labels);
    }
    let masked: Vec<ClassId> = gt
        .iter()
        .enumerate()
        .map(|(i, &g)| if keep(i) { g } else { UNLABELED })
        .collect();
    evaluate(pred, &masked, labels)
}

impl EvalReport {
    /// Aligned text table: one row per class in label-set order, then mIoU.
    pub fn to_table(&self, labels: &LabelSet) -> String {
        let width = labels
            .class_names()
            .map(str::len)
            .chain(["mIoU".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "class", "IoU");
        for name in labels.class_names() {
            match self.per_class_iou.get(name) {
                Some(iou) => {
                    let _ = writeln!(out, "{name:<width$}  {iou:>8.3}");
                }
                None => {
                    let _ = writeln!(out, "{name:<width$}  {:>8}", "absent");
                }
            }
        }
        let _ = writeln!(out, "{:<width$}  {:>8.3}", "mIoU", self.miou);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels() -> LabelSet {
        LabelSet::new(["road", "building", "tree"]).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = vec![1, 2, 3, 3, 1];
        let r = evaluate(&gt, &gt, &labels()).unwrap();
        assert_eq!(r.miou, 1.0);
        assert!(r.per_class_iou.values().all(|&v| v == 1.0));
        assert!(r.absent_classes.is_empty());
    }

    #[test]
    fn all_unlabeled_prediction() {
        let gt = vec![1, 2, 3];
        let r = evaluate(&[0, 0, 0], &gt, &labels()).unwrap();
        assert_eq!(r.miou, 0.0);
        assert_eq!(r.unlabeled_fraction, 1.0);
    }

    #[test]
    fn ten_point_example() {
        // gt: five road then five building; one road point predicted building.
        let gt = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        let pred = [1, 1, 1, 1, 2, 2, 2, 2, 2, 2];
        let r = evaluate(&pred, &gt, &labels()).unwrap();
        assert_eq!(r.per_class_iou["road"], 0.8);
        assert_eq!(r.per_class_iou["building"], 5.0 / 6.0);
        assert!((r.miou - (0.8 + 5.0 / 6.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.absent_classes, vec!["tree".to_string()]);
        assert_eq!(r.confusion[1], vec![0, 4, 1, 0]);
    }

    #[test]
    fn unlabeled_gt_is_skipped() {
        let r = evaluate(&[2, 1], &[0, 1], &labels()).unwrap();
        assert_eq!(r.evaluated_points, 1);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(evaluate(&[1], &[1, 2], &labels()), Err(Error::Argument(_))));
    }

    #[test]
    fn masked_evaluation() {
        let r = evaluate_masked(&[1, 2], &[1, 1], |i| i == 0, &labels()).unwrap();
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn table_layout() {
        let gt = [1, 1, 2];
        let r = evaluate(&[1, 1, 1], &gt, &labels()).unwrap();
        let t = r.to_table(&labels());
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[3].contains("absent"));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }

    fn pairs() -> impl Strategy<Value = Vec<(ClassId, ClassId)>> {
        prop::collection::vec((0u16..4, 0u16..4), 0..200)
    }

    /// Independent per-class counting straight from the definition.
    fn brute_iou(pred: &[ClassId], gt: &[ClassId], k: ClassId) -> Option<f64> {
        let scored = |i: usize| gt[i] != 0;
        let tp = (0..gt.len()).filter(|&i| scored(i) && gt[i] == k && pred[i] == k).count();
        let fn_ = (0..gt.len()).filter(|&i| scored(i) && gt[i] == k && pred[i] != k).count();
        let fp = (0..gt.len()).filter(|&i| scored(i) && gt[i] != k && pred[i] == k).count();
        (tp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64)
    }

    proptest! {
        #[test]
        fn matches_brute_force(p in pairs()) {
            let (pred, gt): (Vec<_>, Vec<_>) = p.into_iter().unzip();
            let l = labels();
            let r = evaluate(&pred, &gt, &l).unwrap();
            for k in 1..4u16 {
                let name = l.name(k).unwrap();
                prop_assert_eq!(r.per_class_iou.get(name).copied(), brute_iou(&pred, &gt, k));
            }
            prop_assert!((0.0..=1.0).contains(&r.miou));
            for k in 0..4usize {
                let row: u64 = r.confusion[k].iter().sum();
                let count = gt.iter().filter(|&&g| g as usize == k && g != 0).count() as u64;
                prop_assert_eq!(row, count);
            }
        }

        #[test]
        fn joint_permutation_invariance(p in pairs(), seed in any::<u64>()) {
            let l = labels();
            let (pred, gt): (Vec<_>, Vec<_>) = p.iter().copied().unzip();
            let mut shuffled = p.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (crate::rng::below(&[seed, i as u64], i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let (sp, sg): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(evaluate(&pred, &gt, &l).unwrap(), evaluate(&sp, &sg, &l).unwrap());
        }
    }
}
