use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts, rows indexed by ground truth and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Confusion {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Adds pixels; labels equal to `ignore` are skipped.
    pub fn accumulate(&mut self, pred: &[u32], label: &[u32], ignore: u32) -> Result<()> {
        if pred.len() != label.len() {
            return Err(Error::Validation(format!(
                "prediction has {} pixels, label has {}",
                pred.len(),
                label.len()
            )));
        }
        for (&p, &l) in pred.iter().zip(label) {
            if l == ignore {
                continue;
            }
            let (p, l) = (p as usize, l as usize);
            if p >= self.k || l >= self.k {
                return Err(Error::Validation(format!(
                    "class index {} out of range for {} classes",
                    p.max(l),
                    self.k
                )));
            }
            self.counts[l * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Validation("merging confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn metrics(&self) -> SegMetrics {
        let k = self.k;
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..k).map(|c| self.at(c, c)).sum();
        let per_class_iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.at(c, c);
                let fn_: u64 = (0..k).map(|p| self.at(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|t| self.at(t, c)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        // Summing in sorted order makes the mean independent of class labelling.
        let mut present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        present.sort_by(f64::total_cmp);
        let all_ignored = total == 0;
        SegMetrics {
            pix_acc: if all_ignored { 0.0 } else { correct as f64 / total as f64 },
            mean_iou: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
            per_class_iou,
            confusion: self.rows(),
            all_ignored,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub pix_acc: f64,
    /// `None` for classes absent from both prediction and label.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub confusion: Vec<Vec<u64>>,
    /// Every pixel carried the ignore label; the scores are reported as 0.
    pub all_ignored: bool,
}

pub fn compute_metrics(pred: &[u32], label: &[u32], k: usize, ignore: u32) -> Result<SegMetrics> {
    let mut c = Confusion::new(k);
    c.accumulate(pred, label, ignore)?;
    Ok(c.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let l = [0, 1, 2, 1];
        let m = compute_metrics(&l, &l, 3, 255).unwrap();
        assert_eq!((m.pix_acc, m.mean_iou), (1.0, 1.0));
    }

    #[test]
    fn binary_confusion_oracle() {
        // truth 0 0 1 1, pred 0 1 1 1: class0 iou 1/2, class1 iou 2/3
        let m = compute_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2, 255).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(m.pix_acc, 0.75);
        assert!((m.mean_iou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_excluded() {
        let m = compute_metrics(&[0, 0], &[0, 0], 4, 255).unwrap();
        assert_eq!(m.per_class_iou, vec![Some(1.0), None, None, None]);
        assert_eq!(m.mean_iou, 1.0);
    }

    #[test]
    fn all_ignored_flagged() {
        let m = compute_metrics(&[0, 1], &[255, 255], 2, 255).unwrap();
        assert!(m.all_ignored);
        assert_eq!((m.pix_acc, m.mean_iou), (0.0, 0.0));
    }

    #[test]
    fn rows_sum_to_label_counts() {
        let label = [0, 2, 2, 1, 255, 2];
        let pred = [1, 2, 0, 1, 0, 2];
        let m = compute_metrics(&pred, &label, 3, 255).unwrap();
        let sums: Vec<u64> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(sums, vec![1, 1, 3]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(compute_metrics(&[5], &[0], 2, 255).is_err());
    }
}
