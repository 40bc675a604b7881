//! Confusion matrix, overall accuracy, average accuracy and Cohen's kappa.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are ground-truth classes, columns predicted classes; class `k`
/// (1-based) lives at index `k - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|row| row.len() != c) {
            return Err(Error::Shape(format!("confusion matrix must be square, {c} rows")));
        }
        let total = counts.iter().flatten().sum();
        Ok(ConfusionMatrix { counts, total })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::Metric("empty confusion matrix".into()));
        }
        Ok(())
    }

    /// Recall of every class, in class order.
    pub fn per_class_recall(&self) -> Result<Vec<f64>> {
        (0..self.classes())
            .map(|i| {
                let row = self.row_sum(i);
                if row == 0 {
                    return Err(Error::Metric(format!("class {} has no ground-truth pixels", i + 1)));
                }
                Ok(self.counts[i][i] as f64 / row as f64)
            })
            .collect()
    }
}

/// Tallies `(truth, pred)` pairs of 1-based class ids in `1..=classes`.
pub fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth pixels",
            pred.len(),
            truth.len()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        for (what, k) in [("prediction", p), ("truth", t)] {
            if k == 0 || k > classes {
                return Err(Error::Data(format!(
                    "{what} class {k} at position {i} outside 1..={classes}"
                )));
            }
        }
        counts[t - 1][p - 1] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

pub fn aa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    let recall = cm.per_class_recall()?;
    Ok(recall.iter().sum::<f64>() / recall.len() as f64)
}

pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    let total = cm.total() as f64;
    let p_o = cm.trace() as f64 / total;
    let p_e = (0..cm.classes())
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (total * total);
    if p_e == 1.0 {
        if cm.trace() == cm.total() {
            return Ok(1.0);
        }
        return Err(Error::Metric("kappa undefined: chance agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class_recall: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(MetricsReport {
            oa: oa(cm)?,
            aa: aa(cm)?,
            kappa: kappa(cm)?,
            per_class_recall: cm.per_class_recall()?,
            confusion: cm.counts().to_vec(),
        })
    }

    /// `OA xx.xx  AA xx.xx  kappa xx.xx`, in percent.
    pub fn summary(&self) -> String {
        format!(
            "OA {:.2}  AA {:.2}  kappa {:.2}",
            100.0 * self.oa,
            100.0 * self.aa,
            100.0 * self.kappa
        )
    }
}
