//! Accuracy, confusion matrices and per-class precision/F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::NUM_CLASSES;

/// Row-normalized confusion matrix in percent (row = reference).
pub type RowPercent = [[f64; NUM_CLASSES]; NUM_CLASSES];

/// Fraction of samples whose predicted argmax equals the label argmax.
pub fn accuracy(predicted: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Shape("prediction and label counts differ".into()));
    }
    if predicted.is_empty() {
        return Err(config_err("accuracy of an empty set"));
    }
    let hits = predicted
        .iter()
        .zip(labels)
        .filter(|(p, t)| crate::argmax(p) == crate::argmax(t))
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Same as [`accuracy`] on hard class decisions.
pub fn decision_accuracy(predicted: &[usize], references: &[usize]) -> Result<f64> {
    if predicted.len() != references.len() {
        return Err(Error::Shape("prediction and reference counts differ".into()));
    }
    if predicted.is_empty() {
        return Err(config_err("accuracy of an empty set"));
    }
    let hits = predicted.iter().zip(references).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, reference: usize, predicted: usize) {
        self.counts[reference][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    /// Percentage rows; `None` for reference classes with no samples.
    pub fn percentages(&self) -> [Option<[f64; NUM_CLASSES]>; NUM_CLASSES] {
        std::array::from_fn(|r| {
            let n = self.row_total(r);
            (n > 0).then(|| std::array::from_fn(|c| 100.0 * self.counts[r][c] as f64 / n as f64))
        })
    }

    /// Percentage matrix with absent rows zero-filled, plus the absent rows.
    pub fn row_percent(&self) -> (RowPercent, Vec<usize>) {
        let p = self.percentages();
        let missing = (0..NUM_CLASSES).filter(|&r| p[r].is_none()).collect();
        (p.map(|row| row.unwrap_or([0.0; NUM_CLASSES])), missing)
    }
}

pub fn confusion(predicted: &[usize], references: &[usize]) -> Result<ConfusionMatrix> {
    if predicted.len() != references.len() {
        return Err(Error::Shape("prediction and reference counts differ".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &r) in predicted.iter().zip(references) {
        if p >= NUM_CLASSES || r >= NUM_CLASSES {
            return Err(config_err(format!("class index out of range: {r} -> {p}")));
        }
        m.add(r, p);
    }
    Ok(m)
}

/// Class priors used to turn recall rows back into precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassShares {
    Balanced,
    Priors(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction in [0, 1], when computed from labeled samples.
    pub accuracy: Option<f64>,
    pub recall: [Option<f64>; NUM_CLASSES],
    pub precision: [Option<f64>; NUM_CLASSES],
    pub f1: [Option<f64>; NUM_CLASSES],
    pub row_percent: RowPercent,
}

/// Per-class precision and F1 from a row-normalized matrix.
pub fn precision_f1(r: &RowPercent, shares: &ClassShares) -> Result<MetricsReport> {
    let w = match shares {
        ClassShares::Balanced => vec![1.0; NUM_CLASSES],
        ClassShares::Priors(p) => {
            if p.len() != NUM_CLASSES || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(config_err("priors must be 7 non-negative weights"));
            }
            p.clone()
        }
    };
    let recall: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|c| Some(r[c][c]));
    let precision: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|c| {
        let col: f64 = (0..NUM_CLASSES).map(|k| w[k] * r[k][c]).sum();
        (col > 0.0).then(|| 100.0 * w[c] * r[c][c] / col)
    });
    let f1 = std::array::from_fn(|c| match (precision[c], recall[c]) {
        (Some(p), Some(q)) if p + q > 0.0 => Some(2.0 * p * q / (p + q)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    });
    Ok(MetricsReport {
        accuracy: None,
        recall,
        precision,
        f1,
        row_percent: *r,
    })
}

/// Full report from counts; absent reference rows get no recall.
pub fn report_from_counts(m: &ConfusionMatrix, shares: &ClassShares) -> Result<MetricsReport> {
    if m.total() == 0 {
        return Err(config_err("empty confusion matrix"));
    }
    let (r, missing) = m.row_percent();
    let mut rep = precision_f1(&r, shares)?;
    for c in missing {
        rep.recall[c] = None;
        rep.f1[c] = None;
    }
    let hits: u64 = (0..NUM_CLASSES).map(|c| m.counts[c][c]).sum();
    rep.accuracy = Some(hits as f64 / m.total() as f64);
    Ok(rep)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| format!("{:>8}", "-"), |x| format!("{x:>8.2}"))
}

/// Fixed-layout text table: reference rows, then precision and F1 rows.
pub fn render_table(rep: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>6}", "ref");
    for c in 0..NUM_CLASSES {
        let _ = write!(s, "{c:>8}");
    }
    s.push('\n');
    for (r, row) in rep.row_percent.iter().enumerate() {
        let _ = write!(s, "{r:>6}");
        for v in row {
            let _ = write!(s, "{v:>8.2}");
        }
        s.push('\n');
    }
    for (name, vals) in [("Prec.", &rep.precision), ("F1", &rep.f1)] {
        let _ = write!(s, "{name:>6}");
        for v in vals.iter() {
            s.push_str(&cell(*v));
        }
        s.push('\n');
    }
    if let Some(a) = rep.accuracy {
        let _ = writeln!(s, "accuracy {a:.4}");
    }
    s
}
