//! Per-class recall, precision and F-measure with macro averages, micro
//! accuracy and the confusion matrix. All values are fractions in `[0, 1]`.

use std::fmt;

use serde::Serialize;

use crate::error::{Result, UalError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub f_measure: Vec<f64>,
    /// Macro mean of the per-class recalls ("Ave.").
    pub ave_recall: f64,
    pub ave_precision: f64,
    pub ave_f_measure: f64,
    /// Support-weighted recall, i.e. micro accuracy (reported as "UAR").
    pub uar: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    pub total: usize,
}

/// `2PR / (P + R)`, zero when both are zero.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// `sum_c support_c * value_c / sum_c support_c`.
pub fn support_weighted(values: &[f64], supports: &[usize]) -> f64 {
    let total: usize = supports.iter().sum();
    if total == 0 {
        return 0.0;
    }
    values
        .iter()
        .zip(supports)
        .map(|(v, &s)| v * s as f64)
        .sum::<f64>()
        / total as f64
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<MetricsReport> {
    compute_metrics_named(
        truth,
        predicted,
        &crate::data::dataset::default_class_names(num_classes),
    )
}

pub fn compute_metrics_named(
    truth: &[usize],
    predicted: &[usize],
    class_names: &[String],
) -> Result<MetricsReport> {
    let c = class_names.len();
    if truth.len() != predicted.len() {
        return Err(UalError::dim("predicted labels", truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(UalError::InvalidArgument("metrics of an empty label list".into()));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= c {
                return Err(UalError::LabelOutOfRange {
                    label,
                    num_classes: c,
                });
            }
        }
        confusion[t][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted_count: Vec<usize> = (0..c).map(|j| confusion.iter().map(|row| row[j]).sum()).collect();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let recall: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], support[k])).collect();
    let precision: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], predicted_count[k])).collect();
    let f: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| f_measure(p, r)).collect();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    Ok(MetricsReport {
        class_names: class_names.to_vec(),
        ave_recall: macro_average(&recall),
        ave_precision: macro_average(&precision),
        ave_f_measure: macro_average(&f),
        uar: ratio(correct, truth.len()),
        recall,
        precision,
        f_measure: f,
        confusion,
        support,
        total: truth.len(),
    })
}

impl MetricsReport {
    pub fn accuracy(&self) -> f64 {
        self.uar
    }
}

/// Percent table with two decimals.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        write!(f, "{:<10}", "")?;
        for n in &self.class_names {
            write!(f, " {:>8}", truncate(n, 8))?;
        }
        writeln!(f, " {:>8} {:>8}", "Ave.", "UAR")?;
        let rows = [
            ("Recall", &self.recall, self.ave_recall, Some(self.uar)),
            ("Precision", &self.precision, self.ave_precision, None),
            ("F-measure", &self.f_measure, self.ave_f_measure, None),
        ];
        for (name, vals, ave, extra) in rows {
            write!(f, "{name:<10}")?;
            for v in vals.iter() {
                write!(f, " {:>8}", pct(*v))?;
            }
            write!(f, " {:>8}", pct(ave))?;
            match extra {
                Some(u) => writeln!(f, " {:>8}", pct(u))?,
                None => writeln!(f)?,
            }
        }
        Ok(())
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
