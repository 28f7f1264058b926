//! Confusion matrix and the OA / Kappa / F1 report.

use serde::Serialize;

use super::TrainError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: u8, actual: u8) {
        match (predicted, actual) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn from_predictions(predicted: &[u8], actual: &[u8]) -> Self {
        let mut cm = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            cm.record(p, a);
        }
        cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub kappa: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when a 0/0 ratio was replaced by 0 (or chance agreement was 1).
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, TrainError> {
    let n = cm.total();
    if n == 0 {
        return Err(TrainError::EmptyEvaluation);
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let n = n as f64;
    let mut degenerate = false;
    let oa = (tp + tn) / n;
    let pc = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
    let kappa = ratio(oa - pc, 1.0 - pc, &mut degenerate);
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = ratio(
        2.0 * precision * recall,
        precision + recall,
        &mut degenerate,
    );
    Ok(MetricsReport {
        oa,
        kappa,
        f1,
        precision,
        recall,
        degenerate,
    })
}

impl MetricsReport {
    pub fn to_text(&self, cm: &ConfusionMatrix) -> String {
        format!(
            "OA        {:.4}\nKappa     {:.4}\nF1        {:.4}\nPrecision {:.4}\nRecall    {:.4}\nTP {} TN {} FP {} FN {}{}\n",
            self.oa,
            self.kappa,
            self.f1,
            self.precision,
            self.recall,
            cm.tp,
            cm.tn,
            cm.fp,
            cm.fn_,
            if self.degenerate { "\n(degenerate: a ratio had a zero denominator)" } else { "" }
        )
    }
}
