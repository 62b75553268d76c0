use serde::Serialize;

use crate::error::{Error, Result};

/// Predicted probabilities with their 0/1 labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PredictionSet {
    pub preds: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionSet {
    pub fn new(preds: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("prediction {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::Domain(format!("label {l} is not binary")));
        }
        Ok(Self { preds, labels })
    }

    pub fn extend(&mut self, other: &PredictionSet) {
        self.preds.extend_from_slice(&other.preds);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn auc(&self) -> Result<f64> {
        auc(&self.preds, &self.labels)
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(&self.preds, &self.labels, 0.5)
    }
}

/// Area under the ROC curve via the Mann–Whitney rank sum, ties at midrank.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let tied_positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        positive_rank_sum += midrank * tied_positives as f64;
        i = j;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Fraction of predictions on the correct side of `threshold`; a prediction
/// equal to the threshold counts as positive.
pub fn accuracy(preds: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero predictions".into()));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| u8::from(p >= threshold) == l)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
