use serde::{Deserialize, Serialize};

use super::SurrogateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cell: String,
    pub predicted: f64,
    pub measured: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionScore {
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    pub spearman: f64,
}

/// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(predicted: &[f64], measured: &[f64]) -> Result<f64, SurrogateError> {
    if predicted.len() != measured.len() || predicted.len() < 2 {
        return Err(SurrogateError::DegenerateInput("need at least two paired values".into()));
    }
    pearson(&average_ranks(predicted), &average_ranks(measured))
        .ok_or_else(|| SurrogateError::DegenerateInput("constant ranking, Spearman undefined".into()))
}

/// MAPE and Spearman rank correlation over the records with a measurement.
pub fn score_predictions(records: &[PredictionRecord]) -> Result<PredictionScore, SurrogateError> {
    let (pred, meas): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| r.measured.map(|m| (r.predicted, m)))
        .unzip();
    if pred.len() < 2 {
        return Err(SurrogateError::DegenerateInput(format!(
            "{} measured records, need at least two",
            pred.len()
        )));
    }
    if meas.contains(&0.0) {
        return Err(SurrogateError::DegenerateInput("zero measurement, MAPE undefined".into()));
    }
    let mape = pred
        .iter()
        .zip(&meas)
        .map(|(p, m)| ((p - m) / m).abs())
        .sum::<f64>()
        / pred.len() as f64
        * 100.0;
    Ok(PredictionScore {
        mape,
        spearman: spearman(&pred, &meas)?,
    })
}
