use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney statistic with midranks for
/// tied scores. `positive[i]` marks the positive samples.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("non-finite score {s}")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| positive[k]).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j;
    }
    let np = n_pos as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Binary AUROC with class 1 as the positive class.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("binary AUROC got label {l}")));
    }
    let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    auroc_binary(scores, &positive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrAuroc {
    pub per_class: Vec<f64>,
    pub macro_mean: f64,
}

/// One-vs-rest AUROC of each class's probability column, and their unweighted
/// mean. `probs` holds one row of class probabilities per sample.
pub fn macro_ovr_auroc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<OvrAuroc> {
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!("{} score rows for {} labels", probs.len(), labels.len())));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let scores = probs
            .iter()
            .map(|row| {
                row.get(c).copied().ok_or_else(|| {
                    Error::Metric(format!("score row of length {} for {num_classes} classes", row.len()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        per_class.push(auroc_binary(&scores, &positive).map_err(|e| match e {
            Error::Metric(m) => Error::Metric(format!("class {c}: {m}")),
            other => other,
        })?);
    }
    let macro_mean = per_class.iter().sum::<f64>() / num_classes as f64;
    Ok(OvrAuroc { per_class, macro_mean })
}

/// Headline metric: positive-class AUROC for two classes, macro one-vs-rest
/// otherwise.
pub fn classification_auroc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<OvrAuroc> {
    if num_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let a = auroc(&scores, labels)?;
        return Ok(OvrAuroc {
            per_class: vec![a, a],
            macro_mean: a,
        });
    }
    macro_ovr_auroc(probs, labels, num_classes)
}
