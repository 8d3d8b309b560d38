use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::BagRecord;
use crate::encoder::ClassifierModel;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::seqshort::SeqShortAttention;

/// Tolerance on a distribution's total mass.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Relative entropy of `p` to the uniform distribution over its support, in nats.
pub fn kl_to_uniform(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Distribution("empty row".into()));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Distribution(format!("entry {v} is not a finite nonnegative value")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Distribution(format!("row sums to {sum}")));
    }
    let m = p.len() as f64;
    let d: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| v * (v * m).ln()).sum();
    Ok(d.max(0.0))
}

/// Relative entropy of each query's head-averaged attention row.
pub fn query_entropies<T: Scalar>(attn: &SeqShortAttention<T>) -> Result<Vec<f64>> {
    let mean = attn.head_mean();
    (0..mean.rows()).map(|q| kl_to_uniform(mean.row(q))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    /// Original query index of each entry in `values`.
    pub query_index: Vec<usize>,
    pub values: Vec<f64>,
    pub num_bags: usize,
    pub sorted: bool,
}

impl EntropyProfile {
    /// Same profile, largest relative entropy first; ties keep query order.
    pub fn sorted_descending(&self) -> Self {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        Self {
            query_index: order.iter().map(|&i| self.query_index[i]).collect(),
            values: order.iter().map(|&i| self.values[i]).collect(),
            num_bags: self.num_bags,
            sorted: true,
        }
    }

    /// CSV with header `query_index,relative_entropy_nats`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["query_index", "relative_entropy_nats"])?;
        for (q, v) in self.query_index.iter().zip(&self.values) {
            w.write_record([q.to_string(), format!("{v:.12e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Dataset-mean per-query relative entropy of the model's SeqShort attention.
pub fn entropy_profile<T: Scalar>(model: &ClassifierModel<T>, bags: &[BagRecord]) -> Result<EntropyProfile> {
    if bags.is_empty() {
        return Err(Error::Data("entropy profile needs at least one bag".into()));
    }
    let s = model.config().seqshort.output_len;
    let mut acc = vec![0.0; s];
    for bag in bags {
        let x: Tensor<T> = bag.features.cast();
        let (_, attn) = model.seqshort().forward(model.params(), &x)?;
        for (a, v) in acc.iter_mut().zip(query_entropies(&attn)?) {
            *a += v;
        }
    }
    let n = bags.len() as f64;
    Ok(EntropyProfile {
        query_index: (0..s).collect(),
        values: acc.into_iter().map(|v| v / n).collect(),
        num_bags: bags.len(),
        sorted: false,
    })
}
