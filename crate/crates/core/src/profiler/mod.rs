//! Analytic matmul FLOPs and forward-pass timing.
//!
//! Only matrix products are counted, two FLOPs per multiply-add; softmax,
//! normalisation and activations are left out. The graph's matmul counter
//! uses the same convention, so analytic and instrumented counts agree exactly.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{ClassifierModel, HeadKind, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub seqshort_flops: u64,
    pub encoder_flops: u64,
    pub head_flops: u64,
    pub total: u64,
    pub m: usize,
    pub s: usize,
    pub h: usize,
    pub d: usize,
    pub k: usize,
    pub l: usize,
}

/// One encoder block over `n` positions.
fn block_flops(n: u64, h: u64, ffn: u64) -> u64 {
    8 * n * h * h + 4 * n * n * h + 4 * n * h * ffn
}

/// Part of the SeqShort cost that scales with the bag size: K/V projections
/// plus attention scores and weighted sums.
pub fn seqshort_flops_per_instance(config: &ModelConfig) -> u64 {
    let c = &config.seqshort;
    let (d, h, s) = (c.input_dim as u64, c.hidden_dim as u64, c.output_len as u64);
    4 * d * h + 4 * s * h
}

pub fn flops_forward(config: &ModelConfig, m: usize) -> Result<FlopsBreakdown> {
    config.validate()?;
    if m == 0 {
        return Err(Error::EmptyBag);
    }
    let c = &config.seqshort;
    let e = &config.encoder;
    let (h, s) = (c.hidden_dim as u64, c.output_len as u64);
    let seqshort_flops = m as u64 * seqshort_flops_per_instance(config) + 4 * s * h * h;
    let encoder_flops = e.num_layers as u64 * block_flops(s + 1, h, e.ffn_dim as u64);
    let classes = e.num_classes as u64;
    let head_flops = match e.head {
        HeadKind::Linear => 2 * h * classes,
        HeadKind::Mlp => 2 * h * h + 2 * h * classes,
    };
    Ok(FlopsBreakdown {
        seqshort_flops,
        encoder_flops,
        head_flops,
        total: seqshort_flops + encoder_flops + head_flops,
        m,
        s: c.output_len,
        h: c.hidden_dim,
        d: c.input_dim,
        k: c.num_heads,
        l: e.num_layers,
    })
}

/// Same encoder fed all `M` instances (plus `[CLS]`) after a `d → h` linear
/// projection, without SeqShort. The classification head is not included.
pub fn flops_full_attention_baseline(config: &ModelConfig, m: usize) -> Result<u64> {
    config.validate()?;
    if m == 0 {
        return Err(Error::EmptyBag);
    }
    let e = &config.encoder;
    let (h, d) = (e.hidden_dim as u64, config.seqshort.input_dim as u64);
    let m = m as u64;
    Ok(e.num_layers as u64 * block_flops(m + 1, h, e.ffn_dim as u64) + 2 * m * d * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub m: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimingStats {
    pub fn from_samples(m: usize, samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Config("no timing samples".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
        Ok(Self {
            m,
            samples_ms,
            median_ms: quantile(&sorted, 0.5),
            q1_ms: q1,
            q3_ms: q3,
            iqr_ms: q3 - q1,
        })
    }
}

/// Times `repeats` forward passes on a random bag of `m` instances after one
/// untimed warmup pass.
pub fn timeit_forward<T: Scalar>(model: &ClassifierModel<T>, m: usize, repeats: usize) -> Result<TimingStats> {
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 timing repeats, got {repeats}")));
    }
    if m == 0 {
        return Err(Error::EmptyBag);
    }
    let d = model.config().seqshort.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
    let x = Tensor::<T>::from_fn(&[m, d], |_| {
        T::from_f64_lossy(StandardNormal.sample(&mut rng))
    });
    model.forward(&x)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(model.forward(&x)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    TimingStats::from_samples(m, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config(format!("linear fit needs >= 2 paired points, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("linear fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub seqshort_flops: u64,
    pub encoder_flops: u64,
    pub total_flops: u64,
    pub baseline_flops: u64,
    pub median_ms: Option<f64>,
}

/// FLOPs for each bag length, plus median latency when a model and a repeat
/// count are given.
pub fn bench<T: Scalar>(
    config: &ModelConfig,
    lengths: &[usize],
    timing: Option<(&ClassifierModel<T>, usize)>,
) -> Result<Vec<BenchRow>> {
    lengths
        .iter()
        .map(|&m| {
            let f = flops_forward(config, m)?;
            let median_ms = match timing {
                Some((model, repeats)) => Some(timeit_forward(model, m, repeats)?.median_ms),
                None => None,
            };
            Ok(BenchRow {
                m,
                seqshort_flops: f.seqshort_flops,
                encoder_flops: f.encoder_flops,
                total_flops: f.total,
                baseline_flops: flops_full_attention_baseline(config, m)?,
                median_ms,
            })
        })
        .collect()
}

/// CSV with header `M,seqshort_flops,encoder_flops,total_flops,baseline_flops,median_ms`;
/// `median_ms` is empty for untimed rows.
pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
