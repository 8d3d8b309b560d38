//! Independent reference implementations used as test oracles. Everything is
//! written with explicit loops over plain `Vec`s.
#![allow(dead_code)]

pub mod grad;

use seqshort::{AttentionTrace, ClassifierModel, Scalar, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat<T: Scalar>(t: &Tensor<T>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).iter().map(|v| v.as_f64()).collect()).collect()
}

fn param<T: Scalar>(model: &ClassifierModel<T>, name: &str) -> Mat {
    let id = model.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    to_mat(model.params().value(id))
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// SeqShort forward pass straight from the definition. Returns the `S × h`
/// output and per-head `S × M` attention.
pub fn naive_seqshort<T: Scalar>(model: &ClassifierModel<T>, x: &Mat) -> (Mat, Vec<Mat>) {
    let cfg = model.config().seqshort;
    let (s, h, k) = (cfg.output_len, cfg.hidden_dim, cfg.num_heads);
    let dh = h / k;
    let q_l = param(model, "seqshort.queries");
    let mut concat = vec![Vec::with_capacity(h); s];
    let mut attn = Vec::new();
    for i in 0..k {
        let q = mm(&q_l, &param(model, &format!("seqshort.head{i}.w_q")));
        let kk = mm(x, &param(model, &format!("seqshort.head{i}.w_k")));
        let v = mm(x, &param(model, &format!("seqshort.head{i}.w_v")));
        let mut a = vec![vec![0.0; x.len()]; s];
        for r in 0..s {
            for m in 0..x.len() {
                let mut dot = 0.0;
                for j in 0..dh {
                    dot += q[r][j] * kk[m][j];
                }
                a[r][m] = dot / (dh as f64).sqrt();
            }
            let max = a[r].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = a[r].iter().map(|v| (v - max).exp()).sum();
            for m in 0..x.len() {
                a[r][m] = (a[r][m] - max).exp() / z;
            }
        }
        let head = mm(&a, &v);
        for r in 0..s {
            concat[r].extend_from_slice(&head[r]);
        }
        attn.push(a);
    }
    let mut out = mm(&concat, &param(model, "seqshort.w_o"));
    for r in 0..s {
        for c in 0..h {
            out[r][c] += q_l[r][c];
        }
    }
    (out, attn)
}

/// Rollout computed by materialising every product with loops.
pub fn naive_rollout(trace: &AttentionTrace) -> (Mat, Vec<f64>) {
    let heads: Vec<Mat> = trace.seqshort.per_head.iter().map(to_mat).collect();
    let (s, m) = (heads[0].len(), heads[0][0].len());
    let mut base = vec![vec![0.0; m]; s + 1];
    let mut src = 0;
    for (r, row) in base.iter_mut().enumerate() {
        if r == trace.cls_index {
            continue;
        }
        for c in 0..m {
            row[c] = heads.iter().map(|hm| hm[src][c]).sum::<f64>() / heads.len() as f64;
        }
        src += 1;
    }
    let n = s + 1;
    let mut acc = base;
    for block in &trace.blocks {
        let b = to_mat(block);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = 0.5 * b[i][j] + if i == j { 0.5 } else { 0.0 };
            }
            let sum: f64 = a[i].iter().sum();
            for j in 0..n {
                a[i][j] /= sum;
            }
        }
        let mut next = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                for t in 0..n {
                    next[i][j] += a[i][t] * acc[t][j];
                }
            }
        }
        acc = next;
    }
    let cls = acc[trace.cls_index].clone();
    let mass: f64 = cls.iter().sum();
    (acc, cls.iter().map(|v| v / mass).collect())
}

/// AUROC as the fraction of (positive, negative) pairs ordered correctly,
/// ties counting one half.
pub fn brute_auroc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// `Σ p ln p + ln M`, computed directly.
pub fn naive_kl(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h += v * v.ln();
        }
    }
    h + (p.len() as f64).ln()
}
