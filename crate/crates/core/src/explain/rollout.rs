use crate::encoder::AttentionTrace;
use crate::error::{Error, Result};
use crate::numerics::{matmul, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `(S+1) × M` attribution of every encoder position to the bag instances.
    pub matrix: Tensor<f64>,
    /// The `[CLS]` row rescaled to sum to one.
    pub cls_heatmap: Vec<f64>,
    /// Sum of the `[CLS]` row before rescaling.
    pub cls_mass: f64,
}

/// Base of the recursion: head-averaged SeqShort attention with an all-zero
/// row at the `[CLS]` position, since `[CLS]` never attends to the bag.
pub fn rollout_base(trace: &AttentionTrace) -> Result<Tensor<f64>> {
    let a = trace.seqshort.head_mean();
    let (s, m) = (a.rows(), a.cols());
    if trace.cls_index > s {
        return Err(Error::Trace(format!("[CLS] index {} for {s} summary rows", trace.cls_index)));
    }
    let mut data = Vec::with_capacity((s + 1) * m);
    for r in 0..=s {
        match r.cmp(&trace.cls_index) {
            std::cmp::Ordering::Less => data.extend_from_slice(a.row(r)),
            std::cmp::Ordering::Equal => data.extend(std::iter::repeat_n(0.0, m)),
            std::cmp::Ordering::Greater => data.extend_from_slice(a.row(r - 1)),
        }
    }
    Tensor::matrix(s + 1, m, data)
}

/// `rownorm(½·A + ½·I)`: attention mixed with the residual path.
pub fn residual_mix(attn: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = attn.rows();
    if attn.shape() != [n, n] {
        return Err(Error::Trace(format!("block attention has shape {:?}", attn.shape())));
    }
    let mut out = attn.map(|v| 0.5 * v);
    for i in 0..n {
        out.data_mut()[i * n + i] += 0.5;
    }
    for i in 0..n {
        let row = &mut out.data_mut()[i * n..(i + 1) * n];
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Numerical(format!("attention row {i} sums to {sum}")));
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Attention rollout through every encoder block down to the bag instances.
pub fn rollout(trace: &AttentionTrace) -> Result<RolloutResult> {
    if trace.blocks.len() != trace.num_layers {
        return Err(Error::Trace(format!(
            "trace holds {} block attentions, model has {} layers",
            trace.blocks.len(),
            trace.num_layers
        )));
    }
    let mut acc = rollout_base(trace)?;
    let n = acc.rows();
    for (l, block) in trace.blocks.iter().enumerate() {
        if block.shape() != [n, n] {
            return Err(Error::Trace(format!(
                "layer {l} attention has shape {:?}, expected [{n}, {n}]",
                block.shape()
            )));
        }
        acc = matmul(&residual_mix(block)?, &acc)?;
    }
    let cls = acc.row(trace.cls_index);
    let cls_mass: f64 = cls.iter().sum();
    if !(cls_mass > 1e-12) {
        return Err(Error::ZeroMass);
    }
    let cls_heatmap = cls.iter().map(|v| v / cls_mass).collect();
    Ok(RolloutResult {
        matrix: acc,
        cls_heatmap,
        cls_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqshort::SeqShortAttention;

    fn trace(blocks: Vec<Tensor<f64>>) -> AttentionTrace {
        let a = Tensor::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.0, 0.0, 1.0]]).unwrap();
        AttentionTrace {
            seqshort: SeqShortAttention { per_head: vec![a] },
            num_layers: blocks.len(),
            blocks,
            cls_index: 0,
        }
    }

    #[test]
    fn no_blocks_is_zero_mass() {
        assert!(matches!(rollout(&trace(vec![])), Err(Error::ZeroMass)));
    }

    #[test]
    fn identity_block_is_zero_mass() {
        assert!(matches!(rollout(&trace(vec![Tensor::eye(3)])), Err(Error::ZeroMass)));
    }

    #[test]
    fn cls_attending_first_summary_row() {
        // [CLS] attends fully to summary row 0: A = rownorm(½·e1 + ½·I) in row 0.
        let mut a = Tensor::eye(3);
        a.data_mut()[0] = 0.0;
        a.data_mut()[1] = 1.0;
        let r = rollout(&trace(vec![a])).unwrap();
        assert!((r.cls_mass - 0.5).abs() < 1e-15);
        assert_eq!(r.cls_heatmap, vec![0.5, 0.25, 0.25]);
        assert_eq!(r.matrix.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn layer_count_checked() {
        let mut t = trace(vec![Tensor::eye(3)]);
        t.num_layers = 2;
        assert!(matches!(rollout(&t), Err(Error::Trace(_))));
        let t = trace(vec![Tensor::eye(4)]);
        assert!(matches!(rollout(&t), Err(Error::Trace(_))));
    }

    #[test]
    fn cls_last_base() {
        let mut t = trace(vec![]);
        t.cls_index = 2;
        let b = rollout_base(&t).unwrap();
        assert_eq!(b.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(b.row(0), &[0.5, 0.25, 0.25]);
    }
}
