//! Finite-difference gradient checks shared by the gradient and acceptance suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seqshort::numerics::gradcheck::{check, compare, numeric_gradient};
use seqshort::numerics::{Graph, Tensor, Var};
use seqshort::{ClassifierModel, ModelConfig, SeqShortConfig};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Checks `sum(R ⊙ f(inputs))` for a fixed random `R`, with respect to every input.
pub fn check_op(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'static, f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let eval = |ins: &[Tensor<f64>], weights: Option<&Tensor<f64>>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone(), true)).collect();
        let out = f(&mut g, &vars);
        let r = match weights {
            Some(r) => r.clone(),
            None => Tensor::filled(g.value(out).shape(), 1.0),
        };
        let rv = g.input(r, false);
        let prod = g.mul(out, rv).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss).unwrap();
        let per_input: Vec<Vec<f64>> = vars.iter().map(|&v| grads.wrt(v).unwrap().data().to_vec()).collect();
        (value, per_input, g.value(out).shape().to_vec())
    };
    let (_, _, out_shape) = eval(&inputs, None);
    let r = randn(&mut rng, &out_shape);
    let (_, analytic, _) = eval(&inputs, Some(&r));
    for (i, input) in inputs.iter().enumerate() {
        let res = check(
            |p| {
                let mut ins = inputs.clone();
                ins[i] = Tensor::new(input.shape().to_vec(), p.to_vec()).unwrap();
                eval(&ins, Some(&r)).0
            },
            input.data(),
            &analytic[i],
            STEP,
        );
        assert!(res.numeric_norm > 1e-6, "{name} input {i}: degenerate gradient");
        assert!(res.rel_err < TOL, "{name} input {i}: {res:?}");
    }
}

/// Runs [`check_op`] on every differentiable graph operation.
pub fn check_every_op() {
    {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[3, 4]);
        let c = randn(&mut rng, &[4, 2]);
        let row = randn(&mut rng, &[4]);
        check_op("matmul", vec![a.clone(), c.clone()], |g, v| g.matmul(v[0], v[1]).unwrap());
        check_op("transpose", vec![a.clone()], |g, v| g.transpose(v[0]).unwrap());
        check_op("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap());
        check_op("add_row", vec![a.clone(), row.clone()], |g, v| g.add_row(v[0], v[1]).unwrap());
        check_op("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]).unwrap());
        check_op("scale", vec![a.clone()], |g, v| g.scale(v[0], -0.7));
        check_op("gelu", vec![a.clone()], |g, v| g.gelu(v[0]));
        check_op("concat_rows", vec![a.clone(), b.clone()], |g, v| g.concat_rows(v[0], v[1]).unwrap());
        check_op("concat_cols", vec![a.clone(), b.clone(), a.clone()], |g, v| g.concat_cols(v).unwrap());
        check_op("slice_cols", vec![a.clone()], |g, v| g.slice_cols(v[0], 1, 2).unwrap());
        check_op("gather_rows", vec![a.clone()], |g, v| g.gather_rows(v[0], &[2, 0, 2]).unwrap());
        check_op("sum", vec![a.clone()], |g, v| g.sum(v[0]));
    }
    {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(&mut rng, &[3, 5]);
        let gamma = randn(&mut rng, &[5]);
        let beta = randn(&mut rng, &[5]);
        let logits = randn(&mut rng, &[1, 4]);
        check_op("softmax_rows", vec![a.clone()], |g, v| g.softmax_rows(v[0]).unwrap());
        check_op("layer_norm", vec![a, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
        check_op("cross_entropy", vec![logits], |g, v| g.cross_entropy(v[0], 2).unwrap());
    }
    {
        // softmax(Q Kᵀ / √d) V, the pattern inside both attention layers.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = randn(&mut rng, &[2, 3]);
        let k = randn(&mut rng, &[5, 3]);
        let v = randn(&mut rng, &[5, 4]);
        check_op("attention", vec![q, k, v], |g, x| {
            let kt = g.transpose(x[1]).unwrap();
            let s = g.matmul(x[0], kt).unwrap();
            let s = g.scale(s, 1.0 / 3f64.sqrt());
            let a = g.softmax_rows(s).unwrap();
            g.matmul(a, x[2]).unwrap()
        });
    }
}

fn ce(logits: &Tensor<f64>, label: usize) -> f64 {
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

pub fn end_to_end(cfg: ModelConfig, label: usize) {
    let mut model = ClassifierModel::<f64>::new(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Non-trivial weights so no gradient is vanishingly small.
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = randn(&mut rng, &[6, cfg.seqshort.input_dim]);
    let (_, _, grads) = model.loss_and_grads(&x, label).unwrap();

    let mut all_analytic = Vec::new();
    let mut all_numeric = Vec::new();
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = grads.param(id).unwrap().data().to_vec();
        let start = model.params().value(id).data().to_vec();
        let shape = model.params().value(id).shape().to_vec();
        let mut probe = model.clone();
        let numeric = numeric_gradient(
            |p| {
                probe.params_mut().get_mut(id).value = Tensor::new(shape.clone(), p.to_vec()).unwrap();
                ce(&probe.forward(&x).unwrap().logits, label)
            },
            &start,
            STEP,
        );
        let res = compare(&analytic, &numeric);
        let name = &model.params().get(id).name;
        // Key biases only shift every score of a row equally, so their true
        // gradient is zero; there the check is absolute.
        if name.ends_with("b_k") {
            assert!(res.max_abs_err < 1e-8, "{name}: {res:?}");
        } else {
            assert!(res.rel_err < TOL, "{name}: {res:?}");
        }
        all_analytic.extend(analytic);
        all_numeric.extend(numeric);
    }
    let total = compare(&all_analytic, &all_numeric);
    assert!(total.rel_err < TOL, "{total:?}");
}

pub fn toy16() -> ModelConfig {
    let mut cfg = ModelConfig::toy(5, 3);
    cfg.seqshort = SeqShortConfig::new(5, 16, 2, 4);
    cfg.encoder.hidden_dim = 16;
    cfg.encoder.num_heads = 2;
    cfg.encoder.ffn_dim = 32;
    cfg.encoder.seq_len = 4;
    cfg.encoder.num_layers = 2;
    cfg
}

