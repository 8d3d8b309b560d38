use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

use super::TrainConfig;

/// First and second moments for every trainable parameter, indexed like the
/// store. Moments are kept in f64 whatever the model precision.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Option<Tensor<f64>>>,
    pub v: Vec<Option<Tensor<f64>>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let moments = || -> Vec<Option<Tensor<f64>>> {
            store
                .iter()
                .map(|(_, p)| p.trainable.then(|| Tensor::zeros(p.value.shape())))
                .collect()
        };
        Self {
            m: moments(),
            v: moments(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on each parameter.
/// Frozen parameters are never touched; every gradient buffer is cleared.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "optimizer state covers {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (_, p) in store.iter() {
        if p.trainable && p.grad.is_none() {
            return Err(Error::MissingGrad(p.name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        let grad = p.grad.take();
        if !p.trainable {
            continue;
        }
        let grad = grad.expect("checked above");
        let (m, v) = match (&mut state.m[i], &mut state.v[i]) {
            (Some(m), Some(v)) => (m, v),
            (m, v) => {
                // Parameter unfrozen after the state was built.
                *m = Some(Tensor::zeros(p.value.shape()));
                *v = Some(Tensor::zeros(p.value.shape()));
                (m.as_mut().unwrap(), v.as_mut().unwrap())
            }
        };
        let md = m.data_mut();
        let vd = v.data_mut();
        for (j, (w, g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
            let g = g.as_f64();
            md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * g;
            vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * g * g;
            let step = lr * (md[j] / c1) / ((vd[j] / c2).sqrt() + cfg.eps);
            *w = T::from_f64_lossy(w.as_f64() - step);
        }
    }
    Ok(())
}
