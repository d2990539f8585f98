use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            t: 0,
        }
    }

    fn congruent(&self, params: &[Tensor], grads: &[Tensor]) -> bool {
        params.len() == self.m.len()
            && grads.len() == params.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.dims() == g.dims() && p.dims() == m.dims())
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    if !state.congruent(params, grads) {
        return Err(Error::shape("Adam parameters, gradients and moments are not congruent"));
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - hp.beta1.powf(t);
    let c2 = 1.0 - hp.beta2.powf(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let dims = p.dims().to_vec();
        let mut pd = std::mem::replace(p, Tensor::zeros(&[0])).into_data();
        let mut md = std::mem::replace(m, Tensor::zeros(&[0])).into_data();
        let mut vd = std::mem::replace(v, Tensor::zeros(&[0])).into_data();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = hp.beta1 * md[i] + (1.0 - hp.beta1) * gi;
            vd[i] = hp.beta2 * vd[i] + (1.0 - hp.beta2) * gi * gi;
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= hp.lr * mh / (vh.sqrt() + hp.eps);
        }
        *p = Tensor::from_parts_unchecked(dims.clone(), pd);
        *m = Tensor::from_parts_unchecked(dims.clone(), md);
        *v = Tensor::from_parts_unchecked(dims, vd);
    }
    Ok(())
}
