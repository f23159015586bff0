use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps < 0.0
        {
            return Err(Error::InvalidValue(format!("adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update over the parameters' gradient buffers.
///
/// The very first step moves each parameter by almost exactly `lr` against
/// the gradient sign, regardless of gradient magnitude:
///
/// ```
/// use mvre::numkit::{adam_step, AdamHyper, AdamState, Tensor};
///
/// let mut p = Tensor::vector(vec![0.0]);
/// p.grad_mut()[0] = 1.0;
/// let mut state = AdamState::new(&[&p]);
/// adam_step(&mut [&mut p], &mut state, &AdamHyper::default())?;
/// assert!((p.data()[0] - (-9.99999995e-4)).abs() < 1e-11);
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    if params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        if p.len() != state.m[idx].len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {idx} length changed under adam state"
            )));
        }
        let grads: Vec<f64> = match p.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; p.len()],
        };
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {idx}")));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = p.data_mut();
        for i in 0..grads.len() {
            let g = grads[i];
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
