use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndmath::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = params.map(|p| Matrix::zeros(p.rows(), p.cols()));
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update of every parameter. Gradients are
    /// checked before anything is modified.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        let named = grads.entries();
        for ((name, g), (_, p)) in named.iter().zip(params.entries()) {
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {name}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let leaves = params
            .leaves_mut()
            .into_iter()
            .zip(self.m.leaves_mut())
            .zip(self.v.leaves_mut())
            .zip(named.iter().map(|(_, g)| *g));
        for (((p, m), v), g) in leaves {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}
