use serde::{Deserialize, Serialize};

use super::{MlpParams, NnError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Anything exposing its parameters as an ordered list of flat tensors.
pub trait ParamTensors {
    fn tensor_slices(&self) -> Vec<&[f64]>;
    fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamTensors for MlpParams {
    fn tensor_slices(&self) -> Vec<&[f64]> {
        self.tensors().collect()
    }

    fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut().collect()
    }
}

impl ParamTensors for Vec<f64> {
    fn tensor_slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParamTensors + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensor_slices()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    /// One bias-corrected adaptive-moment update, in place.
    pub fn step<P: ParamTensors + ?Sized>(
        &self,
        params: &mut P,
        grads: &P,
        state: &mut AdamState,
    ) -> Result<(), NnError> {
        let grads = grads.tensor_slices();
        let params = params.tensor_slices_mut();
        if params.len() != grads.len() || params.len() != state.first_moment.len() {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer: {} parameter tensors, {} gradient tensors, {} state tensors",
                params.len(),
                grads.len(),
                state.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() || p.len() != state.first_moment[i].len() {
                return Err(NnError::ShapeMismatch(format!(
                    "optimizer: tensor {i} has {} entries, gradient {}, state {}",
                    p.len(),
                    g.len(),
                    state.first_moment[i].len()
                )));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(
            state
                .first_moment
                .iter_mut()
                .zip(state.second_moment.iter_mut()),
        ) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}


/// Free-function form of [`Adam::step`] with the default decay constants.
pub fn optimizer_step<P: ParamTensors + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<(), NnError> {
    Adam::new(learning_rate).step(params, grads, state)
}
