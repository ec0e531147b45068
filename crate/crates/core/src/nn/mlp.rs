use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, NnError};
use crate::rng::{streams, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.num_hidden_layers == 0
            || self.output_dim == 0
        {
            return Err(NnError::InvalidSpec(format!(
                "all MLP dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.num_hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Dense layers of an MLP. Hidden layers apply the activation, the final layer
/// is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let shapes = spec.layer_shapes();
        Self {
            weights: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            biases: shapes.iter().map(|&(_, o)| Array1::zeros(o)).collect(),
            activation: spec.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Layer shapes in `(weight, bias)` order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.dim(), (1, b.len())])
            .collect()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| {
            [
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Uniform variance-scaling initialization, biases zero.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = stream_rng(seed, streams::INIT, 0);
    let mut params = MlpParams::zeros(spec);
    for w in params.weights.iter_mut() {
        let (fan_in, fan_out) = w.dim();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.mapv_inplace(|_| rng.random_range(-limit..limit));
    }
    params
}

pub fn mlp_forward(params: &MlpParams, input: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
    if input.ncols() != params.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "MLP expects input width {}, got {}",
            params.input_dim(),
            input.ncols()
        )));
    }
    let last = params.weights.len() - 1;
    let mut x = input.to_owned();
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        x = x.dot(w) + &b.view().insert_axis(Axis(0));
        if i < last {
            let act = params.activation;
            x.mapv_inplace(|v| act.apply(v));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(hidden: usize) -> MlpSpec {
        MlpSpec {
            input_dim: 3,
            hidden_dim: hidden,
            num_hidden_layers: 2,
            output_dim: 4,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let a = mlp_init(&spec(16), 3);
        let b = mlp_init(&spec(16), 3);
        let c = mlp_init(&spec(16), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let p = mlp_init(&spec(16), 0);
        let shapes: Vec<_> = p.weights.iter().map(|w| w.dim()).collect();
        assert_eq!(shapes, vec![(3, 16), (16, 16), (16, 4)]);
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let limit = (6.0f64 / 19.0).sqrt();
        assert!(p.weights[0].iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = MlpParams::zeros(&spec(5));
        let out = mlp_forward(&p, array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((1, 4)));
    }

    #[test]
    fn relu_identity_layer() {
        // single hidden layer with identity weights, then identity readout
        let p = MlpParams {
            weights: vec![Array2::eye(2), Array2::eye(2)],
            biases: vec![Array1::zeros(2), Array1::zeros(2)],
            activation: Activation::Relu,
        };
        let out = mlp_forward(&p, array![[-1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[0.0, 2.0]]);
    }

    #[test]
    fn rows_are_independent() {
        let p = mlp_init(&spec(8), 11);
        let out = mlp_forward(&p, array![[0.3, -0.2, 0.9], [0.3, -0.2, 0.9]].view()).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn width_mismatch() {
        let p = mlp_init(&spec(8), 11);
        assert!(matches!(
            mlp_forward(&p, array![[1.0, 2.0]].view()),
            Err(NnError::ShapeMismatch(_))
        ));
    }
}
