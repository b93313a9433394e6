//! Small tanh feed-forward classifiers with hand-written backprop.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabError;
use crate::mdl::softmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// out×in
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Hidden layers use tanh; the output layer feeds a softmax.
///
/// The last hidden activation is the model's representation. A model without
/// hidden layers represents its input unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub layers: Vec<Dense>,
}

pub struct Forward {
    pub probs: Array1<f64>,
    pub repr: Array1<f64>,
}

/// Activations kept for backprop: `activations[0]` is the input batch,
/// `activations[i]` the output of hidden layer i.
pub struct BatchForward {
    pub activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl BatchForward {
    pub fn repr(&self) -> &Array2<f64> {
        self.activations.last().expect("input is always kept")
    }
}

pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

impl ToyModel {
    /// Weights drawn from N(0, 1/fan_in), biases zero.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self, LabError> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_simple_fn((w[1], w[0]), || normal.sample(&mut rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self, LabError> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layers: layer_dims
                .windows(2)
                .map(|w| Dense {
                    weights: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights.ncols()];
        dims.extend(self.layers.iter().map(|l| l.weights.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn k(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn repr_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Forward, LabError> {
        let batch = x.insert_axis(Axis(0));
        let out = self.forward_batch(batch)?;
        Ok(Forward {
            probs: softmax(out.logits.row(0)),
            repr: out.repr().row(0).to_owned(),
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<BatchForward, LabError> {
        if x.ncols() != self.input_dim() {
            return Err(LabError::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let (last, hidden) = self.layers.split_last().unwrap();
        let mut activations = vec![x.to_owned()];
        for layer in hidden {
            let pre = activations.last().unwrap().dot(&layer.weights.t()) + &layer.bias;
            activations.push(pre.mapv(f64::tanh));
        }
        let logits = activations.last().unwrap().dot(&last.weights.t()) + &last.bias;
        Ok(BatchForward {
            activations,
            logits,
        })
    }

    pub fn probs_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, LabError> {
        let mut logits = self.forward_batch(x)?.logits;
        for mut row in logits.outer_iter_mut() {
            let p = softmax(row.view());
            row.assign(&p);
        }
        Ok(logits)
    }

    /// Parameter gradients given dLoss/dlogits for every row of the batch.
    pub fn backward(&self, cache: &BatchForward, dlogits: ArrayView2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            grads.push((delta.t().dot(input), delta.sum_axis(Axis(0))));
            if i > 0 {
                let back = delta.dot(&layer.weights);
                delta = back * input.mapv(|a| 1.0 - a * a);
            }
        }
        grads.reverse();
        grads
    }

    pub fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            layer.weights.scaled_add(-learning_rate, gw);
            layer.bias.scaled_add(-learning_rate, gb);
        }
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64, LabError> {
        if y.is_empty() {
            return Ok(0.0);
        }
        let logits = self.forward_batch(x)?.logits;
        let correct = logits
            .outer_iter()
            .zip(y)
            .filter(|(row, &label)| crate::mdl::argmax(*row) == label)
            .count();
        Ok(correct as f64 / y.len() as f64)
    }

    /// Mutable views of every parameter, layer by layer, weights then bias.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Flattens gradients in the same order as [`ToyModel::params_mut`].
pub fn flatten(grads: &Gradients) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|(gw, gb)| gw.iter().chain(gb.iter()).copied())
        .collect()
}

fn validate_dims(dims: &[usize]) -> Result<(), LabError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(LabError::Config(format!("invalid layer dims {dims:?}")));
    }
    if *dims.last().unwrap() < 2 {
        return Err(LabError::Config(
            "output layer needs at least 2 classes".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_is_uniform() {
        let m = ToyModel::zeros(&[4, 5, 3]).unwrap();
        let out = m.forward(array![1.0, -2.0, 0.5, 3.0].view()).unwrap();
        for p in out.probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.repr.len(), 5);
    }

    #[test]
    fn single_layer_represents_input() {
        let m = ToyModel::new(&[3, 2], 1).unwrap();
        let x = array![0.1, 0.2, -0.3];
        assert_eq!(m.forward(x.view()).unwrap().repr, x);
    }

    #[test]
    fn matches_hand_rolled_forward() {
        let m = ToyModel::new(&[3, 4, 2, 3], 9).unwrap();
        let x = [0.4, -1.1, 0.7];
        // Independent loop-based evaluation.
        let mut a: Vec<f64> = x.to_vec();
        for (li, layer) in m.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.weights.nrows()];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, ai) in a.iter().enumerate() {
                    s += layer.weights[[o, i]] * ai;
                }
                *slot = if li + 1 < m.layers.len() { s.tanh() } else { s };
            }
            a = next;
        }
        let z: f64 = a.iter().map(|v| v.exp()).sum();
        let out = m.forward(array![0.4, -1.1, 0.7].view()).unwrap();
        for (p, logit) in out.probs.iter().zip(&a) {
            assert!((p - logit.exp() / z).abs() < 1e-12);
        }
        assert!((out.probs.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let m = ToyModel::new(&[3, 2], 1).unwrap();
        assert!(matches!(
            m.forward(array![1.0].view()),
            Err(LabError::Shape(_))
        ));
        assert!(ToyModel::new(&[3], 1).is_err());
        assert!(ToyModel::new(&[3, 0, 2], 1).is_err());
        assert!(ToyModel::new(&[3, 1], 1).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(
            ToyModel::new(&[5, 8, 3], 4).unwrap(),
            ToyModel::new(&[5, 8, 3], 4).unwrap()
        );
        assert_ne!(
            ToyModel::new(&[5, 8, 3], 4).unwrap(),
            ToyModel::new(&[5, 8, 3], 5).unwrap()
        );
    }
}
