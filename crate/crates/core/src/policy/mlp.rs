use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// One affine layer `y = act(W x + b)` with `W` stored row-major (`rows` =
/// output width, `cols` = input width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            rows,
            cols,
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            rows: dim,
            cols: dim,
            weights,
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::validation("dense layer with zero width"));
        }
        if self.weights.len() != self.rows * self.cols {
            return Err(Error::Shape {
                context: "layer weights",
                expected: self.rows * self.cols,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.rows {
            return Err(Error::Shape {
                context: "layer bias",
                expected: self.rows,
                got: self.bias.len(),
            });
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape {
                context: "layer input",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| {
                let dot = row.iter().zip(x).fold(0.0, |acc, (w, xi)| acc + w * xi);
                self.activation.apply(dot + b)
            })
            .collect())
    }
}

/// A multi-layer perceptron: layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let mlp = Self { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    /// Checks every layer and that consecutive shapes chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("MLP without layers"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::validation(format!(
                    "layer shapes do not chain: {}x{} followed by {}x{}",
                    pair[0].rows, pair[0].cols, pair[1].rows, pair[1].cols
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates `params` on `x`, layer by layer.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if params.layers.is_empty() {
        return Err(Error::validation("MLP without layers"));
    }
    let mut h = x.to_vec();
    for layer in &params.layers {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = MlpParams::new(vec![DenseLayer::identity(2)]).unwrap();
        assert_eq!(mlp_forward(&mlp, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn zero_weights_yield_bias_through_relu() {
        let layer =
            DenseLayer::new(2, 2, vec![0.0; 4], vec![1.0, 1.0], Activation::Relu).unwrap();
        let mlp = MlpParams::new(vec![layer]).unwrap();
        for x in [[5.0, -7.0], [0.0, 0.0], [-1e6, 1e6]] {
            assert_eq!(mlp_forward(&mlp, &x).unwrap(), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn input_dimension_mismatch_is_a_shape_error() {
        let mlp = MlpParams::new(vec![DenseLayer::identity(2)]).unwrap();
        assert!(matches!(
            mlp_forward(&mlp, &[1.0, 2.0, 3.0]),
            Err(Error::Shape { expected: 2, got: 3, .. })
        ));
    }

    #[test]
    fn non_chaining_layers_are_rejected() {
        let a = DenseLayer::new(3, 2, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = DenseLayer::identity(2);
        assert!(matches!(MlpParams::new(vec![a, b]), Err(Error::Validation(_))));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let err = DenseLayer::new(1, 1, vec![f64::NAN], vec![0.0], Activation::Identity);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Identity.apply(-2.0), -2.0);
        assert!((Activation::Tanh.apply(0.5) - 0.5f64.tanh()).abs() < 1e-15);
    }
}
