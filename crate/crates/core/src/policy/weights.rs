use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, DenseLayer, MlpParams};
use super::OBS_DIM;
use crate::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Dimension of the action output (planar desired velocity).
pub const ACTION_DIM: usize = 2;

/// The three learnable networks of the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    pub version: u32,
    pub latent_dim: usize,
    pub enc: MlpParams,
    pub gnn: MlpParams,
    pub act: MlpParams,
}

/// Architecture used by [`random_weights`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: vec![64, 64],
        }
    }
}

impl PolicyWeights {
    pub fn new(latent_dim: usize, enc: MlpParams, gnn: MlpParams, act: MlpParams) -> Result<Self> {
        let w = Self {
            version: WEIGHTS_FORMAT_VERSION,
            latent_dim,
            enc,
            gnn,
            act,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported weight format version {}",
                self.version
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::validation("latent_dim must be positive"));
        }
        self.enc.validate()?;
        self.gnn.validate()?;
        self.act.validate()?;
        let checks: [(&str, usize, usize); 5] = [
            ("enc input", self.enc.input_dim(), OBS_DIM),
            ("enc output", self.enc.output_dim(), self.latent_dim),
            ("gnn input", self.gnn.input_dim(), self.latent_dim),
            ("act input", self.act.input_dim(), self.gnn.output_dim()),
            ("act output", self.act.output_dim(), ACTION_DIM),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(Error::validation(format!(
                    "{what} dimension is {got}, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(input: &str) -> Result<Self> {
        let w: PolicyWeights =
            serde_json::from_str(input).map_err(|e| Error::from_json(e, input))?;
        w.validate()?;
        Ok(w)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<PolicyWeights> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PolicyWeights::from_json(&text)
}

pub fn save_weights(weights: &PolicyWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights.to_json()).map_err(|e| Error::io(path, e))
}

fn random_mlp(rng: &mut ChaCha8Rng, widths: &[usize]) -> MlpParams {
    let n = widths.len() - 1;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (cols, rows) = (w[0], w[1]);
            let bound = 1.0 / (cols as f64).sqrt();
            let weights = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..rows).map(|_| rng.random_range(-bound..bound)).collect();
            let activation = if k + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            DenseLayer {
                rows,
                cols,
                weights,
                bias,
                activation,
            }
        })
        .collect();
    MlpParams { layers }
}

/// Uniformly initialised weights, deterministic per seed. Hidden layers use
/// rectifiers and output layers the identity.
pub fn random_weights(seed: u64, dims: &PolicyDims) -> Result<PolicyWeights> {
    if dims.latent_dim == 0 || dims.hidden.iter().any(|&h| h == 0) {
        return Err(Error::validation("policy dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = |input: usize, output: usize| -> Vec<usize> {
        std::iter::once(input)
            .chain(dims.hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect()
    };
    let enc = random_mlp(&mut rng, &chain(OBS_DIM, dims.latent_dim));
    let gnn = random_mlp(&mut rng, &chain(dims.latent_dim, dims.latent_dim));
    let act = random_mlp(&mut rng, &chain(dims.latent_dim, ACTION_DIM));
    PolicyWeights::new(dims.latent_dim, enc, gnn, act)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_then_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let w = random_weights(7, &PolicyDims::default()).unwrap();
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(w, back);
        for (a, b) in w.enc.layers[0].weights.iter().zip(&back.enc.layers[0].weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let dims = PolicyDims::default();
        assert_eq!(random_weights(3, &dims).unwrap(), random_weights(3, &dims).unwrap());
        assert_ne!(random_weights(3, &dims).unwrap(), random_weights(4, &dims).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = random_weights(1, &PolicyDims::default()).unwrap().to_json();
        let cut = &text[..text.len() / 2];
        match PolicyWeights::from_json(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn shape_chain_violation_is_a_validation_error() {
        let mut w = random_weights(1, &PolicyDims::default()).unwrap();
        w.latent_dim = 8;
        let text = serde_json::to_string(&w).unwrap();
        assert!(matches!(PolicyWeights::from_json(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn default_architecture_shapes() {
        let w = random_weights(0, &PolicyDims::default()).unwrap();
        assert_eq!(w.enc.layers.len(), 3);
        assert_eq!(w.enc.output_dim(), 16);
        assert_eq!(w.act.output_dim(), 2);
        assert_eq!(w.enc.layers[1].rows, 64);
    }
}
