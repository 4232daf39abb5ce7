//! Dense layers, MLPs, the Adam optimizer and parameter snapshots.

mod adam;
mod snapshot;

pub use adam::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use snapshot::{read_snapshot, save_snapshot, load_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer size list must hold at least two positive sizes, got {0:?}")]
    BadSizes(Vec<usize>),
    #[error("layer {index} expects input width {expected}, got {got}")]
    NonConforming { index: usize, expected: usize, got: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("optimizer already took all {total} scheduled steps")]
    StepBudgetExhausted { total: u64 },
    #[error("invalid optimizer setting: {0}")]
    BadConfig(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("missing tensor `{0}` in snapshot")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> Result<NodeId, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Affine map `x W^T + b` followed by an activation. `weights` is `out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl LinearLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LinearLayer>,
}

/// Graph handles for one [`LinearLayer`].
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weights: NodeId,
    pub bias: NodeId,
    pub activation: Activation,
}

/// An [`Mlp`] whose parameters live on a particular [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundLayer>,
}

impl BoundMlp {
    /// Wraps existing graph nodes, e.g. leaves created by a gradient check.
    pub fn from_layers(layers: Vec<BoundLayer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, AutodiffError> {
        let mut h = x;
        for layer in &self.layers {
            let wt = g.transpose(layer.weights)?;
            let xw = g.matmul(h, wt)?;
            let z = g.add_row(xw, layer.bias)?;
            h = layer.activation.apply(g, z)?;
        }
        Ok(h)
    }

    /// Parameter nodes in the same order as [`Mlp::params`].
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|l| [l.weights, l.bias]).collect()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Hidden layers use `hidden`, the
    /// last layer `output`.
    pub fn init(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::BadSizes(sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                LinearLayer {
                    weights: Tensor::matrix(fan_out, fan_in, data).expect("positive sizes"),
                    bias: Tensor::zeros(vec![fan_out]),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LinearLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadSizes(Vec::new()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.rank() != 2 || l.bias.len() != l.out_dim() {
                return Err(NnError::ShapeMismatch {
                    what: format!("layer {i} bias"),
                    expected: vec![l.out_dim()],
                    got: l.bias.shape().to_vec(),
                });
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(NnError::NonConforming {
                    index: i,
                    expected: layers[i - 1].out_dim(),
                    got: l.in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Places the parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, true)
    }

    /// Places the parameters on `g` as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (g.param(l.weights.clone()), g.param(l.bias.clone()))
                } else {
                    (g.constant(l.weights.clone()), g.constant(l.bias.clone()))
                };
                BoundLayer {
                    weights: w,
                    bias: b,
                    activation: l.activation,
                }
            })
            .collect();
        BoundMlp { layers }
    }

    /// Gradient-free forward pass over a `B×in` matrix.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let xi = g.constant(x.clone());
        let y = forward_mlp(&mut g, &bound, xi, self.input_dim())?;
        Ok(g.value(y).clone())
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), l.weights.clone()),
                    (format!("{prefix}.{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }

    /// Rebuilds an MLP stored under `prefix` by [`Mlp::named_tensors`].
    pub fn from_named(
        prefix: &str,
        tensors: &[(String, Tensor)],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self, NnError> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
        let mut raw = Vec::new();
        while let Some(w) = find(&format!("{prefix}.{}.weight", raw.len())) {
            let bname = format!("{prefix}.{}.bias", raw.len());
            let b = find(&bname).ok_or(NnError::MissingTensor(bname))?;
            raw.push((w, b));
        }
        if raw.is_empty() {
            return Err(NnError::MissingTensor(format!("{prefix}.0.weight")));
        }
        let n = raw.len();
        let layers = raw
            .into_iter()
            .enumerate()
            .map(|(i, (weights, bias))| LinearLayer {
                weights,
                bias,
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self::from_layers(layers)
    }
}

/// Runs `net` on a `B×d_in` node, checking the input width first.
pub fn forward_mlp(g: &mut Graph, net: &BoundMlp, x: NodeId, d_in: usize) -> Result<NodeId, NnError> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 2 || shape[1] != d_in {
        return Err(NnError::ShapeMismatch {
            what: "mlp input".into(),
            expected: vec![shape.first().copied().unwrap_or(0), d_in],
            got: shape,
        });
    }
    Ok(net.forward(g, x)?)
}
