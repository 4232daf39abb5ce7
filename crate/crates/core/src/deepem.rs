//! Single-pass differentiable GMM estimation.
//!
//! The E-block is a small MLP shared across every prediction scalar that
//! outputs two logits; a row softmax turns them into responsibilities. The
//! M-block applies the closed-form weighted-moment updates as graph
//! operations, so gradients flow from the mixture parameters back into both
//! the predictions and the E-block weights. No iteration is involved.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::gmm_em::{e_step, Gaussian1D, Gmm2, GmmError, DEFAULT_SIGMA_FLOOR};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, BoundMlp, Mlp, NnError};

/// Columns whose total responsibility falls below this are degenerate.
pub const MIN_COLUMN_MASS: f64 = 1e-8;
/// Added to the weighted variance before the square root.
pub const VARIANCE_EPS: f64 = 1e-8;
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DeepEmError {
    #[error("component column {component} has total responsibility {mass:e}")]
    Degenerate { component: usize, mass: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

type Result<T> = std::result::Result<T, DeepEmError>;

/// Pointwise responsibility network: one prediction scalar in, two logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct EBlock {
    net: Mlp,
}

pub const DEFAULT_EBLOCK_HIDDEN: [usize; 2] = [16, 16];

impl EBlock {
    pub fn init(seed: u64) -> Self {
        Self::with_hidden(&DEFAULT_EBLOCK_HIDDEN, seed)
    }

    pub fn with_hidden(hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![1];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let net = Mlp::init(&sizes, Activation::Relu, Activation::Identity, seed).expect("positive sizes");
        Self { net }
    }

    pub fn from_mlp(net: Mlp) -> std::result::Result<Self, NnError> {
        if net.input_dim() != 1 || net.output_dim() != 2 {
            return Err(NnError::ShapeMismatch {
                what: "e-block".into(),
                expected: vec![1, 2],
                got: vec![net.input_dim(), net.output_dim()],
            });
        }
        Ok(Self { net })
    }

    /// Zeroes the output layer so every row of Γ is `(0.5, 0.5)`.
    pub fn zero_output(mut self) -> Self {
        let last = self.net.layers_mut().last_mut().expect("at least one layer");
        last.weights.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn bind(&self, g: &mut Graph) -> BoundEBlock {
        BoundEBlock(self.net.bind(g))
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> BoundEBlock {
        BoundEBlock(self.net.bind_frozen(g))
    }
}

#[derive(Debug, Clone)]
pub struct BoundEBlock(BoundMlp);

impl BoundEBlock {
    /// The network must map `N×1` to `N×2`.
    pub fn new(net: BoundMlp) -> Self {
        Self(net)
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        self.0.param_ids()
    }
}

/// `N×2` node of row-stochastic soft assignments.
#[derive(Debug, Clone, Copy)]
pub struct ResponsibilityNode(pub NodeId);

impl ResponsibilityNode {
    pub fn id(self) -> NodeId {
        self.0
    }
}

/// Mixture parameters as `1×1` graph nodes, ascending by mean.
#[derive(Debug, Clone, Copy)]
pub struct GmmParamsNode {
    pub weight: [NodeId; 2],
    pub mean: [NodeId; 2],
    pub std: [NodeId; 2],
    /// `order[k]` is the responsibility column that produced component `k`.
    pub order: [usize; 2],
}

impl GmmParamsNode {
    pub fn means(&self, g: &Graph) -> [f64; 2] {
        self.mean.map(|id| g.scalar_value(id))
    }

    pub fn stds(&self, g: &Graph) -> [f64; 2] {
        self.std.map(|id| g.scalar_value(id))
    }

    pub fn weights(&self, g: &Graph) -> [f64; 2] {
        self.weight.map(|id| g.scalar_value(id))
    }

    /// Forward values as a plain mixture.
    pub fn to_gmm(&self, g: &Graph) -> std::result::Result<Gmm2, GmmError> {
        let (w, m, s) = (self.weights(g), self.means(g), self.stds(g));
        Gmm2::new(Gaussian1D::new(w[0], m[0], s[0]), Gaussian1D::new(w[1], m[1], s[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MBlockOptions {
    pub sigma_floor: f64,
    pub variance_eps: f64,
}

impl Default for MBlockOptions {
    fn default() -> Self {
        Self {
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            variance_eps: VARIANCE_EPS,
        }
    }
}

impl MBlockOptions {
    pub fn with_floor(sigma_floor: f64) -> Self {
        Self {
            sigma_floor,
            ..Self::default()
        }
    }
}

fn flatten(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let n = g.value(z).len();
    Ok(g.reshape(z, vec![n, 1])?)
}

/// Γ for every entry of `z` (any shape), flattened row-major to `N×2`.
pub fn e_block_forward(g: &mut Graph, eb: &BoundEBlock, z: NodeId) -> Result<ResponsibilityNode> {
    let x = flatten(g, z)?;
    let logits = eb.0.forward(g, x)?;
    Ok(ResponsibilityNode(g.row_softmax(logits)?))
}

/// Closed-form weighted moments of the flattened `z` under `gamma`.
///
/// Components are ordered by the forward value of their means; gradients
/// flow through whichever branch was selected.
pub fn m_block(g: &mut Graph, z: NodeId, gamma: ResponsibilityNode, opts: MBlockOptions) -> Result<GmmParamsNode> {
    let x = flatten(g, z)?;
    let n = g.value(x).rows();
    let gamma = gamma.0;
    let gshape = g.value(gamma).shape().to_vec();
    if gshape != [n, 2] {
        return Err(AutodiffError::ShapeMismatch {
            op: "m_block",
            lhs: vec![n, 1],
            rhs: gshape,
        }
        .into());
    }
    let nk = g.column_sum(gamma)?;
    for (k, &mass) in g.value(nk).data().iter().enumerate() {
        if !(mass > MIN_COLUMN_MASS) {
            return Err(DeepEmError::Degenerate { component: k, mass });
        }
    }
    let pi = g.scale(nk, 1.0 / n as f64)?;
    let xt = g.transpose(x)?;
    let sx = g.matmul(xt, gamma)?;
    let mu = g.div(sx, nk)?;

    let ones = g.constant(Tensor::ones(vec![1, 2]));
    let xb = g.matmul(x, ones)?;
    let neg_mu = g.neg(mu)?;
    let centred = g.add_row(xb, neg_mu)?;
    let sq = g.square(centred)?;
    let weighted = g.mul(sq, gamma)?;
    let s2 = g.column_sum(weighted)?;
    let var = g.div(s2, nk)?;
    let var = g.add_scalar(var, opts.variance_eps)?;
    let sd = g.sqrt(var)?;
    let sd = g.clamp_min(sd, opts.sigma_floor)?;

    let means = g.value(mu).data().to_vec();
    let order = if means[0] <= means[1] { [0, 1] } else { [1, 0] };
    let mut pick = |t: NodeId| -> Result<[NodeId; 2]> {
        Ok([g.element(t, 0, order[0])?, g.element(t, 0, order[1])?])
    };
    Ok(GmmParamsNode {
        weight: pick(pi)?,
        mean: pick(mu)?,
        std: pick(sd)?,
        order,
    })
}

/// E-block then M-block: one pass, no iteration.
pub fn deepem_estimate(g: &mut Graph, eb: &BoundEBlock, z: NodeId, opts: MBlockOptions) -> Result<GmmParamsNode> {
    let gamma = e_block_forward(g, eb, z)?;
    m_block(g, z, gamma, opts)
}

/// Cross-entropy between the E-block's responsibilities and the analytic
/// posteriors under the mixture the M-block derives from them.
///
/// The analytic target is a constant; gradients reach only the E-block
/// output (and through it `z` and the E-block weights).
pub fn consistency_loss(g: &mut Graph, eb: &BoundEBlock, z: NodeId, opts: MBlockOptions) -> Result<NodeId> {
    let gamma = e_block_forward(g, eb, z)?;
    let params = m_block(g, z, gamma, opts)?;
    let model = params.to_gmm(g)?;
    let xs = g.value(z).data().to_vec();
    let sorted = e_step(&model, &xs);
    let mut target = vec![0.0; xs.len() * 2];
    for (i, row) in sorted.rows().iter().enumerate() {
        target[2 * i + params.order[0]] = row[0];
        target[2 * i + params.order[1]] = row[1];
    }
    let target = g.constant(Tensor::matrix(xs.len(), 2, target)?);
    let clamped = g.clamp_min(gamma.0, LOG_CLAMP)?;
    let logp = g.log(clamped)?;
    let prod = g.mul(target, logp)?;
    let total = g.sum(prod)?;
    Ok(g.scale(total, -1.0 / xs.len() as f64)?)
}

/// Fits the E-block to `z` alone by minimizing [`consistency_loss`] with
/// Adam for `steps` full-batch steps. Returns the loss before each step.
pub fn pretrain_consistency(eb: &mut EBlock, z: &[f64], steps: u64, max_lr: f64, opts: MBlockOptions) -> Result<Vec<f64>> {
    let mut history = Vec::with_capacity(steps as usize);
    if steps == 0 {
        return Ok(history);
    }
    let mut adam = AdamState::new(eb.net.params(), AdamConfig::new(max_lr, steps))?;
    let values = Tensor::vector(z.to_vec());
    for _ in 0..steps {
        let mut g = Graph::new();
        let bound = eb.bind(&mut g);
        let zn = g.constant(values.clone());
        let loss = consistency_loss(&mut g, &bound, zn, opts)?;
        history.push(g.scalar_value(loss));
        g.backward(loss)?;
        let grads: Vec<Option<&Tensor>> = bound.param_ids().iter().map(|&id| g.grad(id)).collect();
        let mut params = eb.net.params_mut();
        adam_step(&mut params, &grads, &mut adam)?;
    }
    Ok(history)
}
