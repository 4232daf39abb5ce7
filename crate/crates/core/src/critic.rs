//! Discrepancies between source and target prediction distributions.
//!
//! The training critic is the α-weighted squared 2-Wasserstein distance
//! between paired mixture components. KL, 1-Wasserstein and a hard k-means
//! variant are comparison critics; the discriminator loss is the
//! feature-level adversarial baseline.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{normal_cdf, AutodiffError, Graph, NodeId, Tensor};
use crate::deepem::{m_block, DeepEmError, GmmParamsNode, MBlockOptions, ResponsibilityNode};
use crate::nn::{Activation, BoundMlp, Mlp};

const PROB_CLAMP: f64 = 1e-7;
pub const KMEANS_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("critic weights must be nonnegative with a positive sum, got ({0}, {1})")]
    BadWeights(f64, f64),
    #[error("k-means needs at least two distinct values")]
    TooFewDistinct,
    #[error("k-means cluster {0} is empty")]
    EmptyCluster(usize),
    #[error(transparent)]
    DeepEm(#[from] DeepEmError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, CriticError>;

/// Which discrepancy drives the adversarial branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    W2,
    Kl,
    W1,
    Kmeans,
    Discriminator,
    None,
}

impl CriticKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticKind::W2 => "w2",
            CriticKind::Kl => "kl",
            CriticKind::W1 => "w1",
            CriticKind::Kmeans => "kmeans",
            CriticKind::Discriminator => "discriminator",
            CriticKind::None => "none",
        }
    }

    /// Critics that compare fitted mixtures.
    pub fn uses_gmm(self) -> bool {
        matches!(self, CriticKind::W2 | CriticKind::Kl | CriticKind::W1)
    }
}

/// Per-component weights `α₁, α₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticWeights {
    alpha: [f64; 2],
}

impl CriticWeights {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1 + alpha2 > 0.0) || !(alpha1 + alpha2).is_finite() {
            return Err(CriticError::BadWeights(alpha1, alpha2));
        }
        Ok(Self { alpha: [alpha1, alpha2] })
    }

    pub fn alpha(&self) -> [f64; 2] {
        self.alpha
    }
}

impl Default for CriticWeights {
    fn default() -> Self {
        Self { alpha: [0.5, 0.5] }
    }
}

/// Mean and standard deviation of a univariate normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// `(μ₁−μ₂)² + (σ₁−σ₂)²`.
pub fn w2_squared(a: MeanStd, b: MeanStd) -> f64 {
    let dm = a.mean - b.mean;
    let ds = a.std - b.std;
    dm * dm + ds * ds
}

pub fn w2(a: MeanStd, b: MeanStd) -> f64 {
    w2_squared(a, b).sqrt()
}

/// `KL(a ‖ b)` between univariate normals.
pub fn kl_gaussian(a: MeanStd, b: MeanStd) -> f64 {
    let dm = a.mean - b.mean;
    (b.std / a.std).ln() + (a.std * a.std + dm * dm) / (2.0 * b.std * b.std) - 0.5
}

/// 1-Wasserstein distance: `E|a + bZ|` with `a = Δμ`, `b = Δσ`, `Z ~ N(0,1)`,
/// which is the comonotone (quantile) coupling of two normals.
pub fn w1_gaussian(p: MeanStd, q: MeanStd) -> f64 {
    let a = p.mean - q.mean;
    let b = (p.std - q.std).abs();
    if b == 0.0 {
        return a.abs();
    }
    b * (2.0 / PI).sqrt() * (-a * a / (2.0 * b * b)).exp() + a * (1.0 - 2.0 * normal_cdf(-a / b))
}

fn w2_squared_node(g: &mut Graph, ma: NodeId, sa: NodeId, mb: NodeId, sb: NodeId) -> Result<NodeId> {
    let dm = g.sub(ma, mb)?;
    let ds = g.sub(sa, sb)?;
    let dm2 = g.square(dm)?;
    let ds2 = g.square(ds)?;
    Ok(g.add(dm2, ds2)?)
}

fn kl_node(g: &mut Graph, ma: NodeId, sa: NodeId, mb: NodeId, sb: NodeId) -> Result<NodeId> {
    let ratio = g.div(sb, sa)?;
    let log_ratio = g.log(ratio)?;
    let dm = g.sub(ma, mb)?;
    let dm2 = g.square(dm)?;
    let sa2 = g.square(sa)?;
    let num = g.add(sa2, dm2)?;
    let sb2 = g.square(sb)?;
    let den = g.scale(sb2, 2.0)?;
    let frac = g.div(num, den)?;
    let t = g.add(log_ratio, frac)?;
    Ok(g.add_scalar(t, -0.5)?)
}

fn w1_node(g: &mut Graph, ma: NodeId, sa: NodeId, mb: NodeId, sb: NodeId) -> Result<NodeId> {
    let a = g.sub(ma, mb)?;
    let b = g.sub(sa, sb)?;
    if g.scalar_value(b) == 0.0 {
        return Ok(g.abs(a)?);
    }
    let abs_b = g.abs(b)?;
    let r = g.div(a, abs_b)?;
    let r2 = g.square(r)?;
    let half = g.scale(r2, -0.5)?;
    let e = g.exp(half)?;
    let t1 = g.mul(abs_b, e)?;
    let t1 = g.scale(t1, (2.0 / PI).sqrt())?;
    let neg_r = g.neg(r)?;
    let phi = g.normal_cdf(neg_r)?;
    let one_minus = g.scale(phi, -2.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let t2 = g.mul(a, one_minus)?;
    Ok(g.add(t1, t2)?)
}

type PairDistance = fn(&mut Graph, NodeId, NodeId, NodeId, NodeId) -> Result<NodeId>;

fn weighted_pairs(g: &mut Graph, src: &GmmParamsNode, tgt: &GmmParamsNode, w: CriticWeights, d: PairDistance) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(2);
    for k in 0..2 {
        let dk = d(g, src.mean[k], src.std[k], tgt.mean[k], tgt.std[k])?;
        terms.push(g.scale(dk, w.alpha[k])?);
    }
    Ok(g.add(terms[0], terms[1])?)
}

/// `Σ_k α_k [(μˢ_k − μᵗ_k)² + (σˢ_k − σᵗ_k)²]`; mixture weights are ignored.
pub fn adversarial_loss(g: &mut Graph, src: &GmmParamsNode, tgt: &GmmParamsNode, w: CriticWeights) -> Result<NodeId> {
    weighted_pairs(g, src, tgt, w, w2_squared_node)
}

/// `Σ_k α_k KL(source_k ‖ target_k)`.
pub fn kl_loss(g: &mut Graph, src: &GmmParamsNode, tgt: &GmmParamsNode, w: CriticWeights) -> Result<NodeId> {
    weighted_pairs(g, src, tgt, w, kl_node)
}

/// `Σ_k α_k W1(source_k, target_k)`.
pub fn w1_loss(g: &mut Graph, src: &GmmParamsNode, tgt: &GmmParamsNode, w: CriticWeights) -> Result<NodeId> {
    weighted_pairs(g, src, tgt, w, w1_node)
}

/// Result of 1-D two-means clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeans {
    pub centers: [f64; 2],
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Lloyd's algorithm with two centres seeded at the minimum and maximum.
pub fn two_means(xs: &[f64]) -> Result<TwoMeans> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.len() < 2 || !(lo < hi) {
        return Err(CriticError::TooFewDistinct);
    }
    let mut centers = [lo, hi];
    let mut assignments = vec![usize::MAX; xs.len()];
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        for (a, &x) in assignments.iter_mut().zip(xs) {
            let k = usize::from((x - centers[1]).abs() < (x - centers[0]).abs());
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        let mut sum = [0.0; 2];
        let mut count = [0usize; 2];
        for (&a, &x) in assignments.iter().zip(xs) {
            sum[a] += x;
            count[a] += 1;
        }
        for k in 0..2 {
            if count[k] == 0 {
                return Err(CriticError::EmptyCluster(k));
            }
            centers[k] = sum[k] / count[k] as f64;
        }
        if !changed {
            break;
        }
    }
    Ok(TwoMeans {
        centers,
        assignments,
        iterations,
    })
}

fn hard_params(g: &mut Graph, z: NodeId, opts: MBlockOptions) -> Result<GmmParamsNode> {
    let km = two_means(g.value(z).data())?;
    let n = km.assignments.len();
    let mut flat = vec![0.0; n * 2];
    for (i, &a) in km.assignments.iter().enumerate() {
        flat[2 * i + a] = 1.0;
    }
    let gamma = ResponsibilityNode(g.constant(Tensor::matrix(n, 2, flat)?));
    Ok(m_block(g, z, gamma, opts)?)
}

/// Squared-W2 critic over hard 2-means clusters. Assignments are frozen
/// from forward values; cluster moments stay differentiable in `z`.
pub fn kmeans_critic(g: &mut Graph, z_src: NodeId, z_tgt: NodeId, w: CriticWeights, opts: MBlockOptions) -> Result<NodeId> {
    let s = hard_params(g, z_src, opts)?;
    let t = hard_params(g, z_tgt, opts)?;
    adversarial_loss(g, &s, &t, w)
}

/// Feature-level domain classifier: outputs one logit, "source" is class 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: Mlp,
}

impl Discriminator {
    pub fn init(feature_dim: usize, hidden: usize, seed: u64) -> Self {
        let net = Mlp::init(&[feature_dim, hidden, 1], Activation::Relu, Activation::Identity, seed)
            .expect("positive sizes");
        Self { net }
    }

    pub fn from_mlp(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Probability of "source" for each row of `features`.
    pub fn probabilities(&self, features: &Tensor) -> std::result::Result<Vec<f64>, crate::nn::NnError> {
        let logits = self.net.predict(features)?;
        Ok(logits.data().iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect())
    }
}

fn clamped_prob(g: &mut Graph, d: &BoundMlp, f: NodeId) -> Result<NodeId> {
    let logit = d.forward(g, f)?;
    let p = g.sigmoid(logit)?;
    let p = g.clamp_min(p, PROB_CLAMP)?;
    Ok(g.clamp_max(p, 1.0 - PROB_CLAMP)?)
}

/// `mean(−log d(f_src)) + mean(−log(1 − d(f_tgt)))`.
pub fn discriminator_loss(g: &mut Graph, d: &BoundMlp, f_src: NodeId, f_tgt: NodeId) -> Result<NodeId> {
    let ps = clamped_prob(g, d, f_src)?;
    let log_ps = g.log(ps)?;
    let src_term = g.mean(log_ps)?;

    let pt = clamped_prob(g, d, f_tgt)?;
    let neg = g.neg(pt)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let log_qt = g.log(one_minus)?;
    let tgt_term = g.mean(log_qt)?;

    let s = g.add(src_term, tgt_term)?;
    Ok(g.neg(s)?)
}
