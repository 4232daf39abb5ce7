//! Training loop: a feature extractor and classifier trained on labelled
//! source data while a prediction-distribution critic, seen through a
//! gradient reversal layer, pulls unlabelled target predictions toward the
//! source ones.
//!
//! Each step builds one graph with two branches sharing weights:
//!
//! * classification: `sigmoid(f_c(f_g(x_src)))` scored by the asymmetric loss;
//! * adversarial: `sigmoid(f_c(grl(f_g(x))))` for both domains, summarized by
//!   a per-batch mixture fit and compared by the configured critic.
//!
//! The classifier descends the critic while the feature extractor, behind
//! the reversal, ascends it. The E-block that produces the mixture fit is
//! frozen inside the critic and trained only by its consistency loss.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, GrlConfig, NodeId, Tensor};
use crate::critic::{
    adversarial_loss, discriminator_loss, kl_loss, kmeans_critic, w1_loss, CriticError, CriticKind, CriticWeights,
    Discriminator,
};
use crate::data::{
    batches, derive_seed, generate_pair, paired_batches, Batch, DataError, GeneratorSpec, MultiLabelDataset, ShiftSpec,
};
use crate::deepem::{consistency_loss, deepem_estimate, DeepEmError, EBlock, MBlockOptions};
use crate::gmm_em::{default_init, fit_em, EmOptions, Gaussian1D, GmmError, DEFAULT_SIGMA_FLOOR};
use crate::metrics::{evaluate, MetricReport, MetricsError};
use crate::nn::{
    adam_step, forward_mlp, load_snapshot, read_snapshot, save_snapshot, write_snapshot, Activation, AdamConfig,
    AdamState, BoundMlp, Mlp, NnError,
};

const PROB_CLAMP: f64 = 1e-7;
pub const FEATURE_HIDDEN: usize = 64;
pub const FEATURE_DIM: usize = 32;
const DISCRIMINATOR_HIDDEN: usize = 32;
pub const MIN_BENCH_BATCHES: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    DeepEm(#[from] DeepEmError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
        }
    }
}

/// Gradient reversal coefficient over training progress `p ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrlSchedule {
    Constant,
    /// `2 / (1 + e^{-10p}) - 1`
    Ramp,
}

impl GrlSchedule {
    pub fn coefficient(self, progress: f64) -> f64 {
        match self {
            GrlSchedule::Constant => 1.0,
            GrlSchedule::Ramp => 2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0,
        }
    }
}

/// Which side of the reversal layer descends a prediction critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// The classifier descends the critic and the feature extractor ascends it.
    ClassifierMin,
    /// Signs swapped: the classifier ascends, the feature extractor descends.
    ClassifierMax,
}

/// Everything a run depends on. Serialized as one flat JSON document;
/// missing keys take defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub d: usize,
    pub classes: usize,
    pub n_per_domain: usize,
    /// Extra target rows held out for evaluation.
    pub n_test: usize,
    pub shift: ShiftSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    pub lambda: f64,
    pub alpha: [f64; 2],
    pub beta: f64,
    pub tau: f64,
    pub sigma_floor: f64,
    pub critic: CriticKind,
    pub asl: AslConfig,
    pub grl_schedule: GrlSchedule,
    /// Ignored by the discriminator critic, whose head always descends.
    pub orientation: Orientation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 16,
            classes: 8,
            n_per_domain: 2000,
            n_test: 500,
            shift: ShiftSpec::default(),
            batch_size: 64,
            epochs: 25,
            max_lr: 1e-3,
            lambda: 1.0,
            alpha: [0.5, 0.5],
            beta: 1.0,
            tau: 0.5,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            critic: CriticKind::W2,
            asl: AslConfig::default(),
            grl_schedule: GrlSchedule::Constant,
            orientation: Orientation::ClassifierMin,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                TrainError::Config(inner.to_string())
            } else {
                TrainError::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(TrainError::Config(format!("{field}: {why}")));
        if self.d == 0 {
            return bad("d", "must be positive");
        }
        if self.classes < 2 {
            return bad("classes", "must be at least 2");
        }
        if self.n_per_domain == 0 {
            return bad("n_per_domain", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad("max_lr", "must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be nonnegative");
        }
        if CriticWeights::new(self.alpha[0], self.alpha[1]).is_err() {
            return bad("alpha", "entries must be nonnegative with a positive sum");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be nonnegative");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", "must lie in (0, 1)");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor", "must be positive");
        }
        let asl = self.asl;
        if !(asl.gamma_pos >= 0.0 && asl.gamma_neg >= 0.0 && (0.0..1.0).contains(&asl.margin)) {
            return bad("asl", "gammas must be nonnegative and margin in [0, 1)");
        }
        self.shift.validate(self.d).map_err(|e| TrainError::Config(format!("shift: {e}")))
    }

    pub fn generator(&self, n_per_domain: usize) -> GeneratorSpec {
        GeneratorSpec {
            n_per_domain,
            feature_dim: self.d,
            num_classes: self.classes,
            shift: self.shift.clone(),
            p_pos: None,
        }
    }

    fn weights(&self) -> CriticWeights {
        CriticWeights::new(self.alpha[0], self.alpha[1]).expect("validated")
    }

    fn m_block_options(&self) -> MBlockOptions {
        MBlockOptions::with_floor(self.sigma_floor)
    }
}

/// `f_g: d → 64 → 32` (relu), `f_c: 32 → C` (linear, sigmoid applied on
/// top), the E-block, and an optional feature-level discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub f_g: Mlp,
    pub f_c: Mlp,
    pub e_block: EBlock,
    pub discriminator: Option<Discriminator>,
}

impl Model {
    pub fn init(d: usize, classes: usize, seed: u64, with_discriminator: bool) -> Self {
        let f_g = Mlp::init(
            &[d, FEATURE_HIDDEN, FEATURE_DIM],
            Activation::Relu,
            Activation::Relu,
            derive_seed(&[seed, 10]),
        )
        .expect("positive sizes");
        let f_c = Mlp::init(&[FEATURE_DIM, classes], Activation::Relu, Activation::Identity, derive_seed(&[seed, 11]))
            .expect("positive sizes");
        let e_block = EBlock::init(derive_seed(&[seed, 12]));
        let discriminator =
            with_discriminator.then(|| Discriminator::init(FEATURE_DIM, DISCRIMINATOR_HIDDEN, derive_seed(&[seed, 13])));
        Self {
            f_g,
            f_c,
            e_block,
            discriminator,
        }
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self::init(cfg.d, cfg.classes, cfg.seed, cfg.critic == CriticKind::Discriminator)
    }

    /// Zeroes the classifier head so every prediction is exactly 0.5.
    pub fn with_zero_head(mut self) -> Self {
        for p in self.f_c.params_mut() {
            p.data_mut().fill(0.0);
        }
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.f_g.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.f_c.output_dim()
    }

    /// Sigmoid class scores, one row per input row.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.f_g.predict(x)?;
        let logits = self.f_c.predict(&h)?;
        Ok(logits.map(|l| 1.0 / (1.0 + (-l).exp())))
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.f_g.params();
        p.extend(self.f_c.params());
        p.extend(self.e_block.net().params());
        if let Some(d) = &self.discriminator {
            p.extend(d.net().params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.f_g.params_mut();
        p.extend(self.f_c.params_mut());
        p.extend(self.e_block.net_mut().params_mut());
        if let Some(d) = &mut self.discriminator {
            p.extend(d.net_mut().params_mut());
        }
        p
    }

    /// Parameter counts of `(f_g, f_c, e_block, discriminator)`, in the
    /// order used by [`StepGradients::grads`].
    pub fn param_groups(&self) -> [usize; 4] {
        [
            self.f_g.params().len(),
            self.f_c.params().len(),
            self.e_block.net().params().len(),
            self.discriminator.as_ref().map_or(0, |d| d.net().params().len()),
        ]
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.f_g.named_tensors("f_g");
        out.extend(self.f_c.named_tensors("f_c"));
        out.extend(self.e_block.net().named_tensors("e_block"));
        if let Some(d) = &self.discriminator {
            out.extend(d.net().named_tensors("discriminator"));
        }
        out
    }

    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let f_g = Mlp::from_named("f_g", tensors, Activation::Relu, Activation::Relu)?;
        let f_c = Mlp::from_named("f_c", tensors, Activation::Relu, Activation::Identity)?;
        if f_g.output_dim() != f_c.input_dim() {
            return Err(NnError::NonConforming {
                index: f_g.layers().len(),
                expected: f_g.output_dim(),
                got: f_c.input_dim(),
            }
            .into());
        }
        let e_block = EBlock::from_mlp(Mlp::from_named("e_block", tensors, Activation::Relu, Activation::Identity)?)?;
        let discriminator = if tensors.iter().any(|(n, _)| n.starts_with("discriminator.")) {
            Some(Discriminator::from_mlp(Mlp::from_named(
                "discriminator",
                tensors,
                Activation::Relu,
                Activation::Identity,
            )?))
        } else {
            None
        };
        Ok(Self {
            f_g,
            f_c,
            e_block,
            discriminator,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_snapshot(path, &self.named_tensors())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&load_snapshot(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &self.named_tensors()).expect("in-memory write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_named(&read_snapshot(bytes)?)
    }
}

/// Asymmetric multi-label loss over probabilities `z` and 0/1 targets `y`
/// (both `B×C`), averaged over every entry.
///
/// Positives: `-(1-z)^γ⁺ log z`. Negatives use the shifted probability
/// `z_m = max(z - m, 1e-7)`: `-z_m^γ⁻ log(1 - z_m)`.
pub fn asl_loss(g: &mut Graph, z: NodeId, y: NodeId, cfg: AslConfig) -> std::result::Result<NodeId, AutodiffError> {
    let zc = g.clamp_min(z, PROB_CLAMP)?;
    let zc = g.clamp_max(zc, 1.0 - PROB_CLAMP)?;

    let log_z = g.log(zc)?;
    let mut pos = g.mul(y, log_z)?;
    if cfg.gamma_pos != 0.0 {
        let neg_z = g.neg(zc)?;
        let one_minus = g.add_scalar(neg_z, 1.0)?;
        let focus = g.powf(one_minus, cfg.gamma_pos)?;
        pos = g.mul(pos, focus)?;
    }

    let shifted = g.add_scalar(zc, -cfg.margin)?;
    let zm = g.clamp_min(shifted, PROB_CLAMP)?;
    let neg_zm = g.neg(zm)?;
    let one_minus_zm = g.add_scalar(neg_zm, 1.0)?;
    let log_q = g.log(one_minus_zm)?;
    let neg_y = g.neg(y)?;
    let not_y = g.add_scalar(neg_y, 1.0)?;
    let mut neg = g.mul(not_y, log_q)?;
    if cfg.gamma_neg != 0.0 {
        let focus = g.powf(zm, cfg.gamma_neg)?;
        neg = g.mul(neg, focus)?;
    }

    let both = g.add(pos, neg)?;
    let m = g.mean(both)?;
    g.neg(m)
}

/// Which parts of the objective a gradient computation includes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub classification: bool,
    pub adversarial: bool,
    /// Reversal coefficient in front of the adversarial branch; `None`
    /// removes the reversal layer altogether.
    pub grl: Option<f64>,
}

/// Forward values and parameter gradients of one step.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub l_cls: f64,
    pub l_adv: Option<f64>,
    pub consistency: Option<f64>,
    pub total: f64,
    /// Set when the adversarial term was dropped for a degenerate batch.
    pub skipped: Option<String>,
    pub source_gmm: Option<[Gaussian1D; 2]>,
    pub target_gmm: Option<[Gaussian1D; 2]>,
    /// One entry per model parameter; `None` when the parameter did not
    /// influence the objective.
    pub grads: Vec<Option<Tensor>>,
}

struct Bound {
    f_g: BoundMlp,
    f_c: BoundMlp,
    e_block_frozen: crate::deepem::BoundEBlock,
    e_block: crate::deepem::BoundEBlock,
    discriminator: Option<BoundMlp>,
    param_ids: Vec<NodeId>,
}

fn bind(g: &mut Graph, model: &Model) -> Bound {
    let f_g = model.f_g.bind(g);
    let f_c = model.f_c.bind(g);
    let e_block = model.e_block.bind(g);
    let discriminator = model.discriminator.as_ref().map(|d| d.net().bind(g));
    let e_block_frozen = model.e_block.bind_frozen(g);
    let mut param_ids = f_g.param_ids();
    param_ids.extend(f_c.param_ids());
    param_ids.extend(e_block.param_ids());
    if let Some(d) = &discriminator {
        param_ids.extend(d.param_ids());
    }
    Bound {
        f_g,
        f_c,
        e_block_frozen,
        e_block,
        discriminator,
        param_ids,
    }
}

struct Adversarial {
    loss: NodeId,
    consistency: Option<NodeId>,
    source_gmm: Option<[Gaussian1D; 2]>,
    target_gmm: Option<[Gaussian1D; 2]>,
}

fn components(g: &Graph, p: &crate::deepem::GmmParamsNode) -> [Gaussian1D; 2] {
    let (w, m, s) = (p.weights(g), p.means(g), p.stds(g));
    [Gaussian1D::new(w[0], m[0], s[0]), Gaussian1D::new(w[1], m[1], s[1])]
}

/// Degenerate mixtures and clusters are recoverable per batch; anything
/// else is a bug and propagates.
fn degenerate_reason(err: &TrainError) -> Option<String> {
    match err {
        TrainError::DeepEm(DeepEmError::Degenerate { .. })
        | TrainError::DeepEm(DeepEmError::Gmm(_))
        | TrainError::Critic(CriticError::DeepEm(DeepEmError::Degenerate { .. }))
        | TrainError::Critic(CriticError::TooFewDistinct)
        | TrainError::Critic(CriticError::EmptyCluster(_))
        | TrainError::Gmm(_) => Some(err.to_string()),
        _ => None,
    }
}

fn adversarial_branch(
    g: &mut Graph,
    b: &Bound,
    cfg: &ExperimentConfig,
    h_src: NodeId,
    h_tgt: NodeId,
    grl: Option<f64>,
) -> Result<Adversarial> {
    let (hs, ht) = match grl {
        Some(c) => {
            let conf = GrlConfig::new(c)?;
            (g.grl(h_src, conf)?, g.grl(h_tgt, conf)?)
        }
        None => (h_src, h_tgt),
    };
    if cfg.critic == CriticKind::Discriminator {
        let d = b
            .discriminator
            .as_ref()
            .ok_or_else(|| TrainError::Config("critic: discriminator missing from model".into()))?;
        return Ok(Adversarial {
            loss: discriminator_loss(g, d, hs, ht)?,
            consistency: None,
            source_gmm: None,
            target_gmm: None,
        });
    }
    let ls = b.f_c.forward(g, hs)?;
    let zs = g.sigmoid(ls)?;
    let lt = b.f_c.forward(g, ht)?;
    let zt = g.sigmoid(lt)?;
    let w = cfg.weights();
    let opts = cfg.m_block_options();
    if cfg.critic == CriticKind::Kmeans {
        return Ok(Adversarial {
            loss: kmeans_critic(g, zs, zt, w, opts)?,
            consistency: None,
            source_gmm: None,
            target_gmm: None,
        });
    }
    let ps = deepem_estimate(g, &b.e_block_frozen, zs, opts)?;
    let pt = deepem_estimate(g, &b.e_block_frozen, zt, opts)?;
    let loss = match cfg.critic {
        CriticKind::W2 => adversarial_loss(g, &ps, &pt, w)?,
        CriticKind::Kl => kl_loss(g, &ps, &pt, w)?,
        CriticKind::W1 => w1_loss(g, &ps, &pt, w)?,
        _ => unreachable!("handled above"),
    };
    let zs_d = g.detach(zs);
    let zt_d = g.detach(zt);
    let cs = consistency_loss(g, &b.e_block, zs_d, opts)?;
    let ct = consistency_loss(g, &b.e_block, zt_d, opts)?;
    Ok(Adversarial {
        loss,
        consistency: Some(g.add(cs, ct)?),
        source_gmm: Some(components(g, &ps)),
        target_gmm: Some(components(g, &pt)),
    })
}

/// Builds the objective for one batch pair and backpropagates it.
pub fn step_gradients(
    model: &Model,
    cfg: &ExperimentConfig,
    src: &Batch,
    tgt: &Batch,
    terms: LossTerms,
) -> Result<StepGradients> {
    let mut g = Graph::new();
    let b = bind(&mut g, model);
    let d = model.feature_dim();
    let xs = g.constant(src.features.clone());
    let h_src = forward_mlp(&mut g, &b.f_g, xs, d)?;

    let logits = b.f_c.forward(&mut g, h_src)?;
    let z_cls = g.sigmoid(logits)?;
    let labels = src
        .labels
        .as_ref()
        .ok_or_else(|| TrainError::Config("source batch carries no labels".into()))?;
    let y = g.constant(labels.clone());
    let l_cls = asl_loss(&mut g, z_cls, y, cfg.asl)?;

    let run_adv = terms.adversarial && cfg.critic != CriticKind::None && cfg.lambda > 0.0;
    let mut skipped = None;
    let mut adv = None;
    if run_adv {
        let xt = g.constant(tgt.features.clone());
        let h_tgt = forward_mlp(&mut g, &b.f_g, xt, d)?;
        match adversarial_branch(&mut g, &b, cfg, h_src, h_tgt, terms.grl) {
            Ok(a) => adv = Some(a),
            Err(e) => match degenerate_reason(&e) {
                Some(reason) => skipped = Some(reason),
                None => return Err(e),
            },
        }
    }

    let mut parts = Vec::new();
    if terms.classification {
        parts.push(l_cls);
    }
    if let Some(a) = &adv {
        // Critics return 1×1 nodes; fold to the scalar shape of the other terms.
        let mut inner = g.sum(a.loss)?;
        if cfg.orientation == Orientation::ClassifierMax && cfg.critic != CriticKind::Discriminator {
            inner = g.neg(inner)?;
        }
        if let Some(c) = a.consistency {
            let weighted = g.scale(c, cfg.beta)?;
            inner = g.add(inner, weighted)?;
        }
        parts.push(g.scale(inner, cfg.lambda)?);
    }
    let mut grads = vec![None; b.param_ids.len()];
    let total = match parts.as_slice() {
        [] => 0.0,
        [first, rest @ ..] => {
            let mut t = *first;
            for &p in rest {
                t = g.add(t, p)?;
            }
            g.backward(t)?;
            for (slot, &id) in grads.iter_mut().zip(&b.param_ids) {
                *slot = g.grad(id).cloned();
            }
            g.scalar_value(t)
        }
    };
    Ok(StepGradients {
        l_cls: g.scalar_value(l_cls),
        l_adv: adv.as_ref().map(|a| g.scalar_value(a.loss)),
        consistency: adv.as_ref().and_then(|a| a.consistency).map(|c| g.scalar_value(c)),
        total,
        skipped,
        source_gmm: adv.as_ref().and_then(|a| a.source_gmm),
        target_gmm: adv.as_ref().and_then(|a| a.target_gmm),
        grads,
    })
}

/// Applies one Adam update from precomputed gradients.
pub fn apply_gradients(model: &mut Model, grads: &[Option<Tensor>], adam: &mut AdamState) -> Result<()> {
    let refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
    let mut params = model.params_mut();
    Ok(adam_step(&mut params, &refs, adam)?)
}

/// One record per epoch. Wall-clock timing is kept in memory only so that
/// serialized logs are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_adv: Option<f64>,
    pub consistency: Option<f64>,
    pub skipped_batches: usize,
    pub source_map: f64,
    pub target_map: Option<f64>,
    pub source_gmm: Option<[Gaussian1D; 2]>,
    pub target_gmm: Option<[Gaussian1D; 2]>,
    pub grl_coefficient: f64,
    pub learning_rate: f64,
    #[serde(skip)]
    pub seconds_per_batch: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn batch_count(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn train(cfg: &ExperimentConfig, src: &MultiLabelDataset, tgt: &MultiLabelDataset) -> Result<(Model, TrainLog)> {
    train_with_observer(cfg, src, tgt, |_| {})
}

/// Trains from a fresh model; `observer` sees each epoch record as it is
/// produced.
pub fn train_with_observer(
    cfg: &ExperimentConfig,
    src: &MultiLabelDataset,
    tgt: &MultiLabelDataset,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if src.feature_dim() != cfg.d || tgt.feature_dim() != cfg.d {
        return Err(TrainError::Config(format!(
            "d: config says {} but data has {} (source) and {} (target)",
            cfg.d,
            src.feature_dim(),
            tgt.feature_dim()
        )));
    }
    if src.num_classes() != cfg.classes || tgt.num_classes() != cfg.classes {
        return Err(TrainError::Config(format!(
            "classes: config says {} but data has {} (source) and {} (target)",
            cfg.classes,
            src.num_classes(),
            tgt.num_classes()
        )));
    }
    let mut model = Model::for_config(cfg);
    let per_epoch = batch_count(src.len(), cfg.batch_size).max(batch_count(tgt.len(), cfg.batch_size));
    if per_epoch == 0 {
        return Err(TrainError::Config("batch_size: datasets yield no batch of at least 2 rows".into()));
    }
    let total_steps = (per_epoch * cfg.epochs) as u64;
    let mut adam = AdamState::new(model.params(), AdamConfig::new(cfg.max_lr, total_steps))?;
    let mut log = TrainLog::default();
    let terms_for = |step: u64| LossTerms {
        classification: true,
        adversarial: true,
        grl: Some(cfg.grl_schedule.coefficient(step as f64 / total_steps as f64)),
    };

    for epoch in 0..cfg.epochs {
        let pairs = paired_batches(src, tgt, cfg.batch_size, cfg.seed, epoch as u64)?;
        let (mut l_cls, mut l_adv, mut cons) = (Vec::new(), Vec::new(), Vec::new());
        let mut skipped = 0;
        let (mut sg, mut tg) = (None, None);
        let mut coef = 0.0;
        let mut lr = 0.0;
        let started = Instant::now();
        for (s, t) in &pairs {
            let terms = terms_for(adam.step_count());
            coef = terms.grl.unwrap_or(0.0);
            lr = adam.learning_rate();
            let out = step_gradients(&model, cfg, s, t, terms)?;
            apply_gradients(&mut model, &out.grads, &mut adam)?;
            l_cls.push(out.l_cls);
            l_adv.extend(out.l_adv);
            cons.extend(out.consistency);
            skipped += usize::from(out.skipped.is_some());
            sg = out.source_gmm.or(sg);
            tg = out.target_gmm.or(tg);
        }
        let seconds_per_batch = started.elapsed().as_secs_f64() / pairs.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            l_cls: mean(&l_cls).unwrap_or(0.0),
            l_adv: mean(&l_adv),
            consistency: mean(&cons),
            skipped_batches: skipped,
            source_map: evaluate_model(&model, src, cfg.tau)?.map,
            target_map: evaluate_model(&model, tgt, cfg.tau).ok().map(|r| r.map),
            source_gmm: sg,
            target_gmm: tg,
            grl_coefficient: coef,
            learning_rate: lr,
            seconds_per_batch,
        };
        observer(&record);
        log.epochs.push(record);
    }
    Ok((model, log))
}

/// Forward without reversal, threshold at `tau`, score against `ds` labels.
pub fn evaluate_model(model: &Model, ds: &MultiLabelDataset, tau: f64) -> Result<MetricReport> {
    let preds = model.predict(ds.features())?;
    Ok(evaluate(&preds, ds.labels(), tau)?)
}

/// Source set, target rows seen (unlabelled) during training, and held-out
/// target rows for evaluation.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub source: MultiLabelDataset,
    pub target_train: MultiLabelDataset,
    pub target_test: MultiLabelDataset,
}

pub fn experiment_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    cfg.validate()?;
    let (src, tgt) = generate_pair(cfg.seed, &cfg.generator(cfg.n_per_domain + cfg.n_test))?;
    let (source, _) = src.split_at(cfg.n_per_domain);
    let (target_train, target_test) = tgt.split_at(cfg.n_per_domain);
    let target_test = if cfg.n_test == 0 { target_train.clone() } else { target_test };
    Ok(ExperimentData {
        source,
        target_train,
        target_test,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub source: MetricReport,
    pub target: MetricReport,
}

/// Generate, train, and evaluate on held-out target rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = experiment_data(cfg)?;
    let (model, log) = train(cfg, &data.source, &data.target_train)?;
    let source = evaluate_model(&model, &data.source, cfg.tau)?;
    let target = evaluate_model(&model, &data.target_test, cfg.tau)?;
    Ok(ExperimentOutcome {
        model,
        log,
        source,
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean: f64,
    pub std: f64,
}

impl TimingStats {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_batches: usize,
    pub scalars_per_batch: usize,
    pub rel_tol: f64,
    pub em: TimingStats,
    pub deepem: TimingStats,
    pub em_mean_iterations: f64,
}

impl BenchReport {
    /// `method,mean_seconds,std_seconds,batches,scalars_per_batch,rel_tol`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_seconds,std_seconds,batches,scalars_per_batch,rel_tol\n");
        for (name, t) in [("em", self.em), ("deepem", self.deepem)] {
            out.push_str(&format!(
                "{name},{:e},{:e},{},{},{:e}\n",
                t.mean, t.std, self.n_batches, self.scalars_per_batch, self.rel_tol
            ));
        }
        out
    }
}

/// Flattened classifier predictions for `n_batches` batches, taken from a
/// briefly trained source-only model so the values are bimodal.
pub fn prediction_batches(cfg: &ExperimentConfig, n_batches: usize) -> Result<(Model, Vec<Vec<f64>>)> {
    let warm = ExperimentConfig {
        critic: CriticKind::None,
        epochs: cfg.epochs.min(2),
        ..cfg.clone()
    };
    let data = experiment_data(&warm)?;
    let (model, _) = train(&warm, &data.source, &data.target_train)?;
    let mut out = Vec::with_capacity(n_batches);
    let mut epoch = 0;
    while out.len() < n_batches {
        let ds = if epoch % 2 == 0 { &data.source } else { &data.target_train };
        for b in batches(ds, cfg.batch_size, cfg.seed, epoch)? {
            if out.len() == n_batches {
                break;
            }
            out.push(model.predict(&b.features)?.into_data());
        }
        epoch += 1;
    }
    Ok((model, out))
}

/// Times iterative EM against the one-pass estimator on identical batches.
pub fn bench_em_on(model: &Model, batches: &[Vec<f64>], em: &EmOptions) -> Result<BenchReport> {
    if batches.len() < MIN_BENCH_BATCHES {
        return Err(TrainError::Config(format!(
            "batches: need at least {MIN_BENCH_BATCHES}, got {}",
            batches.len()
        )));
    }
    let opts = MBlockOptions::with_floor(em.sigma_floor);
    let (mut em_t, mut deep_t, mut iters) = (Vec::new(), Vec::new(), 0usize);
    for xs in batches {
        let start = Instant::now();
        let fitted = default_init(xs, em.sigma_floor).and_then(|init| fit_em(xs, init, em));
        em_t.push(start.elapsed().as_secs_f64());
        if let Ok((_, trace)) = black_box(&fitted) {
            iters += trace.iterations;
        }

        let start = Instant::now();
        let mut g = Graph::new();
        let eb = model.e_block.bind_frozen(&mut g);
        let z = g.constant(Tensor::vector(xs.clone()));
        let est = deepem_estimate(&mut g, &eb, z, opts).map(|p| p.means(&g));
        deep_t.push(start.elapsed().as_secs_f64());
        black_box(&est);
    }
    Ok(BenchReport {
        n_batches: batches.len(),
        scalars_per_batch: batches[0].len(),
        rel_tol: em.rel_tol,
        em: TimingStats::from_samples(&em_t),
        deepem: TimingStats::from_samples(&deep_t),
        em_mean_iterations: iters as f64 / batches.len() as f64,
    })
}

pub fn bench_em(cfg: &ExperimentConfig, n_batches: usize, rel_tol: f64) -> Result<BenchReport> {
    if n_batches < MIN_BENCH_BATCHES {
        return Err(TrainError::Config(format!(
            "batches: need at least {MIN_BENCH_BATCHES}, got {n_batches}"
        )));
    }
    let (model, preds) = prediction_batches(cfg, n_batches)?;
    let em = EmOptions {
        rel_tol,
        sigma_floor: cfg.sigma_floor,
        ..EmOptions::default()
    };
    bench_em_on(&model, &preds, &em)
}
