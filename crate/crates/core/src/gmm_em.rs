//! Two-component univariate Gaussian mixtures and the classic EM fitter.
//!
//! This is the iterative, non-differentiable reference. [`crate::deepem`]
//! reproduces [`m_step`] as graph operations and is checked against it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-4;
/// Per-point densities are floored here before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("component {component} has zero total responsibility{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Degenerate { component: usize, iteration: Option<usize> },
    #[error("invalid mixture: {0}")]
    InvalidModel(String),
    #[error("{xs} observations but {rows} responsibility rows")]
    LengthMismatch { xs: usize, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    #[serde(rename = "pi")]
    pub weight: f64,
    #[serde(rename = "mu")]
    pub mean: f64,
    #[serde(rename = "sigma")]
    pub std: f64,
}

fn normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

fn log_normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}

impl Gaussian1D {
    pub fn new(weight: f64, mean: f64, std: f64) -> Self {
        Self { weight, mean, std }
    }

    /// Density of the (unweighted) normal at `x`.
    pub fn density(&self, x: f64) -> f64 {
        normal_density(x, self.mean, self.std)
    }

    fn log_weighted_density(&self, x: f64) -> f64 {
        if self.weight <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.weight.ln() + log_normal_density(x, self.mean, self.std)
        }
    }
}

/// Two-component mixture with components ordered by ascending mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    components: [Gaussian1D; 2],
}

impl Gmm2 {
    /// Validates and orders the components. The second weight is set to
    /// `1 - π₁` so the weights sum to one.
    pub fn new(a: Gaussian1D, b: Gaussian1D) -> Result<Self, GmmError> {
        for (i, c) in [a, b].iter().enumerate() {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(GmmError::InvalidModel(format!("weight {} of component {i} outside [0, 1]", c.weight)));
            }
            if !(c.std > 0.0) || !c.std.is_finite() || !c.mean.is_finite() {
                return Err(GmmError::InvalidModel(format!(
                    "component {i} needs finite mean and positive stddev, got ({}, {})",
                    c.mean, c.std
                )));
            }
        }
        if (a.weight + b.weight - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel(format!(
                "weights sum to {}, expected 1",
                a.weight + b.weight
            )));
        }
        let (mut lo, mut hi) = if b.mean < a.mean { (b, a) } else { (a, b) };
        if lo.weight <= hi.weight {
            hi.weight = 1.0 - lo.weight;
        } else {
            lo.weight = 1.0 - hi.weight;
        }
        Ok(Self { components: [lo, hi] })
    }

    pub fn components(&self) -> &[Gaussian1D; 2] {
        &self.components
    }

    pub fn low(&self) -> &Gaussian1D {
        &self.components[0]
    }

    pub fn high(&self) -> &Gaussian1D {
        &self.components[1]
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.density(x)).sum()
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let [a, b] = self.components.map(|c| c.log_weighted_density(x));
        log_sum_exp(a, b)
    }

    /// `Σ log p(x_i)` with each density floored at [`DENSITY_FLOOR`].
    pub fn log_likelihood(&self, xs: &[f64]) -> Result<f64, GmmError> {
        if xs.is_empty() {
            return Err(GmmError::TooFewPoints { needed: 1, got: 0 });
        }
        let floor = DENSITY_FLOOR.ln();
        Ok(xs.iter().map(|&x| self.log_pdf(x).max(floor)).sum())
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Soft assignments, one `[γ_low, γ_high]` row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: Vec<[f64; 2]>,
}

impl Responsibilities {
    /// Rows must be nonnegative and sum to one within `1e-9`.
    pub fn new(rows: Vec<[f64; 2]>) -> Result<Self, GmmError> {
        for (i, r) in rows.iter().enumerate() {
            if r[0] < 0.0 || r[1] < 0.0 || (r[0] + r[1] - 1.0).abs() > 1e-9 {
                return Err(GmmError::InvalidModel(format!("responsibility row {i} = {r:?} is not a distribution")));
            }
        }
        Ok(Self { rows })
    }

    /// Hard assignment to component 0 or 1.
    pub fn hard(labels: &[usize]) -> Self {
        Self {
            rows: labels
                .iter()
                .map(|&k| if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect(),
        }
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major `N×2` copy.
    pub fn to_flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// Posterior component memberships, computed in log space so every row
/// sums to one even when both densities underflow.
pub fn e_step(model: &Gmm2, xs: &[f64]) -> Responsibilities {
    let rows = xs
        .iter()
        .map(|&x| {
            let [a, b] = model.components.map(|c| c.log_weighted_density(x));
            let lse = log_sum_exp(a, b);
            if lse == f64::NEG_INFINITY {
                return [0.5, 0.5];
            }
            let ga = (a - lse).exp();
            [ga, 1.0 - ga]
        })
        .collect();
    Responsibilities { rows }
}

/// Which mean the variance update centres on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepRule {
    /// Freshly updated mean (standard EM).
    #[default]
    Standard,
    /// Previous iteration's mean.
    Legacy,
}

fn weighted_stats(xs: &[f64], gamma: &Responsibilities) -> Result<([f64; 2], [f64; 2]), GmmError> {
    if xs.len() != gamma.len() {
        return Err(GmmError::LengthMismatch {
            xs: xs.len(),
            rows: gamma.len(),
        });
    }
    if xs.is_empty() {
        return Err(GmmError::TooFewPoints { needed: 1, got: 0 });
    }
    let mut nk = [0.0; 2];
    let mut sx = [0.0; 2];
    for (&x, r) in xs.iter().zip(&gamma.rows) {
        for k in 0..2 {
            nk[k] += r[k];
            sx[k] += r[k] * x;
        }
    }
    for (k, &n) in nk.iter().enumerate() {
        if !(n > 0.0) {
            return Err(GmmError::Degenerate {
                component: k,
                iteration: None,
            });
        }
    }
    Ok((nk, [sx[0] / nk[0], sx[1] / nk[1]]))
}

fn finish_m_step(
    xs: &[f64],
    gamma: &Responsibilities,
    nk: [f64; 2],
    means: [f64; 2],
    centres: [f64; 2],
    sigma_floor: f64,
) -> Result<Gmm2, GmmError> {
    let mut var = [0.0; 2];
    for (&x, r) in xs.iter().zip(&gamma.rows) {
        for k in 0..2 {
            let d = x - centres[k];
            var[k] += r[k] * d * d;
        }
    }
    let n = xs.len() as f64;
    let comp = |k: usize| Gaussian1D {
        weight: nk[k] / n,
        mean: means[k],
        std: (var[k] / nk[k]).sqrt().max(sigma_floor),
    };
    Gmm2::new(comp(0), comp(1))
}

/// Closed-form maximum-likelihood update given responsibilities.
pub fn m_step(xs: &[f64], gamma: &Responsibilities, sigma_floor: f64) -> Result<Gmm2, GmmError> {
    let (nk, means) = weighted_stats(xs, gamma)?;
    finish_m_step(xs, gamma, nk, means, means, sigma_floor)
}

/// As [`m_step`], but the variance is taken around `previous`'s means.
/// `gamma`'s columns must follow `previous`'s component order.
pub fn m_step_legacy(xs: &[f64], gamma: &Responsibilities, previous: &Gmm2, sigma_floor: f64) -> Result<Gmm2, GmmError> {
    let (nk, means) = weighted_stats(xs, gamma)?;
    let centres = [previous.components[0].mean, previous.components[1].mean];
    finish_m_step(xs, gamma, nk, means, centres, sigma_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub sigma_floor: f64,
    pub rule: MStepRule,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            rule: MStepRule::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: usize,
    /// Log-likelihood of the initial model followed by one entry per update.
    pub log_likelihood_history: Vec<f64>,
    pub converged: bool,
}

/// Alternates E and M steps until the relative log-likelihood change drops
/// below `rel_tol` or `max_iters` updates have been applied.
pub fn fit_em(xs: &[f64], init: Gmm2, opts: &EmOptions) -> Result<(Gmm2, EmTrace), GmmError> {
    if xs.len() < 2 {
        return Err(GmmError::TooFewPoints { needed: 2, got: xs.len() });
    }
    if opts.max_iters == 0 {
        return Err(GmmError::InvalidModel("max_iters must be at least 1".into()));
    }
    let mut model = init;
    let mut prev_ll = model.log_likelihood(xs)?;
    let mut history = vec![prev_ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        let gamma = e_step(&model, xs);
        let next = match opts.rule {
            MStepRule::Standard => m_step(xs, &gamma, opts.sigma_floor),
            MStepRule::Legacy => m_step_legacy(xs, &gamma, &model, opts.sigma_floor),
        };
        model = next.map_err(|e| match e {
            GmmError::Degenerate { component, .. } => GmmError::Degenerate {
                component,
                iteration: Some(it),
            },
            other => other,
        })?;
        iterations = it;
        let ll = model.log_likelihood(xs)?;
        history.push(ll);
        let rel = (ll - prev_ll).abs() / ll.abs().max(1.0);
        prev_ll = ll;
        if rel < opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok((
        model,
        EmTrace {
            iterations,
            log_likelihood_history: history,
            converged,
        },
    ))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Means at the 10th and 90th percentiles, both stddevs at half the
/// sample stddev, equal weights.
pub fn default_init(xs: &[f64], sigma_floor: f64) -> Result<Gmm2, GmmError> {
    if xs.len() < 2 {
        return Err(GmmError::TooFewPoints { needed: 2, got: xs.len() });
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let std = (var.sqrt() / 2.0).max(sigma_floor);
    Gmm2::new(
        Gaussian1D::new(0.5, quantile(&sorted, 0.1), std),
        Gaussian1D::new(0.5, quantile(&sorted, 0.9), std),
    )
}
