//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three interactive operations: fitting a two-component mixture with
//! iterative EM and with the one-pass DeepEM estimator, closed-form
//! distances between two normals, and the 50-bin score histogram. Each
//! binding is a thin wrapper over a plain function so the logic can be
//! tested natively.

use dfda::autodiff::{Graph, Tensor};
use dfda::critic::{kl_gaussian, w1_gaussian, w2, w2_squared, MeanStd};
use dfda::deepem::{deepem_estimate, pretrain_consistency, EBlock, MBlockOptions};
use dfda::gmm_em::{default_init, fit_em, EmOptions, Gaussian1D};
use dfda::metrics::prediction_histogram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const EBLOCK_LR: f64 = 1e-2;

/// Scores from a two-component mixture, clipped to `[0, 1]`.
pub fn sample_scores(seed: u32, n: usize, weight_lo: f64, lo: (f64, f64), hi: (f64, f64)) -> Result<Vec<f64>, String> {
    if !(0.0..=1.0).contains(&weight_lo) {
        return Err(format!("weight must lie in [0, 1], got {weight_lo}"));
    }
    let normal = |(m, s): (f64, f64)| {
        if !(s > 0.0) {
            return Err(format!("standard deviation must be positive, got {s}"));
        }
        Normal::new(m, s).map_err(|e| format!("N({m}, {s}): {e}"))
    };
    let (a, b) = (normal(lo)?, normal(hi)?);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    Ok((0..n)
        .map(|_| {
            let v = if rng.random::<f64>() < weight_lo { a.sample(&mut rng) } else { b.sample(&mut rng) };
            v.clamp(0.0, 1.0)
        })
        .collect())
}

pub fn em_report(values: &[f64], rel_tol: f64) -> Result<Value, String> {
    let opts = EmOptions {
        rel_tol,
        ..EmOptions::default()
    };
    let init = default_init(values, opts.sigma_floor).map_err(|e| e.to_string())?;
    let (model, trace) = fit_em(values, init, &opts).map_err(|e| e.to_string())?;
    Ok(json!({
        "components": model.components(),
        "iterations": trace.iterations,
        "converged": trace.converged,
    }))
}

pub fn deepem_report(eblock: &EBlock, values: &[f64]) -> Result<Value, String> {
    let mut g = Graph::new();
    let bound = eblock.bind_frozen(&mut g);
    let z = g.constant(Tensor::vector(values.to_vec()));
    let est = deepem_estimate(&mut g, &bound, z, MBlockOptions::default()).map_err(|e| e.to_string())?;
    let (w, m, s) = (est.weights(&g), est.means(&g), est.stds(&g));
    let components: Vec<Gaussian1D> = (0..2).map(|k| Gaussian1D::new(w[k], m[k], s[k])).collect();
    Ok(json!({ "components": components }))
}

pub fn distance_report(p: MeanStd, q: MeanStd) -> Result<Value, String> {
    if !(p.std > 0.0 && q.std > 0.0) {
        return Err("standard deviations must be positive".into());
    }
    Ok(json!({
        "w2": w2(p, q),
        "w2_squared": w2_squared(p, q),
        "kl": kl_gaussian(p, q),
        "w1": w1_gaussian(p, q),
    }))
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = sampleScores)]
pub fn sample_scores_js(
    seed: u32,
    n: usize,
    weight_lo: f64,
    mean_lo: f64,
    std_lo: f64,
    mean_hi: f64,
    std_hi: f64,
) -> Result<Vec<f64>, JsError> {
    sample_scores(seed, n, weight_lo, (mean_lo, std_lo), (mean_hi, std_hi)).map_err(js)
}

/// Holds an E-block between calls so it can be pre-trained once and then
/// timed on its own.
#[wasm_bindgen]
pub struct MixtureLab {
    eblock: EBlock,
}

#[wasm_bindgen]
impl MixtureLab {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> MixtureLab {
        MixtureLab {
            eblock: EBlock::init(u64::from(seed)),
        }
    }

    /// Consistency pre-training; returns the final loss.
    pub fn pretrain(&mut self, values: &[f64], steps: u32) -> Result<f64, JsError> {
        let history = pretrain_consistency(&mut self.eblock, values, u64::from(steps), EBLOCK_LR, MBlockOptions::default())
            .map_err(|e| JsError::new(&e.to_string()))?;
        Ok(history.last().copied().unwrap_or(f64::NAN))
    }

    /// Iterative EM; JSON with components, iterations, convergence.
    #[wasm_bindgen(js_name = fitEm)]
    pub fn fit_em(&self, values: &[f64], rel_tol: f64) -> Result<String, JsError> {
        em_report(values, rel_tol).map(|v| v.to_string()).map_err(js)
    }

    /// One forward pass of the E-block plus the closed-form M-block.
    #[wasm_bindgen(js_name = fitDeepEm)]
    pub fn fit_deepem(&self, values: &[f64]) -> Result<String, JsError> {
        deepem_report(&self.eblock, values).map(|v| v.to_string()).map_err(js)
    }
}

#[wasm_bindgen(js_name = gaussianDistances)]
pub fn gaussian_distances(mean_p: f64, std_p: f64, mean_q: f64, std_q: f64) -> Result<String, JsError> {
    distance_report(MeanStd::new(mean_p, std_p), MeanStd::new(mean_q, std_q))
        .map(|v| v.to_string())
        .map_err(js)
}

/// Counts per bin of width 0.02 on `[0, 1]`.
#[wasm_bindgen]
pub fn histogram(values: &[f64]) -> Vec<u32> {
    prediction_histogram(values)
        .counts()
        .iter()
        .map(|&c| u32::try_from(c).unwrap_or(u32::MAX))
        .collect()
}
