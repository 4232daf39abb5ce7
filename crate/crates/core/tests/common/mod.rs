#![allow(dead_code)]

use dfda::autodiff::{finite_difference_check_many, AutodiffError, Graph, GrlConfig, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[lo, hi]` and random sign.
fn away_from(rng: &mut ChaCha8Rng, shape: Vec<usize>, centre: f64, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                centre + m
            } else {
                centre - m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Weighted sum of every entry, so each output coordinate matters.
pub fn readout(g: &mut Graph, out: NodeId) -> Result<NodeId, AutodiffError> {
    let shape = g.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.5 + 0.25 * (i % 4) as f64).collect())?;
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

type Build = fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub build: Build,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=4))
}

fn std_mat(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![uniform(rng, vec![r, c], -2.0, 2.0)]
}

fn pair(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![uniform(rng, vec![r, c], -2.0, 2.0), uniform(rng, vec![r, c], -2.0, 2.0)]
}

fn positive(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![uniform(rng, vec![r, c], 0.2, 3.0)]
}

fn kinked_at_zero(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![away_from(rng, vec![r, c], 0.0, 0.05, 2.0)]
}

fn kinked_at_half(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![away_from(rng, vec![r, c], 0.5, 0.05, 2.0)]
}

/// One case per operation kind the graph supports.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: |r| {
                let (m, k) = dims(r);
                let n = r.random_range(1..=3);
                vec![uniform(r, vec![m, k], -2.0, 2.0), uniform(r, vec![k, n], -2.0, 2.0)]
            },
            build: |g, x| g.matmul(x[0], x[1]),
        },
        OpCase { name: "add", inputs: pair, build: |g, x| g.add(x[0], x[1]) },
        OpCase { name: "sub", inputs: pair, build: |g, x| g.sub(x[0], x[1]) },
        OpCase { name: "mul", inputs: pair, build: |g, x| g.mul(x[0], x[1]) },
        OpCase {
            name: "div",
            inputs: |r| {
                let (m, n) = dims(r);
                vec![uniform(r, vec![m, n], -2.0, 2.0), away_from(r, vec![m, n], 0.0, 0.5, 2.0)]
            },
            build: |g, x| g.div(x[0], x[1]),
        },
        OpCase {
            name: "add_row",
            inputs: |r| {
                let (m, n) = dims(r);
                vec![uniform(r, vec![m, n], -2.0, 2.0), uniform(r, vec![1, n], -2.0, 2.0)]
            },
            build: |g, x| g.add_row(x[0], x[1]),
        },
        OpCase { name: "scalar_mul", inputs: std_mat, build: |g, x| g.scale(x[0], -1.7) },
        OpCase { name: "add_scalar", inputs: std_mat, build: |g, x| g.add_scalar(x[0], 0.3) },
        OpCase { name: "neg", inputs: std_mat, build: |g, x| g.neg(x[0]) },
        OpCase { name: "sigmoid", inputs: std_mat, build: |g, x| g.sigmoid(x[0]) },
        OpCase { name: "relu", inputs: kinked_at_zero, build: |g, x| g.relu(x[0]) },
        OpCase { name: "exp", inputs: std_mat, build: |g, x| g.exp(x[0]) },
        OpCase { name: "log", inputs: positive, build: |g, x| g.log(x[0]) },
        OpCase { name: "sqrt", inputs: positive, build: |g, x| g.sqrt(x[0]) },
        OpCase { name: "square", inputs: std_mat, build: |g, x| g.square(x[0]) },
        OpCase { name: "powf", inputs: positive, build: |g, x| g.powf(x[0], 2.5) },
        OpCase { name: "abs", inputs: kinked_at_zero, build: |g, x| g.abs(x[0]) },
        OpCase { name: "normal_cdf", inputs: std_mat, build: |g, x| g.normal_cdf(x[0]) },
        OpCase { name: "clamp_min", inputs: kinked_at_zero, build: |g, x| g.clamp_min(x[0], 0.0) },
        OpCase { name: "clamp_max", inputs: kinked_at_half, build: |g, x| g.clamp_max(x[0], 0.5) },
        OpCase { name: "sum", inputs: std_mat, build: |g, x| {
            let s = g.sum(x[0])?;
            g.square(s)
        } },
        OpCase { name: "mean", inputs: std_mat, build: |g, x| {
            let s = g.mean(x[0])?;
            g.square(s)
        } },
        OpCase { name: "column_sum", inputs: std_mat, build: |g, x| g.column_sum(x[0]) },
        OpCase { name: "row_softmax", inputs: std_mat, build: |g, x| g.row_softmax(x[0]) },
        OpCase {
            name: "concat_rows",
            inputs: |r| {
                let (m, n) = dims(r);
                let k = r.random_range(1..=3);
                vec![uniform(r, vec![m, n], -2.0, 2.0), uniform(r, vec![k, n], -2.0, 2.0)]
            },
            build: |g, x| g.concat_rows(&[x[0], x[1]]),
        },
        OpCase {
            name: "slice_rows",
            inputs: |r| {
                let c = r.random_range(1..=4);
                vec![uniform(r, vec![3, c], -2.0, 2.0)]
            },
            build: |g, x| g.slice_rows(x[0], 1, 3),
        },
        OpCase {
            name: "slice_cols",
            inputs: |r| {
                let m = r.random_range(1..=3);
                vec![uniform(r, vec![m, 4], -2.0, 2.0)]
            },
            build: |g, x| g.slice_cols(x[0], 1, 3),
        },
        OpCase {
            name: "reshape",
            inputs: |r| vec![uniform(r, vec![2, 3], -2.0, 2.0)],
            build: |g, x| {
                let y = g.reshape(x[0], vec![3, 2])?;
                let w = g.constant(Tensor::matrix(2, 1, vec![0.7, -1.3])?);
                g.matmul(y, w)
            },
        },
        OpCase {
            name: "transpose",
            inputs: std_mat,
            build: |g, x| {
                let t = g.transpose(x[0])?;
                let m = g.value(x[0]).rows();
                let w = g.constant(Tensor::matrix(m, 1, (0..m).map(|i| 1.0 + i as f64).collect())?);
                g.matmul(t, w)
            },
        },
    ]
}

/// Checks every op on `draws` random inputs; returns the worst relative
/// error per op name.
pub fn sweep_ops(draws: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    op_cases()
        .into_iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            for _ in 0..draws {
                let inputs = (case.inputs)(&mut rng);
                let build = case.build;
                let report = finite_difference_check_many(
                    |g, ids| {
                        let out = build(g, ids)?;
                        readout(g, out)
                    },
                    &inputs,
                    FD_STEP,
                    FD_TOL,
                )
                .unwrap_or_else(|e| panic!("{}: {e}", case.name));
                worst = worst.max(report.max_rel_error);
            }
            (case.name, worst)
        })
        .collect()
}

/// The reversal layer is the identity forward, so central differences see
/// the identity; its analytic gradient must equal `-c` times that.
pub fn grl_sweep(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..draws {
        let coef = [0.0, 0.5, 1.0, 2.0][i % 4];
        let x = std_mat(&mut rng).remove(0);
        let report = finite_difference_check_many(
            |g, ids| {
                let y = g.grl(ids[0], GrlConfig::new(coef)?)?;
                readout(g, y)
            },
            std::slice::from_ref(&x),
            FD_STEP,
            FD_TOL,
        )
        .unwrap();
        for (a, n) in report.analytic[0].data().iter().zip(report.numeric[0].data()) {
            let expected = -coef * n;
            let err = (a - expected).abs() / a.abs().max(expected.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

/// Independent metric oracle: ranks are counted pairwise rather than by
/// sorting, and every quantity comes from explicit confusion counts.
/// Returns `[mAP, CP, CR, CF1, OP, OR, OF1]`.
pub fn brute_force_metrics(pred: &[Vec<f64>], labels: &[Vec<u8>], tau: f64) -> [f64; 7] {
    let n = pred.len();
    let c = pred[0].len();
    let (mut ap_sum, mut p_sum, mut r_sum, mut classes) = (0.0, 0.0, 0.0, 0.0);
    let (mut tp_all, mut fp_all, mut fn_all) = (0u32, 0u32, 0u32);
    for k in 0..c {
        let positives: Vec<usize> = (0..n).filter(|&i| labels[i][k] == 1).collect();
        let (mut tp, mut fp, mut fnn) = (0u32, 0u32, 0u32);
        for i in 0..n {
            let hit = pred[i][k] > tau;
            match (hit, labels[i][k] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fnn;
        if positives.is_empty() {
            continue;
        }
        let ranked_before = |i: usize, j: usize| pred[j][k] > pred[i][k] || (pred[j][k] == pred[i][k] && j < i);
        let mut terms: Vec<(usize, f64)> = positives
            .iter()
            .map(|&i| {
                let rank = 1 + (0..n).filter(|&j| ranked_before(i, j)).count();
                let hits = 1 + positives.iter().filter(|&&j| ranked_before(i, j)).count();
                (rank, hits as f64 / rank as f64)
            })
            .collect();
        // Accumulate best rank first so rounding matches a ranked sweep.
        terms.sort_by_key(|t| t.0);
        let ap: f64 = terms.iter().map(|t| t.1).sum();
        ap_sum += ap / positives.len() as f64;
        p_sum += if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        r_sum += tp as f64 / (tp + fnn) as f64;
        classes += 1.0;
    }
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let (cp, cr) = (p_sum / classes, r_sum / classes);
    let op = if tp_all + fp_all == 0 { 0.0 } else { tp_all as f64 / (tp_all + fp_all) as f64 };
    let or = tp_all as f64 / (tp_all + fn_all) as f64;
    [ap_sum / classes, cp, cr, f1(cp, cr), op, or, f1(op, or)]
}

/// The seeded `8×3` fixture used by the metrics oracle checks.
pub fn metrics_fixture() -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let mut r = rng(2024);
    let pred: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let mut labels: Vec<Vec<u8>> = (0..8).map(|_| (0..3).map(|_| u8::from(r.random_bool(0.4))).collect()).collect();
    // Every class gets at least one positive.
    for k in 0..3 {
        labels[k][k] = 1;
    }
    (pred, labels)
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::matrix(rows.len(), rows[0].len(), rows.concat()).unwrap()
}

pub fn labels_tensor(rows: &[Vec<u8>]) -> Tensor {
    Tensor::matrix(rows.len(), rows[0].len(), rows.iter().flatten().map(|&v| f64::from(v)).collect()).unwrap()
}

/// Tanh-sinh quadrature of `f` over `(a, b)`; tolerates integrable
/// endpoint singularities. Non-finite samples are dropped.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let h = 1.0 / 64.0;
    let half = 0.5 * (b - a);
    let mut total = 0.0;
    for k in -384..=384 {
        let t = k as f64 * h;
        let s = FRAC_PI_2 * t.sinh();
        let w = FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
        // 1 - |tanh s| without cancellation near the endpoints.
        let gap = half * 2.0 / (1.0 + (2.0 * s.abs()).exp());
        let u = if s < 0.0 { a + gap } else { b - gap };
        if !(u > a && u < b) || w == 0.0 {
            continue;
        }
        let v = f(u);
        if v.is_finite() {
            total += w * v;
        }
    }
    total * half * h
}

/// Samples from a two-component mixture.
pub fn sample_mixture(seed: u64, n: usize, w: f64, a: (f64, f64), b: (f64, f64)) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = rng(seed);
    let na = Normal::new(a.0, a.1).unwrap();
    let nb = Normal::new(b.0, b.1).unwrap();
    (0..n)
        .map(|_| if rng.random::<f64>() < w { na.sample(&mut rng) } else { nb.sample(&mut rng) })
        .collect()
}

/// Largest per-iteration log-likelihood drop over `datasets` random
/// mixtures (negative or zero when EM is monotone).
pub fn em_worst_drop(datasets: u64) -> f64 {
    use dfda::gmm_em::{default_init, fit_em, EmOptions};
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..datasets {
        let mut r = rng(1000 + seed);
        let n = r.random_range(20..400);
        let w = r.random_range(0.1..0.9);
        let a = (r.random_range(-1.0..1.0), r.random_range(0.05..0.5));
        let b = (r.random_range(-1.0..1.0), r.random_range(0.05..0.5));
        let xs = sample_mixture(seed, n, w, a, b);
        let opts = EmOptions {
            rel_tol: 1e-12,
            ..EmOptions::default()
        };
        let (_, trace) = fit_em(&xs, default_init(&xs, opts.sigma_floor).unwrap(), &opts).unwrap();
        for pair in trace.log_likelihood_history.windows(2) {
            worst = worst.max(pair[0] - pair[1]);
        }
    }
    worst
}

/// E-block weights as explicit leaves so they can be perturbed.
pub fn eblock_tensors(seed: u64) -> Vec<Tensor> {
    dfda::deepem::EBlock::init(seed).net().params().into_iter().cloned().collect()
}

pub fn bind_eblock(ids: &[NodeId]) -> dfda::deepem::BoundEBlock {
    use dfda::nn::{Activation, BoundLayer, BoundMlp};
    let layers = ids
        .chunks(2)
        .enumerate()
        .map(|(i, wb)| BoundLayer {
            weights: wb[0],
            bias: wb[1],
            activation: if i + 1 == ids.len() / 2 { Activation::Identity } else { Activation::Relu },
        })
        .collect();
    dfda::deepem::BoundEBlock::new(BoundMlp::from_layers(layers))
}

pub fn deepem_to_ad(e: dfda::deepem::DeepEmError) -> AutodiffError {
    match e {
        dfda::deepem::DeepEmError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

/// Largest deviation of the graph M-block (no variance stabilizer) from
/// the closed-form M-step over `cases` random `(z, γ)` pairs.
pub fn m_block_oracle_error(cases: usize, seed: u64) -> f64 {
    use dfda::deepem::{m_block, MBlockOptions, ResponsibilityNode};
    use dfda::gmm_em::{m_step, Responsibilities};
    let mut r = rng(seed);
    let exact = MBlockOptions {
        variance_eps: 0.0,
        ..MBlockOptions::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = r.random_range(4..40);
        let z: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let gamma: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let a = r.random_range(0.02..0.98);
                [a, 1.0 - a]
            })
            .collect();
        let mut g = Graph::new();
        let zn = g.constant(Tensor::vector(z.clone()));
        let flat = gamma.iter().flatten().copied().collect();
        let gn = ResponsibilityNode(g.constant(Tensor::matrix(n, 2, flat).unwrap()));
        let params = m_block(&mut g, zn, gn, exact).unwrap();
        let oracle = m_step(&z, &Responsibilities::new(gamma).unwrap(), exact.sigma_floor).unwrap();
        let (w, m, s) = (params.weights(&g), params.means(&g), params.stds(&g));
        for (k, c) in oracle.components().iter().enumerate() {
            worst = worst.max((w[k] - c.weight).abs()).max((m[k] - c.mean).abs()).max((s[k] - c.std).abs());
        }
    }
    worst
}

/// Finite-difference check of the squared-W2 critic through DeepEM, with
/// respect to both score batches and every E-block weight. Returns the
/// worst relative error over `cases` draws.
pub fn critic_gradcheck(cases: u64, seed: u64) -> f64 {
    use dfda::critic::{adversarial_loss, CriticError, CriticWeights};
    use dfda::deepem::{deepem_estimate, MBlockOptions};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        // Separated score ranges keep the critic, and so every gradient
        // entry, well above central-difference roundoff.
        let zs: Vec<f64> = (0..12).map(|_| r.random_range(0.02..0.6)).collect();
        let zt: Vec<f64> = (0..12).map(|_| r.random_range(0.4..0.98)).collect();
        let mut params = vec![Tensor::matrix(3, 4, zs).unwrap(), Tensor::matrix(3, 4, zt).unwrap()];
        params.extend(eblock_tensors(case));
        let report = finite_difference_check_many(
            |g, ids| {
                let eb = bind_eblock(&ids[2..]);
                let s = deepem_estimate(g, &eb, ids[0], MBlockOptions::default()).map_err(deepem_to_ad)?;
                let t = deepem_estimate(g, &eb, ids[1], MBlockOptions::default()).map_err(deepem_to_ad)?;
                let l = adversarial_loss(g, &s, &t, CriticWeights::default()).map_err(|e| match e {
                    CriticError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                g.sum(l)
            },
            &params,
            FD_STEP,
            FD_TOL,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}
