use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use dfda::data::{load_csv, save_csv, DomainTag, MultiLabelDataset};
use dfda::deepem::{deepem_estimate, pretrain_consistency, EBlock, MBlockOptions};
use dfda::gmm_em::{default_init, fit_em, EmOptions, Gaussian1D, MStepRule};
use dfda::metrics::prediction_histogram;
use dfda::trainer::{bench_em, evaluate_model, experiment_data, run_experiment, train_with_observer, ExperimentConfig, Model};
use serde_json::json;

use crate::{Command, Method};

const EBLOCK_LR: f64 = 1e-2;

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            out_src,
            out_tgt,
            out_test,
        } => {
            let cfg = read_config(&config)?;
            let data = experiment_data(&cfg)?;
            write_dataset(&data.source, &out_src)?;
            write_dataset(&data.target_train, &out_tgt)?;
            if let Some(path) = out_test {
                write_dataset(&data.target_test, &path)?;
            }
        }
        Command::Train {
            config,
            src,
            tgt,
            out_model,
            log,
        } => {
            let cfg = read_config(&config)?;
            let src = read_dataset(&src, DomainTag::Source, false)?;
            let tgt = read_dataset(&tgt, DomainTag::Target, true)?;
            let (model, train_log) = train_with_observer(&cfg, &src, &tgt, |r| {
                eprintln!(
                    "epoch {:>3}  l_cls {:.4}  l_adv {}  source mAP {:.4}  {:.2e} s/batch",
                    r.epoch,
                    r.l_cls,
                    r.l_adv.map_or("-".into(), |v| format!("{v:.4}")),
                    r.source_map,
                    r.seconds_per_batch
                );
            })?;
            model
                .save(&out_model)
                .with_context(|| format!("writing {}", out_model.display()))?;
            let file = fs::File::create(&log).with_context(|| format!("writing {}", log.display()))?;
            train_log.write_jsonl(std::io::BufWriter::new(file))?;
        }
        Command::Eval { model, data, tau } => {
            let model = read_model(&model)?;
            let ds = read_dataset(&data, DomainTag::Target, true)?;
            let report = evaluate_model(&model, &ds, tau)?;
            println!("{}", report.to_json());
        }
        Command::FitGmm {
            values,
            method,
            legacy_mstep,
            max_iters,
            rel_tol,
            model,
            steps,
            seed,
        } => {
            if method == Method::Deepem && legacy_mstep {
                return Err(CliError::Usage("--legacy-mstep applies to --method em only".into()));
            }
            if method == Method::Em && model.is_some() {
                return Err(CliError::Usage("--model applies to --method deepem only".into()));
            }
            let xs = read_values(&values)?;
            let out = match method {
                Method::Em => fit_classic(&xs, legacy_mstep, max_iters, rel_tol)?,
                Method::Deepem => fit_deep(&xs, model.as_deref(), steps, seed)?,
            };
            println!("{out}");
        }
        Command::BenchEm {
            config,
            batches,
            rel_tol,
        } => {
            let cfg = read_config(&config)?;
            let report = bench_em(&cfg, batches, rel_tol)?;
            print!("{}", report.to_csv());
        }
        Command::Hist { model, data, out } => {
            let model = read_model(&model)?;
            let ds = read_dataset(&data, DomainTag::Target, true)?;
            let preds = model.predict(ds.features())?;
            let hist = prediction_histogram(preds.data());
            fs::write(&out, hist.to_csv()).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::SweepAlpha { config, grid } => {
            let cfg = read_config(&config)?;
            let alphas = parse_grid(&grid).map_err(CliError::Usage)?;
            println!("alpha1,alpha2,source_map,target_map");
            for a in alphas {
                let b = round12(1.0 - a);
                let run = ExperimentConfig {
                    alpha: [a, b],
                    ..cfg.clone()
                };
                let out = run_experiment(&run)?;
                eprintln!("alpha ({a}, {b}): target mAP {:.4}", out.target.map);
                println!("{a},{b},{},{}", out.source.map, out.target.map);
            }
        }
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text).with_context(|| format!("config {}", path.display()))?)
}

fn read_dataset(path: &Path, domain: DomainTag, allow_empty_rows: bool) -> Result<MultiLabelDataset> {
    Ok(load_csv(path, domain, allow_empty_rows).with_context(|| format!("reading {}", path.display()))?)
}

fn write_dataset(ds: &MultiLabelDataset, path: &Path) -> Result<()> {
    Ok(save_csv(ds, path).with_context(|| format!("writing {}", path.display()))?)
}

fn read_model(path: &Path) -> Result<Model> {
    Ok(Model::load(path).with_context(|| format!("reading {}", path.display()))?)
}

/// Every numeric field in the file; a non-numeric first row is a header.
fn read_values(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut xs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().filter(|f| !f.is_empty()).map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => xs.extend(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(anyhow!("{}: line {}: {e}", path.display(), i + 1).into()),
        }
    }
    if xs.len() < 2 {
        return Err(anyhow!("{}: need at least 2 values, found {}", path.display(), xs.len()).into());
    }
    Ok(xs)
}

fn fit_classic(xs: &[f64], legacy: bool, max_iters: usize, rel_tol: f64) -> Result<serde_json::Value> {
    let opts = EmOptions {
        max_iters,
        rel_tol,
        rule: if legacy { MStepRule::Legacy } else { MStepRule::Standard },
        ..EmOptions::default()
    };
    let (model, trace) = fit_em(xs, default_init(xs, opts.sigma_floor)?, &opts)?;
    Ok(json!({
        "method": "em",
        "components": model.components(),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "log_likelihood": trace.log_likelihood_history.last(),
    }))
}

fn fit_deep(xs: &[f64], model: Option<&Path>, steps: u64, seed: u64) -> Result<serde_json::Value> {
    let mut eb = match model {
        Some(path) => read_model(path)?.e_block,
        None => EBlock::init(seed),
    };
    let opts = MBlockOptions::default();
    let history = pretrain_consistency(&mut eb, xs, steps, EBLOCK_LR, opts)?;
    let mut g = dfda::autodiff::Graph::new();
    let bound = eb.bind_frozen(&mut g);
    let z = g.constant(dfda::autodiff::Tensor::vector(xs.to_vec()));
    let est = deepem_estimate(&mut g, &bound, z, opts)?;
    let (w, m, s) = (est.weights(&g), est.means(&g), est.stds(&g));
    let components: Vec<Gaussian1D> = (0..2).map(|k| Gaussian1D::new(w[k], m[k], s[k])).collect();
    Ok(json!({
        "method": "deepem",
        "components": components,
        "pretrain_steps": steps,
        "consistency_loss": history.last(),
    }))
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// `start:stop:step`, inclusive of `stop` up to rounding, within `[0, 1]`.
fn parse_grid(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(format!("--grid expects start:stop:step, got {spec:?}"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("--grid: {s:?}: {e}"));
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
        return Err(format!("--grid: need 0 <= start <= stop <= 1, got {a}:{b}"));
    }
    if !(step > 0.0) {
        return Err(format!("--grid: step must be positive, got {step}"));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| round12(a + i as f64 * step)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive() {
        let g = parse_grid("0.1:0.9:0.1").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[8], 0.9);
        assert_eq!(parse_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
    }

    #[test]
    fn bad_grids_rejected() {
        for g in ["0.1:0.9", "0.9:0.1:0.1", "0:1:0", "a:1:0.1", "0:2:0.5"] {
            assert!(parse_grid(g).is_err(), "{g}");
        }
    }
}
