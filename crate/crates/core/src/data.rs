//! Synthetic multi-label domain-shift pairs, CSV I/O and batching.
//!
//! Every class owns a random unit prototype. A sample's clean feature is
//! the normalized sum of the prototypes of its positive labels plus
//! isotropic noise, larger on the target side. Noisy target features are
//! then rotated (first two axes), scaled and translated, so the target
//! noise is amplified by the scale as well. Label semantics are shared,
//! so the shift is covariate only.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("header column {index}: expected `{expected}`, found `{found}`")]
    Header {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: label column `{column}` holds `{value}`, expected 0 or 1")]
    BadLabel { line: u64, column: String, value: String },
    #[error("row {row} has no positive label")]
    EmptyLabelRow { row: usize },
    #[error("no rows")]
    NoRows,
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

/// Features `n×d` and 0/1 labels `n×C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    features: Tensor,
    labels: Tensor,
    domain: DomainTag,
}

impl MultiLabelDataset {
    pub fn new(features: Tensor, labels: Tensor, domain: DomainTag, allow_empty_rows: bool) -> Result<Self, DataError> {
        if features.rank() != 2 || labels.rank() != 2 || features.rows() != labels.rows() {
            return Err(DataError::InvalidDims(format!(
                "features {:?} and labels {:?} must be matrices with equal row counts",
                features.shape(),
                labels.shape()
            )));
        }
        if labels.cols() < 2 {
            return Err(DataError::InvalidDims(format!("need at least 2 classes, got {}", labels.cols())));
        }
        if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DataError::InvalidDims("labels must be 0 or 1".into()));
        }
        if !allow_empty_rows {
            if let Some(row) = (0..labels.rows()).find(|&r| labels.row(r).iter().all(|&v| v == 0.0)) {
                return Err(DataError::EmptyLabelRow { row });
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: gather_rows(&self.features, indices),
            labels: gather_rows(&self.labels, indices),
            domain: self.domain,
        }
    }

    /// First `n` rows and the remainder.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

fn gather_rows(t: &Tensor, indices: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(indices.len() * c);
    for &i in indices {
        data.extend_from_slice(t.row(i));
    }
    if indices.is_empty() {
        // Keep a valid shape for empty selections.
        return Tensor::zeros(vec![1, c]);
    }
    Tensor::matrix(indices.len(), c, data).expect("consistent row width")
}

/// Per-axis or uniform translation of target features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Translation {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

impl Translation {
    pub fn vector(&self, d: usize) -> Result<Vec<f64>, DataError> {
        match self {
            Translation::Uniform(v) => Ok(vec![*v; d]),
            Translation::PerAxis(v) if v.len() == d => Ok(v.clone()),
            Translation::PerAxis(v) => Err(DataError::InvalidDims(format!(
                "translation has {} entries for {d} feature dims",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub rotation_angle: f64,
    pub translation: Translation,
    pub scale: f64,
    pub noise_sigma_source: f64,
    pub noise_sigma_target: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            rotation_angle: 0.5,
            translation: Translation::Uniform(0.5),
            scale: 1.3,
            noise_sigma_source: 0.05,
            noise_sigma_target: 0.15,
        }
    }
}

impl ShiftSpec {
    /// No shift: both domains share one distribution.
    pub fn identity(noise: f64) -> Self {
        Self {
            rotation_angle: 0.0,
            translation: Translation::Uniform(0.0),
            scale: 1.0,
            noise_sigma_source: noise,
            noise_sigma_target: noise,
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), DataError> {
        if !(self.scale > 0.0) {
            return Err(DataError::InvalidDims(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.noise_sigma_source > 0.0 && self.noise_sigma_target > 0.0) {
            return Err(DataError::InvalidDims("noise sigmas must be positive".into()));
        }
        if d < 2 && self.rotation_angle != 0.0 {
            return Err(DataError::InvalidDims("rotation needs at least 2 feature dims".into()));
        }
        self.translation.vector(d).map(|_| ())
    }

    /// `scale · R(θ) · x + t`, rotating the first two axes.
    pub fn apply(&self, x: &mut [f64], translation: &[f64]) {
        if x.len() >= 2 && self.rotation_angle != 0.0 {
            let (s, c) = self.rotation_angle.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(translation) {
            *v = self.scale * *v + t;
        }
    }

    /// Inverse of [`ShiftSpec::apply`].
    pub fn invert(&self, x: &mut [f64], translation: &[f64]) {
        for (v, t) in x.iter_mut().zip(translation) {
            *v = (*v - t) / self.scale;
        }
        if x.len() >= 2 && self.rotation_angle != 0.0 {
            let (s, c) = self.rotation_angle.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a + s * b;
            x[1] = -s * a + c * b;
        }
    }
}

/// SplitMix64 over a sequence of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub n_per_domain: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub shift: ShiftSpec,
    /// Per-class positive probability; `None` means `2 / C`.
    pub p_pos: Option<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw_domain(
    rng: &mut ChaCha8Rng,
    prototypes: &[Vec<f64>],
    spec: &GeneratorSpec,
    domain: DomainTag,
    translation: &[f64],
) -> MultiLabelDataset {
    let (n, d, c) = (spec.n_per_domain, spec.feature_dim, spec.num_classes);
    let p = spec.p_pos.unwrap_or(2.0 / c as f64);
    let noise = match domain {
        DomainTag::Source => spec.shift.noise_sigma_source,
        DomainTag::Target => spec.shift.noise_sigma_target,
    };
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n * c);
    for _ in 0..n {
        let y: Vec<f64> = loop {
            let y: Vec<f64> = (0..c).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
            if y.iter().any(|&v| v == 1.0) {
                break y;
            }
        };
        let mut x = vec![0.0; d];
        for (proto, _) in prototypes.iter().zip(&y).filter(|(_, &yk)| yk == 1.0) {
            for (xi, pi) in x.iter_mut().zip(proto) {
                *xi += pi;
            }
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for xi in &mut x {
            *xi = *xi / norm + noise * rng.sample::<f64, _>(StandardNormal);
        }
        if domain == DomainTag::Target {
            spec.shift.apply(&mut x, translation);
        }
        features.extend(x);
        labels.extend(y);
    }
    MultiLabelDataset {
        features: Tensor::matrix(n, d, features).expect("n, d positive"),
        labels: Tensor::matrix(n, c, labels).expect("n, c positive"),
        domain,
    }
}

/// Deterministic source/target pair for `seed`.
pub fn generate_pair(seed: u64, spec: &GeneratorSpec) -> Result<(MultiLabelDataset, MultiLabelDataset), DataError> {
    let (n, d, c) = (spec.n_per_domain, spec.feature_dim, spec.num_classes);
    if n == 0 || d == 0 || c < 2 {
        return Err(DataError::InvalidDims(format!("n={n}, d={d}, C={c}: need n ≥ 1, d ≥ 1, C ≥ 2")));
    }
    if let Some(p) = spec.p_pos {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DataError::InvalidDims(format!("p_pos must lie in (0, 1], got {p}")));
        }
    }
    spec.shift.validate(d)?;
    let translation = spec.shift.translation.vector(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..c).map(|_| unit_vector(&mut rng, d)).collect();
    let src = draw_domain(&mut rng, &prototypes, spec, DomainTag::Source, &translation);
    let tgt = draw_domain(&mut rng, &prototypes, spec, DomainTag::Target, &translation);
    Ok((src, tgt))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `feature_*` then `label_*` columns; reals use 17 significant digits.
pub fn save_csv(ds: &MultiLabelDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_csv(ds, file)
}

pub fn write_csv<W: std::io::Write>(ds: &MultiLabelDataset, w: W) -> Result<(), DataError> {
    let mut wr = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..ds.feature_dim())
        .map(|i| format!("feature_{i}"))
        .chain((0..ds.num_classes()).map(|i| format!("label_{i}")))
        .collect();
    wr.write_record(&header)?;
    for r in 0..ds.len() {
        let rec: Vec<String> = ds
            .features
            .row(r)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .chain(ds.labels.row(r).iter().map(|&v| if v == 1.0 { "1".to_string() } else { "0".to_string() }))
            .collect();
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>, domain: DomainTag, allow_empty_rows: bool) -> Result<MultiLabelDataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_csv(file, domain, allow_empty_rows)
}

pub fn read_csv<R: std::io::Read>(r: R, domain: DomainTag, allow_empty_rows: bool) -> Result<MultiLabelDataset, DataError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::NoRows);
    }
    let d = header.iter().take_while(|h| h.starts_with("feature_")).count();
    let c = header.len() - d;
    for (i, found) in header.iter().enumerate() {
        let expected = if i < d {
            format!("feature_{i}")
        } else {
            format!("label_{}", i - d)
        };
        if found != expected {
            return Err(DataError::Header {
                index: i,
                expected,
                found: found.to_string(),
            });
        }
    }
    if d == 0 || c < 2 {
        return Err(DataError::InvalidDims(format!("header has {d} feature and {c} label columns")));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != d + c {
            return Err(DataError::Malformed {
                line,
                message: format!("expected {} fields, found {}", d + c, rec.len()),
            });
        }
        for (i, field) in rec.iter().enumerate().take(d) {
            let v: f64 = field.trim().parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("column `feature_{i}` holds `{field}`, not a number"),
            })?;
            features.push(v);
        }
        for (k, field) in rec.iter().skip(d).enumerate() {
            let v = match field.trim() {
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(DataError::BadLabel {
                        line,
                        column: format!("label_{k}"),
                        value: other.to_string(),
                    })
                }
            };
            labels.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::NoRows);
    }
    MultiLabelDataset::new(
        Tensor::matrix(n, d, features).expect("row count"),
        Tensor::matrix(n, c, labels).expect("row count"),
        domain,
        allow_empty_rows,
    )
}

/// One mini-batch; target batches carry no labels during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn permuted_batches(ds: &MultiLabelDataset, batch_size: usize, seed: u64, with_labels: bool) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| Batch {
            features: gather_rows(&ds.features, chunk),
            labels: with_labels.then(|| gather_rows(&ds.labels, chunk)),
        })
        .collect()
}

/// Shuffled batches for `(seed, epoch)`; a trailing batch of one row is dropped.
pub fn batches(ds: &MultiLabelDataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    Ok(permuted_batches(ds, batch_size, derive_seed(&[seed, epoch, 0]), true))
}

/// Source and target batches advanced together. The side with fewer
/// batches is re-permuted and recycled until the other is exhausted.
pub fn paired_batches(
    src: &MultiLabelDataset,
    tgt: &MultiLabelDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<(Batch, Batch)>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    let draw = |ds: &MultiLabelDataset, stream: u64, pass: u64, labels: bool| {
        permuted_batches(ds, batch_size, derive_seed(&[seed, epoch, stream, pass]), labels)
    };
    let first_src = draw(src, 1, 0, true);
    let first_tgt = draw(tgt, 2, 0, false);
    let total = first_src.len().max(first_tgt.len());
    let extend = |first: Vec<Batch>, ds: &MultiLabelDataset, stream: u64, labels: bool| -> Vec<Batch> {
        let mut out = first;
        let mut pass = 1;
        while out.len() < total && !out.is_empty() {
            out.extend(draw(ds, stream, pass, labels));
            pass += 1;
        }
        out.truncate(total);
        out
    };
    let s = extend(first_src, src, 1, true);
    let t = extend(first_tgt, tgt, 2, false);
    Ok(s.into_iter().zip(t).collect())
}
