//! Mean-pooling bi-encoder with an additive target marker.
//!
//! A marked sentence is encoded as
//!
//! ```text
//! h = (1/n) Σ_i E[tok_i] + mu ⊙ E[tok_t]
//! ```
//!
//! where `t` is the marked position. With `mu = 0` every marking of a sentence maps to
//! the same vector, which is the collapse adversarial negatives are meant to break.
//! Row 0 of `E` is the unknown-token row; it stays at zero and is never updated.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ContrastivePair;
use crate::rng::{rng_for, stream};

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const DEFAULT_DIM: usize = 16;
const INIT_RANGE: f64 = 0.1;
const INIT_MARKER: f64 = 0.1;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `vocab.len() × dim`.
    pub embeddings: Vec<f64>,
    pub marker: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl EncoderParams {
    /// Initializes a model over `tokens` (deduplicated and sorted; row 0 is reserved).
    /// Embeddings are uniform in (-0.1, 0.1) and the marker starts at 0.1 everywhere.
    pub fn init<'a, I>(tokens: I, dim: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        let words: BTreeSet<&str> = tokens.into_iter().filter(|t| *t != UNKNOWN_TOKEN).collect();
        let mut vocab = Vec::with_capacity(words.len() + 1);
        vocab.push(UNKNOWN_TOKEN.to_string());
        vocab.extend(words.into_iter().map(String::from));
        let mut rng = rng_for(seed, stream::INIT, 0, 0);
        let mut embeddings = vec![0.0; vocab.len() * dim];
        for x in &mut embeddings[dim..] {
            *x = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        Self::from_parts(vocab, embeddings, vec![INIT_MARKER; dim], dim, seed)
            .expect("freshly initialized parameters are consistent")
    }

    /// Initializes over every token occurring in `pairs`.
    pub fn init_from_pairs(pairs: &[ContrastivePair], dim: usize, seed: u64) -> Self {
        Self::init(pairs.iter().flat_map(|p| p.tokens1.iter().chain(&p.tokens2)).map(String::as_str), dim, seed)
    }

    pub fn from_parts(
        vocab: Vec<String>,
        embeddings: Vec<f64>,
        marker: Vec<f64>,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let bad = |m: String| Err(ModelError::InvalidCheckpoint(m));
        if dim < 2 {
            return bad(format!("dimension {dim} < 2"));
        }
        if vocab.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return bad(format!("row 0 must be {UNKNOWN_TOKEN}"));
        }
        if embeddings.len() != vocab.len() * dim || marker.len() != dim {
            return bad("shape mismatch".into());
        }
        if embeddings.iter().chain(&marker).any(|x| !x.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if embeddings[..dim].iter().any(|&x| x != 0.0) {
            return bad("unknown-token row must be zero".into());
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return bad(format!("duplicate vocabulary entry {w:?}"));
            }
        }
        Ok(EncoderParams { vocab, index, embeddings, marker, dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn rows(&self) -> usize {
        self.vocab.len()
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    pub fn to_checkpoint(&self, threshold: Option<f64>) -> Checkpoint {
        Checkpoint {
            vocab: self.vocab.clone(),
            dim: self.dim,
            embeddings: self.embeddings.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            marker: self.marker.clone(),
            seed: self.seed,
            threshold,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, ModelError> {
        if ck.embeddings.iter().any(|r| r.len() != ck.dim) {
            return Err(ModelError::InvalidCheckpoint("ragged embedding rows".into()));
        }
        let flat = ck.embeddings.into_iter().flatten().collect();
        Self::from_parts(ck.vocab, flat, ck.marker, ck.dim, ck.seed)
    }
}

/// Serialized model: vocabulary, row-major embeddings, marker, dimension, training seed
/// and the dev-tuned decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub vocab: Vec<String>,
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
    pub marker: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub threshold: Option<f64>,
}

/// Forward intermediates needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub rows: Vec<usize>,
    pub target_row: usize,
    pub pooled: Vec<f64>,
}

pub fn encode(params: &EncoderParams, tokens: &[String], target_index: usize) -> (Vec<f64>, EncodeTrace) {
    let rows: Vec<usize> = tokens.iter().map(|t| params.row_of(t)).collect();
    let target_row = rows[target_index];
    let pooled = pool(params, &rows, target_row);
    (pooled.clone(), EncodeTrace { rows, target_row, pooled })
}

fn pool(params: &EncoderParams, rows: &[usize], target_row: usize) -> Vec<f64> {
    let d = params.dim;
    let mut h = vec![0.0; d];
    for &r in rows {
        for (acc, e) in h.iter_mut().zip(params.row(r)) {
            *acc += e;
        }
    }
    let n = rows.len() as f64;
    let target = params.row(target_row);
    for k in 0..d {
        h[k] = h[k] / n + params.marker[k] * target[k];
    }
    h
}

impl EncodeTrace {
    /// Re-runs the forward pass from the recorded rows.
    pub fn recompute(&self, params: &EncoderParams) -> Vec<f64> {
        pool(params, &self.rows, self.target_row)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, ModelError> {
    let (nu, nv) = (norm(u), norm(v));
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Err(ModelError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the two marked sentences of a pair; 0 when either side
/// encodes to the zero vector (e.g. every token unknown).
pub fn score_pair(params: &EncoderParams, pair: &ContrastivePair) -> f64 {
    let (u, _) = encode(params, &pair.tokens1, pair.target_index1);
    let (v, _) = encode(params, &pair.tokens2, pair.target_index2);
    cosine(&u, &v).unwrap_or(0.0)
}

/// Sparse gradient: touched embedding rows plus the marker.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub marker: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(dim: usize) -> Self {
        ParamGrads { rows: BTreeMap::new(), marker: vec![0.0; dim] }
    }

    pub fn is_finite(&self) -> bool {
        self.marker.iter().chain(self.rows.values().flatten()).all(|x| x.is_finite())
    }

    fn add_to_row(&mut self, row: usize, scale: f64, g: &[f64], weights: Option<&[f64]>) {
        if row == 0 {
            return;
        }
        let dim = g.len();
        let acc = self.rows.entry(row).or_insert_with(|| vec![0.0; dim]);
        match weights {
            Some(w) => {
                for k in 0..dim {
                    acc[k] += w[k] * g[k];
                }
            }
            None => {
                for k in 0..dim {
                    acc[k] += scale * g[k];
                }
            }
        }
    }

    fn add_side(&mut self, params: &EncoderParams, trace: &EncodeTrace, g: &[f64]) {
        let inv_n = 1.0 / trace.rows.len() as f64;
        for &r in &trace.rows {
            self.add_to_row(r, inv_n, g, None);
        }
        self.add_to_row(trace.target_row, 1.0, g, Some(&params.marker));
        let target = params.row(trace.target_row);
        for k in 0..g.len() {
            self.marker[k] += target[k] * g[k];
        }
    }
}

/// Gradient of `dl_ds · cos(h1, h2)` with respect to the parameters.
pub fn grad_pair(
    params: &EncoderParams,
    trace1: &EncodeTrace,
    trace2: &EncodeTrace,
    dl_ds: f64,
) -> Result<ParamGrads, ModelError> {
    let mut grads = ParamGrads::zeros(params.dim);
    accumulate_grad_pair(&mut grads, params, trace1, trace2, dl_ds)?;
    Ok(grads)
}

/// Adds the gradient of `dl_ds · cos(h1, h2)` into `grads`.
pub fn accumulate_grad_pair(
    grads: &mut ParamGrads,
    params: &EncoderParams,
    trace1: &EncodeTrace,
    trace2: &EncodeTrace,
    dl_ds: f64,
) -> Result<(), ModelError> {
    let (h1, h2) = (&trace1.pooled, &trace2.pooled);
    let (n1, n2) = (norm(h1), norm(h2));
    if n1 < NORM_FLOOR || n2 < NORM_FLOOR {
        return Err(ModelError::ZeroVector);
    }
    let s = dot(h1, h2) / (n1 * n2);
    // d cos / d h1 = h2 / (|h1||h2|) - s h1 / |h1|², symmetric for h2.
    let g1: Vec<f64> = (0..params.dim).map(|k| dl_ds * (h2[k] / (n1 * n2) - s * h1[k] / (n1 * n1))).collect();
    let g2: Vec<f64> = (0..params.dim).map(|k| dl_ds * (h1[k] / (n1 * n2) - s * h2[k] / (n2 * n2))).collect();
    grads.add_side(params, trace1, &g1);
    grads.add_side(params, trace2, &g2);
    Ok(())
}
