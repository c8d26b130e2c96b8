//! Evaluation: thresholded accuracy and F1, plus diagnostics of the embedding space.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{candidate_indices, lexical_negative};
use crate::corpus::{ContrastivePair, Origin};
use crate::model::{cosine, encode, score_pair, EncoderParams};
use crate::rng::{rng_for, stream};

/// Largest sample used by [`anisotropy`].
pub const ANISOTROPY_SAMPLE: usize = 500;
pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("power iteration did not converge for component {component} after {iters} iterations")]
    ConvergenceFailure { component: usize, iters: usize },
    #[error("invalid PCA request: {0}")]
    InvalidPca(String),
}

pub fn score_pairs(params: &EncoderParams, pairs: &[ContrastivePair]) -> Vec<f64> {
    pairs.par_iter().map(|p| score_pair(params, p)).collect()
}

pub fn binary_labels(pairs: &[ContrastivePair]) -> Vec<bool> {
    pairs.iter().map(|p| p.label > 0.5).collect()
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Accuracy-maximizing threshold and its accuracy.
///
/// Candidate cuts lie at midpoints between adjacent distinct sorted scores, plus the
/// two extremes (everything positive at the minimum score, nothing positive just
/// above the maximum). Ties go to the lowest threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64), EvalError> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(EvalError::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();

    // Cut c predicts the first c sorted entries negative.
    let mut correct = positives;
    let mut best = (sorted[0].0, correct);
    for c in 1..=n {
        if sorted[c - 1].1 {
            correct -= 1;
        } else {
            correct += 1;
        }
        if c < n && sorted[c - 1].0 == sorted[c].0 {
            continue;
        }
        if correct > best.1 {
            let threshold = if c == n {
                sorted[n - 1].0.next_up()
            } else {
                let (lo, hi) = (sorted[c - 1].0, sorted[c].0);
                let mid = lo + (hi - lo) / 2.0;
                if mid > lo {
                    mid
                } else {
                    hi
                }
            };
            best = (threshold, correct);
        }
    }
    Ok((best.0, best.1 as f64 / n as f64))
}

/// Accuracy and positive-class F1 when predicting positive iff `score >= threshold`.
pub fn accuracy_f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64), EvalError> {
    check_lengths(scores, labels)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok((accuracy, f1))
}

/// Mean cosine between sentence 1 under its own mark and under a randomly chosen
/// other word. Values near 1 mean the encoder ignores which word is marked.
/// Pairs whose sentence has no other word are skipped.
pub fn collapse_metric(params: &EncoderParams, pairs: &[ContrastivePair], seed: u64) -> Result<f64, EvalError> {
    let sims: Vec<Option<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let candidates = candidate_indices(&p.tokens1, p.target_index1);
            if candidates.is_empty() {
                return None;
            }
            let mut rng = rng_for(seed, stream::COLLAPSE, i as u64, 0);
            let j = candidates[rng.gen_range(0..candidates.len())];
            let (own, _) = encode(params, &p.tokens1, p.target_index1);
            let (moved, _) = encode(params, &p.tokens1, j);
            Some(cosine(&own, &moved).unwrap_or(0.0))
        })
        .collect();
    let (sum, n) = sims.into_iter().flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(sum / n as f64)
}

/// Both marked sentences of every pair, in order.
pub fn marked_sentences(pairs: &[ContrastivePair]) -> Vec<(&[String], usize)> {
    pairs
        .iter()
        .flat_map(|p| [(p.tokens1.as_slice(), p.target_index1), (p.tokens2.as_slice(), p.target_index2)])
        .collect()
}

/// Mean pairwise cosine over the encodings of a seeded sample of at most
/// [`ANISOTROPY_SAMPLE`] marked sentences.
pub fn anisotropy(params: &EncoderParams, items: &[(&[String], usize)], seed: u64) -> Result<f64, EvalError> {
    if items.len() < 2 {
        return Err(EvalError::Empty);
    }
    let picked: Vec<usize> = if items.len() > ANISOTROPY_SAMPLE {
        let mut rng = rng_for(seed, stream::ANISOTROPY, 0, 0);
        let mut v = index::sample(&mut rng, items.len(), ANISOTROPY_SAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..items.len()).collect()
    };
    let vectors: Vec<Vec<f64>> = picked.par_iter().map(|&i| encode(params, items[i].0, items[i].1).0).collect();
    let row_sums: Vec<f64> = (0..vectors.len())
        .into_par_iter()
        .map(|i| vectors[i + 1..].iter().map(|v| cosine(&vectors[i], v).unwrap_or(0.0)).sum::<f64>())
        .collect();
    let m = vectors.len();
    Ok(row_sums.iter().sum::<f64>() / (m * (m - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pca {
    /// Unit principal directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
    /// Total variance of the centered data.
    pub total_variance: f64,
    /// Centered data projected onto the components.
    pub projected: Vec<Vec<f64>>,
}

impl Pca {
    pub fn explained_ratio(&self) -> Vec<f64> {
        self.variances.iter().map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 }).collect()
    }
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Makes the largest-magnitude entry positive.
fn fix_sign(v: &mut [f64]) {
    let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` principal components by power iteration on the covariance matrix with
/// deflation. Iteration stops when successive unit iterates differ by less than
/// [`PCA_TOLERANCE`] (up to sign).
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca, EvalError> {
    if vectors.len() < 2 {
        return Err(EvalError::InvalidPca("need at least two vectors".into()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(EvalError::InvalidPca("vectors differ in dimension".into()));
    }
    if k == 0 || k > d {
        return Err(EvalError::InvalidPca(format!("k = {k} with dimension {d}")));
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for v in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += v[i] * v[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|x| *x /= n);
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();
    let scale = cov.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut rng = rng_for(0, stream::PCA, d as u64, k as u64);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for component in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        let mut converged = false;
        for _ in 0..PCA_MAX_ITERS {
            let mut w = mat_vec(&cov, &v);
            orthogonalize(&mut w, &components);
            if normalize(&mut w) <= scale * 1e-14 {
                // Remaining spectrum is zero: any direction orthogonal to the others works.
                converged = true;
                break;
            }
            let diff_same: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let diff_flip: f64 = w.iter().zip(&v).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if diff_same.min(diff_flip) < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(EvalError::ConvergenceFailure { component, iters: PCA_MAX_ITERS });
        }
        fix_sign(&mut v);
        let variance: f64 = v.iter().zip(mat_vec(&cov, &v)).map(|(a, b)| a * b).sum();
        variances.push(variance.max(0.0));
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= variance * v[i] * v[j];
            }
        }
        components.push(v);
    }
    let projected = centered
        .iter()
        .map(|x| components.iter().map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Ok(Pca { components, variances, total_variance, projected })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub label: f64,
    pub origin: Origin,
    pub cosine: f64,
}

/// Box-plot statistics of one (label, origin) class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub label: f64,
    pub origin: Origin,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub rows: Vec<SimilarityRow>,
    pub summary: Vec<ClassSummary>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn similarity_report(params: &EncoderParams, pairs: &[ContrastivePair]) -> Result<SimilarityReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let scores = score_pairs(params, pairs);
    let rows: Vec<SimilarityRow> = pairs
        .iter()
        .zip(&scores)
        .map(|(p, &cosine)| SimilarityRow { label: p.label, origin: p.origin, cosine })
        .collect();
    let mut classes: BTreeMap<(u64, Origin), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        classes.entry((r.label.to_bits(), r.origin)).or_default().push(r.cosine);
    }
    let summary = classes
        .into_iter()
        .map(|((bits, origin), mut v)| {
            v.sort_by(f64::total_cmp);
            ClassSummary {
                label: f64::from_bits(bits),
                origin,
                n: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect();
    Ok(SimilarityReport { rows, summary })
}

impl SimilarityReport {
    pub fn summary_for(&self, label: f64, origin: Origin) -> Option<&ClassSummary> {
        self.summary.iter().find(|s| s.label == label && s.origin == origin)
    }

    /// Per-pair rows followed by one summary row per class (`kind` column tells them apart).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,label,origin,cosine,n,min,q1,median,q3,max\n");
        for r in &self.rows {
            writeln!(out, "pair,{},{:?},{},,,,,,", r.label, r.origin, r.cosine).unwrap();
        }
        for s in &self.summary {
            writeln!(
                out,
                "summary,{},{:?},,{},{},{},{},{},{}",
                s.label, s.origin, s.n, s.min, s.q1, s.median, s.q3, s.max
            )
            .unwrap();
        }
        out
    }
}

/// Adversarial counterpart of every pair that has a candidate word, for diagnostics.
pub fn adversarial_counterparts(pairs: &[ContrastivePair], seed: u64) -> Vec<ContrastivePair> {
    pairs
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let mut rng = rng_for(seed, stream::EVAL_ADVERSARIAL, i as u64, 0);
            lexical_negative(p, &mut rng).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub collapse_mean_cos: f64,
    pub anisotropy: f64,
    pub n: usize,
}

/// Accuracy/F1 at a fixed threshold plus collapse and anisotropy on `pairs`.
pub fn evaluate(
    params: &EncoderParams,
    pairs: &[ContrastivePair],
    threshold: f64,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let scores = score_pairs(params, pairs);
    let labels = binary_labels(pairs);
    let (accuracy, f1) = accuracy_f1(&scores, &labels, threshold)?;
    Ok(MetricsReport {
        threshold,
        accuracy,
        f1,
        collapse_mean_cos: collapse_metric(params, pairs, seed)?,
        anisotropy: anisotropy(params, &marked_sentences(pairs), seed)?,
        n: pairs.len(),
    })
}
