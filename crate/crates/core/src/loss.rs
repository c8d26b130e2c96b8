//! CoSENT ranking loss.
//!
//! ```text
//! L = log(1 + Σ_{(i,j): y_i < y_j} exp(λ (s_i - s_j)))
//! ```
//!
//! Every pair of batch entries whose labels say `j` should score above `i` adds a
//! term; correctly ranked pairs contribute little, misranked ones dominate. The sum
//! is evaluated as a log-sum-exp over the implicit zero term and all pair terms.

/// Scale used throughout training.
pub const DEFAULT_LAMBDA: f64 = 20.0;

#[derive(Debug, Clone, Copy)]
pub struct ScoredBatch<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [f64],
    pub lambda: f64,
}

impl<'a> ScoredBatch<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [f64], lambda: f64) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
        assert!(!scores.is_empty(), "empty batch");
        assert!(lambda > 0.0, "lambda must be positive");
        ScoredBatch { scores, labels, lambda }
    }

    /// Exponents `λ(s_i - s_j)` of all ordered pairs, with their indices.
    fn pair_terms(&self) -> Vec<(usize, usize, f64)> {
        let mut terms = Vec::new();
        for (i, &yi) in self.labels.iter().enumerate() {
            for (j, &yj) in self.labels.iter().enumerate() {
                if yi < yj {
                    terms.push((i, j, self.lambda * (self.scores[i] - self.scores[j])));
                }
            }
        }
        terms
    }
}

fn log_one_plus_sum_exp(terms: &[(usize, usize, f64)]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let max = terms.iter().map(|t| t.2).fold(0.0_f64, f64::max);
    if max == 0.0 {
        // No positive exponent: nothing can overflow, and ln_1p keeps small losses exact.
        return terms.iter().map(|t| t.2.exp()).sum::<f64>().ln_1p();
    }
    let sum: f64 = (-max).exp() + terms.iter().map(|t| (t.2 - max).exp()).sum::<f64>();
    max + sum.ln()
}

pub fn cosent_loss(batch: &ScoredBatch) -> f64 {
    log_one_plus_sum_exp(&batch.pair_terms())
}

/// `dL/ds_k` for every entry of the batch.
pub fn cosent_grad(batch: &ScoredBatch) -> Vec<f64> {
    let (_, grad) = cosent_loss_and_grad(batch);
    grad
}

/// Loss and gradient in one pass. Each pair term contributes its softmax weight
/// `exp(a_ij - L)` with `+λ` on the should-be-lower score and `-λ` on the other.
pub fn cosent_loss_and_grad(batch: &ScoredBatch) -> (f64, Vec<f64>) {
    let terms = batch.pair_terms();
    let loss = log_one_plus_sum_exp(&terms);
    let mut grad = vec![0.0; batch.scores.len()];
    for &(i, j, a) in &terms {
        let w = batch.lambda * (a - loss).exp();
        grad[i] += w;
        grad[j] -= w;
    }
    (loss, grad)
}
