use lane_core::loss::{cosent_grad, cosent_loss, cosent_loss_and_grad, ScoredBatch, DEFAULT_LAMBDA};
use proptest::prelude::*;

/// Scores in [-1, 1] with binary labels, 1..=8 entries.
fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..=1.0, n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n),
        )
    })
}

/// Direct double loop over the formula, no shifting.
fn brute_force_loss(s: &[f64], y: &[f64], lambda: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] < y[j] {
                sum += (lambda * (s[i] - s[j])).exp();
            }
        }
    }
    sum.ln_1p()
}

fn has_ordered_pair(y: &[f64]) -> bool {
    y.iter().any(|&a| y.iter().any(|&b| a < b))
}

proptest! {
    #[test]
    fn matches_brute_force((s, y) in batch()) {
        let fast = cosent_loss(&ScoredBatch::new(&s, &y, DEFAULT_LAMBDA));
        let slow = brute_force_loss(&s, &y, DEFAULT_LAMBDA);
        prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1e-300) || fast == slow,
            "fast {fast} slow {slow}");
    }

    #[test]
    fn nonnegative((s, y) in batch(), lambda in 0.1f64..100.0) {
        prop_assert!(cosent_loss(&ScoredBatch::new(&s, &y, lambda)) >= 0.0);
    }

    #[test]
    fn zero_without_ordered_pairs(s in prop::collection::vec(-1.0f64..=1.0, 1..8), label in prop::bool::ANY) {
        let y = vec![if label { 1.0 } else { 0.0 }; s.len()];
        let b = ScoredBatch::new(&s, &y, DEFAULT_LAMBDA);
        prop_assert_eq!(cosent_loss(&b), 0.0);
        prop_assert!(cosent_grad(&b).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shift_invariant((s, y) in batch(), c in -0.5f64..0.5) {
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let a = cosent_loss(&ScoredBatch::new(&s, &y, DEFAULT_LAMBDA));
        let b = cosent_loss(&ScoredBatch::new(&shifted, &y, DEFAULT_LAMBDA));
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn gradient_sums_to_zero((s, y) in batch()) {
        let g = cosent_grad(&ScoredBatch::new(&s, &y, DEFAULT_LAMBDA));
        let scale: f64 = g.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn raising_a_lower_score_never_helps((s, y) in batch(), bump in 0.0f64..0.5) {
        prop_assume!(has_ordered_pair(&y));
        // Label-0 entries appear only on the should-be-lower side of ordered pairs.
        let i = y.iter().position(|&l| l == 0.0).unwrap();
        let mut raised = s.clone();
        raised[i] += bump;
        let before = cosent_loss(&ScoredBatch::new(&s, &y, DEFAULT_LAMBDA));
        let after = cosent_loss(&ScoredBatch::new(&raised, &y, DEFAULT_LAMBDA));
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((s, y) in batch()) {
        let b = ScoredBatch::new(&s, &y, DEFAULT_LAMBDA);
        let (_, g) = cosent_loss_and_grad(&b);
        let h = 1e-6;
        let numeric: Vec<f64> = (0..s.len())
            .map(|k| {
                let (mut up, mut down) = (s.clone(), s.clone());
                up[k] += h;
                down[k] -= h;
                let lu = cosent_loss(&ScoredBatch::new(&up, &y, DEFAULT_LAMBDA));
                let ld = cosent_loss(&ScoredBatch::new(&down, &y, DEFAULT_LAMBDA));
                (lu - ld) / (2.0 * h)
            })
            .collect();
        let diff: f64 = g.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let size: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-6 * size.max(1e-3), "analytic {g:?} numeric {numeric:?}");
    }
}
