use std::collections::{BTreeMap, HashMap};

use lane_core::corpus::{
    build_pairs, is_test_lemma, lexicographic_split, synth_corpus, ContrastivePair, CorpusError, Origin, SynthConfig,
    Usage,
};
use proptest::prelude::*;

const LEMMAS: [&str; 6] = ["bank", "pitch", "mouse", "spring", "ёлка", "über"];

fn usages() -> impl Strategy<Value = Vec<Usage>> {
    prop::collection::vec((0usize..LEMMAS.len(), 0usize..2, 0usize..3, prop::collection::vec(0usize..5, 1..5)), 0..40)
        .prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, (l, p, s, ctx))| {
                    let lemma = LEMMAS[l];
                    let mut tokens: Vec<String> = ctx.iter().map(|c| format!("c{c}")).collect();
                    tokens.push(lemma.to_string());
                    let target_index = tokens.len() - 1;
                    Usage {
                        id: format!("u{i}"),
                        lemma: lemma.into(),
                        pos: ["NOUN", "VERB"][p].into(),
                        sense_key: format!("{lemma}%{s}"),
                        tokens,
                        target_index,
                    }
                })
                .collect()
        })
}

/// Pair identity for disjointness checks.
fn key(p: &ContrastivePair) -> String {
    serde_json::to_string(p).unwrap()
}

proptest! {
    #[test]
    fn pairs_follow_labeling_rule(us in usages(), seed in any::<u64>()) {
        let pairs = build_pairs(&us, None, seed);
        let by_sentence: HashMap<(&[String], &str), Vec<&Usage>> = us.iter().fold(HashMap::new(), |mut m, u| {
            m.entry((u.tokens.as_slice(), u.pos.as_str())).or_default().push(u);
            m
        });
        for p in &pairs {
            prop_assert!(p.validate().is_ok());
            prop_assert_eq!(p.origin, Origin::Natural);
            prop_assert_ne!(&p.tokens1, &p.tokens2);
            let pos = p.pos.as_deref().unwrap();
            // Identical sentences may occur under several senses; some source pair must fit.
            let sources = &by_sentence[&(p.tokens1.as_slice(), pos)];
            let partners = &by_sentence[&(p.tokens2.as_slice(), pos)];
            let explained = sources.iter().any(|a| {
                partners.iter().any(|b| a.lemma == b.lemma && (p.label == 1.0) == (a.sense_key == b.sense_key))
            });
            prop_assert!(explained);
        }
    }

    #[test]
    fn uncapped_pair_count_is_exhaustive(us in usages()) {
        let mut groups: BTreeMap<(&str, &str), Vec<&Usage>> = BTreeMap::new();
        for u in &us {
            groups.entry((&u.lemma, &u.pos)).or_default().push(u);
        }
        let expected: usize = groups
            .values()
            .map(|g| (0..g.len()).flat_map(|i| (i + 1..g.len()).map(move |j| (i, j))).filter(|&(i, j)| g[i].tokens != g[j].tokens).count())
            .sum();
        prop_assert_eq!(build_pairs(&us, None, 0).len(), expected);
    }

    #[test]
    fn cap_bounds_each_group(us in usages(), cap in 1usize..6, seed in any::<u64>()) {
        let pairs = build_pairs(&us, Some(cap), seed);
        let mut per_group: HashMap<(String, String), usize> = HashMap::new();
        for p in &pairs {
            *per_group.entry((p.lemma.clone().unwrap(), p.pos.clone().unwrap())).or_default() += 1;
        }
        prop_assert!(per_group.values().all(|&n| n <= cap));
        prop_assert_eq!(build_pairs(&us, Some(cap), seed), pairs);
    }

    #[test]
    fn split_is_disjoint_and_lemma_routed(us in usages(), dev_frac in 0.0f64..0.9, seed in any::<u64>()) {
        let pairs = build_pairs(&us, None, seed);
        let pool = pairs.iter().filter(|p| !is_test_lemma(p.split_key())).count();
        let dev_size = (pool as f64 * dev_frac) as usize;
        let splits = match lexicographic_split(&pairs, dev_size, seed) {
            Ok(s) => s,
            Err(CorpusError::InsufficientPairs { .. }) => {
                prop_assert!(dev_size >= pool);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(splits.dev.len(), dev_size);
        prop_assert_eq!(splits.train.len() + splits.dev.len() + splits.test.len(), pairs.len());
        prop_assert!(splits.test.iter().all(|p| is_test_lemma(p.split_key())));
        prop_assert!(splits.train.iter().chain(&splits.dev).all(|p| !is_test_lemma(p.split_key())));
        // Every input pair lands in exactly one split.
        let mut remaining: HashMap<String, isize> = HashMap::new();
        for p in &pairs {
            *remaining.entry(key(p)).or_default() += 1;
        }
        for p in splits.train.iter().chain(&splits.dev).chain(&splits.test) {
            *remaining.get_mut(&key(p)).unwrap() -= 1;
        }
        prop_assert!(remaining.values().all(|&n| n == 0));
    }
}

#[test]
fn zero_dev_size_leaves_dev_empty() {
    let cfg = SynthConfig { n_lemmas: 30, contexts_per_sense: 4, ..SynthConfig::default() };
    let pairs = build_pairs(&synth_corpus(&cfg).unwrap(), None, 1);
    let splits = lexicographic_split(&pairs, 0, 1).unwrap();
    assert!(splits.dev.is_empty());
    assert_eq!(splits.train.len() + splits.test.len(), pairs.len());
    assert!(!splits.test.is_empty() && !splits.train.is_empty());
}

#[test]
fn synth_counts_and_determinism() {
    let cfg = SynthConfig { n_lemmas: 7, senses_per_lemma: 3, contexts_per_sense: 5, ..SynthConfig::default() };
    let a = synth_corpus(&cfg).unwrap();
    assert_eq!(a.len(), 7 * 3 * 5);
    assert!(a.iter().all(|u| u.validate().is_ok()));
    let b = synth_corpus(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let other = synth_corpus(&SynthConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a, other);
}

fn context_multiset(u: &Usage) -> Vec<&str> {
    let mut v: Vec<&str> =
        u.tokens.iter().enumerate().filter(|&(i, _)| i != u.target_index).map(|(_, t)| t.as_str()).collect();
    v.sort_unstable();
    v
}

/// Scans every cross-sense pair of every lemma and returns the fraction whose
/// contexts (all tokens but the target) are the same multiset.
fn shared_context_fraction(usages: &[Usage]) -> f64 {
    let mut by_lemma: BTreeMap<&str, Vec<&Usage>> = BTreeMap::new();
    for u in usages {
        by_lemma.entry(&u.lemma).or_default().push(u);
    }
    let (mut shared, mut total) = (0usize, 0usize);
    for group in by_lemma.values() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                if a.sense_key != b.sense_key {
                    total += 1;
                    shared += usize::from(context_multiset(a) == context_multiset(b));
                }
            }
        }
    }
    shared as f64 / total as f64
}

#[test]
fn full_ambiguity_shares_every_cross_sense_context() {
    let cfg = SynthConfig { ambiguity: 1.0, n_lemmas: 12, contexts_per_sense: 8, ..SynthConfig::default() };
    assert_eq!(shared_context_fraction(&synth_corpus(&cfg).unwrap()), 1.0);
}

#[test]
fn partial_ambiguity_is_close_to_requested() {
    for ambiguity in [0.0, 0.25, 0.5, 0.8] {
        let cfg = SynthConfig { ambiguity, ..SynthConfig::default() };
        let frac = shared_context_fraction(&synth_corpus(&cfg).unwrap());
        assert!((frac - ambiguity).abs() <= 0.05, "requested {ambiguity}, got {frac}");
    }
}
