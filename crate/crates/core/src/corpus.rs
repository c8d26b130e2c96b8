//! Sense-keyed usages and the contrastive pairs built from them.
//!
//! A [`Usage`] is one annotated occurrence of a word. Usages sharing lemma and POS are
//! paired across distinct sentences; the pair is positive when both carry the same
//! sense key. Splits are lexicographic on the lemma so that test words are never seen
//! during training.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::rng::{rng_for, stream};

/// Default number of pairs kept per (lemma, POS) group.
pub const DEFAULT_CAP_PER_LEMMA: usize = 50;
/// Default dev split size, matching the usual 7,000-pair dev sets.
pub const DEFAULT_DEV_SIZE: usize = 7000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed usage record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: invalid usage: {message}")]
    InvariantViolation { line: usize, message: String },
    #[error("cannot draw {requested} dev pairs from {available} train-side pairs")]
    InsufficientPairs { requested: usize, available: usize },
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sense-annotated occurrence of a word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub id: String,
    pub lemma: String,
    pub pos: String,
    pub sense_key: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
}

impl Usage {
    /// The marked surface form.
    pub fn word(&self) -> &str {
        &self.tokens[self.target_index]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("tokens must be non-empty".into());
        }
        if let Some(i) = self.tokens.iter().position(|t| t.is_empty()) {
            return Err(format!("token {i} is empty"));
        }
        if self.target_index >= self.tokens.len() {
            return Err(format!("target_index {} out of range for {} tokens", self.target_index, self.tokens.len()));
        }
        if self.lemma.is_empty() {
            return Err("lemma must be non-empty".into());
        }
        if self.sense_key.is_empty() {
            return Err("sense_key must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Natural,
    Adversarial,
}

/// Two marked sentences and their similarity label.
///
/// `lemma` and `pos` record the group the pair was built from; they drive the
/// lexicographic split and are omitted from the serialized record when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub word1: String,
    pub tokens1: Vec<String>,
    pub target_index1: usize,
    pub word2: String,
    pub tokens2: Vec<String>,
    pub target_index2: usize,
    pub label: f64,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
}

impl ContrastivePair {
    pub fn from_usages(a: &Usage, b: &Usage) -> Self {
        ContrastivePair {
            word1: a.word().to_string(),
            tokens1: a.tokens.clone(),
            target_index1: a.target_index,
            word2: b.word().to_string(),
            tokens2: b.tokens.clone(),
            target_index2: b.target_index,
            label: if a.sense_key == b.sense_key { 1.0 } else { 0.0 },
            origin: Origin::Natural,
            lemma: Some(a.lemma.clone()),
            pos: Some(a.pos.clone()),
        }
    }

    /// Lemma used for splitting: the recorded lemma, else side 1's surface form.
    pub fn split_key(&self) -> &str {
        self.lemma.as_deref().unwrap_or(&self.word1)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (side, word, tokens, idx) in
            [(1, &self.word1, &self.tokens1, self.target_index1), (2, &self.word2, &self.tokens2, self.target_index2)]
        {
            match tokens.get(idx) {
                None => return Err(format!("target_index{side} {idx} out of range")),
                Some(t) if t != word => {
                    return Err(format!("word{side} {word:?} does not match token {t:?}"));
                }
                _ => {}
            }
        }
        if self.label != 0.0 && self.label != 1.0 {
            return Err(format!("label {} not in {{0, 1}}", self.label));
        }
        if self.origin == Origin::Adversarial && self.label != 0.0 {
            return Err("adversarial pair must have label 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<ContrastivePair>,
    pub dev: Vec<ContrastivePair>,
    pub test: Vec<ContrastivePair>,
}

/// Reads JSON-lines usages. Blank lines are skipped; line numbers are 1-based.
pub fn ingest_usages<R: BufRead>(reader: R) -> Result<Vec<Usage>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let usage: Usage = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedLine { line: line_no, message: e.to_string() })?;
        usage.validate().map_err(|message| CorpusError::InvariantViolation { line: line_no, message })?;
        if !seen.insert(usage.id.clone()) {
            return Err(CorpusError::InvariantViolation {
                line: line_no,
                message: format!("duplicate id {:?}", usage.id),
            });
        }
        out.push(usage);
    }
    Ok(out)
}

/// Pairs usages of the same (lemma, POS) across distinct sentences.
///
/// Groups are processed in sorted (lemma, POS) order; within a group pairs follow
/// input order. With `cap_per_lemma`, a seeded sample of at most that many pairs is
/// kept per group, still in enumeration order.
pub fn build_pairs(usages: &[Usage], cap_per_lemma: Option<usize>, seed: u64) -> Vec<ContrastivePair> {
    let mut groups: BTreeMap<(&str, &str), Vec<&Usage>> = BTreeMap::new();
    for u in usages {
        groups.entry((u.lemma.as_str(), u.pos.as_str())).or_default().push(u);
    }
    let groups: Vec<_> = groups.into_values().collect();
    groups
        .par_iter()
        .enumerate()
        .map(|(ordinal, members)| {
            let mut candidates = Vec::new();
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    if a.tokens != b.tokens {
                        candidates.push((*a, *b));
                    }
                }
            }
            match cap_per_lemma {
                Some(cap) if candidates.len() > cap => {
                    let mut rng = rng_for(seed, stream::PAIR_SAMPLING, ordinal as u64, 0);
                    let mut keep = index::sample(&mut rng, candidates.len(), cap).into_vec();
                    keep.sort_unstable();
                    keep.into_iter()
                        .map(|k| ContrastivePair::from_usages(candidates[k].0, candidates[k].1))
                        .collect::<Vec<_>>()
                }
                _ => candidates.into_iter().map(|(a, b)| ContrastivePair::from_usages(a, b)).collect(),
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Base letter of the lemma's first character, casefolded with diacritics removed,
/// when it is a Latin letter a-z.
fn latin_initial(lemma: &str) -> Option<char> {
    let first = lemma.chars().next()?;
    let base = std::iter::once(first).nfd().next()?;
    let folded = base.to_lowercase().next()?;
    folded.is_ascii_lowercase().then_some(folded)
}

/// True when the lemma belongs to the test side of the lexicographic split.
pub fn is_test_lemma(lemma: &str) -> bool {
    matches!(latin_initial(lemma), Some(c) if c >= 'p')
}

/// Sends lemmas starting with `p` or later to test; samples `dev_size` of the rest for dev.
pub fn lexicographic_split(
    pairs: &[ContrastivePair],
    dev_size: usize,
    seed: u64,
) -> Result<DatasetSplits, CorpusError> {
    let (test, pool): (Vec<_>, Vec<_>) = pairs.iter().cloned().partition(|p| is_test_lemma(p.split_key()));
    if dev_size > 0 && dev_size >= pool.len() {
        return Err(CorpusError::InsufficientPairs { requested: dev_size, available: pool.len() });
    }
    let mut rng = rng_for(seed, stream::DEV_SPLIT, 0, 0);
    let mut is_dev = vec![false; pool.len()];
    for i in index::sample(&mut rng, pool.len(), dev_size) {
        is_dev[i] = true;
    }
    let mut train = Vec::with_capacity(pool.len() - dev_size);
    let mut dev = Vec::with_capacity(dev_size);
    for (pair, dev_member) in pool.into_iter().zip(is_dev) {
        if dev_member {
            dev.push(pair);
        } else {
            train.push(pair);
        }
    }
    Ok(DatasetSplits { train, dev, test })
}

/// Like [`lexicographic_split`], but dev takes whole lemmas: train-side lemmas are
/// visited in seeded random order and moved to dev until it holds at least
/// `dev_size` pairs. Dev then measures transfer to lemmas never seen in training,
/// as test does.
pub fn lexicographic_split_by_lemma(
    pairs: &[ContrastivePair],
    dev_size: usize,
    seed: u64,
) -> Result<DatasetSplits, CorpusError> {
    let (test, pool): (Vec<_>, Vec<_>) = pairs.iter().cloned().partition(|p| is_test_lemma(p.split_key()));
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pool {
        *sizes.entry(p.split_key()).or_default() += 1;
    }
    let mut lemmas: Vec<(&str, usize)> = sizes.into_iter().collect();
    let mut rng = rng_for(seed, stream::DEV_SPLIT, 1, 0);
    lemmas.shuffle(&mut rng);
    let mut dev_lemmas = HashSet::new();
    let mut taken = 0;
    for (lemma, n) in &lemmas {
        if taken >= dev_size {
            break;
        }
        dev_lemmas.insert(lemma.to_string());
        taken += n;
    }
    if taken < dev_size || (dev_size > 0 && taken == pool.len()) {
        return Err(CorpusError::InsufficientPairs { requested: dev_size, available: pool.len() });
    }
    let (dev, train) = pool.into_iter().partition(|p| dev_lemmas.contains(p.split_key()));
    Ok(DatasetSplits { train, dev, test })
}

/// Parameters of the synthetic sense-annotated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_lemmas: usize,
    pub senses_per_lemma: usize,
    pub contexts_per_sense: usize,
    /// Number of filler (non-lemma) context word types.
    pub vocab_size: usize,
    /// Context tokens per sentence, excluding the target.
    pub context_length: usize,
    /// Fraction of cross-sense usage pairs of a lemma whose contexts are identical.
    pub ambiguity: f64,
    /// Probability that a context slot holds a surface form of another lemma.
    pub mention_rate: f64,
    /// Probability that a slot of a sense's own context is a word of its topic;
    /// slots that are neither mentions nor topic words are neutral filler.
    pub topic_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_lemmas: 40,
            senses_per_lemma: 2,
            contexts_per_sense: 20,
            vocab_size: 60,
            context_length: 2,
            ambiguity: 0.8,
            mention_rate: MENTION_RATE,
            topic_rate: TOPIC_RATE,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if self.n_lemmas == 0 || self.senses_per_lemma == 0 || self.contexts_per_sense == 0 {
            return bad("counts must be at least 1");
        }
        if self.vocab_size == 0 || self.context_length == 0 {
            return bad("vocab_size and context_length must be at least 1");
        }
        if self.vocab_size < self.context_length + self.n_lemmas {
            return bad("vocab_size must be at least context_length + n_lemmas");
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad("ambiguity must lie in [0, 1]");
        }
        let rates = [self.mention_rate, self.topic_rate];
        if !rates.iter().all(|r| (0.0..=1.0).contains(r)) || rates.iter().sum::<f64>() > 1.0 {
            return bad("mention_rate and topic_rate must lie in [0, 1] and sum to at most 1");
        }
        Ok(())
    }

    /// Usages per sense drawn from the lemma's shared context. Two senses with `k`
    /// shared usages each make `k²/c²` of their cross pairs identical in context.
    pub fn shared_per_sense(&self) -> usize {
        let c = self.contexts_per_sense as f64;
        ((self.ambiguity.sqrt() * c).round() as usize).min(self.contexts_per_sense)
    }
}

const MENTION_RATE: f64 = 0.5;
const TOPIC_RATE: f64 = 0.5;
const SUFFIXES: [&str; 8] = ["s", "ed", "ing", "er", "ly", "ness", "ful", "ish"];
const POS_TAGS: [&str; 4] = ["NOUN", "VERB", "ADJ", "ADV"];
const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn syllables<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect()
}

fn sense_form(lemma: &str, sense: usize) -> String {
    match sense {
        0 => lemma.to_string(),
        k if k <= SUFFIXES.len() => format!("{lemma}{}", SUFFIXES[k - 1]),
        k => format!("{lemma}x{k}"),
    }
}

/// Generates a deterministic sense-annotated corpus.
///
/// Lemma initials cycle through a-z so that both sides of the lexicographic split are
/// populated. Each sense is realized by its own surface form of the lemma. Filler
/// words are partitioned into shared topics plus a neutral pool; every sense is tied
/// to a topic, and its characteristic contexts mix topic words, neutral words and
/// mentions of other lemmas. A share of each sense's usages instead reuses the
/// lemma's shared context (same tokens, shuffled), so for those usages only the
/// target form tells senses apart.
pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<Usage>, CorpusError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, stream::SYNTH, 0, 0);
    let mut taken = HashSet::new();

    let mut lemmas = Vec::with_capacity(config.n_lemmas);
    for i in 0..config.n_lemmas {
        let initial = (b'a' + (i % 26) as u8) as char;
        loop {
            let vowel = VOWELS.choose(&mut rng).unwrap();
            let name = format!("{initial}{vowel}{}", syllables(&mut rng, 1));
            let forms: Vec<String> = (0..config.senses_per_lemma).map(|s| sense_form(&name, s)).collect();
            if forms.iter().all(|f| !taken.contains(f)) {
                taken.extend(forms.iter().cloned());
                lemmas.push((name, forms));
                break;
            }
        }
    }
    let all_forms: Vec<&str> = lemmas.iter().flat_map(|(_, f)| f.iter().map(String::as_str)).collect();

    let mut fillers = Vec::with_capacity(config.vocab_size);
    while fillers.len() < config.vocab_size {
        let n = 2 + fillers.len() % 2;
        let w = syllables(&mut rng, n);
        if taken.insert(w.clone()) {
            fillers.push(w);
        }
    }
    let n_topics = (2 * config.senses_per_lemma).max(2);
    let topic_size = (config.vocab_size / (n_topics + 1)).max(1);
    let topics: Vec<&[String]> = (0..n_topics)
        .map(|t| {
            let start = (t * topic_size).min(fillers.len() - 1);
            let end = ((t + 1) * topic_size).min(fillers.len()).max(start + 1);
            &fillers[start..end]
        })
        .collect();
    let neutral: &[String] =
        if n_topics * topic_size < fillers.len() { &fillers[n_topics * topic_size..] } else { &fillers[..] };

    let shared_per_sense = config.shared_per_sense();
    let mut usages = Vec::with_capacity(config.n_lemmas * config.senses_per_lemma * config.contexts_per_sense);
    for (li, (lemma, forms)) in lemmas.iter().enumerate() {
        let pos = POS_TAGS[li % POS_TAGS.len()];
        let mention = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let f = *all_forms.choose(rng).unwrap();
            if !forms.iter().any(|own| own == f) || all_forms.len() == forms.len() {
                return f.to_string();
            }
        };
        let shared: Vec<String> = (0..config.context_length)
            .map(|_| {
                if rng.gen_bool(config.mention_rate) {
                    mention(&mut rng)
                } else {
                    neutral.choose(&mut rng).unwrap().clone()
                }
            })
            .collect();
        let topic_offset = rng.gen_range(0..n_topics);
        for (si, form) in forms.iter().enumerate() {
            let topic = topics[(topic_offset + si) % n_topics];
            let sense_key = format!("{lemma}%{}", si + 1);
            let mut is_shared = vec![false; config.contexts_per_sense];
            for k in index::sample(&mut rng, config.contexts_per_sense, shared_per_sense) {
                is_shared[k] = true;
            }
            for (ci, shared_ctx) in is_shared.into_iter().enumerate() {
                let mut context: Vec<String> = if shared_ctx {
                    let mut c = shared.clone();
                    c.shuffle(&mut rng);
                    c
                } else {
                    (0..config.context_length)
                        .map(|_| {
                            let r: f64 = rng.gen();
                            if r < config.mention_rate {
                                mention(&mut rng)
                            } else if r < config.mention_rate + config.topic_rate {
                                topic.choose(&mut rng).unwrap().clone()
                            } else {
                                neutral.choose(&mut rng).unwrap().clone()
                            }
                        })
                        .collect()
                };
                let target_index = rng.gen_range(0..=context.len());
                context.insert(target_index, form.clone());
                usages.push(Usage {
                    id: format!("{lemma}.{pos}.{}.{ci}", si + 1),
                    lemma: lemma.clone(),
                    pos: pos.to_string(),
                    sense_key: sense_key.clone(),
                    tokens: context,
                    target_index,
                });
            }
        }
    }
    Ok(usages)
}
