//! Lexical adversarial negatives.
//!
//! A negative keeps sentence 1 and moves the target mark to another word of it.
//! For a dissimilar pair the second side becomes sentence 1 marked elsewhere, so the
//! two sides differ only in which word is marked. For a similar pair the first side's
//! mark moves while the second side is kept. Either way the result is labeled 0.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;

use crate::corpus::{ContrastivePair, Origin};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("text contains no letters or ideographs")]
    EmptyInput,
    #[error("sentence has no word other than the target to mark")]
    NoCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptClass {
    SpaceDelimited,
    Cjk,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedText {
    pub tokens: Vec<String>,
    pub script_class: ScriptClass,
}

/// Han ideographs and Japanese kana. These scripts are split one character per word.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F       // Hiragana
        | 0x30A0..=0x30FF     // Katakana
        | 0x31F0..=0x31FF     // Katakana phonetic extensions
        | 0x3400..=0x4DBF     // CJK extension A
        | 0x4E00..=0x9FFF     // CJK unified ideographs
        | 0xF900..=0xFAFF     // CJK compatibility ideographs
        | 0xFF66..=0xFF9F     // Halfwidth katakana
        | 0x20000..=0x2EBEF   // CJK extensions B-F
        | 0x30000..=0x3134F) // CJK extension G
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn has_letter(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
}

/// Splits text into words.
///
/// Whitespace delimits words. Punctuation runs at the start or end of a
/// whitespace-delimited chunk become their own tokens, while inner punctuation
/// ("don't", "e-mail") stays inside the word. CJK characters are emitted one per token.
pub fn split_into_words(text: &str) -> Result<SegmentedText, AugmentError> {
    let mut tokens = Vec::new();
    let (mut cjk, mut other) = (false, false);
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|&c| is_word_char(c));
        let Some(start) = start else {
            tokens.push(chunk.to_string());
            continue;
        };
        let end = chars.iter().rposition(|&c| is_word_char(c)).unwrap() + 1;
        if start > 0 {
            tokens.push(chars[..start].iter().collect());
        }
        let mut word = String::new();
        for &c in &chars[start..end] {
            if is_cjk(c) {
                cjk = true;
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            } else {
                if is_word_char(c) {
                    other = true;
                }
                word.push(c);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
        if end < chars.len() {
            tokens.push(chars[end..].iter().collect());
        }
    }
    let script_class = match (cjk, other) {
        (false, false) => return Err(AugmentError::EmptyInput),
        (false, true) => ScriptClass::SpaceDelimited,
        (true, false) => ScriptClass::Cjk,
        (true, true) => ScriptClass::Mixed,
    };
    Ok(SegmentedText { tokens, script_class })
}

/// Indices of words that may receive the moved mark: tokens whose text differs from
/// the target's and that contain at least one letter, in ascending order.
pub fn candidate_indices(tokens: &[String], target_index: usize) -> Vec<usize> {
    let target = &tokens[target_index];
    tokens.iter().enumerate().filter(|(_, t)| *t != target && has_letter(t)).map(|(i, _)| i).collect()
}

/// Builds the adversarial negative of `pair` by marking a uniformly drawn candidate
/// word of sentence 1. The input pair is left untouched.
pub fn lexical_negative<R: Rng + ?Sized>(pair: &ContrastivePair, rng: &mut R) -> Result<ContrastivePair, AugmentError> {
    let candidates = candidate_indices(&pair.tokens1, pair.target_index1);
    if candidates.is_empty() {
        return Err(AugmentError::NoCandidate);
    }
    let j = candidates[rng.gen_range(0..candidates.len())];
    let new_word = pair.tokens1[j].clone();
    let mut out = pair.clone();
    if pair.label == 0.0 {
        out.word2 = new_word;
        out.tokens2 = pair.tokens1.clone();
        out.target_index2 = j;
    } else {
        out.word1 = new_word;
        out.target_index1 = j;
    }
    out.label = 0.0;
    out.origin = Origin::Adversarial;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn pair(s1: &str, t1: usize, s2: &str, t2: usize, label: f64) -> ContrastivePair {
        let (tokens1, tokens2) = (toks(s1), toks(s2));
        ContrastivePair {
            word1: tokens1[t1].clone(),
            tokens1,
            target_index1: t1,
            word2: tokens2[t2].clone(),
            tokens2,
            target_index2: t2,
            label,
            origin: Origin::Natural,
            lemma: None,
            pos: None,
        }
    }

    #[test]
    fn splits_english_with_trailing_punctuation() {
        let seg = split_into_words("Sound carries well over water.").unwrap();
        assert_eq!(seg.tokens, toks("Sound carries well over water ."));
        assert_eq!(seg.script_class, ScriptClass::SpaceDelimited);
    }

    #[test]
    fn splits_other_scripts() {
        assert_eq!(split_into_words("водa").unwrap().tokens, vec!["водa"]);
        let ja = split_into_words("日本語").unwrap();
        assert_eq!(ja.tokens, vec!["日", "本", "語"]);
        assert_eq!(ja.script_class, ScriptClass::Cjk);
        let fa = split_into_words("«کتاب‌ها را خواندم.»").unwrap();
        assert_eq!(fa.tokens, vec!["«", "کتاب‌ها", "را", "خواندم", ".»"]);
        let mixed = split_into_words("I like 寿司!").unwrap();
        assert_eq!(mixed.tokens, vec!["I", "like", "寿", "司", "!"]);
        assert_eq!(mixed.script_class, ScriptClass::Mixed);
        assert_eq!(split_into_words("don't (e-mail)").unwrap().tokens, vec!["don't", "(", "e-mail", ")"]);
        assert_eq!(split_into_words("हिन्दी भाषा").unwrap().tokens, vec!["हिन्दी", "भाषा"]);
    }

    #[test]
    fn rejects_letterless_text() {
        assert_eq!(split_into_words("").unwrap_err(), AugmentError::EmptyInput);
        assert_eq!(split_into_words(" ... !? ").unwrap_err(), AugmentError::EmptyInput);
    }

    #[test]
    fn candidates_exclude_target_text_and_punctuation() {
        assert_eq!(candidate_indices(&toks("Sound carries well over water ."), 1), vec![0, 2, 3, 4]);
        assert!(candidate_indices(&toks("run run"), 0).is_empty());
        assert!(candidate_indices(&toks("a ."), 0).is_empty());
        assert_eq!(candidate_indices(&toks("Run run 42 x"), 1), vec![0, 3]);
    }

    /// Draws from the generator until it selects `wanted`.
    fn negative_choosing(p: &ContrastivePair, wanted: usize) -> ContrastivePair {
        (0..10_000u64)
            .map(|s| lexical_negative(p, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .find(|n| n.target_index1 == wanted || n.target_index2 == wanted && n.tokens2 == p.tokens1)
            .expect("candidate never drawn")
    }

    #[test]
    fn dissimilar_pair_becomes_same_sentence_other_mark() {
        let p = pair("Sound carries well over water .", 1, "You must carry your camping gear .", 2, 0.0);
        let n = negative_choosing(&p, 4);
        assert_eq!(n.word1, "carries");
        assert_eq!(n.tokens1, p.tokens1);
        assert_eq!(n.target_index1, 1);
        assert_eq!(n.word2, "water");
        assert_eq!(n.tokens2, p.tokens1);
        assert_eq!(n.target_index2, 4);
        assert_eq!(n.label, 0.0);
        assert_eq!(n.origin, Origin::Adversarial);
        assert_eq!(p.origin, Origin::Natural);
    }

    #[test]
    fn similar_pair_moves_first_mark() {
        let p = pair("alpha beta", 0, "many metals carry heat", 2, 1.0);
        let n = lexical_negative(&p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n.word1, "beta");
        assert_eq!(n.target_index1, 1);
        assert_eq!(n.tokens1, p.tokens1);
        assert_eq!((&n.word2, &n.tokens2, n.target_index2), (&p.word2, &p.tokens2, p.target_index2));
        assert_eq!(n.label, 0.0);
        assert_eq!(n.origin, Origin::Adversarial);
    }

    #[test]
    fn no_candidate() {
        let p = pair("alpha", 0, "alpha beta", 0, 1.0);
        assert_eq!(lexical_negative(&p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err(), AugmentError::NoCandidate);
    }
}
