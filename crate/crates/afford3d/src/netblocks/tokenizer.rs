//! Word-level tokenizer over the instruction corpus.
//!
//! The vocabulary is closed: it is built deterministically from every
//! expansion of the instruction templates over the affordance and object
//! vocabularies, plus PAD/UNK/BOS. Anything else maps to UNK.

use crate::synthgen::{expand_template, object_classes, AFFORDANCE_CANON, FULL_TEMPLATES};
use std::collections::BTreeSet;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;

#[derive(Clone, Debug)]
pub struct Tokenizer {
    words: Vec<String>,
    index: std::collections::BTreeMap<String, usize>,
}

impl Tokenizer {
    pub fn new() -> Tokenizer {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for template in FULL_TEMPLATES {
            for verb in AFFORDANCE_CANON {
                for noun in object_classes() {
                    for word in expand_template(template, verb, &noun).split_whitespace() {
                        set.insert(word.to_lowercase());
                    }
                }
            }
        }
        let mut words = vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            "<bos>".to_string(),
        ];
        words.extend(set);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> usize {
        *self.index.get(&word.to_lowercase()).unwrap_or(&UNK)
    }

    /// Lowercased word tokens behind a BOS, truncated or padded to `n_l`.
    pub fn encode(&self, text: &str, n_l: usize) -> Vec<usize> {
        let mut ids = vec![BOS];
        for word in text.split_whitespace() {
            if ids.len() >= n_l {
                break;
            }
            ids.push(self.id(word));
        }
        while ids.len() < n_l {
            ids.push(PAD);
        }
        ids.truncate(n_l);
        ids
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_bos_then_padding() {
        let t = Tokenizer::new();
        let ids = t.encode("", 24);
        assert_eq!(ids.len(), 24);
        assert_eq!(ids[0], BOS);
        assert!(ids[1..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn known_words_resolve_directly() {
        let t = Tokenizer::new();
        let ids = t.encode("grasp bottle", 24);
        assert_eq!(ids[0], BOS);
        assert_eq!(ids[1], t.id("grasp"));
        assert_eq!(ids[2], t.id("bottle"));
        assert!(ids[1] > BOS && ids[2] > BOS);
        assert!(ids[3..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let t = Tokenizer::new();
        let ids = t.encode("grasp the zzgrommet", 8);
        assert_eq!(ids[3], UNK);
    }

    #[test]
    fn case_insensitive_and_deterministic() {
        let a = Tokenizer::new();
        let b = Tokenizer::new();
        assert_eq!(a.words, b.words);
        assert_eq!(a.encode("Grasp The MUG", 6), a.encode("grasp the mug", 6));
    }

    #[test]
    fn truncation_respects_length() {
        let t = Tokenizer::new();
        let long = "a person tries to grasp the mug carefully now please again";
        let ids = t.encode(long, 4);
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], BOS);
    }
}
