//! Whitespace-token vocabulary with reserved special ids.
//!
//! Ids 0..6 are fixed: `<pad>`, `<s>`, `</s>`, `<GRD>`, `</GRD>`, `<PTR>`.
//! Everything after comes from the conversation generator's closed word
//! list, sorted. Unknown words are an error, never a silent UNK.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::conversation;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const GRD_OPEN_ID: usize = 3;
pub const GRD_CLOSE_ID: usize = 4;
pub const PTR_ID: usize = 5;

pub const MAX_VOCAB: usize = 512;

const SPECIALS: [&str; 6] = [
    conversation::PAD,
    conversation::BOS,
    conversation::EOS,
    conversation::GRD_OPEN,
    conversation::GRD_CLOSE,
    conversation::PTR_TOKEN,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    /// Build from an explicit token list whose first entries must be the
    /// six reserved specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() {
            return Err(Error::Vocabulary(format!(
                "vocabulary of {} tokens cannot hold the reserved specials",
                tokens.len()
            )));
        }
        if tokens.len() > MAX_VOCAB {
            return Err(Error::Vocabulary(format!(
                "vocabulary size {} exceeds the maximum {MAX_VOCAB}",
                tokens.len()
            )));
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::Vocabulary(format!(
                    "reserved id {i} must be {special:?}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.chars().any(|c| c.is_whitespace()) || t.is_empty() {
                return Err(Error::Vocabulary(format!("token {t:?} is not a single word")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The standard vocabulary: reserved specials followed by the closed
    /// word list of the conversation templates.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(conversation::vocabulary_words());
        Self::from_tokens(tokens).expect("template word list is well-formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::Vocabulary(format!("out-of-vocabulary word {w:?}")))
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&id| {
                self.token(id)
                    .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range")))
            })
            .collect();
        Ok(words?.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conversation::fill;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::standard();
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        assert_eq!(v.id("<s>"), Some(BOS_ID));
        assert_eq!(v.id("</s>"), Some(EOS_ID));
        assert_eq!(v.id("<GRD>"), Some(GRD_OPEN_ID));
        assert_eq!(v.id("</GRD>"), Some(GRD_CLOSE_ID));
        assert_eq!(v.id("<PTR>"), Some(PTR_ID));
    }

    #[test]
    fn bijective_and_bounded() {
        let v = Vocabulary::standard();
        assert!(v.len() <= MAX_VOCAB);
        for id in 0..v.len() {
            let t = v.token(id).unwrap();
            assert_eq!(v.id(t), Some(id));
        }
    }

    #[test]
    fn template_round_trip() {
        let v = Vocabulary::standard();
        for s in [
            fill("Segment: {}.", "the red square"),
            fill("Help me localize {}.", "the pink disc on the ground"),
            "Here it is: <GRD> both blue squares </GRD>".to_string(),
            fill("Describe the region <PTR> in a few words.", ""),
            "Yes , <GRD> the cyan triangle </GRD> .".to_string(),
            "3 .".to_string(),
        ] {
            let ids = v.tokenize(&s).unwrap();
            assert_eq!(v.detokenize(&ids).unwrap(), s);
        }
    }

    #[test]
    fn oov_is_an_error() {
        let v = Vocabulary::standard();
        let err = v.tokenize("Segment: the mauve square .").unwrap_err();
        assert!(err.to_string().contains("mauve"));
    }

    #[test]
    fn malformed_token_lists_rejected() {
        assert!(Vocabulary::from_tokens(vec!["<pad>".into()]).is_err());
        let mut toks: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        toks.push("two words".into());
        assert!(Vocabulary::from_tokens(toks).is_err());
        let mut toks: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        toks.push("dup".into());
        toks.push("dup".into());
        assert!(Vocabulary::from_tokens(toks).is_err());
        let mut toks: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        toks.swap(0, 1);
        assert!(Vocabulary::from_tokens(toks).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::standard();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
