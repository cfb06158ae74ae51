//! Word-by-word lexicon substitution. Stands in for real translation,
//! phoneme or glossing models so the registry can host several task types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const LEXICON_ARTIFACT_FORMAT: &str = "annolab.lexicon.v1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub format: String,
    pub entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self {
            format: LEXICON_ARTIFACT_FORMAT.to_owned(),
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("lexicon serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let lex: Self = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if lex.format != LEXICON_ARTIFACT_FORMAT {
            return Err(format!("unexpected artifact format {:?}", lex.format));
        }
        Ok(lex)
    }
}

/// Replaces every single-space separated token found in `lexicon`
/// (case-sensitive); everything else is copied.
pub fn stub_translate(text: &str, lexicon: &BTreeMap<String, String>) -> String {
    text.split('\n')
        .map(|line| {
            line.split(' ')
                .map(|tok| lexicon.get(tok).map_or(tok, String::as_str))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Merges (source, target) pairs into `lexicon`; later pairs overwrite
/// earlier ones. Pairs with equal token counts contribute one entry per
/// token position, otherwise the whole trimmed strings form a single entry.
pub fn merge_pairs<'a>(lexicon: &mut BTreeMap<String, String>, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) {
    for (source, target) in pairs {
        let s: Vec<&str> = source.split_whitespace().collect();
        let t: Vec<&str> = target.split_whitespace().collect();
        if s.len() == t.len() {
            for (a, b) in s.into_iter().zip(t) {
                lexicon.insert(a.to_owned(), b.to_owned());
            }
        } else if !s.is_empty() {
            lexicon.insert(source.trim().to_owned(), target.trim().to_owned());
        }
    }
}
