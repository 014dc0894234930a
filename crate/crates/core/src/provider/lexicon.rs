//! The bundled synonym lexicon: a versioned asset of generic support
//! vocabulary that gives the simulator controlled lexical drift.

use std::collections::BTreeMap;
use std::sync::OnceLock;

const RAW: &str = include_str!("../../assets/synonyms.tsv");

/// Term-to-synonyms mapping. Unidirectional: synonyms are not keys, so a
/// paraphrase of a paraphrase falls back to clause reordering.
#[derive(Debug)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    fn parse(raw: &str) -> Self {
        let mut entries = BTreeMap::new();
        for line in raw.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((term, rest)) = line.split_once('\t') else { continue };
            let synonyms: Vec<String> = rest
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
            if !synonyms.is_empty() {
                entries.insert(term.trim().to_lowercase(), synonyms);
            }
        }
        Self { entries }
    }

    pub fn synonyms(&self, term: &str) -> Option<&[String]> {
        self.entries.get(&term.to_lowercase()).map(Vec::as_slice)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(&term.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The bundled lexicon, parsed once.
pub fn bundled() -> &'static Lexicon {
    static LEXICON: OnceLock<Lexicon> = OnceLock::new();
    LEXICON.get_or_init(|| Lexicon::parse(RAW))
}
