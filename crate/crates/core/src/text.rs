//! Tokenization, sentence splitting, and small text helpers shared by the
//! index, the simulator, and the judge.

use std::collections::BTreeSet;

/// Function words ignored when comparing "content" tokens. The list is part
/// of the deterministic contract: the simulator, the judge, and the probe
/// disjointness checks all use it.
pub const STOPWORDS: &[&str] = &[
    "the", "a", "an", "my", "our", "your", "their", "his", "her", "its", "of", "to", "in", "on",
    "at", "for", "from", "with", "without", "about", "into", "and", "or", "but", "so", "as", "is",
    "are", "was", "were", "be", "been", "being", "do", "does", "did", "can", "cant", "cannot",
    "could", "should", "would", "will", "wont", "not", "no", "yes", "it", "this", "that", "these",
    "those", "i", "we", "you", "they", "he", "she", "me", "us", "them", "what", "which", "who",
    "whom", "whose", "why", "how", "when", "where", "there", "here", "please", "thanks", "hi",
    "hello", "isnt", "isn", "dont", "don", "doesnt", "doesn", "didnt", "didn", "wasnt", "wasn",
    "arent", "aren", "won", "vs", "per", "via", "if", "then", "than", "am", "by", "up",
    "down", "out", "off", "very", "just", "also", "only", "any", "all", "some", "more", "most",
    "other", "another", "each", "both", "own", "same", "too", "still", "now",
];

/// Lowercase, split on any non-alphanumeric character, drop tokens shorter
/// than two characters. No stemming, no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_owned)
        .collect()
}

/// Distinct token set of a text.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Tokens of `text` that are not function words.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Distinct content-token set of a text.
pub fn content_token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

/// Split into sentences on '.', '!' or '?' followed by whitespace or end of
/// input. The terminator stays attached; surrounding whitespace is trimmed.
/// A period inside "v8.2" does not end a sentence.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    for i in 0..chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let at_end = i + 1 == chars.len();
            let before_space = !at_end && chars[i + 1].is_whitespace();
            if at_end || before_space {
                let s: String = chars[start..=i].iter().collect();
                let s = s.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = i + 1;
            }
        }
    }
    if start < chars.len() {
        let s: String = chars[start..].iter().collect();
        let s = s.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

/// Jaccard similarity of the two texts' token sets. Both empty => 1.0.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa = token_set(a);
    let sb = token_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Share of `of`'s distinct content tokens that also occur in `within`.
/// Returns 1.0 when `of` has no content tokens.
pub fn content_overlap(of: &str, within: &str) -> f64 {
    let target = content_token_set(of);
    if target.is_empty() {
        return 1.0;
    }
    let have = content_token_set(within);
    let hit = target.iter().filter(|t| have.contains(*t)).count();
    hit as f64 / target.len() as f64
}

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}
