//! Tokenization shared by retrieval, featurization and the heuristic evaluator.

use std::collections::BTreeSet;

/// Function words ignored when extracting query keywords and measuring overlap.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "been", "by", "can", "did",
    "do", "does", "for", "from", "had", "has", "have", "how", "in", "into", "is", "it", "its",
    "many", "much", "of", "on", "or", "that", "the", "their", "there", "these", "this", "those",
    "to", "was", "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Case-folds and splits on non-alphanumeric characters, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    // Fold first: lowercasing can introduce combining marks that split tokens.
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Words of `text` in their original casing, split the same way as [`tokenize`].
pub fn words(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Crude plural folding: "papers" -> "paper". Tokens of three characters or
/// fewer, and tokens ending in "ss", are left alone.
pub fn fold_plural(token: &str) -> &str {
    if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") {
        &token[..token.len() - 1]
    } else {
        token
    }
}

/// Distinct non-stopword tokens with plurals folded.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| fold_plural(&t).to_string())
        .collect()
}

/// Fraction of `query` content tokens that also occur in `evidence`.
/// Zero when the query has no content tokens.
pub fn overlap(query: &BTreeSet<String>, evidence: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let shared = query.iter().filter(|t| evidence.contains(*t)).count();
    shared as f64 / query.len() as f64
}

/// Maximal runs of consecutive non-stopword words, in their original casing,
/// joined by single spaces. Duplicates are dropped, first occurrence wins.
pub fn keyword_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for w in words(text) {
        if is_stopword(&w.to_lowercase()) {
            if !current.is_empty() {
                spans.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(w);
        }
    }
    if !current.is_empty() {
        spans.push(current.join(" "));
    }
    let mut seen = BTreeSet::new();
    spans.retain(|s| seen.insert(s.clone()));
    spans
}

/// True when the trimmed text parses as a finite number.
pub fn is_numeric(text: &str) -> bool {
    let t = text.trim();
    !t.is_empty() && t.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
}
