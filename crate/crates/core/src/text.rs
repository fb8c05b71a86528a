//! Answer normalization shared by the F1 metric and the lexical reranker.

use std::sync::OnceLock;

use regex::Regex;

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid article regex"))
}

/// Lowercase, drop ASCII punctuation, drop the articles `a`/`an`/`the` as
/// whole words, and collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens of the normalized text.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}
