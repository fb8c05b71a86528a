//! Token-level F1 between a predicted and gold answers.

use std::collections::HashMap;

use crate::text::normalized_tokens;

/// F1 over normalized whitespace tokens with multiset overlap.
///
/// Two answers that both normalize to nothing score 1.0; if only one
/// does, 0.0.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = normalized_tokens(prediction);
    let gold = normalized_tokens(gold);
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best [`token_f1`] over all gold answers; 0.0 when there are none.
pub fn qa_f1<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> f64 {
    gold_answers
        .iter()
        .map(|g| token_f1(prediction, g.as_ref()))
        .fold(0.0, f64::max)
}
