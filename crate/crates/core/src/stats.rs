//! Count statistics in the `{mean, std, min, max}` table shape used for
//! per-chunk entry counts and per-question decomposition counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Summary of a sample of non-negative counts. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
    /// Number of zero counts in the sample.
    pub zeros: usize,
}

impl CountStats {
    /// Single pass (Welford) over the counts. An empty sample yields all zeros.
    pub fn from_counts<I: IntoIterator<Item = usize>>(counts: I) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        let mut min = usize::MAX;
        let mut max = 0usize;
        let mut zeros = 0usize;
        for c in counts {
            n += 1;
            let x = c as f64;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
            min = min.min(c);
            max = max.max(c);
            if c == 0 {
                zeros += 1;
            }
        }
        if n == 0 {
            return Self {
                n: 0,
                mean: 0.0,
                std: 0.0,
                min: 0,
                max: 0,
                zeros: 0,
            };
        }
        Self {
            n,
            mean,
            std: (m2 / n as f64).max(0.0).sqrt(),
            min,
            max,
            zeros,
        }
    }
}

/// Render rows as a `Label | Mean | Std Dev | Min | Max` table.
pub fn render_table(label_header: &str, rows: &[(String, CountStats)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(std::iter::once(label_header.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>6}  {:>6}",
        label_header, "Mean", "Std Dev", "Min", "Max"
    );
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>8.2}  {:>6}  {:>6}",
            label, s.mean, s.std, s.min, s.max
        );
    }
    out
}
