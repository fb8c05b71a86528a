//! LongBench-style dataset records: one JSON object per line with `input`
//! (the question), `context` and `answers`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalError;
use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub record_id: String,
    pub question: String,
    pub context: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

impl EvalRecord {
    /// The record's context as a single-document corpus.
    pub fn corpus(&self) -> Vec<Document> {
        vec![Document::new(self.record_id.clone(), self.context.clone())]
    }

    /// Set the prediction and its score together.
    pub fn score(&mut self, prediction: String) -> f64 {
        let f1 = super::qa_f1(&prediction, &self.gold_answers);
        self.prediction = Some(prediction);
        self.f1 = Some(f1);
        f1
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(BufReader::new(file))
}

fn field<'a>(obj: &'a Value, name: &str, line: usize) -> Result<&'a Value, EvalError> {
    obj.get(name).ok_or_else(|| EvalError::Dataset {
        line,
        reason: format!("missing field `{name}`"),
    })
}

fn string_field(obj: &Value, name: &str, line: usize) -> Result<String, EvalError> {
    field(obj, name, line)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| EvalError::Dataset {
            line,
            reason: format!("field `{name}` is not a string"),
        })
}

/// Parse dataset lines. Blank lines are skipped; the record id is `_id`,
/// then `id`, then `line-<n>`.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<EvalRecord>, EvalError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| EvalError::Io {
            path: format!("line {line_no}"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line).map_err(|e| EvalError::Dataset {
            line: line_no,
            reason: e.to_string(),
        })?;
        let question = string_field(&obj, "input", line_no)?;
        let context = string_field(&obj, "context", line_no)?;
        let answers = field(&obj, "answers", line_no)?
            .as_array()
            .ok_or_else(|| EvalError::Dataset {
                line: line_no,
                reason: "field `answers` is not a list".into(),
            })?
            .iter()
            .map(|a| {
                a.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| EvalError::Dataset {
                        line: line_no,
                        reason: "non-string answer".into(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if answers.is_empty() {
            return Err(EvalError::Dataset {
                line: line_no,
                reason: "`answers` is empty".into(),
            });
        }
        let record_id = obj
            .get("_id")
            .or_else(|| obj.get("id"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("line-{line_no}"));
        records.push(EvalRecord {
            record_id,
            question,
            context,
            gold_answers: answers,
            prediction: None,
            f1: None,
        });
    }
    Ok(records)
}
