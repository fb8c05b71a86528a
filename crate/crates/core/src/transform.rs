//! LLM-prompted text transformations.
//!
//! Document side: answerable questions, summaries and paraphrases of a
//! chunk. Query side: decomposition of a multihop question into single-hop
//! subquestions. All of them ask the model for a flat string array and go
//! through [`parse_string_array`], with one repair retry on parse failure.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::Chunk;
use crate::gateway::{self, ChatBackend, ChatRequest, GatewayError};
use crate::prompts::{
    PromptTemplate, ANSWERABLE_QUESTIONS, DECOMPOSITION, INPUT_DELIMITER, PARAPHRASES,
    REPAIR_SUFFIX, SUMMARIES,
};

pub const DEFAULT_MAX_SUBQUESTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("{what} must be non-empty")]
    EmptyInput { what: &'static str },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("unparseable {template} output after repair retry ({error}); raw output: {raw:?}")]
    Unparseable {
        template: &'static str,
        raw: String,
        error: ParseError,
    },
    #[error("decomposition produced {count} subquestions, more than the cap of {max}")]
    TooManySubquestions { count: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Aq,
    Summary,
    Paraphrase,
}

impl TransformKind {
    pub fn template(self) -> PromptTemplate {
        match self {
            TransformKind::Aq => ANSWERABLE_QUESTIONS,
            TransformKind::Summary => SUMMARIES,
            TransformKind::Paraphrase => PARAPHRASES,
        }
    }

    /// Short tag used in entry ids.
    pub fn tag(self) -> &'static str {
        match self {
            TransformKind::Aq => "aq",
            TransformKind::Summary => "sum",
            TransformKind::Paraphrase => "par",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerableQuestion {
    pub aq_id: String,
    pub chunk_id: String,
    /// 1-based position in the model output.
    pub ordinal: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    /// 1-based position in the decomposition.
    pub index: usize,
    pub text: String,
}

impl SubQuestion {
    /// Number `texts` contiguously from 1.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Vec<SubQuestion> {
        texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| SubQuestion {
                index: i + 1,
                text: t.into(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub subquestions: Vec<SubQuestion>,
    /// Set when the model returned an empty list and the original question
    /// was used as the only subquestion.
    pub fallback: bool,
}

/// Id of the `ordinal`-th variant of `kind` generated from a chunk.
pub fn variant_id(chunk_id: &str, kind: TransformKind, ordinal: usize) -> String {
    format!("{chunk_id}#{}{ordinal:03}", kind.tag())
}

fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extract a flat list of strings from model output.
///
/// Markdown code fences and surrounding prose are ignored; the first array
/// literal is parsed as JSON, falling back to a quoted-string list reader
/// that also accepts single-quoted (Python style) strings. Elements are
/// trimmed and empty ones dropped. Offsets in errors index into the
/// fence-stripped text.
pub fn parse_string_array(raw: &str) -> Result<Vec<String>, ParseError> {
    let text = strip_fences(raw);
    let open = text.find('[');
    if let Some(brace) = text.find('{') {
        if open.is_none_or(|o| brace < o) {
            let mut stream =
                serde_json::Deserializer::from_str(&text[brace..]).into_iter::<Value>();
            if let Some(Ok(Value::Object(_))) = stream.next() {
                return Err(ParseError {
                    offset: brace,
                    reason: "expected a string array, found an object".into(),
                });
            }
        }
    }
    let Some(mut start) = open else {
        return Err(ParseError {
            offset: 0,
            reason: "no array literal found".into(),
        });
    };
    let mut first_error = None;
    loop {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let parsed = match stream.next() {
            // A well-formed array is authoritative: non-string elements are fatal.
            Some(Ok(Value::Array(items))) => Some(strings_only(items, start)?),
            _ => parse_quoted_list(&text, start)
                .map_err(|e| {
                    first_error.get_or_insert(e);
                })
                .ok(),
        };
        if let Some(items) = parsed {
            return Ok(items
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect());
        }
        match text[start + 1..].find('[') {
            Some(next) => start += 1 + next,
            None => break,
        }
    }
    Err(first_error.expect("at least one candidate was tried"))
}

fn strings_only(items: Vec<Value>, offset: usize) -> Result<Vec<String>, ParseError> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::String(s) => Ok(s),
            other => Err(ParseError {
                offset,
                reason: format!("element {i} is not a string: {other}"),
            }),
        })
        .collect()
}

fn skip_ws(chars: &mut std::iter::Peekable<impl Iterator<Item = (usize, char)>>) {
    while chars.next_if(|&(_, c)| c.is_whitespace()).is_some() {}
}

/// Reader for `['a', "b", ...]` with backslash escapes.
fn parse_quoted_list(text: &str, start: usize) -> Result<Vec<String>, ParseError> {
    let err = |offset: usize, reason: &str| ParseError {
        offset,
        reason: reason.to_string(),
    };
    let mut chars = text[start..]
        .char_indices()
        .map(|(i, c)| (i + start, c))
        .peekable();
    chars.next(); // '['
    let mut items = Vec::new();
    loop {
        skip_ws(&mut chars);
        match chars.next() {
            Some((_, ']')) if items.is_empty() => return Ok(items),
            Some((_, q @ ('"' | '\''))) => {
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '\\')) => match chars.next() {
                            Some((_, 'n')) => s.push('\n'),
                            Some((_, 't')) => s.push('\t'),
                            Some((_, c)) => s.push(c),
                            None => return Err(err(text.len(), "unterminated string")),
                        },
                        Some((_, c)) if c == q => break,
                        Some((_, c)) => s.push(c),
                        None => return Err(err(text.len(), "unterminated string")),
                    }
                }
                items.push(s);
            }
            Some((i, _)) => return Err(err(i, "expected a quoted string")),
            None => return Err(err(text.len(), "unterminated array")),
        }
        skip_ws(&mut chars);
        match chars.next() {
            Some((_, ',')) => {
                skip_ws(&mut chars);
                if let Some(&(_, ']')) = chars.peek() {
                    return Ok(items);
                }
            }
            Some((_, ']')) => return Ok(items),
            Some((i, _)) => return Err(err(i, "expected ',' or ']'")),
            None => return Err(err(text.len(), "unterminated array")),
        }
    }
}

/// Send `template` + `user_prompt`, parse the array, and retry once with a
/// "return only the array" reminder if parsing fails.
fn request_string_array(
    chat: &dyn ChatBackend,
    template: PromptTemplate,
    user_prompt: String,
) -> Result<Vec<String>, TransformError> {
    let request = ChatRequest::new(template.text, user_prompt);
    let raw = gateway::chat(chat, &request)?;
    if let Ok(items) = parse_string_array(&raw) {
        return Ok(items);
    }
    let repair = ChatRequest::new(
        template.text,
        format!("{}{}", request.user_prompt, REPAIR_SUFFIX),
    );
    let raw = gateway::chat(chat, &repair)?;
    parse_string_array(&raw).map_err(|error| TransformError::Unparseable {
        template: template.name,
        raw,
        error,
    })
}

/// User prompt for a document transformation: the chunk under a fixed header.
pub fn document_user_prompt(chunk_text: &str) -> String {
    format!("{INPUT_DELIMITER}{chunk_text}")
}

/// Run one document transformation over a chunk.
pub fn generate_variants(
    kind: TransformKind,
    chunk: &Chunk,
    chat: &dyn ChatBackend,
) -> Result<Vec<String>, TransformError> {
    if chunk.text.is_empty() {
        return Err(TransformError::EmptyInput { what: "chunk text" });
    }
    request_string_array(chat, kind.template(), document_user_prompt(&chunk.text))
}

/// Questions answerable from the chunk alone. An empty list is valid.
pub fn generate_answerable_questions(
    chunk: &Chunk,
    chat: &dyn ChatBackend,
) -> Result<Vec<AnswerableQuestion>, TransformError> {
    Ok(generate_variants(TransformKind::Aq, chunk, chat)?
        .into_iter()
        .enumerate()
        .map(|(i, text)| AnswerableQuestion {
            aq_id: variant_id(&chunk.chunk_id, TransformKind::Aq, i + 1),
            chunk_id: chunk.chunk_id.clone(),
            ordinal: i + 1,
            text,
        })
        .collect())
}

pub fn generate_summaries(
    chunk: &Chunk,
    chat: &dyn ChatBackend,
) -> Result<Vec<String>, TransformError> {
    generate_variants(TransformKind::Summary, chunk, chat)
}

pub fn generate_paraphrases(
    chunk: &Chunk,
    chat: &dyn ChatBackend,
) -> Result<Vec<String>, TransformError> {
    generate_variants(TransformKind::Paraphrase, chunk, chat)
}

pub fn decomposition_user_prompt(question: &str) -> String {
    format!("# Question\n{question}")
}

/// Split a multihop question into single-hop subquestions, capped at
/// [`DEFAULT_MAX_SUBQUESTIONS`].
pub fn decompose_question(
    question: &str,
    chat: &dyn ChatBackend,
) -> Result<Decomposition, TransformError> {
    decompose_question_capped(question, chat, DEFAULT_MAX_SUBQUESTIONS)
}

pub fn decompose_question_capped(
    question: &str,
    chat: &dyn ChatBackend,
    max_subquestions: usize,
) -> Result<Decomposition, TransformError> {
    if question.trim().is_empty() {
        return Err(TransformError::EmptyInput { what: "question" });
    }
    let items = request_string_array(chat, DECOMPOSITION, decomposition_user_prompt(question))?;
    if items.len() > max_subquestions {
        return Err(TransformError::TooManySubquestions {
            count: items.len(),
            max: max_subquestions,
        });
    }
    if items.is_empty() {
        log::warn!("empty decomposition for {question:?}; using the original question");
        return Ok(Decomposition {
            subquestions: SubQuestion::from_texts([question]),
            fallback: true,
        });
    }
    Ok(Decomposition {
        subquestions: SubQuestion::from_texts(items),
        fallback: false,
    })
}

/// Deterministic stand-in for a chat model on the transformation and
/// decomposition prompts, so indexing can run without a live backend.
///
/// Answerable questions restate each sentence of the chunk as a question,
/// summaries take the leading sentences, paraphrases re-space the text,
/// and decomposition splits the question on " and ". Returns `None` for
/// any other prompt.
pub fn heuristic_reply(request: &ChatRequest) -> Option<String> {
    let system = request.system_prompt.as_str();
    let items: Vec<String> = if system == DECOMPOSITION.text {
        let question = request
            .user_prompt
            .strip_prefix("# Question\n")
            .unwrap_or(&request.user_prompt);
        let question = question
            .split(REPAIR_SUFFIX)
            .next()
            .unwrap_or(question)
            .trim();
        let parts: Vec<String> = question
            .trim_end_matches('?')
            .split(" and ")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| format!("{p}?"))
            .collect();
        if parts.len() > 1 {
            parts
        } else {
            vec![question.to_string()]
        }
    } else {
        let kind = [
            TransformKind::Aq,
            TransformKind::Summary,
            TransformKind::Paraphrase,
        ]
        .into_iter()
        .find(|k| k.template().text == system)?;
        let body = request
            .user_prompt
            .strip_prefix(INPUT_DELIMITER)
            .unwrap_or(&request.user_prompt);
        let body = body.split(REPAIR_SUFFIX).next().unwrap_or(body);
        let sentences: Vec<String> = body
            .split(['.', '!', '?', '\n'])
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|s| s.split(' ').count() >= 3)
            .collect();
        match kind {
            TransformKind::Aq => sentences
                .iter()
                .map(|s| format!("What does the text state about {s}?"))
                .collect(),
            TransformKind::Summary => (1..=sentences.len().min(2))
                .map(|n| sentences[..n].join(". ") + ".")
                .collect(),
            TransformKind::Paraphrase => {
                let flat = body.split_whitespace().collect::<Vec<_>>().join(" ");
                if flat.is_empty() {
                    Vec::new()
                } else {
                    vec![flat]
                }
            }
        }
    };
    serde_json::to_string(&items).ok()
}
