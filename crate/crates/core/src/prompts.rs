//! Prompt templates, stored as plain-text assets under `prompts/` and
//! pinned by content hash in index manifests and report fingerprints.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

pub const ANSWERABLE_QUESTIONS: PromptTemplate = PromptTemplate {
    name: "answerable_questions",
    text: include_str!("../prompts/answerable_questions.txt"),
};

pub const SUMMARIES: PromptTemplate = PromptTemplate {
    name: "summaries",
    text: include_str!("../prompts/summaries.txt"),
};

pub const PARAPHRASES: PromptTemplate = PromptTemplate {
    name: "paraphrases",
    text: include_str!("../prompts/paraphrases.txt"),
};

pub const DECOMPOSITION: PromptTemplate = PromptTemplate {
    name: "decomposition",
    text: include_str!("../prompts/decomposition.txt"),
};

pub const ANSWER_UNIFIED: PromptTemplate = PromptTemplate {
    name: "answer_unified",
    text: include_str!("../prompts/answer_unified.txt"),
};

pub const ANSWER_STEP: PromptTemplate = PromptTemplate {
    name: "answer_step",
    text: include_str!("../prompts/answer_step.txt"),
};

pub const ANSWER_FINAL: PromptTemplate = PromptTemplate {
    name: "answer_final",
    text: include_str!("../prompts/answer_final.txt"),
};

pub const RERANK_CHAT: PromptTemplate = PromptTemplate {
    name: "rerank_chat",
    text: include_str!("../prompts/rerank_chat.txt"),
};

/// Header placed above the chunk text in document transformation prompts.
pub const INPUT_DELIMITER: &str = "# Input Text\n";

/// Appended to the user prompt on the single repair retry.
pub const REPAIR_SUFFIX: &str = "\n\nReturn only the array.";

pub const ALL: [PromptTemplate; 8] = [
    ANSWERABLE_QUESTIONS,
    SUMMARIES,
    PARAPHRASES,
    DECOMPOSITION,
    ANSWER_UNIFIED,
    ANSWER_STEP,
    ANSWER_FINAL,
    RERANK_CHAT,
];

/// `name -> sha256` for every template.
pub fn template_hashes() -> BTreeMap<String, String> {
    ALL.iter()
        .map(|t| (t.name.to_string(), t.sha256()))
        .collect()
}
