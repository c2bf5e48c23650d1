//! Prompt templates for every model-facing stage.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` produce literal
//! braces. Each template has a fixed set of allowed placeholders, checked
//! when templates are loaded so a typo fails early rather than leaking a
//! raw `{placeholder}` into a prompt.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::Message;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder {
        template: &'static str,
        placeholder: String,
    },
    #[error("template `{template}` has an unclosed `{{`")]
    Unclosed { template: &'static str },
    #[error("cannot read templates from {path}: {message}")]
    Io { path: String, message: String },
}

const COT_SYSTEM: &str = "When responding to my question, please first evaluate the validity of the information or the assumption underlying the question. Once you've established its truth or existence, then proceed to deliver a detailed explanation or answer. Prioritize accuracy and fact-checking before diving into elaboration or conjecture.";

const CONCISE_ANSWER: &str =
    "Based on the reasoning above, provide a concise answer to the question: {question}";

const DIVERSIFY: &str =
    "For the question {question}, please provide {k} semantically equivalent questions";

const TRANSLATE: &str = "Translate the following question into {language}. Output only the translated question.\n\n{question}";

const ANSWER: &str = "{question}";

const ANSWER_IN_LANGUAGE: &str = "Answer the following question in {language}.\n\n{question}";

const CHECK_CROSS_LANGUAGE: &str = "Given the question Q, and two potential answers: answer A in {source_language} and answer B in {target_language}. Your task is to determine if the content and meaning of A and B are equivalent in the context of answering Q. Consider linguistic nuances, cultural variations, and the overall conveyance of information. Respond with a binary classification. If A and B are equivalent, output 'True.', otherwise output 'False'\n\n{qa_a}\n\n{qa_b}";

const CHECK_CROSS_MODEL: &str = "Are the following two Question-Answer(QA) pairs semantically equivalent? Provide your best guess that it is correct (True or False). Given ONLY the guess (True or False), no other words or explanation.\n\n{qa_a}\n\n{qa_b}";

const REFORMULATE: &str = "Transform the following question into a query suitable for information retrieval and then use the query to find relevant evidence. Follow these steps for a short but comprehensive approach:\nOriginal Question: {question}\n1. Simplify the question into key terms and concepts.\n2. Remove any elements that are not essential for a search query.\n3. If necessary, rephrase the question to focus on the most critical aspects for retrieval.";

const REPAIR: &str = "You are an advanced AI with the ability to process and synthesize information efficiently. When provided with a question, you should consider the following aspects in your response:\n1. The specific question asked: {question}\n2. The reasoning process: {thought}\n3. The short answer previously given related to the question: {answer}\n4. Evidences that have been retrieved: {evidence}\nUse this information to generate a concise, accurate, and relevant answer that reflects the latest understanding of the topic based on the input provided.\nYour response should be clear, direct, and provide the most up-to-date information available while maintaining coherence with the previous discussion points.";

/// All prompt templates. Fields missing from a template file keep their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub cot_system: String,
    pub concise_answer: String,
    pub diversify: String,
    pub translate: String,
    pub answer: String,
    pub answer_in_language: String,
    pub check_cross_language: String,
    pub check_cross_model: String,
    pub reformulate: String,
    pub repair: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            cot_system: COT_SYSTEM.into(),
            concise_answer: CONCISE_ANSWER.into(),
            diversify: DIVERSIFY.into(),
            translate: TRANSLATE.into(),
            answer: ANSWER.into(),
            answer_in_language: ANSWER_IN_LANGUAGE.into(),
            check_cross_language: CHECK_CROSS_LANGUAGE.into(),
            check_cross_model: CHECK_CROSS_MODEL.into(),
            reformulate: REFORMULATE.into(),
            repair: REPAIR.into(),
        }
    }
}

/// Parsed template pieces.
enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn parse<'a>(template: &'a str, name: &'static str) -> Result<Vec<Piece<'a>>, TemplateError> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        let (before, tail) = rest.split_at(pos);
        if !before.is_empty() {
            pieces.push(Piece::Text(before));
        }
        if let Some(after) = tail.strip_prefix("{{") {
            pieces.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            pieces.push(Piece::Text("}"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix('}') {
            pieces.push(Piece::Text("}"));
            rest = after;
        } else {
            let end = tail
                .find('}')
                .ok_or(TemplateError::Unclosed { template: name })?;
            let var = &tail[1..end];
            if var.is_empty() || !var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                // Not a placeholder; keep verbatim.
                pieces.push(Piece::Text(&tail[..=end]));
            } else {
                pieces.push(Piece::Var(var));
            }
            rest = &tail[end + 1..];
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    Ok(pieces)
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let Ok(pieces) = parse(template, "") else {
        return template.to_string();
    };
    let mut out = String::with_capacity(template.len() + 64);
    for p in pieces {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Var(v) => match vars.iter().find(|(k, _)| *k == v) {
                Some((_, value)) => out.push_str(value),
                None => {
                    out.push('{');
                    out.push_str(v);
                    out.push('}');
                }
            },
        }
    }
    out
}

/// Render one QA pair as shown to an equivalence checker.
pub fn format_qa(question: &str, answer_label: &str, answer: &str) -> String {
    format!("Q: {question}\n{answer_label}: {answer}")
}

/// Human-readable name for common ISO 639-1 codes; unknown codes pass through.
pub fn language_name(code: &str) -> String {
    let name = match code.to_ascii_lowercase().as_str() {
        "en" => "English",
        "zh" => "Chinese",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "ja" => "Japanese",
        "ko" => "Korean",
        "ru" => "Russian",
        "ar" => "Arabic",
        "pt" => "Portuguese",
        "it" => "Italian",
        "hi" => "Hindi",
        _ => return code.to_string(),
    };
    name.to_string()
}

impl PromptTemplates {
    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let raw = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let t: PromptTemplates = toml::from_str(&raw).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }

    fn fields(&self) -> [(&'static str, &str, &'static [&'static str]); 10] {
        [
            ("cot_system", &self.cot_system, &[]),
            ("concise_answer", &self.concise_answer, &["question"]),
            ("diversify", &self.diversify, &["question", "k"]),
            ("translate", &self.translate, &["question", "language"]),
            ("answer", &self.answer, &["question"]),
            (
                "answer_in_language",
                &self.answer_in_language,
                &["question", "language"],
            ),
            (
                "check_cross_language",
                &self.check_cross_language,
                &["qa_a", "qa_b", "source_language", "target_language"],
            ),
            (
                "check_cross_model",
                &self.check_cross_model,
                &["qa_a", "qa_b"],
            ),
            ("reformulate", &self.reformulate, &["question"]),
            (
                "repair",
                &self.repair,
                &["question", "thought", "answer", "evidence"],
            ),
        ]
    }

    /// Check every template only uses its allowed placeholders.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, template, allowed) in self.fields() {
            for piece in parse(template, name)? {
                if let Piece::Var(v) = piece {
                    if !allowed.contains(&v) {
                        return Err(TemplateError::UnknownPlaceholder {
                            template: name,
                            placeholder: v.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("templates serialize")
    }

    pub fn cot_messages(&self, question: &str) -> Vec<Message> {
        vec![Message::system(&self.cot_system), Message::user(question)]
    }

    pub fn concise_messages(&self, question: &str, thought: &str) -> Vec<Message> {
        let mut m = self.cot_messages(question);
        m.push(Message::assistant(thought));
        m.push(Message::user(render(
            &self.concise_answer,
            &[("question", question)],
        )));
        m
    }

    pub fn diversify_messages(&self, question: &str, k: usize) -> Vec<Message> {
        let k = k.to_string();
        vec![Message::user(render(
            &self.diversify,
            &[("question", question), ("k", &k)],
        ))]
    }

    pub fn translate_messages(&self, question: &str, language_code: &str) -> Vec<Message> {
        let lang = language_name(language_code);
        vec![Message::user(render(
            &self.translate,
            &[("question", question), ("language", &lang)],
        ))]
    }

    pub fn answer_messages(&self, question: &str) -> Vec<Message> {
        vec![Message::user(render(
            &self.answer,
            &[("question", question)],
        ))]
    }

    pub fn answer_in_language_messages(&self, question: &str, language_code: &str) -> Vec<Message> {
        let lang = language_name(language_code);
        vec![Message::user(render(
            &self.answer_in_language,
            &[("question", question), ("language", &lang)],
        ))]
    }

    pub fn check_cross_language_messages(
        &self,
        qa_a: &str,
        qa_b: &str,
        source_code: &str,
        target_code: &str,
    ) -> Vec<Message> {
        let (s, t) = (language_name(source_code), language_name(target_code));
        vec![Message::user(render(
            &self.check_cross_language,
            &[
                ("qa_a", qa_a),
                ("qa_b", qa_b),
                ("source_language", &s),
                ("target_language", &t),
            ],
        ))]
    }

    pub fn check_cross_model_messages(&self, qa_a: &str, qa_b: &str) -> Vec<Message> {
        vec![Message::user(render(
            &self.check_cross_model,
            &[("qa_a", qa_a), ("qa_b", qa_b)],
        ))]
    }

    pub fn reformulate_messages(&self, question: &str) -> Vec<Message> {
        vec![Message::user(render(
            &self.reformulate,
            &[("question", question)],
        ))]
    }

    pub fn repair_messages(
        &self,
        question: &str,
        thought: &str,
        answer: &str,
        evidence: &str,
    ) -> Vec<Message> {
        vec![Message::user(render(
            &self.repair,
            &[
                ("question", question),
                ("thought", thought),
                ("answer", answer),
                ("evidence", evidence),
            ],
        ))]
    }

    /// Named view used by the CLI to dump defaults.
    pub fn as_map(&self) -> HashMap<&'static str, String> {
        self.fields()
            .into_iter()
            .map(|(k, v, _)| (k, v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PromptTemplates::default().validate().unwrap();
    }

    #[test]
    fn diversify_fills_question_and_k() {
        let m = PromptTemplates::default().diversify_messages("Who wrote Hamlet?", 6);
        assert_eq!(
            m[0].content,
            "For the question Who wrote Hamlet?, please provide 6 semantically equivalent questions"
        );
    }

    #[test]
    fn cross_language_default_names_english_and_chinese() {
        let m = PromptTemplates::default().check_cross_language_messages("QA", "QB", "en", "zh");
        assert!(m[0]
            .content
            .starts_with("Given the question Q, and two potential answers: answer A in English and answer B in Chinese."));
        assert!(m[0].content.ends_with("\n\nQA\n\nQB"));
    }

    #[test]
    fn repair_fills_four_slots() {
        let m = PromptTemplates::default().repair_messages("X?", "T.", "R0", "E1");
        let c = &m[0].content;
        assert!(c.contains("1. The specific question asked: X?"));
        assert!(c.contains("2. The reasoning process: T."));
        assert!(c.contains("3. The short answer previously given related to the question: R0"));
        assert!(c.contains("4. Evidences that have been retrieved: E1"));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let t = PromptTemplates {
            diversify: "For {question} give {count}".into(),
            ..Default::default()
        };
        assert!(matches!(
            t.validate(),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn escaped_braces_and_values_with_braces() {
        assert_eq!(render("{{x}} {a}", &[("a", "{k}")]), "{x} {k}");
    }

    #[test]
    fn partial_template_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.toml");
        fs::write(&p, "answer = \"Q: {question}\"\n").unwrap();
        let t = PromptTemplates::load(&p).unwrap();
        assert_eq!(t.answer, "Q: {question}");
        assert_eq!(t.repair, PromptTemplates::default().repair);
    }
}
