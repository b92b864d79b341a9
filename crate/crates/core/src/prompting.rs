//! Byte-stable prompt rendering from external template assets.
//!
//! Templates are plain-text files with `{name}` placeholders. The builtin
//! set is compiled in from `templates/`; [`TemplateSet::from_dir`] overlays
//! edited copies at runtime so prompts can be iterated without a rebuild.
//! Rendering is a pure function of the template set and its inputs: the
//! same inputs always produce the same bytes, and context records are
//! inserted verbatim, exactly once.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::structured::{parse_structured, StructuredError};
use crate::util::fnv1a64;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("context is empty")]
    EmptyContext,
    #[error("structured prompt requires at least one few-shot example")]
    MissingShots,
    #[error("vocabulary list `{0}` is empty")]
    MissingVocab(String),
    #[error("vocabulary list `{0}` contains duplicate term `{1}`")]
    DuplicateVocabTerm(String, String),
    #[error("template references unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("spec template `{got}` does not match renderer `{expected}`")]
    WrongTemplate {
        expected: TemplateId,
        got: TemplateId,
    },
    #[error("invalid few-shot impression: {0}")]
    BadShot(#[from] StructuredError),
}

/// Whether a prompt renders as one completion text or a system/user pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Completion,
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ZeroShot,
    StructuredFewShot,
    Refine,
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TemplateId::ZeroShot => f.write_str("zero_shot"),
            TemplateId::StructuredFewShot => f.write_str("structured_few_shot"),
            TemplateId::Refine => f.write_str("refine"),
        }
    }
}

/// What to render: mode, instruction lines, and the word limit.
///
/// Instruction strings may use `{maxlen}`, substituted with the decimal
/// word limit when the block is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub instructions: Vec<String>,
    pub maxlen: usize,
    pub template_id: TemplateId,
}

pub const DEFAULT_MAXLEN: usize = 50;

const ZERO_SHOT_COMPLETION_INSTRUCTIONS: &[&str] = &[
    "Impression summary should be based on the information in the context.",
    "Limit the generation to {maxlen} words.",
];

const ZERO_SHOT_CHAT_INSTRUCTIONS: &[&str] = &[
    "Impression should be based on the information that the user will send in the context.",
    "The impression should not mention anything about follow-up actions.",
    "Impression should not contain any mentions of prior or previous studies.",
    "Limit the generation to {maxlen} words.",
];

const REFINE_COMPLETION_INSTRUCTIONS: &[&str] = &[
    "Refine the existing impression summary so it also covers the information in the context.",
    "Impression summary should be based on the information in the existing impression and the context.",
    "Limit the generation to {maxlen} words.",
];

const REFINE_CHAT_INSTRUCTIONS: &[&str] = &[
    "Impression should be based on the information in the existing impression and in the context that the user will send.",
    "The impression should not mention anything about follow-up actions.",
    "Impression should not contain any mentions of prior or previous studies.",
    "Limit the generation to {maxlen} words.",
];

impl PromptSpec {
    /// Zero-shot spec with the default instruction set for the mode.
    pub fn zero_shot(mode: PromptMode) -> Self {
        let instructions = match mode {
            PromptMode::Completion => ZERO_SHOT_COMPLETION_INSTRUCTIONS,
            PromptMode::Chat => ZERO_SHOT_CHAT_INSTRUCTIONS,
        };
        PromptSpec {
            mode,
            instructions: instructions.iter().map(|s| s.to_string()).collect(),
            maxlen: DEFAULT_MAXLEN,
            template_id: TemplateId::ZeroShot,
        }
    }

    /// Structured few-shot spec. The vocabulary header plays the role of
    /// instructions, so the list is empty.
    pub fn structured(mode: PromptMode) -> Self {
        PromptSpec {
            mode,
            instructions: Vec::new(),
            maxlen: DEFAULT_MAXLEN,
            template_id: TemplateId::StructuredFewShot,
        }
    }

    /// Refine-step spec with the default instruction set for the mode.
    pub fn refine(mode: PromptMode) -> Self {
        let instructions = match mode {
            PromptMode::Completion => REFINE_COMPLETION_INSTRUCTIONS,
            PromptMode::Chat => REFINE_CHAT_INSTRUCTIONS,
        };
        PromptSpec {
            mode,
            instructions: instructions.iter().map(|s| s.to_string()).collect(),
            maxlen: DEFAULT_MAXLEN,
            template_id: TemplateId::Refine,
        }
    }

    pub fn with_maxlen(mut self, maxlen: usize) -> Self {
        self.maxlen = maxlen.max(1);
        self
    }

    pub fn with_instructions(mut self, instructions: Vec<String>) -> Self {
        self.instructions = instructions;
        self
    }
}

/// A fully materialized prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RenderedPrompt {
    Completion { text: String },
    Chat { system: String, user: String },
}

impl RenderedPrompt {
    /// The text a completion endpoint receives, or the user message in chat
    /// mode. Context always lives here.
    pub fn primary_text(&self) -> &str {
        match self {
            RenderedPrompt::Completion { text } => text,
            RenderedPrompt::Chat { user, .. } => user,
        }
    }

    /// All prompt text, for token budgeting.
    pub fn full_text(&self) -> String {
        match self {
            RenderedPrompt::Completion { text } => text.clone(),
            RenderedPrompt::Chat { system, user } => format!("{system}\n{user}"),
        }
    }
}

/// One worked example for the structured few-shot prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub context: String,
    pub impression_json: String,
}

impl FewShotExample {
    /// Validates that `impression_json` parses as a structured impression
    /// under `vocab` before accepting the example.
    pub fn new(
        context: impl Into<String>,
        impression_json: impl Into<String>,
        vocab: &VocabLists,
    ) -> Result<Self, PromptError> {
        let impression_json = impression_json.into();
        parse_structured(&impression_json, vocab)?;
        Ok(FewShotExample {
            context: context.into(),
            impression_json,
        })
    }
}

/// Term lists the structured prompt binds each attribute to.
///
/// Terms are lowercased on construction; duplicates are rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabLists {
    pub pathology: Vec<String>,
    pub positional: Vec<String>,
    pub severity: Vec<String>,
    pub size: Vec<String>,
}

impl VocabLists {
    pub fn new(
        pathology: Vec<String>,
        positional: Vec<String>,
        severity: Vec<String>,
        size: Vec<String>,
    ) -> Result<Self, PromptError> {
        fn prep(name: &str, list: Vec<String>) -> Result<Vec<String>, PromptError> {
            if list.is_empty() {
                return Err(PromptError::MissingVocab(name.to_string()));
            }
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(list.len());
            for term in list {
                let term = term.trim().to_lowercase();
                if term.is_empty() {
                    return Err(PromptError::MissingVocab(name.to_string()));
                }
                if !seen.insert(term.clone()) {
                    return Err(PromptError::DuplicateVocabTerm(name.to_string(), term));
                }
                out.push(term);
            }
            Ok(out)
        }
        Ok(VocabLists {
            pathology: prep("pathology", pathology)?,
            positional: prep("positional", positional)?,
            severity: prep("severity", severity)?,
            size: prep("size", size)?,
        })
    }

    /// Loads lists from a JSON object with keys `pathology`, `positional`,
    /// `severity`, `size`, each an array of terms.
    pub fn from_json(json: &str) -> Result<Self, PromptError> {
        #[derive(Deserialize)]
        struct Raw {
            pathology: Vec<String>,
            positional: Vec<String>,
            severity: Vec<String>,
            size: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(json)
            .map_err(|_| PromptError::MissingVocab("vocab file".to_string()))?;
        VocabLists::new(raw.pathology, raw.positional, raw.severity, raw.size)
    }
}

const TEMPLATE_NAMES: &[&str] = &[
    "zero_shot_completion",
    "zero_shot_chat_system",
    "zero_shot_chat_user",
    "structured_few_shot",
    "structured_chat_system",
    "structured_chat_user",
    "refine_completion",
    "refine_chat_system",
    "refine_chat_user",
];

/// The nine template assets a renderer needs, resolved to strings.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    zero_shot_completion: String,
    zero_shot_chat_system: String,
    zero_shot_chat_user: String,
    structured_few_shot: String,
    structured_chat_system: String,
    structured_chat_user: String,
    refine_completion: String,
    refine_chat_system: String,
    refine_chat_user: String,
}

impl TemplateSet {
    /// The compiled-in copies of the asset files.
    pub fn builtin() -> Self {
        TemplateSet {
            zero_shot_completion: include_str!("../templates/zero_shot_completion.txt").into(),
            zero_shot_chat_system: include_str!("../templates/zero_shot_chat_system.txt").into(),
            zero_shot_chat_user: include_str!("../templates/zero_shot_chat_user.txt").into(),
            structured_few_shot: include_str!("../templates/structured_few_shot.txt").into(),
            structured_chat_system: include_str!("../templates/structured_chat_system.txt").into(),
            structured_chat_user: include_str!("../templates/structured_chat_user.txt").into(),
            refine_completion: include_str!("../templates/refine_completion.txt").into(),
            refine_chat_system: include_str!("../templates/refine_chat_system.txt").into(),
            refine_chat_user: include_str!("../templates/refine_chat_user.txt").into(),
        }
    }

    /// Loads `<name>.txt` files from a directory, falling back to the
    /// builtin copy for any file that is absent.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = TemplateSet::builtin();
        for &name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *set.slot_mut(name) = std::fs::read_to_string(&path)?;
            }
        }
        Ok(set)
    }

    fn slot_mut(&mut self, name: &str) -> &mut String {
        match name {
            "zero_shot_completion" => &mut self.zero_shot_completion,
            "zero_shot_chat_system" => &mut self.zero_shot_chat_system,
            "zero_shot_chat_user" => &mut self.zero_shot_chat_user,
            "structured_few_shot" => &mut self.structured_few_shot,
            "structured_chat_system" => &mut self.structured_chat_system,
            "structured_chat_user" => &mut self.structured_chat_user,
            "refine_completion" => &mut self.refine_completion,
            "refine_chat_system" => &mut self.refine_chat_system,
            "refine_chat_user" => &mut self.refine_chat_user,
            _ => unreachable!("template name list is fixed"),
        }
    }

    /// Stable fingerprint of all template contents, recorded in run
    /// manifests so outputs can be traced to the prompt wording.
    pub fn version(&self) -> String {
        let mut all = String::new();
        for part in [
            &self.zero_shot_completion,
            &self.zero_shot_chat_system,
            &self.zero_shot_chat_user,
            &self.structured_few_shot,
            &self.structured_chat_system,
            &self.structured_chat_user,
            &self.refine_completion,
            &self.refine_chat_system,
            &self.refine_chat_user,
        ] {
            all.push_str(part);
            all.push('\u{0}');
        }
        format!("{:016x}", fnv1a64(all.as_bytes()))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

/// Replaces `{name}` placeholders in one pass. Substituted values are never
/// rescanned, so braces inside context text pass through untouched. A
/// placeholder not present in `vars` is an error; braces that do not form a
/// `{lowercase_ident}` are literal.
fn render_template(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            let name = &after[..ident_len];
            match vars.iter().find(|(k, _)| *k == name) {
                Some((_, value)) => out.push_str(value),
                None => return Err(PromptError::UnknownPlaceholder(name.to_string())),
            }
            rest = &after[ident_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Builds the `- ...` instruction block, substituting `{maxlen}`.
fn instruction_block(spec: &PromptSpec) -> Result<String, PromptError> {
    let maxlen = spec.maxlen.to_string();
    let lines: Result<Vec<String>, PromptError> = spec
        .instructions
        .iter()
        .map(|line| {
            Ok(format!(
                "- {}",
                render_template(line, &[("maxlen", &maxlen)])?
            ))
        })
        .collect();
    Ok(lines?.join("\n"))
}

fn join_context(context: &[&str]) -> String {
    context.join("\n")
}

fn expect_template(spec: &PromptSpec, expected: TemplateId) -> Result<(), PromptError> {
    if spec.template_id != expected {
        return Err(PromptError::WrongTemplate {
            expected,
            got: spec.template_id,
        });
    }
    Ok(())
}

/// Renders the zero-shot prompt over the retrieved context records.
/// Records join with single newlines and appear verbatim.
pub fn render_zero_shot(
    templates: &TemplateSet,
    context: &[&str],
    spec: &PromptSpec,
) -> Result<RenderedPrompt, PromptError> {
    expect_template(spec, TemplateId::ZeroShot)?;
    if context.is_empty() || context.iter().all(|c| c.trim().is_empty()) {
        return Err(PromptError::EmptyContext);
    }
    let instructions = instruction_block(spec)?;
    let context = join_context(context);
    match spec.mode {
        PromptMode::Completion => Ok(RenderedPrompt::Completion {
            text: render_template(
                &templates.zero_shot_completion,
                &[("instructions", &instructions), ("context", &context)],
            )?,
        }),
        PromptMode::Chat => Ok(RenderedPrompt::Chat {
            system: render_template(
                &templates.zero_shot_chat_system,
                &[("instructions", &instructions)],
            )?,
            user: render_template(&templates.zero_shot_chat_user, &[("context", &context)])?,
        }),
    }
}

/// Renders the structured few-shot prompt: vocabulary bindings, then the
/// worked examples as CONTEXT/IMPRESSION blocks, then the query context and
/// a trailing IMPRESSION cue.
pub fn render_structured(
    templates: &TemplateSet,
    context: &[&str],
    vocab: &VocabLists,
    shots: &[FewShotExample],
    spec: &PromptSpec,
) -> Result<RenderedPrompt, PromptError> {
    expect_template(spec, TemplateId::StructuredFewShot)?;
    if context.is_empty() || context.iter().all(|c| c.trim().is_empty()) {
        return Err(PromptError::EmptyContext);
    }
    if shots.is_empty() {
        return Err(PromptError::MissingShots);
    }
    let mut shot_block = String::new();
    for shot in shots {
        shot_block.push_str("CONTEXT: ");
        shot_block.push_str(&shot.context);
        shot_block.push_str("\nIMPRESSION: ");
        shot_block.push_str(&shot.impression_json);
        shot_block.push('\n');
    }
    let context = join_context(context);
    let vars: Vec<(&str, String)> = vec![
        ("pathology", vocab.pathology.join(", ")),
        ("positional_words", vocab.positional.join(", ")),
        ("severity_words", vocab.severity.join(", ")),
        ("size_words", vocab.size.join(", ")),
        ("shots", shot_block),
        ("context", context),
    ];
    let vars: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
    match spec.mode {
        PromptMode::Completion => Ok(RenderedPrompt::Completion {
            text: render_template(&templates.structured_few_shot, &vars)?,
        }),
        PromptMode::Chat => Ok(RenderedPrompt::Chat {
            system: render_template(&templates.structured_chat_system, &vars[..4])?,
            user: render_template(&templates.structured_chat_user, &vars[4..])?,
        }),
    }
}

/// Renders one refine step: the previous impression plus one new context
/// record, each verbatim exactly once.
pub fn render_refine(
    templates: &TemplateSet,
    prev_impression: &str,
    next_record: &str,
    spec: &PromptSpec,
) -> Result<RenderedPrompt, PromptError> {
    expect_template(spec, TemplateId::Refine)?;
    if prev_impression.trim().is_empty() || next_record.trim().is_empty() {
        return Err(PromptError::EmptyContext);
    }
    let instructions = instruction_block(spec)?;
    match spec.mode {
        PromptMode::Completion => Ok(RenderedPrompt::Completion {
            text: render_template(
                &templates.refine_completion,
                &[
                    ("instructions", &instructions),
                    ("impression", prev_impression),
                    ("context", next_record),
                ],
            )?,
        }),
        PromptMode::Chat => Ok(RenderedPrompt::Chat {
            system: render_template(
                &templates.refine_chat_system,
                &[("instructions", &instructions)],
            )?,
            user: render_template(
                &templates.refine_chat_user,
                &[("impression", prev_impression), ("context", next_record)],
            )?,
        }),
    }
}
