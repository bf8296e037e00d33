//! Prompt templates, the completion client contract, mock clients, and the
//! retry loop that asks for a valid answer.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::attribution::{parse_citations, split_sentences, Answer, AttributionError};
use crate::corpus::CaseStudy;

pub const MAX_ATTEMPTS: u32 = 5;
pub const DEFAULT_WORD_LIMIT: usize = 75;
pub const DEFAULT_MAX_TOKENS: u32 = 200;
pub const DEFAULT_TEMPERATURE: f64 = 0.001;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionMode {
    #[default]
    PostRetrieval,
    PostGeneration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shots {
    Zero,
    #[default]
    One,
}

impl core::str::FromStr for Shots {
    type Err = GenerationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "0" => Ok(Shots::Zero),
            "one" | "1" => Ok(Shots::One),
            _ => Err(GenerationError::InvalidSpec("shots must be zero or one")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub attribution_mode: AttributionMode,
    pub shots: Shots,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            attribution_mode: AttributionMode::PostRetrieval,
            shots: Shots::One,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(1..=4096).contains(&self.max_tokens) {
            return Err(GenerationError::InvalidSpec("max_tokens must lie in [1, 4096]"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::InvalidSpec("temperature must be non-negative"));
        }
        Ok(())
    }
}

const INSTRUCTIONS: &str = "You are a clinical response generation system responsible for producing answers to health-related questions using the provided clinical note excerpts. Your answer MUST be:
- **Accurate and Factual:** Grounded STRICTLY in the provided clinical note excerpts ONLY.
- **Neutral and Objective:** DO NOT INCLUDE PERSONAL OPINIONS, NOTES, IRRELEVANT, OR UNRELATED comments.
- **Concise and Relevant:** INCLUDE only clinically supported statements using the exact terminology found in the provided clinical notes. Do not add any additional interpretations or synonyms.
- **Third-Person Perspective:** Do not address the reader directly.
";

const CITATION_RULES: &str = "- **Citation:** Each statement must be supported by a NUMBERED CLINICAL NOTE SENTENCE from the Clinical Note Excerpts ONLY. The citation must be placed strictly AT THE END of the sentence. DO NOT insert citations within the sentence or phrase. When citing a single source, cite it as |id|. When a statement is supported by multiple sources, combine their IDs within a single pair of vertical bars (e.g., |id, id, id|) with IDs separated by commas and no extra vertical bars.
- **Mandatory Citation Inclusion:** AT LEAST ONE SENTENCE in your answer MUST include a citation from the provided clinical notes.
";

const INPUTS: &str = "
**Inputs:**
1. **Clinical Note Excerpts:** Retrieved sentences from the patient's clinical record, numbered.
2. **Patient Narrative Context:** Additional context from the patient's perspective.
3. **Clinician Question:** The primary question requiring an answer.

**Your Task:**
Generate a response based strictly on the provided input. Follow the structured format exactly, use only the exact terms from the clinical note excerpts, and ensure all citations are formatted consistently.
";

const EXAMPLE_HEAD: &str = "
**Example:**
If the clinician asks, \"Why did they perform the emergency salvage repair on him?\", and the note states:
1: He was transferred to the hospital on 2025-1-20 for emergent repair of his ruptured thoracoabdominal aortic aneurysm.
2: He was immediately taken to the operating room where he underwent an emergent salvage repair of ruptured thoracoabdominal aortic aneurysm with a 34-mm Dacron tube graft using deep hypothermic circulatory arrest.
Then the response should be:
";

const EXAMPLE_CITED: &str = "His aortic aneurysm was caused by the rupture of a thoracoabdominal aortic aneurysm, which required emergent surgical intervention |1|. He underwent a complex salvage repair using a 34-mm Dacron tube graft and deep hypothermic circulatory arrest to address the rupture |2|.
";

const EXAMPLE_PLAIN: &str = "His aortic aneurysm was caused by the rupture of a thoracoabdominal aortic aneurysm, which required emergent surgical intervention. He underwent a complex salvage repair using a 34-mm Dacron tube graft and deep hypothermic circulatory arrest to address the rupture.
";

const NOTE_BEGIN: &str = "[Clinical Note Begin]";
const NOTE_END: &str = "[Clinical Note End]";
const CITATION_MARKER: &str = "**Citation:**";

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn build_prompt(spec: &PromptSpec, case: &CaseStudy, evidence: &[(u32, &str)]) -> Result<String, GenerationError> {
    if evidence.is_empty() {
        return Err(GenerationError::EmptyEvidence);
    }
    spec.validate()?;
    let cited = spec.attribution_mode == AttributionMode::PostRetrieval;
    let mut p = String::from(INSTRUCTIONS);
    if cited {
        p.push_str(CITATION_RULES);
    }
    p.push_str(INPUTS);
    if spec.shots == Shots::One {
        p.push_str(EXAMPLE_HEAD);
        p.push_str(if cited { EXAMPLE_CITED } else { EXAMPLE_PLAIN });
    }
    p.push('\n');
    p.push_str(NOTE_BEGIN);
    p.push('\n');
    for (id, text) in evidence {
        p.push_str(&alloc::format!("{id}: {}\n", one_line(text)));
    }
    p.push_str(NOTE_END);
    p.push_str("\n\n[Patient Narrative Context Begin]\n");
    p.push_str(case.patient_question.trim());
    p.push_str("\n[Patient Narrative Context End]\n\n[Clinician Question Begin]\n");
    p.push_str(case.clinician_question.trim());
    p.push_str("\n[Clinician Question End]\n\nProvide your structured answer below:\n");
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// `"length"` marks output cut off by the token cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            finish_reason: None,
        }
    }

    pub fn truncated(&self) -> bool {
        self.finish_reason.as_deref() == Some("length")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientError {
    Unreachable(String),
    ScriptExhausted,
    Other(String),
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Unreachable(m) => write!(f, "endpoint unreachable: {m}"),
            ClientError::ScriptExhausted => f.write_str("script exhausted"),
            ClientError::Other(m) => f.write_str(m),
        }
    }
}

impl core::error::Error for ClientError {}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError>;
}

/// Answers by restating every numbered note line of the prompt, cited with
/// its id when the prompt asks for citations.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoClient;

pub fn echo_answer(evidence: &[(u32, &str)], cite: bool) -> String {
    let mut out = Vec::with_capacity(evidence.len());
    for (id, text) in evidence {
        let body = text.trim().trim_end_matches(['.', '!', '?']).trim_end();
        out.push(if cite {
            alloc::format!("{body} |{id}|.")
        } else {
            alloc::format!("{body}.")
        });
    }
    out.join(" ")
}

fn prompt_evidence(prompt: &str) -> Vec<(u32, &str)> {
    let Some(start) = prompt.rfind(NOTE_BEGIN) else {
        return Vec::new();
    };
    let body = &prompt[start + NOTE_BEGIN.len()..];
    let body = &body[..body.find(NOTE_END).unwrap_or(body.len())];
    body.lines()
        .filter_map(|line| {
            let (id, text) = line.split_once(": ")?;
            Some((id.trim().parse().ok()?, text))
        })
        .collect()
}

impl LlmClient for EchoClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        let evidence = prompt_evidence(&request.prompt);
        let cite = request.prompt.contains(CITATION_MARKER);
        Ok(Completion::text(echo_answer(&evidence, cite)))
    }
}

/// Replays a fixed sequence of completions, one per call.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    script: Vec<Result<Completion, ClientError>>,
    next: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::from_results(responses.into_iter().map(|r| Ok(Completion::text(r))))
    }

    pub fn from_results(script: impl IntoIterator<Item = Result<Completion, ClientError>>) -> Self {
        ScriptedClient {
            script: script.into_iter().collect(),
            next: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, _request: &CompletionRequest) -> Result<Completion, ClientError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        self.script.get(i).cloned().unwrap_or(Err(ClientError::ScriptExhausted))
    }
}

pub enum MockMode {
    Echo,
    Scripted(Vec<String>),
}

pub fn mock_client(mode: MockMode) -> Box<dyn LlmClient> {
    match mode {
        MockMode::Echo => Box::new(EchoClient),
        MockMode::Scripted(lines) => Box::new(ScriptedClient::new(lines)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    Valid,
    NoCitation,
    ParseError,
    TooLong,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    pub attempt_number: u32,
    pub raw_output: String,
    pub validity: Validity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generated {
    Cited { answer: Answer },
    Uncited { text: String, sentences: Vec<String> },
}

impl Generated {
    pub fn sentences(&self) -> &[String] {
        match self {
            Generated::Cited { answer } => &answer.sentences,
            Generated::Uncited { sentences, .. } => sentences,
        }
    }

    pub fn text(&self) -> String {
        self.sentences().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub output: Generated,
    pub attempts: Vec<GenerationAttempt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub model: String,
    pub word_limit: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: String::from("mock"),
            word_limit: DEFAULT_WORD_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenerationError {
    EmptyEvidence,
    InvalidSpec(&'static str),
    Unreachable {
        message: String,
        attempts: Vec<GenerationAttempt>,
    },
    Client {
        error: ClientError,
        attempts: Vec<GenerationAttempt>,
    },
    Exhausted {
        attempts: Vec<GenerationAttempt>,
    },
}

impl GenerationError {
    pub fn attempts(&self) -> &[GenerationAttempt] {
        match self {
            GenerationError::Unreachable { attempts, .. }
            | GenerationError::Client { attempts, .. }
            | GenerationError::Exhausted { attempts } => attempts,
            _ => &[],
        }
    }
}

impl fmt::Display for GenerationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerationError::EmptyEvidence => f.write_str("no evidence sentences to prompt with"),
            GenerationError::InvalidSpec(m) => f.write_str(m),
            GenerationError::Unreachable { message, .. } => write!(f, "endpoint unreachable: {message}"),
            GenerationError::Client { error, attempts } => {
                write!(f, "client error after {} attempt(s): {error}", attempts.len())
            }
            GenerationError::Exhausted { attempts } => {
                write!(f, "no valid output after {} attempts", attempts.len())
            }
        }
    }
}

impl core::error::Error for GenerationError {}

fn judge(
    completion: &Completion,
    mode: AttributionMode,
    valid_ids: &BTreeSet<u32>,
    word_limit: usize,
) -> Result<Generated, (Validity, String)> {
    let raw = completion.text.as_str();
    if completion.truncated() {
        return Err((Validity::TooLong, "output hit the token cap".into()));
    }
    let too_long = |words: usize| (Validity::TooLong, alloc::format!("{words} words exceeds {word_limit}"));
    match mode {
        AttributionMode::PostRetrieval => match parse_citations(raw, valid_ids) {
            Ok(answer) => {
                let words = answer.word_count();
                if words > word_limit {
                    return Err(too_long(words));
                }
                Ok(Generated::Cited { answer })
            }
            Err(AttributionError::NoValidAttribution) => {
                if raw.trim().is_empty() {
                    Err((Validity::Empty, "empty output".into()))
                } else {
                    Err((Validity::NoCitation, "no valid attribution".into()))
                }
            }
            Err(e) => Err((Validity::ParseError, alloc::format!("{e}"))),
        },
        AttributionMode::PostGeneration => {
            let text = raw.trim();
            if text.is_empty() {
                return Err((Validity::Empty, "empty output".into()));
            }
            let words = text.split_whitespace().count();
            if words > word_limit {
                return Err(too_long(words));
            }
            // blocks in uncited output are stripped by the splitter;
            // malformed ones leave the text whole
            let sentences = split_sentences(text).unwrap_or_else(|_| alloc::vec![String::from(text)]);
            Ok(Generated::Uncited {
                text: String::from(text),
                sentences,
            })
        }
    }
}

/// Prompts until the output is valid, at most [`MAX_ATTEMPTS`] times.
/// Transport failures end the loop at once.
pub fn generate_valid(
    client: &dyn LlmClient,
    spec: &PromptSpec,
    config: &GenerationConfig,
    case: &CaseStudy,
    evidence: &[(u32, &str)],
) -> Result<GenerationOutcome, GenerationError> {
    let prompt = build_prompt(spec, case, evidence)?;
    let request = CompletionRequest {
        model: config.model.clone(),
        prompt,
        max_tokens: spec.max_tokens,
        temperature: spec.temperature,
    };
    let valid_ids: BTreeSet<u32> = evidence.iter().map(|(id, _)| *id).collect();
    let mut attempts = Vec::new();
    for attempt_number in 1..=MAX_ATTEMPTS {
        let completion = match client.complete(&request) {
            Ok(c) => c,
            Err(ClientError::Unreachable(message)) => return Err(GenerationError::Unreachable { message, attempts }),
            Err(error) => return Err(GenerationError::Client { error, attempts }),
        };
        let verdict = judge(&completion, spec.attribution_mode, &valid_ids, config.word_limit);
        let (validity, detail) = match &verdict {
            Ok(_) => (Validity::Valid, None),
            Err((v, d)) => (*v, Some(d.clone())),
        };
        attempts.push(GenerationAttempt {
            attempt_number,
            raw_output: completion.text,
            validity,
            detail,
        });
        if let Ok(output) = verdict {
            return Ok(GenerationOutcome { output, attempts });
        }
    }
    Err(GenerationError::Exhausted { attempts })
}
