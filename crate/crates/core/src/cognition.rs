//! Per-tick agent reasoning: prompt assembly, response parsing and the
//! deterministic mock reasoner.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dynamics::{clip_unit, derive_stance, Stance};
use crate::memory::{fnv1a, Emotion};
use crate::profiles::{AgentProfile, Group};
use crate::text::truncate_words;

pub const MESSAGE_WORD_LIMIT: usize = 120;
pub const DEFAULT_PROMPT_BUDGET: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    PositivelyLinked,
    InTension,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    SubtopicActivation,
    BeliefReweighting,
    ConfidenceChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefReport {
    pub stance: Stance,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefRelation {
    pub source: String,
    pub target: String,
    pub relation: RelationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefChange {
    #[serde(rename = "type")]
    pub kind: ChangeKind,
    pub target: String,
    pub old_score: Option<f64>,
    pub new_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub message: String,
    pub active_subtopics: Vec<String>,
    pub emergent_subtopics: Vec<String>,
    pub belief_state: BTreeMap<String, BeliefReport>,
    pub belief_composition: BTreeMap<String, BTreeMap<String, f64>>,
    pub belief_relations: Vec<BeliefRelation>,
    pub belief_changes: Vec<BeliefChange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in response")]
    NoObject,
    #[error("required field `{0}` is absent")]
    Missing(&'static str),
    #[error("field `{field}`: {message}")]
    Schema { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub response: AgentResponse,
    pub warnings: Vec<String>,
}

/// Byte ranges of balanced top-level `{...}` candidates, in order.
fn object_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let (mut depth, mut in_str, mut esc) = (0usize, false, false);
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if esc => esc = false,
                    b'\\' => esc = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                spans.push((open, e));
                start = e;
            }
            None => start = open + 1,
        }
    }
    spans
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> ParseError {
    ParseError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

fn string_list(v: Option<&Value>, field: &str) -> Result<Vec<String>, ParseError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| schema(field, "expected strings")))
            .collect(),
        Some(_) => Err(schema(field, "expected a list")),
    }
}

fn number(v: &Value, field: &str) -> Result<f64, ParseError> {
    v.as_f64().ok_or_else(|| schema(field, "expected a number"))
}

fn opt_number(v: Option<&Value>, field: &str) -> Result<Option<f64>, ParseError> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(x) => number(x, field).map(Some),
    }
}

fn enum_field<T: serde::de::DeserializeOwned>(v: Option<&Value>, field: &str) -> Result<T, ParseError> {
    let v = v.ok_or_else(|| schema(field, "missing"))?;
    serde_json::from_value(v.clone()).map_err(|_| schema(field, format!("unexpected value {v}")))
}

/// Parses the first well-formed object in `text` and validates it.
pub fn parse_response(text: &str) -> Result<ParsedResponse, ParseError> {
    let value = object_spans(text)
        .into_iter()
        .find_map(|(a, b)| serde_json::from_str::<Value>(&text[a..b]).ok())
        .ok_or(ParseError::NoObject)?;
    let obj = value.as_object().ok_or(ParseError::NoObject)?;
    let mut warnings = Vec::new();
    fn clip(warnings: &mut Vec<String>, field: String, x: f64) -> f64 {
        let c = clip_unit(x);
        if c != x {
            warnings.push(format!("{field}: {x} clipped to {c}"));
        }
        c
    }

    let message = obj
        .get("message")
        .ok_or(ParseError::Missing("message"))?
        .as_str()
        .ok_or_else(|| schema("message", "expected a string"))?;
    let message = truncate_words(message, MESSAGE_WORD_LIMIT);

    let states = obj
        .get("belief_state")
        .ok_or(ParseError::Missing("belief_state"))?
        .as_object()
        .ok_or_else(|| schema("belief_state", "expected an object"))?;
    let mut belief_state = BTreeMap::new();
    for (topic, v) in states {
        let field = format!("belief_state.{topic}");
        let score = number(v.get("score").ok_or_else(|| schema(&field, "missing score"))?, &field)?;
        let stance = v
            .get("stance")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(&field, "missing stance"))?;
        let stance = match stance {
            "Supportive" | "Neutral" | "Opposing" => Stance::parse(stance).expect("known label"),
            other => return Err(schema(&field, format!("unknown stance `{other}`"))),
        };
        belief_state.insert(
            topic.clone(),
            BeliefReport {
                stance,
                score: clip(&mut warnings, format!("{field}.score"), score),
            },
        );
    }

    let mut belief_composition = BTreeMap::new();
    if let Some(c) = obj.get("belief_composition").filter(|v| !v.is_null()) {
        let c = c.as_object().ok_or_else(|| schema("belief_composition", "expected an object"))?;
        for (topic, subs) in c {
            let field = format!("belief_composition.{topic}");
            let subs = subs.as_object().ok_or_else(|| schema(&field, "expected an object"))?;
            let mut m = BTreeMap::new();
            for (s, w) in subs {
                let w = number(w, &field)?;
                let c = w.clamp(0.0, 1.0);
                if c != w {
                    warnings.push(format!("{field}.{s}: {w} clipped to {c}"));
                }
                m.insert(s.clone(), c);
            }
            belief_composition.insert(topic.clone(), m);
        }
    }

    let mut belief_relations = Vec::new();
    if let Some(Value::Array(rels)) = obj.get("belief_relations") {
        for (i, r) in rels.iter().enumerate() {
            let field = format!("belief_relations[{i}]");
            let s = |k: &str| {
                r.get(k)
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| schema(&field, format!("missing {k}")))
            };
            belief_relations.push(BeliefRelation {
                source: s("source")?,
                target: s("target")?,
                relation: enum_field(r.get("relation"), &format!("{field}.relation"))?,
            });
        }
    } else if obj.get("belief_relations").is_some_and(|v| !v.is_null()) {
        return Err(schema("belief_relations", "expected a list"));
    }

    let mut belief_changes = Vec::new();
    if let Some(Value::Array(chs)) = obj.get("belief_changes") {
        for (i, c) in chs.iter().enumerate() {
            let field = format!("belief_changes[{i}]");
            let target = c
                .get("target")
                .and_then(Value::as_str)
                .ok_or_else(|| schema(&field, "missing target"))?;
            let old = opt_number(c.get("old_score"), &field)?.map(|x| clip(&mut warnings, format!("{field}.old_score"), x));
            let new = opt_number(c.get("new_score"), &field)?.map(|x| clip(&mut warnings, format!("{field}.new_score"), x));
            belief_changes.push(BeliefChange {
                kind: enum_field(c.get("type"), &format!("{field}.type"))?,
                target: target.to_string(),
                old_score: old,
                new_score: new,
            });
        }
    } else if obj.get("belief_changes").is_some_and(|v| !v.is_null()) {
        return Err(schema("belief_changes", "expected a list"));
    }

    let emotion = match obj.get("emotion") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let s = v.as_str().ok_or_else(|| schema("emotion", "expected a string"))?;
            Some(Emotion::parse(s).ok_or_else(|| schema("emotion", format!("unknown emotion `{s}`")))?)
        }
    };

    Ok(ParsedResponse {
        response: AgentResponse {
            message,
            active_subtopics: string_list(obj.get("active_subtopics"), "active_subtopics")?,
            emergent_subtopics: string_list(obj.get("emergent_subtopics"), "emergent_subtopics")?,
            belief_state,
            belief_composition,
            belief_relations,
            belief_changes,
            emotion,
        },
        warnings,
    })
}

/// An event as seen by one agent in one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventContext {
    pub id: String,
    pub topic: Option<String>,
    pub description: String,
    pub shock: f64,
}

pub fn group_goal(group: Group) -> &'static str {
    match group {
        Group::Citizen => "Weigh how the issue affects you personally.",
        Group::Government => "Analyse the policy strategically and anticipate its consequences.",
        Group::Business => "Prioritise the economic implications.",
        Group::Education => "Ground your arguments in evidence and research.",
    }
}

pub fn personality_desc(profile: &AgentProfile) -> String {
    let o = profile.ocean;
    format!(
        "openness {:.2}, conscientiousness {:.2}, extraversion {:.2}, agreeableness {:.2}, neuroticism {:.2}",
        o.openness, o.conscientiousness, o.extraversion, o.agreeableness, o.neuroticism
    )
}

pub struct PromptInput<'a> {
    pub profile: &'a AgentProfile,
    pub tick: u32,
    pub beliefs: &'a BTreeMap<String, f64>,
    pub subtopic_priors: &'a BTreeMap<String, BTreeMap<String, f64>>,
    /// Oldest first.
    pub memories: &'a [String],
    pub events: &'a [EventContext],
    pub emotion: Emotion,
}

fn render(input: &PromptInput<'_>, memories: &[String]) -> String {
    let p = input.profile;
    let mut s = String::new();
    s.push_str(
        "You are a bounded agent in a social simulation. Respond as your character\n\
         with distinct opinions shaped by your unique background, rationale, and\n\
         rhetorical style.\n\n",
    );
    s.push_str("=== AGENT PROFILE ===\n");
    let _ = writeln!(s, "- Role: {}", p.role);
    let _ = writeln!(s, "- Group: {}", p.group);
    let _ = writeln!(s, "- Personality: {}", personality_desc(p));
    let _ = writeln!(s, "- Style: {}", p.rhetorical_style);
    let _ = writeln!(s, "- Goals: {}\n", group_goal(p.group));
    s.push_str("=== CURRENT BELIEFS (Macro Stances) ===\n");
    for (t, b) in input.beliefs {
        let _ = writeln!(s, "- {t}: {} ({b:+.3})", derive_stance(*b));
    }
    s.push_str("Each macro belief is an independent dimension. You may support one and\noppose another.\n\n");
    s.push_str("=== TOPIC PRIORS (Micro Subtopics) ===\n");
    for (t, subs) in input.subtopic_priors {
        let list = subs.iter().map(|(k, w)| format!("{k}={w:.2}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "- {t}: {list}");
    }
    s.push_str("These represent the specific sub-issues you care about and how strongly\nthey influence your macro beliefs.\n\n");
    s.push_str("=== RELEVANT MEMORY ===\n");
    for m in memories {
        let _ = writeln!(s, "- {m}");
    }
    s.push_str("(Refer to memories only if they are directly relevant to the event.)\n\n");
    let _ = writeln!(s, "=== INCOMING EVENT === [tick {}]", input.tick);
    if input.events.is_empty() {
        s.push_str("(no new event this tick)\n");
    }
    for e in input.events {
        let topic = e.topic.as_deref().unwrap_or("general");
        let _ = writeln!(s, "- [{}] {} (topic: {topic})", e.id, e.description);
    }
    let _ = writeln!(s, "\n=== EMOTIONAL STATE ===\n{}\n", input.emotion);
    s.push_str("=== CRITICAL RULES ===\n");
    s.push_str(
        "1. DECOUPLED BELIEFS: Your beliefs are independent. Do NOT treat them as a\n   single axis.\n\
         2. TOPIC ACTIVATION: The event should activate specific micro subtopics, not\n   just the macro belief. Update your macro belief based on which subtopics\n   are triggered.\n",
    );
    let _ = writeln!(
        s,
        "3. RATIONALE SPECIFICITY: Your core rationale is \"{}\".\n   Ground your argument in this specific reason, not generic talking points.",
        p.rationale_cluster
    );
    let _ = writeln!(
        s,
        "4. RHETORICAL STYLE: Use \"{}\" framing throughout your\n   response. Let your current emotional state drive your tone.",
        p.rhetorical_style
    );
    s.push_str(
        "5. LANGUAGE DIVERSITY: Do NOT use generic phrases. Write in a voice that is\n   distinctly yours.\n\n",
    );
    s.push_str(OUTPUT_FORMAT);
    s
}

const OUTPUT_FORMAT: &str = r#"=== OUTPUT FORMAT (STRICT JSON) ===
You MUST output your response in valid JSON format exactly matching the
structure below. Do NOT output any text outside of the JSON object.

{
  "message": "Your response to the event. Keep under 120 words.",
  "active_subtopics": ["..."],
  "emergent_subtopics": ["..."],
  "belief_state": {"topic_key": {"stance": "Supportive|Neutral|Opposing", "score": 0.0}},
  "belief_composition": {"topic_key": {"subtopic": 0.0}},
  "belief_relations": [{"source": "a", "target": "b", "relation": "positively_linked|in_tension|independent"}],
  "belief_changes": [{"type": "subtopic_activation|belief_reweighting|confidence_change", "target": "key", "old_score": null, "new_score": null}],
  "emotion": "joy|fear|anger|sadness|disgust|surprise|neutral"
}
"#;

/// Fills the template, dropping the oldest memories until the prompt fits in
/// `budget` bytes. If even the memory-free prompt is too long it is cut at a
/// character boundary.
pub fn assemble_prompt(input: &PromptInput<'_>, budget: usize) -> String {
    let mut skip = 0;
    loop {
        let text = render(input, &input.memories[skip..]);
        if text.len() <= budget {
            return text;
        }
        if skip == input.memories.len() {
            let mut cut = budget;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            return text[..cut].to_string();
        }
        skip += 1;
    }
}

pub struct ReasoningRequest<'a> {
    pub prompt: &'a str,
    pub profile: &'a AgentProfile,
    pub tick: u32,
    pub beliefs: &'a BTreeMap<String, f64>,
    pub events: &'a [EventContext],
    pub memories: &'a [String],
    pub emotion: Emotion,
    pub seed: u64,
}

/// Produces raw response text for one agent-tick. Implementations must not
/// share mutable state across calls.
pub trait ReasoningProvider: Send + Sync {
    fn name(&self) -> &str;
    fn deterministic(&self) -> bool;
    fn reason(&self, req: &ReasoningRequest<'_>) -> Result<String, String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockReasoner;

/// 1 when the shock points the same way as a non-neutral belief, 0.5 for a
/// neutral belief, 0.25 when it points against.
pub fn alignment(belief: f64, shock: f64) -> f64 {
    match derive_stance(belief) {
        Stance::Neutral => 0.5,
        Stance::Supportive if shock >= 0.0 => 1.0,
        Stance::Opposing if shock <= 0.0 => 1.0,
        _ => 0.25,
    }
}

pub fn susceptibility(profile: &AgentProfile) -> f64 {
    0.25 + 0.5 * profile.ocean.openness
}

pub fn mock_emotion(group: Group, shock: f64, current: Emotion) -> Emotion {
    if shock <= -0.3 {
        match group {
            Group::Citizen | Group::Education => Emotion::Fear,
            Group::Government | Group::Business => Emotion::Anger,
        }
    } else if shock >= 0.3 {
        Emotion::Joy
    } else {
        current
    }
}

fn rng_for(seed: u64, id: &str, tick: u32) -> ChaCha8Rng {
    let mut key = id.as_bytes().to_vec();
    key.extend_from_slice(&tick.to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a(seed, &key))
}

const OPENERS: &[&str] = &["Look,", "Honestly,", "Let me be clear:", "From where I stand,", "Frankly,"];

fn stance_phrase(stance: Stance) -> &'static str {
    match stance {
        Stance::Supportive => "I back this",
        Stance::Neutral => "I am still weighing this",
        Stance::Opposing => "I push back on this",
    }
}

fn emotion_phrase(e: Emotion) -> &'static str {
    match e {
        Emotion::Joy => "and it gives me real hope",
        Emotion::Fear => "and it worries me deeply",
        Emotion::Anger => "and it makes me angry",
        Emotion::Sadness => "and it leaves me discouraged",
        Emotion::Disgust => "and I find it distasteful",
        Emotion::Surprise => "and it caught me off guard",
        Emotion::Neutral => "and I will keep watching",
    }
}

impl MockReasoner {
    pub fn respond(&self, req: &ReasoningRequest<'_>) -> AgentResponse {
        let p = req.profile;
        let k = susceptibility(p);
        let mut deltas: BTreeMap<&str, f64> = BTreeMap::new();
        let mut strongest = 0.0f64;
        let mut active = Vec::new();
        let mut emergent = Vec::new();
        for e in req.events {
            if e.shock.abs() > strongest.abs() {
                strongest = e.shock;
            }
            let topics: Vec<&str> = match &e.topic {
                Some(t) => req.beliefs.keys().map(String::as_str).filter(|k| *k == t).collect(),
                None => req.beliefs.keys().map(String::as_str).collect(),
            };
            for t in topics {
                let d = e.shock * alignment(req.beliefs[t], e.shock) * k;
                *deltas.entry(t).or_default() += d;
                if e.shock != 0.0 {
                    let tag = format!("{t}::{}", p.rationale_cluster);
                    if !active.contains(&tag) {
                        active.push(tag.clone());
                    }
                    if p.ocean.openness > 0.65 && !emergent.contains(&tag) {
                        emergent.push(tag);
                    }
                }
            }
        }
        let emotion = mock_emotion(p.group, strongest, req.emotion);
        let mut belief_state = BTreeMap::new();
        let mut belief_changes = Vec::new();
        for (t, b) in req.beliefs {
            let d = deltas.get(t.as_str()).copied().unwrap_or(0.0);
            let score = clip_unit(b + d);
            belief_state.insert(
                t.clone(),
                BeliefReport {
                    stance: derive_stance(score),
                    score,
                },
            );
            if score != *b {
                belief_changes.push(BeliefChange {
                    kind: ChangeKind::BeliefReweighting,
                    target: t.clone(),
                    old_score: Some(*b),
                    new_score: Some(score),
                });
            }
        }
        let main_topic = req
            .events
            .iter()
            .find_map(|e| e.topic.as_deref())
            .or_else(|| req.beliefs.keys().next().map(String::as_str))
            .unwrap_or("the issue");
        let stance = derive_stance(belief_state.get(main_topic).map(|b| b.score).unwrap_or(0.0));
        let mut rng = rng_for(req.seed, &p.id, req.tick);
        let opener = OPENERS.choose(&mut rng).copied().unwrap_or("Look,");
        let message = truncate_words(
            &format!(
                "{opener} as a {} in the {} group, {} on {} because of {}, {}. My {} view stands.",
                p.role,
                p.group,
                stance_phrase(stance),
                main_topic.replace('_', " "),
                p.rationale_cluster.replace('_', " "),
                emotion_phrase(emotion),
                p.rhetorical_style,
            ),
            MESSAGE_WORD_LIMIT,
        );
        let belief_composition = belief_state
            .keys()
            .map(|t| (t.clone(), [(p.rationale_cluster.clone(), 1.0)].into_iter().collect()))
            .collect();
        AgentResponse {
            message,
            active_subtopics: active,
            emergent_subtopics: emergent,
            belief_state,
            belief_composition,
            belief_relations: Vec::new(),
            belief_changes,
            emotion: Some(emotion),
        }
    }
}

impl ReasoningProvider for MockReasoner {
    fn name(&self) -> &str {
        "mock"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn reason(&self, req: &ReasoningRequest<'_>) -> Result<String, String> {
        serde_json::to_string(&self.respond(req)).map_err(|e| e.to_string())
    }
}

pub const API_KEY_ENV: &str = "ANCHORSIM_PROVIDER_KEY";

type Transport = dyn Fn(&str, &str) -> Result<String, String> + Send + Sync;

/// Adapter for a remote model. The transport receives the credential and the
/// assembled prompt and returns raw text.
pub struct ExternalReasoner {
    name: String,
    api_key: String,
    transport: Box<Transport>,
}

impl ExternalReasoner {
    pub fn new(name: impl Into<String>, api_key: impl Into<String>, transport: Box<Transport>) -> Self {
        ExternalReasoner {
            name: name.into(),
            api_key: api_key.into(),
            transport,
        }
    }

    /// Reads the credential from the environment; calls fail until a real
    /// transport is supplied.
    pub fn from_env(name: &str) -> Result<Self, String> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| format!("{API_KEY_ENV} is not set"))?;
        Ok(Self::new(name, key, Box::new(|_, _| Err("no transport configured".to_string()))))
    }
}

impl ReasoningProvider for ExternalReasoner {
    fn name(&self) -> &str {
        &self.name
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn reason(&self, req: &ReasoningRequest<'_>) -> Result<String, String> {
        (self.transport)(&self.api_key, req.prompt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningOutcome {
    pub response: AgentResponse,
    pub warnings: Vec<String>,
    pub attempts: u32,
    /// Both attempts failed and the response is a no-op.
    pub degraded: bool,
}

/// One retry on provider or parse failure, then a no-op response.
pub fn reason_with_retry(provider: &dyn ReasoningProvider, req: &ReasoningRequest<'_>) -> ReasoningOutcome {
    let mut warnings = Vec::new();
    for attempt in 1..=2 {
        match provider.reason(req).map_err(|e| format!("provider: {e}")).and_then(|raw| {
            parse_response(&raw).map_err(|e| format!("parse: {e}"))
        }) {
            Ok(parsed) => {
                warnings.extend(parsed.warnings);
                return ReasoningOutcome {
                    response: parsed.response,
                    warnings,
                    attempts: attempt,
                    degraded: false,
                };
            }
            Err(e) => {
                tracing::warn!(agent = %req.profile.id, tick = req.tick, attempt, "{e}");
                warnings.push(e);
            }
        }
    }
    ReasoningOutcome {
        response: AgentResponse::default(),
        warnings,
        attempts: 2,
        degraded: true,
    }
}
