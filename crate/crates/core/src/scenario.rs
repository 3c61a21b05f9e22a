//! Scenario intake: structured documents, named fixtures and free text.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario schema violation: {0}")]
    Schema(String),
    #[error("scenario document is not valid JSON: {0}")]
    Document(String),
    #[error("dispatcher failed: {0}")]
    Dispatcher(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEvent {
    pub tick: u32,
    pub topic: String,
    pub description: String,
    pub shock_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub title: String,
    pub key_topics: Vec<String>,
    pub ticks: u32,
    #[serde(default)]
    pub policy_events: Vec<PolicyEvent>,
    /// Overrides the dynamics threshold when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bc: Option<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.ticks < 1 {
            return Err(ScenarioError::Schema("ticks must be >= 1".into()));
        }
        if self.key_topics.is_empty() {
            return Err(ScenarioError::Schema("key_topics must be non-empty".into()));
        }
        if let Some(t) = self.key_topics.iter().find(|t| t.trim().is_empty()) {
            return Err(ScenarioError::Schema(format!("blank topic `{t}`")));
        }
        if let Some(th) = self.theta_bc {
            if !(0.0..=2.0).contains(&th) {
                return Err(ScenarioError::Schema(format!("theta_bc {th} outside [0,2]")));
            }
        }
        for e in &self.policy_events {
            if !(-1.0..=1.0).contains(&e.shock_magnitude) {
                return Err(ScenarioError::Schema(format!(
                    "policy event at tick {} has shock {} outside [-1,1]",
                    e.tick, e.shock_magnitude
                )));
            }
            if e.tick > self.ticks {
                return Err(ScenarioError::Schema(format!("policy event tick {} beyond run length", e.tick)));
            }
        }
        Ok(())
    }

    pub fn events_at(&self, tick: u32) -> impl Iterator<Item = &PolicyEvent> {
        self.policy_events.iter().filter(move |e| e.tick == tick)
    }
}

/// Partial fields recovered from free text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioDraft {
    pub title: Option<String>,
    pub key_topics: Vec<String>,
    pub ticks: Option<u32>,
    pub policy_events: Vec<PolicyEvent>,
    pub theta_bc: Option<f64>,
}

impl ScenarioDraft {
    pub fn finish(self) -> Result<Scenario, ScenarioError> {
        let ticks = self
            .ticks
            .ok_or_else(|| ScenarioError::Schema("no tick count could be extracted".into()))?;
        let s = Scenario {
            title: self.title.unwrap_or_else(|| "untitled scenario".into()),
            key_topics: self.key_topics,
            ticks,
            policy_events: self.policy_events,
            theta_bc: self.theta_bc,
            metadata: BTreeMap::new(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Turns natural-language scenario text into a draft.
pub trait ScenarioDispatcher {
    fn extract(&self, text: &str) -> Result<ScenarioDraft, String>;
}

pub enum ScenarioSource<'a> {
    Document(&'a str),
    Fixture(&'a str),
    Text(&'a str),
}

pub fn parse_scenario(source: ScenarioSource<'_>, dispatcher: &dyn ScenarioDispatcher) -> Result<Scenario, ScenarioError> {
    match source {
        ScenarioSource::Document(doc) => {
            let s: Scenario = serde_json::from_str(doc).map_err(|e| ScenarioError::Document(e.to_string()))?;
            s.validate()?;
            Ok(s)
        }
        ScenarioSource::Fixture(name) => {
            fixture(name).ok_or_else(|| ScenarioError::Dispatcher(format!("unknown fixture `{name}`")))
        }
        ScenarioSource::Text(text) => {
            if let Some(s) = fixture(text.trim()) {
                return Ok(s);
            }
            dispatcher.extract(text).map_err(ScenarioError::Dispatcher)?.finish()
        }
    }
}

pub const FIXTURES: &[&str] = &["roe_v_wade_test", "social_media_ban_test", "us_election_test"];

fn event(tick: u32, topic: &str, description: &str, shock: f64) -> PolicyEvent {
    PolicyEvent {
        tick,
        topic: topic.into(),
        description: description.into(),
        shock_magnitude: shock,
    }
}

/// Canned scenarios for tests and demos.
pub fn fixture(name: &str) -> Option<Scenario> {
    let topics = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let s = match name {
        "roe_v_wade_test" => Scenario {
            title: "Overturning of Roe v. Wade".into(),
            key_topics: topics(&["abortion_rights", "bodily_autonomy", "state_regulation"]),
            ticks: 15,
            policy_events: vec![
                event(1, "abortion_rights", "Supreme Court overturns Roe v. Wade", -0.8),
                event(4, "state_regulation", "Several states enact trigger bans", -0.5),
            ],
            theta_bc: None,
            metadata: BTreeMap::new(),
        },
        "social_media_ban_test" => Scenario {
            title: "Australia social media ban for under 16s".into(),
            key_topics: topics(&["youth_social_media_ban", "online_safety", "age_verification"]),
            ticks: 15,
            policy_events: vec![event(1, "youth_social_media_ban", "Parliament passes the under-16 ban", 0.6)],
            theta_bc: None,
            metadata: BTreeMap::new(),
        },
        "us_election_test" => Scenario {
            title: "U.S. Presidential Election".into(),
            key_topics: topics(&["inflation_and_cost_of_living", "healthcare_affordability", "immigration"]),
            ticks: 15,
            policy_events: vec![
                event(2, "inflation_and_cost_of_living", "Monthly inflation report surprises upward", -0.6),
                event(9, "healthcare_affordability", "Candidate unveils a drug price cap plan", 0.5),
            ],
            theta_bc: None,
            metadata: BTreeMap::new(),
        },
        _ => return None,
    };
    Some(s)
}

/// Keyword dispatcher: tick counts, topic lists, thresholds and
/// `shock <x> on <topic> at tick <n>` phrases.
pub struct KeywordDispatcher {
    ticks: Regex,
    topics: Regex,
    theta: Regex,
    shock: Regex,
    title: Regex,
}

impl Default for KeywordDispatcher {
    fn default() -> Self {
        KeywordDispatcher {
            ticks: Regex::new(r"(?i)\b(\d+)\s*(?:ticks?|rounds?|steps?)\b").unwrap(),
            topics: Regex::new(r"(?i)\btopics?\s*:\s*([^.;\n]+)").unwrap(),
            theta: Regex::new(r"(?i)\b(?:theta|threshold|bounded confidence)\s*(?:=|:|of)?\s*(-?\d+(?:\.\d+)?)").unwrap(),
            shock: Regex::new(r"(?i)\bshock\s+(-?\d+(?:\.\d+)?)\s+on\s+([a-z0-9_]+)\s+at\s+tick\s+(\d+)").unwrap(),
            title: Regex::new(r"(?i)\btitle\s*:\s*([^.;\n]+)").unwrap(),
        }
    }
}

impl ScenarioDispatcher for KeywordDispatcher {
    fn extract(&self, text: &str) -> Result<ScenarioDraft, String> {
        let mut d = ScenarioDraft::default();
        if let Some(c) = self.ticks.captures(text) {
            d.ticks = Some(c[1].parse().map_err(|e| format!("tick count: {e}"))?);
        }
        if let Some(c) = self.topics.captures(text) {
            d.key_topics = c[1]
                .split([',', '/'])
                .flat_map(|s| s.split(" and "))
                .map(|s| s.trim().to_lowercase().replace(' ', "_"))
                .filter(|s| !s.is_empty())
                .collect();
        }
        if let Some(c) = self.theta.captures(text) {
            d.theta_bc = Some(c[1].parse().map_err(|e| format!("threshold: {e}"))?);
        }
        for c in self.shock.captures_iter(text) {
            let shock: f64 = c[1].parse().map_err(|e| format!("shock: {e}"))?;
            let tick: u32 = c[3].parse().map_err(|e| format!("shock tick: {e}"))?;
            d.policy_events.push(event(tick, &c[2].to_lowercase(), c[0].trim(), shock));
        }
        d.title = self
            .title
            .captures(text)
            .map(|c| c[1].trim().to_string())
            .or_else(|| text.lines().next().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()));
        Ok(d)
    }
}
