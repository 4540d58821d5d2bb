//! Deterministic scripted chat provider for offline runs and tests.

use super::templates::TemplateId;
use super::{ChatProvider, CompletionRequest};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One canned response: fires when the request's template matches (if set)
/// and the rendered prompt contains `contains` (case-insensitive, if set).
/// A rule with neither predicate is a catch-all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
    #[serde(default)]
    pub priority: i64,
}

impl ScriptedRule {
    fn is_catch_all(&self) -> bool {
        self.template.is_none() && self.contains.is_none()
    }

    fn matches(&self, template_id: TemplateId, prompt_lower: &str) -> bool {
        if let Some(t) = self.template {
            if t != template_id {
                return false;
            }
        }
        if let Some(needle) = &self.contains {
            if !prompt_lower.contains(&needle.to_lowercase()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    rules: Vec<ScriptedRule>,
}

/// Pure function of (rendered prompt, fixture): the highest-priority matching
/// rule wins, ties resolve to the earliest rule in the fixture.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    rules: Vec<ScriptedRule>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptedRule>) -> Result<Self> {
        if !rules.iter().any(|r| r.is_catch_all()) {
            return Err(Error::InvalidFixture(
                "fixture has no catch-all rule".into(),
            ));
        }
        if let Some(bad) = rules.iter().find(|r| r.response.is_empty()) {
            return Err(Error::InvalidFixture(format!(
                "rule with empty response (contains={:?})",
                bad.contains
            )));
        }
        Ok(Self { rules })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fixture: Fixture =
            serde_json::from_str(text).map_err(|e| Error::InvalidFixture(e.to_string()))?;
        Self::new(fixture.rules)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// A provider answering every request with the same text. Handy default
    /// for tests and examples.
    pub fn constant(response: impl Into<String>) -> Self {
        Self {
            rules: vec![ScriptedRule {
                template: None,
                contains: None,
                response: response.into(),
                priority: 0,
            }],
        }
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, prompt: &str, request: &CompletionRequest) -> Result<String> {
        let prompt_lower = prompt.to_lowercase();
        let mut best: Option<&ScriptedRule> = None;
        for rule in &self.rules {
            if rule.matches(request.template_id, &prompt_lower)
                && best.map_or(true, |b| rule.priority > b.priority)
            {
                best = Some(rule);
            }
        }
        match best {
            Some(rule) => Ok(rule.response.clone()),
            None => Err(Error::NoMatchingRule),
        }
    }

    fn kind(&self) -> super::ProviderKind {
        super::ProviderKind::Scripted
    }
}
