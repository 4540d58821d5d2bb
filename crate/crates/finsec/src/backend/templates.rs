//! Versioned prompt template registry with strict slot substitution.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Identifies one of the shipped prompt templates (directory `templates/v1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ScenarioHigh,
    ScenarioMed,
    ScenarioLow,
    Defender,
    Attacker,
    Redteam,
    JudgeReason,
    JudgePredict,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::ScenarioHigh,
        TemplateId::ScenarioMed,
        TemplateId::ScenarioLow,
        TemplateId::Defender,
        TemplateId::Attacker,
        TemplateId::Redteam,
        TemplateId::JudgeReason,
        TemplateId::JudgePredict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::ScenarioHigh => "scenario_high",
            TemplateId::ScenarioMed => "scenario_med",
            TemplateId::ScenarioLow => "scenario_low",
            TemplateId::Defender => "defender",
            TemplateId::Attacker => "attacker",
            TemplateId::Redteam => "redteam",
            TemplateId::JudgeReason => "judge_reason",
            TemplateId::JudgePredict => "judge_predict",
        }
    }

    fn body(self) -> &'static str {
        match self {
            TemplateId::ScenarioHigh => include_str!("../../templates/v1/scenario_high.txt"),
            TemplateId::ScenarioMed => include_str!("../../templates/v1/scenario_med.txt"),
            TemplateId::ScenarioLow => include_str!("../../templates/v1/scenario_low.txt"),
            TemplateId::Defender => include_str!("../../templates/v1/defender.txt"),
            TemplateId::Attacker => include_str!("../../templates/v1/attacker.txt"),
            TemplateId::Redteam => include_str!("../../templates/v1/redteam.txt"),
            TemplateId::JudgeReason => include_str!("../../templates/v1/judge_reason.txt"),
            TemplateId::JudgePredict => include_str!("../../templates/v1/judge_predict.txt"),
        }
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

/// Fill every `{slot}` in the template with the matching variable.
/// Unfilled slots are an error naming the slot; extra variables are ignored.
pub fn render(template_id: TemplateId, variables: &BTreeMap<String, String>) -> Result<String> {
    let mut text = template_id.body().to_string();
    for (slot, value) in variables {
        text = text.replace(&format!("{{{slot}}}"), value);
    }
    if let Some(slot) = first_unfilled_slot(&text) {
        return Err(Error::MissingSlot {
            template: template_id.name().to_string(),
            slot,
        });
    }
    Ok(text)
}

fn first_unfilled_slot(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'}' && j > i + 1 {
                return Some(text[i + 1..j].to_string());
            }
        }
        i += 1;
    }
    None
}
