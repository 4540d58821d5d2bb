//! Canonical dialogue representation shared by every detection layer:
//! turns, dialogues, sliding windows, user profiles, and behavior history.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Speaker of a dialogue turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    Environment,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::User => f.write_str("user"),
            Role::Agent => f.write_str("agent"),
            Role::Environment => f.write_str("environment"),
        }
    }
}

/// One interaction in a multi-turn dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    /// 0-based position within the dialogue; assigned at ingestion.
    #[serde(skip)]
    pub index: usize,
    pub role: Role,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<chrono::DateTime<chrono::Utc>>,
}

/// Customer risk tier used for risk-based weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskTier {
    Low,
    Standard,
    High,
}

impl RiskTier {
    /// Risk-based-approach multiplier applied to layer scores.
    pub fn multiplier(self) -> f64 {
        match self {
            RiskTier::Low => 0.8,
            RiskTier::Standard => 1.0,
            RiskTier::High => 1.2,
        }
    }
}

/// KYC-style customer profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub user_id: String,
    pub risk_tier: RiskTier,
    /// Jurisdiction code, carried as metadata (not yet wired into weighting).
    pub jurisdiction: String,
    pub account_age_days: u64,
}

/// The five normalized historical risk factors.
pub const HISTORY_FACTORS: [&str; 5] = [
    "user_history",
    "transaction_patterns",
    "amount_anomaly",
    "frequency_anomaly",
    "timing_anomaly",
];

/// Per-factor behavior history, each score normalized to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BehaviorHistory {
    pub user_history: f64,
    pub transaction_patterns: f64,
    pub amount_anomaly: f64,
    pub frequency_anomaly: f64,
    pub timing_anomaly: f64,
}

impl BehaviorHistory {
    /// Factor values in the canonical [`HISTORY_FACTORS`] order.
    pub fn values(&self) -> [f64; 5] {
        [
            self.user_history,
            self.transaction_patterns,
            self.amount_anomaly,
            self.frequency_anomaly,
            self.timing_anomaly,
        ]
    }

    /// Mutable accessor by canonical factor name.
    pub fn factor_mut(&mut self, name: &str) -> Option<&mut f64> {
        match name {
            "user_history" => Some(&mut self.user_history),
            "transaction_patterns" => Some(&mut self.transaction_patterns),
            "amount_anomaly" => Some(&mut self.amount_anomaly),
            "frequency_anomaly" => Some(&mut self.frequency_anomaly),
            "timing_anomaly" => Some(&mut self.timing_anomaly),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in HISTORY_FACTORS.iter().zip(self.values()) {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(Error::InvalidDialogue(format!(
                    "history factor {name} = {value} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Risk category of a labeled unsafe dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Injection,
    Unintended,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Category::Injection => f.write_str("injection"),
            Category::Unintended => f.write_str("unintended"),
        }
    }
}

/// Ground-truth annotation attached to a corpus dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Label {
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

impl Label {
    pub fn validate(&self) -> Result<()> {
        match (self.is_unsafe, self.category) {
            (true, None) => Err(Error::InvalidDialogue(
                "unsafe label requires a category".into(),
            )),
            (false, Some(_)) => Err(Error::InvalidDialogue(
                "safe label must not carry a category".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// A complete multi-turn transcript with optional profile, history, and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<UserProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<BehaviorHistory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Dialogue {
    /// Construct and validate a dialogue from parts, assigning turn indices.
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let mut d = Dialogue {
            id: id.into(),
            turns,
            profile: None,
            history: None,
            label: None,
        };
        d.finalize()?;
        Ok(d)
    }

    /// Assign turn indices and check all invariants. Called after any
    /// deserialization path.
    pub fn finalize(&mut self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::EmptyDialogue);
        }
        if self.id.trim().is_empty() {
            return Err(Error::InvalidDialogue("dialogue id is empty".into()));
        }
        for (i, turn) in self.turns.iter_mut().enumerate() {
            turn.index = i;
            if normalize_text(&turn.text).is_empty() {
                return Err(Error::InvalidDialogue(format!(
                    "turn {i} is empty after normalization"
                )));
            }
        }
        if let Some(history) = &self.history {
            history.validate()?;
        }
        if let Some(label) = &self.label {
            label.validate()?;
        }
        Ok(())
    }

    /// Parse a single dialogue from a JSON document, with field-path
    /// diagnostics on schema violations.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut dialogue: Dialogue = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Json(format!("{}: {}", e.path(), e.inner())))?;
        dialogue.finalize()?;
        Ok(dialogue)
    }

    /// Render the transcript as one `[role] text` line per turn, keeping the
    /// most recent `max_turns` turns. `max_turns = 0` keeps everything.
    pub fn render_transcript(&self, max_turns: usize) -> String {
        render_turns(&self.turns, max_turns)
    }
}

/// `[role] text` lines for a slice of turns, keeping the most recent
/// `max_turns` (0 = unbounded).
pub fn render_turns(turns: &[Turn], max_turns: usize) -> String {
    let skip = if max_turns > 0 && turns.len() > max_turns {
        turns.len() - max_turns
    } else {
        0
    };
    turns[skip..]
        .iter()
        .map(|t| format!("[{}] {}", t.role, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Lowercase, Unicode-NFC, collapse internal whitespace runs, trim.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.nfc() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        }
    }
    out
}

/// A sliding window over a dialogue's turns, inclusive of `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<'a> {
    pub start: usize,
    pub end: usize,
    pub turns: &'a [Turn],
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Segment a dialogue into sliding windows of `window_size` turns advancing
/// by `stride`. Windows are ordered by start; when the dialogue does not
/// divide evenly a final window anchored at the tail is appended so the last
/// turn is always covered. Every turn is covered whenever `stride <=
/// window_size`.
pub fn segment_windows(
    dialogue: &Dialogue,
    window_size: usize,
    stride: usize,
) -> Result<Vec<Window<'_>>> {
    assert!(window_size >= 1, "window_size must be >= 1");
    assert!(stride >= 1, "stride must be >= 1");
    let total = dialogue.turns.len();
    if total == 0 {
        return Err(Error::EmptyDialogue);
    }
    if total <= window_size {
        return Ok(vec![Window {
            start: 0,
            end: total - 1,
            turns: &dialogue.turns,
        }]);
    }
    let last_start = total - window_size;
    let mut windows = Vec::new();
    let mut start = 0;
    while start <= last_start {
        windows.push(Window {
            start,
            end: start + window_size - 1,
            turns: &dialogue.turns[start..start + window_size],
        });
        start += stride;
    }
    // Tail window when the stride steps past the final full-size position.
    if windows.last().map(|w| w.start) != Some(last_start) {
        windows.push(Window {
            start: last_start,
            end: total - 1,
            turns: &dialogue.turns[last_start..],
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn turn(role: Role, text: &str) -> Turn {
        Turn {
            index: 0,
            role,
            text: text.to_string(),
            timestamp: None,
        }
    }

    fn dialogue_of(texts: &[&str]) -> Dialogue {
        Dialogue::new(
            "d",
            texts.iter().map(|t| turn(Role::User, t)).collect(),
        )
        .unwrap()
    }

    /// Character-by-character reference normalizer: NFC, then split on
    /// whitespace and rejoin with single spaces, lowercasing each char.
    fn reference_normalize(raw: &str) -> String {
        let nfc: String = raw.nfc().collect();
        nfc.split_whitespace()
            .map(|w| w.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn normalize_collapses_whitespace_and_case() {
        assert_eq!(normalize_text("  Wire   $9,900 "), "wire $9,900");
    }

    #[test]
    fn normalize_empty_passthrough() {
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn normalize_nonbreaking_space_collapses() {
        let out = normalize_text("Transfer\u{00A0}funds");
        assert_eq!(out, "transfer funds");
        assert_eq!(out, reference_normalize("Transfer\u{00A0}funds"));
    }

    #[test]
    fn normalize_agrees_with_reference_on_mixed_unicode() {
        for raw in [
            "A\u{0301} la carte\t transfers",
            " MIXED\u{2003}Wide\u{00A0}spaces ",
            "tab\tand\nnewline",
            "",
            "   ",
        ] {
            assert_eq!(normalize_text(raw), reference_normalize(raw), "raw={raw:?}");
        }
    }

    #[test]
    fn single_turn_single_window() {
        let d = dialogue_of(&["hello"]);
        let ws = segment_windows(&d, 6, 1).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!((ws[0].start, ws[0].end), (0, 0));
    }

    #[test]
    fn eight_turns_size_six_stride_one() {
        let d = dialogue_of(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        let ws = segment_windows(&d, 6, 1).unwrap();
        let spans: Vec<(usize, usize)> = ws.iter().map(|w| (w.start, w.end)).collect();
        assert_eq!(spans, vec![(0, 5), (1, 6), (2, 7)]);
    }

    #[test]
    fn exact_fit_single_window() {
        let d = dialogue_of(&["a", "b", "c", "d", "e", "f"]);
        let ws = segment_windows(&d, 6, 1).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!((ws[0].start, ws[0].end), (0, 5));
    }

    #[test]
    fn window_coverage_for_stride_up_to_size() {
        for total in 1..=12usize {
            let texts: Vec<String> = (0..total).map(|i| format!("t{i}")).collect();
            let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
            let d = dialogue_of(&refs);
            for size in 1..=7usize {
                for stride in 1..=size {
                    let ws = segment_windows(&d, size, stride).unwrap();
                    let mut covered = vec![false; total];
                    for w in &ws {
                        assert!(w.len() <= size);
                        assert!(!w.is_empty());
                        for t in w.start..=w.end {
                            covered[t] = true;
                        }
                    }
                    assert!(
                        covered.iter().all(|&c| c),
                        "uncovered turn: total={total} size={size} stride={stride}"
                    );
                    // Ordered by start.
                    assert!(ws.windows(2).all(|p| p[0].start <= p[1].start));
                }
            }
        }
    }

    #[test]
    fn empty_dialogue_rejected() {
        let err = Dialogue::new("d", vec![]).unwrap_err();
        assert!(matches!(err, Error::EmptyDialogue));
    }

    #[test]
    fn whitespace_only_turn_rejected() {
        let err = Dialogue::new("d", vec![turn(Role::User, "   ")]).unwrap_err();
        assert!(matches!(err, Error::InvalidDialogue(_)));
    }

    #[test]
    fn unknown_role_rejected_with_path() {
        let err = Dialogue::from_json(r#"{"id":"d","turns":[{"role":"narrator","text":"x"}]}"#)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("turns[0].role"), "{msg}");
    }

    #[test]
    fn label_category_consistency() {
        let err = Dialogue::from_json(
            r#"{"id":"d","turns":[{"role":"user","text":"x"}],"label":{"unsafe":true}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("category"));
        let ok = Dialogue::from_json(
            r#"{"id":"d","turns":[{"role":"user","text":"x"}],"label":{"unsafe":true,"category":"injection"}}"#,
        )
        .unwrap();
        assert_eq!(ok.label.unwrap().category, Some(Category::Injection));
    }

    #[test]
    fn serialization_round_trip_preserves_turn_order() {
        let json = r#"{"id":"d1","turns":[{"role":"user","text":"first"},{"role":"agent","text":"second"},{"role":"environment","text":"third"}],"profile":{"user_id":"u1","risk_tier":"high","jurisdiction":"US","account_age_days":12},"history":{"user_history":0.1,"transaction_patterns":0.2,"amount_anomaly":0.3,"frequency_anomaly":0.4,"timing_anomaly":0.5}}"#;
        let d = Dialogue::from_json(json).unwrap();
        let out = serde_json::to_string(&d).unwrap();
        let d2 = Dialogue::from_json(&out).unwrap();
        assert_eq!(d, d2);
        assert_eq!(
            d2.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
            vec!["first", "second", "third"]
        );
        assert_eq!(d2.turns.iter().map(|t| t.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn transcript_rendering_truncates_to_recent_turns() {
        let d = dialogue_of(&["a", "b", "c"]);
        assert_eq!(d.render_transcript(0), "[user] a\n[user] b\n[user] c");
        assert_eq!(d.render_transcript(2), "[user] b\n[user] c");
    }

    #[test]
    fn risk_tier_multipliers() {
        assert_eq!(RiskTier::Low.multiplier(), 0.8);
        assert_eq!(RiskTier::Standard.multiplier(), 1.0);
        assert_eq!(RiskTier::High.multiplier(), 1.2);
    }

    #[test]
    fn history_factor_range_validated() {
        let mut h = BehaviorHistory::default();
        h.amount_anomaly = 1.5;
        assert!(h.validate().is_err());
    }
}
