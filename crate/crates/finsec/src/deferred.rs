//! Layer 2 — deferred risk and adversarial rollout.
//!
//! Combines the layer-1 suspicion score with risk-tier-scaled behavior
//! history into a deferred risk score, maps it to a propagation probability,
//! and, above a trigger threshold, samples hypothetical future dialogue
//! paths whose risk is assessed from three perspectives (defender, attacker,
//! red team) and re-scored by layer 1.

use crate::backend::{GenerativeBackend, TemplateId};
use crate::error::{ConfigViolation, Error, Result};
use crate::model::{render_turns, BehaviorHistory, Dialogue, Role, Turn, UserProfile};
use crate::pattern::{Layer1Engine, Layer1Result};
use serde::{Deserialize, Serialize};

/// Turns kept when serializing a conversation into a prompt.
pub const MAX_PROMPT_TURNS: usize = 40;

/// Per-factor weights applied to [`BehaviorHistory`]; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorWeights {
    pub user_history: f64,
    pub transaction_patterns: f64,
    pub amount_anomaly: f64,
    pub frequency_anomaly: f64,
    pub timing_anomaly: f64,
}

impl Default for FactorWeights {
    fn default() -> Self {
        // Frequency anomaly fixed at 0.2 (the most discriminative factor in
        // our sweeps); the residual is spread uniformly.
        Self {
            user_history: 0.2,
            transaction_patterns: 0.2,
            amount_anomaly: 0.2,
            frequency_anomaly: 0.2,
            timing_anomaly: 0.2,
        }
    }
}

impl FactorWeights {
    pub fn values(&self) -> [f64; 5] {
        [
            self.user_history,
            self.transaction_patterns,
            self.amount_anomaly,
            self.frequency_anomaly,
            self.timing_anomaly,
        ]
    }

    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }

    /// Weights with `frequency_anomaly = w` and the residual spread
    /// uniformly over the other four factors.
    pub fn with_frequency_weight(w: f64) -> Self {
        let rest = (1.0 - w) / 4.0;
        Self {
            user_history: rest,
            transaction_patterns: rest,
            amount_anomaly: rest,
            frequency_anomaly: w,
            timing_anomaly: rest,
        }
    }

    pub fn weighted_sum(&self, history: &BehaviorHistory) -> f64 {
        self.values()
            .iter()
            .zip(history.values())
            .map(|(w, h)| w * h)
            .sum()
    }
}

/// Rollout sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Number of sampled future paths (one scenario each).
    pub paths: usize,
    /// Maximum hypothetical turns per path.
    pub horizon: usize,
    /// Weight of the re-scored behavioral risk per step.
    pub alpha_prime: f64,
    /// Weight of the adversarial intensity per step.
    pub gamma_prime: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            paths: 5,
            horizon: 3,
            alpha_prime: 0.5,
            gamma_prime: 0.5,
        }
    }
}

/// Tier thresholds for scenario selection and the rollout trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TierThresholds {
    pub theta_high: f64,
    pub theta_med: f64,
    pub tau_roll: f64,
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self {
            theta_high: 0.7,
            theta_med: 0.4,
            tau_roll: 0.4,
        }
    }
}

/// Perspective weights for the three-party adversarial combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvWeights {
    pub defender: f64,
    pub attacker: f64,
    pub redteam: f64,
}

impl Default for AdvWeights {
    fn default() -> Self {
        Self {
            defender: 1.0 / 3.0,
            attacker: 1.0 / 3.0,
            redteam: 1.0 / 3.0,
        }
    }
}

/// Full layer-2 configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeferredRiskConfig {
    pub factor_weights: FactorWeights,
    /// Propagation rate; must be positive.
    pub lambda_prop: f64,
    pub rollout: RolloutConfig,
    pub thresholds: TierThresholds,
    pub adv_weights: AdvWeights,
}

impl Default for DeferredRiskConfig {
    fn default() -> Self {
        Self {
            factor_weights: FactorWeights::default(),
            lambda_prop: 1.0,
            rollout: RolloutConfig::default(),
            thresholds: TierThresholds::default(),
            adv_weights: AdvWeights::default(),
        }
    }
}

/// Scenario risk tier chosen from the suspicion scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tier::High => f.write_str("high"),
            Tier::Medium => f.write_str("medium"),
            Tier::Low => f.write_str("low"),
        }
    }
}

/// One generated hypothetical future dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialScenario {
    pub id: String,
    pub tier: Tier,
    /// Raw generated continuation text.
    pub narrative: String,
    /// Hypothetical turns parsed from the narrative (may be empty when the
    /// generation did not follow the turn format).
    pub turns: Vec<Turn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_warning: Option<String>,
}

/// Three-perspective analysis of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialAnalysis {
    pub scenario_id: String,
    pub s_def: f64,
    pub s_att: f64,
    pub s_red: f64,
    /// Union of `PATTERN:` lines across the three perspectives.
    pub extracted_patterns: Vec<String>,
    /// Logistic combination of the weighted perspective scores.
    pub r_adv: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Aggregated rollout simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    /// Per-scenario path risks.
    pub trajectory: Vec<f64>,
    /// Worst-case path risk.
    pub r_rollout: f64,
    /// Mean of per-path maxima.
    pub dr_rollout: f64,
    /// Agreement across paths: 1 - sample stddev, clamped to [0, 1].
    pub confidence: f64,
}

impl RolloutResult {
    /// Aggregate per-path risks. Sums run over an ascending-sorted copy so
    /// the result is bit-identical under any path ordering.
    pub fn aggregate(trajectory: Vec<f64>) -> Self {
        assert!(!trajectory.is_empty(), "rollout needs at least one path");
        let mut sorted = trajectory.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let r_rollout = *sorted.last().unwrap();
        let confidence = if sorted.len() == 1 {
            1.0
        } else {
            let var = sorted.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
            (1.0 - var.sqrt()).clamp(0.0, 1.0)
        };
        RolloutResult {
            trajectory,
            r_rollout,
            dr_rollout: mean,
            confidence,
        }
    }
}

/// Full layer-2 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer2Result {
    pub q_def: f64,
    pub p_t: f64,
    pub r_adv_layer: f64,
    pub scenarios: Vec<AdversarialScenario>,
    pub analyses: Vec<AdversarialAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutResult>,
}

/// Deferred risk: an equal blend of the layer-1 suspicion score and the
/// risk-tier-scaled weighted history factors, clamped to [0, 1].
pub fn deferred_score(
    s_t: f64,
    profile: Option<&UserProfile>,
    history: Option<&BehaviorHistory>,
    config: &DeferredRiskConfig,
) -> f64 {
    let multiplier = profile.map(|p| p.risk_tier.multiplier()).unwrap_or(1.0);
    let history_term = history
        .map(|h| config.factor_weights.weighted_sum(h))
        .unwrap_or(0.0);
    (0.5 * s_t + 0.5 * multiplier * history_term).clamp(0.0, 1.0)
}

/// Risk propagation probability `1 - exp(-lambda * q)`.
pub fn propagation_probability(q_def: f64, lambda_prop: f64) -> Result<f64> {
    if lambda_prop <= 0.0 {
        return Err(Error::InvalidConfig(vec![ConfigViolation {
            path: "layer2.lambda_prop".into(),
            message: format!("must be > 0, got {lambda_prop}"),
        }]));
    }
    Ok(1.0 - (-lambda_prop * q_def).exp())
}

/// Scenario tier as a step function of the larger suspicion score.
pub fn select_tier(s_sus: f64, s_def: f64, thresholds: &TierThresholds) -> Tier {
    let peak = s_sus.max(s_def);
    if peak > thresholds.theta_high {
        Tier::High
    } else if peak > thresholds.theta_med {
        Tier::Medium
    } else {
        Tier::Low
    }
}

fn render_profile(profile: Option<&UserProfile>) -> String {
    match profile {
        Some(p) => format!(
            "risk_tier={} jurisdiction={} account_age_days={}",
            match p.risk_tier {
                crate::model::RiskTier::Low => "low",
                crate::model::RiskTier::Standard => "standard",
                crate::model::RiskTier::High => "high",
            },
            p.jurisdiction,
            p.account_age_days
        ),
        None => "none".into(),
    }
}

/// Parse the first `RISK: <x>` line; missing or malformed lines fall back to
/// 0.5 with a warning rather than failing the pipeline.
fn parse_risk_line(text: &str, perspective: &str) -> (f64, Option<String>) {
    for line in text.lines() {
        let trimmed = line.trim();
        let lower = trimmed.to_lowercase();
        if let Some(rest) = lower.strip_prefix("risk:") {
            match rest.trim().parse::<f64>() {
                Ok(value) if value.is_finite() => {
                    if (0.0..=1.0).contains(&value) {
                        return (value, None);
                    }
                    return (
                        value.clamp(0.0, 1.0),
                        Some(format!("{perspective}: RISK value {value} clamped to [0,1]")),
                    );
                }
                _ => {
                    return (
                        0.5,
                        Some(format!(
                            "{perspective}: unparseable RISK line {trimmed:?}, defaulting to 0.5"
                        )),
                    )
                }
            }
        }
    }
    (
        0.5,
        Some(format!("{perspective}: no RISK line, defaulting to 0.5")),
    )
}

fn parse_pattern_lines(text: &str, into: &mut Vec<String>) {
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.len() >= 8 && trimmed[..8].eq_ignore_ascii_case("pattern:") {
            let value = trimmed[8..].trim().to_string();
            if !value.is_empty() && !into.contains(&value) {
                into.push(value);
            }
        }
    }
}

fn parse_scenario(text: &str, tier: Tier, index: usize) -> AdversarialScenario {
    let narrative = match text.split_once("SCENARIO:") {
        Some((_, rest)) => rest.trim().to_string(),
        None => text.trim().to_string(),
    };
    let mut turns = Vec::new();
    for line in narrative.lines() {
        let line = line.trim();
        let role = if let Some(rest) = line.strip_prefix("[user]") {
            Some((Role::User, rest))
        } else if let Some(rest) = line.strip_prefix("[agent]") {
            Some((Role::Agent, rest))
        } else if let Some(rest) = line.strip_prefix("[environment]") {
            Some((Role::Environment, rest))
        } else {
            None
        };
        if let Some((role, rest)) = role {
            let text = rest.trim();
            if !text.is_empty() {
                turns.push(Turn {
                    index: turns.len(),
                    role,
                    text: text.to_string(),
                    timestamp: None,
                });
            }
        }
    }
    let parse_warning = if turns.is_empty() {
        Some("no [role] turn lines parsed from generation; keeping raw narrative".to_string())
    } else {
        None
    };
    AdversarialScenario {
        id: format!("{tier}-{index}"),
        tier,
        narrative,
        turns,
        parse_warning,
    }
}

/// Generate hypothetical future scenarios at the tier selected from the
/// suspicion scores: `paths` scenarios for high/medium tiers, one for low.
pub fn generate_scenarios(
    context: &Dialogue,
    s_sus: f64,
    s_def: f64,
    profile: Option<&UserProfile>,
    config: &DeferredRiskConfig,
    backend: &GenerativeBackend,
) -> Result<Vec<AdversarialScenario>> {
    let tier = select_tier(s_sus, s_def, &config.thresholds);
    let (template, count) = match tier {
        Tier::High => (TemplateId::ScenarioHigh, config.rollout.paths),
        Tier::Medium => (TemplateId::ScenarioMed, config.rollout.paths),
        Tier::Low => (TemplateId::ScenarioLow, 1),
    };
    let conversation = context.render_transcript(MAX_PROMPT_TURNS);
    let profile_text = render_profile(profile);
    let mut scenarios = Vec::with_capacity(count);
    for index in 1..=count.max(1) {
        let request = backend
            .request(template)
            .var("conversation", conversation.clone())
            .var("profile", profile_text.clone())
            .var("horizon", config.rollout.horizon.to_string())
            .var("index", index.to_string());
        let response = backend.complete(&request)?;
        let scenario = parse_scenario(&response.text, tier, index);
        if let Some(warning) = &scenario.parse_warning {
            log::warn!("scenario {}: {warning}", scenario.id);
        }
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

/// Ask the defender, attacker, and red-team perspectives about one scenario
/// and combine their scores through a logistic link.
pub fn three_party_analysis(
    scenario: &AdversarialScenario,
    config: &DeferredRiskConfig,
    backend: &GenerativeBackend,
) -> Result<AdversarialAnalysis> {
    let mut warnings = Vec::new();
    let mut extracted_patterns = Vec::new();
    let mut perspective_score = |template: TemplateId, name: &str| -> Result<f64> {
        let request = backend
            .request(template)
            .var("scenario", scenario.narrative.clone());
        let response = backend.complete(&request)?;
        let (score, warning) = parse_risk_line(&response.text, name);
        if let Some(w) = warning {
            log::warn!("scenario {}: {w}", scenario.id);
            warnings.push(w);
        }
        parse_pattern_lines(&response.text, &mut extracted_patterns);
        Ok(score)
    };
    let s_def = perspective_score(TemplateId::Defender, "defender")?;
    let s_att = perspective_score(TemplateId::Attacker, "attacker")?;
    let s_red = perspective_score(TemplateId::Redteam, "redteam")?;
    let w = &config.adv_weights;
    let combined = w.defender * s_def + w.attacker * s_att + w.redteam * s_red;
    Ok(AdversarialAnalysis {
        scenario_id: scenario.id.clone(),
        s_def,
        s_att,
        s_red,
        extracted_patterns,
        r_adv: crate::embedding::scaled_sigmoid(combined, 1.0),
        warnings,
    })
}

/// Path turns for a scenario: parsed turns truncated to the horizon, or the
/// whole narrative as a single hypothetical user turn when parsing found
/// none (so a malformed generation still contributes risk).
fn path_turns(scenario: &AdversarialScenario, horizon: usize) -> Vec<Turn> {
    if scenario.turns.is_empty() {
        return vec![Turn {
            index: 0,
            role: Role::User,
            text: scenario.narrative.clone(),
            timestamp: None,
        }];
    }
    scenario.turns.iter().take(horizon).cloned().collect()
}

/// Simulate each scenario as a future path: per step, re-run layer 1 on the
/// context extended with the path prefix and analyze the prefix's
/// adversarial intensity; the path risk is the maximum combined step risk.
pub fn rollout_risk(
    context: &Dialogue,
    scenarios: &[AdversarialScenario],
    config: &DeferredRiskConfig,
    layer1_engine: &Layer1Engine,
    backend: &GenerativeBackend,
) -> Result<RolloutResult> {
    if config.rollout.horizon == 0 {
        return Err(Error::InvalidConfig(vec![ConfigViolation {
            path: "layer2.rollout.horizon".into(),
            message: "must be >= 1".into(),
        }]));
    }
    assert!(!scenarios.is_empty(), "rollout needs at least one scenario");
    let mut trajectory = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let path = path_turns(scenario, config.rollout.horizon);
        let mut path_risk = 0.0_f64;
        for k in 1..=path.len() {
            let mut extended_turns = context.turns.clone();
            extended_turns.extend(path[..k].iter().cloned());
            let mut extended = Dialogue::new(format!("{}::{}", context.id, scenario.id), extended_turns)?;
            extended.profile = context.profile.clone();
            let behavioral = layer1_engine
                .assess(&extended, context.profile.as_ref())?
                .r_sar;
            let prefix_scenario = AdversarialScenario {
                id: format!("{}-k{k}", scenario.id),
                tier: scenario.tier,
                narrative: render_turns(&path[..k], 0),
                turns: path[..k].to_vec(),
                parse_warning: None,
            };
            let analysis = three_party_analysis(&prefix_scenario, config, backend)?;
            let step_risk =
                config.rollout.alpha_prime * behavioral + config.rollout.gamma_prime * analysis.r_adv;
            path_risk = path_risk.max(step_risk);
        }
        trajectory.push(path_risk);
    }
    Ok(RolloutResult::aggregate(trajectory))
}

/// Run layer 2 end to end: deferred score, propagation probability, and the
/// rollout simulation when the deferred score reaches the trigger threshold.
pub fn layer2_assess(
    context: &Dialogue,
    layer1: &Layer1Result,
    profile: Option<&UserProfile>,
    history: Option<&BehaviorHistory>,
    config: &DeferredRiskConfig,
    layer1_engine: &Layer1Engine,
    backend: &GenerativeBackend,
) -> Result<Layer2Result> {
    let q_def = deferred_score(layer1.r_sar, profile, history, config);
    let p_t = propagation_probability(q_def, config.lambda_prop)?;
    if q_def < config.thresholds.tau_roll {
        return Ok(Layer2Result {
            q_def,
            p_t,
            r_adv_layer: q_def,
            scenarios: Vec::new(),
            analyses: Vec::new(),
            rollout: None,
        });
    }
    let scenarios = generate_scenarios(context, layer1.r_sar, q_def, profile, config, backend)?;
    let analyses = scenarios
        .iter()
        .map(|s| three_party_analysis(s, config, backend))
        .collect::<Result<Vec<_>>>()?;
    let rollout = rollout_risk(context, &scenarios, config, layer1_engine, backend)?;
    let r_adv_layer = q_def.max(rollout.dr_rollout);
    Ok(Layer2Result {
        q_def,
        p_t,
        r_adv_layer,
        scenarios,
        analyses,
        rollout: Some(rollout),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatProvider, CompletionRequest, ScriptedProvider, ScriptedRule};
    use crate::embedding::{scaled_sigmoid, HashingEmbedder};
    use crate::pattern::{PatternLibrary, TripleMatchConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn dialogue(texts: &[&str]) -> Dialogue {
        Dialogue::new(
            "d",
            texts
                .iter()
                .map(|t| Turn {
                    index: 0,
                    role: Role::User,
                    text: t.to_string(),
                    timestamp: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn history_with_frequency(value: f64) -> BehaviorHistory {
        BehaviorHistory {
            frequency_anomaly: value,
            ..Default::default()
        }
    }

    fn engine() -> Layer1Engine {
        Layer1Engine::new(
            PatternLibrary::builtin(),
            TripleMatchConfig::default(),
            Arc::new(HashingEmbedder::default()),
        )
    }

    struct CountingProvider {
        inner: ScriptedProvider,
        calls: AtomicUsize,
    }

    impl ChatProvider for CountingProvider {
        fn complete(&self, prompt: &str, request: &CompletionRequest) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(prompt, request)
        }
        fn kind(&self) -> crate::backend::ProviderKind {
            crate::backend::ProviderKind::Scripted
        }
    }

    #[test]
    fn deferred_score_zero_inputs() {
        let config = DeferredRiskConfig::default();
        let q = deferred_score(0.0, None, Some(&BehaviorHistory::default()), &config);
        assert_eq!(q, 0.0);
    }

    #[test]
    fn deferred_score_frequency_only() {
        let config = DeferredRiskConfig::default();
        let q = deferred_score(0.0, None, Some(&history_with_frequency(1.0)), &config);
        assert!((q - 0.10).abs() < 1e-12, "{q}");
    }

    #[test]
    fn deferred_score_saturates() {
        let config = DeferredRiskConfig::default();
        let full = BehaviorHistory {
            user_history: 1.0,
            transaction_patterns: 1.0,
            amount_anomaly: 1.0,
            frequency_anomaly: 1.0,
            timing_anomaly: 1.0,
        };
        let q = deferred_score(1.0, None, Some(&full), &config);
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deferred_score_missing_history_contributes_zero() {
        let config = DeferredRiskConfig::default();
        assert_eq!(deferred_score(0.6, None, None, &config), 0.3);
    }

    #[test]
    fn propagation_examples() {
        assert_eq!(propagation_probability(0.0, 1.0).unwrap(), 0.0);
        let p = propagation_probability(0.2, 1.0).unwrap();
        assert!((p - 0.181_269_246_922_018_14).abs() < 1e-9, "{p}");
        let p = propagation_probability(1.0, 1.0).unwrap();
        assert!((p - 0.632_120_558_828_557_7).abs() < 1e-9, "{p}");
    }

    #[test]
    fn propagation_rejects_nonpositive_lambda() {
        assert!(propagation_probability(0.5, 0.0).is_err());
        assert!(propagation_probability(0.5, -1.0).is_err());
    }

    #[test]
    fn tier_selection_branches() {
        let t = TierThresholds::default();
        assert_eq!(select_tier(0.9, 0.0, &t), Tier::High);
        assert_eq!(select_tier(0.0, 0.9, &t), Tier::High);
        assert_eq!(select_tier(0.5, 0.1, &t), Tier::Medium);
        assert_eq!(select_tier(0.1, 0.1, &t), Tier::Low);
        // Boundary: thresholds are strict.
        assert_eq!(select_tier(0.7, 0.7, &t), Tier::Medium);
        assert_eq!(select_tier(0.4, 0.4, &t), Tier::Low);
    }

    #[test]
    fn risk_line_parsing() {
        assert_eq!(parse_risk_line("RISK: 0.8", "p"), (0.8, None));
        assert_eq!(parse_risk_line("noise\nrisk: 0.25\nmore", "p").0, 0.25);
        let (v, w) = parse_risk_line("no score here", "p");
        assert_eq!(v, 0.5);
        assert!(w.unwrap().contains("no RISK line"));
        let (v, w) = parse_risk_line("RISK: high", "p");
        assert_eq!(v, 0.5);
        assert!(w.is_some());
        let (v, w) = parse_risk_line("RISK: 1.7", "p");
        assert_eq!(v, 1.0);
        assert!(w.unwrap().contains("clamped"));
    }

    #[test]
    fn scenario_parsing_extracts_turns() {
        let text = "SCENARIO:\n[user] Move everything tonight.\n[agent] Starting the transfer.\nnarrative trailer";
        let s = parse_scenario(text, Tier::High, 1);
        assert_eq!(s.id, "high-1");
        assert_eq!(s.turns.len(), 2);
        assert_eq!(s.turns[1].role, Role::Agent);
        assert!(s.parse_warning.is_none());
    }

    #[test]
    fn scenario_parsing_keeps_raw_narrative_on_failure() {
        let s = parse_scenario("free-form text with no turn markers", Tier::Low, 1);
        assert!(s.turns.is_empty());
        assert!(s.parse_warning.is_some());
        assert_eq!(s.narrative, "free-form text with no turn markers");
    }

    fn three_party_backend(risk: &str) -> GenerativeBackend {
        GenerativeBackend::scripted(ScriptedProvider::constant(risk.to_string()))
    }

    #[test]
    fn three_party_uniform_scores() {
        let config = DeferredRiskConfig::default();
        let scenario = parse_scenario("[user] x", Tier::High, 1);
        let analysis =
            three_party_analysis(&scenario, &config, &three_party_backend("RISK: 0.6")).unwrap();
        assert_eq!(analysis.s_def, 0.6);
        assert_eq!(analysis.s_att, 0.6);
        assert_eq!(analysis.s_red, 0.6);
        assert!((analysis.r_adv - scaled_sigmoid(0.6, 1.0)).abs() < 1e-12);
        assert!((analysis.r_adv - 0.645_656_306_225_795_4).abs() < 1e-9);
    }

    #[test]
    fn three_party_full_risk() {
        let config = DeferredRiskConfig::default();
        let scenario = parse_scenario("[user] x", Tier::High, 1);
        let analysis =
            three_party_analysis(&scenario, &config, &three_party_backend("RISK: 1.0")).unwrap();
        assert!((analysis.r_adv - 0.731_058_578_630_004_9).abs() < 1e-9);
    }

    #[test]
    fn three_party_missing_risk_defaults() {
        let config = DeferredRiskConfig::default();
        let scenario = parse_scenario("[user] x", Tier::High, 1);
        let analysis =
            three_party_analysis(&scenario, &config, &three_party_backend("nothing useful"))
                .unwrap();
        assert_eq!((analysis.s_def, analysis.s_att, analysis.s_red), (0.5, 0.5, 0.5));
        assert!((analysis.r_adv - scaled_sigmoid(0.5, 1.0)).abs() < 1e-12);
        assert_eq!(analysis.warnings.len(), 3);
    }

    #[test]
    fn three_party_collects_patterns() {
        let provider = ScriptedProvider::new(vec![
            ScriptedRule {
                template: Some(TemplateId::Defender),
                contains: None,
                response: "RISK: 0.9\nPATTERN: structuring\nPATTERN: layering".into(),
                priority: 1,
            },
            ScriptedRule {
                template: Some(TemplateId::Redteam),
                contains: None,
                response: "RISK: 0.9\nPATTERN: prompt_injection\nPATTERN: structuring".into(),
                priority: 1,
            },
            ScriptedRule {
                template: None,
                contains: None,
                response: "RISK: 0.1".into(),
                priority: 0,
            },
        ])
        .unwrap();
        let backend = GenerativeBackend::scripted(provider);
        let config = DeferredRiskConfig::default();
        let scenario = parse_scenario("[user] x", Tier::High, 1);
        let analysis = three_party_analysis(&scenario, &config, &backend).unwrap();
        assert_eq!(
            analysis.extracted_patterns,
            vec!["structuring", "layering", "prompt_injection"]
        );
    }

    #[test]
    fn aggregate_mean_and_max() {
        let r = RolloutResult::aggregate(vec![0.7, 0.4]);
        assert!((r.dr_rollout - 0.55).abs() < 1e-12);
        assert_eq!(r.r_rollout, 0.7);
        assert!(r.dr_rollout >= 0.4 && r.dr_rollout <= 0.7);
    }

    #[test]
    fn aggregate_zero_paths_full_confidence() {
        let r = RolloutResult::aggregate(vec![0.0, 0.0, 0.0]);
        assert_eq!(r.dr_rollout, 0.0);
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn aggregate_single_path_confidence_one() {
        let r = RolloutResult::aggregate(vec![0.42]);
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.dr_rollout, 0.42);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = RolloutResult::aggregate(vec![0.1, 0.5, 0.30000000000000004, 0.7]);
        let b = RolloutResult::aggregate(vec![0.7, 0.30000000000000004, 0.5, 0.1]);
        assert_eq!(a.dr_rollout.to_bits(), b.dr_rollout.to_bits());
        assert_eq!(a.r_rollout.to_bits(), b.r_rollout.to_bits());
        assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
    }

    #[test]
    fn rollout_matches_inline_nested_loop() {
        let config = DeferredRiskConfig {
            rollout: RolloutConfig {
                paths: 2,
                horizon: 2,
                alpha_prime: 0.5,
                gamma_prime: 0.5,
            },
            ..Default::default()
        };
        let backend = three_party_backend("RISK: 0.4");
        let engine = engine();
        let context = dialogue(&["hello", "checking on my account"]);
        let scenarios = vec![
            parse_scenario("[user] split it under the limit\n[agent] done", Tier::High, 1),
            parse_scenario("[user] what is my balance", Tier::High, 2),
        ];
        let result = rollout_risk(&context, &scenarios, &config, &engine, &backend).unwrap();

        // Independent nested loop over the same scenarios.
        let mut expected = Vec::new();
        for scenario in &scenarios {
            let mut best = 0.0_f64;
            for k in 1..=scenario.turns.len().min(2) {
                let mut turns = context.turns.clone();
                turns.extend(scenario.turns[..k].iter().cloned());
                let extended = Dialogue::new("x", turns).unwrap();
                let s = engine.assess(&extended, None).unwrap().r_sar;
                let prefix = AdversarialScenario {
                    id: "p".into(),
                    tier: scenario.tier,
                    narrative: render_turns(&scenario.turns[..k], 0),
                    turns: scenario.turns[..k].to_vec(),
                    parse_warning: None,
                };
                let adv = three_party_analysis(&prefix, &config, &backend).unwrap().r_adv;
                best = best.max(0.5 * s + 0.5 * adv);
            }
            expected.push(best);
        }
        let expected = RolloutResult::aggregate(expected);
        assert_eq!(result.dr_rollout.to_bits(), expected.dr_rollout.to_bits());
        assert_eq!(result.r_rollout.to_bits(), expected.r_rollout.to_bits());
    }

    #[test]
    fn rollout_rejects_zero_horizon() {
        let config = DeferredRiskConfig {
            rollout: RolloutConfig {
                horizon: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let backend = three_party_backend("RISK: 0.0");
        let scenarios = vec![parse_scenario("[user] x", Tier::Low, 1)];
        let err = rollout_risk(&dialogue(&["a"]), &scenarios, &config, &engine(), &backend)
            .unwrap_err();
        assert!(err.to_string().contains("rollout.horizon"));
    }

    #[test]
    fn layer2_gate_closed_makes_no_backend_calls() {
        let provider = Arc::new(CountingProvider {
            inner: ScriptedProvider::constant("RISK: 0.9"),
            calls: AtomicUsize::new(0),
        });
        let backend = GenerativeBackend::new(provider.clone());
        let config = DeferredRiskConfig::default();
        let context = dialogue(&["ordinary question"]);
        let layer1 = Layer1Result {
            r_sar: 0.1,
            per_window: vec![],
            accumulated: vec![0.1],
            rba_multiplier: 1.0,
        };
        let result = layer2_assess(&context, &layer1, None, None, &config, &engine(), &backend)
            .unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 0);
        assert_eq!(result.r_adv_layer, result.q_def);
        assert!(result.scenarios.is_empty());
        assert!(result.rollout.is_none());
    }

    #[test]
    fn layer2_takes_max_of_deferred_and_rollout() {
        // High deferred score with a low-risk rollout: q_def wins.
        let backend = three_party_backend("SCENARIO:\n[user] nothing risky\nRISK: 0.0");
        let config = DeferredRiskConfig::default();
        let context = dialogue(&["send the funds immediately please"]);
        let layer1 = Layer1Result {
            r_sar: 0.9,
            per_window: vec![],
            accumulated: vec![0.9],
            rba_multiplier: 1.0,
        };
        let history = BehaviorHistory {
            user_history: 0.9,
            transaction_patterns: 0.9,
            amount_anomaly: 0.9,
            frequency_anomaly: 0.9,
            timing_anomaly: 0.9,
        };
        let result = layer2_assess(
            &context,
            &layer1,
            None,
            Some(&history),
            &config,
            &engine(),
            &backend,
        )
        .unwrap();
        assert!(result.rollout.is_some());
        let rollout = result.rollout.as_ref().unwrap();
        assert!(
            (result.r_adv_layer - result.q_def.max(rollout.dr_rollout)).abs() < 1e-12
        );
        assert_eq!(result.scenarios.len(), config.rollout.paths);
        assert_eq!(result.analyses.len(), config.rollout.paths);
    }

    #[test]
    fn with_frequency_weight_distributes_residual() {
        let w = FactorWeights::with_frequency_weight(0.2);
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert_eq!(w.frequency_anomaly, 0.2);
        assert_eq!(w.user_history, 0.2);
        let w = FactorWeights::with_frequency_weight(0.5);
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert_eq!(w.amount_anomaly, 0.125);
    }
}
