//! Layer 1 — suspicious-behavior pattern detection over sliding windows.
//!
//! Each pattern combines three kinds of evidence into one match score:
//! keyword hit rate, semantic similarity of pattern nodes against window
//! turns, and ordering consistency of the node matches. Per-window scores
//! are accumulated over time with geometric decay and scaled by the
//! customer's risk tier.

use crate::embedding::{cosine, scaled_sigmoid, Embedder};
use crate::error::{Error, Result};
use crate::model::{normalize_text, segment_windows, Dialogue, UserProfile, Window};
use serde::{Deserialize, Serialize};

/// One suspicious-behavior pattern: keywords, semantic nodes, and directed
/// edges describing the expected order of the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    pub id: String,
    /// Lowercase phrases matched by substring containment on normalized text.
    pub keywords: Vec<String>,
    /// Natural-language node descriptions, embedded and compared to turns.
    pub nodes: Vec<String>,
    /// Directed (from, to) node-index pairs.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    /// Per-pattern weight in (0, 1].
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl Pattern {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::InvalidPattern {
            pattern_id: self.id.clone(),
            message,
        };
        if self.keywords.is_empty() {
            return Err(Error::PatternNoKeywords {
                pattern_id: self.id.clone(),
            });
        }
        if !self.edges.is_empty() && self.nodes.is_empty() {
            return Err(fail("edges present but node list is empty".into()));
        }
        for &(u, v) in &self.edges {
            if u == v {
                return Err(fail(format!("self-edge {u} -> {v}")));
            }
            if u >= self.nodes.len() || v >= self.nodes.len() {
                return Err(fail(format!(
                    "edge {u} -> {v} references a node outside 0..{}",
                    self.nodes.len()
                )));
            }
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(fail(format!("weight {} outside (0, 1]", self.weight)));
        }
        Ok(())
    }
}

/// A named, versioned collection of patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternLibrary {
    pub version: String,
    pub patterns: Vec<Pattern>,
}

impl PatternLibrary {
    /// The six patterns shipped with the engine. Authored as illustrative
    /// red-flag heuristics, not regulatory-grade rules.
    pub fn builtin() -> Self {
        let mut library: PatternLibrary =
            serde_json::from_str(include_str!("../config/patterns.json"))
                .expect("builtin pattern library parses");
        library.normalize_keywords();
        library.validate().expect("builtin pattern library is valid");
        library
    }

    /// Load and validate a library from a JSON file, reporting the offending
    /// field path on schema errors.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut library: PatternLibrary = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Json(format!("{}: {} ({})", e.path(), e.inner(), path.display())))?;
        library.normalize_keywords();
        library.validate()?;
        Ok(library)
    }

    fn normalize_keywords(&mut self) {
        for pattern in &mut self.patterns {
            for keyword in &mut pattern.keywords {
                *keyword = normalize_text(keyword);
            }
            pattern.keywords.retain(|k| !k.is_empty());
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        let mut seen = std::collections::HashSet::new();
        for pattern in &self.patterns {
            pattern.validate()?;
            if !seen.insert(pattern.id.as_str()) {
                return Err(Error::InvalidPattern {
                    pattern_id: pattern.id.clone(),
                    message: "duplicate pattern id".into(),
                });
            }
        }
        Ok(())
    }
}

/// Knobs for triple matching and time accumulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripleMatchConfig {
    /// Mixing weights for (keyword, semantic, order) evidence; must sum to 1.
    pub lambda: [f64; 3],
    /// Sigmoid temperature for semantic similarity.
    pub tau: f64,
    /// Temporal decay coefficient for order consistency.
    pub beta: f64,
    pub window_size: usize,
    pub stride: usize,
    /// Geometric decay of the accumulated suspicion score.
    pub accumulation_decay: f64,
}

impl Default for TripleMatchConfig {
    fn default() -> Self {
        Self {
            lambda: [0.4, 0.4, 0.2],
            tau: 4.0,
            beta: 0.5,
            window_size: 6,
            stride: 1,
            accumulation_decay: 0.9,
        }
    }
}

/// Semantic similarity of a window against one pattern, with the window
/// position of the best-matching turn per node (for order scoring).
#[derive(Debug, Clone, PartialEq)]
pub struct SimScore {
    pub score: f64,
    /// For each node, the index within the window of the argmax-cosine turn;
    /// ties resolve to the earliest turn.
    pub node_positions: Vec<usize>,
}

/// Triple-match result for one (window, pattern) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMatch {
    pub window_start: usize,
    pub window_end: usize,
    pub pattern_id: String,
    pub hit: f64,
    pub sim: f64,
    pub order: f64,
    pub score: f64,
}

/// Layer 1 output: the aggregated suspicion score plus full per-window
/// evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer1Result {
    pub r_sar: f64,
    pub per_window: Vec<WindowMatch>,
    /// Accumulated per-turn suspicion series.
    pub accumulated: Vec<f64>,
    pub rba_multiplier: f64,
}

/// Fraction of (turn, keyword) co-occurrences in the window, capped at 1.
pub fn hit_score(window: &Window<'_>, pattern: &Pattern) -> Result<f64> {
    if pattern.keywords.is_empty() {
        return Err(Error::PatternNoKeywords {
            pattern_id: pattern.id.clone(),
        });
    }
    let mut turn_sum = 0.0;
    for turn in window.turns {
        let text = normalize_text(&turn.text);
        let mut keyword_hits = 0usize;
        for keyword in &pattern.keywords {
            if text.contains(keyword.as_str()) {
                keyword_hits += 1;
            }
        }
        turn_sum += keyword_hits as f64 / pattern.keywords.len() as f64;
    }
    Ok((turn_sum / window.turns.len() as f64).min(1.0))
}

/// Mean over nodes of the tempered sigmoid of the best cosine between the
/// node embedding and any turn in the window. Also records where each node
/// matched, for order scoring.
pub fn sim_score(
    window: &Window<'_>,
    pattern: &Pattern,
    embedder: &dyn Embedder,
    tau: f64,
) -> Result<SimScore> {
    if pattern.nodes.is_empty() {
        return Err(Error::PatternNoNodes {
            pattern_id: pattern.id.clone(),
        });
    }
    let turn_vectors = window
        .turns
        .iter()
        .map(|t| embedder.embed(&t.text))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut node_positions = Vec::with_capacity(pattern.nodes.len());
    for node in &pattern.nodes {
        let node_vector = embedder.embed(node)?;
        let mut best = f64::NEG_INFINITY;
        let mut best_position = 0usize;
        for (position, turn_vector) in turn_vectors.iter().enumerate() {
            let c = cosine(turn_vector, &node_vector)?;
            if c > best {
                best = c;
                best_position = position;
            }
        }
        total += scaled_sigmoid(best, tau);
        node_positions.push(best_position);
    }
    Ok(SimScore {
        score: total / pattern.nodes.len() as f64,
        node_positions,
    })
}

/// Fraction of pattern edges whose endpoints matched in the expected order,
/// decayed by the temporal distance between the matches. Vacuously 1 when
/// the pattern has no edges.
pub fn order_score(pattern: &Pattern, node_positions: &[usize], beta: f64) -> f64 {
    if pattern.edges.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for &(u, v) in &pattern.edges {
        let tu = node_positions[u] as f64;
        let tv = node_positions[v] as f64;
        if tu < tv {
            total += (-beta * (tu - tv).abs()).exp();
        }
    }
    total / pattern.edges.len() as f64
}

/// Convex combination of the three evidence scores for one window.
pub fn match_pattern(
    window: &Window<'_>,
    pattern: &Pattern,
    config: &TripleMatchConfig,
    embedder: &dyn Embedder,
) -> Result<WindowMatch> {
    let hit = hit_score(window, pattern)?;
    // Keyword-only patterns (no nodes, hence no edges) carry no semantic
    // evidence: sim contributes 0 and order is vacuously 1.
    let (sim, order) = if pattern.nodes.is_empty() {
        (0.0, 1.0)
    } else {
        let s = sim_score(window, pattern, embedder, config.tau)?;
        let order = order_score(pattern, &s.node_positions, config.beta);
        (s.score, order)
    };
    let [l1, l2, l3] = config.lambda;
    Ok(WindowMatch {
        window_start: window.start,
        window_end: window.end,
        pattern_id: pattern.id.clone(),
        hit,
        sim,
        order,
        score: l1 * hit + l2 * sim + l3 * order,
    })
}

/// Run triple matching over every window and pattern, accumulate suspicion
/// over turns, and scale by the profile's risk tier.
pub fn layer1_assess(
    dialogue: &Dialogue,
    library: &PatternLibrary,
    config: &TripleMatchConfig,
    embedder: &dyn Embedder,
    profile: Option<&UserProfile>,
) -> Result<Layer1Result> {
    if library.patterns.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let windows = segment_windows(dialogue, config.window_size, config.stride)?;
    let mut per_window = Vec::with_capacity(windows.len() * library.patterns.len());
    let mut raw = vec![0.0_f64; dialogue.turns.len()];
    for window in &windows {
        for pattern in &library.patterns {
            let m = match_pattern(window, pattern, config, embedder)?;
            let weighted = pattern.weight * m.score;
            for t in window.start..=window.end {
                if weighted > raw[t] {
                    raw[t] = weighted;
                }
            }
            per_window.push(m);
        }
    }
    let mu = config.accumulation_decay;
    let mut accumulated = Vec::with_capacity(raw.len());
    let mut previous = 0.0_f64;
    for &m in &raw {
        let s = m.max(mu * previous);
        accumulated.push(s);
        previous = s;
    }
    let peak = accumulated.iter().cloned().fold(0.0_f64, f64::max);
    let rba_multiplier = profile.map(|p| p.risk_tier.multiplier()).unwrap_or(1.0);
    Ok(Layer1Result {
        r_sar: (rba_multiplier * peak).clamp(0.0, 1.0),
        per_window,
        accumulated,
        rba_multiplier,
    })
}

/// Layer 1 bundled with its library, config, and embedder, so downstream
/// layers can re-run it on hypothetical continuations.
pub struct Layer1Engine {
    pub library: PatternLibrary,
    pub config: TripleMatchConfig,
    pub embedder: std::sync::Arc<dyn Embedder>,
}

impl Layer1Engine {
    pub fn new(
        library: PatternLibrary,
        config: TripleMatchConfig,
        embedder: std::sync::Arc<dyn Embedder>,
    ) -> Self {
        Self {
            library,
            config,
            embedder,
        }
    }

    pub fn assess(&self, dialogue: &Dialogue, profile: Option<&UserProfile>) -> Result<Layer1Result> {
        layer1_assess(dialogue, &self.library, &self.config, self.embedder.as_ref(), profile)
    }
}
