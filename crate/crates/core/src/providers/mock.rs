//! Deterministic stand-ins for every provider. Each response is a pure
//! function of the request and, where randomness is involved, a seed.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    AnswerRequest, Answerer, JointEncoder, Observer, ObserverRequest, PlanRequest, Planner, ProviderError,
    TextEncoder, TimelineProvider, TimelineRequest,
};
use crate::text::{content_words, tokenize};

fn seed_from(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Bag-of-stems embedder: each stem maps to a fixed Gaussian direction and a
/// text embeds as the normalized sum. Texts sharing stems are correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"token", token.as_bytes()]));
        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in tokenize(text) {
            for (a, x) in acc.iter_mut().zip(self.token_vector(&t)) {
                *a += x;
            }
        }
        crate::vector::normalized(&acc).unwrap_or(acc)
    }
}

impl TextEncoder for HashEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.embed(text))
    }
}

impl JointEncoder for HashEmbedder {
    fn embed_joint(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.embed(text))
    }
}

/// Planner that replays a fixed decomposition, or derives one from the query
/// and options when none is scripted.
#[derive(Debug, Clone, Default)]
pub struct MockPlanner {
    pub scripted: Option<String>,
}

impl MockPlanner {
    pub fn scripted(raw: impl Into<String>) -> Self {
        Self {
            scripted: Some(raw.into()),
        }
    }

    pub fn derive(query: &str, options: &[String]) -> String {
        let letters = super::option_letters(options.len());
        let option_keywords: serde_json::Map<String, serde_json::Value> = letters
            .iter()
            .zip(options)
            .map(|(l, o)| (l.clone(), json!(content_words(o).into_iter().take(5).collect::<Vec<_>>())))
            .collect();
        let semantic_queries: serde_json::Map<String, serde_json::Value> = letters
            .iter()
            .zip(options)
            .map(|(l, o)| (l.clone(), json!(o.trim())))
            .collect();
        json!({
            "query_keywords": content_words(query).into_iter().take(5).collect::<Vec<_>>(),
            "option_keywords": option_keywords,
            "semantic_queries": semantic_queries,
            "general_semantic_query": query.trim(),
            "temporal_plan": "scan the video in temporal order",
            "vlm_query": query.trim(),
        })
        .to_string()
    }
}

impl Planner for MockPlanner {
    fn plan(&self, request: &PlanRequest) -> Result<String, ProviderError> {
        Ok(match &self.scripted {
            Some(raw) => raw.clone(),
            None => Self::derive(&request.query, &request.options),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTimelineItem {
    pub start: f64,
    pub end: f64,
    pub description: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockTimeline {
    pub items: Vec<ScriptedTimelineItem>,
}

impl TimelineProvider for MockTimeline {
    fn timeline(&self, _: &TimelineRequest) -> Result<String, ProviderError> {
        Ok(serde_json::to_string(&self.items).expect("timeline items serialize"))
    }
}

/// One scripted observation, triggered when any requested frame falls in
/// `[first_frame, last_frame]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub first_frame: usize,
    pub last_frame: usize,
    pub caption: String,
    #[serde(default)]
    pub needs_more: bool,
    #[serde(default)]
    pub missing_keyword: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverScenario {
    pub entries: Vec<ScenarioEntry>,
    pub default_caption: String,
    #[serde(default = "default_true")]
    pub default_needs_more: bool,
    /// Probability that a scripted entry is replaced by the default response.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for ObserverScenario {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            default_caption: "an ordinary scene with nothing notable".into(),
            default_needs_more: true,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Default)]
pub struct MockObserver {
    pub scenario: ObserverScenario,
    calls: AtomicUsize,
}

impl MockObserver {
    pub fn new(scenario: ObserverScenario) -> Self {
        Self {
            scenario,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn respond(&self, request: &ObserverRequest) -> (String, bool, String) {
        let s = &self.scenario;
        let hit = s.entries.iter().find(|e| {
            request
                .frames
                .iter()
                .any(|f| (e.first_frame..=e.last_frame).contains(&f.frame_index))
        });
        let corrupted = hit.is_some() && s.noise > 0.0 && {
            let frames: Vec<u8> = request
                .frames
                .iter()
                .flat_map(|f| (f.frame_index as u64).to_le_bytes())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[&s.seed.to_le_bytes(), &frames]));
            rng.random::<f64>() < s.noise
        };
        match hit {
            Some(e) if !corrupted => (e.caption.clone(), e.needs_more, e.missing_keyword.clone()),
            _ => {
                let missing = request.focus_keywords.first().cloned().unwrap_or_default();
                (s.default_caption.clone(), s.default_needs_more, missing)
            }
        }
    }
}

impl Observer for MockObserver {
    fn observe(&self, request: &ObserverRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (caption, needs_more, missing) = self.respond(request);
        Ok(json!({
            "reasoning": format!("inspected {} frames", request.frames.len()),
            "caption": caption,
            "refinement_plan": {"needs_more_info": needs_more, "missing_visual_keyword": missing},
        })
        .to_string())
    }
}

/// Picks the option whose content words overlap most with the package texts.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAnswerer;

impl Answerer for MockAnswerer {
    fn answer(&self, request: &AnswerRequest) -> Result<String, ProviderError> {
        let evidence: Vec<String> = request.package["entries"]
            .as_array()
            .map(|entries| {
                entries
                    .iter()
                    .filter_map(|e| e["text"].as_str())
                    .flat_map(tokenize)
                    .collect()
            })
            .unwrap_or_default();
        if request.options.is_empty() {
            return Ok(format!(
                "Analysis: {} evidence terms.\nFinal Answer: {}\nReason: free-form query.",
                evidence.len(),
                evidence.first().map_or("unknown", String::as_str)
            ));
        }
        let letters = super::option_letters(request.options.len());
        let mut best = (0usize, 0usize);
        for (i, option) in request.options.iter().enumerate() {
            let overlap = tokenize(option).iter().filter(|t| evidence.contains(t)).count();
            if overlap > best.1 {
                best = (i, overlap);
            }
        }
        Ok(format!(
            "Analysis: option {} shares {} terms with the evidence.\nFinal Answer: {}\nReason: strongest textual overlap.",
            letters[best.0], best.1, letters[best.0]
        ))
    }
}

/// Provider that fails a fixed number of times before delegating.
pub struct Flaky<P> {
    pub inner: P,
    pub failures: usize,
    seen: AtomicUsize,
}

impl<P> Flaky<P> {
    pub fn new(inner: P, failures: usize) -> Self {
        Self {
            inner,
            failures,
            seen: AtomicUsize::new(0),
        }
    }

    fn gate(&self, name: &str) -> Result<(), ProviderError> {
        let n = self.seen.fetch_add(1, Ordering::Relaxed);
        if n < self.failures {
            Err(ProviderError::transport(name, format!("scripted failure {}", n + 1)))
        } else {
            Ok(())
        }
    }
}

impl<P: Observer> Observer for Flaky<P> {
    fn observe(&self, request: &ObserverRequest) -> Result<String, ProviderError> {
        self.gate("observer")?;
        self.inner.observe(request)
    }
}

impl<P: Planner> Planner for Flaky<P> {
    fn plan(&self, request: &PlanRequest) -> Result<String, ProviderError> {
        self.gate("planner")?;
        self.inner.plan(request)
    }
}

#[cfg(test)]
mod tests {
    use super::super::FrameRef;
    use super::*;
    use crate::vector::{dot, is_unit};

    fn request(frames: &[usize]) -> ObserverRequest {
        ObserverRequest {
            system: String::new(),
            user: String::new(),
            frames: frames
                .iter()
                .map(|&i| FrameRef {
                    bundle_id: "v".into(),
                    frame_index: i,
                })
                .collect(),
            query: "q".into(),
            focus_keywords: vec!["lighthouse".into()],
            focus_semantic_queries: vec![],
        }
    }

    #[test]
    fn embedder_is_deterministic_and_unit() {
        let e = HashEmbedder::new(32);
        let a = e.embed("A lighthouse at dusk");
        assert_eq!(a, e.embed("lighthouses, dusk!"));
        assert!(is_unit(&a, 1e-9));
        assert!(e.embed("the of and").iter().all(|&x| x == 0.0));
        let b = e.embed("a harbor at dawn");
        assert!(dot(&a, &b).abs() < 0.9);
    }

    #[test]
    fn scripted_observer() {
        let obs = MockObserver::new(ObserverScenario {
            entries: vec![ScenarioEntry {
                first_frame: 10,
                last_frame: 19,
                caption: "a lighthouse on the cliff".into(),
                needs_more: false,
                missing_keyword: String::new(),
            }],
            ..Default::default()
        });
        let hit = super::super::parse_observer_response(&obs.observe(&request(&[12, 14])).unwrap()).unwrap();
        assert_eq!(hit.caption, "a lighthouse on the cliff");
        assert!(!hit.needs_more_info);
        let miss = super::super::parse_observer_response(&obs.observe(&request(&[30])).unwrap()).unwrap();
        assert!(miss.needs_more_info);
        assert_eq!(miss.missing_visual_keyword, "lighthouse");
        assert_eq!(obs.calls(), 2);
    }

    #[test]
    fn noisy_observer_is_reproducible() {
        let scenario = ObserverScenario {
            entries: (0..50)
                .map(|i| ScenarioEntry {
                    first_frame: i * 10,
                    last_frame: i * 10 + 9,
                    caption: format!("clue {i}"),
                    needs_more: false,
                    missing_keyword: String::new(),
                })
                .collect(),
            noise: 0.5,
            seed: 7,
            ..Default::default()
        };
        let a = MockObserver::new(scenario.clone());
        let b = MockObserver::new(scenario);
        let run = |o: &MockObserver| -> Vec<String> {
            (0..50).map(|i| o.observe(&request(&[i * 10 + 3])).unwrap()).collect()
        };
        let ra = run(&a);
        assert_eq!(ra, run(&b));
        let corrupted = ra.iter().filter(|r| r.contains("ordinary")).count();
        assert!(corrupted > 5 && corrupted < 45, "{corrupted}");
    }

    #[test]
    fn answerer_prefers_overlap() {
        let req = AnswerRequest {
            system: String::new(),
            user: String::new(),
            query: "q".into(),
            options: vec!["a red car".into(), "a lighthouse".into()],
            package: json!({"entries": [{"text": "the lighthouse glows"}]}),
        };
        let raw = MockAnswerer.answer(&req).unwrap();
        assert_eq!(super::super::parse_final_answer(&raw).unwrap(), 'B');
    }

    #[test]
    fn derived_plan_parses() {
        let raw = MockPlanner::derive("What color is the boat?", &["red".into(), "blue".into()]);
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["option_keywords"]["B"][0], "blue");
        assert_eq!(v["query_keywords"], json!(["color", "boat"]));
    }
}
