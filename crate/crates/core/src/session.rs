//! The budgeted observe-inject-diffuse loop.
//!
//! While some facet is unresolved, anchors are chosen per facet (round-robin):
//! first the facet's prior peak, then the strongest unvisited graph neighbor of
//! the facet's last anchor weighted by current belief. Once every facet is
//! resolved, or no neighbor is left, the highest-belief unvisited node is
//! observed instead. Each verified score is written into the otherwise-zero
//! injection at that node and the belief is refreshed by a warm-started
//! diffusion.

use serde::{Deserialize, Serialize};

use crate::diffusion::{warm_start_diffuse, DiffusionParams};
use crate::error::{Error, Result};
use crate::facets::{PriorChannels, QueryFacets};
use crate::graph::AffinityGraph;
use crate::providers::{prompts, FrameRef, ObserverRequest, ProviderSet};
use crate::scoring::{texts_in_span, EvidenceItem, FacetScorer, Source, TimedText};
use crate::segmenter::SegmentNode;
use crate::vector::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub base_budget: usize,
    pub steps_per_extra_option: usize,
    pub window_frames: usize,
    pub retry_threshold: f64,
    pub fallback_max_threshold: f64,
    pub fallback_mean_threshold: f64,
    pub flat_gap_threshold: f64,
    /// Diffuse after each observation; `false` keeps `F = Y`.
    pub propagate: bool,
    /// Steer anchors by facet; `false` gap-fills from the first iteration.
    pub facet_steering: bool,
    pub diffusion: DiffusionParams,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            base_budget: 10,
            steps_per_extra_option: 1,
            window_frames: 9,
            retry_threshold: 0.2,
            fallback_max_threshold: 0.4,
            fallback_mean_threshold: 0.2,
            flat_gap_threshold: 0.15,
            propagate: true,
            facet_steering: true,
            diffusion: DiffusionParams::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.window_frames == 0 {
            return Err(Error::Config("window_frames must be at least 1".into()));
        }
        for (name, v) in [
            ("retry_threshold", self.retry_threshold),
            ("fallback_max_threshold", self.fallback_max_threshold),
            ("fallback_mean_threshold", self.fallback_mean_threshold),
            ("flat_gap_threshold", self.flat_gap_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        self.diffusion.validate()
    }

    pub fn total_budget(&self, num_options: usize) -> usize {
        self.base_budget + self.steps_per_extra_option * num_options.saturating_sub(4)
    }
}

/// Budget with one extra step per option beyond the usual four.
pub fn total_budget(base: usize, num_options: usize) -> usize {
    base + num_options.saturating_sub(4)
}

/// Strongest unvisited neighbor `j` of `anchor` by `W_ij * F_j`; ties to the lower id.
pub fn select_neighbor_anchor(
    graph: &AffinityGraph,
    anchor: usize,
    belief: &[f64],
    visited: &[bool],
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, w) in graph.neighbors(anchor) {
        if visited[j] || w <= 0.0 {
            continue;
        }
        let gain = w * belief[j];
        match best {
            Some((bj, bg)) if gain < bg || (gain == bg && j > bj) => {}
            _ => best = Some((j, gain)),
        }
    }
    best.map(|(j, _)| j)
}

/// Highest-belief unvisited node; ties to the lower id.
pub fn select_gap_fill_anchor(belief: &[f64], visited: &[bool]) -> Option<usize> {
    let masked = belief
        .iter()
        .zip(visited)
        .map(|(&f, &v)| if v { f64::NAN } else { f });
    argmax(masked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Init,
    Neighbor,
    Gap,
}

/// Outcome of observing one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub caption: String,
    pub needs_more_info: bool,
    pub missing_visual_keyword: String,
    pub evidence: Vec<EvidenceItem>,
    pub score: f64,
    pub best_facet: usize,
    /// Best fused score per facet.
    pub facet_scores: Vec<f64>,
    /// Best fused score per evidence item, aligned with `evidence`.
    pub item_scores: Vec<f64>,
}

pub trait Verifier {
    /// Observes `node`, focusing on `facet` when one is scheduled.
    fn verify(&mut self, node: usize, facet: Option<usize>) -> Result<Verification>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationResult {
    pub iteration: usize,
    pub node_id: usize,
    pub policy: Policy,
    pub facet: Option<usize>,
    pub score: f64,
    /// `None` when the provider failed after all retries.
    pub verification: Option<Verification>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub anchor: usize,
    pub policy: Policy,
    pub facet: Option<String>,
    pub score: f64,
    pub resolved_facets: Vec<String>,
    pub belief_top5: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub belief: Vec<f64>,
    pub injection: Vec<f64>,
    pub visited: Vec<bool>,
    pub resolved: Vec<bool>,
    pub observations: Vec<ObservationResult>,
    pub trace: Vec<TraceRecord>,
    pub budget: usize,
}

/// Indices of the `n` largest beliefs with their values, ties to the lower id.
pub fn top_beliefs(belief: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..belief.len()).collect();
    idx.sort_by(|&a, &b| belief[b].total_cmp(&belief[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).map(|i| (i, belief[i])).collect()
}

/// Runs the loop for at most `budget` observations. `F` starts at the fused
/// prior and `Y` at zero; each observation sets `Y` at the observed node.
pub fn run_session(
    graph: &AffinityGraph,
    priors: &PriorChannels,
    facet_labels: &[String],
    verifier: &mut dyn Verifier,
    cfg: &LoopConfig,
    budget: usize,
) -> Result<SessionOutcome> {
    cfg.validate()?;
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let k = graph.k_nodes();
    if priors.k_nodes() != k {
        return Err(Error::ShapeError {
            expected: k,
            actual: priors.k_nodes(),
        });
    }
    let r_count = priors.channels.len();
    if facet_labels.len() != r_count {
        return Err(Error::ShapeError {
            expected: r_count,
            actual: facet_labels.len(),
        });
    }

    let mut injection = vec![0.0; k];
    let mut belief = priors.fused.clone();
    let mut visited = vec![false; k];
    let mut resolved = vec![!cfg.facet_steering; r_count];
    let init_anchor: Vec<usize> = (0..r_count).map(|r| priors.initial_anchor(r)).collect();
    let mut last_anchor: Vec<Option<usize>> = vec![None; r_count];
    let mut cursor = 0usize;
    let mut observations = Vec::new();
    let mut trace = Vec::new();

    for t in 1..=budget {
        let all_visited = visited.iter().all(|&v| v);
        if all_visited {
            break;
        }
        let pending = (0..r_count)
            .map(|o| (cursor + o) % r_count.max(1))
            .find(|&r| !resolved[r]);
        let (anchor, policy, facet) = match pending {
            Some(r) => {
                cursor = r + 1;
                let choice = if last_anchor[r].is_none() && !visited[init_anchor[r]] {
                    Some((init_anchor[r], Policy::Init))
                } else {
                    let base = last_anchor[r].unwrap_or(init_anchor[r]);
                    select_neighbor_anchor(graph, base, &belief, &visited).map(|j| (j, Policy::Neighbor))
                };
                match choice {
                    Some((i, p)) => (i, p, Some(r)),
                    None => match select_gap_fill_anchor(&belief, &visited) {
                        Some(i) => (i, Policy::Gap, Some(r)),
                        None => break,
                    },
                }
            }
            None => match select_gap_fill_anchor(&belief, &visited) {
                Some(i) => (i, Policy::Gap, None),
                None => break,
            },
        };

        let (score, verification, error) = match verifier.verify(anchor, facet) {
            Ok(v) => (v.score, Some(v), None),
            Err(Error::Provider(e)) => {
                log::warn!("observation of node {anchor} failed: {e}");
                (0.0, None, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Invariant(format!("observation score {score} outside [0, 1]")));
        }

        injection[anchor] = score;
        visited[anchor] = true;
        if let Some(r) = facet {
            last_anchor[r] = Some(anchor);
            if let Some(v) = &verification {
                if !v.needs_more_info && v.facet_scores.get(r).copied().unwrap_or(0.0) >= cfg.retry_threshold {
                    resolved[r] = true;
                }
            }
        }
        belief = if cfg.propagate {
            warm_start_diffuse(graph, &belief, &injection, &cfg.diffusion)?.belief
        } else {
            injection.clone()
        };

        trace.push(TraceRecord {
            iteration: t,
            anchor,
            policy,
            facet: facet.map(|r| facet_labels[r].clone()),
            score,
            resolved_facets: (0..r_count)
                .filter(|&r| resolved[r] && cfg.facet_steering)
                .map(|r| facet_labels[r].clone())
                .collect(),
            belief_top5: top_beliefs(&belief, 5),
        });
        observations.push(ObservationResult {
            iteration: t,
            node_id: anchor,
            policy,
            facet,
            score,
            verification,
            error,
        });
    }

    Ok(SessionOutcome {
        belief,
        injection,
        visited,
        resolved,
        observations,
        trace,
        budget,
    })
}

/// Observes through the observer provider and scores the caption together
/// with on-screen text and transcript lines overlapping the segment.
pub struct EvidenceVerifier<'a> {
    pub providers: &'a ProviderSet,
    pub scorer: &'a FacetScorer,
    pub facets: &'a QueryFacets,
    pub nodes: &'a [SegmentNode],
    pub bundle_id: &'a str,
    pub screen_text: &'a [TimedText],
    pub transcripts: &'a [TimedText],
    pub window_frames: usize,
}

impl EvidenceVerifier<'_> {
    fn focus(&self, facet: Option<usize>) -> (Vec<String>, Vec<String>) {
        let chosen: Vec<_> = match facet {
            Some(r) => vec![&self.facets.facets[r]],
            None => self.facets.facets.iter().collect(),
        };
        let mut keywords: Vec<String> = Vec::new();
        let mut descriptions: Vec<String> = Vec::new();
        for f in chosen {
            for k in &f.keywords {
                if !keywords.contains(k) {
                    keywords.push(k.clone());
                }
            }
            for d in &f.descriptions {
                if !descriptions.contains(d) {
                    descriptions.push(d.clone());
                }
            }
        }
        (keywords, descriptions)
    }
}

impl Verifier for EvidenceVerifier<'_> {
    fn verify(&mut self, node: usize, facet: Option<usize>) -> Result<Verification> {
        let n = &self.nodes[node];
        let (keywords, descriptions) = self.focus(facet);
        let prompt = prompts::observer_prompt(&self.facets.vlm_query, &keywords, &descriptions);
        let request = ObserverRequest {
            system: prompt.system,
            user: prompt.user,
            frames: n
                .sample_frames(self.window_frames)
                .into_iter()
                .map(|i| FrameRef {
                    bundle_id: self.bundle_id.to_string(),
                    frame_index: i,
                })
                .collect(),
            query: self.facets.vlm_query.clone(),
            focus_keywords: keywords,
            focus_semantic_queries: descriptions,
        };
        let response = self.providers.observe(&request)?;
        let mut evidence = vec![EvidenceItem {
            source: Source::Caption,
            text: response.caption.clone(),
            node_id: node,
        }];
        for (source, track) in [(Source::Ocr, self.screen_text), (Source::Asr, self.transcripts)] {
            let text = texts_in_span(track, n.start_time, n.end_time);
            if !text.is_empty() {
                evidence.push(EvidenceItem {
                    source,
                    text,
                    node_id: node,
                });
            }
        }
        let ns = self.scorer.node_score(&evidence, self.providers)?;
        Ok(Verification {
            caption: response.caption,
            needs_more_info: response.needs_more_info,
            missing_visual_keyword: response.missing_visual_keyword,
            evidence,
            score: ns.score.clamp(0.0, 1.0),
            best_facet: ns.best_facet,
            facet_scores: ns.facet_scores,
            item_scores: ns.item_scores,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphConfig;
    use crate::providers::ProviderError;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Scores looked up by node; nodes listed in `fail` raise a provider error.
    struct Table {
        scores: HashMap<usize, f64>,
        needs_more: bool,
        fail: Vec<usize>,
        facets: usize,
        calls: Vec<(usize, Option<usize>)>,
    }

    impl Table {
        fn new(scores: &[(usize, f64)], facets: usize) -> Self {
            Self {
                scores: scores.iter().copied().collect(),
                needs_more: false,
                fail: vec![],
                facets,
                calls: vec![],
            }
        }
    }

    impl Verifier for Table {
        fn verify(&mut self, node: usize, facet: Option<usize>) -> Result<Verification> {
            self.calls.push((node, facet));
            if self.fail.contains(&node) {
                return Err(ProviderError::transport("observer", "down").into());
            }
            let s = self.scores.get(&node).copied().unwrap_or(0.0);
            Ok(Verification {
                caption: String::new(),
                needs_more_info: self.needs_more,
                missing_visual_keyword: String::new(),
                evidence: vec![],
                score: s,
                best_facet: 0,
                facet_scores: vec![s; self.facets],
                item_scores: vec![],
            })
        }
    }

    fn chain(k: usize) -> AffinityGraph {
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k.saturating_sub(1) {
            m[(i, i + 1)] = 1.0;
            m[(i + 1, i)] = 1.0;
        }
        AffinityGraph::from_fused(&m, 2).unwrap()
    }

    fn priors(channels: Vec<Vec<f64>>) -> PriorChannels {
        PriorChannels::from_channels(channels).unwrap()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|r| format!("f{r}")).collect()
    }

    #[test]
    fn budget_rule() {
        assert_eq!(total_budget(10, 4), 10);
        assert_eq!(total_budget(10, 6), 12);
        assert_eq!(total_budget(10, 0), 10);
        assert_eq!(LoopConfig::default().total_budget(5), 11);
    }

    #[test]
    fn gap_fill_examples() {
        assert_eq!(select_gap_fill_anchor(&[0.9, 0.5, 0.7], &[true, false, false]), Some(2));
        assert_eq!(select_gap_fill_anchor(&[0.9, 0.5], &[true, true]), None);
        assert_eq!(select_gap_fill_anchor(&[0.4, 0.4, 0.4], &[false, false, false]), Some(0));
        assert_eq!(select_gap_fill_anchor(&[0.0, 0.0], &[false, false]), Some(0));
    }

    #[test]
    fn neighbor_examples() {
        let mut m = DMatrix::zeros(8, 8);
        for (j, w) in [(3, 0.5), (7, 0.3)] {
            m[(0, j)] = w;
            m[(j, 0)] = w;
        }
        let g = AffinityGraph::from_fused(&m, 8).unwrap();
        let mut belief = vec![0.0; 8];
        belief[3] = 0.2;
        belief[7] = 0.9;
        let mut visited = vec![false; 8];
        assert_eq!(select_neighbor_anchor(&g, 0, &belief, &visited), Some(7));
        visited[7] = true;
        assert_eq!(select_neighbor_anchor(&g, 0, &belief, &visited), Some(3));
        visited[3] = true;
        assert_eq!(select_neighbor_anchor(&g, 0, &belief, &visited), None);
    }

    #[test]
    fn planted_node_resolves_in_first_iteration() {
        let g = chain(6);
        let p = priors(vec![vec![0.1, 0.2, 0.1, 0.9, 0.1, 0.0]]);
        let mut v = Table::new(&[(3, 1.0)], 1);
        let out = run_session(&g, &p, &labels(1), &mut v, &LoopConfig::default(), 4).unwrap();
        assert_eq!(out.trace[0].anchor, 3);
        assert_eq!(out.trace[0].policy, Policy::Init);
        assert_eq!(out.trace[0].resolved_facets, vec!["f0"]);
        assert!(out.trace[1..].iter().all(|t| t.policy == Policy::Gap && t.facet.is_none()));
        assert_eq!(out.observations.len(), 4);
    }

    #[test]
    fn never_resolving_consumes_budget() {
        let g = chain(12);
        let p = priors(vec![vec![0.5; 12], vec![0.2; 12]]);
        let mut v = Table::new(&[(0, 1.0)], 2);
        v.needs_more = true;
        let out = run_session(&g, &p, &labels(2), &mut v, &LoopConfig::default(), 7).unwrap();
        assert_eq!(out.observations.len(), 7);
        assert!(out.resolved.iter().all(|r| !r));
        let facets: Vec<_> = out.observations.iter().map(|o| o.facet).collect();
        assert_eq!(&facets[..4], &[Some(0), Some(1), Some(0), Some(1)]);
    }

    #[test]
    fn budget_one_and_failures() {
        let g = chain(5);
        let p = priors(vec![vec![0.0, 0.0, 0.7, 0.0, 0.0]]);
        let mut v = Table::new(&[(2, 0.8)], 1);
        let out = run_session(&g, &p, &labels(1), &mut v, &LoopConfig::default(), 1).unwrap();
        assert_eq!(v.calls, vec![(2, Some(0))]);
        assert_eq!(out.injection[2], 0.8);

        let mut failing = Table::new(&[], 1);
        failing.fail = vec![2];
        let out = run_session(&g, &p, &labels(1), &mut failing, &LoopConfig::default(), 3).unwrap();
        assert_eq!(out.observations.len(), 3);
        assert_eq!(out.injection[2], 0.0);
        assert!(out.observations[0].error.is_some());
        assert!(run_session(&g, &p, &labels(1), &mut failing, &LoopConfig::default(), 0).is_err());
    }

    #[test]
    fn stops_when_everything_is_visited() {
        let g = chain(3);
        let p = priors(vec![vec![0.3, 0.2, 0.1]]);
        let mut v = Table::new(&[], 1);
        let out = run_session(&g, &p, &labels(1), &mut v, &LoopConfig::default(), 10).unwrap();
        assert_eq!(out.observations.len(), 3);
        assert!(out.visited.iter().all(|&x| x));
    }

    #[test]
    fn without_propagation_belief_is_injection() {
        let g = chain(6);
        let p = priors(vec![vec![0.1, 0.2, 0.1, 0.9, 0.1, 0.0]]);
        let cfg = LoopConfig {
            propagate: false,
            ..Default::default()
        };
        let mut v = Table::new(&[(3, 1.0)], 1);
        let out = run_session(&g, &p, &labels(1), &mut v, &cfg, 3).unwrap();
        assert_eq!(out.belief, out.injection);
    }

    proptest! {
        #[test]
        fn loop_invariants(
            k in 2usize..30,
            r in 1usize..4,
            budget in 1usize..15,
            seed in any::<u64>(),
            needs_more in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let feats: Vec<Vec<f64>> = (0..k).map(|_| {
                let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                crate::vector::normalized(&v).unwrap_or(vec![1.0, 0.0, 0.0, 0.0])
            }).collect();
            let times: Vec<f64> = (0..k).map(|i| i as f64 * 10.0).collect();
            let g = AffinityGraph::build(&feats, &times, &GraphConfig::default()).unwrap();
            let p = priors((0..r).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect());
            let scores: Vec<(usize, f64)> = (0..k).map(|i| (i, rng.random::<f64>())).collect();
            let mut v = Table::new(&scores, r);
            v.needs_more = needs_more;
            let out = run_session(&g, &p, &labels(r), &mut v, &LoopConfig::default(), budget).unwrap();
            prop_assert!(out.observations.len() <= budget);
            let mut seen = std::collections::HashSet::new();
            for o in &out.observations {
                prop_assert!(seen.insert(o.node_id));
                prop_assert_eq!(out.injection[o.node_id], o.score);
            }
            for i in 0..k {
                prop_assert_eq!(out.visited[i], seen.contains(&i));
                if !out.visited[i] {
                    prop_assert_eq!(out.injection[i], 0.0);
                }
            }
            prop_assert!(out.belief.iter().all(|f| f.is_finite() && *f >= 0.0));
        }
    }
}
