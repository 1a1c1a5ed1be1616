//! Final evidence selection and packaging.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::scoring::Source;
use crate::segmenter::SegmentNode;
use crate::session::Verification;
use crate::vector::{argmax, cosine_eps};

pub const BELIEF_SELECTED: &str = "belief-selected";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub m: usize,
    pub n_f: usize,
    pub eta: f64,
    pub min_uniform_frames: usize,
    pub dedup_threshold: f64,
    pub relaxed_dedup: f64,
    pub fallback_similarity: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            m: 8,
            n_f: 4,
            eta: 0.2,
            min_uniform_frames: 4,
            dedup_threshold: 0.92,
            relaxed_dedup: 0.95,
            fallback_similarity: 0.90,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must be in (0, 1), got {}", self.eta)));
        }
        if self.m == 0 || self.n_f == 0 {
            return Err(Error::Config("m and n_f must be at least 1".into()));
        }
        for (name, v) in [
            ("dedup_threshold", self.dedup_threshold),
            ("relaxed_dedup", self.relaxed_dedup),
            ("fallback_similarity", self.fallback_similarity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallbackThresholds {
    pub max: f64,
    pub mean: f64,
    pub flat_gap: f64,
}

impl Default for FallbackThresholds {
    fn default() -> Self {
        Self {
            max: 0.4,
            mean: 0.2,
            flat_gap: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    None,
    Uniform,
    Blended,
}

/// Replaces a weak belief (max and mean both under threshold) with uniform
/// mass, and blends a flat belief (max - min under the gap) halfway toward it.
pub fn apply_fallbacks(belief: &[f64], thr: &FallbackThresholds) -> (Vec<f64>, Fallback) {
    let k = belief.len();
    if k == 0 {
        return (Vec::new(), Fallback::None);
    }
    let uniform = 1.0 / k as f64;
    let max = belief.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = belief.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = belief.iter().sum::<f64>() / k as f64;
    if max < thr.max && mean < thr.mean {
        (vec![uniform; k], Fallback::Uniform)
    } else if max - min < thr.flat_gap {
        (belief.iter().map(|f| 0.5 * f + 0.5 * uniform).collect(), Fallback::Blended)
    } else {
        (belief.to_vec(), Fallback::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected nodes in pick order.
    pub nodes: Vec<usize>,
    /// Representative node per facet.
    pub facet_reps: Vec<usize>,
}

/// Facet representatives by `prior_r * F`, then greedy picks by `F'` with
/// neighbors of each greedy pick scaled by `eta`, until `m` nodes are held or
/// no positive belief remains.
pub fn graph_nms(
    belief: &[f64],
    prior_channels: &[Vec<f64>],
    graph: &AffinityGraph,
    m: usize,
    eta: f64,
) -> Result<Selection> {
    let k = graph.k_nodes();
    if belief.len() != k {
        return Err(Error::ShapeError {
            expected: k,
            actual: belief.len(),
        });
    }
    if let Some(c) = prior_channels.iter().find(|c| c.len() != k) {
        return Err(Error::ShapeError {
            expected: k,
            actual: c.len(),
        });
    }
    let mut f = belief.to_vec();
    let mut selected = vec![false; k];
    let mut nodes = Vec::new();
    let mut facet_reps = Vec::with_capacity(prior_channels.len());
    for channel in prior_channels {
        let rep = argmax(channel.iter().zip(&f).map(|(y, x)| y * x)).unwrap_or(0);
        facet_reps.push(rep);
        if !selected[rep] {
            selected[rep] = true;
            nodes.push(rep);
        }
    }
    while nodes.len() < m {
        let masked = f.iter().zip(&selected).map(|(&x, &s)| if s { f64::NAN } else { x });
        let Some(best) = argmax(masked) else { break };
        if f[best] <= 0.0 {
            break;
        }
        selected[best] = true;
        nodes.push(best);
        for (j, w) in graph.neighbors(best) {
            if w > 0.0 {
                f[j] *= eta;
            }
        }
    }
    Ok(Selection { nodes, facet_reps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageEntry {
    pub node: usize,
    pub span: [f64; 2],
    pub frames: Vec<usize>,
    pub text: String,
    /// Evidence source of `text`, or `"belief-selected"` for unobserved nodes.
    pub source: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePackage {
    pub entries: Vec<PackageEntry>,
    pub facet_coverage: BTreeMap<String, usize>,
}

impl EvidencePackage {
    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.frames.len()).sum()
    }

    /// Plain-text rendering used as the answer prompt's frame information.
    pub fn frame_info(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let frames: Vec<String> = e.frames.iter().map(usize::to_string).collect();
                let text = if e.text.is_empty() {
                    String::new()
                } else {
                    format!(" ({}) {}", e.source, e.text)
                };
                format!("\n[{:.1}s-{:.1}s] frames {}:{text}", e.span[0], e.span[1], frames.join(","))
            })
            .collect()
    }
}

/// Item with the best facet score; exact ties go to ocr, then asr, then caption.
fn best_text(v: &Verification) -> Option<(String, Source)> {
    let rank = |s: Source| match s {
        Source::Ocr => 2,
        Source::Asr => 1,
        Source::Caption => 0,
    };
    v.evidence
        .iter()
        .zip(&v.item_scores)
        .filter(|(e, _)| !e.text.trim().is_empty())
        .fold(None::<(&crate::scoring::EvidenceItem, f64)>, |best, (e, &s)| match best {
            Some((b, bs)) if bs > s || (bs == s && rank(b.source) >= rank(e.source)) => Some((b, bs)),
            _ => Some((e, s)),
        })
        .map(|(e, _)| (e.text.clone(), e.source))
}

fn max_similarity<'a>(frame: &[f64], others: impl IntoIterator<Item = &'a Vec<f64>>) -> f64 {
    others
        .into_iter()
        .map(|o| cosine_eps(frame, o, 1e-12))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Frames for one node given frames already kept by earlier nodes.
fn dedup_node_frames(candidates: &[usize], frames: &[Vec<f64>], kept: &[usize], cfg: &SelectionConfig) -> Vec<usize> {
    let need = cfg.n_f.min(cfg.min_uniform_frames).min(candidates.len());
    let mut own: Vec<usize> = Vec::new();
    let global = |own: &[usize], c: usize| {
        max_similarity(&frames[c], kept.iter().chain(own).map(|&i| &frames[i]))
    };
    for &c in candidates {
        if global(&own, c) < cfg.dedup_threshold {
            own.push(c);
        }
    }
    if own.len() < need {
        for &c in candidates {
            if own.len() >= need {
                break;
            }
            if !own.contains(&c) && global(&own, c) < cfg.relaxed_dedup {
                own.push(c);
            }
        }
    }
    if own.is_empty() {
        for &c in candidates {
            if own.len() >= need.max(1) {
                break;
            }
            if max_similarity(&frames[c], own.iter().map(|&i| &frames[i])) < cfg.fallback_similarity {
                own.push(c);
            }
        }
    }
    own.sort_unstable();
    own
}

/// Builds the answerer payload. Nodes are processed in `selection` order for
/// frame deduplication; entries are emitted by start time.
pub fn package_evidence(
    selection: &Selection,
    facet_labels: &[String],
    nodes: &[SegmentNode],
    observations: &HashMap<usize, Verification>,
    frames: &[Vec<f64>],
    belief: &[f64],
    cfg: &SelectionConfig,
) -> Result<EvidencePackage> {
    if selection.nodes.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut entries = Vec::with_capacity(selection.nodes.len());
    for &id in &selection.nodes {
        let node = nodes.get(id).ok_or_else(|| Error::Invariant(format!("selected node {id} out of range")))?;
        if node.end_frame >= frames.len() {
            return Err(Error::Invariant(format!("node {id} frames exceed the frame table")));
        }
        let candidates = node.sample_frames(cfg.n_f);
        let chosen = dedup_node_frames(&candidates, frames, &kept, cfg);
        kept.extend(&chosen);
        let (text, source) = match observations.get(&id).and_then(best_text) {
            Some((t, s)) => (t, s.to_string()),
            None => (String::new(), BELIEF_SELECTED.to_string()),
        };
        entries.push(PackageEntry {
            node: id,
            span: [node.start_time, node.end_time],
            frames: chosen,
            text,
            source,
            score: belief[id],
        });
    }
    entries.sort_by(|a, b| a.span[0].total_cmp(&b.span[0]).then(a.node.cmp(&b.node)));
    let facet_coverage = facet_labels
        .iter()
        .cloned()
        .zip(selection.facet_reps.iter().copied())
        .collect();
    Ok(EvidencePackage {
        entries,
        facet_coverage,
    })
}
