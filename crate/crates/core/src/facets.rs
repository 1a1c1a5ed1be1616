//! Query facets, the coarse event timeline, and prior relevance per facet.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::providers::{json_object_span, option_letters, JointEncoder, ProviderError, TextEncoder};
use crate::segmenter::SegmentNode;
use crate::text::content_words;
use crate::vector::{argmax, cosine_eps, dot};

pub const DEFAULT_ALPHA_ROUTE: f64 = 0.5;
pub const GENERAL_LABEL: &str = "general";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub label: String,
    pub keywords: Vec<String>,
    pub descriptions: Vec<String>,
}

impl Facet {
    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty() && self.descriptions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFacets {
    pub facets: Vec<Facet>,
    pub vlm_query: String,
    pub temporal_plan: String,
}

impl QueryFacets {
    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.facets.iter().map(|f| f.label.clone()).collect()
    }
}

/// Planner output as sent, before facets are assembled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decomposition {
    pub query_keywords: Vec<String>,
    pub option_keywords: Vec<(String, Vec<String>)>,
    pub semantic_queries: Vec<(String, Vec<String>)>,
    pub general_semantic_query: String,
    pub temporal_plan: String,
    pub vlm_query: String,
}

fn strings(v: Option<&Value>) -> Vec<String> {
    let raw: Vec<&str> = match v {
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    };
    let mut out: Vec<String> = Vec::new();
    for s in raw {
        let s = s.trim();
        if !s.is_empty() && !out.iter().any(|o| o.eq_ignore_ascii_case(s)) {
            out.push(s.to_string());
        }
    }
    out
}

fn string(v: Option<&Value>) -> String {
    v.and_then(Value::as_str).map(|s| s.trim().to_string()).unwrap_or_default()
}

fn keyed(v: Option<&Value>) -> Vec<(String, Vec<String>)> {
    match v {
        Some(Value::Object(map)) => map
            .iter()
            .map(|(k, v)| (k.trim().to_ascii_uppercase(), strings(Some(v))))
            .collect(),
        _ => Vec::new(),
    }
}

/// Parses the planner reply. Fences and surrounding prose are tolerated;
/// missing or mistyped fields read as empty.
pub fn parse_decomposition_json(raw: &str) -> Result<Decomposition, ProviderError> {
    let body = json_object_span(raw).ok_or_else(|| ProviderError::malformed("planner", "no JSON object"))?;
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::malformed("planner", e.to_string()))?;
    if !v.is_object() {
        return Err(ProviderError::malformed("planner", "top level is not an object"));
    }
    Ok(Decomposition {
        query_keywords: strings(v.get("query_keywords")),
        option_keywords: keyed(v.get("option_keywords")),
        semantic_queries: keyed(v.get("semantic_queries")),
        general_semantic_query: string(v.get("general_semantic_query")),
        temporal_plan: string(v.get("temporal_plan")),
        vlm_query: string(v.get("vlm_query")),
    })
}

fn lookup<'a>(entries: &'a [(String, Vec<String>)], letter: &str) -> &'a [String] {
    entries
        .iter()
        .find(|(k, _)| k == letter)
        .map_or(&[], |(_, v)| v.as_slice())
}

/// One facet per provided option (in letter order), then the general facet.
/// Empty option facets fall back to the option text's content words and are
/// dropped if that is empty too; an empty general facet falls back to the
/// query's content words.
pub fn build_facets(d: &Decomposition, query: &str, options: &[String]) -> Result<QueryFacets> {
    let mut facets = Vec::with_capacity(options.len() + 1);
    for (letter, option) in option_letters(options.len()).into_iter().zip(options) {
        let mut facet = Facet {
            keywords: lookup(&d.option_keywords, &letter).to_vec(),
            descriptions: lookup(&d.semantic_queries, &letter).to_vec(),
            label: letter,
        };
        if facet.is_empty() {
            facet.keywords = content_words(option);
        }
        if !facet.is_empty() {
            facets.push(facet);
        }
    }
    let mut general = Facet {
        label: GENERAL_LABEL.to_string(),
        keywords: d.query_keywords.clone(),
        descriptions: if d.general_semantic_query.is_empty() {
            Vec::new()
        } else {
            vec![d.general_semantic_query.clone()]
        },
    };
    if general.is_empty() {
        let mut words = content_words(query);
        words.dedup();
        general.keywords = words;
    }
    if general.is_empty() {
        return Err(Error::InvalidQuery(format!("no content words in {query:?}")));
    }
    facets.push(general);
    Ok(QueryFacets {
        facets,
        vlm_query: if d.vlm_query.is_empty() {
            query.trim().to_string()
        } else {
            d.vlm_query.clone()
        },
        temporal_plan: d.temporal_plan.clone(),
    })
}

pub fn parse_decomposition(raw: &str, query: &str, options: &[String]) -> Result<QueryFacets> {
    let d = parse_decomposition_json(raw).map_err(|e| Error::Decomposition(e.to_string()))?;
    build_facets(&d, query, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineItem {
    pub span: [f64; 2],
    pub description: String,
}

impl TimelineItem {
    fn midpoint(&self) -> f64 {
        0.5 * (self.span[0] + self.span[1])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    pub items: Vec<TimelineItem>,
}

fn item_from(v: &Value) -> Option<TimelineItem> {
    let (start, end) = match v.get("span").and_then(Value::as_array) {
        Some(span) if span.len() == 2 => (span[0].as_f64()?, span[1].as_f64()?),
        _ => (v.get("start")?.as_f64()?, v.get("end")?.as_f64()?),
    };
    let description = v.get("description")?.as_str()?.trim().to_string();
    (start.is_finite() && end.is_finite() && start <= end).then_some(TimelineItem {
        span: [start, end],
        description,
    })
}

impl EventTimeline {
    /// Accepts a JSON list of `{start, end, description}` (or `{span, description}`),
    /// bare or wrapped in an object under `timeline`, `items` or `events`.
    /// Spans are clipped to `[0, duration]` and items sorted by start.
    pub fn parse(raw: &str, duration: f64) -> Result<Self, ProviderError> {
        const P: &str = "timeline";
        let trimmed = raw.trim();
        let start = trimmed.find(['[', '{']).ok_or_else(|| ProviderError::malformed(P, "no JSON"))?;
        let end = trimmed.rfind([']', '}']).ok_or_else(|| ProviderError::malformed(P, "no JSON"))?;
        if end < start {
            return Err(ProviderError::malformed(P, "no JSON"));
        }
        let v: Value =
            serde_json::from_str(&trimmed[start..=end]).map_err(|e| ProviderError::malformed(P, e.to_string()))?;
        let list = match &v {
            Value::Array(a) => a,
            Value::Object(o) => ["timeline", "items", "events"]
                .iter()
                .find_map(|k| o.get(*k).and_then(Value::as_array))
                .ok_or_else(|| ProviderError::malformed(P, "object without a timeline list"))?,
            _ => return Err(ProviderError::malformed(P, "expected a list")),
        };
        let mut items = Vec::with_capacity(list.len());
        for (i, entry) in list.iter().enumerate() {
            let mut item = item_from(entry).ok_or_else(|| ProviderError::malformed(P, format!("bad item {i}")))?;
            item.span = [item.span[0].clamp(0.0, duration), item.span[1].clamp(0.0, duration)];
            items.push(item);
        }
        items.sort_by(|a, b| a.span[0].total_cmp(&b.span[0]).then(a.span[1].total_cmp(&b.span[1])));
        Ok(Self { items })
    }
}

/// Description text `e_i` for each node: overlapping items joined in temporal
/// order, else the item with the nearest midpoint.
pub fn assign_timeline_to_nodes(timeline: &EventTimeline, nodes: &[SegmentNode]) -> Result<Vec<String>> {
    if nodes.is_empty() {
        return Err(Error::EmptyInput("nodes"));
    }
    if timeline.items.is_empty() {
        return Ok(vec![String::new(); nodes.len()]);
    }
    Ok(nodes
        .iter()
        .map(|n| {
            let overlapping: Vec<&str> = timeline
                .items
                .iter()
                .filter(|it| it.span[0] <= n.end_time && it.span[1] >= n.start_time)
                .map(|it| it.description.as_str())
                .collect();
            if !overlapping.is_empty() {
                return overlapping.join(" ");
            }
            let center = 0.5 * (n.start_time + n.end_time);
            let nearest = argmax(timeline.items.iter().map(|it| -(it.midpoint() - center).abs()))
                .expect("timeline is non-empty");
            timeline.items[nearest].description.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorChannels {
    pub channels: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
}

impl PriorChannels {
    /// Builds the fused injection as the entrywise max of the channels.
    pub fn from_channels(channels: Vec<Vec<f64>>) -> Result<Self> {
        let k = channels.first().map_or(0, Vec::len);
        if channels.is_empty() || k == 0 {
            return Err(Error::EmptyInput("prior channels"));
        }
        if let Some(bad) = channels.iter().find(|c| c.len() != k) {
            return Err(Error::ShapeError {
                expected: k,
                actual: bad.len(),
            });
        }
        let fused = (0..k)
            .map(|i| channels.iter().map(|c| c[i]).fold(0.0, f64::max))
            .collect();
        Ok(Self { channels, fused })
    }

    pub fn k_nodes(&self) -> usize {
        self.fused.len()
    }

    /// Initial anchor of facet `r`: argmax of its channel, ties to the lower id.
    pub fn initial_anchor(&self, r: usize) -> usize {
        argmax(self.channels[r].iter().copied()).unwrap_or(0)
    }
}

fn best_clipped(candidates: &[Vec<f64>], target: &[f64], cosine: bool) -> f64 {
    candidates
        .iter()
        .map(|c| if cosine { cosine_eps(c, target, 1e-8) } else { dot(c, target) })
        .fold(0.0, f64::max)
        .min(1.0)
}

/// Hybrid prior per facet: keyword embeddings against node features, mixed
/// with facet descriptions against node timeline descriptions.
pub fn prior_scores(
    facets: &QueryFacets,
    node_features: &[Vec<f64>],
    node_descriptions: &[String],
    joint: &dyn JointEncoder,
    text: &dyn TextEncoder,
    alpha_route: f64,
) -> Result<PriorChannels> {
    if !(0.0..=1.0).contains(&alpha_route) {
        return Err(Error::Config(format!("alpha_route must be in [0, 1], got {alpha_route}")));
    }
    if node_descriptions.len() != node_features.len() {
        return Err(Error::ShapeError {
            expected: node_features.len(),
            actual: node_descriptions.len(),
        });
    }
    let desc_embeddings = node_descriptions
        .iter()
        .map(|d| if d.trim().is_empty() { Ok(None) } else { text.embed_text(d).map(Some) })
        .collect::<Result<Vec<_>, _>>()?;
    let mut channels = Vec::with_capacity(facets.len());
    for facet in &facets.facets {
        let keywords = facet
            .keywords
            .iter()
            .map(|w| joint.embed_joint(w))
            .collect::<Result<Vec<_>, _>>()?;
        let descriptions = facet
            .descriptions
            .iter()
            .map(|p| text.embed_text(p))
            .collect::<Result<Vec<_>, _>>()?;
        let channel = node_features
            .iter()
            .zip(&desc_embeddings)
            .map(|(h, e)| {
                let visual = best_clipped(&keywords, h, false);
                let semantic = e.as_ref().map_or(0.0, |e| best_clipped(&descriptions, e, true));
                (alpha_route * visual + (1.0 - alpha_route) * semantic).clamp(0.0, 1.0)
            })
            .collect();
        channels.push(channel);
    }
    PriorChannels::from_channels(channels)
}
