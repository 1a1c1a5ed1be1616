//! Relevance of textual evidence to query facets.
//!
//! Each evidence item is scored against every facet with two signals: an
//! IDF-weighted keyword overlap, saturated at `z_lex`, and the best cosine
//! between the item's embedding and the facet's descriptions. The two are
//! mixed with a per-source weight (on-screen text trusts keywords, captions
//! trust embeddings) and a node keeps the best item/facet pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facets::{Facet, QueryFacets};
use crate::providers::{ProviderError, TextEncoder};
use crate::text::{tokenize, IdfTable};
use crate::vector::cosine_eps;

pub const Z_LEX: f64 = 3.0;
pub const SEMANTIC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Caption,
    Ocr,
    Asr,
}

impl Source {
    /// Weight of the lexical score in the fused score.
    pub fn lexical_weight(self) -> f64 {
        match self {
            Source::Ocr => 0.7,
            Source::Asr => 0.5,
            Source::Caption => 0.3,
        }
    }

    /// Tie-break rank for node aggregation: ocr > asr > caption.
    fn priority(self) -> u8 {
        match self {
            Source::Ocr => 2,
            Source::Asr => 1,
            Source::Caption => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Caption => "caption",
            Source::Ocr => "ocr",
            Source::Asr => "asr",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "caption" | "cap" => Ok(Source::Caption),
            "ocr" => Ok(Source::Ocr),
            "asr" => Ok(Source::Asr),
            _ => Err(Error::InvalidSource(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub source: Source,
    pub text: String,
    pub node_id: usize,
}

/// Text attached to a time span, such as a transcript line or on-screen text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedText {
    pub span: [f64; 2],
    pub text: String,
}

/// Texts whose span intersects `[start, end]`, joined in order with spaces.
pub fn texts_in_span(track: &[TimedText], start: f64, end: f64) -> String {
    track
        .iter()
        .filter(|t| t.span[0] <= end && t.span[1] >= start && !t.text.trim().is_empty())
        .map(|t| t.text.trim())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keyword phrases as stemmed token sequences, deduplicated, stopword-only
/// phrases dropped.
pub fn keyword_terms(keywords: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for k in keywords {
        let terms = tokenize(k);
        if !terms.is_empty() && !out.contains(&terms) {
            out.push(terms);
        }
    }
    out
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Lexical overlap on pre-tokenized evidence. Each keyword counts at most once.
pub fn lexical_score_tokens(
    tokens: &[String],
    keywords: &[Vec<String>],
    idf: &IdfTable,
    z_lex: f64,
) -> f64 {
    let mass: f64 = keywords
        .iter()
        .filter(|k| contains_run(tokens, k))
        .map(|k| k.iter().map(|t| idf.idf(t)).sum::<f64>().min(z_lex))
        .sum();
    (mass / z_lex).min(1.0)
}

pub fn lexical_score(text: &str, keywords: &[String], idf: &IdfTable, z_lex: f64) -> f64 {
    lexical_score_tokens(&tokenize(text), &keyword_terms(keywords), idf, z_lex)
}

/// Best cosine against pre-encoded descriptions, clipped to `[0, 1]`.
pub fn semantic_score_embedded(evidence: &[f64], descriptions: &[Vec<f64>]) -> f64 {
    descriptions
        .iter()
        .map(|d| cosine_eps(evidence, d, SEMANTIC_EPS))
        .fold(0.0, f64::max)
        .min(1.0)
}

pub fn semantic_score(
    text: &str,
    descriptions: &[String],
    encoder: &dyn TextEncoder,
) -> Result<f64, ProviderError> {
    if text.trim().is_empty() || descriptions.is_empty() {
        return Ok(0.0);
    }
    let evidence = encoder.embed_text(text)?;
    let encoded = descriptions
        .iter()
        .map(|d| encoder.embed_text(d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(semantic_score_embedded(&evidence, &encoded))
}

pub fn fuse_scores(source: Source, s_lex: f64, s_sem: f64) -> f64 {
    let lambda = source.lexical_weight();
    lambda * s_lex + (1.0 - lambda) * s_sem
}

/// Like [`fuse_scores`] but for a source given by name.
pub fn fuse_named(source: &str, s_lex: f64, s_sem: f64) -> Result<f64> {
    Ok(fuse_scores(source.parse()?, s_lex, s_sem))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub score: f64,
    pub best_item: usize,
    pub best_facet: usize,
    /// Best fused score per facet across the node's items.
    pub facet_scores: Vec<f64>,
    /// Best fused score per item across facets.
    pub item_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PreparedFacet {
    keywords: Vec<Vec<String>>,
    descriptions: Vec<Vec<f64>>,
}

/// Facets with keywords tokenized and descriptions encoded once per session.
#[derive(Debug, Clone)]
pub struct FacetScorer {
    facets: Vec<PreparedFacet>,
    idf: IdfTable,
    z_lex: f64,
}

impl FacetScorer {
    pub fn new(
        facets: &[Facet],
        idf: IdfTable,
        z_lex: f64,
        encoder: &dyn TextEncoder,
    ) -> Result<Self> {
        if !(z_lex > 0.0) {
            return Err(Error::Config(format!("z_lex must be positive, got {z_lex}")));
        }
        let facets = facets
            .iter()
            .map(|f| {
                let descriptions = f
                    .descriptions
                    .iter()
                    .filter(|d| !d.trim().is_empty())
                    .map(|d| encoder.embed_text(d))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(PreparedFacet {
                    keywords: keyword_terms(&f.keywords),
                    descriptions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { facets, idf, z_lex })
    }

    pub fn for_query(facets: &QueryFacets, idf: IdfTable, encoder: &dyn TextEncoder) -> Result<Self> {
        Self::new(&facets.facets, idf, Z_LEX, encoder)
    }

    pub fn facet_count(&self) -> usize {
        self.facets.len()
    }

    /// Fused score of one item against each facet.
    pub fn score_item(&self, item: &EvidenceItem, encoder: &dyn TextEncoder) -> Result<Vec<f64>> {
        if item.text.trim().is_empty() {
            return Ok(vec![0.0; self.facets.len()]);
        }
        let tokens = tokenize(&item.text);
        let needs_embedding = self.facets.iter().any(|f| !f.descriptions.is_empty());
        let embedding = if needs_embedding {
            Some(encoder.embed_text(&item.text)?)
        } else {
            None
        };
        Ok(self
            .facets
            .iter()
            .map(|f| {
                let lex = lexical_score_tokens(&tokens, &f.keywords, &self.idf, self.z_lex);
                let sem = embedding
                    .as_deref()
                    .map_or(0.0, |e| semantic_score_embedded(e, &f.descriptions));
                fuse_scores(item.source, lex, sem)
            })
            .collect())
    }

    /// Max over items and facets. Exact ties go to the higher-priority source,
    /// then the lower facet index, then the earlier item.
    pub fn node_score(&self, items: &[EvidenceItem], encoder: &dyn TextEncoder) -> Result<NodeScore> {
        if items.is_empty() {
            return Err(Error::NoEvidence);
        }
        let mut facet_scores = vec![0.0f64; self.facets.len()];
        let mut item_scores = Vec::with_capacity(items.len());
        let mut best: Option<(f64, u8, usize, usize)> = None;
        for (ii, item) in items.iter().enumerate() {
            let per_facet = self.score_item(item, encoder)?;
            let mut item_best = 0.0f64;
            for (r, &s) in per_facet.iter().enumerate() {
                facet_scores[r] = facet_scores[r].max(s);
                item_best = item_best.max(s);
                let prio = item.source.priority();
                let better = match best {
                    None => true,
                    Some((bs, bp, br, _)) => {
                        s > bs || (s == bs && (prio > bp || (prio == bp && r < br)))
                    }
                };
                if better {
                    best = Some((s, prio, r, ii));
                }
            }
            if per_facet.is_empty() {
                let prio = item.source.priority();
                if best.is_none_or(|(bs, bp, _, _)| 0.0 == bs && prio > bp) {
                    best = Some((0.0, prio, 0, ii));
                }
            }
            item_scores.push(item_best);
        }
        let (score, _, best_facet, best_item) = best.expect("items is non-empty");
        Ok(NodeScore {
            score,
            best_item,
            best_facet,
            facet_scores,
            item_scores,
        })
    }
}

pub fn node_score(
    items: &[EvidenceItem],
    facets: &QueryFacets,
    idf: &IdfTable,
    encoder: &dyn TextEncoder,
) -> Result<NodeScore> {
    FacetScorer::for_query(facets, idf.clone(), encoder)?.node_score(items, encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::HashEmbedder;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn kw(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    /// Encoder with a fixed lookup table; unknown text maps to the last axis.
    struct TableEncoder(HashMap<String, Vec<f64>>);

    impl TextEncoder for TableEncoder {
        fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
            Ok(self.0.get(text).cloned().unwrap_or(vec![0.0, 0.0, 0.0, 1.0]))
        }
    }

    fn table(entries: &[(&str, [f64; 4])]) -> TableEncoder {
        TableEncoder(entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect())
    }

    #[test]
    fn lexical_examples() {
        let mut idf = IdfTable::empty(1.0);
        idf.insert("lighthouse", 3.0).unwrap();
        assert_eq!(lexical_score("A lighthouse at dusk", &kw(&["lighthouse"]), &idf, 3.0), 1.0);
        assert_eq!(lexical_score("A boat at dusk", &kw(&["lighthouse"]), &idf, 3.0), 0.0);
        let two = lexical_score("red boat and blue car", &kw(&["boat", "car", "plane"]), &idf, 3.0);
        assert!((two - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(lexical_score("", &kw(&["boat"]), &idf, 3.0), 0.0);
        assert_eq!(lexical_score("boat", &[], &idf, 3.0), 0.0);
    }

    #[test]
    fn repeated_mentions_count_once() {
        let idf = IdfTable::empty(1.0);
        assert_eq!(
            lexical_score("boat boat boat", &kw(&["boat"]), &idf, 3.0),
            lexical_score("boat", &kw(&["boat"]), &idf, 3.0)
        );
    }

    #[test]
    fn multiword_keywords_need_contiguous_match() {
        let idf = IdfTable::empty(1.0);
        let k = kw(&["Barack Obama"]);
        assert!((lexical_score("president barack obama speaks", &k, &idf, 3.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(lexical_score("obama met barack", &k, &idf, 3.0), 0.0);
        // phrase mass is capped at z_lex
        let heavy = IdfTable::empty(2.5);
        assert_eq!(lexical_score("barack obama", &k, &heavy, 3.0), 1.0);
    }

    #[test]
    fn semantic_examples() {
        let enc = HashEmbedder::new(16);
        let d = kw(&["a dog catches a frisbee"]);
        assert!((semantic_score("a dog catches a frisbee", &d, &enc).unwrap() - 1.0).abs() < 1e-6);
        let orth = table(&[("x", [1.0, 0.0, 0.0, 0.0]), ("y", [0.0, 1.0, 0.0, 0.0])]);
        assert_eq!(semantic_score("x", &kw(&["y"]), &orth).unwrap(), 0.0);
        let c = 0.3f64;
        let e = 0.8f64;
        let two = table(&[
            ("ev", [1.0, 0.0, 0.0, 0.0]),
            ("p1", [c, (1.0 - c * c).sqrt(), 0.0, 0.0]),
            ("p2", [e, 0.0, (1.0 - e * e).sqrt(), 0.0]),
        ]);
        assert!((semantic_score("ev", &kw(&["p1", "p2"]), &two).unwrap() - 0.8).abs() < 1e-6);
        assert_eq!(semantic_score("ev", &[], &two).unwrap(), 0.0);
    }

    #[test]
    fn fusion_weights() {
        assert!((fuse_scores(Source::Ocr, 0.8, 0.4) - 0.68).abs() < 1e-12);
        assert!((fuse_scores(Source::Asr, 0.37, 0.37) - 0.37).abs() < 1e-12);
        assert!((fuse_scores(Source::Caption, 0.0, 1.0) - 0.7).abs() < 1e-12);
        assert!(matches!(fuse_named("subtitle", 0.1, 0.1), Err(Error::InvalidSource(_))));
        assert!((fuse_named("OCR", 1.0, 0.0).unwrap() - 0.7).abs() < 1e-12);
    }

    fn facet(keywords: &[&str], descriptions: &[&str]) -> Facet {
        Facet {
            label: "general".into(),
            keywords: kw(keywords),
            descriptions: kw(descriptions),
        }
    }

    fn item(source: Source, text: &str) -> EvidenceItem {
        EvidenceItem {
            source,
            text: text.into(),
            node_id: 0,
        }
    }

    #[test]
    fn node_score_single_pair_equals_fusion() {
        let enc = HashEmbedder::new(16);
        let idf = IdfTable::empty(1.5);
        let facets = [facet(&["boat"], &["a boat on a lake"])];
        let scorer = FacetScorer::new(&facets, idf.clone(), Z_LEX, &enc).unwrap();
        let it = item(Source::Asr, "the boat is sinking");
        let ns = scorer.node_score(std::slice::from_ref(&it), &enc).unwrap();
        let lex = lexical_score(&it.text, &facets[0].keywords, &idf, Z_LEX);
        let sem = semantic_score(&it.text, &facets[0].descriptions, &enc).unwrap();
        assert!((ns.score - fuse_scores(Source::Asr, lex, sem)).abs() < 1e-12);
        assert_eq!((ns.best_item, ns.best_facet), (0, 0));
    }

    #[test]
    fn node_score_takes_max_with_argmax() {
        let enc = HashEmbedder::new(16);
        let mut idf = IdfTable::empty(1.0);
        idf.insert("alpha", 0.6).unwrap(); // 0.6/3 lexical
        idf.insert("beta", 3.0).unwrap();
        let facets = [facet(&["alpha"], &[]), facet(&["beta"], &[])];
        let scorer = FacetScorer::new(&facets, idf, Z_LEX, &enc).unwrap();
        // ocr: 0.7 * lex; alpha -> 0.7*0.2=0.14, beta -> 0.7
        let items = [item(Source::Ocr, "alpha"), item(Source::Ocr, "beta"), item(Source::Asr, "alpha beta")];
        let ns = scorer.node_score(&items, &enc).unwrap();
        assert!((ns.score - 0.7).abs() < 1e-12);
        assert_eq!((ns.best_item, ns.best_facet), (1, 1));
        assert!((ns.facet_scores[0] - 0.14).abs() < 1e-12);
    }

    #[test]
    fn empty_texts_tie_break_on_source() {
        let enc = HashEmbedder::new(8);
        let facets = [facet(&["x"], &["y"]), facet(&["z"], &[])];
        let scorer = FacetScorer::new(&facets, IdfTable::empty(1.5), Z_LEX, &enc).unwrap();
        let items = [item(Source::Caption, ""), item(Source::Ocr, ""), item(Source::Asr, "")];
        let ns = scorer.node_score(&items, &enc).unwrap();
        assert_eq!(ns.score, 0.0);
        assert_eq!((ns.best_item, ns.best_facet), (1, 0));
        let only = scorer.node_score(&items[..1], &enc).unwrap();
        assert_eq!(only.best_item, 0);
        assert!(matches!(scorer.node_score(&[], &enc), Err(Error::NoEvidence)));
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(text in "[a-z ]{0,40}", words in prop::collection::vec("[a-z]{1,6}", 0..5), desc in "[a-z ]{1,30}") {
            let enc = HashEmbedder::new(16);
            let facets = [Facet { label: "general".into(), keywords: words.clone(), descriptions: vec![desc] }];
            let scorer = FacetScorer::new(&facets, IdfTable::default(), Z_LEX, &enc).unwrap();
            for source in [Source::Caption, Source::Ocr, Source::Asr] {
                let s = scorer.score_item(&item(source, &text), &enc).unwrap()[0];
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn adding_a_keyword_never_lowers_lexical(text in "[a-z ]{0,40}", words in prop::collection::vec("[a-z]{1,6}", 0..5), extra in "[a-z]{1,6}") {
            let idf = IdfTable::default();
            let before = lexical_score(&text, &words, &idf, Z_LEX);
            let mut more = words.clone();
            more.push(extra);
            prop_assert!(lexical_score(&text, &more, &idf, Z_LEX) >= before);
        }

        #[test]
        fn adding_description_or_item_never_lowers(text in "[a-z ]{1,40}", d1 in "[a-z ]{1,20}", d2 in "[a-z ]{1,20}", other in "[a-z ]{0,20}") {
            let enc = HashEmbedder::new(16);
            let one = semantic_score(&text, std::slice::from_ref(&d1), &enc).unwrap();
            let two = semantic_score(&text, &[d1.clone(), d2], &enc).unwrap();
            prop_assert!(two >= one);
            let facets = [Facet { label: "general".into(), keywords: vec!["boat".into()], descriptions: vec![d1] }];
            let scorer = FacetScorer::new(&facets, IdfTable::default(), Z_LEX, &enc).unwrap();
            let base = scorer.node_score(&[item(Source::Caption, &text)], &enc).unwrap().score;
            let more = scorer.node_score(&[item(Source::Caption, &text), item(Source::Ocr, &other)], &enc).unwrap().score;
            prop_assert!(more >= base);
        }
    }
}
