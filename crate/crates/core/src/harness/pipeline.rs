//! Query orchestration: segment, graph, decompose, timeline, priors, loop,
//! fallbacks, selection, packaging and answering.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::bundle::FeatureBundle;
use super::config::DetectiveConfig;
use super::output::{encode_beliefs, stable_json, stable_jsonl, write_file};
use crate::error::{Error, Result};
use crate::facets::{assign_timeline_to_nodes, build_facets, parse_decomposition_json, prior_scores, EventTimeline, QueryFacets};
use crate::graph::AffinityGraph;
use crate::providers::http::HttpProvider;
use crate::providers::mock::{MockObserver, MockPlanner, MockTimeline, ObserverScenario, ScriptedTimelineItem};
use crate::providers::{
    option_letters, parse_final_answer, prompts, AnswerRequest, FrameRef, PlanRequest, ProviderSet, ResponseCache,
    ThreadSleeper, TimelineRequest, TokenLedger,
};
use crate::scoring::FacetScorer;
use crate::segmenter::{segment_frames, uniform_offsets, SegmentNode};
use crate::selection::{apply_fallbacks, graph_nms, package_evidence, EvidencePackage, Fallback, Selection};
use crate::session::{run_session, EvidenceVerifier, SessionOutcome, Verification};
use crate::text::IdfTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Mock,
    Http,
}

/// Scripted provider behavior for mock runs, read from `mock.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    /// Decomposition replayed verbatim; derived from the options when absent.
    pub planner: Option<Value>,
    pub observer: ObserverScenario,
    pub timeline: Vec<ScriptedTimelineItem>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn providers(&self, dim: usize) -> ProviderSet {
        let planner = match &self.planner {
            Some(Value::String(s)) => MockPlanner::scripted(s.clone()),
            Some(v) => MockPlanner::scripted(v.to_string()),
            None => MockPlanner::default(),
        };
        ProviderSet::mock(
            dim,
            planner,
            MockObserver::new(self.observer.clone()),
            MockTimeline {
                items: self.timeline.clone(),
            },
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub bundle: PathBuf,
    pub question: String,
    pub options: Vec<String>,
    pub config: DetectiveConfig,
    pub mode: ProviderMode,
    /// Mock script; defaults to `mock.json` inside a bundle directory.
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug)]
pub struct QueryRun {
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub nodes: Vec<SegmentNode>,
    pub facets: QueryFacets,
    pub outcome: SessionOutcome,
    pub fallback: Fallback,
    pub selection: Selection,
    pub package: EvidencePackage,
    pub response: String,
    /// Option letter, or the free-form answer when no options were given.
    pub answer: String,
    pub ledger: Arc<TokenLedger>,
}

impl QueryRun {
    pub fn answer_record(&self) -> Value {
        json!({
            "video_id": self.video_id,
            "question": self.question,
            "options": self.options,
            "answer": self.answer,
            "response": self.response,
            "fallback": self.fallback,
            "facets": self.facets.labels(),
            "nodes": self.nodes.len(),
            "budget": self.outcome.budget,
            "observations": self.outcome.observations.len(),
            "selected": self.selection.nodes,
            "total_frames": self.package.total_frames(),
        })
    }

    /// Writes answer.json, package.json, trace.jsonl, beliefs.bin and metrics.csv.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "answer.json", stable_json(&self.answer_record())?.as_bytes())?;
        write_file(dir, "package.json", stable_json(&self.package)?.as_bytes())?;
        write_file(dir, "trace.jsonl", stable_jsonl(&self.outcome.trace)?.as_bytes())?;
        write_file(dir, "beliefs.bin", &encode_beliefs(&self.outcome.belief))?;
        write_file(dir, "metrics.csv", self.ledger.to_csv().as_bytes())
    }
}

fn provider_set(req: &RunRequest, dim: usize) -> Result<ProviderSet> {
    let cfg = &req.config;
    let mut set = match req.mode {
        ProviderMode::Mock => {
            let path = req
                .mock_script
                .clone()
                .or_else(|| Some(req.bundle.join("mock.json")).filter(|p| p.is_file()));
            let script = match path {
                Some(p) => MockScript::load(&p)?,
                None => MockScript::default(),
            };
            let mut set = script.providers(dim);
            set.policy = cfg.policy();
            set
        }
        ProviderMode::Http => {
            let http = Arc::new(HttpProvider::from_env_with_timeouts(
                Duration::from_secs_f64(cfg.timeout_s),
                Duration::from_secs_f64(cfg.observer_timeout_s),
            )?);
            ProviderSet::new(
                http.clone(),
                http.clone(),
                http.clone(),
                http.clone(),
                http.clone(),
                http,
                cfg.policy(),
                Arc::new(ThreadSleeper),
            )
        }
    };
    if cfg.cache {
        set = set.with_cache(ResponseCache::from_env()?);
    }
    Ok(set)
}

/// Loads the bundle, builds providers per `req.mode` and runs the pipeline.
pub fn run_query(req: &RunRequest) -> Result<QueryRun> {
    req.config.validate()?;
    let bundle = FeatureBundle::load(&req.bundle)?;
    let providers = provider_set(req, bundle.header.feature_dim)?;
    run_with_providers(&bundle, &req.question, &req.options, &req.config, &providers)
}

fn idf_table(cfg: &DetectiveConfig) -> Result<IdfTable> {
    match &cfg.idf_path {
        Some(p) => IdfTable::load(Path::new(p), cfg.default_idf),
        None => {
            let mut t = IdfTable::default();
            if t.default_idf() != cfg.default_idf {
                t = IdfTable::from_tsv(crate::text::DEFAULT_IDF_TSV, cfg.default_idf)?;
            }
            Ok(t)
        }
    }
}

fn free_form_answer(raw: &str) -> Result<String> {
    raw.lines()
        .find_map(|l| {
            let lower = l.to_ascii_lowercase();
            lower
                .find("final answer")
                .map(|i| l[i + "final answer".len()..].trim_start_matches([':', ' ', '*']).trim().to_string())
        })
        .filter(|a| !a.is_empty())
        .ok_or_else(|| Error::AnswerParse(raw.chars().take(200).collect()))
}

pub fn run_with_providers(
    bundle: &FeatureBundle,
    question: &str,
    options: &[String],
    cfg: &DetectiveConfig,
    providers: &ProviderSet,
) -> Result<QueryRun> {
    cfg.validate()?;
    let idf = idf_table(cfg)?;
    let bundle_id = bundle.header.video_id.clone();
    let nodes = segment_frames(&bundle.frames, &cfg.segmenter())?;
    let graph = AffinityGraph::from_nodes(&nodes, &cfg.graph())?;
    let query = prompts::format_query(question, options);

    let plan = prompts::planner_prompt(&query);
    let decomposition = providers.plan(
        &PlanRequest {
            system: plan.system,
            user: plan.user,
            query: question.to_string(),
            options: options.to_vec(),
        },
        parse_decomposition_json,
    )?;
    let facets = build_facets(&decomposition, question, options)?;
    let labels = facets.labels();

    let duration = bundle.header.duration_s;
    let timeline = providers.timeline(
        &TimelineRequest {
            bundle_id: bundle_id.clone(),
            duration_s: duration,
            frames: uniform_offsets(bundle.frames.len(), cfg.answer_frames)
                .into_iter()
                .map(|frame_index| FrameRef {
                    bundle_id: bundle_id.clone(),
                    frame_index,
                })
                .collect(),
            query: query.clone(),
        },
        |raw| EventTimeline::parse(raw, duration),
    )?;
    let descriptions = assign_timeline_to_nodes(&timeline, &nodes)?;
    let features: Vec<Vec<f64>> = nodes.iter().map(|n| n.feature.clone()).collect();
    let priors = prior_scores(&facets, &features, &descriptions, providers, providers, cfg.alpha_route)?;

    let scorer = FacetScorer::new(&facets.facets, idf, cfg.z_lex, providers)?;
    let loop_cfg = cfg.loop_config();
    let budget = loop_cfg.total_budget(options.len());
    let mut verifier = EvidenceVerifier {
        providers,
        scorer: &scorer,
        facets: &facets,
        nodes: &nodes,
        bundle_id: &bundle_id,
        screen_text: &bundle.screen_text,
        transcripts: &bundle.transcripts,
        window_frames: cfg.window_frames,
    };
    let outcome = run_session(&graph, &priors, &labels, &mut verifier, &loop_cfg, budget)?;

    let (final_belief, fallback) = apply_fallbacks(&outcome.belief, &cfg.fallbacks());
    let sel_cfg = cfg.selection();
    let selection = graph_nms(&final_belief, &priors.channels, &graph, sel_cfg.m, sel_cfg.eta)?;
    let observed: HashMap<usize, Verification> = outcome
        .observations
        .iter()
        .filter_map(|o| o.verification.clone().map(|v| (o.node_id, v)))
        .collect();
    let frames = bundle.frame_embeddings();
    let package = package_evidence(&selection, &labels, &nodes, &observed, &frames, &final_belief, &sel_cfg)?;

    let prompt = prompts::answer_prompt(question, &query, &package.frame_info());
    let response = providers.answer(&AnswerRequest {
        system: prompt.system,
        user: prompt.user,
        query: query.clone(),
        options: options.to_vec(),
        package: serde_json::to_value(&package)?,
    })?;
    let answer = if options.is_empty() {
        free_form_answer(&response)?
    } else {
        let letter = parse_final_answer(&response)?.to_string();
        if !option_letters(options.len()).contains(&letter) {
            return Err(Error::AnswerParse(format!("letter {letter} is not one of the {} options", options.len())));
        }
        letter
    };

    Ok(QueryRun {
        video_id: bundle_id,
        question: question.to_string(),
        options: options.to_vec(),
        nodes,
        facets,
        outcome,
        fallback,
        selection,
        package,
        response,
        answer,
        ledger: providers.ledger.clone(),
    })
}

/// Segments a bundle and builds its graph without calling any provider.
/// Writes nodes.json (segment spans) and graph.json (edges and degrees).
pub fn inspect_graph(bundle_path: &Path, cfg: &DetectiveConfig, out: &Path) -> Result<(usize, usize)> {
    cfg.validate()?;
    let bundle = FeatureBundle::load(bundle_path)?;
    let nodes = segment_frames(&bundle.frames, &cfg.segmenter())?;
    let graph = AffinityGraph::from_nodes(&nodes, &cfg.graph())?;
    let spans: Vec<Value> = nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "frames": [n.start_frame, n.end_frame],
                "span": [n.start_time, n.end_time],
                "center": n.center_time,
            })
        })
        .collect();
    write_file(out, "nodes.json", stable_json(&spans)?.as_bytes())?;
    write_file(out, "graph.json", stable_json(&graph.export())?.as_bytes())?;
    Ok((graph.k_nodes(), graph.nnz()))
}
