use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::mock::{HashEmbedder, MockAnswerer, MockObserver, MockPlanner, MockTimeline};
use super::{
    call_with_retry, parse_observer_response, AnswerRequest, Answerer, JointEncoder, NoSleep, Observer,
    ObserverRequest, ObserverResponse, PlanRequest, Planner, ProviderError, ProviderPolicy, ResponseCache,
    Sleeper, TextEncoder, TimelineProvider, TimelineRequest, TokenLedger,
};

/// Embeddings keyed by (joint encoder?, text).
type EmbeddingMemo = HashMap<(bool, String), Vec<f64>>;

/// All providers of a session behind retry, caching and accounting.
#[derive(Clone)]
pub struct ProviderSet {
    pub planner: Arc<dyn Planner>,
    pub observer: Arc<dyn Observer>,
    pub timeline: Arc<dyn TimelineProvider>,
    pub text_encoder: Arc<dyn TextEncoder>,
    pub joint_encoder: Arc<dyn JointEncoder>,
    pub answerer: Arc<dyn Answerer>,
    pub policy: ProviderPolicy,
    pub sleeper: Arc<dyn Sleeper>,
    pub ledger: Arc<TokenLedger>,
    pub cache: Option<ResponseCache>,
    memo: Arc<Mutex<EmbeddingMemo>>,
}

impl ProviderSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        planner: Arc<dyn Planner>,
        observer: Arc<dyn Observer>,
        timeline: Arc<dyn TimelineProvider>,
        text_encoder: Arc<dyn TextEncoder>,
        joint_encoder: Arc<dyn JointEncoder>,
        answerer: Arc<dyn Answerer>,
        policy: ProviderPolicy,
        sleeper: Arc<dyn Sleeper>,
    ) -> Self {
        Self {
            planner,
            observer,
            timeline,
            text_encoder,
            joint_encoder,
            answerer,
            policy,
            sleeper,
            ledger: Arc::new(TokenLedger::new()),
            cache: None,
            memo: Arc::default(),
        }
    }

    /// Mock providers with a hash embedder of dimension `dim`.
    pub fn mock(dim: usize, planner: MockPlanner, observer: MockObserver, timeline: MockTimeline) -> Self {
        let embedder = Arc::new(HashEmbedder::new(dim));
        Self::new(
            Arc::new(planner),
            Arc::new(observer),
            Arc::new(timeline),
            embedder.clone(),
            embedder,
            Arc::new(MockAnswerer),
            ProviderPolicy::default(),
            Arc::new(NoSleep),
        )
    }

    pub fn with_cache(mut self, cache: Option<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    fn call<T>(
        &self,
        name: &str,
        request: &str,
        raw: impl Fn() -> Result<String, ProviderError>,
        parse: impl Fn(&str) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(name, request) {
                if let Ok(v) = parse(&hit) {
                    self.ledger.record_cache_hit(name);
                    return Ok(v);
                }
            }
        }
        let result = call_with_retry(name, &self.policy, self.sleeper.as_ref(), |_| {
            let text = raw()?;
            let value = parse(&text)?;
            Ok((value, text))
        });
        match result {
            Ok(((value, text), attempts)) => {
                self.ledger.record(name, attempts, request.chars().count(), text.chars().count());
                if let Some(cache) = &self.cache {
                    if let Err(e) = cache.put(name, request, &text) {
                        log::warn!("cache write failed: {e}");
                    }
                }
                Ok(value)
            }
            Err(e) => {
                self.ledger.record(name, self.policy.max_attempts.max(1), request.chars().count(), 0);
                Err(e)
            }
        }
    }

    fn request_key(request: &impl serde::Serialize) -> String {
        serde_json::to_string(request).expect("requests serialize")
    }

    pub fn plan<T>(
        &self,
        request: &PlanRequest,
        parse: impl Fn(&str) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        self.call("planner", &Self::request_key(request), || self.planner.plan(request), parse)
    }

    pub fn observe(&self, request: &ObserverRequest) -> Result<ObserverResponse, ProviderError> {
        self.call(
            "observer",
            &Self::request_key(request),
            || self.observer.observe(request),
            parse_observer_response,
        )
    }

    pub fn timeline<T>(
        &self,
        request: &TimelineRequest,
        parse: impl Fn(&str) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        self.call("timeline", &Self::request_key(request), || self.timeline.timeline(request), parse)
    }

    /// Raw answer text; letter extraction is left to the caller.
    pub fn answer(&self, request: &AnswerRequest) -> Result<String, ProviderError> {
        self.call("answerer", &Self::request_key(request), || self.answerer.answer(request), |s| {
            Ok(s.to_string())
        })
    }

    fn embed(&self, joint: bool, text: &str) -> Result<Vec<f64>, ProviderError> {
        let key = (joint, text.to_string());
        if let Some(v) = self.memo.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let name = if joint { "joint_encoder" } else { "text_encoder" };
        let v = self.call(
            name,
            text,
            || {
                let v = if joint {
                    self.joint_encoder.embed_joint(text)?
                } else {
                    self.text_encoder.embed_text(text)?
                };
                Ok(serde_json::to_string(&v).expect("embedding serializes"))
            },
            |s| serde_json::from_str::<Vec<f64>>(s).map_err(|e| ProviderError::malformed(name, e.to_string())),
        )?;
        self.memo.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}

impl TextEncoder for ProviderSet {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.embed(false, text)
    }
}

impl JointEncoder for ProviderSet {
    fn embed_joint(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.embed(true, text)
    }
}
