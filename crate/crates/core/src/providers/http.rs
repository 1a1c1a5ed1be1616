//! JSON-over-HTTP client for a remote provider service.
//!
//! Text endpoints (`/plan`, `/observe`, `/timeline`, `/answer`) reply with
//! `{"content": "...", "usage": {...}}`; embedding endpoints (`/embed_text`,
//! `/embed_joint`) reply with `{"embedding": [...]}`.

use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use super::{
    AnswerRequest, Answerer, JointEncoder, Observer, ObserverRequest, PlanRequest, Planner, ProviderError,
    TextEncoder, TimelineProvider, TimelineRequest,
};
use crate::error::{Error, Result};

pub const URL_ENV: &str = "DETECTIVE_PROVIDER_URL";
pub const KEY_ENV: &str = "DETECTIVE_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    observer_agent: ureq::Agent,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into()
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self::with_timeouts(base_url, api_key, Duration::from_secs(60), Duration::from_secs(300))
    }

    pub fn with_timeouts(
        base_url: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        observer_timeout: Duration,
    ) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: agent(timeout),
            observer_agent: agent(observer_timeout),
        }
    }

    pub fn from_env() -> Result<Self> {
        Self::from_env_with_timeouts(Duration::from_secs(60), Duration::from_secs(300))
    }

    pub fn from_env_with_timeouts(timeout: Duration, observer_timeout: Duration) -> Result<Self> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| Error::Config(format!("{URL_ENV} must be set when not in mock mode")))?;
        let key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self::with_timeouts(url, key, timeout, observer_timeout))
    }

    fn post(&self, name: &str, path: &str, body: &impl Serialize) -> Result<Value, ProviderError> {
        let agent = if path == "/observe" {
            &self.observer_agent
        } else {
            &self.agent
        };
        let mut req = agent.post(format!("{}{path}", self.base_url));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::transport(name, e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::transport(name, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ProviderError::malformed(name, format!("body is not JSON: {e}")))
    }

    fn content(&self, name: &str, path: &str, body: &impl Serialize) -> Result<String, ProviderError> {
        let v = self.post(name, path, body)?;
        match v.get("content") {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(ProviderError::malformed(name, "missing string field \"content\"")),
        }
    }

    fn embedding(&self, name: &str, path: &str, text: &str) -> Result<Vec<f64>, ProviderError> {
        let v = self.post(name, path, &json!({ "text": text }))?;
        let arr = v
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::malformed(name, "missing array field \"embedding\""))?;
        let out: Option<Vec<f64>> = arr.iter().map(|x| x.as_f64().filter(|f| f.is_finite())).collect();
        let out = out.ok_or_else(|| ProviderError::malformed(name, "embedding has non-numeric entries"))?;
        if out.is_empty() {
            return Err(ProviderError::malformed(name, "empty embedding"));
        }
        Ok(crate::vector::normalized(&out).unwrap_or(out))
    }
}

#[derive(Serialize)]
struct WithTemperature<'a, T: Serialize> {
    #[serde(flatten)]
    request: &'a T,
    temperature: f64,
}

fn deterministic<T: Serialize>(request: &T) -> WithTemperature<'_, T> {
    WithTemperature {
        request,
        temperature: 0.0,
    }
}

impl Planner for HttpProvider {
    fn plan(&self, request: &PlanRequest) -> Result<String, ProviderError> {
        self.content("planner", "/plan", &deterministic(request))
    }
}

impl Observer for HttpProvider {
    fn observe(&self, request: &ObserverRequest) -> Result<String, ProviderError> {
        self.content("observer", "/observe", &deterministic(request))
    }
}

impl TimelineProvider for HttpProvider {
    fn timeline(&self, request: &TimelineRequest) -> Result<String, ProviderError> {
        self.content("timeline", "/timeline", &deterministic(request))
    }
}

impl Answerer for HttpProvider {
    fn answer(&self, request: &AnswerRequest) -> Result<String, ProviderError> {
        self.content("answerer", "/answer", &deterministic(request))
    }
}

impl TextEncoder for HttpProvider {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.embedding("text_encoder", "/embed_text", text)
    }
}

impl JointEncoder for HttpProvider {
    fn embed_joint(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.embedding("joint_encoder", "/embed_joint", text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned response per connection and reports each request.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((head, String::from_utf8(buf).unwrap())).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, rx)
    }

    #[test]
    fn text_and_embedding_roundtrip() {
        let (url, rx) = serve(vec![
            (200, r#"{"content": "Final Answer: B", "usage": {"tokens": 3}}"#.into()),
            (200, r#"{"embedding": [3.0, 4.0]}"#.into()),
        ]);
        let p = HttpProvider::new(url, Some("secret".into()));
        let req = AnswerRequest {
            system: "s".into(),
            user: "u".into(),
            query: "q".into(),
            options: vec!["x".into()],
            package: json!({"entries": []}),
        };
        assert_eq!(p.answer(&req).unwrap(), "Final Answer: B");
        let (head, body) = rx.recv().unwrap();
        assert!(head.starts_with("POST /answer"));
        assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
        let sent: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["query"], "q");
        let e = p.embed_text("hello").unwrap();
        assert!((e[0] - 0.6).abs() < 1e-12 && (e[1] - 0.8).abs() < 1e-12);
        assert!(rx.recv().unwrap().0.starts_with("POST /embed_text"));
    }

    #[test]
    fn malformed_and_error_statuses_are_typed() {
        let (url, _rx) = serve(vec![
            (200, r#"{"text": "no content"}"#.into()),
            (500, r#"{"error": "boom"}"#.into()),
            (200, r#"{"embedding": ["a"]}"#.into()),
        ]);
        let p = HttpProvider::new(url, None);
        let req = PlanRequest {
            system: String::new(),
            user: String::new(),
            query: "q".into(),
            options: vec![],
        };
        assert!(matches!(p.plan(&req), Err(ProviderError::Malformed { .. })));
        assert!(matches!(p.plan(&req), Err(ProviderError::Transport { .. })));
        assert!(matches!(p.embed_joint("x"), Err(ProviderError::Malformed { .. })));
    }

    #[test]
    fn unreachable_host_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let p = HttpProvider::with_timeouts(url, None, Duration::from_secs(2), Duration::from_secs(2));
        assert!(matches!(p.embed_text("x"), Err(ProviderError::Transport { .. })));
    }
}
