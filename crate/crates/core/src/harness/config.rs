//! Flat `key = value` configuration. Every key is optional and defaults to the
//! reference setting; unknown keys are rejected.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionParams, StopRule};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::providers::ProviderPolicy;
use crate::selection::{FallbackThresholds, SelectionConfig};
use crate::segmenter::SegmenterConfig;
use crate::session::LoopConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectiveConfig {
    // graph construction and propagation
    pub alpha: f64,
    pub tau: f64,
    pub top_k: usize,
    pub theta_sim: f64,
    pub l_min: usize,
    pub t_prop: usize,
    pub beta: f64,
    // active inference and observation
    pub answer_frames: usize,
    pub base_budget: usize,
    pub steps_per_extra_option: usize,
    pub window_frames: usize,
    pub retry_threshold: f64,
    pub fallback_max_threshold: f64,
    pub fallback_mean_threshold: f64,
    pub flat_gap_threshold: f64,
    pub alpha_route: f64,
    // evidence selection and scoring
    pub m: usize,
    pub n_f: usize,
    pub min_uniform_frames: usize,
    pub eta: f64,
    pub dedup_threshold: f64,
    pub relaxed_dedup: f64,
    pub fallback_similarity: f64,
    pub z_lex: f64,
    pub default_idf: f64,
    pub idf_path: Option<String>,
    // providers
    pub max_attempts: usize,
    pub base_delay_s: f64,
    pub max_delay_s: f64,
    pub timeout_s: f64,
    pub observer_timeout_s: f64,
    pub cache: bool,
}

impl Default for DetectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            tau: 30.0,
            top_k: 8,
            theta_sim: 0.82,
            l_min: 10,
            t_prop: 7,
            beta: 0.6,
            answer_frames: 32,
            base_budget: 10,
            steps_per_extra_option: 1,
            window_frames: 9,
            retry_threshold: 0.2,
            fallback_max_threshold: 0.4,
            fallback_mean_threshold: 0.2,
            flat_gap_threshold: 0.15,
            alpha_route: 0.5,
            m: 8,
            n_f: 4,
            min_uniform_frames: 4,
            eta: 0.2,
            dedup_threshold: 0.92,
            relaxed_dedup: 0.95,
            fallback_similarity: 0.90,
            z_lex: 3.0,
            default_idf: 1.5,
            idf_path: None,
            max_attempts: 5,
            base_delay_s: 1.0,
            max_delay_s: 20.0,
            timeout_s: 60.0,
            observer_timeout_s: 300.0,
            cache: true,
        }
    }
}

/// Parses one `key=value` override into a TOML value, treating anything that
/// is not valid TOML as a bare string.
fn override_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl DetectiveConfig {
    /// Parses `text` and then applies `overrides` (`key=value` each).
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), override_value(v));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter().validate()?;
        self.graph().validate()?;
        self.loop_config().validate()?;
        self.selection().validate()?;
        self.policy().validate()?;
        if !(0.0..=1.0).contains(&self.alpha_route) {
            return Err(Error::Config(format!("alpha_route must be in [0, 1], got {}", self.alpha_route)));
        }
        if !(self.z_lex > 0.0) || !(self.default_idf > 0.0) {
            return Err(Error::Config("z_lex and default_idf must be positive".into()));
        }
        if self.answer_frames == 0 {
            return Err(Error::Config("answer_frames must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0 && self.observer_timeout_s > 0.0) {
            return Err(Error::Config("timeouts must be positive".into()));
        }
        Ok(())
    }

    pub fn segmenter(&self) -> SegmenterConfig {
        SegmenterConfig {
            theta_sim: self.theta_sim,
            l_min: self.l_min,
        }
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            alpha: self.alpha,
            tau: self.tau,
            top_k: self.top_k,
        }
    }

    pub fn diffusion(&self) -> DiffusionParams {
        DiffusionParams {
            beta: self.beta,
            stop: StopRule::Fixed { iters: self.t_prop },
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            base_budget: self.base_budget,
            steps_per_extra_option: self.steps_per_extra_option,
            window_frames: self.window_frames,
            retry_threshold: self.retry_threshold,
            fallback_max_threshold: self.fallback_max_threshold,
            fallback_mean_threshold: self.fallback_mean_threshold,
            flat_gap_threshold: self.flat_gap_threshold,
            propagate: true,
            facet_steering: true,
            diffusion: self.diffusion(),
        }
    }

    pub fn fallbacks(&self) -> FallbackThresholds {
        FallbackThresholds {
            max: self.fallback_max_threshold,
            mean: self.fallback_mean_threshold,
            flat_gap: self.flat_gap_threshold,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            m: self.m,
            n_f: self.n_f,
            eta: self.eta,
            min_uniform_frames: self.min_uniform_frames,
            dedup_threshold: self.dedup_threshold,
            relaxed_dedup: self.relaxed_dedup,
            fallback_similarity: self.fallback_similarity,
        }
    }

    pub fn policy(&self) -> ProviderPolicy {
        let secs = |s: f64| Duration::try_from_secs_f64(s).unwrap_or(Duration::ZERO);
        ProviderPolicy {
            max_attempts: self.max_attempts,
            base_delay: secs(self.base_delay_s),
            max_delay: secs(self.max_delay_s),
            jitter: 0.2,
        }
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
