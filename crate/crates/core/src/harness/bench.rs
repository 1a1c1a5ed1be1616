//! Synthetic planted-clue benchmark.
//!
//! Instances are generated at node level: `k` segment features built from
//! scene background directions, two contiguous clue clusters sharing a latent
//! direction `c`, and distractors partially aligned with `c`. A single facet's
//! keyword embedding is a noisy copy of `c`. Observations are scripted: clue
//! nodes score `1 - noise*u`, all others `noise*u`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facets::PriorChannels;
use crate::graph::{AffinityGraph, GraphConfig};
use crate::selection::{apply_fallbacks, graph_nms, FallbackThresholds};
use crate::session::{run_session, LoopConfig, Verification, Verifier};
use crate::vector::{cosine_eps, normalized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub k: usize,
    pub clue_count: usize,
    pub clusters: usize,
    pub noise: f64,
    pub budget: usize,
    pub m: usize,
    pub eta: f64,
    pub dim: usize,
    /// Seconds between consecutive node centers.
    pub spacing_s: f64,
    /// Fraction of non-clue nodes that lean toward the clue direction.
    pub distractor_rate: f64,
    /// Weight of the clue direction in clue-node features.
    pub clue_strength: f64,
    /// Weight of isotropic noise added to the facet keyword embedding.
    pub keyword_noise: f64,
    pub graph: GraphConfig,
    pub alpha_route: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k: 120,
            clue_count: 6,
            clusters: 2,
            noise: 0.1,
            budget: 10,
            m: 8,
            eta: 0.2,
            dim: 32,
            spacing_s: 10.0,
            distractor_rate: 0.15,
            clue_strength: 1.0,
            keyword_noise: 0.08,
            graph: GraphConfig::default(),
            alpha_route: 0.5,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clue_count == 0 || self.clue_count > self.k {
            return Err(Error::Config(format!(
                "need k >= clue_count >= 1, got k={} clue_count={}",
                self.k, self.clue_count
            )));
        }
        if self.clusters == 0 || self.clusters > self.clue_count {
            return Err(Error::Config(format!("clusters must be in 1..={}", self.clue_count)));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config("noise and distractor_rate must be in [0, 1]".into()));
        }
        if self.budget == 0 || self.m == 0 || self.dim < 2 {
            return Err(Error::Config("budget, m must be positive and dim >= 2".into()));
        }
        if !(self.clue_strength > 0.0) || !(self.keyword_noise >= 0.0) {
            return Err(Error::Config("clue_strength must be positive and keyword_noise non-negative".into()));
        }
        if !(self.spacing_s > 0.0) {
            return Err(Error::Config("spacing_s must be positive".into()));
        }
        self.graph.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub seed: u64,
    pub features: Vec<Vec<f64>>,
    pub center_times: Vec<f64>,
    /// Sorted clue node ids.
    pub clues: Vec<usize>,
    pub is_clue: Vec<bool>,
    pub facet_keyword: Vec<f64>,
    pub noise: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    normalized(&gaussian(rng, dim)).expect("gaussian draw is nonzero")
}

fn mix(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let dim = parts[0].1.len();
    let mut out = vec![0.0; dim];
    for (w, v) in parts {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += w * x;
        }
    }
    normalized(&out).expect("mixture is nonzero")
}

/// Splits `total` into `parts` near-equal positive sizes.
fn split_sizes(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|p| total / parts + usize::from(p < total % parts)).collect()
}

pub fn generate_benchmark(seed: u64, cfg: &BenchConfig) -> Result<BenchmarkInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, dim) = (cfg.k, cfg.dim);
    let clue_dir = unit(&mut rng, dim);

    // Scene blocks of 4..=12 nodes with their own background direction.
    let mut scene_of = Vec::with_capacity(k);
    let mut scenes = Vec::new();
    while scene_of.len() < k {
        let len = rng.random_range(4..=12).min(k - scene_of.len());
        scene_of.extend(std::iter::repeat_n(scenes.len(), len));
        scenes.push(unit(&mut rng, dim));
    }

    // Clue clusters: contiguous, non-overlapping, placed in separate slots.
    let sizes = split_sizes(cfg.clue_count, cfg.clusters);
    let slot = k / cfg.clusters;
    let mut is_clue = vec![false; k];
    for (c, &size) in sizes.iter().enumerate() {
        let lo = c * slot;
        let hi = if c + 1 == cfg.clusters { k } else { lo + slot };
        let start = lo + rng.random_range(0..=(hi - lo - size));
        is_clue[start..start + size].iter_mut().for_each(|b| *b = true);
    }

    let mut features = Vec::with_capacity(k);
    for i in 0..k {
        let jitter = gaussian(&mut rng, dim);
        let bg = &scenes[scene_of[i]];
        let f = if is_clue[i] {
            mix(&[(cfg.clue_strength, &clue_dir), (0.5, bg), (0.15, &jitter)])
        } else if rng.random::<f64>() < cfg.distractor_rate {
            let lean = rng.random_range(0.4..0.9);
            mix(&[(lean, &clue_dir), (1.0, bg), (0.15, &jitter)])
        } else {
            mix(&[(1.0, bg), (0.15, &jitter)])
        };
        features.push(f);
    }
    let kw_noise = gaussian(&mut rng, dim);
    let facet_keyword = mix(&[(1.0, &clue_dir), (cfg.keyword_noise, &kw_noise)]);
    Ok(BenchmarkInstance {
        seed,
        center_times: (0..k).map(|i| (i as f64 + 0.5) * cfg.spacing_s).collect(),
        clues: (0..k).filter(|&i| is_clue[i]).collect(),
        is_clue,
        features,
        facet_keyword,
        noise: cfg.noise,
    })
}

impl BenchmarkInstance {
    pub fn k(&self) -> usize {
        self.features.len()
    }

    /// Keyword channel of the hybrid prior; there is no timeline text.
    pub fn priors(&self, alpha_route: f64) -> Result<PriorChannels> {
        let ch = self
            .features
            .iter()
            .map(|f| alpha_route * cosine_eps(&self.facet_keyword, f, 1e-8).max(0.0))
            .collect();
        PriorChannels::from_channels(vec![ch])
    }

    pub fn graph(&self, cfg: &GraphConfig) -> Result<AffinityGraph> {
        AffinityGraph::build(&self.features, &self.center_times, cfg)
    }

    pub fn recall(&self, selected: &[usize]) -> f64 {
        selected.iter().filter(|&&i| self.is_clue[i]).count() as f64 / self.clues.len() as f64
    }
}

/// Scripted observer over a benchmark instance.
pub struct ScriptedVerifier<'a> {
    instance: &'a BenchmarkInstance,
    rng: ChaCha8Rng,
}

impl<'a> ScriptedVerifier<'a> {
    pub fn new(instance: &'a BenchmarkInstance) -> Self {
        Self {
            instance,
            rng: ChaCha8Rng::seed_from_u64(instance.seed ^ 0x5eed_0b5e),
        }
    }
}

impl Verifier for ScriptedVerifier<'_> {
    fn verify(&mut self, node: usize, _facet: Option<usize>) -> Result<Verification> {
        let clue = self.instance.is_clue[node];
        let u: f64 = self.rng.random();
        let score = if clue { 1.0 - self.instance.noise * u } else { self.instance.noise * u };
        Ok(Verification {
            caption: if clue { "clue".into() } else { "background".into() },
            needs_more_info: !clue,
            missing_visual_keyword: String::new(),
            evidence: Vec::new(),
            score,
            best_facet: 0,
            facet_scores: vec![score],
            item_scores: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoDiffusion,
    NoFacets,
    PriorOnly,
    Uniform,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoDiffusion,
        Variant::NoFacets,
        Variant::PriorOnly,
        Variant::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDiffusion => "no_diffusion",
            Variant::NoFacets => "no_facets",
            Variant::PriorOnly => "prior_only",
            Variant::Uniform => "uniform",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub seed: u64,
    pub variant: Variant,
    pub recall: f64,
    pub efficiency: f64,
    /// 1-based iteration of the first clue observation; `budget + 1` if none.
    pub first_clue: usize,
    pub observations: usize,
}

/// Runs one variant on one instance.
pub fn run_variant(inst: &BenchmarkInstance, variant: Variant, cfg: &BenchConfig) -> Result<InstanceMetrics> {
    run_variant_on(inst, &inst.graph(&cfg.graph)?, variant, cfg)
}

/// [`run_variant`] over a caller-supplied graph.
pub fn run_variant_on(
    inst: &BenchmarkInstance,
    graph: &AffinityGraph,
    variant: Variant,
    cfg: &BenchConfig,
) -> Result<InstanceMetrics> {
    let priors = inst.priors(cfg.alpha_route)?;
    let never = cfg.budget + 1;
    let metrics = |selected: &[usize], observed: &[usize]| {
        let hits = observed.iter().filter(|&&i| inst.is_clue[i]).count();
        InstanceMetrics {
            seed: inst.seed,
            variant,
            recall: inst.recall(selected),
            efficiency: hits as f64 / cfg.budget as f64,
            first_clue: observed.iter().position(|&i| inst.is_clue[i]).map_or(never, |p| p + 1),
            observations: observed.len(),
        }
    };
    match variant {
        Variant::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(inst.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x0a11_5eed);
            let k = inst.k();
            let selected = sample(&mut rng, k, cfg.m.min(k)).into_vec();
            let observed = sample(&mut rng, k, cfg.budget.min(k)).into_vec();
            Ok(metrics(&selected, &observed))
        }
        Variant::PriorOnly => {
            let sel = graph_nms(&priors.fused, &priors.channels, graph, cfg.m, cfg.eta)?;
            Ok(metrics(&sel.nodes, &[]))
        }
        _ => {
            let loop_cfg = LoopConfig {
                propagate: variant != Variant::NoDiffusion,
                facet_steering: variant != Variant::NoFacets,
                ..LoopConfig::default()
            };
            let mut verifier = ScriptedVerifier::new(inst);
            let outcome = run_session(graph, &priors, &["clue".to_string()], &mut verifier, &loop_cfg, cfg.budget)?;
            let (belief, _) = apply_fallbacks(&outcome.belief, &FallbackThresholds::default());
            let sel = graph_nms(&belief, &priors.channels, graph, cfg.m, cfg.eta)?;
            let observed: Vec<usize> = outcome.observations.iter().map(|o| o.node_id).collect();
            Ok(metrics(&sel.nodes, &observed))
        }
    }
}

/// All `variants` on instances generated from `seeds`, in parallel.
pub fn evaluate(seeds: &[u64], variants: &[Variant], cfg: &BenchConfig) -> Result<Vec<InstanceMetrics>> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluate needs at least one instance".into()));
    }
    cfg.validate()?;
    let per_seed: Vec<Vec<InstanceMetrics>> = seeds
        .par_iter()
        .map(|&seed| {
            let inst = generate_benchmark(seed, cfg)?;
            variants.iter().map(|&v| run_variant(&inst, v, cfg)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// [`evaluate`] on a dedicated pool of `workers` threads; 0 uses the global pool.
pub fn evaluate_with_workers(
    seeds: &[u64],
    variants: &[Variant],
    cfg: &BenchConfig,
    workers: usize,
) -> Result<Vec<InstanceMetrics>> {
    if workers == 0 {
        return evaluate(seeds, variants, cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| evaluate(seeds, variants, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub instances: usize,
    pub mean_recall: f64,
    pub mean_efficiency: f64,
    pub mean_first_clue: f64,
    /// Mean of `full - variant` recall over shared seeds, if `full` was run.
    pub paired_gap_to_full: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn summarize(rows: &[InstanceMetrics]) -> Vec<VariantSummary> {
    let full: std::collections::HashMap<u64, f64> = rows
        .iter()
        .filter(|r| r.variant == Variant::Full)
        .map(|r| (r.seed, r.recall))
        .collect();
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    variants
        .into_iter()
        .map(|v| {
            let of = || rows.iter().filter(move |r| r.variant == v);
            let paired: Vec<f64> = of().filter_map(|r| full.get(&r.seed).map(|f| f - r.recall)).collect();
            VariantSummary {
                variant: v,
                instances: of().count(),
                mean_recall: mean(of().map(|r| r.recall)),
                mean_efficiency: mean(of().map(|r| r.efficiency)),
                mean_first_clue: mean(of().map(|r| r.first_clue as f64)),
                paired_gap_to_full: (!full.is_empty() && !paired.is_empty()).then(|| mean(paired.into_iter())),
            }
        })
        .collect()
}

pub fn metrics_csv(rows: &[InstanceMetrics]) -> String {
    let mut out = String::from("seed,variant,recall,efficiency,first_clue,observations\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            r.seed,
            r.variant.as_str(),
            r.recall,
            r.efficiency,
            r.first_clue,
            r.observations
        );
    }
    out
}

pub fn summary_text(summary: &[VariantSummary], cfg: &BenchConfig) -> String {
    let mut out = format!(
        "k={} clues={} clusters={} noise={} budget={} m={} (uniform expectation {:.4})\n",
        cfg.k,
        cfg.clue_count,
        cfg.clusters,
        cfg.noise,
        cfg.budget,
        cfg.m,
        cfg.m as f64 / cfg.k as f64
    );
    let _ = writeln!(out, "{:<14}{:>6}{:>10}{:>12}{:>13}{:>11}", "variant", "n", "recall", "efficiency", "first_clue", "gap_full");
    for s in summary {
        let gap = s.paired_gap_to_full.map_or("-".to_string(), |g| format!("{g:+.4}"));
        let _ = writeln!(
            out,
            "{:<14}{:>6}{:>10.4}{:>12.4}{:>13.2}{:>11}",
            s.variant.as_str(),
            s.instances,
            s.mean_recall,
            s.mean_efficiency,
            s.mean_first_clue,
            gap
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_planted() {
        let cfg = BenchConfig::default();
        let a = generate_benchmark(7, &cfg).unwrap();
        assert_eq!(a, generate_benchmark(7, &cfg).unwrap());
        assert_ne!(a.features, generate_benchmark(8, &cfg).unwrap().features);
        assert_eq!(a.clues.len(), cfg.clue_count);
        assert!(a.features.iter().all(|f| crate::vector::is_unit(f, 1e-9)));
        // two contiguous runs
        let runs = a.clues.windows(2).filter(|w| w[1] != w[0] + 1).count() + 1;
        assert_eq!(runs, 2);
    }

    #[test]
    fn invalid_sizes() {
        for cfg in [
            BenchConfig { clue_count: 0, ..Default::default() },
            BenchConfig { k: 4, clue_count: 5, ..Default::default() },
            BenchConfig { clusters: 7, ..Default::default() },
        ] {
            assert!(matches!(generate_benchmark(1, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn noise_zero_scores_clues_exactly_one() {
        let cfg = BenchConfig { noise: 0.0, ..Default::default() };
        let inst = generate_benchmark(3, &cfg).unwrap();
        let mut v = ScriptedVerifier::new(&inst);
        assert_eq!(v.verify(inst.clues[0], Some(0)).unwrap().score, 1.0);
        let other = (0..inst.k()).find(|&i| !inst.is_clue[i]).unwrap();
        assert_eq!(v.verify(other, Some(0)).unwrap().score, 0.0);
    }

    #[test]
    fn all_clues_gives_full_recall() {
        let cfg = BenchConfig { k: 8, clue_count: 8, m: 8, ..Default::default() };
        let inst = generate_benchmark(5, &cfg).unwrap();
        for v in [Variant::Full, Variant::PriorOnly, Variant::Uniform] {
            assert_eq!(run_variant(&inst, v, &cfg).unwrap().recall, 1.0, "{v:?}");
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn summary_and_csv() {
        let cfg = BenchConfig { k: 40, ..Default::default() };
        let rows = evaluate(&[1, 2, 3], &Variant::ALL, &cfg).unwrap();
        assert_eq!(rows.len(), 15);
        let s = summarize(&rows);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].paired_gap_to_full, Some(0.0));
        assert_eq!(metrics_csv(&rows).lines().count(), 16);
        assert!(summary_text(&s, &cfg).contains("no_diffusion"));
    }
}
