//! Frame stream to semantic segments.
//!
//! A boundary is placed between frames `t` and `t + 1` whenever their cosine
//! similarity drops below `theta_sim`. Segments shorter than `l_min` frames are
//! then folded into a neighbour: into the preceding segment, or forward into
//! the next one when the short segment is the first. Each resulting segment
//! becomes a graph node whose feature is the normalized mean of its frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, is_unit, normalized, UNIT_NORM_TOL};

pub const DEFAULT_THETA_SIM: f64 = 0.82;
pub const DEFAULT_L_MIN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub index: usize,
    /// Seconds from video start.
    pub timestamp: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    pub id: usize,
    /// Inclusive frame range.
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub center_time: f64,
    pub feature: Vec<f64>,
}

impl SegmentNode {
    pub fn frame_count(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn frame_range(&self) -> std::ops::RangeInclusive<usize> {
        self.start_frame..=self.end_frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub theta_sim: f64,
    pub l_min: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            theta_sim: DEFAULT_THETA_SIM,
            l_min: DEFAULT_L_MIN,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_sim > 0.0 && self.theta_sim < 1.0) {
            return Err(Error::Config(format!(
                "theta_sim must lie in (0, 1), got {}",
                self.theta_sim
            )));
        }
        if self.l_min == 0 {
            return Err(Error::Config("l_min must be at least 1".into()));
        }
        Ok(())
    }
}

fn validate_frames(frames: &[FrameFeature]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyVideo);
    }
    let dim = frames[0].embedding.len();
    for (pos, f) in frames.iter().enumerate() {
        if f.index != pos {
            return Err(Error::InvalidFeature {
                index: pos,
                reason: format!("frame ordinal {} out of sequence", f.index),
            });
        }
        if f.embedding.len() != dim {
            return Err(Error::InvalidFeature {
                index: pos,
                reason: format!("dimension {} differs from {}", f.embedding.len(), dim),
            });
        }
        if !is_unit(&f.embedding, UNIT_NORM_TOL) {
            return Err(Error::InvalidFeature {
                index: pos,
                reason: "embedding is not unit-norm".into(),
            });
        }
        if pos > 0 && f.timestamp <= frames[pos - 1].timestamp {
            return Err(Error::InvalidFeature {
                index: pos,
                reason: "timestamps must strictly increase".into(),
            });
        }
    }
    Ok(())
}

/// Inclusive frame ranges of the raw (pre-merge) segmentation.
pub fn raw_boundaries(frames: &[FrameFeature], theta_sim: f64) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for t in 0..frames.len().saturating_sub(1) {
        if dot(&frames[t].embedding, &frames[t + 1].embedding) < theta_sim {
            ranges.push((start, t));
            start = t + 1;
        }
    }
    if !frames.is_empty() {
        ranges.push((start, frames.len() - 1));
    }
    ranges
}

/// Folds segments shorter than `l_min` into a neighbour, left to right.
pub fn merge_short(mut ranges: Vec<(usize, usize)>, l_min: usize) -> Vec<(usize, usize)> {
    let len = |r: &(usize, usize)| r.1 - r.0 + 1;
    let mut i = 0;
    while i < ranges.len() {
        if ranges.len() == 1 || len(&ranges[i]) >= l_min {
            i += 1;
            continue;
        }
        if i == 0 {
            let next = ranges.remove(1);
            ranges[0].1 = next.1;
            // stay on 0: the grown segment may still be short
        } else {
            let short = ranges.remove(i);
            ranges[i - 1].1 = short.1;
        }
    }
    ranges
}

/// Normalized mean of member embeddings. A zero mean falls back to the
/// first member's embedding.
pub fn node_feature(members: &[FrameFeature]) -> Result<Vec<f64>> {
    let first = members.first().ok_or(Error::EmptyInput("member frames"))?;
    let mut mean = vec![0.0; first.embedding.len()];
    for f in members {
        for (m, x) in mean.iter_mut().zip(&f.embedding) {
            *m += x;
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    // Cancellation below this scale leaves no trustworthy direction.
    if crate::vector::norm(&mean) < 1e-12 {
        return Ok(first.embedding.clone());
    }
    Ok(normalized(&mean).unwrap_or_else(|| first.embedding.clone()))
}

pub fn segment_frames(frames: &[FrameFeature], cfg: &SegmenterConfig) -> Result<Vec<SegmentNode>> {
    cfg.validate()?;
    validate_frames(frames)?;
    let ranges = merge_short(raw_boundaries(frames, cfg.theta_sim), cfg.l_min);
    ranges
        .into_iter()
        .enumerate()
        .map(|(id, (s, e))| {
            let feature = node_feature(&frames[s..=e])?;
            let start_time = frames[s].timestamp;
            let end_time = frames[e].timestamp;
            Ok(SegmentNode {
                id,
                start_frame: s,
                end_frame: e,
                start_time,
                end_time,
                center_time: 0.5 * (start_time + end_time),
                feature,
            })
        })
        .collect()
}

/// `n` offsets spread evenly over `0..len`, both ends included
/// (`floor(j (len - 1) / (n - 1))`). A single sample takes the middle;
/// `n >= len` returns every offset.
pub fn uniform_offsets(len: usize, n: usize) -> Vec<usize> {
    match (len, n) {
        (0, _) | (_, 0) => Vec::new(),
        (_, 1) => vec![(len - 1) / 2],
        _ if n >= len => (0..len).collect(),
        _ => (0..n).map(|j| j * (len - 1) / (n - 1)).collect(),
    }
}

impl SegmentNode {
    /// Absolute frame indices of `n` evenly spaced frames of this segment.
    pub fn sample_frames(&self, n: usize) -> Vec<usize> {
        uniform_offsets(self.frame_count(), n)
            .into_iter()
            .map(|o| self.start_frame + o)
            .collect()
    }
}
