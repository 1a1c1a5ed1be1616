//! Feature bundles: per-frame embeddings plus optional timed text.
//!
//! Directory layout:
//!
//! ```text
//! header.json        {"video_id", "duration_s", "fps" (default 1.0), "feature_dim"}
//! features.bin       little-endian f32, row-major frames x feature_dim
//! transcripts.json   optional [{"span": [s, e], "text": ...}]
//! screen_text.json   optional, same shape
//! ```
//!
//! A single JSON file `{"header": ..., "frames": [[...]], "transcripts": [...],
//! "screen_text": [...]}` is accepted as well for small fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::TimedText;
use crate::segmenter::FrameFeature;
use crate::vector::norm;

/// Frames whose norm is off by more than this are rejected rather than renormalized.
pub const INGEST_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub video_id: String,
    pub duration_s: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub feature_dim: usize,
}

fn default_fps() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub header: BundleHeader,
    pub frames: Vec<FrameFeature>,
    pub transcripts: Vec<TimedText>,
    pub screen_text: Vec<TimedText>,
}

#[derive(Deserialize)]
struct JsonBundle {
    header: BundleHeader,
    frames: Vec<Vec<f64>>,
    #[serde(default)]
    transcripts: Vec<TimedText>,
    #[serde(default)]
    screen_text: Vec<TimedText>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))
}

fn optional_track(dir: &Path, name: &str) -> Result<Vec<TimedText>> {
    let p = dir.join(name);
    if p.exists() {
        read_json(&p)
    } else {
        Ok(Vec::new())
    }
}

impl FeatureBundle {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::BundleNotFound(path.to_path_buf()));
        }
        if path.is_file() {
            let raw: JsonBundle = read_json(path)?;
            return Self::from_rows(raw.header, raw.frames, raw.transcripts, raw.screen_text);
        }
        let header: BundleHeader = read_json(&path.join("header.json"))?;
        let rows = {
            let bin = path.join("features.bin");
            let json = path.join("features.json");
            if bin.exists() {
                decode_f32_rows(&read(&bin)?, header.feature_dim)?
            } else if json.exists() {
                read_json(&json)?
            } else {
                return Err(Error::Bundle(format!("{} has no features.bin", path.display())));
            }
        };
        let transcripts = optional_track(path, "transcripts.json")?;
        let screen_text = optional_track(path, "screen_text.json")?;
        Self::from_rows(header, rows, transcripts, screen_text)
    }

    /// Validates shapes and frame count, renormalizing rows within tolerance.
    pub fn from_rows(
        header: BundleHeader,
        rows: Vec<Vec<f64>>,
        transcripts: Vec<TimedText>,
        screen_text: Vec<TimedText>,
    ) -> Result<Self> {
        if !(header.fps > 0.0 && header.fps.is_finite()) {
            return Err(Error::Bundle(format!("fps must be positive, got {}", header.fps)));
        }
        if !(header.duration_s >= 0.0 && header.duration_s.is_finite()) {
            return Err(Error::Bundle(format!("bad duration {}", header.duration_s)));
        }
        if header.feature_dim == 0 {
            return Err(Error::Bundle("feature_dim must be positive".into()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyVideo);
        }
        let expected = header.duration_s * header.fps;
        if (rows.len() as f64 - expected).abs() > 1.0 {
            return Err(Error::Bundle(format!(
                "{} frames for {}s at {} fps (expected about {expected:.0})",
                rows.len(),
                header.duration_s,
                header.fps
            )));
        }
        let mut frames = Vec::with_capacity(rows.len());
        for (index, mut row) in rows.into_iter().enumerate() {
            if row.len() != header.feature_dim {
                return Err(Error::InvalidFeature {
                    index,
                    reason: format!("dimension {} != {}", row.len(), header.feature_dim),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidFeature {
                    index,
                    reason: "non-finite value".into(),
                });
            }
            let n = norm(&row);
            if (n - 1.0).abs() > INGEST_NORM_TOL {
                return Err(Error::InvalidFeature {
                    index,
                    reason: format!("norm {n} is not unit"),
                });
            }
            row.iter_mut().for_each(|x| *x /= n);
            frames.push(FrameFeature {
                index,
                timestamp: index as f64 / header.fps,
                embedding: row,
            });
        }
        for (name, track) in [("transcripts", &transcripts), ("screen_text", &screen_text)] {
            if let Some(t) = track.iter().find(|t| !(t.span[0] <= t.span[1]) || !t.span[0].is_finite()) {
                return Err(Error::Bundle(format!("{name}: bad span {:?}", t.span)));
            }
        }
        Ok(Self {
            header,
            frames,
            transcripts,
            screen_text,
        })
    }

    pub fn frame_embeddings(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.embedding.clone()).collect()
    }

    /// Writes the directory layout, features as f32.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let p: PathBuf = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("header.json", serde_json::to_string_pretty(&self.header)?.as_bytes())?;
        let mut bin = Vec::with_capacity(self.frames.len() * self.header.feature_dim * 4);
        for f in &self.frames {
            for &x in &f.embedding {
                bin.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        write("features.bin", &bin)?;
        if !self.transcripts.is_empty() {
            write("transcripts.json", serde_json::to_string_pretty(&self.transcripts)?.as_bytes())?;
        }
        if !self.screen_text.is_empty() {
            write("screen_text.json", serde_json::to_string_pretty(&self.screen_text)?.as_bytes())?;
        }
        Ok(())
    }
}

pub fn decode_f32_rows(bytes: &[u8], dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || !bytes.len().is_multiple_of(4 * dim) {
        return Err(Error::Bundle(format!(
            "features.bin has {} bytes, not a multiple of 4 x {dim}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4 * dim)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(duration: f64, dim: usize) -> BundleHeader {
        BundleHeader {
            video_id: "v".into(),
            duration_s: duration,
            fps: 1.0,
            feature_dim: dim,
        }
    }

    fn unit_rows(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![(i as f64).cos(), (i as f64).sin()]).collect()
    }

    #[test]
    fn directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = FeatureBundle::from_rows(
            header(5.0, 2),
            unit_rows(5),
            vec![TimedText {
                span: [0.0, 2.0],
                text: "hello".into(),
            }],
            vec![],
        )
        .unwrap();
        b.write_dir(dir.path()).unwrap();
        let back = FeatureBundle::load(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 5);
        assert_eq!(back.transcripts, b.transcripts);
        for (a, c) in back.frames.iter().zip(&b.frames) {
            assert!((norm(&a.embedding) - 1.0).abs() < 1e-12);
            assert!(a.embedding.iter().zip(&c.embedding).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            FeatureBundle::load(Path::new("/nonexistent/bundle")),
            Err(Error::BundleNotFound(_))
        ));
        assert!(FeatureBundle::from_rows(header(10.0, 2), unit_rows(5), vec![], vec![]).is_err());
        assert!(FeatureBundle::from_rows(header(6.0, 2), unit_rows(5), vec![], vec![]).is_ok());
        assert!(FeatureBundle::from_rows(header(1.0, 3), unit_rows(1), vec![], vec![]).is_err());
        assert!(FeatureBundle::from_rows(header(1.0, 2), vec![vec![2.0, 0.0]], vec![], vec![]).is_err());
        assert!(matches!(
            FeatureBundle::from_rows(header(0.0, 2), vec![], vec![], vec![]),
            Err(Error::EmptyVideo)
        ));
        assert!(decode_f32_rows(&[0u8; 10], 2).is_err());
    }

    #[test]
    fn json_variant() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tiny.json");
        fs::write(
            &p,
            r#"{"header": {"video_id": "t", "duration_s": 2, "feature_dim": 2}, "frames": [[1, 0], [0, 1]]}"#,
        )
        .unwrap();
        let b = FeatureBundle::load(&p).unwrap();
        assert_eq!(b.header.fps, 1.0);
        assert_eq!(b.frames[1].timestamp, 1.0);
    }
}
