//! JSON Lines datasets and their manifests.

use super::records::{PostRecord, CHANNELS};
use crate::error::{Error, LineError, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Chronological split metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub fractions: [f64; 3],
    /// `[train, val, test]` post counts after filtering.
    pub counts: [usize; 3],
    /// Largest creation time in train and in validation.
    pub train_end: f64,
    pub val_end: f64,
    /// Posts excluded for having fewer than the minimum number of intervals.
    pub dropped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub opinions: Vec<String>,
    pub channels: Vec<String>,
    /// Median observation gap, seconds.
    pub s_ref: f64,
    #[serde(default)]
    pub split: Option<SplitInfo>,
    #[serde(default)]
    pub generator: Option<Value>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Opinions with fewer posts are left out of classification.
    #[serde(default)]
    pub min_class_posts: usize,
}

impl DatasetManifest {
    /// Derive a manifest from the posts themselves.
    pub fn derive(name: &str, posts: &[PostRecord]) -> Self {
        let mut opinions: Vec<String> = posts.iter().filter_map(|p| p.opinion.clone()).collect();
        opinions.sort();
        opinions.dedup();
        Self {
            name: name.to_string(),
            opinions,
            channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
            s_ref: median_gap(posts).unwrap_or(3600.0),
            split: None,
            generator: None,
            seed: None,
            min_class_posts: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.opinions.is_empty() {
            return Err(Error::Invalid("manifest has no opinion labels".into()));
        }
        if !(self.s_ref > 0.0) || !self.s_ref.is_finite() {
            return Err(Error::Invalid(format!("manifest s_ref must be > 0, got {}", self.s_ref)));
        }
        if self.channels != CHANNELS {
            return Err(Error::Invalid(format!("unexpected channels {:?}", self.channels)));
        }
        Ok(())
    }

    /// Labels with at least `min_class_posts` posts in `posts`.
    pub fn class_labels(&self, posts: &[PostRecord]) -> Vec<String> {
        self.opinions
            .iter()
            .filter(|o| posts.iter().filter(|p| p.opinion.as_ref() == Some(*o)).count() >= self.min_class_posts)
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Median of every gap between consecutive observation times (creation included).
pub fn median_gap(posts: &[PostRecord]) -> Option<f64> {
    let mut gaps: Vec<f64> = posts
        .iter()
        .flat_map(|p| {
            let mut prev = p.t0;
            p.observations.iter().map(move |o| {
                let g = o.t - prev;
                prev = o.t;
                g
            })
        })
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Some(if n % 2 == 1 { gaps[n / 2] } else { 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]) })
}

/// `data.jsonl` → `data.manifest.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    data.with_file_name(format!("{stem}.manifest.json"))
}

fn negative_count(v: &Value) -> Option<String> {
    for (i, o) in v.get("observations")?.as_array()?.iter().enumerate() {
        let e = o.get("e")?.as_object()?;
        for c in CHANNELS {
            if let Some(x) = e.get(c).and_then(Value::as_f64) {
                if x < 0.0 {
                    return Some(format!("observation {i}: negative count for {c}"));
                }
            }
        }
    }
    None
}

/// Parse one dataset line.
pub fn parse_post(line: &str) -> std::result::Result<PostRecord, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    if let Some(reason) = negative_count(&v) {
        return Err(reason);
    }
    let post: PostRecord = serde_json::from_value(v).map_err(|e| format!("bad record: {e}"))?;
    post.check()?;
    Ok(post)
}

/// Read and validate a JSON Lines dataset. Every bad line is reported.
pub fn load_posts(path: &Path) -> Result<Vec<PostRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut posts = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_post(&line) {
            Ok(p) if !seen.insert(p.post_id.clone()) => errors.push(LineError {
                line: i + 1,
                reason: format!("duplicate post_id {:?}", p.post_id),
            }),
            Ok(p) => posts.push(p),
            Err(reason) => errors.push(LineError { line: i + 1, reason }),
        }
    }
    if errors.is_empty() {
        Ok(posts)
    } else {
        Err(Error::Validation(errors))
    }
}

/// Load posts plus the sidecar manifest, deriving one when absent.
pub fn validate_and_load(path: &Path) -> Result<(Vec<PostRecord>, DatasetManifest)> {
    let posts = load_posts(path)?;
    let mp = manifest_path(path);
    let manifest = if mp.exists() {
        DatasetManifest::load(&mp)?
    } else {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        DatasetManifest::derive(name, &posts)
    };
    Ok((posts, manifest))
}

pub fn write_posts(path: &Path, posts: &[PostRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in posts {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write any serializable records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A split directory: `train.jsonl`, `val.jsonl`, `test.jsonl`, `manifest.json`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub train: Vec<PostRecord>,
    pub val: Vec<PostRecord>,
    pub test: Vec<PostRecord>,
    pub manifest: DatasetManifest,
}

impl SplitData {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_posts(&dir.join("train.jsonl"), &self.train)?;
        write_posts(&dir.join("val.jsonl"), &self.val)?;
        write_posts(&dir.join("test.jsonl"), &self.test)?;
        self.manifest.save(&dir.join("manifest.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
        manifest.validate()?;
        Ok(Self {
            train: load_posts(&dir.join("train.jsonl"))?,
            val: load_posts(&dir.join("val.jsonl"))?,
            test: load_posts(&dir.join("test.jsonl"))?,
            manifest,
        })
    }
}
