//! Chronological train/validation/test splitting.

use super::io::{median_gap, DatasetManifest, SplitData, SplitInfo};
use super::records::PostRecord;
use crate::error::{Error, Result};

/// Posts with fewer intervals are excluded from every split.
pub const MIN_INTERVALS: usize = 4;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<PostRecord>,
    pub val: Vec<PostRecord>,
    pub test: Vec<PostRecord>,
    pub dropped: Vec<String>,
}

/// Sort by creation time (ties by id) and cut contiguous slices.
pub fn temporal_split(posts: &[PostRecord], fractions: [f64; 3]) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be >= 0 and sum to 1, got {fractions:?}")));
    }
    let mut dropped = Vec::new();
    let mut kept: Vec<PostRecord> = Vec::with_capacity(posts.len());
    for p in posts {
        if p.num_intervals() < MIN_INTERVALS {
            dropped.push(p.post_id.clone());
        } else {
            kept.push(p.clone());
        }
    }
    kept.sort_by(|a, b| a.t0.total_cmp(&b.t0).then_with(|| a.post_id.cmp(&b.post_id)));
    let n = kept.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = kept.split_off(n_train + n_val);
    let val = kept.split_off(n_train);
    let split = Split {
        train: kept,
        val,
        test,
        dropped,
    };
    for (name, part) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(Error::Invalid(format!("empty {name} split ({n} eligible posts)")));
        }
    }
    Ok(split)
}

/// Split and attach a manifest whose `s_ref` is the training median gap.
pub fn split_dataset(posts: &[PostRecord], base: &DatasetManifest, fractions: [f64; 3]) -> Result<SplitData> {
    let s = temporal_split(posts, fractions)?;
    let end = |p: &[PostRecord]| p.last().map_or(f64::NAN, |x| x.t0);
    let mut manifest = base.clone();
    manifest.s_ref = median_gap(&s.train).unwrap_or(base.s_ref);
    manifest.split = Some(SplitInfo {
        fractions,
        counts: [s.train.len(), s.val.len(), s.test.len()],
        train_end: end(&s.train),
        val_end: end(&s.val),
        dropped: s.dropped.clone(),
    });
    manifest.validate()?;
    Ok(SplitData {
        train: s.train,
        val: s.val,
        test: s.test,
        manifest,
    })
}
