//! Post tokenization and the content encoder.
//!
//! Layout: `CLS TEXT.. SEP USER.. SEP TIME.. SEP ENG..`. Text is byte-level;
//! user metadata, timestamps and observed engagement become discretized
//! feature tokens. Separators are always emitted so segment positions stay
//! recognisable when a segment is ablated or empty.
//!
//! Vocabulary (fixed ids):
//!
//! | ids        | meaning                                  |
//! |------------|------------------------------------------|
//! | 0, 1, 2    | CLS, SEP, PAD                            |
//! | 3..=258    | raw bytes 0x00..=0xFF                    |
//! | 259..      | feature tokens, see [`FeatureToken`]     |

use crate::data::{PostRecord, CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const PAD: usize = 2;
const BYTE_BASE: usize = 3;

const FOLLOWER_BUCKETS: usize = 10;
const AGE_BOUNDS_DAYS: [f64; 4] = [30.0, 90.0, 365.0, 1095.0];
const OFFSET_BUCKETS: usize = 16;
const ENG_BUCKETS: usize = 12;

const FOLLOWER_BASE: usize = BYTE_BASE + 256;
const VERIFIED_BASE: usize = FOLLOWER_BASE + FOLLOWER_BUCKETS;
const AGE_BASE: usize = VERIFIED_BASE + 2;
const HOUR_BASE: usize = AGE_BASE + AGE_BOUNDS_DAYS.len() + 1;
const DOW_BASE: usize = HOUR_BASE + 24;
const OFFSET_BASE: usize = DOW_BASE + 7;
const ENG_BASE: usize = OFFSET_BASE + OFFSET_BUCKETS;
pub const VOCAB_SIZE: usize = ENG_BASE + CHANNELS.len() * ENG_BUCKETS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Cls,
    Text,
    Sep,
    User,
    Time,
    Eng,
}

/// Discretized non-text features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureToken {
    /// `floor(log10(1 + followers))`, capped.
    Followers(usize),
    Verified(bool),
    /// Index into the account-age bounds 30 d, 90 d, 1 y, 3 y.
    AccountAge(usize),
    /// UTC hour of creation.
    Hour(usize),
    /// Day of week of creation, 0 = Thursday 1970-01-01.
    Weekday(usize),
    /// `floor(log2(1 + window minutes))`, capped.
    WindowOffset(usize),
    /// Channel and `floor(log2(1 + cumulative count))`, capped.
    Engagement(usize, usize),
}

impl FeatureToken {
    pub fn id(self) -> usize {
        match self {
            FeatureToken::Followers(b) => FOLLOWER_BASE + b.min(FOLLOWER_BUCKETS - 1),
            FeatureToken::Verified(v) => VERIFIED_BASE + v as usize,
            FeatureToken::AccountAge(b) => AGE_BASE + b.min(AGE_BOUNDS_DAYS.len()),
            FeatureToken::Hour(h) => HOUR_BASE + h % 24,
            FeatureToken::Weekday(d) => DOW_BASE + d % 7,
            FeatureToken::WindowOffset(b) => OFFSET_BASE + b.min(OFFSET_BUCKETS - 1),
            FeatureToken::Engagement(c, b) => ENG_BASE + c * ENG_BUCKETS + b.min(ENG_BUCKETS - 1),
        }
    }
}

pub fn byte_token(b: u8) -> usize {
    BYTE_BASE + b as usize
}

/// Segments to drop, mirroring the "w/o text", "w/o user" and "w/o time" variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub without_text: bool,
    pub without_user: bool,
    pub without_time: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Segment kinds in order, with runs collapsed.
    pub fn layout(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for &s in &self.segments {
            if out.last() != Some(&s) || s == Segment::Sep {
                out.push(s);
            }
        }
        out
    }
}

fn log_bucket(x: f64, base: f64) -> usize {
    if x <= 0.0 {
        0
    } else {
        x.ln_1p().div_euclid(base.ln()).max(0.0) as usize
    }
}

/// Tokenize a post. With `tau_obs = None` the post is seen as of creation and the
/// ENG segment is empty; otherwise the window length and cumulative counts within
/// it are encoded. Text is truncated first when the sequence exceeds `l_max`.
pub fn tokenize_post(post: &PostRecord, tau_obs: Option<f64>, flags: Ablation, l_max: usize) -> Result<TokenSequence> {
    let mut user = Vec::new();
    if !flags.without_user {
        user.push(FeatureToken::Followers(log_bucket(post.user.followers as f64, 10.0)).id());
        user.push(FeatureToken::Verified(post.user.verified).id());
        let age = AGE_BOUNDS_DAYS
            .iter()
            .position(|&b| post.user.account_age_days < b)
            .unwrap_or(AGE_BOUNDS_DAYS.len());
        user.push(FeatureToken::AccountAge(age).id());
    }
    let mut time = Vec::new();
    if !flags.without_time {
        let secs = post.t0.floor() as i64;
        let days = secs.div_euclid(86_400);
        let hour = secs.rem_euclid(86_400) / 3600;
        time.push(FeatureToken::Hour(hour as usize).id());
        time.push(FeatureToken::Weekday(days.rem_euclid(7) as usize).id());
        if let Some(tau) = tau_obs {
            time.push(FeatureToken::WindowOffset(log_bucket(tau / 60.0, 2.0)).id());
        }
    }
    let mut eng = Vec::new();
    if let Some(tau) = tau_obs {
        let n = post.window(tau).len();
        for (c, v) in post.cumulative(n).counts().iter().enumerate() {
            eng.push(FeatureToken::Engagement(c, log_bucket(*v as f64, 2.0)).id());
        }
    }

    let fixed = 4 + user.len() + time.len() + eng.len();
    if fixed > l_max {
        return Err(Error::Config(format!(
            "token limit {l_max} cannot hold the {fixed} non-text tokens"
        )));
    }
    let text: Vec<usize> = if flags.without_text {
        Vec::new()
    } else {
        post.text.bytes().take(l_max - fixed).map(byte_token).collect()
    };

    let mut seq = TokenSequence {
        ids: Vec::with_capacity(fixed + text.len()),
        segments: Vec::with_capacity(fixed + text.len()),
    };
    let mut push = |ids: &[usize], s: Segment| {
        seq.ids.extend_from_slice(ids);
        seq.segments.extend(std::iter::repeat(s).take(ids.len()));
    };
    push(&[CLS], Segment::Cls);
    push(&text, Segment::Text);
    push(&[SEP], Segment::Sep);
    push(&user, Segment::User);
    push(&[SEP], Segment::Sep);
    push(&time, Segment::Time);
    push(&[SEP], Segment::Sep);
    push(&eng, Segment::Eng);
    Ok(seq)
}

/// Maps a token sequence to a fixed-width vector.
pub trait PostEncoder: Send + Sync {
    fn width(&self) -> usize;

    /// `1×width` node on the tape.
    fn encode_node(&self, g: &mut Graph, store: &ParamStore, tokens: &TokenSequence) -> Result<NodeId>;

    fn encode(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let n = self.encode_node(&mut g, store, tokens)?;
        Ok(g.value(n).data().to_vec())
    }

    /// Parameter names owned by this encoder.
    fn param_prefix(&self) -> Option<&str> {
        None
    }
}

/// Token embedding table, mean pooling, one `tanh` dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoolEncoder {
    pub table: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    pub d_emb: usize,
    prefix: String,
}

impl MeanPoolEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, d_emb: usize, rng: &mut impl Rng) -> Self {
        let table = store.add_uniform(format!("{prefix}.tokens"), VOCAB_SIZE, d_emb, 0.5, rng);
        let w = store.add_uniform(format!("{prefix}.w"), d_emb, d_emb, 1.0 / (d_emb as f64).sqrt(), rng);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(1, d_emb));
        Self {
            table,
            w,
            b,
            d_emb,
            prefix: prefix.to_string(),
        }
    }
}

impl PostEncoder for MeanPoolEncoder {
    fn width(&self) -> usize {
        self.d_emb
    }

    fn encode_node(&self, g: &mut Graph, store: &ParamStore, tokens: &TokenSequence) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.ids.iter().find(|&&i| i >= VOCAB_SIZE) {
            return Err(Error::Invalid(format!("unknown token id {bad}")));
        }
        let table = g.param(store, self.table);
        let rows = g.gather(table, &tokens.ids)?;
        let pooled = g.mean_rows(rows);
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let z = g.matmul(pooled, w);
        let z = g.add_row(z, b);
        Ok(g.unary(z, crate::numerics::Unary::Tanh))
    }

    fn param_prefix(&self) -> Option<&str> {
        Some(&self.prefix)
    }
}

/// Adapter for an externally computed, non-trainable embedding.
pub struct ExternalEncoder {
    width: usize,
    f: Arc<dyn Fn(&TokenSequence) -> Vec<f64> + Send + Sync>,
}

impl ExternalEncoder {
    pub fn new(width: usize, f: impl Fn(&TokenSequence) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { width, f: Arc::new(f) }
    }
}

impl PostEncoder for ExternalEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode_node(&self, g: &mut Graph, _store: &ParamStore, tokens: &TokenSequence) -> Result<NodeId> {
        let v = (self.f)(tokens);
        if v.len() != self.width {
            return Err(Error::Shape(format!(
                "external encoder returned {} values, expected {}",
                v.len(),
                self.width
            )));
        }
        Ok(g.constant(Tensor::row_vector(v)))
    }
}
