use serde::{Deserialize, Serialize};

pub const CHANNELS: [&str; 4] = ["likes", "shares", "comments", "emojis"];

/// Per-interval counts for the four engagement channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Engagement {
    pub likes: u64,
    pub shares: u64,
    pub comments: u64,
    pub emojis: u64,
}

impl Engagement {
    pub fn from_array(c: [u64; 4]) -> Self {
        Self {
            likes: c[0],
            shares: c[1],
            comments: c[2],
            emojis: c[3],
        }
    }

    pub fn counts(&self) -> [u64; 4] {
        [self.likes, self.shares, self.comments, self.emojis]
    }

    pub fn as_f64(&self) -> [f64; 4] {
        self.counts().map(|c| c as f64)
    }

    pub fn log1p(&self) -> [f64; 4] {
        self.counts().map(|c| (c as f64).ln_1p())
    }

    pub fn total(&self) -> u64 {
        self.counts().iter().sum()
    }

    pub fn add(&self, other: &Engagement) -> Engagement {
        let (a, b) = (self.counts(), other.counts());
        Engagement::from_array([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserMeta {
    pub user_id: String,
    pub followers: u64,
    pub verified: bool,
    pub account_age_days: f64,
}

/// Counts accrued in `(t_prev, t]`, where `t_prev` is the previous observation
/// or the post's creation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t: f64,
    pub e: Engagement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub t0: f64,
    pub text: String,
    pub user: UserMeta,
    pub opinion: Option<String>,
    pub observations: Vec<ObservationRecord>,
}

impl PostRecord {
    /// Structural checks. Returns the first violated rule.
    pub fn check(&self) -> Result<(), String> {
        if !self.t0.is_finite() {
            return Err("non-finite creation time".into());
        }
        if !self.user.account_age_days.is_finite() || self.user.account_age_days < 0.0 {
            return Err("account age must be finite and >= 0".into());
        }
        let mut prev = self.t0;
        for (i, o) in self.observations.iter().enumerate() {
            if !o.t.is_finite() {
                return Err(format!("observation {i}: non-finite time"));
            }
            if o.t < self.t0 {
                return Err(format!("observation {i}: pre-creation observation"));
            }
            if i > 0 && o.t <= prev {
                return Err(format!("observation {i}: unordered times"));
            }
            prev = o.t;
        }
        Ok(())
    }

    /// Observations with `t ≤ t0 + tau_obs`.
    pub fn window(&self, tau_obs: f64) -> &[ObservationRecord] {
        let end = self.t0 + tau_obs;
        let n = self.observations.partition_point(|o| o.t <= end);
        &self.observations[..n]
    }

    /// Copy keeping only the observation window.
    pub fn truncated(&self, tau_obs: f64) -> PostRecord {
        PostRecord {
            observations: self.window(tau_obs).to_vec(),
            ..self.clone()
        }
    }

    /// Sum of the first `n` intervals.
    pub fn cumulative(&self, n: usize) -> Engagement {
        self.observations[..n]
            .iter()
            .fold(Engagement::default(), |acc, o| acc.add(&o.e))
    }

    pub fn total(&self) -> Engagement {
        self.cumulative(self.observations.len())
    }

    pub fn last_time(&self) -> f64 {
        self.observations.last().map_or(self.t0, |o| o.t)
    }

    pub fn num_intervals(&self) -> usize {
        self.observations.len()
    }
}
