//! Synthetic interval-censored data.
//!
//! Each post's engagement is a four-channel self-exciting process with
//! exponential kernel
//!
//! ```text
//! λ_i(t) = m·μ_i·b(t) + Σ_{s_k < t} K[i, c_k] · β · exp(−β (t − s_k))
//! K = α_br · ((1 − c)·I + (c/4)·11ᵀ)
//! ```
//!
//! where `m` is the post's popularity, `b(t) = exp(−t/τ_d)` an optional
//! baseline decay and `c` the cross-channel coupling. The branching matrix has
//! spectral radius `α_br`, so `α_br < 1` keeps the process subcritical. Events
//! are drawn by Ogata thinning and then censored to a crawler-like observation
//! schedule.

use super::records::{Engagement, ObservationRecord, PostRecord, UserMeta};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const HOUR: f64 = 3600.0;

/// One engagement event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds.
    pub t: f64,
    pub channel: usize,
}

/// Self-exciting process parameters; rates are per hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: [f64; 4],
    pub branching: f64,
    pub beta: f64,
    #[serde(default)]
    pub coupling: f64,
    /// Baseline decay time constant in hours; constant baseline when absent.
    #[serde(default)]
    pub baseline_decay_hours: Option<f64>,
}

impl HawkesParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config(format!("baseline rates must be > 0, got {:?}", self.mu)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("kernel decay must be > 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.branching) {
            return Err(Error::Config(format!(
                "branching ratio {} is not subcritical (need 0 <= a < 1)",
                self.branching
            )));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config(format!("coupling must lie in [0, 1], got {}", self.coupling)));
        }
        if let Some(d) = self.baseline_decay_hours {
            if !(d > 0.0) {
                return Err(Error::Config(format!("baseline decay must be > 0, got {d}")));
            }
        }
        Ok(())
    }

    fn kernel(&self) -> [[f64; 4]; 4] {
        let mut k = [[0.0; 4]; 4];
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let diag = if i == j { 1.0 - self.coupling } else { 0.0 };
                *v = self.branching * (diag + self.coupling / 4.0);
            }
        }
        k
    }
}

/// Events of one post over `[0, horizon_hours]` relative to creation, times in
/// seconds after `t0`, sorted.
pub fn simulate_hawkes(params: &HawkesParams, popularity: f64, horizon_hours: f64, rng: &mut impl Rng) -> Vec<Event> {
    let k = params.kernel();
    let beta = params.beta;
    let base = params.mu.map(|m| m * popularity);
    let baseline = |t: f64| match params.baseline_decay_hours {
        Some(d) => (-t / d).exp(),
        None => 1.0,
    };
    // Excitation per channel, already multiplied by β.
    let mut exc = [0.0f64; 4];
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let b = baseline(t);
        let bound: f64 = (0..4).map(|i| base[i] * b + exc[i]).sum();
        if !(bound > 0.0) {
            break;
        }
        let w = -(1.0 - rng.gen::<f64>()).ln() / bound;
        let decay = (-beta * w).exp();
        t += w;
        if t > horizon_hours {
            break;
        }
        for e in &mut exc {
            *e *= decay;
        }
        let bt = baseline(t);
        let lam: [f64; 4] = [0, 1, 2, 3].map(|i| base[i] * bt + exc[i]);
        let total: f64 = lam.iter().sum();
        let u = rng.gen::<f64>() * bound;
        if u < total {
            let mut acc = 0.0;
            let mut c = 3;
            for (i, l) in lam.iter().enumerate() {
                acc += l;
                if u < acc {
                    c = i;
                    break;
                }
            }
            events.push(Event { t: t * HOUR, channel: c });
            for i in 0..4 {
                exc[i] += k[i][c] * beta;
            }
        }
    }
    events
}

/// `e_j` = events in `(t_{j−1}, t_j]` per channel with `t_{-1} = t0`.
pub fn censor_to_intervals(t0: f64, events: &[Event], observation_times: &[f64]) -> Result<Vec<ObservationRecord>> {
    let mut prev = t0;
    for (i, &t) in observation_times.iter().enumerate() {
        if !(t >= prev) || (i > 0 && t == prev) {
            return Err(Error::Invalid(format!("observation times must be sorted and >= t0, got {t} after {prev}")));
        }
        prev = t;
    }
    let mut sorted: Vec<Event> = events.iter().copied().filter(|e| e.t > t0).collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut out = Vec::with_capacity(observation_times.len());
    let mut i = 0;
    for &t in observation_times {
        let mut c = [0u64; 4];
        while i < sorted.len() && sorted[i].t <= t {
            c[sorted[i].channel] += 1;
            i += 1;
        }
        out.push(ObservationRecord { t, e: Engagement::from_array(c) });
    }
    Ok(out)
}

/// Crawler schedule: log-uniform gaps in `[min, max]`, shortened by `dense_factor`
/// during the first `dense_hours`, plus a final snapshot at the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapLaw {
    pub min_minutes: f64,
    pub max_hours: f64,
    pub dense_hours: f64,
    pub dense_factor: f64,
}

impl Default for GapLaw {
    fn default() -> Self {
        Self {
            min_minutes: 5.0,
            max_hours: 12.0,
            dense_hours: 6.0,
            dense_factor: 4.0,
        }
    }
}

impl GapLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_minutes > 0.0) || !(self.max_hours * 60.0 >= self.min_minutes) || !(self.dense_factor >= 1.0) {
            return Err(Error::Config(format!("bad gap law {self:?}")));
        }
        Ok(())
    }

    /// Observation times in seconds after creation, ending at the horizon.
    pub fn schedule(&self, horizon_hours: f64, rng: &mut impl Rng) -> Vec<f64> {
        let (lo, hi) = (self.min_minutes * 60.0, self.max_hours * HOUR);
        let end = horizon_hours * HOUR;
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            let mut gap = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
            if t < self.dense_hours * HOUR {
                gap = (gap / self.dense_factor).max(lo);
            }
            t += gap;
            if t >= end {
                out.push(end);
                return out;
            }
            out.push(t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionRegime {
    pub name: String,
    pub posts: usize,
    pub hawkes: HawkesParams,
    /// Words characteristic of this opinion, used to template post text.
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub name: String,
    pub opinions: Vec<OpinionRegime>,
    /// Creation times are uniform over `[start, start + span_days]`.
    pub start: f64,
    pub span_days: f64,
    pub horizon_hours: f64,
    pub users: usize,
    /// Pareto shape of the per-post popularity multiplier.
    pub popularity_shape: f64,
    /// Probability that a keyword slot is filled from another opinion.
    pub text_noise: f64,
    pub gap_law: GapLaw,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            opinions: vec![
                OpinionRegime {
                    name: "economy".into(),
                    posts: 667,
                    hawkes: HawkesParams {
                        mu: [6.0, 1.0, 2.0, 1.5],
                        branching: 0.5,
                        beta: 2.0,
                        coupling: 0.3,
                        baseline_decay_hours: Some(6.0),
                    },
                    keywords: words(&["tax", "budget", "rates", "wages", "inflation", "market"]),
                },
                OpinionRegime {
                    name: "health".into(),
                    posts: 667,
                    hawkes: HawkesParams {
                        mu: [3.0, 1.5, 2.5, 2.0],
                        branching: 0.7,
                        beta: 0.5,
                        coupling: 0.5,
                        baseline_decay_hours: Some(18.0),
                    },
                    keywords: words(&["vaccine", "hospital", "doctors", "clinic", "virus", "nurses"]),
                },
                OpinionRegime {
                    name: "climate".into(),
                    posts: 666,
                    hawkes: HawkesParams {
                        mu: [4.0, 0.5, 1.0, 3.0],
                        branching: 0.6,
                        beta: 1.0,
                        coupling: 0.2,
                        baseline_decay_hours: Some(12.0),
                    },
                    keywords: words(&["climate", "flood", "carbon", "wildfire", "emissions", "drought"]),
                },
            ],
            start: 1_700_000_000.0,
            span_days: 90.0,
            horizon_hours: 72.0,
            users: 400,
            popularity_shape: 2.5,
            text_noise: 0.2,
            gap_law: GapLaw::default(),
        }
    }
}

const FILLER: [&str; 12] = [
    "today", "people", "really", "think", "news", "again", "new", "report", "says", "this", "week", "everyone",
];

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.opinions.is_empty() {
            return Err(Error::Config("simulation needs at least one opinion".into()));
        }
        for o in &self.opinions {
            o.hawkes
                .validate()
                .map_err(|e| Error::Config(format!("opinion {}: {e}", o.name)))?;
            if o.keywords.is_empty() {
                return Err(Error::Config(format!("opinion {} has no keywords", o.name)));
            }
        }
        if !(self.span_days >= 0.0) || !(self.horizon_hours > 0.0) || self.users == 0 {
            return Err(Error::Config("span, horizon and user pool must be positive".into()));
        }
        if !(self.popularity_shape > 1.0) {
            return Err(Error::Config("popularity shape must be > 1".into()));
        }
        if !(0.0..=1.0).contains(&self.text_noise) {
            return Err(Error::Config("text noise must lie in [0, 1]".into()));
        }
        self.gap_law.validate()
    }

    pub fn num_posts(&self) -> usize {
        self.opinions.iter().map(|o| o.posts).sum()
    }
}

/// Simulated post: the censored record plus its exact event stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SimPost {
    pub record: PostRecord,
    /// Absolute event times.
    pub events: Vec<Event>,
}

impl SimPost {
    /// Exact cumulative counts at absolute time `t`.
    pub fn count_until(&self, t: f64) -> [f64; 4] {
        let mut c = [0.0; 4];
        for e in self.events.iter().take_while(|e| e.t <= t) {
            c[e.channel] += 1.0;
        }
        c
    }
}

fn user_pool(n: usize, rng: &mut ChaCha8Rng) -> Vec<UserMeta> {
    (0..n)
        .map(|i| {
            let followers = 10f64.powf(rng.gen_range(1.0..6.0)).floor() as u64;
            UserMeta {
                user_id: format!("u{i:05}"),
                followers,
                verified: followers > 100_000 && rng.gen_bool(0.5),
                account_age_days: rng.gen_range(10.0..3000.0),
            }
        })
        .collect()
}

fn post_text(cfg: &SimConfig, opinion: usize, rng: &mut ChaCha8Rng) -> String {
    let n_kw = rng.gen_range(2..=3);
    let n_fill = rng.gen_range(2..=4);
    let mut parts: Vec<&str> = Vec::with_capacity(n_kw + n_fill);
    for _ in 0..n_kw {
        let o = if cfg.opinions.len() > 1 && rng.gen_bool(cfg.text_noise) {
            let mut other = rng.gen_range(0..cfg.opinions.len() - 1);
            if other >= opinion {
                other += 1;
            }
            other
        } else {
            opinion
        };
        let kws = &cfg.opinions[o].keywords;
        parts.push(&kws[rng.gen_range(0..kws.len())]);
    }
    for _ in 0..n_fill {
        let at = rng.gen_range(0..=parts.len());
        parts.insert(at, FILLER[rng.gen_range(0..FILLER.len())]);
    }
    parts.join(" ")
}

/// Generate every post. Per-post randomness comes from its own ChaCha stream,
/// so the output does not depend on the number of worker threads.
pub fn simulate_posts(cfg: &SimConfig, seed: u64) -> Result<Vec<SimPost>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = user_pool(cfg.users, &mut rng);
    let jobs: Vec<(usize, usize)> = cfg
        .opinions
        .iter()
        .enumerate()
        .flat_map(|(o, r)| (0..r.posts).map(move |_| o))
        .enumerate()
        .collect();
    let mut posts: Vec<SimPost> = jobs
        .par_iter()
        .map(|&(idx, o)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64 + 1);
            let regime = &cfg.opinions[o];
            let t0 = (cfg.start + rng.gen::<f64>() * cfg.span_days * 86_400.0).floor();
            let user = users[rng.gen_range(0..users.len())].clone();
            let pareto = (1.0 - rng.gen::<f64>()).powf(-1.0 / cfg.popularity_shape);
            let reach = 0.5 + (1.0 + user.followers as f64).log10() / 6.0;
            let popularity = pareto * reach;
            let text = post_text(cfg, o, &mut rng);
            let mut events = simulate_hawkes(&regime.hawkes, popularity, cfg.horizon_hours, &mut rng);
            for e in &mut events {
                e.t += t0;
            }
            let times: Vec<f64> = cfg
                .gap_law
                .schedule(cfg.horizon_hours, &mut rng)
                .into_iter()
                .map(|t| t0 + t)
                .collect();
            let observations = censor_to_intervals(t0, &events, &times)?;
            Ok(SimPost {
                record: PostRecord {
                    post_id: format!("{}-{idx:06}", regime.name),
                    t0,
                    text,
                    user,
                    opinion: Some(regime.name.clone()),
                    observations,
                },
                events,
            })
        })
        .collect::<Result<_>>()?;
    posts.sort_by(|a, b| {
        a.record
            .t0
            .total_cmp(&b.record.t0)
            .then_with(|| a.record.post_id.cmp(&b.record.post_id))
    });
    Ok(posts)
}

/// Censored records only.
pub fn simulate_dataset(cfg: &SimConfig, seed: u64) -> Result<Vec<PostRecord>> {
    Ok(simulate_posts(cfg, seed)?.into_iter().map(|p| p.record).collect())
}
