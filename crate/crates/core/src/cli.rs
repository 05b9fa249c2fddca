//! The `icssm` command line.
//!
//! Exit codes: 0 on success, 2 on invalid input or configuration (including
//! argument errors), 3 on numeric failure. `ICSSM_SEED` overrides every seed
//! and `ICSSM_THREADS` caps the worker pool.

use crate::data::insights::channel_insights;
use crate::data::io::{manifest_path, write_jsonl};
use crate::data::split::DEFAULT_FRACTIONS;
use crate::data::{load_posts, simulate_dataset, split_dataset, validate_and_load, write_posts, DatasetManifest, PostRecord, SimConfig, SplitData};
use crate::error::{Error, Result};
use crate::eval::{
    dynamic_opinion_forecast, early_prediction_sweep, overall_eval, staged_next_eval, DynamicConfig, Stage,
    DEFAULT_CHECKPOINTS_MINUTES,
};
use crate::model::Model;
use crate::training::{finetune, pretrain, train_tier2, RunConfig, Task, TrainReport};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Parse `<integer><unit>` with unit `m`, `h` or `d` into seconds.
pub fn parse_duration(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("bad duration {s:?}; expected an integer followed by m, h or d"));
    let (num, unit) = s.split_at(s.len().checked_sub(1).ok_or_else(bad)?);
    let n: u64 = num.parse().map_err(|_| bad())?;
    let scale = match unit {
        "m" => 60.0,
        "h" => 3600.0,
        "d" => 86_400.0,
        _ => return Err(bad()),
    };
    Ok(n as f64 * scale)
}

fn duration_arg(s: &str) -> std::result::Result<f64, String> {
    parse_duration(s).map_err(|e| e.to_string())
}

fn fractions_arg(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated fractions".to_string())
}

#[derive(Parser, Debug)]
#[command(name = "icssm", version, about = "Interval-censored state-space engagement models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Overall,
    Early,
    Staged,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Forecast,
    Classify,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a synthetic interval-censored corpus.
    Simulate {
        /// Generator settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal train/validation/test split.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_parser = fractions_arg)]
        fractions: Option<[f64; 3]>,
    },
    /// Self-supervised pretraining.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Model and training settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune a checkpoint for a task. Forecasting also trains the group tier.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast one post's engagement trajectory.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Split directory or posts file holding the post.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        post_id: String,
        #[arg(long, value_parser = duration_arg, default_value = "6h")]
        tau_obs: f64,
        #[arg(long, value_parser = duration_arg, default_value = "28d")]
        horizon: f64,
        #[arg(long, value_parser = duration_arg, default_value = "5m")]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol.
    Evaluate {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Observation window for `overall`.
        #[arg(long, value_parser = duration_arg, default_value = "6h")]
        tau_obs: f64,
        /// Stage for `staged` (fixed6h, early, mid, late); all when omitted.
        #[arg(long)]
        stage: Option<String>,
        /// Frame start for `dynamic`, seconds since the epoch; defaults to the
        /// first post of the chosen split.
        #[arg(long)]
        frame_start: Option<f64>,
        /// Window lengths in days for `dynamic`.
        #[arg(long, value_delimiter = ',', default_value = "3,7,10")]
        windows: Vec<f64>,
    },
    /// Per-channel ECCDF and power-law tail exponent.
    Insights {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        x_min: f64,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("ICSSM_SEED") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("ICSSM_SEED must be an integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ICSSM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("ICSSM_THREADS must be a positive integer, got {v:?}")))?;
        // A pool may already exist when running in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
    }
    Ok(cfg)
}

fn report_path(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    write_jsonl(path, lines)
}

fn load_any_posts(path: &Path) -> Result<Vec<PostRecord>> {
    if path.is_dir() {
        let d = SplitData::load(path)?;
        Ok(d.train.into_iter().chain(d.val).chain(d.test).collect())
    } else {
        load_posts(path)
    }
}

fn summary_line(kind: &str, r: &TrainReport) -> serde_json::Value {
    let last = r.epochs.last();
    json!({
        "kind": kind,
        "epochs": r.epochs.len(),
        "best_epoch": r.best_epoch,
        "stop_reason": r.stop_reason,
        "final_train": last.map(|e| e.train),
        "final_validation": last.and_then(|e| e.validation),
    })
}

fn say(v: serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{v}");
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg: SimConfig = match config {
                Some(p) => {
                    let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&s)?
                }
                None => SimConfig::default(),
            };
            let seed = env_seed()?.unwrap_or(seed);
            let posts = simulate_dataset(&cfg, seed)?;
            write_posts(&out, &posts)?;
            let mut manifest = DatasetManifest::derive(&cfg.name, &posts);
            manifest.generator = Some(serde_json::to_value(&cfg)?);
            manifest.seed = Some(seed);
            manifest.save(&manifest_path(&out))?;
            say(json!({"kind": "simulate", "posts": posts.len(), "out": out}));
        }
        Command::Split { input, out_dir, fractions } => {
            let (posts, manifest) = validate_and_load(&input)?;
            let data = split_dataset(&posts, &manifest, fractions.unwrap_or(DEFAULT_FRACTIONS))?;
            data.save(&out_dir)?;
            say(json!({"kind": "split", "counts": [data.train.len(), data.val.len(), data.test.len()], "dropped": data.manifest.split.as_ref().map(|s| s.dropped.len())}));
        }
        Command::Pretrain { data, config, out } => {
            let data = SplitData::load(&data)?;
            let run = load_run_config(config.as_deref())?;
            let mut mc = run.model.clone();
            if mc.opinions.is_empty() {
                mc.opinions = data.manifest.opinions.clone();
            }
            mc.s_ref = data.manifest.s_ref;
            let mut model = Model::new(mc)?;
            let report = pretrain(&mut model, &data, &run.train)?;
            model.save(&out)?;
            report.write_jsonl(&report_path(&out, ".report.jsonl"))?;
            say(summary_line("pretrain", &report));
        }
        Command::Train { task, data, from, config, out } => {
            let data = SplitData::load(&data)?;
            let run = load_run_config(config.as_deref())?;
            let mut model = Model::load(&from)?;
            let task = match task {
                TaskArg::Forecast => Task::Forecast,
                TaskArg::Classify => Task::Classify,
            };
            let report = finetune(&mut model, task, &data, &run.train)?;
            report.write_jsonl(&report_path(&out, ".report.jsonl"))?;
            say(summary_line("finetune", &report));
            if task == Task::Forecast {
                let t2 = train_tier2(&mut model, &data, &run.train)?;
                t2.write_jsonl(&report_path(&out, ".tier2.report.jsonl"))?;
                say(summary_line("tier2", &t2));
            }
            model.save(&out)?;
        }
        Command::Predict { model, data, post_id, tau_obs, horizon, step, out } => {
            let model = Model::load(&model)?;
            let posts = load_any_posts(&data)?;
            let post = posts
                .iter()
                .find(|p| p.post_id == post_id)
                .ok_or_else(|| Error::Invalid(format!("post {post_id} not found in {}", data.display())))?;
            let series = model.rollout_trajectory(post, tau_obs, step, horizon)?;
            let observed = post.cumulative(post.window(tau_obs).len()).as_f64();
            let mut lines = vec![json!({
                "kind": "summary",
                "post_id": post_id,
                "tau_obs": tau_obs,
                "observed": observed,
                "predicted_total": model.predict_total(post, tau_obs)?,
                "opinions": model.config.opinions,
                "opinion_probabilities": model.classify_opinion(post, tau_obs)?,
                "points": series.len(),
            })];
            for i in 0..series.len() {
                lines.push(json!({
                    "kind": "point",
                    "time": series.times[i],
                    "increment": series.increments[i],
                    "cumulative": series.cumulative[i],
                }));
            }
            write_lines(&out, &lines)?;
            say(json!({"kind": "predict", "post_id": post_id, "points": series.len(), "out": out}));
        }
        Command::Evaluate { mode, model, data, out, split, tau_obs, stage, frame_start, windows } => {
            let model = Model::load(&model)?;
            let data = SplitData::load(&data)?;
            let posts = match split {
                SplitName::Train => &data.train,
                SplitName::Val => &data.val,
                SplitName::Test => &data.test,
            };
            let before = model.store.checksum();
            let lines = evaluate(&model, &data, posts, mode, tau_obs, stage.as_deref(), frame_start, windows)?;
            debug_assert_eq!(before, model.store.checksum());
            write_lines(&out, &lines)?;
            say(json!({"kind": "evaluate", "mode": format!("{mode:?}").to_lowercase(), "lines": lines.len(), "out": out}));
        }
        Command::Insights { input, out, x_min } => {
            let posts = load_posts(&input)?;
            let rows = channel_insights(&posts, x_min);
            write_jsonl(&out, &rows)?;
            let alphas: Vec<_> = rows.iter().map(|r| r.fit.as_ref().and_then(|f| f.alpha)).collect();
            say(json!({"kind": "insights", "alpha": alphas, "out": out}));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Model,
    data: &SplitData,
    posts: &[PostRecord],
    mode: EvalMode,
    tau_obs: f64,
    stage: Option<&str>,
    frame_start: Option<f64>,
    windows: Vec<f64>,
) -> Result<Vec<serde_json::Value>> {
    let mut lines = Vec::new();
    match mode {
        EvalMode::Overall => {
            let labelled = posts.iter().all(|p| p.opinion.is_some()) && model.config.num_classes() >= 2;
            let classes = labelled.then_some(&model.config.opinions[..]);
            let mut r = overall_eval(model, posts, tau_obs, classes)?;
            let rows = std::mem::take(&mut r.predictions);
            let mut head = serde_json::to_value(&r)?;
            head["kind"] = json!("metrics");
            lines.push(head);
            for p in rows {
                let mut v = serde_json::to_value(&p)?;
                v["kind"] = json!("post");
                lines.push(v);
            }
        }
        EvalMode::Early => {
            for row in early_prediction_sweep(model, posts, &DEFAULT_CHECKPOINTS_MINUTES)? {
                lines.push(serde_json::to_value(&row)?);
            }
        }
        EvalMode::Staged => {
            let stages = match stage {
                Some(s) => vec![s.parse::<Stage>()?],
                None => Stage::ALL.to_vec(),
            };
            for s in stages {
                let r = staged_next_eval(model, posts, s)?;
                let mut v = serde_json::to_value(&r)?;
                v["stage"] = serde_json::to_value(s)?;
                lines.push(v);
            }
        }
        EvalMode::Dynamic => {
            let cfg = DynamicConfig {
                windows_days: windows,
                ..Default::default()
            };
            let frame = match frame_start {
                Some(f) => f,
                None => posts
                    .iter()
                    .map(|p| p.t0)
                    .reduce(f64::min)
                    .ok_or_else(|| Error::Invalid("empty split".into()))?,
            };
            let all: Vec<PostRecord> = data.train.iter().chain(&data.val).chain(&data.test).cloned().collect();
            for label in &model.config.opinions {
                let group: Vec<PostRecord> = all.iter().filter(|p| p.opinion.as_ref() == Some(label)).cloned().collect();
                let d = dynamic_opinion_forecast(model, &group, frame, &cfg)?;
                for s in &d.summaries {
                    let mut v = serde_json::to_value(s)?;
                    v["kind"] = json!("summary");
                    v["opinion"] = json!(label);
                    lines.push(v);
                }
                for r in &d.records {
                    let mut v = serde_json::to_value(r)?;
                    v["kind"] = json!("record");
                    v["opinion"] = json!(label);
                    lines.push(v);
                }
            }
        }
    }
    Ok(lines)
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_INVALID })
        }
    }
}
