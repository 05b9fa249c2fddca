use super::*;
use crate::data::DatasetManifest;
use crate::model::forward::temporal_loss_node;
use crate::model::sequence::{build_plan, History};
use crate::model::tests::{sample_post, small_config};
use crate::numerics::Graph;
use objectives::PassContext;

fn posts(n: usize, offset: u64) -> Vec<PostRecord> {
    (offset..)
        .map(sample_post)
        .filter(|p| p.num_intervals() >= MIN_INTERVALS)
        .take(n)
        .enumerate()
        .map(|(i, mut p)| {
            p.opinion = Some(if i % 2 == 0 { "a" } else { "b" }.into());
            p
        })
        .collect()
}

fn split(n_train: usize, n_val: usize) -> SplitData {
    let train = posts(n_train, 0);
    let val = posts(n_val, 1000);
    SplitData {
        manifest: DatasetManifest::derive("t", &train),
        train,
        val,
        test: Vec::new(),
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 3,
        warmup_steps: 0,
        rollout_horizon: 1800.0,
        ..Default::default()
    }
}

#[test]
fn pretraining_is_deterministic() {
    let data = split(6, 2);
    let run = || {
        let mut m = Model::new(small_config()).unwrap();
        let r = pretrain(&mut m, &data, &quick()).unwrap();
        (m.to_checkpoint(crate::numerics::Dtype::F64).unwrap().to_bytes().unwrap(), r.without_timing())
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.epochs.len(), 2);
    assert!(ra.max_identity_error() < 1e-12);
}

#[test]
fn total_loss_identity_and_lambda_zero() {
    let model = Model::new(small_config()).unwrap();
    let post = &posts(1, 7)[0];
    let ctx = PassContext {
        seed: 3,
        epoch: 0,
        teacher_forcing: 0.5,
        train: true,
    };
    let cfg = quick();
    let r = model.evaluate_post(objectives::Objective::Pretrain, &cfg, post, 0, ctx).unwrap();
    let l = r.losses;
    assert!((l.total - (l.pred + cfg.lambda * l.temp)).abs() < 1e-12);
    assert!(l.temp > 0.0);

    // λ is validated to lie in (0, 1) for runs; the loss form itself reduces to
    // L_pred at λ = 0.
    let zero = TrainConfig { lambda: 0.0, ..cfg };
    let r0 = model.evaluate_post(objectives::Objective::Pretrain, &zero, post, 0, ctx).unwrap();
    assert_eq!(r0.losses.total, r0.losses.pred);
}

#[test]
fn value_losses_match_tape() {
    let model = Model::new(small_config()).unwrap();
    let post = &posts(1, 11)[0];
    let h = History::from_post(post, None);
    let plan = build_plan(&h, h.last_time(), &h.truth_hats(), None).unwrap();
    let mut g = Graph::new();
    let se = model.content_node(&mut g, &model.store, post, None).unwrap();
    let out = model
        .forward_tape::<rand_chacha::ChaCha8Rng>(&mut g, &model.store, &plan, se, None)
        .unwrap();
    let lt = temporal_loss_node(&mut g, &out.traces).unwrap();
    let states: Vec<StateTransitions> = out
        .traces
        .iter()
        .map(|tr| StateTransitions {
            h: g.value(tr.h).clone(),
            dt: g.value(tr.dt).data().to_vec(),
            a_tilde: g.value(tr.a_tilde).data().to_vec(),
        })
        .collect();
    let want = loss_temp(&[states]).unwrap();
    assert!((g.value(lt).item() - want).abs() < 1e-12 * want.max(1.0));

    let p = g.value(out.preds);
    let preds: Vec<[f64; 4]> = (0..p.rows()).map(|i| p.row(i).try_into().unwrap()).collect();
    let lp = loss_pred(&[PostPredictions { preds, targets: h.targets() }]).unwrap();
    let ctx = PassContext {
        seed: 0,
        epoch: 0,
        teacher_forcing: 1.0,
        train: false,
    };
    let r = model.evaluate_post(objectives::Objective::Pretrain, &quick(), post, 0, ctx).unwrap();
    assert!((r.losses.pred - lp).abs() < 1e-12 * lp.max(1.0));
}

#[test]
fn frozen_encoder_is_bit_identical() {
    let data = split(4, 0);
    let mut m = Model::new(small_config()).unwrap();
    let enc: Vec<_> = m.store.iter().filter(|(_, p)| p.name.starts_with("enc.")).map(|(_, p)| p.value.clone()).collect();
    assert!(!enc.is_empty());
    let cfg = TrainConfig {
        freeze_encoder: true,
        ..quick()
    };
    finetune(&mut m, Task::Forecast, &data, &cfg).unwrap();
    let after: Vec<_> = m.store.iter().filter(|(_, p)| p.name.starts_with("enc.")).map(|(_, p)| p.value.clone()).collect();
    assert_eq!(enc, after);
}

#[test]
fn classify_memorises_one_sample() {
    let mut data = split(1, 0);
    data.train[0].opinion = Some("b".into());
    let mut m = Model::new(small_config()).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 1,
        lr: 0.02,
        patience: 0,
        ..quick()
    };
    finetune(&mut m, Task::Classify, &data, &cfg).unwrap();
    let p = m.classify_opinion(&data.train[0], 3600.0).unwrap();
    assert!(p[1] > p[0], "{p:?}");
}

#[test]
fn classify_rejects_unknown_labels() {
    let mut data = split(2, 0);
    data.train[1].opinion = Some("zzz".into());
    let mut m = Model::new(small_config()).unwrap();
    assert!(finetune(&mut m, Task::Classify, &data, &quick()).is_err());
    data.train[1].opinion = None;
    assert!(finetune(&mut m, Task::Classify, &data, &quick()).is_err());
}

#[test]
fn empty_and_short_datasets_are_rejected() {
    let mut m = Model::new(small_config()).unwrap();
    assert!(pretrain(&mut m, &split(0, 0), &quick()).is_err());
    let mut data = split(2, 0);
    data.train[0].observations.truncate(2);
    assert!(pretrain(&mut m, &data, &quick()).is_err());
}

#[test]
fn pretraining_reduces_loss() {
    let data = split(8, 0);
    let mut m = Model::new(small_config()).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 4,
        lr: 1e-2,
        tf_end: 1.0,
        patience: 0,
        ..quick()
    };
    let r = pretrain(&mut m, &data, &cfg).unwrap();
    let first = r.epochs[0].train.total;
    let last = r.epochs.last().unwrap().train.total;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn patience_stops_on_flat_validation() {
    let data = split(3, 2);
    let mut m = Model::new(small_config()).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        lr: 1e-12,
        patience: 2,
        ..quick()
    };
    let r = pretrain(&mut m, &data, &cfg).unwrap();
    assert_eq!(r.stop_reason, StopReason::Patience);
    assert!(r.epochs.len() < 30);
}
