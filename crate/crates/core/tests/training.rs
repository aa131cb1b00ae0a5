use penh::autodiff::Gradients;
use penh::data::{make_datasets, psnr, PairOperator, Split};
use penh::enhance::{build_can, CanConfig};
use penh::quality::{build_tiny_nima, NimaConfig, RatingDistribution};
use penh::train::{
    adam_step, momentum_step, train_can, train_can_from, train_nima_from, AdamState, MomentumState, OptimizerKind,
    TrainConfig,
};
use penh::{Error, ParamSet, Tensor};

fn quadratic_grads(params: &ParamSet, target: &[f64]) -> Gradients {
    let w = params.get("w").unwrap();
    let g: Vec<f64> = w.data().iter().zip(target).map(|(w, t)| 2.0 * (w - t)).collect();
    Gradients::from([("w".to_string(), Tensor::vector(&g))])
}

fn quadratic_value(params: &ParamSet, target: &[f64]) -> f64 {
    params.get("w").unwrap().data().iter().zip(target).map(|(w, t)| (w - t) * (w - t)).sum()
}

#[test]
fn optimizers_minimize_a_quadratic() {
    let target = [1.0, -2.0];
    let fresh = || {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2]));
        p
    };
    let mut params = fresh();
    let initial = quadratic_value(&params, &target);
    let mut state = MomentumState::default();
    for _ in 0..10_000 {
        let g = quadratic_grads(&params, &target);
        momentum_step(&mut params, &g, &mut state, |_| 0.05, 0.9).unwrap();
    }
    assert!(quadratic_value(&params, &target) < 1e-8 * initial);

    let mut params = fresh();
    let mut state = AdamState::default();
    for _ in 0..10_000 {
        let g = quadratic_grads(&params, &target);
        adam_step(&mut params, &g, &mut state, |_| 1e-2, 0.9, 0.999, 1e-8).unwrap();
    }
    assert!(quadratic_value(&params, &target) < 1e-8 * initial, "{}", quadratic_value(&params, &target));
    assert_eq!(state.steps, 10_000);
}

#[test]
fn momentum_steps_by_hand() {
    let mut params = ParamSet::new();
    params.insert("w", Tensor::vector(&[0.0]));
    let g = Gradients::from([("w".to_string(), Tensor::vector(&[1.0]))]);
    let mut state = MomentumState::default();
    momentum_step(&mut params, &g, &mut state, |_| 0.1, 0.9).unwrap();
    assert!((params.get("w").unwrap().data()[0] + 0.1).abs() < 1e-15);
    momentum_step(&mut params, &g, &mut state, |_| 0.1, 0.9).unwrap();
    assert!((params.get("w").unwrap().data()[0] + 0.29).abs() < 1e-15);
    let before = params.clone();
    momentum_step(&mut params, &g, &mut state, |_| 0.0, 0.9).unwrap();
    assert_eq!(params, before);
}

#[test]
fn adam_first_step_is_scale_free() {
    let first = |g: f64| {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(&[0.0]));
        let grads = Gradients::from([("w".to_string(), Tensor::vector(&[g]))]);
        adam_step(&mut params, &grads, &mut AdamState::default(), |_| 1e-4, 0.9, 0.999, 1e-8).unwrap();
        params.get("w").unwrap().data()[0]
    };
    assert!((first(1.0) + 1e-4).abs() < 1e-11);
    assert!((first(1e3) - first(1.0)).abs() <= 1e-6 * first(1.0).abs());
    assert_eq!(first(0.0), 0.0);
}

#[test]
fn optimizers_reject_unknown_or_misshapen_gradients() {
    let mut params = ParamSet::new();
    params.insert("w", Tensor::zeros(&[2]));
    let unknown = Gradients::from([("v".to_string(), Tensor::zeros(&[2]))]);
    let wrong = Gradients::from([("w".to_string(), Tensor::zeros(&[3]))]);
    let mut s = MomentumState::default();
    assert!(matches!(momentum_step(&mut params, &unknown, &mut s, |_| 0.1, 0.9), Err(Error::MissingTensor(_))));
    assert!(matches!(momentum_step(&mut params, &wrong, &mut s, |_| 0.1, 0.9), Err(Error::ShapeMismatch { .. })));
}

fn tiny_rated() -> Vec<(Tensor, RatingDistribution)> {
    let data = make_datasets(4, 10, 16, 16, PairOperator::Tone).unwrap();
    data.rated.iter().map(|r| (r.image.tensor().clone(), r.rating.clone())).collect()
}

#[test]
fn nima_overfits_a_handful_of_images() {
    let set = tiny_rated();
    let mut cfg = TrainConfig::nima_desk();
    cfg.batch_size = set.len();
    cfg.step_budget = 200;
    cfg.lr_backbone = 3e-3;
    cfg.lr_head = 3e-3;
    let model = build_tiny_nima(NimaConfig::default(), 1).unwrap();
    let mut losses = Vec::new();
    let (_, history) = train_nima_from(model, &set, &cfg, |_, l| losses.push(l)).unwrap();
    assert_eq!(history.epoch_loss, losses);
    assert_eq!(history.epoch_loss.len(), 200);
    assert!(history.epoch_loss[199] < 0.1 * history.epoch_loss[0], "{:?}", (history.epoch_loss[0], history.epoch_loss[199]));
}

#[test]
fn momentum_preset_also_reduces_the_loss() {
    let set = tiny_rated();
    let mut cfg = TrainConfig::nima();
    assert_eq!(cfg.optimizer, OptimizerKind::Momentum);
    cfg.batch_size = set.len();
    cfg.step_budget = 100;
    cfg.lr_backbone = 1e-2;
    cfg.lr_head = 3e-2;
    let model = build_tiny_nima(NimaConfig::default(), 1).unwrap();
    let (_, h) = train_nima_from(model, &set, &cfg, |_, _| {}).unwrap();
    assert!(h.epoch_loss[99] < 0.8 * h.epoch_loss[0]);
}

#[test]
fn frozen_predictor_is_returned_unchanged() {
    let set = tiny_rated();
    let model = build_tiny_nima(NimaConfig::default(), 1).unwrap().freeze();
    let (same, history) = train_nima_from(model.clone(), &set, &TrainConfig::nima_desk(), |_, _| {}).unwrap();
    assert_eq!(same, model);
    assert!(history.epoch_loss.is_empty());
}

#[test]
fn divergence_is_reported() {
    let set = tiny_rated();
    let mut cfg = TrainConfig::nima();
    cfg.lr_backbone = 1e200;
    cfg.lr_head = 1e200;
    cfg.batch_size = 2;
    cfg.step_budget = 50;
    let model = build_tiny_nima(NimaConfig::default(), 1).unwrap();
    assert!(matches!(train_nima_from(model, &set, &cfg, |_, _| {}), Err(Error::Diverged { .. })));
}

fn one_pair() -> Vec<(Tensor, Tensor)> {
    let data = make_datasets(6, 10, 16, 16, PairOperator::Tone).unwrap();
    data.pair_split(Split::Train).into_iter().take(1).collect()
}

#[test]
fn can_overfits_a_single_pair() {
    let pairs = one_pair();
    let nima = build_tiny_nima(NimaConfig::default(), 0).unwrap().freeze();
    let mut cfg = TrainConfig::can();
    cfg.gamma = 0.0;
    cfg.lr = 1e-3;
    cfg.step_budget = 2000;
    let before = psnr(&pairs[0].0, &pairs[0].1).unwrap();
    let (model, history) = train_can(&pairs, &nima, CanConfig::with_depth(3, 16), &cfg).unwrap();
    let after = psnr(&model.forward(&pairs[0].0).unwrap(), &pairs[0].1).unwrap();
    assert!(after > before + 6.0, "{before} -> {after}");
    assert_eq!(history.records.len(), 2000);
    assert!(history.last().unwrap().fidelity < 1e-4, "{:?}", history.last());
    assert!(history.records.iter().all(|r| r.gamma_q == 0.0 && r.total == r.fidelity));
}

#[test]
fn quality_penalty_raises_the_predicted_score() {
    let pairs = one_pair();
    let nima = build_tiny_nima(NimaConfig::default(), 0).unwrap().freeze();
    let mut cfg = TrainConfig::can();
    cfg.lr = 1e-3;
    cfg.step_budget = 60;
    let run = |gamma: f64| {
        let mut cfg = cfg.clone();
        cfg.gamma = gamma;
        let (m, h) = train_can(&pairs, &nima, CanConfig::with_depth(3, 8), &cfg).unwrap();
        for r in &h.records {
            assert!((r.total - (r.fidelity + r.gamma_q)).abs() <= 1e-12);
        }
        let tenth = h.records.len() / 10;
        let mean = |rs: &[penh::train::CanStepRecord]| rs.iter().map(|r| r.total).sum::<f64>() / rs.len() as f64;
        assert!(mean(&h.records[h.records.len() - tenth..]) < mean(&h.records[..tenth]));
        nima.score(&m.forward(&pairs[0].0).unwrap()).unwrap()
    };
    assert!(run(1.0) > run(0.0));
}

#[test]
fn enhancer_training_requires_a_frozen_predictor_and_matching_pairs() {
    let pairs = one_pair();
    let cfg = TrainConfig::can();
    let live = build_tiny_nima(NimaConfig::default(), 0).unwrap();
    let can = build_can(CanConfig::with_depth(3, 4), 0).unwrap();
    assert!(matches!(train_can_from(can.clone(), &pairs, &live, &cfg, |_| {}), Err(Error::PredictorNotFrozen)));
    let frozen = live.freeze();
    let bad = vec![(pairs[0].0.clone(), Tensor::zeros(&[16, 15, 3]))];
    assert!(train_can_from(can.clone(), &bad, &frozen, &cfg, |_| {}).is_err());
    assert!(matches!(train_can_from(can, &[], &frozen, &cfg, |_| {}), Err(Error::EmptyDataset)));
}
