use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, Evaluation, Expr, Gradients};
use crate::enhance::{build_can, CanConfig, CanModel, LossTerms, PerceptualLoss};
use crate::error::{Error, Result};
use crate::quality::{build_tiny_nima, emd_squared_expr, NimaConfig, NimaModel, RatingDistribution};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::Optimizer;
use super::schedule::lr_schedule;

/// Mean training loss of every (possibly partial) epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NimaHistory {
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanStepRecord {
    pub step: usize,
    pub fidelity: f64,
    pub gamma_q: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CanHistory {
    pub records: Vec<CanStepRecord>,
}

impl CanHistory {
    /// CSV with header `step,fidelity,gamma_q,total`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,fidelity,gamma_q,total")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.step, r.fidelity, r.gamma_q, r.total)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&CanStepRecord> {
        self.records.last()
    }
}

/// Sums `g` into `acc`, in the caller's order.
fn accumulate(acc: &mut Gradients, g: Gradients) {
    for (name, t) in g {
        match acc.get_mut(&name) {
            Some(a) => a.data_mut().iter_mut().zip(t.data()).for_each(|(x, y)| *x += y),
            None => {
                acc.insert(name, t);
            }
        }
    }
}

fn average(acc: &mut Gradients, n: usize) {
    let inv = 1.0 / n as f64;
    for t in acc.values_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
}

/// Endless epoch-major stream of shuffled minibatches.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    epoch: usize,
}

impl Batches {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut b = Batches { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), batch, cursor: 0, epoch: 0 };
        b.order.shuffle(&mut b.rng);
        b
    }

    /// Next batch and its epoch index.
    fn next_batch(&mut self) -> (usize, Vec<usize>) {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        (self.epoch, idx)
    }
}

/// Trains a freshly initialized predictor (seeded by `config.seed`) with the
/// default tiny architecture.
pub fn train_nima(dataset: &[(Tensor, RatingDistribution)], config: &TrainConfig) -> Result<(NimaModel, NimaHistory)> {
    let model = build_tiny_nima(NimaConfig::default(), config.seed)?;
    train_nima_from(model, dataset, config, |_, _| {})
}

/// Minimizes the squared EMD between predicted and target distributions.
///
/// A frozen model is returned unchanged. `on_epoch(epoch, mean_loss)` is
/// called whenever an epoch ends, including the final partial one.
pub fn train_nima_from(
    mut model: NimaModel,
    dataset: &[(Tensor, RatingDistribution)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(NimaModel, NimaHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut history = NimaHistory::default();
    if model.frozen {
        return Ok((model, history));
    }
    for (img, rating) in dataset {
        model.check_size(img)?;
        if rating.len() != model.config.buckets {
            return Err(Error::LengthMismatch(rating.len(), model.config.buckets));
        }
    }
    let targets: Vec<Tensor> = dataset.iter().map(|(_, r)| r.to_tensor()).collect();
    let image = Expr::input("image");
    let target = Expr::input("target");
    let loss = emd_squared_expr(&target, &model.graph(&image, true).probs);

    let mut opt = Optimizer::from_config(config);
    let mut batches = Batches::new(dataset.len(), config.batch_size, config.seed);
    let (mut epoch_sum, mut epoch_count, mut current_epoch) = (0.0, 0usize, 0usize);
    for step in 0..config.step_budget {
        let (epoch, idx) = batches.next_batch();
        if epoch != current_epoch {
            let mean = epoch_sum / epoch_count as f64;
            history.epoch_loss.push(mean);
            on_epoch(current_epoch, mean);
            (epoch_sum, epoch_count, current_epoch) = (0.0, 0, epoch);
        }
        let mut acc = Gradients::new();
        for &i in &idx {
            let mut b = Bindings::new();
            b.bind_params(&model.params).bind_ref("image", &dataset[i].0).bind_ref("target", &targets[i]);
            let eval = Evaluation::forward(&loss, &b)?;
            let l = eval.root().item();
            if !l.is_finite() {
                return Err(Error::Diverged { step, loss: l });
            }
            epoch_sum += l;
            epoch_count += 1;
            accumulate(&mut acc, eval.backward()?);
        }
        average(&mut acc, idx.len());
        let lr_backbone = lr_schedule(epoch, config.lr_backbone, config.decay_factor, config.decay_period_epochs)?;
        let lr_head = lr_schedule(epoch, config.lr_head, config.decay_factor, config.decay_period_epochs)?;
        opt.step(&mut model.params, &acc, |name| if NimaModel::is_head(name) { lr_head } else { lr_backbone })?;
    }
    if epoch_count > 0 {
        let mean = epoch_sum / epoch_count as f64;
        history.epoch_loss.push(mean);
        on_epoch(current_epoch, mean);
    }
    Ok((model, history))
}

/// Trains a freshly initialized enhancer (seeded by `config.seed`) on
/// `(input, reference)` pairs against a frozen predictor.
pub fn train_can(
    pairs: &[(Tensor, Tensor)],
    nima: &NimaModel,
    can_config: CanConfig,
    config: &TrainConfig,
) -> Result<(CanModel, CanHistory)> {
    let model = build_can(can_config, config.seed)?;
    train_can_from(model, pairs, nima, config, |_| {})
}

/// Minimizes `fidelity(reference, CAN(input)) + gamma * (N - NIMA(CAN(input)))`.
///
/// The predictor's weights are bound as non-differentiable inputs, so they
/// are never touched. `on_step` sees every record as it is produced.
pub fn train_can_from(
    mut model: CanModel,
    pairs: &[(Tensor, Tensor)],
    nima: &NimaModel,
    config: &TrainConfig,
    mut on_step: impl FnMut(&CanStepRecord),
) -> Result<(CanModel, CanHistory)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !nima.frozen {
        return Err(Error::PredictorNotFrozen);
    }
    for (x, r) in pairs {
        if x.shape() != r.shape() {
            return Err(Error::shape("training pair", format!("input {:?} vs reference {:?}", x.shape(), r.shape())));
        }
        model.check_size(x)?;
        if config.gamma > 0.0 {
            nima.check_size(x)?;
        }
    }
    let input = Expr::input("input");
    let reference = Expr::input("reference");
    let output = model.graph(&input, true);
    let loss = PerceptualLoss::build(&reference, &output, nima, config.gamma, config.fidelity)?;

    let mut opt = Optimizer::from_config(config);
    let mut batches = Batches::new(pairs.len(), config.batch_size, config.seed);
    let mut history = CanHistory { records: Vec::with_capacity(config.step_budget) };
    for step in 0..config.step_budget {
        let (epoch, idx) = batches.next_batch();
        let mut acc = Gradients::new();
        let mut terms = LossTerms { fidelity: 0.0, gamma_q: 0.0, total: 0.0 };
        for &i in &idx {
            let mut b = Bindings::new();
            b.bind_params(&model.params)
                .bind_params(&nima.params)
                .bind_ref("input", &pairs[i].0)
                .bind_ref("reference", &pairs[i].1);
            let eval = Evaluation::forward(&loss.total, &b)?;
            let t = loss.terms(&eval);
            if !t.total.is_finite() {
                return Err(Error::Diverged { step, loss: t.total });
            }
            terms.fidelity += t.fidelity;
            terms.gamma_q += t.gamma_q;
            terms.total += t.total;
            accumulate(&mut acc, eval.backward()?);
        }
        let n = idx.len() as f64;
        average(&mut acc, idx.len());
        let lr = lr_schedule(epoch, config.lr, config.decay_factor, config.decay_period_epochs)?;
        opt.step(&mut model.params, &acc, |_| lr)?;
        let record = CanStepRecord { step, fidelity: terms.fidelity / n, gamma_q: terms.gamma_q / n, total: terms.total / n };
        on_step(&record);
        history.records.push(record);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut b = Batches::new(10, 4, 3);
        let mut seen = Vec::new();
        for _ in 0..3 {
            let (e, idx) = b.next_batch();
            assert_eq!(e, 0);
            seen.extend(idx);
        }
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(b.next_batch().0, 1);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let err = train_nima(&[], &TrainConfig::nima()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }
}
