//! Mini-batch Adam training for both networks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_dataset, split_indices, PatchSample};
use crate::error::{bail, Result};
use crate::models::{build_classifier, build_regressor, ClassifierNet, RegressorNet};
use crate::nn::{bce_loss, smooth_l1_loss, Adam, LossValue, Network, Tensor};
use crate::PATCH_SHAPE;

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub initial_lr: f64,
    pub reduced_lr: f64,
    /// Evaluations without improvement before the learning rate drops.
    pub plateau_patience: usize,
    /// Minimum test-loss decrease that counts as improvement.
    pub plateau_threshold: f64,
    /// Iterations between plateau evaluations.
    pub eval_every: usize,
    /// Iterations between history records.
    pub log_every: usize,
    pub seed: u64,
    pub test_fraction: f64,
    /// Add flipped / jittered copies of 70% of the training split.
    pub augment: bool,
}

impl TrainConfig {
    pub fn classifier() -> Self {
        Self {
            batch_size: 128,
            iterations: 25_000,
            initial_lr: 0.0003,
            reduced_lr: 0.0001,
            plateau_patience: 8,
            plateau_threshold: 1e-4,
            eval_every: 250,
            log_every: 100,
            seed: 0,
            test_fraction: 0.2,
            augment: true,
        }
    }

    pub fn regressor() -> Self {
        Self {
            batch_size: 45,
            reduced_lr: 0.0003,
            ..Self::classifier()
        }
    }

    /// The (train, test) index split `train_classifier` and
    /// `train_regressor` use for `n` samples.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        split_indices(n, self.test_fraction, seed_for(self.seed, 0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.eval_every == 0 || self.log_every == 0 {
            bail!(InvalidArgument, "batch size, iterations and cadences must be >= 1");
        }
        if !(self.initial_lr > 0.0) || !(self.reduced_lr > 0.0) || self.reduced_lr > self.initial_lr {
            bail!(InvalidArgument, "learning rates must be positive and non-increasing");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!(InvalidArgument, "test fraction must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Mean mini-batch loss since the previous record.
    pub train_loss: f64,
    pub test_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,test_loss,lr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.iteration, r.train_loss, r.test_loss, r.lr);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classify,
    Regress,
}

impl Task {
    fn check(self, samples: &[PatchSample]) -> Result<()> {
        self.check_eval(samples)?;
        if self == Task::Classify {
            let pos = samples.iter().filter(|s| s.label.is_kernel()).count();
            if pos == 0 || pos == samples.len() {
                bail!(InvalidArgument, "classifier training needs both kernel and non-kernel samples");
            }
        }
        Ok(())
    }

    /// Requirements for any sample set the task can score.
    fn check_eval(self, samples: &[PatchSample]) -> Result<()> {
        if samples.is_empty() {
            bail!(InvalidArgument, "empty training set");
        }
        if let Some(s) = samples.iter().find(|s| s.patch.shape() != PATCH_SHAPE) {
            bail!(Shape, "training patches must be 32x32x3, got {:?}", s.patch.shape());
        }
        if self == Task::Regress && samples.iter().any(|s| s.center.is_none()) {
            bail!(InvalidArgument, "regressor training needs a center on every sample");
        }
        Ok(())
    }

    fn loss(self, pred: &Tensor<f32>, batch: &[&PatchSample]) -> Result<LossValue<f32>> {
        match self {
            Task::Classify => {
                let targets: Vec<f32> = batch.iter().map(|s| s.label.target()).collect();
                bce_loss(pred, &targets)
            }
            Task::Regress => {
                let t: Vec<f32> = batch
                    .iter()
                    .flat_map(|s| s.normalized_center().expect("checked on entry"))
                    .collect();
                smooth_l1_loss(pred, &Tensor::new(vec![batch.len(), 2], t)?)
            }
        }
    }
}

fn stack(batch: &[&PatchSample]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(batch.len() * 32 * 32 * 3);
    for s in batch {
        data.extend_from_slice(s.patch.data());
    }
    let mut shape = vec![batch.len()];
    shape.extend_from_slice(&PATCH_SHAPE);
    Tensor::new(shape, data)
}

/// Mean loss of `net` over `samples` in inference mode.
pub fn evaluate_loss(net: &Network<f32>, task: Task, samples: &[PatchSample]) -> Result<f64> {
    task.check_eval(samples)?;
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let pred = net.infer(&stack(&refs)?)?;
        total += task.loss(&pred, &refs)?.value * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Stateful mini-batch trainer: epoch-wise seeded shuffling, one Adam step
/// per call to `step`.
pub struct Trainer {
    pub net: Network<f32>,
    pub task: Task,
    pub lr: f64,
    adam: Adam<f32>,
    data: Vec<PatchSample>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(net: Network<f32>, task: Task, data: Vec<PatchSample>, batch_size: usize, lr: f64, seed: u64) -> Result<Self> {
        task.check(&data)?;
        if batch_size == 0 {
            bail!(InvalidArgument, "batch size must be >= 1");
        }
        let order = (0..data.len()).collect();
        Ok(Self {
            net,
            task,
            lr,
            adam: Adam::new(),
            batch_size: batch_size.min(data.len()),
            data,
            order,
            cursor: usize::MAX,
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn data(&self) -> &[PatchSample] {
        &self.data
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor.saturating_add(self.batch_size) > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        b
    }

    /// One optimization step; returns the mini-batch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let idx = self.next_batch();
        let batch: Vec<&PatchSample> = idx.iter().map(|&i| &self.data[i]).collect();
        let x = stack(&batch)?;
        let pred = self.net.forward_train(&x)?;
        let loss = self.task.loss(&pred, &batch)?;
        self.net.backward(&loss.gradient)?;
        self.adam.step(self.net.params_mut(), self.lr)?;
        self.iteration += 1;
        Ok(loss.value)
    }
}

/// Trained network, its history and the split it was trained on (indices
/// into the input sample list).
#[derive(Clone, Debug)]
pub struct Trained<N> {
    pub model: N,
    pub history: TrainHistory,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn seed_for(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Runs the full schedule on `train` / `test`. `progress` sees every
/// history record as it is produced.
pub fn fit(
    net: Network<f32>,
    task: Task,
    train: Vec<PatchSample>,
    test: &[PatchSample],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&HistoryRecord),
) -> Result<(Network<f32>, TrainHistory)> {
    config.validate()?;
    task.check_eval(test)?;
    let mut trainer = Trainer::new(net, task, train, config.batch_size, config.initial_lr, seed_for(config.seed, 3))?;
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    for it in 1..=config.iterations {
        loss_sum += trainer.step()?;
        loss_n += 1;
        let plateau_check = it % config.eval_every == 0;
        let log = it % config.log_every == 0 || it == config.iterations;
        if !(plateau_check || log) {
            continue;
        }
        let test_loss = evaluate_loss(&trainer.net, task, test)?;
        if log {
            let rec = HistoryRecord {
                iteration: it,
                train_loss: loss_sum / loss_n as f64,
                test_loss,
                lr: trainer.lr,
            };
            progress(&rec);
            history.records.push(rec);
            (loss_sum, loss_n) = (0.0, 0);
        }
        if plateau_check {
            if test_loss < best - config.plateau_threshold {
                best = test_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.plateau_patience && trainer.lr > config.reduced_lr {
                    trainer.lr = config.reduced_lr;
                }
            }
        }
    }
    Ok((trainer.net, history))
}

fn split_and_augment(samples: &[PatchSample], config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>, Vec<PatchSample>, Vec<PatchSample>)> {
    let (tr, te) = config.split(samples.len())?;
    let train: Vec<PatchSample> = tr.iter().map(|&i| samples[i].clone()).collect();
    let test: Vec<PatchSample> = te.iter().map(|&i| samples[i].clone()).collect();
    let train = if config.augment {
        augment_dataset(&train, seed_for(config.seed, 1))
    } else {
        train
    };
    Ok((tr, te, train, test))
}

/// Seeded split, augmentation and training of the classifier.
pub fn train_classifier(
    samples: &[PatchSample],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&HistoryRecord),
) -> Result<Trained<ClassifierNet>> {
    Task::Classify.check(samples)?;
    let (train_indices, test_indices, train, test) = split_and_augment(samples, config)?;
    let mut model = build_classifier(seed_for(config.seed, 2));
    let (net, history) = fit(model.network().clone(), Task::Classify, train, &test, config, progress)?;
    *model.network_mut() = net;
    Ok(Trained { model, history, train_indices, test_indices })
}

/// Seeded split, augmentation and training of the center regressor.
pub fn train_regressor(
    samples: &[PatchSample],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&HistoryRecord),
) -> Result<Trained<RegressorNet>> {
    Task::Regress.check(samples)?;
    let (train_indices, test_indices, train, test) = split_and_augment(samples, config)?;
    let mut model = build_regressor(seed_for(config.seed, 2));
    let (net, history) = fit(model.network().clone(), Task::Regress, train, &test, config, progress)?;
    *model.network_mut() = net;
    Ok(Trained { model, history, train_indices, test_indices })
}
