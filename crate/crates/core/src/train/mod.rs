//! Losses, optimizers, metrics, checkpoints and the training loop.

mod checkpoint;
mod metrics;
mod optim;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use metrics::{argmax_rows, instance_miou, overall_accuracy, point_miou};
pub use optim::{adam_step, sgd_step, OptimizerKind, OptimizerSettings, OptimizerState};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentSpec};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::{parse, parse_list};
use crate::model::{Batch, Model, Task};
use crate::params::{Ctx, Phase};
use crate::tensor::{Graph, Tensor};

/// Optimization recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerSettings,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every`
    /// epochs; `decay_every = 0` keeps it constant.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub augment: AugmentSpec,
    pub val_fraction: f64,
    /// Augmented copies averaged at evaluation time.
    pub votes: usize,
}

impl TrainConfig {
    /// Adam at 1e-3 with rotation/scale/translation augmentation.
    pub fn classification() -> Self {
        TrainConfig {
            optimizer: OptimizerSettings::adam(),
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            decay_factor: 1.0,
            decay_every: 0,
            augment: AugmentSpec::classification(),
            val_fraction: 0.2,
            votes: 1,
        }
    }

    /// SGD with momentum at 0.1, halved every 20 epochs.
    pub fn segmentation() -> Self {
        TrainConfig {
            optimizer: OptimizerSettings::sgd(0.9),
            lr: 0.1,
            epochs: 40,
            batch_size: 8,
            seed: 0,
            decay_factor: 0.5,
            decay_every: 20,
            augment: AugmentSpec::segmentation(),
            val_fraction: 0.2,
            votes: 1,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Self::classification(),
            Task::Segmentation => Self::segmentation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad(format!("decay factor must be positive, got {}", self.decay_factor));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("validation fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.votes == 0 {
            return bad("votes must be at least 1".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.momentum) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("momentum and betas must lie in [0, 1)".into());
        }
        if !(o.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        self.augment.validate()
    }

    /// Learning rate used during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.lr
        } else {
            self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let a = &self.augment;
        vec![
            ("optimizer", self.optimizer.kind.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.optimizer.momentum.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("eps", self.optimizer.eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("votes", self.votes.to_string()),
            ("augment_rotation", a.rotation.to_string()),
            ("augment_scale", format!("{},{}", a.scale.0, a.scale.1)),
            ("augment_anisotropic", a.anisotropic.to_string()),
            ("augment_translation", a.translation.to_string()),
            ("augment_jitter", a.jitter.to_string()),
        ]
    }

    pub fn is_key(key: &str) -> bool {
        Self::classification().pairs().iter().any(|(k, _)| *k == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "optimizer" => self.optimizer.kind = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.optimizer.momentum = parse(key, value)?,
            "beta1" => self.optimizer.beta1 = parse(key, value)?,
            "beta2" => self.optimizer.beta2 = parse(key, value)?,
            "eps" => self.optimizer.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "decay_every" => self.decay_every = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "votes" => self.votes = parse(key, value)?,
            "augment_rotation" => self.augment.rotation = value.parse()?,
            "augment_scale" => {
                let v: Vec<f64> = parse_list(key, value)?;
                match v.as_slice() {
                    [lo, hi] => self.augment.scale = (*lo, *hi),
                    [s] => self.augment.scale = (*s, *s),
                    _ => return Err(Error::Argument(format!("`{key}` takes `lo,hi`, got `{value}`"))),
                }
            }
            "augment_anisotropic" => self.augment.anisotropic = parse(key, value)?,
            "augment_translation" => self.augment.translation = parse(key, value)?,
            "augment_jitter" => self.augment.jitter = parse(key, value)?,
            other => return Err(Error::Argument(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::classification();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub metric_name: &'static str,
    pub metric_value: f64,
}

pub const LOG_HEADER: &str = "epoch,split,loss,metric_name,metric_value";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.split, r.loss, r.metric_name, r.metric_value
        ));
    }
    s
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "oa",
        Task::Segmentation => "instance_miou",
    }
}


/// Deterministic shuffle-and-split into `(train, validation)`. At least one
/// cloud always stays in the training split.
pub fn split_dataset(clouds: &[PointCloud], val_fraction: f64, seed: u64) -> (Vec<PointCloud>, Vec<PointCloud>) {
    let mut idx: Vec<usize> = (0..clouds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (((clouds.len() as f64) * val_fraction).round() as usize).min(clouds.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| clouds[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| clouds[i].clone()).collect();
    (train, val)
}

fn cloud_labels(cloud: &PointCloud) -> Result<&[usize]> {
    cloud
        .labels
        .as_deref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Argument(format!("cloud `{}` has no labels", cloud.name)))
}

/// Class id per cloud (classification) or every point label (segmentation).
pub fn targets(clouds: &[&PointCloud], task: Task) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for c in clouds {
        let l = cloud_labels(c)?;
        match task {
            Task::Classification => out.push(l[0]),
            Task::Segmentation => out.extend_from_slice(l),
        }
    }
    Ok(out)
}

/// Splits `order` into batches. Classification batches never hold a single
/// cloud when avoidable, because the head normalizes over the batch.
fn batches(order: &[usize], size: usize, task: Task) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if task == Task::Classification && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Task metric over per-cloud logits.
pub fn score(model: &Model, logits: &[Tensor], clouds: &[&PointCloud]) -> Result<f64> {
    let cfg = &model.config;
    match cfg.task {
        Task::Classification => {
            let preds: Vec<usize> = logits.iter().map(|l| argmax_rows(l.data(), cfg.num_classes)[0]).collect();
            overall_accuracy(&preds, &targets(clouds, Task::Classification)?)
        }
        Task::Segmentation => {
            let preds: Vec<Vec<usize>> = logits.iter().map(|l| argmax_rows(l.data(), cfg.num_parts)).collect();
            let labels = clouds
                .iter()
                .map(|c| cloud_labels(c).map(<[usize]>::to_vec))
                .collect::<Result<Vec<_>>>()?;
            let parts: Vec<usize> = (0..cfg.num_parts).collect();
            instance_miou(&preds, &labels, &vec![parts.as_slice(); labels.len()])
        }
    }
}

/// Splits stacked batch logits back into one tensor per cloud.
fn per_cloud(model: &Model, batch: &Batch, logits: &Tensor) -> Result<Vec<Tensor>> {
    let c = model.config.outputs();
    match model.config.task {
        Task::Classification => (0..batch.len()).map(|b| Tensor::new(vec![1, c], logits.row(b).to_vec())).collect(),
        Task::Segmentation => {
            let o = batch.point_offsets();
            (0..batch.len())
                .map(|b| Tensor::new(vec![o[b + 1] - o[b], c], logits.data()[o[b] * c..o[b + 1] * c].to_vec()))
                .collect()
        }
    }
}

fn mean_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let g = Graph::new();
    Ok(g.constant(logits.clone()).cross_entropy(targets)?.value().data()[0])
}

/// Scores of one optimization step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub logits: Tensor,
}

/// Forward, backward and one optimizer update on a prepared batch.
/// Numeric failures are reported with epoch and batch set to 0.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    targets: &[usize],
    optimizer: (&mut OptimizerState, &OptimizerSettings),
    lr: f64,
    dropout_rng: ChaCha8Rng,
) -> Result<StepOutcome> {
    let (logits, loss, outcome) = {
        let graph = Graph::new();
        let ctx = Ctx::new(&graph, &model.store, Phase::Train).with_rng(dropout_rng);
        let out = model.forward(&ctx, batch)?;
        let loss = out.cross_entropy(targets)?;
        graph.backward(loss)?;
        let logits = (*out.value()).clone();
        let loss = loss.value().data()[0];
        (logits, loss, ctx.finish())
    };
    let non_finite = |detail: String| Error::NonFinite {
        epoch: 0,
        batch: 0,
        detail,
    };
    if !loss.is_finite() {
        let first = outcome.grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite()));
        return Err(non_finite(match first {
            Some((p, _)) => format!("loss is {loss}; first non-finite gradient at `{p}`"),
            None => format!("loss is {loss}"),
        }));
    }
    if let Some((p, _)) = outcome.grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(non_finite(format!("non-finite gradient at `{p}`")));
    }
    model.store.zero_grad();
    outcome.accumulate_grads(&mut model.store)?;
    outcome.commit_bn(&mut model.store)?;
    let (state, settings) = optimizer;
    state.apply(&mut model.store, settings, lr);
    model.store.zero_grad();
    Ok(StepOutcome { loss, logits })
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub log: Vec<LogRow>,
    pub optimizer: OptimizerState,
    pub epochs: usize,
}

impl FitReport {
    pub fn last(&self, split: &str) -> Option<&LogRow> {
        self.log.iter().rev().find(|r| r.split == split)
    }
}

/// Trains `model` in place. Every draw (shuffling, augmentation, dropout)
/// comes from one generator seeded with `cfg.seed`.
pub fn fit(model: &mut Model, train: &[PointCloud], val: &[PointCloud], cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let task = model.config.task;
    let name = metric_name(task);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::default();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut logits = Vec::with_capacity(train.len());
        let mut seen: Vec<&PointCloud> = Vec::with_capacity(train.len());
        for (bi, chunk) in batches(&order, cfg.batch_size, task).into_iter().enumerate() {
            let augmented = chunk
                .iter()
                .map(|&i| augment(&train[i], &cfg.augment, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PointCloud> = augmented.iter().collect();
            let batch = Batch::new(&refs, &model.config)?;
            let t = targets(&refs, task)?;
            let drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let out = train_step(model, &batch, &t, (&mut state, &cfg.optimizer), lr, drop_rng).map_err(|e| match e {
                Error::NonFinite { detail, .. } => Error::NonFinite {
                    epoch: epoch + 1,
                    batch: bi,
                    detail,
                },
                other => other,
            })?;
            loss_sum += out.loss * chunk.len() as f64;
            logits.extend(per_cloud(model, &batch, &out.logits)?);
            seen.extend(chunk.iter().map(|&i| &train[i]));
        }
        log.push(LogRow {
            epoch: epoch + 1,
            split: "train",
            loss: loss_sum / train.len() as f64,
            metric_name: name,
            metric_value: score(model, &logits, &seen)?,
        });
        if !val.is_empty() {
            let e = evaluate(model, val, cfg.batch_size)?;
            log.push(LogRow {
                epoch: epoch + 1,
                split: "val",
                loss: e.loss,
                metric_name: name,
                metric_value: e.metric,
            });
        }
    }
    Ok(FitReport {
        log,
        optimizer: state,
        epochs: cfg.epochs,
    })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
    pub logits: Vec<Tensor>,
}

fn summarize(model: &Model, clouds: &[PointCloud], logits: Vec<Tensor>) -> Result<Evaluation> {
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let mut loss = 0.0;
    for (c, l) in refs.iter().zip(&logits) {
        loss += mean_cross_entropy(l, &targets(&[c], model.config.task)?)?;
    }
    Ok(Evaluation {
        loss: loss / clouds.len() as f64,
        metric: score(model, &logits, &refs)?,
        logits,
    })
}

/// Eval-mode loss and task metric over `clouds` (loss averaged per cloud).
pub fn evaluate(model: &Model, clouds: &[PointCloud], batch_size: usize) -> Result<Evaluation> {
    if clouds.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let mut logits = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(batch_size.max(1)) {
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        let batch = Batch::new(&refs, &model.config)?;
        logits.extend(per_cloud(model, &batch, &model.predict(&batch)?)?);
    }
    summarize(model, clouds, logits)
}

/// Like [`evaluate`], with every cloud's logits averaged over `votes`
/// augmented copies.
pub fn evaluate_voted(model: &Model, clouds: &[PointCloud], votes: usize, spec: &AugmentSpec, seed: u64) -> Result<Evaluation> {
    if clouds.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let logits = clouds
        .iter()
        .enumerate()
        .map(|(i, c)| evaluate_with_voting(model, c, votes, spec, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    summarize(model, clouds, logits)
}

/// Mean eval-mode logits over `votes` augmented copies of `cloud`.
pub fn evaluate_with_voting(model: &Model, cloud: &PointCloud, votes: usize, spec: &AugmentSpec, seed: u64) -> Result<Tensor> {
    if votes == 0 {
        return Err(Error::Argument("voting needs at least one copy".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean: Option<Tensor> = None;
    for k in 1..=votes {
        let copy = augment(cloud, spec, &mut rng)?;
        let logits = model.predict(&Batch::new(&[&copy], &model.config)?)?;
        match mean.as_mut() {
            None => mean = Some(logits),
            Some(m) => {
                // running mean: identical votes leave it bit-for-bit unchanged
                for (a, b) in m.data_mut().iter_mut().zip(logits.data()) {
                    *a += (b - *a) / k as f64;
                }
            }
        }
    }
    Ok(mean.expect("votes >= 1"))
}
