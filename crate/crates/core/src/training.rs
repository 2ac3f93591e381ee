//! Losses, Adam, the decay-on-dev-drop schedule, the training loop and the
//! dropout grid search.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Gold, ScoreRange, TaskKind};
use crate::encoder::{DroppedRecurrent, RegularizationConfig};
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, FeatureMode, GLOVE_DIM};
use crate::matcher::{ModelOutput, ScoreFn};
use crate::metrics::{accuracy, f1_binary, mse_metric, pearson, spearman, MetricReport};
use crate::model::{Model, ModelConfig, PairNoise, Parameters};
use crate::ppdb::ParaphraseIndex;
use crate::rng::stream;

/// `−log softmax(logits)[gold]` and its gradient `softmax − onehot(gold)`.
pub fn cross_entropy(logits: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    if gold >= logits.len() {
        return Err(Error::InvalidArgument(format!("gold class {gold} out of {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[gold] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[gold] -= 1.0;
    Ok((loss, grad))
}

/// `(pred − target)²` and its derivative w.r.t. `pred`.
pub fn mse_loss(pred: f64, target: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("target {target} outside [0, 1]")));
    }
    let d = pred - target;
    Ok((d * d, 2.0 * d))
}

/// Mean of the per-pair squared errors.
pub fn batch_mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("batch_mse needs equal, non-empty inputs".into()));
    }
    let mut total = 0.0;
    for (&p, &t) in preds.iter().zip(targets) {
        total += mse_loss(p, t)?.0;
    }
    Ok(total / preds.len() as f64)
}

/// Adam moments for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn for_shapes(lens: &[usize]) -> Self {
        AdamState {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn new(params: &Parameters) -> Self {
        let lens: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self::for_shapes(&lens)
    }

    /// One bias-corrected update. Non-finite gradients fail before anything changes.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("adam: tensor count mismatch".into()));
        }
        for (k, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != p.len() {
                return Err(Error::Shape(format!("adam: tensor {k} shape mismatch")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {k}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut Parameters, grads: &Parameters, state: &mut AdamState, lr: f64) -> Result<()> {
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    let p: Vec<&mut [f64]> = params.tensors_mut().into_iter().map(|(_, t)| t).collect();
    state.step(p, g, lr)
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DevMetric {
    Accuracy,
    F1,
    Pearson,
    Spearman,
    Mse,
}

impl DevMetric {
    pub fn default_for(task: TaskKind) -> Self {
        if task.is_classification() {
            DevMetric::Accuracy
        } else {
            DevMetric::Pearson
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != DevMetric::Mse
    }

    pub fn name(self) -> &'static str {
        match self {
            DevMetric::Accuracy => "accuracy",
            DevMetric::F1 => "f1",
            DevMetric::Pearson => "pearson",
            DevMetric::Spearman => "spearman",
            DevMetric::Mse => "mse",
        }
    }

    pub fn fits(self, task: TaskKind) -> bool {
        match self {
            DevMetric::Accuracy => task.is_classification(),
            DevMetric::F1 => task == TaskKind::Paraphrase2,
            _ => task == TaskKind::Relatedness,
        }
    }
}

impl FromStr for DevMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(DevMetric::Accuracy),
            "f1" => Ok(DevMetric::F1),
            "pearson" | "r" => Ok(DevMetric::Pearson),
            "spearman" | "rho" => Ok(DevMetric::Spearman),
            "mse" => Ok(DevMetric::Mse),
            _ => Err(Error::InvalidArgument(format!("unknown metric '{s}'"))),
        }
    }
}

impl fmt::Display for DevMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a dev drop is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayOn {
    #[default]
    Best,
    Prev,
}

impl FromStr for DecayOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(DecayOn::Best),
            "prev" => Ok(DecayOn::Prev),
            _ => Err(Error::InvalidArgument(format!("decay-on must be 'best' or 'prev', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochEvent {
    Improved,
    Held,
    Decayed,
}

/// Multiplies the learning rate by `decay` whenever the dev metric gets worse.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub decay: f64,
    pub decay_on: DecayOn,
    pub higher_is_better: bool,
    best: Option<f64>,
    prev: Option<f64>,
}

impl LrSchedule {
    pub fn new(lr: f64, decay: f64, decay_on: DecayOn, higher_is_better: bool) -> Self {
        LrSchedule {
            lr,
            decay,
            decay_on,
            higher_is_better,
            best: None,
            prev: None,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.higher_is_better {
            a > b
        } else {
            a < b
        }
    }

    /// Feeds one epoch's dev value. NaN counts as the worst possible value.
    pub fn observe(&mut self, metric: f64) -> EpochEvent {
        let metric = match (metric.is_nan(), self.higher_is_better) {
            (true, true) => f64::NEG_INFINITY,
            (true, false) => f64::INFINITY,
            _ => metric,
        };
        let event = match self.best {
            None => EpochEvent::Improved,
            Some(best) if self.better(metric, best) => EpochEvent::Improved,
            Some(best) => {
                let reference = match self.decay_on {
                    DecayOn::Best => best,
                    DecayOn::Prev => self.prev.unwrap_or(best),
                };
                if self.better(reference, metric) {
                    self.lr *= self.decay;
                    EpochEvent::Decayed
                } else {
                    EpochEvent::Held
                }
            }
        };
        if event == EpochEvent::Improved {
            self.best = Some(metric);
        }
        self.prev = Some(metric);
        event
    }
}

fn default_seed() -> u64 {
    1
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_decay() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    50
}
fn default_min_lr() -> f64 {
    1e-5
}
fn default_hidden() -> usize {
    600
}
fn default_mode() -> FeatureMode {
    FeatureMode::Mapr
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}
fn default_true() -> bool {
    true
}
fn default_embedding_dim() -> usize {
    GLOVE_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
    #[serde(default)]
    pub d_e: f64,
    #[serde(default)]
    pub d_f: f64,
    #[serde(default)]
    pub d_w: f64,
    /// LSTM hidden size per direction.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_mode")]
    pub mode: FeatureMode,
    #[serde(default)]
    pub dev_metric: Option<DevMetric>,
    #[serde(default)]
    pub score_fn: ScoreFn,
    /// Scale on which relatedness MSE is reported; defaults to the data's source scale.
    #[serde(default)]
    pub mse_scale: Option<ScoreRange>,
    /// Global gradient-norm bound; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
    #[serde(default = "default_true")]
    pub rollback: bool,
    #[serde(default)]
    pub decay_on: DecayOn,
    #[serde(default)]
    pub forget_bias_one: bool,
    /// Fixed-order gradient reduction.
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn new(task: TaskKind) -> Self {
        serde_json::from_value(serde_json::json!({ "task": task })).expect("defaults deserialize")
    }

    pub fn reg(&self) -> Result<RegularizationConfig> {
        RegularizationConfig::new(self.d_e, self.d_f, self.d_w)
    }

    pub fn dev_metric(&self) -> DevMetric {
        self.dev_metric.unwrap_or_else(|| DevMetric::default_for(self.task))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay must lie in (0, 1), got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.min_lr < 0.0 {
            return bad("min_lr must be non-negative".into());
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad(format!("clip must be positive, got {c}"));
            }
        }
        if !self.dev_metric().fits(self.task) {
            return bad(format!("metric {} does not apply to task {}", self.dev_metric(), self.task));
        }
        self.reg()?;
        Ok(())
    }

    pub fn model_config(&self, score_range: Option<ScoreRange>) -> ModelConfig {
        ModelConfig {
            task: self.task,
            mode: self.mode,
            hidden: self.hidden,
            head_hidden: self.head_hidden,
            embedding_dim: self.embedding_dim,
            score_fn: self.score_fn,
            score_range,
            forget_bias_one: self.forget_bias_one,
        }
    }
}

/// Frozen inputs shared by every pass: word vectors and the paraphrase index.
#[derive(Debug, Clone, Copy)]
pub struct Resources<'a> {
    pub table: &'a EmbeddingTable,
    pub index: Option<&'a ParaphraseIndex>,
}

/// Eval-mode outputs and metrics over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outputs: Vec<ModelOutput>,
    pub report: MetricReport,
}

fn golds_of(data: &Dataset) -> (Vec<usize>, Vec<f64>) {
    let mut classes = Vec::new();
    let mut scores = Vec::new();
    for p in &data.pairs {
        match p.gold {
            Gold::Class(c) => classes.push(c),
            Gold::Score(s) => scores.push(s),
        }
    }
    (classes, scores)
}

/// Reporting scale for relatedness MSE.
pub fn report_range(model: &Model, data: &Dataset) -> ScoreRange {
    model
        .config
        .score_range
        .or(data.score_range)
        .unwrap_or(ScoreRange::UNIT)
}

pub fn predict_all(model: &Model, data: &Dataset, res: Resources<'_>) -> Result<Vec<ModelOutput>> {
    if data.task != model.config.task {
        return Err(Error::InvalidArgument(format!(
            "dataset task {} does not match model task {}",
            data.task, model.config.task
        )));
    }
    data.pairs
        .par_iter()
        .map(|pair| {
            let (a, b) = model.featurize(pair, res.table, res.index)?;
            model.predict(&a, &b)
        })
        .collect()
}

pub fn evaluate(model: &Model, data: &Dataset, res: Resources<'_>) -> Result<Evaluation> {
    let outputs = predict_all(model, data, res)?;
    let (classes, scores) = golds_of(data);
    let report = if data.task.is_classification() {
        let preds: Vec<usize> = outputs.iter().filter_map(ModelOutput::predicted_class).collect();
        MetricReport::classification(data.task, &preds, &classes)?
    } else {
        let preds: Vec<f64> = outputs.iter().filter_map(ModelOutput::score).collect();
        MetricReport::relatedness(&preds, &scores, report_range(model, data))?
    };
    Ok(Evaluation { outputs, report })
}

/// The selection metric for `outputs`. An undefined correlation (constant
/// predictions) counts as 0.
pub fn metric_value(metric: DevMetric, outputs: &[ModelOutput], data: &Dataset, range: ScoreRange) -> Result<f64> {
    let (classes, scores) = golds_of(data);
    let preds_c: Vec<usize> = outputs.iter().filter_map(ModelOutput::predicted_class).collect();
    let preds_s: Vec<f64> = outputs.iter().filter_map(ModelOutput::score).collect();
    let corr = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::InvalidArgument(m)) if m.contains("variance") => Ok(0.0),
        Err(e) => Err(e),
    };
    match metric {
        DevMetric::Accuracy => accuracy(&preds_c, &classes),
        DevMetric::F1 => f1_binary(&preds_c, &classes),
        DevMetric::Pearson => corr(pearson(&preds_s, &scores)),
        DevMetric::Spearman => corr(spearman(&preds_s, &scores)),
        DevMetric::Mse => mse_metric(&preds_s, &scores, range),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub event: EpochEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    LrFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub dev_metric_name: String,
    pub epochs: Vec<EpochRecord>,
    /// Mean loss of every mini-batch, in order.
    pub batch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub dev: Option<MetricReport>,
    pub test: Option<MetricReport>,
    pub embedding_fingerprint: u64,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:>5}  {:>10}  {:>12}  {:>10}  event\n", "epoch", "lr", "train_loss", self.dev_metric_name);
        for e in &self.epochs {
            let event = match e.event {
                EpochEvent::Improved => "best",
                EpochEvent::Held => "",
                EpochEvent::Decayed => "decay",
            };
            s.push_str(&format!("{:>5}  {:>10.3e}  {:>12.6}  {:>10.4}  {event}\n", e.epoch, e.lr, e.train_loss, e.dev_metric));
        }
        s.push_str(&format!("best epoch {} ({} = {:.4})\n", self.best_epoch, self.dev_metric_name, self.best_dev));
        if let Some(t) = &self.test {
            s.push_str(&format!("test: {}\n", t.summary()));
        }
        s
    }
}

fn check_inputs(config: &TrainConfig, sets: &[&Dataset], res: Resources<'_>) -> Result<()> {
    config.validate()?;
    for d in sets {
        if d.task != config.task {
            return Err(Error::InvalidArgument(format!(
                "dataset '{}' has task {}, config says {}",
                d.name, d.task, config.task
            )));
        }
        if d.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset '{}' is empty", d.name)));
        }
    }
    if config.mode.uses_pr() && res.index.is_none() {
        return Err(Error::InvalidArgument(format!("feature mode {} needs a paraphrase index", config.mode)));
    }
    if res.table.dim() != config.embedding_dim {
        return Err(Error::InvalidArgument(format!(
            "embedding table has width {}, config says {}",
            res.table.dim(),
            config.embedding_dim
        )));
    }
    Ok(())
}

/// Mean loss and mean gradient over one mini-batch.
fn batch_gradients(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    res: Resources<'_>,
    reg: &RegularizationConfig,
    seed: u64,
    epoch: u64,
    batch_no: u64,
    deterministic: bool,
) -> Result<(f64, Parameters)> {
    let dropped = if reg.d_w > 0.0 {
        let mut rng = stream(seed, "dropconnect", &[epoch, batch_no]);
        Some(Arc::new(DroppedRecurrent::sample(&model.params.encoder, &mut rng, reg.d_w)?))
    } else {
        None
    };
    let one = |slot: usize, idx: usize, grads: &mut Parameters| -> Result<f64> {
        let pair = &data.pairs[idx];
        let (a, b) = model.featurize(pair, res.table, res.index)?;
        let mut rng = stream(seed, "masks", &[epoch, batch_no, slot as u64]);
        let noise = PairNoise::sample(&model.config, reg, &mut rng, dropped.clone())?;
        Ok(model.accumulate_gradients(&a, &b, pair.gold, &noise, grads)?.0)
    };
    let (loss_sum, mut grads) = if deterministic {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for (slot, &idx) in batch.iter().enumerate() {
            loss += one(slot, idx, &mut grads)?;
        }
        (loss, grads)
    } else {
        batch
            .par_iter()
            .enumerate()
            .try_fold(
                || (0.0, model.params.zeros_like()),
                |(loss, mut grads), (slot, &idx)| -> Result<(f64, Parameters)> {
                    let l = one(slot, idx, &mut grads)?;
                    Ok((loss + l, grads))
                },
            )
            .try_reduce(
                || (0.0, model.params.zeros_like()),
                |(la, mut ga), (lb, gb)| {
                    ga.add_assign(&gb);
                    Ok((la + lb, ga))
                },
            )?
    };
    if let Some(d) = &dropped {
        d.apply_to_grads(&mut grads.encoder);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss_sum / n, grads))
}

/// Trains one model. Returns it at its best-dev parameters with the report.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    test_set: Option<&Dataset>,
    res: Resources<'_>,
    checkpoint: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    let mut sets = vec![train_set, dev_set];
    sets.extend(test_set);
    check_inputs(config, &sets, res)?;
    let fingerprint = res.table.fingerprint();
    let reg = config.reg()?;
    let metric = config.dev_metric();

    let range = config.mse_scale.or(train_set.score_range).filter(|_| config.task == TaskKind::Relatedness);
    let mut model = Model::init(config.model_config(range), &mut stream(config.seed, "init", &[]))?;
    let mut adam = AdamState::new(&model.params);
    let mut best = (model.params.clone(), adam.clone());
    let mut schedule = LrSchedule::new(config.lr, config.lr_decay, config.decay_on, metric.higher_is_better());
    let mut epochs = Vec::new();
    let mut batch_losses = Vec::new();
    let mut best_epoch = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        if schedule.lr < config.min_lr {
            stop = StopReason::LrFloor;
            break;
        }
        let lr = schedule.lr;
        order.shuffle(&mut stream(config.seed, "shuffle", &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, mut grads) =
                batch_gradients(&model, train_set, batch, res, &reg, config.seed, epoch as u64, b as u64, config.deterministic)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            if let Some(c) = config.clip {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut model.params, &grads, &mut adam, lr)?;
            epoch_loss += loss * batch.len() as f64;
            batch_losses.push(loss);
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let outputs = predict_all(&model, dev_set, res)?;
        let dev_value = metric_value(metric, &outputs, dev_set, report_range(&model, dev_set))?;
        let event = schedule.observe(dev_value);
        match event {
            EpochEvent::Improved => {
                best = (model.params.clone(), adam.clone());
                best_epoch = epoch;
                if let Some(path) = checkpoint {
                    model.save(path)?;
                }
            }
            EpochEvent::Decayed if config.rollback => {
                model.params = best.0.clone();
                adam = best.1.clone();
            }
            _ => {}
        }
        info!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.6} dev {metric} {dev_value:.4} {event:?}");
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            dev_metric: dev_value,
            event,
        });
    }

    model.params = best.0;
    let dev = match evaluate(&model, dev_set, res) {
        Ok(e) => Some(e.report),
        Err(e) => {
            warn!("dev metrics unavailable: {e}");
            None
        }
    };
    let test = test_set.map(|t| evaluate(&model, t, res).map(|e| e.report)).transpose()?;
    if res.table.fingerprint() != fingerprint {
        return Err(Error::InvalidArgument("embedding table changed during training".into()));
    }
    let report = TrainReport {
        config: config.clone(),
        dev_metric_name: metric.name().to_string(),
        best_dev: schedule.best().unwrap_or(f64::NAN),
        epochs,
        batch_losses,
        best_epoch,
        best_checkpoint: checkpoint.filter(|_| best_epoch > 0).map(Path::to_path_buf),
        dev,
        test,
        embedding_fingerprint: fingerprint,
        stop,
    };
    Ok((model, report))
}

/// Sweep values used by `grid` when none are given.
pub const DEFAULT_D_E_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const DEFAULT_D_F_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const DEFAULT_D_W_GRID: [f64; 3] = [0.0, 0.1, 0.2];

/// Grid points in lexicographic `(d_e, d_f, d_w)` order.
pub fn grid_points(d_e: &[f64], d_f: &[f64], d_w: &[f64]) -> Result<Vec<RegularizationConfig>> {
    if d_e.is_empty() || d_f.is_empty() || d_w.is_empty() {
        return Err(Error::InvalidArgument("dropout grids must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(d_e.len() * d_f.len() * d_w.len());
    for &e in d_e {
        for &f in d_f {
            for &w in d_w {
                out.push(RegularizationConfig::new(e, f, w)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub d_e: f64,
    pub d_f: f64,
    pub d_w: f64,
    pub best_dev: f64,
    pub best_epoch: usize,
    pub test: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub dev_metric_name: String,
    pub points: Vec<GridPoint>,
    /// Index into `points`; the first point wins ties.
    pub best: usize,
    pub best_report: TrainReport,
}

impl GridReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:>5} {:>5} {:>5}  {:>10}  test\n", "d_e", "d_f", "d_w", self.dev_metric_name);
        for (i, p) in self.points.iter().enumerate() {
            let mark = if i == self.best { " *" } else { "" };
            let test = p.test.as_ref().map(MetricReport::summary).unwrap_or_default();
            s.push_str(&format!("{:>5.2} {:>5.2} {:>5.2}  {:>10.4}  {test}{mark}\n", p.d_e, p.d_f, p.d_w, p.best_dev));
        }
        s
    }
}

/// Trains one model per grid point and keeps the best by dev metric.
pub fn grid_search(
    base: &TrainConfig,
    d_e: &[f64],
    d_f: &[f64],
    d_w: &[f64],
    train_set: &Dataset,
    dev_set: &Dataset,
    test_set: Option<&Dataset>,
    res: Resources<'_>,
) -> Result<(Model, GridReport)> {
    let points = grid_points(d_e, d_f, d_w)?;
    let higher = base.dev_metric().higher_is_better();
    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<(usize, Model, TrainReport)> = None;
    for (i, reg) in points.iter().enumerate() {
        let mut cfg = base.clone();
        (cfg.d_e, cfg.d_f, cfg.d_w) = (reg.d_e, reg.d_f, reg.d_w);
        info!("grid point {}/{}: d_e {} d_f {} d_w {}", i + 1, points.len(), reg.d_e, reg.d_f, reg.d_w);
        let (model, report) = train(&cfg, train_set, dev_set, test_set, res, None)?;
        rows.push(GridPoint {
            d_e: reg.d_e,
            d_f: reg.d_f,
            d_w: reg.d_w,
            best_dev: report.best_dev,
            best_epoch: report.best_epoch,
            test: report.test.clone(),
        });
        let wins = match &best {
            None => true,
            Some((_, _, b)) => {
                if higher {
                    report.best_dev > b.best_dev
                } else {
                    report.best_dev < b.best_dev
                }
            }
        };
        if wins {
            best = Some((i, model, report));
        }
    }
    let (idx, model, report) = best.expect("grid is non-empty");
    Ok((
        model,
        GridReport {
            dev_metric_name: base.dev_metric().name().to_string(),
            points: rows,
            best: idx,
            best_report: report,
        },
    ))
}
