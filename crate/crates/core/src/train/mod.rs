//! Mini-batch Adam training with random segment truncation, dropout and
//! early stopping on development micro F1.

mod ablate;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedDocument;
use crate::error::{Error, Result};
use crate::metrics::{micro_f1, PredictionMatrix};
use crate::model::{
    backward, forward, multi_view_kernels, DropoutMask, Freeze, GradientSet, Mode, ModelConfig,
    ModelInput, ModelKind, ModelParams, Weights,
};
use crate::tensor::Tensor;
use crate::util::KvConfig;

pub use ablate::{ablate, AblationReport, AblationRow, AblationSetup, Component, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_segment: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub lambda: f64,
    /// Largest kernel `s`; the other channels use `s-2`, `s-4`, `s-6`.
    pub kernel_size: usize,
    /// When false a single channel of width `kernel_size` is used.
    pub multi_view: bool,
    /// Number of convolution filters `d_c`.
    pub filters: usize,
    pub attention_softmax: bool,
    pub length_feature: bool,
    pub freeze_embeddings: bool,
    pub freeze_description: bool,
    /// Worker threads for per-sample gradients and prediction. Results do not
    /// depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::MvcLda,
            seed: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            max_segment: 10_000,
            patience: 10,
            max_epochs: 100,
            dropout: 0.2,
            lambda: 0.0005,
            kernel_size: 12,
            multi_view: true,
            filters: 90,
            attention_softmax: false,
            length_feature: true,
            freeze_embeddings: false,
            freeze_description: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Reads the training keys from `kv`, falling back to `base`.
    pub fn take_from(kv: &mut KvConfig, base: TrainConfig) -> Result<Self> {
        let cfg = TrainConfig {
            learning_rate: kv.take("learning_rate", base.learning_rate)?,
            beta1: kv.take("adam_beta1", base.beta1)?,
            beta2: kv.take("adam_beta2", base.beta2)?,
            epsilon: kv.take("adam_epsilon", base.epsilon)?,
            batch_size: kv.take("batch_size", base.batch_size)?,
            max_segment: kv.take("max_segment", base.max_segment)?,
            patience: kv.take("patience", base.patience)?,
            max_epochs: kv.take("max_epochs", base.max_epochs)?,
            dropout: kv.take("dropout", base.dropout)?,
            lambda: kv.take("lambda", base.lambda)?,
            kernel_size: kv.take("kernel_size", base.kernel_size)?,
            multi_view: kv.take("multi_view", base.multi_view)?,
            filters: kv.take("filters", base.filters)?,
            attention_softmax: kv.take("attention_softmax", base.attention_softmax)?,
            length_feature: kv.take("length_feature", base.length_feature)?,
            freeze_embeddings: kv.take("freeze_embeddings", base.freeze_embeddings)?,
            freeze_description: kv.take("freeze_description", base.freeze_description)?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return fail("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if self.batch_size == 0
            || self.max_segment == 0
            || self.patience == 0
            || self.max_epochs == 0
        {
            return fail(
                "batch_size, max_segment, patience and max_epochs must be at least 1".into(),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.filters == 0 || self.kernel_size == 0 || self.threads == 0 {
            return fail("filters, kernel_size and threads must be at least 1".into());
        }
        self.kernels().map(|_| ())
    }

    pub fn kernels(&self) -> Result<Vec<usize>> {
        if self.multi_view {
            multi_view_kernels(self.kernel_size)
        } else {
            Ok(vec![self.kernel_size])
        }
    }

    pub fn model_config(
        &self,
        vocab_size: usize,
        d_e: usize,
        n_labels: usize,
    ) -> Result<ModelConfig> {
        Ok(ModelConfig {
            kind: self.kind,
            vocab_size,
            d_e,
            d_c: self.filters,
            n_labels,
            kernels: self.kernels()?,
            lambda: if self.kind == ModelKind::MvcRlda {
                self.lambda
            } else {
                0.0
            },
            attention_softmax: self.attention_softmax,
            length_feature: self.length_feature,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn freeze(&self) -> Freeze {
        Freeze {
            embeddings: self.freeze_embeddings,
            description: self.freeze_description,
        }
    }
}

/// Builds freshly initialised parameters around an embedding table.
pub fn initial_params(
    cfg: &TrainConfig,
    embedding: Tensor,
    n_labels: usize,
) -> Result<ModelParams> {
    if embedding.shape().len() != 2 {
        return Err(Error::Dimension(
            "embedding table must be two-dimensional".into(),
        ));
    }
    let (v, d_e) = (embedding.shape()[0], embedding.shape()[1]);
    ModelParams::init(cfg.model_config(v, d_e, n_labels)?, embedding, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &Weights) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| t.zeros_like())
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut Weights,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let grads = grads.tensors();
    let targets = params.tensors_mut();
    if grads.len() != targets.len() || state.m.len() != targets.len() {
        return Err(Error::Dimension(
            "gradient layout does not match the parameters".into(),
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((theta, (_, g)), m), v) in targets
        .into_iter()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if theta.shape() != g.shape() {
            return Err(Error::Dimension(
                "gradient tensor shape differs from its parameter".into(),
            ));
        }
        let it = theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut());
        for (((p, &gi), mi), vi) in it {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *p -= cfg.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// A uniformly random window of `max_segment` tokens, or the whole sequence
/// if it already fits (no randomness is consumed in that case).
pub fn truncate_segment<'a, R: Rng + ?Sized>(
    token_ids: &'a [u32],
    max_segment: usize,
    rng: &mut R,
) -> &'a [u32] {
    if token_ids.len() <= max_segment {
        return token_ids;
    }
    let start = rng.gen_range(0..=token_ids.len() - max_segment);
    &token_ids[start..start + max_segment]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_micro_f1: f64,
    pub wall_time_s: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("history serialises") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut h = TrainHistory::default();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec: EpochRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.is_best {
                h.best_epoch = rec.epoch;
            }
            h.epochs.push(rec);
        }
        Ok(h)
    }
}

/// Optional thread pool; mapping preserves input order either way.
pub(crate) struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    pub(crate) fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Workers(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(|p| Workers(Some(p)))
            .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
    }

    pub(crate) fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.0 {
            None => items.iter().map(f).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}

fn check_documents(docs: &[EncodedDocument], n_labels: usize, what: &'static str) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::Empty(what));
    }
    for d in docs {
        if d.is_empty() {
            return Err(Error::Data(format!("document {} has no tokens", d.doc_id)));
        }
        if d.gold.len() != n_labels {
            return Err(Error::Dimension(format!(
                "document {} has {} labels, model {}",
                d.doc_id,
                d.gold.len(),
                n_labels
            )));
        }
    }
    Ok(())
}

fn predict_with(
    params: &ModelParams,
    docs: &[EncodedDocument],
    workers: &Workers,
) -> Result<PredictionMatrix> {
    let rows = workers.map(docs, |d| {
        forward(params, ModelInput::new(&d.token_ids), Mode::Eval)
    });
    let mut scores = Vec::with_capacity(docs.len() * params.config.n_labels);
    let mut gold = Vec::with_capacity(scores.capacity());
    for (d, y) in docs.iter().zip(rows) {
        scores.extend(y?);
        gold.extend_from_slice(&d.gold);
    }
    PredictionMatrix::new(docs.len(), params.config.n_labels, scores, gold)
}

/// Eval-mode scores for every document (never truncated).
pub fn predict(
    params: &ModelParams,
    docs: &[EncodedDocument],
    threads: usize,
) -> Result<PredictionMatrix> {
    check_documents(docs, params.config.n_labels, "documents to score")?;
    predict_with(params, docs, &Workers::new(threads)?)
}

pub fn dev_micro_f1(params: &ModelParams, docs: &[EncodedDocument], threads: usize) -> Result<f64> {
    let m = predict(params, docs, threads)?;
    micro_f1(&m, &m.all_labels())
}

pub struct TrainData<'a> {
    pub train: &'a [EncodedDocument],
    pub dev: &'a [EncodedDocument],
    /// Encoded label descriptions, indexed by label; needed when regularised.
    pub descriptions: Option<&'a [Vec<u32>]>,
}

/// Trains from `init` and returns the parameters of the best development epoch.
pub fn train(
    init: ModelParams,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let n_labels = init.config.n_labels;
    check_documents(data.train, n_labels, "training set")?;
    check_documents(data.dev, n_labels, "development set")?;
    if init.config.regularized() && data.descriptions.is_none() {
        return Err(Error::Config(
            "mvc-rlda training needs label descriptions".into(),
        ));
    }
    let workers = Workers::new(cfg.threads)?;
    let (d_e, d_c) = (init.config.d_e, init.config.d_c);
    let adam = cfg.adam();
    let freeze = cfg.freeze();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut params = init;
    let mut state = AdamState::new(&params.weights);
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Randomness is drawn sequentially so that worker count never matters.
            let samples: Vec<(&EncodedDocument, &[u32], DropoutMask)> = batch
                .iter()
                .map(|&i| {
                    let doc = &data.train[i];
                    let seg = truncate_segment(&doc.token_ids, cfg.max_segment, &mut rng);
                    let mask =
                        DropoutMask::sample(cfg.dropout, seg.len(), d_e, n_labels, d_c, &mut rng);
                    (doc, seg, mask)
                })
                .collect();
            let results = workers.map(&samples, |(doc, seg, mask)| {
                let input = ModelInput {
                    token_ids: seg,
                    length: doc.len(),
                };
                backward(
                    &params,
                    input,
                    &doc.gold,
                    data.descriptions,
                    Mode::Train(mask),
                    freeze,
                )
            });
            let diverged = |what: String| Error::Divergence {
                epoch,
                batch: bi + 1,
                what,
            };
            let mut total: Option<GradientSet> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r.map_err(|e| match e {
                    Error::NonFinite(what) => diverged(what),
                    other => other,
                })?;
                batch_loss += loss;
                match &mut total {
                    None => total = Some(g),
                    Some(t) => t.add_scaled(&g, 1.0),
                }
            }
            let mut grad = total.expect("batches are non-empty");
            grad.scale(1.0 / batch.len() as f64);
            if !batch_loss.is_finite() {
                return Err(diverged(format!("loss = {batch_loss}")));
            }
            loss_sum += batch_loss;
            adam_step(&mut params.weights, &grad, &mut state, &adam).map_err(|e| match e {
                Error::NonFinite(what) => diverged(what),
                other => other,
            })?;
        }
        if let Some(name) = params.weights.first_non_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                what: format!("parameter {name}"),
            });
        }
        let dev = predict_with(&params, data.dev, &workers)?;
        let f1 = micro_f1(&dev, &dev.all_labels())?;
        let train_loss = loss_sum / data.train.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.5}, dev micro F1 {f1:.4}");
        if f1 > best_f1 {
            best_f1 = f1;
            best = params.clone();
            history.best_epoch = epoch;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_micro_f1: f1,
            wall_time_s: started.elapsed().as_secs_f64(),
            is_best: false,
        });
        if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    let best_epoch = history.best_epoch;
    for e in &mut history.epochs {
        e.is_best = e.epoch == best_epoch;
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = TrainConfig::default().adam();
        let mk = |v: f64| Weights {
            embedding: Tensor::from_vec(&[1, 2], vec![v, v]).unwrap(),
            channels: vec![],
            heads: crate::model::LabelHeads {
                attention: Tensor::zeros(&[0, 1]),
                output: Tensor::zeros(&[0, 1]),
                output_bias: Tensor::zeros(&[0]),
                length_weight: Tensor::zeros(&[0]),
                length_bias: Tensor::zeros(&[0]),
            },
            desc: None,
        };
        let mut w = mk(0.0);
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &mk(0.0), &mut state, &cfg).unwrap();
        assert_eq!(w.embedding.data(), &[0.0, 0.0]);
        assert_eq!(state.steps(), 1);

        let mut w = mk(0.0);
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &mk(1.0), &mut state, &cfg).unwrap();
        let got = w.embedding.data();
        assert!((got[0] + 0.001).abs() < 1e-10, "{got:?}");
        assert_eq!(got[0], got[1]);
        assert!(adam_step(&mut w, &mk(f64::NAN), &mut state, &cfg).is_err());
    }

    #[test]
    fn truncation_contract() {
        let ids: Vec<u32> = (0..10_001).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            truncate_segment(&ids[..9_999], 10_000, &mut rng).len(),
            9_999
        );
        let seg = truncate_segment(&ids, 10_000, &mut rng);
        assert_eq!(seg.len(), 10_000);
        assert!(seg.windows(2).all(|w| w[1] == w[0] + 1));
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            assert_eq!(
                truncate_segment(&ids, 100, &mut a),
                truncate_segment(&ids, 100, &mut b)
            );
        }
    }

    #[test]
    fn config_keys() {
        let mut kv =
            KvConfig::parse("filters = 24\nkernel_size = 7\nmulti_view = false\nlambda = 0.01")
                .unwrap();
        let cfg = TrainConfig::take_from(&mut kv, TrainConfig::default()).unwrap();
        kv.finish().unwrap();
        assert_eq!(cfg.kernels().unwrap(), vec![7]);
        assert_eq!(cfg.filters, 24);
        let mut bad = KvConfig::parse("kernel_size = 5").unwrap();
        assert!(TrainConfig::take_from(&mut bad, TrainConfig::default()).is_err());
        let lda = TrainConfig::default().model_config(10, 4, 3).unwrap();
        assert_eq!(lda.lambda, 0.0);
        assert_eq!(lda.kernels, vec![12, 10, 8, 6]);
    }
}
