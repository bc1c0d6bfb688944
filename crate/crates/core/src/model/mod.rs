//! MVC-LDA / MVC-RLDA: multi-view convolution, per-label attention, length
//! feature and the optional description regulariser.
//!
//! Parameters live in [`Weights`], whose tensors are always visited in the
//! same order (see [`Weights::tensors`]); gradients use the same container.

mod checkpoint;
mod ops;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use ops::{
    attention_pool, backward, encode_description, forward, length_embed, loss_mvc_lda,
    loss_mvc_rlda, multi_view_conv, DropoutMask, Freeze, Mode, ModelInput,
};

/// Divisor applied to the raw token count before the length sigmoid.
pub const LENGTH_SCALE: f64 = 10_000.0;

/// Probabilities are clamped into `[LOSS_EPS, 1 - LOSS_EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    MvcLda,
    MvcRlda,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MvcLda => "mvc-lda",
            ModelKind::MvcRlda => "mvc-rlda",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvc-lda" => Ok(ModelKind::MvcLda),
            "mvc-rlda" => Ok(ModelKind::MvcRlda),
            _ => Err(Error::Config(format!(
                "unknown model kind {s:?} (expected mvc-lda or mvc-rlda)"
            ))),
        }
    }
}

/// The four channel widths `(s, s-2, s-4, s-6)` derived from the largest kernel.
pub fn multi_view_kernels(s: usize) -> Result<Vec<usize>> {
    if s < 7 {
        return Err(Error::Config(format!(
            "largest kernel must be at least 7, got {s}"
        )));
    }
    Ok(vec![s, s - 2, s - 4, s - 6])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub d_e: usize,
    pub d_c: usize,
    pub n_labels: usize,
    /// Kernel width of each convolution channel, in channel order.
    pub kernels: Vec<usize>,
    pub lambda: f64,
    pub attention_softmax: bool,
    /// Whether the length term is added to the output logit.
    pub length_feature: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_e == 0 || self.d_c == 0 || self.n_labels == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return Err(Error::Config(format!(
                "invalid kernel sizes {:?}",
                self.kernels
            )));
        }
        if self.kernels.len() > u8::MAX as usize {
            return Err(Error::Config("too many convolution channels".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }

    /// True when the description term contributes to the loss.
    pub fn regularized(&self) -> bool {
        self.kind == ModelKind::MvcRlda && self.lambda > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvChannel {
    /// `s × d_e × d_c`.
    pub weight: Tensor,
    /// `d_c`.
    pub bias: Tensor,
}

impl ConvChannel {
    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Per-label parameters stacked over labels (row `j` belongs to label `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHeads {
    /// `V`, `J × d_c`.
    pub attention: Tensor,
    /// `U`, `J × d_c`.
    pub output: Tensor,
    /// `b`, `J`.
    pub output_bias: Tensor,
    /// `K`, `J`.
    pub length_weight: Tensor,
    /// `d`, `J`.
    pub length_bias: Tensor,
}

/// Borrowed view of one label's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LabelHead<'a> {
    pub attention: &'a [f64],
    pub output: &'a [f64],
    pub output_bias: f64,
    pub length_weight: f64,
    pub length_bias: f64,
}

impl LabelHeads {
    pub fn len(&self) -> usize {
        self.output_bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head(&self, j: usize) -> LabelHead<'_> {
        LabelHead {
            attention: self.attention.row(j),
            output: self.output.row(j),
            output_bias: self.output_bias.data()[j],
            length_weight: self.length_weight.data()[j],
            length_bias: self.length_bias.data()[j],
        }
    }
}

/// Description encoder `f`; its embedding layer is the classifier's table.
#[derive(Debug, Clone, PartialEq)]
pub struct DescEncoderParams {
    /// `s × d_e × d_c`, no bias.
    pub conv: Tensor,
    /// `d_c × d_c`, row `k` produces output coordinate `k`.
    pub dense: Tensor,
    pub dense_bias: Tensor,
}

/// Every trainable tensor of a model. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embedding: Tensor,
    pub channels: Vec<ConvChannel>,
    pub heads: LabelHeads,
    pub desc: Option<DescEncoderParams>,
}

pub type GradientSet = Weights;

impl Weights {
    /// Tensors with their names, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, c) in self.channels.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        let h = &self.heads;
        out.push(("attention".into(), &h.attention));
        out.push(("output.weight".into(), &h.output));
        out.push(("output.bias".into(), &h.output_bias));
        out.push(("length.weight".into(), &h.length_weight));
        out.push(("length.bias".into(), &h.length_bias));
        if let Some(d) = &self.desc {
            out.push(("desc.conv".into(), &d.conv));
            out.push(("desc.dense.weight".into(), &d.dense));
            out.push(("desc.dense.bias".into(), &d.dense_bias));
        }
        out
    }

    /// Mutable tensors in the same order as [`Weights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for c in &mut self.channels {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        let h = &mut self.heads;
        out.push(&mut h.attention);
        out.push(&mut h.output);
        out.push(&mut h.output_bias);
        out.push(&mut h.length_weight);
        out.push(&mut h.length_bias);
        if let Some(d) = &mut self.desc {
            out.push(&mut d.conv);
            out.push(&mut d.dense);
            out.push(&mut d.dense_bias);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// `self += alpha * other`; both must have the same layout.
    pub fn add_scaled(&mut self, other: &Weights, alpha: f64) {
        let src = other.tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_scaled(s, alpha);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(alpha));
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n)
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
}

impl ModelParams {
    /// Initialises a model around a (usually pretrained) embedding table.
    ///
    /// The description encoder draws from its own stream, so the classifier
    /// weights are the same for both model kinds under one seed.
    pub fn init(config: ModelConfig, embedding: Tensor, seed: u64) -> Result<Self> {
        config.validate()?;
        if embedding.shape() != [config.vocab_size, config.d_e] {
            return Err(Error::Dimension(format!(
                "embedding table is {:?}, model expects [{}, {}]",
                embedding.shape(),
                config.vocab_size,
                config.d_e
            )));
        }
        let (d_e, d_c, n) = (config.d_e, config.d_c, config.n_labels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = config
            .kernels
            .iter()
            .map(|&s| ConvChannel {
                weight: Tensor::glorot(&[s, d_e, d_c], s * d_e, d_c, &mut rng),
                bias: Tensor::zeros(&[d_c]),
            })
            .collect();
        let heads = LabelHeads {
            attention: Tensor::glorot(&[n, d_c], d_c, 1, &mut rng),
            output: Tensor::glorot(&[n, d_c], d_c, 1, &mut rng),
            output_bias: Tensor::zeros(&[n]),
            length_weight: Tensor::zeros(&[n]),
            length_bias: Tensor::zeros(&[n]),
        };
        let desc = match config.kind {
            ModelKind::MvcLda => None,
            ModelKind::MvcRlda => {
                let mut drng = ChaCha8Rng::seed_from_u64(seed);
                drng.set_stream(1);
                let s = config.max_kernel();
                Some(DescEncoderParams {
                    conv: Tensor::glorot(&[s, d_e, d_c], s * d_e, d_c, &mut drng),
                    dense: Tensor::glorot(&[d_c, d_c], d_c, d_c, &mut drng),
                    dense_bias: Tensor::zeros(&[d_c]),
                })
            }
        };
        let params = ModelParams {
            config,
            weights: Weights {
                embedding,
                channels,
                heads,
                desc,
            },
        };
        params.check_shapes()?;
        Ok(params)
    }

    /// Verifies that every tensor agrees with the configuration.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let mut expected: Vec<Vec<usize>> = vec![vec![c.vocab_size, c.d_e]];
        for &s in &c.kernels {
            expected.push(vec![s, c.d_e, c.d_c]);
            expected.push(vec![c.d_c]);
        }
        let n = c.n_labels;
        expected.extend([vec![n, c.d_c], vec![n, c.d_c], vec![n], vec![n], vec![n]]);
        if c.kind == ModelKind::MvcRlda {
            expected.extend([
                vec![c.max_kernel(), c.d_e, c.d_c],
                vec![c.d_c, c.d_c],
                vec![c.d_c],
            ]);
        }
        let actual = self.weights.tensors();
        if actual.len() != expected.len() {
            return Err(Error::Dimension(format!(
                "model has {} tensors, configuration implies {}",
                actual.len(),
                expected.len()
            )));
        }
        for ((name, t), e) in actual.iter().zip(&expected) {
            if t.shape() != e.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name} has shape {:?}, expected {e:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            vocab_size: 12,
            d_e: 4,
            d_c: 3,
            n_labels: 2,
            kernels: vec![1, 3],
            lambda: 0.1,
            attention_softmax: false,
            length_feature: true,
        }
    }

    #[test]
    fn kernel_structure() {
        assert_eq!(multi_view_kernels(12).unwrap(), vec![12, 10, 8, 6]);
        assert!(multi_view_kernels(6).is_err());
    }

    #[test]
    fn init_layout_and_shared_classifier_weights() {
        let emb = Tensor::zeros(&[12, 4]);
        let lda = ModelParams::init(small_config(ModelKind::MvcLda), emb.clone(), 3).unwrap();
        let rlda = ModelParams::init(small_config(ModelKind::MvcRlda), emb, 3).unwrap();
        assert!(lda.weights.desc.is_none());
        assert_eq!(lda.weights.channels, rlda.weights.channels);
        assert_eq!(lda.weights.heads, rlda.weights.heads);
        let names: Vec<_> = rlda.weights.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "embedding");
        assert_eq!(names.last().unwrap(), "desc.dense.bias");
        assert_eq!(rlda.weights.heads.length_weight.data(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_mismatched_embedding() {
        assert!(
            ModelParams::init(small_config(ModelKind::MvcLda), Tensor::zeros(&[11, 4]), 0).is_err()
        );
        let mut cfg = small_config(ModelKind::MvcLda);
        cfg.lambda = -1.0;
        assert!(ModelParams::init(cfg, Tensor::zeros(&[12, 4]), 0).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("mvc-rlda".parse::<ModelKind>().unwrap(), ModelKind::MvcRlda);
        assert!("cnn".parse::<ModelKind>().is_err());
        assert_eq!(
            serde_json::to_string(&ModelKind::MvcLda).unwrap(),
            "\"mvc-lda\""
        );
    }
}
