//! The learned feature stack: k-NN graph encoder, attention co-context
//! module, global pooling, and the temperature value head.

mod attention;
mod encoder;
mod heads;

pub use attention::{cocontext, decoder_block, encoder_block, multi_head_attention};
pub use encoder::{edge_conv, encode, knn_graph};
pub use heads::{global_pool, value_head};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::rng::SplitRng;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("k = {k} too large for {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Graph-encoder hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Output width of each edge-convolution layer.
    pub layer_widths: Vec<usize>,
    /// Neighbors per point in the dynamic graph.
    pub knn_k: usize,
    /// Final embedding width after fusing all layer outputs.
    pub embed_dim: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // Desk-scale defaults; the full-scale stack (64, 64, 128, 256, 512)
        // with embed_dim 1024 remains reachable through config.
        Self {
            layer_widths: vec![16, 16, 32],
            knn_k: 8,
            embed_dim: 64,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CoContextConfig {
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
}

impl Default for CoContextConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            model_dim: 64,
            ff_dim: 128,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ValueHeadConfig {
    /// MLP widths; the last must be 1.
    pub widths: Vec<usize>,
    /// Minimum temperature added after softplus.
    pub lambda_floor: f64,
}

impl Default for ValueHeadConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 32, 32, 1],
            lambda_floor: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub cocontext: CoContextConfig,
    pub value_head: ValueHeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let e = &self.encoder;
        if e.layer_widths.is_empty() {
            return Err(NetworkError::InvalidConfig("layer_widths empty".into()));
        }
        if e.knn_k == 0 || e.embed_dim == 0 {
            return Err(NetworkError::InvalidConfig(
                "knn_k and embed_dim must be >= 1".into(),
            ));
        }
        let c = &self.cocontext;
        if c.heads == 0 || c.model_dim % c.heads != 0 {
            return Err(NetworkError::InvalidConfig(format!(
                "model_dim {} must be divisible by heads {}",
                c.model_dim, c.heads
            )));
        }
        if c.model_dim != e.embed_dim {
            return Err(NetworkError::InvalidConfig(format!(
                "model_dim {} must equal embed_dim {} (residual co-context)",
                c.model_dim, e.embed_dim
            )));
        }
        let v = &self.value_head;
        if v.widths.last() != Some(&1) {
            return Err(NetworkError::InvalidConfig(
                "value head's last width must be 1".into(),
            ));
        }
        if v.lambda_floor <= 0.0 {
            return Err(NetworkError::InvalidConfig(
                "lambda_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Named parameter tensors plus the config that shaped them. Both clouds of
/// a pair run through the same tensors (Siamese sharing is by name).
#[derive(Clone, Debug)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// Kaiming-uniform weight init; normalization affines start at
    /// identity; the co-context output projection starts at zero so the
    /// attention pathway initially passes features through unchanged.
    pub fn init(config: &ModelConfig, rng: &mut SplitRng) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut p = Self {
            config: config.clone(),
            tensors: BTreeMap::new(),
        };
        let e = config.encoder.clone();
        let mut d_in = 3;
        for (i, &width) in e.layer_widths.iter().enumerate() {
            p.add_linear(&format!("encoder.layer{i}"), 2 * d_in, width, rng);
            p.add_norm_affine(&format!("encoder.layer{i}"), width);
            d_in = width;
        }
        let fused: usize = e.layer_widths.iter().sum();
        p.add_linear("encoder.fuse", fused, e.embed_dim, rng);
        p.add_norm_affine("encoder.fuse", e.embed_dim);

        let d = config.cocontext.model_dim;
        let ff = config.cocontext.ff_dim;
        for block in ["enc", "dec"] {
            p.add_attention(&format!("cocontext.{block}.self"), d, rng);
            p.add_norm_affine(&format!("cocontext.{block}.ln1"), d);
            if block == "dec" {
                p.add_attention("cocontext.dec.cross", d, rng);
                p.add_norm_affine("cocontext.dec.ln2", d);
            }
            p.add_linear(&format!("cocontext.{block}.ff.in"), d, ff, rng);
            p.add_bias(&format!("cocontext.{block}.ff.in"), ff);
            p.add_linear(&format!("cocontext.{block}.ff.out"), ff, d, rng);
            p.add_bias(&format!("cocontext.{block}.ff.out"), d);
            let last_ln = if block == "dec" { "ln3" } else { "ln2" };
            p.add_norm_affine(&format!("cocontext.{block}.{last_ln}"), d);
        }
        p.tensors.insert(
            "cocontext.final.weight".into(),
            Tensor::zeros(&[d, d]),
        );

        let mut v_in = 2 * d;
        let v = config.value_head.clone();
        for (i, &width) in v.widths[..v.widths.len() - 1].iter().enumerate() {
            p.add_linear(&format!("value.layer{i}"), v_in, width, rng);
            p.add_norm_affine(&format!("value.layer{i}"), width);
            v_in = width;
        }
        p.add_linear("value.out", v_in, 1, rng);
        p.add_bias("value.out", 1);

        // Learned-global temperature: softplus(x) + floor starts near 1.
        let x0 = ((1.0 - v.lambda_floor).exp() - 1.0).ln();
        p.tensors.insert(
            "temperature.global".into(),
            Tensor::new(vec![1, 1], vec![cast::<S>(x0)]).unwrap(),
        );
        Ok(p)
    }

    fn add_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut SplitRng) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| cast::<S>(rng.uniform_in(-bound, bound)))
            .collect();
        self.tensors.insert(
            format!("{prefix}.weight"),
            Tensor::new(vec![fan_in, fan_out], data).unwrap(),
        );
    }

    fn add_bias(&mut self, prefix: &str, width: usize) {
        self.tensors
            .insert(format!("{prefix}.bias"), Tensor::zeros(&[width]));
    }

    fn add_norm_affine(&mut self, prefix: &str, width: usize) {
        self.tensors.insert(
            format!("{prefix}.gamma"),
            Tensor::full(&[width], S::one()),
        );
        self.tensors
            .insert(format!("{prefix}.beta"), Tensor::zeros(&[width]));
    }

    fn add_attention(&mut self, prefix: &str, d: usize, rng: &mut SplitRng) {
        for w in ["wq", "wk", "wv", "wo"] {
            self.add_linear(&format!("{prefix}.{w}"), d, d, rng);
        }
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_all_finite())
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }
}

/// Bundles the tape and parameter set during one forward build.
pub struct NetCtx<'a, S: Scalar> {
    pub tape: &'a Tape<S>,
    pub params: &'a ModelParams<S>,
}

impl<'a, S: Scalar> NetCtx<'a, S> {
    pub fn new(tape: &'a Tape<S>, params: &'a ModelParams<S>) -> Self {
        Self { tape, params }
    }

    /// Differentiable leaf for a named parameter. Repeated lookups share
    /// one tape node, so gradients accumulate across uses.
    pub fn p(&self, name: &str) -> Var {
        self.tape.leaf(name, self.params.get(name))
    }

    /// `x W + b` with the prefix's weight/bias pair.
    pub fn linear_bias(&self, x: Var, prefix: &str) -> Result<Var, AutodiffError> {
        let h = self.tape.matmul(x, self.p(&format!("{prefix}.weight")))?;
        self.tape
            .broadcast_add_row(h, self.p(&format!("{prefix}.bias")))
    }

    /// Per-slice normalization followed by the prefix's learned affine.
    pub fn norm_affine(&self, x: Var, prefix: &str) -> Result<Var, AutodiffError> {
        let t = self.tape;
        let normed = t.layer_norm_lastdim(x, cast::<S>(1e-5))?;
        let rows = t.shape(x)[0];
        let width = *t.shape(x).last().unwrap();
        let gamma = t.reshape(self.p(&format!("{prefix}.gamma")), &[1, width])?;
        let ones = t.constant(Tensor::full(&[rows, 1], S::one()));
        let gamma_grid = t.matmul(ones, gamma)?;
        let scaled = t.mul(normed, gamma_grid)?;
        t.broadcast_add_row(scaled, self.p(&format!("{prefix}.beta")))
    }
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layer_widths: vec![6, 6],
            knn_k: 4,
            embed_dim: 8,
            leaky_slope: 0.2,
        },
        cocontext: CoContextConfig {
            heads: 2,
            model_dim: 8,
            ff_dim: 8,
        },
        value_head: ValueHeadConfig {
            widths: vec![8, 1],
            lambda_floor: 0.01,
        },
    }
}
