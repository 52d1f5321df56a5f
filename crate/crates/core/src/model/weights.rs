use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Transformer dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_context")]
    pub context_length: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output head shares the token embedding matrix.
    #[serde(default = "default_tied")]
    pub tied_embeddings: bool,
}

fn default_context() -> usize {
    256
}

fn default_tied() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.context_length < 2 {
            return bad(format!("context_length must be at least 2, got {}", self.context_length));
        }
        if self.vocab_size == 0 || self.d_ff == 0 {
            return bad("vocab_size and d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Trainable parameter count.
    pub fn n_params(&self) -> usize {
        let (c, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let block = 2 * c + (c * 3 * c + 3 * c) + (c * c + c) + 2 * c + (c * f + f) + (f * c + c);
        let head = if self.tied_embeddings { 0 } else { v * c };
        v * c + self.context_length * c + self.n_layers * block + 2 * c + head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64().unwrap())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub fcproj_w: Tensor<T>,
    pub fcproj_b: Tensor<T>,
}

/// All model parameters. Linear weights are stored input-major
/// (`in × out`), so a layer computes `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub wte: Tensor<T>,
    pub wpe: Tensor<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub lnf_g: Tensor<T>,
    pub lnf_b: Tensor<T>,
    pub lm_head: Option<Tensor<T>>,
}

impl<T: Scalar> Weights<T> {
    /// Parameters with the given weight fill, zero biases and the given
    /// norm gain.
    fn build(cfg: &ModelConfig, mut weight: impl FnMut(&[usize]) -> Tensor<T>, gain: T) -> Self {
        let (c, f, v, t) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.context_length);
        let wte = weight(&[v, c]);
        let wpe = weight(&[t, c]);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockWeights {
                ln1_g: Tensor::filled(&[c], gain),
                ln1_b: Tensor::zeros(&[c]),
                qkv_w: weight(&[c, 3 * c]),
                qkv_b: Tensor::zeros(&[3 * c]),
                proj_w: weight(&[c, c]),
                proj_b: Tensor::zeros(&[c]),
                ln2_g: Tensor::filled(&[c], gain),
                ln2_b: Tensor::zeros(&[c]),
                fc_w: weight(&[c, f]),
                fc_b: Tensor::zeros(&[f]),
                fcproj_w: weight(&[f, c]),
                fcproj_b: Tensor::zeros(&[c]),
            })
            .collect();
        let lm_head = (!cfg.tied_embeddings).then(|| weight(&[v, c]));
        Weights {
            wte,
            wpe,
            blocks,
            lnf_g: Tensor::filled(&[c], gain),
            lnf_b: Tensor::zeros(&[c]),
            lm_head,
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, Tensor::zeros, T::zero())
    }

    /// Weights ~ N(0, std²), zero biases, unit norm gains.
    pub fn random(cfg: &ModelConfig, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        Self::build(
            cfg,
            |shape| Tensor {
                shape: shape.to_vec(),
                data: (0..shape.iter().product::<usize>())
                    .map(|_| T::of(normal.sample(rng)))
                    .collect(),
            },
            T::one(),
        )
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(&t.shape))
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        self.map(Tensor::cast)
    }

    fn map<U>(&self, f: impl Fn(&Tensor<T>) -> Tensor<U>) -> Weights<U> {
        Weights {
            wte: f(&self.wte),
            wpe: f(&self.wpe),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    ln1_g: f(&b.ln1_g),
                    ln1_b: f(&b.ln1_b),
                    qkv_w: f(&b.qkv_w),
                    qkv_b: f(&b.qkv_b),
                    proj_w: f(&b.proj_w),
                    proj_b: f(&b.proj_b),
                    ln2_g: f(&b.ln2_g),
                    ln2_b: f(&b.ln2_b),
                    fc_w: f(&b.fc_w),
                    fc_b: f(&b.fc_b),
                    fcproj_w: f(&b.fcproj_w),
                    fcproj_b: f(&b.fcproj_b),
                })
                .collect(),
            lnf_g: f(&self.lnf_g),
            lnf_b: f(&self.lnf_b),
            lm_head: self.lm_head.as_ref().map(f),
        }
    }

    /// Named tensors in canonical (serialization) order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("wte".to_string(), &self.wte), ("wpe".to_string(), &self.wpe)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in block_fields(b) {
                out.push((format!("h.{i}.{name}"), t));
            }
        }
        out.push(("lnf.g".into(), &self.lnf_g));
        out.push(("lnf.b".into(), &self.lnf_b));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".into(), h));
        }
        out
    }

    /// Mutable tensors in the same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.wte, &mut self.wpe];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_g, &mut b.ln1_b, &mut b.qkv_w, &mut b.qkv_b, &mut b.proj_w, &mut b.proj_b,
                &mut b.ln2_g, &mut b.ln2_b, &mut b.fc_w, &mut b.fc_b, &mut b.fcproj_w, &mut b.fcproj_b,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        if let Some(h) = &mut self.lm_head {
            out.push(h);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// Output projection matrix (`vocab × d_model`).
    pub fn head(&self) -> &Tensor<T> {
        self.lm_head.as_ref().unwrap_or(&self.wte)
    }
}

fn block_fields<T>(b: &BlockWeights<T>) -> [(&'static str, &Tensor<T>); 12] {
    [
        ("ln1.g", &b.ln1_g),
        ("ln1.b", &b.ln1_b),
        ("attn.qkv.w", &b.qkv_w),
        ("attn.qkv.b", &b.qkv_b),
        ("attn.proj.w", &b.proj_w),
        ("attn.proj.b", &b.proj_b),
        ("ln2.g", &b.ln2_g),
        ("ln2.b", &b.ln2_b),
        ("mlp.fc.w", &b.fc_w),
        ("mlp.fc.b", &b.fc_b),
        ("mlp.proj.w", &b.fcproj_w),
        ("mlp.proj.b", &b.fcproj_b),
    ]
}
