use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gpt::{self, log_softmax};
use super::weights::{ModelConfig, Tensor, Weights};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BLXC";
pub const CHECKPOINT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

/// Model parameters plus the training position they were saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Free-form string metadata stored in the header (run provenance).
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    rng: RngState,
    n_tensors: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

/// Seeded normal(0, 0.02) weights, zero biases, unit norm gains.
pub fn init_model(config: &ModelConfig) -> Result<ModelCheckpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = Weights::random(config, INIT_STD, &mut rng);
    Ok(ModelCheckpoint {
        config: config.clone(),
        weights,
        step: 0,
        rng,
        meta: BTreeMap::new(),
    })
}

impl ModelCheckpoint {
    /// All-zero parameters: every output distribution is uniform.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelCheckpoint {
            config: config.clone(),
            weights: Weights::zeros(config),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            meta: BTreeMap::new(),
        })
    }

    pub fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Model("empty input sequence".into()));
        }
        if ids.len() > self.config.context_length {
            return Err(Error::Model(format!(
                "sequence of {} tokens exceeds context length {}",
                ids.len(),
                self.config.context_length
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Model(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Raw logits, `len(ids) × vocab_size` row-major.
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<f32>> {
        self.check_ids(ids)?;
        Ok(gpt::forward(&self.config, &self.weights, ids, None, None).logits)
    }

    /// Per-position next-token log-probabilities (natural log).
    pub fn log_probs(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let v = self.config.vocab_size;
        let logits = self.logits(ids)?;
        Ok(logits
            .chunks(v)
            .map(|row| log_softmax(&row.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect())
    }

    /// Next-token log-probabilities after the last position of `prefix`.
    pub fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.log_probs(prefix)?.pop().expect("non-empty"))
    }

    /// Residual stream after `layer` blocks; layer 0 is the embedding
    /// output and `n_layers` includes the final norm.
    pub fn hidden_states(&self, ids: &[u32], layer: usize) -> Result<Vec<Vec<f32>>> {
        self.check_ids(ids)?;
        let l = self.config.n_layers;
        if layer > l {
            return Err(Error::Model(format!("layer {layer} out of range 0..={l}")));
        }
        let cache = gpt::forward(&self.config, &self.weights, ids, None, Some(layer));
        Ok(cache.states(layer, l).chunks(self.config.d_model).map(<[f32]>::to_vec).collect())
    }

    /// Mean next-token cross-entropy (nats) of each sequence pooled.
    pub fn loss(&self, batch: &[&[u32]]) -> Result<f64> {
        for s in batch {
            self.check_ids(s)?;
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for s in batch {
            let lp = self.log_probs(s)?;
            for t in 0..s.len() - 1 {
                total -= lp[t][s[t + 1] as usize];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Model("no predicted positions".into()));
        }
        Ok(total / n as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.weights.named();
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            n_tensors: named.len(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.weights.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let len = read_u64(&mut r)? as usize;
        if len > r.len() {
            return Err(truncated());
        }
        let header: Header = serde_json::from_slice(&r[..len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        r = &r[len..];
        header.config.validate()?;
        let mut weights = Weights::<f32>::zeros(&header.config);
        let expected: Vec<(String, Vec<usize>)> =
            weights.named().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if header.n_tensors != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, header lists {}",
                expected.len(),
                header.n_tensors
            )));
        }
        for ((name, shape), slot) in expected.into_iter().zip(weights.tensors_mut()) {
            let t = read_tensor(&mut r)?;
            if t.0 != name || t.1.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.0, t.1.shape
                )));
            }
            *slot = t.1;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        if !weights.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        let seed: [u8; 32] = unhex(&header.rng.seed)
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| Error::Checkpoint("bad rng seed".into()))?;
        let word_pos: u128 = header
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(header.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(ModelCheckpoint {
            config: header.config,
            weights,
            step: header.step,
            rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn truncated() -> Error {
    Error::Checkpoint("truncated checkpoint".into())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| truncated())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor(r: &mut &[u8]) -> Result<(String, Tensor<f32>)> {
    let nlen = read_u32(r)? as usize;
    if nlen > r.len() {
        return Err(truncated());
    }
    let name = String::from_utf8(r[..nlen].to_vec()).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
    *r = &r[nlen..];
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("tensor {name} has implausible rank {rank}")));
    }
    let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    if n.checked_mul(4).map_or(true, |b| b > r.len()) {
        return Err(truncated());
    }
    let data = r[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    *r = &r[4 * n..];
    Ok((name, Tensor { shape, data }))
}
