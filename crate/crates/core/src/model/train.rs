use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelCheckpoint;
use super::gpt;
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::lang::LanguageTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    /// Tokens per optimizer step (rounded down to whole blocks, at least one).
    pub effective_batch_tokens: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub l1_fraction: f64,
    /// Tokens consumed per epoch; defaults to the size of both streams.
    pub tokens_per_epoch: Option<usize>,
    pub seed: u64,
    pub min_lr_ratio: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Log every n steps at info level (0 = never).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            warmup_steps: 1000,
            weight_decay: 0.1,
            effective_batch_tokens: 512 * 256,
            grad_accum_steps: 1,
            epochs: 2,
            l1_fraction: 0.75,
            tokens_per_epoch: None,
            seed: 0,
            min_lr_ratio: 0.1,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.l1_fraction > 0.0 && self.l1_fraction < 1.0) {
            return bad(format!("l1_fraction must lie in (0, 1), got {}", self.l1_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.grad_accum_steps == 0 || self.epochs == 0 {
            return bad("grad_accum_steps and epochs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad(format!("min_lr_ratio must lie in [0, 1], got {}", self.min_lr_ratio));
        }
        Ok(())
    }
}

/// Linear warmup then cosine decay to `min_lr_ratio × lr` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: u64,
    pub total: u64,
    pub min_ratio: f64,
}

impl LrSchedule {
    /// Rate used for optimizer step `step` (1-based).
    pub fn at(&self, step: u64) -> f64 {
        if self.warmup > 0 && step <= self.warmup {
            return self.base * step as f64 / self.warmup as f64;
        }
        let min = self.base * self.min_ratio;
        let span = self.total.saturating_sub(self.warmup);
        if span == 0 {
            return self.base;
        }
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        min + (self.base - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: LanguageTag,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub lang: LanguageTag,
    pub test_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,phase,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.epoch, r.phase, r.loss);
        }
        s
    }

    pub fn eval_csv(&self) -> String {
        let mut s = String::from("epoch,lang,test_loss\n");
        for r in &self.evals {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.lang, r.test_loss);
        }
        s
    }

    pub fn write(&self, train_csv: &Path, eval_csv: &Path) -> Result<()> {
        std::fs::write(train_csv, self.to_csv()).map_err(|e| Error::io(train_csv, e))?;
        std::fs::write(eval_csv, self.eval_csv()).map_err(|e| Error::io(eval_csv, e))
    }
}

/// Packed per-language token streams (documents joined by end-of-text).
#[derive(Debug, Clone, Copy)]
pub struct Streams<'a> {
    pub train: [&'a [u32]; 2],
    pub test: Option<[&'a [u32]; 2]>,
}

fn blocks(stream: &[u32], len: usize) -> Vec<&[u32]> {
    stream.chunks_exact(len).collect()
}

/// Picks `n` blocks: whole shuffled passes over the stream, reshuffled each pass.
fn pick<'a>(all: &[&'a [u32]], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a [u32]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pass = all.to_vec();
        pass.shuffle(rng);
        let take = (n - out.len()).min(pass.len());
        out.extend_from_slice(&pass[..take]);
    }
    out
}

struct AdamW {
    m: Weights<f32>,
    v: Weights<f32>,
    t: i32,
}

impl AdamW {
    fn step(&mut self, w: &mut Weights<f32>, g: &Weights<f32>, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let grads = g.named();
        for (((p, m), v), (_, gt)) in w
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            let decay = if p.shape.len() == 2 { cfg.weight_decay } else { 0.0 };
            for i in 0..p.data.len() {
                let gi = gt.data[i] as f64;
                let mi = b1 * m.data[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v.data[i] as f64 + (1.0 - b2) * gi * gi;
                m.data[i] = mi as f32;
                v.data[i] = vi as f32;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps) + decay * p.data[i] as f64;
                p.data[i] = (p.data[i] as f64 - lr * update) as f32;
            }
        }
    }
}

fn grad_norm(g: &Weights<f32>) -> f64 {
    g.named()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Mean loss and gradient of equal-length blocks. Per-block work runs in
/// parallel; the reduction is sequential in block order so results do not
/// depend on the thread count.
fn batch_grad(ckpt: &ModelCheckpoint, batch: &[&[u32]], seeds: &[u64]) -> (f64, Weights<f32>) {
    let cfg = &ckpt.config;
    let dropout = cfg.dropout > 0.0;
    let parts: Vec<(f64, Weights<f32>)> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(seq, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gpt::loss_and_grad(cfg, &ckpt.weights, &[*seq], dropout.then_some(&mut rng))
        })
        .collect();
    let n = parts.len() as f32;
    let mut iter = parts.into_iter();
    let (mut loss, mut acc) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in acc.tensors_mut().into_iter().zip(g.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.1.data) {
                *x += *y;
            }
        }
    }
    for t in acc.tensors_mut() {
        for x in &mut t.data {
            *x /= n;
        }
    }
    (loss / n as f64, acc)
}

/// Mean test loss over every block of a stream (a short stream counts as one
/// block).
pub fn evaluate(ckpt: &ModelCheckpoint, stream: &[u32]) -> Result<f64> {
    let len = ckpt.config.context_length;
    let mut bl = blocks(stream, len);
    if bl.is_empty() {
        if stream.len() < 2 {
            return Err(Error::Model("test stream shorter than two tokens".into()));
        }
        bl.push(stream);
    }
    let sums: Vec<Result<(f64, usize)>> = bl
        .par_iter()
        .map(|b| Ok((ckpt.loss(&[b])? * (b.len() - 1) as f64, b.len() - 1)))
        .collect();
    let (mut total, mut n) = (0.0, 0usize);
    for s in sums {
        let (l, k) = s?;
        total += l;
        n += k;
    }
    Ok(total / n as f64)
}

/// Two-phase training: each epoch consumes the L1 share of the token budget,
/// then the L2 share, in blocks of `context_length` tokens.
pub fn train(mut ckpt: ModelCheckpoint, streams: Streams<'_>, tcfg: &TrainConfig) -> Result<(ModelCheckpoint, LossLog)> {
    tcfg.validate()?;
    let len = ckpt.config.context_length;
    let mut all_blocks: Vec<Vec<&[u32]>> = Vec::new();
    for lang in LanguageTag::BOTH {
        let s = streams.train[lang.index()];
        if let Some(&bad) = s.iter().find(|&&i| i as usize >= ckpt.config.vocab_size) {
            return Err(Error::Model(format!("{lang} stream has token id {bad} outside the vocabulary")));
        }
        let b = blocks(s, len);
        if b.is_empty() {
            return Err(Error::Model(format!(
                "{lang} training stream has {} tokens, shorter than one block of {len}",
                s.len()
            )));
        }
        all_blocks.push(b);
    }
    let budget = tcfg
        .tokens_per_epoch
        .unwrap_or(streams.train[0].len() + streams.train[1].len());
    let n_l1 = ((budget as f64 * tcfg.l1_fraction / len as f64).round() as usize).max(1);
    let n_l2 = ((budget as f64 * (1.0 - tcfg.l1_fraction) / len as f64).round() as usize).max(1);
    let per_step = (tcfg.effective_batch_tokens / len).max(1);
    let micro = per_step.div_ceil(tcfg.grad_accum_steps);
    let steps_per_epoch = (n_l1.div_ceil(per_step) + n_l2.div_ceil(per_step)) as u64;
    let schedule = LrSchedule {
        base: tcfg.lr,
        warmup: tcfg.warmup_steps,
        total: ckpt.step + steps_per_epoch * tcfg.epochs as u64,
        min_ratio: tcfg.min_lr_ratio,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut opt = AdamW {
        m: ckpt.weights.zeros_like(),
        v: ckpt.weights.zeros_like(),
        t: 0,
    };
    let mut log = LossLog::default();
    let start_step = ckpt.step;
    for epoch in 1..=tcfg.epochs {
        for (lang, n_blocks) in [(LanguageTag::L1, n_l1), (LanguageTag::L2, n_l2)] {
            let chosen = pick(&all_blocks[lang.index()], n_blocks, &mut order_rng);
            for step_blocks in chosen.chunks(per_step) {
                let step = ckpt.step + 1;
                let mut total = ckpt.weights.zeros_like();
                let mut step_loss = 0.0;
                for mb in step_blocks.chunks(micro) {
                    let seeds: Vec<u64> = mb.iter().map(|_| ckpt.rng.gen()).collect();
                    let (loss, g) = batch_grad(&ckpt, mb, &seeds);
                    let w = mb.len() as f32 / step_blocks.len() as f32;
                    step_loss += loss * mb.len() as f64 / step_blocks.len() as f64;
                    for (a, b) in total.tensors_mut().into_iter().zip(g.named()) {
                        for (x, y) in a.data.iter_mut().zip(&b.1.data) {
                            *x += *y * w;
                        }
                    }
                }
                if !step_loss.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss at step {step} (epoch {epoch}, {lang} phase)")));
                }
                let norm = grad_norm(&total);
                if !norm.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient at step {step} (epoch {epoch}, {lang} phase)"
                    )));
                }
                if tcfg.grad_clip > 0.0 && norm > tcfg.grad_clip {
                    let s = (tcfg.grad_clip / norm) as f32;
                    for t in total.tensors_mut() {
                        t.data.iter_mut().for_each(|x| *x *= s);
                    }
                }
                let lr = schedule.at(step - start_step);
                opt.step(&mut ckpt.weights, &total, lr, tcfg);
                ckpt.step = step;
                log.steps.push(StepRecord { step, epoch, phase: lang, loss: step_loss });
                if tcfg.log_every > 0 && step % tcfg.log_every == 0 {
                    log::info!("step {step} epoch {epoch} {lang} loss {step_loss:.4} lr {lr:.3e}");
                }
            }
        }
        if let Some(test) = streams.test {
            for lang in LanguageTag::BOTH {
                let s = test[lang.index()];
                if s.len() >= 2 {
                    let test_loss = evaluate(&ckpt, s)?;
                    log.evals.push(EvalRecord { epoch, lang, test_loss });
                }
            }
        }
    }
    if !ckpt.weights.all_finite() {
        return Err(Error::Numerical("non-finite parameters after training".into()));
    }
    Ok((ckpt, log))
}
