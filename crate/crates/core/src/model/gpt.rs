//! Decoder-only transformer (pre-norm, GELU MLP, learned absolute positions)
//! with a hand-written backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::{matmul_nn, matmul_nt, matmul_tn, Scalar};
use super::weights::{BlockWeights, ModelConfig, Weights};

const LN_EPS: f64 = 1e-5;

struct LayerNormOut<T> {
    out: Vec<T>,
    mean: Vec<T>,
    rstd: Vec<T>,
}

fn layernorm<T: Scalar>(x: &[T], g: &[T], b: &[T], c: usize) -> LayerNormOut<T> {
    let rows = x.len() / c;
    let mut out = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); rows];
    let mut rstd = vec![T::zero(); rows];
    let cn = T::of(c as f64);
    for r in 0..rows {
        let xr = &x[r * c..(r + 1) * c];
        let m = xr.iter().copied().sum::<T>() / cn;
        let v = xr.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / cn;
        let s = T::one() / (v + T::of(LN_EPS)).sqrt();
        for i in 0..c {
            out[r * c + i] = (xr[i] - m) * s * g[i] + b[i];
        }
        mean[r] = m;
        rstd[r] = s;
    }
    LayerNormOut { out, mean, rstd }
}

/// Accumulates into `dx`, `dg`, `db`.
#[allow(clippy::too_many_arguments)]
fn layernorm_backward<T: Scalar>(
    dx: &mut [T], dg: &mut [T], db: &mut [T],
    dout: &[T], x: &[T], g: &[T], mean: &[T], rstd: &[T], c: usize,
) {
    let cn = T::of(c as f64);
    for r in 0..mean.len() {
        let (m, s) = (mean[r], rstd[r]);
        let xr = &x[r * c..(r + 1) * c];
        let dr = &dout[r * c..(r + 1) * c];
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for i in 0..c {
            let norm = (xr[i] - m) * s;
            let dnorm = g[i] * dr[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean = dnorm_mean / cn;
        dnorm_norm_mean = dnorm_norm_mean / cn;
        for i in 0..c {
            let norm = (xr[i] - m) * s;
            let dnorm = g[i] * dr[i];
            db[i] += dr[i];
            dg[i] += norm * dr[i];
            dx[r * c + i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::of((2.0 / std::f64::consts::PI).sqrt()), T::of(0.044715))
}

fn gelu<T: Scalar>(x: T) -> T {
    let (k, a) = gelu_consts::<T>();
    T::of(0.5) * x * (T::one() + (k * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (k, a) = gelu_consts::<T>();
    let u = k * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = T::one() - th * th;
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * sech2 * k * (T::one() + T::of(3.0) * a * x * x)
}

fn add_bias<T: Scalar>(y: &mut [T], b: &[T]) {
    for row in y.chunks_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += *bb;
        }
    }
}

fn col_sum_into<T: Scalar>(db: &mut [T], dy: &[T]) {
    for row in dy.chunks(db.len()) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += *v;
        }
    }
}

/// Inverted dropout mask, `None` when inactive.
fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    Some((0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect())
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= *k;
        }
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1: LayerNormOut<T>,
    qkv: Vec<T>,
    /// Attention probabilities, (head, query, key) with keys ≤ query.
    att: Vec<T>,
    atty: Vec<T>,
    mask_attn: Option<Vec<T>>,
    x_mid: Vec<T>,
    ln2: LayerNormOut<T>,
    fch: Vec<T>,
    fch_gelu: Vec<T>,
    mask_mlp: Option<Vec<T>>,
}

/// Activations of one forward pass over a single sequence.
pub struct Cache<T> {
    n: usize,
    ids: Vec<u32>,
    mask_emb: Option<Vec<T>>,
    embedded: Vec<T>,
    layers: Vec<LayerCache<T>>,
    x_out: Vec<T>,
    lnf: LayerNormOut<T>,
    pub logits: Vec<T>,
}

fn attention_forward<T: Scalar>(qkv: &[T], n: usize, cfg: &ModelConfig) -> (Vec<T>, Vec<T>) {
    let (c, h, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut att = vec![T::zero(); h * n * n];
    let mut y = vec![T::zero(); n * c];
    for head in 0..h {
        for t in 0..n {
            let q = &qkv[t * 3 * c + head * hd..][..hd];
            let row = &mut att[(head * n + t) * n..][..n];
            let mut maxv = T::neg_infinity();
            for t2 in 0..=t {
                let k = &qkv[t2 * 3 * c + c + head * hd..][..hd];
                let s = q.iter().zip(k).map(|(a, b)| *a * *b).sum::<T>() * scale;
                row[t2] = s;
                if s > maxv {
                    maxv = s;
                }
            }
            let mut sum = T::zero();
            for v in row.iter_mut().take(t + 1) {
                *v = (*v - maxv).exp();
                sum += *v;
            }
            for v in row.iter_mut().take(t + 1) {
                *v = *v / sum;
            }
            let out = &mut y[t * c + head * hd..][..hd];
            for t2 in 0..=t {
                let p = row[t2];
                let v = &qkv[t2 * 3 * c + 2 * c + head * hd..][..hd];
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += p * *vv;
                }
            }
        }
    }
    (att, y)
}

fn attention_backward<T: Scalar>(dqkv: &mut [T], datty: &[T], qkv: &[T], att: &[T], n: usize, cfg: &ModelConfig) {
    let (c, h, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut dp = vec![T::zero(); n];
    for head in 0..h {
        for t in 0..n {
            let row = &att[(head * n + t) * n..][..n];
            let dy = &datty[t * c + head * hd..][..hd];
            // through y = Σ p v
            let mut dot = T::zero();
            for t2 in 0..=t {
                let voff = t2 * 3 * c + 2 * c + head * hd;
                let v = &qkv[voff..][..hd];
                dp[t2] = dy.iter().zip(v).map(|(a, b)| *a * *b).sum();
                dot += dp[t2] * row[t2];
                let dv = &mut dqkv[voff..][..hd];
                for (d, g) in dv.iter_mut().zip(dy) {
                    *d += row[t2] * *g;
                }
            }
            // through softmax and the scaled dot products
            for t2 in 0..=t {
                let ds = row[t2] * (dp[t2] - dot) * scale;
                let qoff = t * 3 * c + head * hd;
                let koff = t2 * 3 * c + c + head * hd;
                for i in 0..hd {
                    let (q, k) = (qkv[qoff + i], qkv[koff + i]);
                    dqkv[qoff + i] += ds * k;
                    dqkv[koff + i] += ds * q;
                }
            }
        }
    }
}

/// Runs the network over `ids` (already validated). Dropout is active only
/// when `rng` is given.
pub fn forward<T: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<T>,
    ids: &[u32],
    mut rng: Option<&mut ChaCha8Rng>,
    stop_after_layer: Option<usize>,
) -> Cache<T> {
    let (n, c, f, v) = (ids.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let mut x = vec![T::zero(); n * c];
    for (t, &id) in ids.iter().enumerate() {
        let e = &w.wte.data[id as usize * c..][..c];
        let p = &w.wpe.data[t * c..][..c];
        for i in 0..c {
            x[t * c + i] = e[i] + p[i];
        }
    }
    let mask_emb = dropout_mask(n * c, cfg.dropout, rng.as_deref_mut());
    apply_mask(&mut x, &mask_emb);
    let embedded = x.clone();
    let n_layers = stop_after_layer.unwrap_or(cfg.n_layers).min(cfg.n_layers);
    let mut layers = Vec::with_capacity(n_layers);
    for b in &w.blocks[..n_layers] {
        let ln1 = layernorm(&x, &b.ln1_g.data, &b.ln1_b.data, c);
        let mut qkv = vec![T::zero(); n * 3 * c];
        matmul_nn(&mut qkv, &ln1.out, &b.qkv_w.data, n, c, 3 * c, T::zero());
        add_bias(&mut qkv, &b.qkv_b.data);
        let (att, atty) = attention_forward(&qkv, n, cfg);
        let mut proj = vec![T::zero(); n * c];
        matmul_nn(&mut proj, &atty, &b.proj_w.data, n, c, c, T::zero());
        add_bias(&mut proj, &b.proj_b.data);
        let mask_attn = dropout_mask(n * c, cfg.dropout, rng.as_deref_mut());
        apply_mask(&mut proj, &mask_attn);
        let x_mid: Vec<T> = x.iter().zip(&proj).map(|(a, b)| *a + *b).collect();
        let ln2 = layernorm(&x_mid, &b.ln2_g.data, &b.ln2_b.data, c);
        let mut fch = vec![T::zero(); n * f];
        matmul_nn(&mut fch, &ln2.out, &b.fc_w.data, n, c, f, T::zero());
        add_bias(&mut fch, &b.fc_b.data);
        let fch_gelu: Vec<T> = fch.iter().map(|&v| gelu(v)).collect();
        let mut fco = vec![T::zero(); n * c];
        matmul_nn(&mut fco, &fch_gelu, &b.fcproj_w.data, n, f, c, T::zero());
        add_bias(&mut fco, &b.fcproj_b.data);
        let mask_mlp = dropout_mask(n * c, cfg.dropout, rng.as_deref_mut());
        apply_mask(&mut fco, &mask_mlp);
        let x_next: Vec<T> = x_mid.iter().zip(&fco).map(|(a, b)| *a + *b).collect();
        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_next),
            ln1,
            qkv,
            att,
            atty,
            mask_attn,
            x_mid,
            ln2,
            fch,
            fch_gelu,
            mask_mlp,
        });
    }
    let (lnf, logits) = if stop_after_layer.is_some() {
        (layernorm(&x, &w.lnf_g.data, &w.lnf_b.data, c), Vec::new())
    } else {
        let lnf = layernorm(&x, &w.lnf_g.data, &w.lnf_b.data, c);
        let mut logits = vec![T::zero(); n * v];
        matmul_nt(&mut logits, &lnf.out, &w.head().data, n, c, v, T::zero());
        (lnf, logits)
    };
    Cache {
        n,
        ids: ids.to_vec(),
        mask_emb,
        embedded,
        layers,
        x_out: x,
        lnf,
        logits,
    }
}

impl<T: Scalar> Cache<T> {
    /// Residual stream after `layer` blocks (0 = embeddings); the final
    /// layer index returns the normalized output.
    pub fn states(&self, layer: usize, n_layers: usize) -> &[T] {
        if layer == 0 {
            &self.embedded
        } else if layer == n_layers {
            &self.lnf.out
        } else if layer < self.layers.len() {
            &self.layers[layer].x_in
        } else {
            &self.x_out
        }
    }
}

/// Backpropagates `dlogits` (n × vocab) and accumulates into `grads`.
pub fn backward<T: Scalar>(cfg: &ModelConfig, w: &Weights<T>, cache: &Cache<T>, dlogits: &[T], grads: &mut Weights<T>) {
    let (n, c, f, v) = (cache.n, cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let mut dlnf = vec![T::zero(); n * c];
    matmul_nn(&mut dlnf, dlogits, &w.head().data, n, v, c, T::zero());
    let dhead = match &mut grads.lm_head {
        Some(h) => &mut h.data,
        None => &mut grads.wte.data,
    };
    matmul_tn(dhead, dlogits, &cache.lnf.out, v, n, c, T::one());
    let mut dx = vec![T::zero(); n * c];
    layernorm_backward(
        &mut dx, &mut grads.lnf_g.data, &mut grads.lnf_b.data,
        &dlnf, &cache.x_out, &w.lnf_g.data, &cache.lnf.mean, &cache.lnf.rstd, c,
    );
    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let b: &BlockWeights<T> = &w.blocks[l];
        let g = &mut grads.blocks[l];
        // x = x_mid + drop(gelu(ln2 · fc) · fcproj)
        let mut dfco = dx.clone();
        apply_mask(&mut dfco, &lc.mask_mlp);
        col_sum_into(&mut g.fcproj_b.data, &dfco);
        matmul_tn(&mut g.fcproj_w.data, &lc.fch_gelu, &dfco, f, n, c, T::one());
        let mut dfch = vec![T::zero(); n * f];
        matmul_nt(&mut dfch, &dfco, &b.fcproj_w.data, n, c, f, T::zero());
        for (d, &x) in dfch.iter_mut().zip(&lc.fch) {
            *d *= gelu_grad(x);
        }
        col_sum_into(&mut g.fc_b.data, &dfch);
        matmul_tn(&mut g.fc_w.data, &lc.ln2.out, &dfch, c, n, f, T::one());
        let mut dln2 = vec![T::zero(); n * c];
        matmul_nt(&mut dln2, &dfch, &b.fc_w.data, n, f, c, T::zero());
        let mut dxmid = dx;
        layernorm_backward(
            &mut dxmid, &mut g.ln2_g.data, &mut g.ln2_b.data,
            &dln2, &lc.x_mid, &b.ln2_g.data, &lc.ln2.mean, &lc.ln2.rstd, c,
        );
        // x_mid = x_in + drop(attn(ln1) · proj)
        let mut dproj = dxmid.clone();
        apply_mask(&mut dproj, &lc.mask_attn);
        col_sum_into(&mut g.proj_b.data, &dproj);
        matmul_tn(&mut g.proj_w.data, &lc.atty, &dproj, c, n, c, T::one());
        let mut datty = vec![T::zero(); n * c];
        matmul_nt(&mut datty, &dproj, &b.proj_w.data, n, c, c, T::zero());
        let mut dqkv = vec![T::zero(); n * 3 * c];
        attention_backward(&mut dqkv, &datty, &lc.qkv, &lc.att, n, cfg);
        col_sum_into(&mut g.qkv_b.data, &dqkv);
        matmul_tn(&mut g.qkv_w.data, &lc.ln1.out, &dqkv, c, n, 3 * c, T::one());
        let mut dln1 = vec![T::zero(); n * c];
        matmul_nt(&mut dln1, &dqkv, &b.qkv_w.data, n, 3 * c, c, T::zero());
        let mut dxin = dxmid;
        layernorm_backward(
            &mut dxin, &mut g.ln1_g.data, &mut g.ln1_b.data,
            &dln1, &lc.x_in, &b.ln1_g.data, &lc.ln1.mean, &lc.ln1.rstd, c,
        );
        dx = dxin;
    }
    apply_mask(&mut dx, &cache.mask_emb);
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = &dx[t * c..(t + 1) * c];
        for (d, r) in grads.wte.data[id as usize * c..][..c].iter_mut().zip(row) {
            *d += *r;
        }
        for (d, r) in grads.wpe.data[t * c..][..c].iter_mut().zip(row) {
            *d += *r;
        }
    }
}

/// Log-softmax of one logit row, computed in f64.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Next-token cross-entropy of one sequence: returns the summed loss (nats,
/// f64) over the `n − 1` predicted positions and writes `scale × ∂loss/∂logits`
/// into `dlogits`.
pub fn cross_entropy<T: Scalar>(logits: &[T], ids: &[u32], vocab: usize, scale: f64, dlogits: &mut [T]) -> f64 {
    let n = ids.len();
    let mut total = 0.0;
    dlogits.iter_mut().for_each(|d| *d = T::zero());
    let mut ex = vec![0.0f64; vocab];
    for t in 0..n.saturating_sub(1) {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let max = row.iter().map(|x| x.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (e, x) in ex.iter_mut().zip(row) {
            *e = (x.to_f64().unwrap() - max).exp();
            sum += *e;
        }
        let target = ids[t + 1] as usize;
        total -= row[target].to_f64().unwrap() - max - sum.ln();
        let d = &mut dlogits[t * vocab..(t + 1) * vocab];
        for (j, e) in ex.iter().enumerate() {
            let p = e / sum - if j == target { 1.0 } else { 0.0 };
            d[j] = T::of(p * scale);
        }
    }
    total
}

/// Mean next-token loss over every predicted position of the batch, and
/// its exact gradient. Sequences may differ in length (each ≥ 2).
pub fn loss_and_grad<T: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<T>,
    batch: &[&[u32]],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (f64, Weights<T>) {
    let n_pred: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    let mut grads = w.zeros_like();
    let mut total = 0.0;
    let scale = 1.0 / n_pred.max(1) as f64;
    for seq in batch {
        let cache = forward(cfg, w, seq, rng.as_deref_mut(), None);
        let mut dlogits = vec![T::zero(); cache.logits.len()];
        total += cross_entropy(&cache.logits, seq, cfg.vocab_size, scale, &mut dlogits);
        backward(cfg, w, &cache, &dlogits, &mut grads);
    }
    (total * scale, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0];
        let out = layernorm(&x, &[1.0; 4], &[0.0; 4], 4);
        for r in 0..2 {
            let row = &out.out[r * 4..(r + 1) * 4];
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_gradients_use_the_same_mask() {
        let cfg = ModelConfig {
            n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, context_length: 6,
            vocab_size: 11, dropout: 0.3, seed: 0, tied_embeddings: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Weights<f64> = Weights::random(&cfg, 0.3, &mut rng);
        let ids = [1u32, 4, 2, 9, 3];
        let (_, g) = loss_and_grad(&cfg, &w, &[&ids], Some(&mut ChaCha8Rng::seed_from_u64(7)));
        // finite difference with the identical mask sequence
        let loss = |w: &Weights<f64>| loss_and_grad(&cfg, w, &[&ids], Some(&mut ChaCha8Rng::seed_from_u64(7))).0;
        let h = 1e-5;
        for idx in [0usize, 5, 17] {
            let mut wp = w.clone();
            wp.blocks[0].fc_w.data[idx] += h;
            let mut wm = w.clone();
            wm.blocks[0].fc_w.data[idx] -= h;
            let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
            let an = g.blocks[0].fc_w.data[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
        }
    }
}
