//! GPT-style decoder language model: forward and backward passes,
//! checkpoints and the two-phase training loop.

mod checkpoint;
pub mod gpt;
mod scalar;
mod train;
mod weights;

pub use checkpoint::{init_model, ModelCheckpoint, CHECKPOINT_VERSION};
pub use scalar::{gemm, matmul_nn, matmul_nt, matmul_tn, Scalar};
pub use train::{evaluate, train, EvalRecord, LossLog, LrSchedule, StepRecord, Streams, TrainConfig};
pub use weights::{BlockWeights, ModelConfig, Tensor, Weights};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lang::LanguageTag;

    fn cfg(vocab: usize, layers: usize, d: usize, tied: bool) -> ModelConfig {
        ModelConfig {
            n_layers: layers,
            n_heads: 2,
            d_model: d,
            d_ff: 4 * d,
            context_length: 16,
            vocab_size: vocab,
            dropout: 0.0,
            seed: 5,
            tied_embeddings: tied,
        }
    }

    fn gradcheck(tied: bool) {
        let c = cfg(100, 2, 16, tied);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // larger init than training so every path carries signal
        let w: Weights<f64> = Weights::random(&c, 0.3, &mut rng);
        let mut w = w;
        for b in &mut w.blocks {
            for (i, g) in b.ln1_g.data.iter_mut().enumerate() {
                *g = 1.0 + 0.1 * (i as f64).sin();
            }
        }
        let s1: Vec<u32> = vec![3, 17, 42, 99, 0, 17, 5];
        let s2: Vec<u32> = vec![8, 8, 61, 2];
        let batch: Vec<&[u32]> = vec![&s1, &s2];
        let (_, grads) = gpt::loss_and_grad(&c, &w, &batch, None);
        let h = 1e-5;
        let names: Vec<String> = w.named().into_iter().map(|(n, _)| n).collect();
        let analytic: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, t)| t.data.clone()).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = analytic[ti].len();
            let mut worst: f64 = 0.0;
            // a spread of coordinates from each tensor
            for k in 0..12.min(len) {
                let idx = (k * 7919 + ti * 31) % len;
                let mut wp = w.clone();
                wp.tensors_mut()[ti].data[idx] += h;
                let mut wm = w.clone();
                wm.tensors_mut()[ti].data[idx] -= h;
                let fp = gpt::loss_and_grad(&c, &wp, &batch, None).0;
                let fm = gpt::loss_and_grad(&c, &wm, &batch, None).0;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[ti][idx];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_tied() {
        gradcheck(true);
    }

    #[test]
    fn gradients_match_finite_differences_untied() {
        gradcheck(false);
    }

    #[test]
    fn zero_model_is_uniform() {
        let c = cfg(100, 2, 16, true);
        let z = ModelCheckpoint::zeros(&c).unwrap();
        let ids = [1u32, 2, 3, 4];
        let loss = z.loss(&[&ids]).unwrap();
        assert!((loss - 100f64.ln()).abs() < 1e-12, "{loss}");
        for row in z.log_probs(&ids).unwrap() {
            assert!(row.iter().all(|&l| (l + 100f64.ln()).abs() < 1e-12));
        }
        let (l2, _) = gpt::loss_and_grad(&c, &z.weights, &[&ids], None);
        assert!((l2 - 100f64.ln()).abs() < 1e-6);
        let hs = z.hidden_states(&ids, 0).unwrap();
        assert_eq!(hs.len(), 4);
        assert!(hs.iter().all(|v| v.len() == 16 && v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn init_shapes_and_errors() {
        let c = cfg(100, 1, 16, true);
        let m = init_model(&c).unwrap();
        assert_eq!(m.weights.wte.shape, vec![100, 16]);
        assert_eq!(m.weights.n_params(), c.n_params());
        assert_eq!(init_model(&c).unwrap(), m);
        let bad = ModelConfig { n_heads: 3, ..c.clone() };
        assert!(init_model(&bad).is_err());
        assert!(m.logits(&[100]).is_err());
        assert!(m.logits(&[1; 17]).is_err());
        assert!(m.hidden_states(&[1], 2).is_err());
        let untied = cfg(100, 1, 16, false);
        assert_eq!(init_model(&untied).unwrap().weights.n_params(), untied.n_params());
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let m = init_model(&cfg(50, 1, 16, true)).unwrap();
        let a: Vec<u32> = vec![1, 5, 9, 2];
        let b: Vec<u32> = vec![7, 3, 3, 3];
        let once = gpt::loss_and_grad(&m.config, &m.weights, &[&a, &b], None).0;
        let twice = gpt::loss_and_grad(&m.config, &m.weights, &[&a, &b, &a, &b], None).0;
        assert!((once - twice).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = init_model(&cfg(40, 2, 8, false)).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = ModelCheckpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = ModelCheckpoint::from_bytes(&newer).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('1'), "{err}");
        for cut in [3, 10, 20, bytes.len() - 1] {
            assert!(ModelCheckpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.blxc");
        m.save(&p).unwrap();
        assert_eq!(ModelCheckpoint::load(&p).unwrap(), m);
    }

    fn sentences() -> Vec<u32> {
        // ten short "sentences" separated by token 0
        let mut s = Vec::new();
        for i in 0..10u32 {
            s.push(0);
            s.extend([1 + i, 11 + (i * 3) % 10, 21 + (i * 7) % 10, 31 + i % 4]);
        }
        s
    }

    #[test]
    fn overfits_tiny_corpus() {
        let c = ModelConfig { context_length: 10, ..cfg(40, 2, 32, true) };
        let l1 = sentences();
        let l2: Vec<u32> = l1.iter().map(|&x| if x == 0 { 0 } else { x }).collect();
        let t = TrainConfig {
            lr: 1e-2,
            warmup_steps: 10,
            weight_decay: 0.0,
            effective_batch_tokens: 40,
            epochs: 50,
            l1_fraction: 0.5,
            ..Default::default()
        };
        let (m, log) = train(init_model(&c).unwrap(), Streams { train: [&l1, &l2], test: None }, &t).unwrap();
        assert_eq!(log.steps.len(), 200);
        let last = log.steps.last().unwrap().loss;
        assert!(last < 0.5, "final loss {last}");
        // argmax continuation reproduces every within-sentence token
        for block in l1.chunks(10) {
            let lp = m.log_probs(block).unwrap();
            for t in 0..block.len() - 1 {
                if block[t + 1] == 0 || block[t] == 0 {
                    continue;
                }
                let arg = lp[t].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert_eq!(arg as u32, block[t + 1]);
            }
        }
    }

    #[test]
    fn l1_phase_precedes_l2_and_training_is_deterministic() {
        let c = ModelConfig { context_length: 8, ..cfg(40, 1, 16, true) };
        let l1: Vec<u32> = (0..240).map(|i| (i * 7 % 39) as u32).collect();
        let l2: Vec<u32> = (0..80).map(|i| (i * 5 % 39) as u32).collect();
        let t = TrainConfig {
            warmup_steps: 2,
            effective_batch_tokens: 16,
            epochs: 1,
            ..Default::default()
        };
        let streams = Streams { train: [&l1, &l2], test: Some([&l1[..40], &l2[..40]]) };
        let (m, log) = train(init_model(&c).unwrap(), streams, &t).unwrap();
        let last_l1 = log.steps.iter().filter(|s| s.phase == LanguageTag::L1).map(|s| s.step).max().unwrap();
        let first_l2 = log.steps.iter().filter(|s| s.phase == LanguageTag::L2).map(|s| s.step).min().unwrap();
        assert!(last_l1 < first_l2);
        assert!(log.steps.windows(2).all(|w| w[0].step < w[1].step));
        assert_eq!(log.evals.len(), 2);
        assert!(log.to_csv().starts_with("step,epoch,phase,loss\n1,1,L1,"));
        let (m2, log2) = train(init_model(&c).unwrap(), streams, &t).unwrap();
        assert_eq!(m.to_bytes().unwrap(), m2.to_bytes().unwrap());
        assert_eq!(log, log2);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (m3, _) = pool.install(|| train(init_model(&c).unwrap(), streams, &t)).unwrap();
        assert_eq!(m.to_bytes().unwrap(), m3.to_bytes().unwrap());
    }

    #[test]
    fn short_stream_rejected() {
        let c = cfg(40, 1, 16, true);
        let l1 = vec![1u32; 5];
        let err = train(init_model(&c).unwrap(), Streams { train: [&l1, &l1], test: None }, &TrainConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn dropout_training_runs() {
        let c = ModelConfig { dropout: 0.1, context_length: 8, ..cfg(20, 1, 8, true) };
        let l: Vec<u32> = (0..64).map(|i| i % 20).collect();
        let t = TrainConfig { effective_batch_tokens: 16, epochs: 1, warmup_steps: 0, ..Default::default() };
        let (a, _) = train(init_model(&c).unwrap(), Streams { train: [&l, &l], test: None }, &t).unwrap();
        let (b, _) = train(init_model(&c).unwrap(), Streams { train: [&l, &l], test: None }, &t).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn causal_and_normalized(ids in prop::collection::vec(0u32..30, 2..12), cut in 1usize..11, fill in 0u32..30) {
            let m = init_model(&cfg(30, 2, 16, true)).unwrap();
            let cut = cut.min(ids.len() - 1);
            let mut other = ids.clone();
            for x in &mut other[cut..] {
                *x = (*x + fill + 1) % 30;
            }
            let a = m.log_probs(&ids).unwrap();
            let b = m.log_probs(&other).unwrap();
            for t in 0..cut {
                prop_assert_eq!(&a[t], &b[t]);
            }
            for row in &a {
                let s: f64 = row.iter().map(|l| l.exp()).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            for layer in 0..=2 {
                let ha = m.hidden_states(&ids, layer).unwrap();
                let hb = m.hidden_states(&other, layer).unwrap();
                prop_assert_eq!(&ha[..cut], &hb[..cut]);
            }
        }
    }
}
