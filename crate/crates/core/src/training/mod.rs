//! Dual-encoder optimization: in-batch contrastive loss (default) or the
//! hardest-negative triplet loss, AdamW updates and global-norm clipping.

mod backprop;
mod loss;
mod optim;

pub use backprop::{backprop_step, Gradients, StepOutput, TokenizedPair};
pub use loss::{contrastive_loss, contrastive_loss_grad, triplet_margin_loss, ScoreMatrix, TripletOutput};
pub use optim::{adamw_step, clip_gradients, AdamWConfig, OptimizerState};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_train_set, ContextResponsePair, DialogueSession};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Triplet,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(format!("unknown loss {other:?} (expected contrastive or triplet)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    /// Only a constant schedule is supported, so this must be 0.
    pub warmup_ratio: f64,
    pub fine_grained_k: usize,
    pub loss: LossKind,
    pub margin: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 64,
            epochs: 5,
            grad_clip_norm: 5.0,
            warmup_ratio: 0.0,
            fine_grained_k: 5,
            loss: LossKind::Contrastive,
            margin: 0.1,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2 for in-batch negatives, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("learning rate and gradient clip must be > 0".into());
        }
        if self.epochs == 0 || self.fine_grained_k == 0 {
            return bad("epochs and fine-grained k must be >= 1".into());
        }
        if self.warmup_ratio != 0.0 {
            return bad("only a constant learning rate is supported (warmup ratio 0)".into());
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        Ok(())
    }

    /// Fine-grained training pairs for `sessions` using `fine_grained_k`.
    pub fn pairs(&self, sessions: &[DialogueSession]) -> Vec<ContextResponsePair> {
        build_train_set(sessions, self.fine_grained_k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub pairs: usize,
    pub wall_ms: f64,
}

pub fn tokenize_pairs<F: Real>(
    enc: &DualEncoder<F>,
    pairs: &[ContextResponsePair],
) -> Result<Vec<TokenizedPair>> {
    pairs
        .iter()
        .map(|p| {
            Ok(TokenizedPair {
                context: enc.context_ids(&p.context)?,
                response: enc.response_ids(&p.response),
            })
        })
        .collect()
}

/// Trains `encoder` on `pairs` without per-epoch callbacks.
pub fn train<F: Real>(
    encoder: DualEncoder<F>,
    pairs: &[ContextResponsePair],
    config: &TrainConfig,
    exec: Exec,
) -> Result<(DualEncoder<F>, Vec<EpochLog>)> {
    train_with(encoder, pairs, config, exec, |_, _| Ok(()))
}

/// Shuffles pairs each epoch with a generator seeded from `config.seed`,
/// takes fixed-size batches (the last partial batch is dropped under the
/// contrastive loss, and kept under the triplet loss when it holds at least
/// two pairs), and calls `on_epoch` after every epoch.
pub fn train_with<F: Real>(
    mut encoder: DualEncoder<F>,
    pairs: &[ContextResponsePair],
    config: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog, &DualEncoder<F>) -> Result<()>,
) -> Result<(DualEncoder<F>, Vec<EpochLog>)> {
    config.validate()?;
    let n = config.batch_size;
    if pairs.len() < n {
        return Err(Error::NotEnoughPairs {
            have: pairs.len(),
            batch: n,
        });
    }
    let data = tokenize_pairs(&encoder, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = OptimizerState::new(&encoder, config.optimizer);
    let lr = F::of(config.learning_rate);
    let clip = F::of(config.grad_clip_norm);
    let margin = F::of(config.margin);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(n);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(n) {
            let keep = chunk.len() == n
                || (config.loss == LossKind::Triplet && chunk.len() >= 2);
            if !keep {
                continue;
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let StepOutput { loss, mut grads } =
                backprop_step(&encoder, &batch, config.loss, margin, exec)?;
            clip_gradients(&mut grads, clip);
            adamw_step(&mut encoder, &grads, &mut state, lr);
            total += loss.to_f64().unwrap_or(f64::NAN);
            steps += 1;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: if steps > 0 { total / steps as f64 } else { 0.0 },
            steps,
            pairs: data.len(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::info!("epoch {epoch}: mean loss {:.6} over {steps} steps", entry.mean_loss);
        on_epoch(&entry, &encoder)?;
        log.push(entry);
    }
    Ok((encoder, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Utterance};
    use crate::encoder::EncoderConfig;

    fn session(id: usize, words: &[&str]) -> DialogueSession {
        DialogueSession {
            id: format!("s{id}"),
            utterances: words.iter().map(|w| Utterance::new(*w).unwrap()).collect(),
        }
    }

    fn toy() -> (DualEncoder<f32>, Vec<ContextResponsePair>) {
        let sessions: Vec<_> = (0..12)
            .map(|i| session(i, &[&format!("hello k{i}"), &format!("reply k{i} ok"), &format!("more k{i}")]))
            .collect();
        let pairs = build_train_set(&sessions, 2);
        let texts: Vec<String> = sessions.iter().flat_map(|s| s.utterances.iter().map(|u| u.to_string())).collect();
        let vocab = build_vocab(texts.iter().map(String::as_str), 100, 1).unwrap();
        let cfg = EncoderConfig { emb_dim: 8, dim: 8, max_ctx_tokens: 16, max_res_tokens: 8 };
        (DualEncoder::init(cfg, vocab, 1).unwrap(), pairs)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { warmup_ratio: 0.1, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let (enc, pairs) = toy();
        let cfg = TrainConfig { batch_size: 64, ..TrainConfig::default() };
        assert!(matches!(
            train(enc, &pairs, &cfg, Exec::Sequential),
            Err(Error::NotEnoughPairs { have: 24, batch: 64 })
        ));
    }

    #[test]
    fn training_is_deterministic_and_independent_of_exec() {
        let (enc, pairs) = toy();
        let cfg = TrainConfig { batch_size: 5, epochs: 3, learning_rate: 1e-2, ..TrainConfig::default() };
        let (a, log_a) = train(enc.clone(), &pairs, &cfg, Exec::Parallel).unwrap();
        let (b, _) = train(enc.clone(), &pairs, &cfg, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a.len(), 3);
        // 24 pairs, batch 5: four full batches, the partial one is dropped
        assert!(log_a.iter().all(|l| l.steps == 4));
        assert!(log_a[2].mean_loss < log_a[0].mean_loss);

        let tcfg = TrainConfig { loss: LossKind::Triplet, ..cfg };
        let (_, log_t) = train(enc, &pairs, &tcfg, Exec::Parallel).unwrap();
        assert!(log_t.iter().all(|l| l.steps == 5));
    }

    #[test]
    fn epoch_callback_sees_each_epoch() {
        let (enc, pairs) = toy();
        let cfg = TrainConfig { batch_size: 8, epochs: 2, ..TrainConfig::default() };
        let mut seen = Vec::new();
        train_with(enc, &pairs, &cfg, Exec::Parallel, |log, _| {
            seen.push(log.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("triplet".parse::<LossKind>().unwrap(), LossKind::Triplet);
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
