//! Decoupled context and response towers scored by inner product.
//!
//! Each tower mean-pools learned token embeddings and applies one affine
//! projection: `V = W * mean(E[t_1..t_L]) + b`. The two towers share the
//! vocabulary but nothing else.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, Vocabulary, SEP_ID};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Real};
use crate::par::Exec;

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub emb_dim: usize,
    pub dim: usize,
    pub max_ctx_tokens: usize,
    pub max_res_tokens: usize,
}

/// Wide towers by default: with a learning rate of 5e-5 every parameter
/// moves by roughly that much per Adam step, and narrow towers barely leave
/// their initialization within five epochs.
impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            emb_dim: 512,
            dim: 512,
            max_ctx_tokens: 256,
            max_res_tokens: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.dim == 0 {
            return Err(Error::Config(format!(
                "encoder dimensions must be >= 1 (emb_dim={}, dim={})",
                self.emb_dim, self.dim
            )));
        }
        if self.max_ctx_tokens == 0 || self.max_res_tokens == 0 {
            return Err(Error::Config("token caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Context,
    Response,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Context => "ctx",
            Side::Response => "res",
        }
    }
}

/// Parameters of one tower. Matrices are row-major: `embedding` is
/// `vocab_size x emb_dim`, `projection` is `dim x emb_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerParams<F> {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub dim: usize,
    pub embedding: Vec<F>,
    pub projection: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> TowerParams<F> {
    pub fn zeros(vocab_size: usize, emb_dim: usize, dim: usize) -> Self {
        TowerParams {
            vocab_size,
            emb_dim,
            dim,
            embedding: vec![F::zero(); vocab_size * emb_dim],
            projection: vec![F::zero(); dim * emb_dim],
            bias: vec![F::zero(); dim],
        }
    }

    fn random(vocab_size: usize, emb_dim: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(vocab_size, emb_dim, dim);
        for slot in t
            .embedding
            .iter_mut()
            .chain(t.projection.iter_mut())
            .chain(t.bias.iter_mut())
        {
            *slot = F::of(rng.random_range(-INIT_RANGE..=INIT_RANGE));
        }
        t
    }

    pub fn embedding_row(&self, id: u32) -> &[F] {
        let i = id as usize;
        &self.embedding[i * self.emb_dim..(i + 1) * self.emb_dim]
    }

    pub fn projection_row(&self, k: usize) -> &[F] {
        &self.projection[k * self.emb_dim..(k + 1) * self.emb_dim]
    }

    /// Mean of the embedding rows of `ids`.
    pub fn pool(&self, ids: &[u32]) -> Vec<F> {
        let mut acc = vec![F::zero(); self.emb_dim];
        for &id in ids {
            for (a, e) in acc.iter_mut().zip(self.embedding_row(id)) {
                *a = *a + *e;
            }
        }
        let n = F::of(ids.len().max(1) as f64);
        acc.iter_mut().for_each(|a| *a = *a / n);
        acc
    }

    /// `W * pooled + b`
    pub fn project(&self, pooled: &[F]) -> Vec<F> {
        (0..self.dim)
            .map(|k| dot(self.projection_row(k), pooled) + self.bias[k])
            .collect()
    }

    pub fn forward(&self, ids: &[u32]) -> Vec<F> {
        self.project(&self.pool(ids))
    }

    /// Named parameter blocks in storage order.
    pub fn blocks(&self) -> [(&'static str, &[F]); 3] {
        [
            ("embedding", &self.embedding),
            ("projection", &self.projection),
            ("bias", &self.bias),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [F]); 3] {
        [
            ("embedding", &mut self.embedding),
            ("projection", &mut self.projection),
            ("bias", &mut self.bias),
        ]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size && self.emb_dim == other.emb_dim && self.dim == other.dim
    }
}

/// A `d`-dimensional representation produced by one tower.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<F = f32>(Vec<F>);

impl<F> Embedding<F> {
    pub fn new(v: Vec<F>) -> Self {
        Embedding(v)
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }
}

impl<F> Deref for Embedding<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

/// Inner product of two embeddings.
pub fn score<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder<F = f32> {
    config: EncoderConfig,
    vocab: Vocabulary,
    ctx: TowerParams<F>,
    res: TowerParams<F>,
}

impl<F: Real> DualEncoder<F> {
    /// Draws every parameter i.i.d. from `U[-0.05, 0.05]`, context tower first.
    pub fn init(config: EncoderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let ctx = TowerParams::random(v, config.emb_dim, config.dim, &mut rng);
        let res = TowerParams::random(v, config.emb_dim, config.dim, &mut rng);
        Ok(DualEncoder {
            config,
            vocab,
            ctx,
            res,
        })
    }

    pub fn from_parts(
        config: EncoderConfig,
        vocab: Vocabulary,
        ctx: TowerParams<F>,
        res: TowerParams<F>,
    ) -> Result<Self> {
        config.validate()?;
        for (name, t) in [("ctx", &ctx), ("res", &res)] {
            let ok = t.vocab_size == vocab.len()
                && t.emb_dim == config.emb_dim
                && t.dim == config.dim
                && t.embedding.len() == t.vocab_size * t.emb_dim
                && t.projection.len() == t.dim * t.emb_dim
                && t.bias.len() == t.dim;
            if !ok {
                return Err(Error::Config(format!("{name} tower shape does not match config")));
            }
        }
        Ok(DualEncoder {
            config,
            vocab,
            ctx,
            res,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tower(&self, side: Side) -> &TowerParams<F> {
        match side {
            Side::Context => &self.ctx,
            Side::Response => &self.res,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut TowerParams<F> {
        match side {
            Side::Context => &mut self.ctx,
            Side::Response => &mut self.res,
        }
    }

    /// Converts into an encoder with a different element type.
    pub fn cast<G: Real>(&self) -> DualEncoder<G> {
        let conv = |t: &TowerParams<F>| TowerParams {
            vocab_size: t.vocab_size,
            emb_dim: t.emb_dim,
            dim: t.dim,
            embedding: t.embedding.iter().map(|x| G::of(x.to_f64().unwrap())).collect(),
            projection: t.projection.iter().map(|x| G::of(x.to_f64().unwrap())).collect(),
            bias: t.bias.iter().map(|x| G::of(x.to_f64().unwrap())).collect(),
        };
        DualEncoder {
            config: self.config,
            vocab: self.vocab.clone(),
            ctx: conv(&self.ctx),
            res: conv(&self.res),
        }
    }

    /// Utterance ids joined by SEP, keeping only the most recent
    /// `max_ctx_tokens` ids.
    pub fn context_ids(&self, context: &[Utterance]) -> Result<Vec<u32>> {
        if context.is_empty() {
            return Err(Error::EmptyInput("context has no utterances".into()));
        }
        let mut ids = Vec::new();
        for (i, u) in context.iter().enumerate() {
            if i > 0 {
                ids.push(SEP_ID);
            }
            ids.extend(self.vocab.tokenize(u.as_str()));
        }
        Ok(keep_last(ids, self.config.max_ctx_tokens))
    }

    pub fn response_ids(&self, response: &Utterance) -> Vec<u32> {
        keep_last(self.vocab.tokenize(response.as_str()), self.config.max_res_tokens)
    }

    /// Tower forward on already tokenized input.
    pub fn encode_ids(&self, side: Side, ids: &[u32]) -> Embedding<F> {
        Embedding(self.tower(side).forward(ids))
    }

    pub fn encode_context(&self, context: &[Utterance]) -> Result<Embedding<F>> {
        Ok(self.encode_ids(Side::Context, &self.context_ids(context)?))
    }

    pub fn encode_response(&self, response: &Utterance) -> Embedding<F> {
        self.encode_ids(Side::Response, &self.response_ids(response))
    }

    /// Row `i` is exactly the single-item encoding of `items[i]`.
    pub fn encode_batch_ids(&self, side: Side, items: &[Vec<u32>], exec: Exec) -> Matrix<F> {
        let d = self.config.dim;
        let rows = exec.map(items, |ids| self.tower(side).forward(ids));
        Matrix::from_vec(items.len(), d, rows.into_iter().flatten().collect())
            .expect("every row has dim entries")
    }

    pub fn encode_contexts(&self, contexts: &[Vec<Utterance>], exec: Exec) -> Result<Matrix<F>> {
        let ids = contexts
            .iter()
            .map(|c| self.context_ids(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.encode_batch_ids(Side::Context, &ids, exec))
    }

    pub fn encode_responses(&self, responses: &[Utterance], exec: Exec) -> Matrix<F> {
        let ids: Vec<_> = responses.iter().map(|r| self.response_ids(r)).collect();
        self.encode_batch_ids(Side::Response, &ids, exec)
    }
}

fn keep_last(mut ids: Vec<u32>, cap: usize) -> Vec<u32> {
    if ids.len() > cap {
        ids.drain(..ids.len() - cap);
    }
    ids
}
