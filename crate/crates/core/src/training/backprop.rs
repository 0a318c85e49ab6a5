//! Exact gradients through mean pooling, the affine projection and the
//! batch objective.

use super::loss::{contrastive_loss, contrastive_loss_grad, triplet_margin_loss, ScoreMatrix};
use super::LossKind;
use crate::encoder::{DualEncoder, Side, TowerParams};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix, Real};
use crate::par::Exec;

/// Gradients laid out exactly like the encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub ctx: TowerParams<F>,
    pub res: TowerParams<F>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(enc: &DualEncoder<F>) -> Self {
        let t = enc.tower(Side::Context);
        Gradients {
            ctx: TowerParams::zeros(t.vocab_size, t.emb_dim, t.dim),
            res: TowerParams::zeros(t.vocab_size, t.emb_dim, t.dim),
        }
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

    /// `(name, values)` for every block, e.g. `("ctx.embedding", ..)`.
    pub fn named_blocks(&self) -> Vec<(String, &[F])> {
        [Side::Context, Side::Response]
            .into_iter()
            .flat_map(|s| {
                self.tower(s)
                    .blocks()
                    .into_iter()
                    .map(move |(n, b)| (format!("{}.{n}", s.name()), b))
            })
            .collect()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        let [(_, a), (_, b), (_, c)] = self.ctx.blocks_mut();
        let [(_, d), (_, e), (_, f)] = self.res.blocks_mut();
        a.iter_mut()
            .chain(b.iter_mut())
            .chain(c.iter_mut())
            .chain(d.iter_mut())
            .chain(e.iter_mut())
            .chain(f.iter_mut())
    }

    pub fn global_norm(&self) -> F {
        self.named_blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|&g| g * g)
            .sum::<F>()
            .sqrt()
    }
}

/// One tokenized training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPair {
    pub context: Vec<u32>,
    pub response: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct StepOutput<F> {
    pub loss: F,
    pub grads: Gradients<F>,
}

struct Forward<F> {
    pooled: Matrix<F>,
    out: Matrix<F>,
}

fn forward<F: Real>(tower: &TowerParams<F>, items: &[&[u32]], exec: Exec) -> Forward<F> {
    let rows = exec.map(items, |ids| {
        let pooled = tower.pool(ids);
        let out = tower.project(&pooled);
        (pooled, out)
    });
    let n = items.len();
    let mut pooled = Matrix::zeros(n, tower.emb_dim);
    let mut out = Matrix::zeros(n, tower.dim);
    for (i, (p, o)) in rows.into_iter().enumerate() {
        pooled.row_mut(i).copy_from_slice(&p);
        out.row_mut(i).copy_from_slice(&o);
    }
    Forward { pooled, out }
}

/// Accumulates the gradient of one tower given `dL/dV` for each item.
/// Items are visited in batch order, so the reduction is deterministic.
fn backward<F: Real>(
    tower: &TowerParams<F>,
    items: &[&[u32]],
    fwd: &Forward<F>,
    d_out: &Matrix<F>,
    grad: &mut TowerParams<F>,
) {
    let (e, d) = (tower.emb_dim, tower.dim);
    let mut d_pooled = vec![F::zero(); e];
    for (i, ids) in items.iter().enumerate() {
        let dv = d_out.row(i);
        let x = fwd.pooled.row(i);
        d_pooled.iter_mut().for_each(|v| *v = F::zero());
        for k in 0..d {
            let g = dv[k];
            grad.bias[k] = grad.bias[k] + g;
            axpy(g, x, &mut grad.projection[k * e..(k + 1) * e]);
            axpy(g, tower.projection_row(k), &mut d_pooled);
        }
        let share = F::one() / F::of(ids.len().max(1) as f64);
        for &t in *ids {
            let t = t as usize;
            axpy(share, &d_pooled, &mut grad.embedding[t * e..(t + 1) * e]);
        }
    }
}

/// Loss and exact parameter gradients for one batch.
pub fn backprop_step<F: Real>(
    enc: &DualEncoder<F>,
    batch: &[TokenizedPair],
    loss: LossKind,
    margin: F,
    exec: Exec,
) -> Result<StepOutput<F>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch".into()));
    }
    let ctx_items: Vec<&[u32]> = batch.iter().map(|p| p.context.as_slice()).collect();
    let res_items: Vec<&[u32]> = batch.iter().map(|p| p.response.as_slice()).collect();
    let ctx_tower = enc.tower(Side::Context);
    let res_tower = enc.tower(Side::Response);
    let fc = forward(ctx_tower, &ctx_items, exec);
    let fr = forward(res_tower, &res_items, exec);

    let (value, d_ctx, d_res) = match loss {
        LossKind::Contrastive => {
            let m = ScoreMatrix::from_embeddings(&fc.out, &fr.out);
            let value = contrastive_loss(&m)?;
            let g = contrastive_loss_grad(&m)?;
            let n = batch.len();
            let dim = enc.dim();
            // dL/dVc_i = sum_j G_ij Vr_j ; dL/dVr_j = sum_i G_ij Vc_i
            let mut d_ctx = Matrix::zeros(n, dim);
            let mut d_res = Matrix::zeros(n, dim);
            for i in 0..n {
                for j in 0..n {
                    let gij = g.get(i, j);
                    axpy(gij, fr.out.row(j), d_ctx.row_mut(i));
                    axpy(gij, fc.out.row(i), d_res.row_mut(j));
                }
            }
            (value, d_ctx, d_res)
        }
        LossKind::Triplet => {
            let t = triplet_margin_loss(&fc.out, &fr.out, margin)?;
            (t.loss, t.grad_ctx, t.grad_res)
        }
    };

    let mut grads = Gradients::zeros_like(enc);
    backward(ctx_tower, &ctx_items, &fc, &d_ctx, &mut grads.ctx);
    backward(res_tower, &res_items, &fr, &d_res, &mut grads.res);

    for (name, block) in grads.named_blocks() {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(StepOutput { loss: value, grads })
}
