use serde::{Deserialize, Serialize};

use super::backprop::Gradients;
use crate::encoder::{DualEncoder, Side, TowerParams};
use crate::linalg::Real;

/// Rescales all gradients by `max_norm / g` when their global L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<F: Real>(grads: &mut Gradients<F>, max_norm: F) -> F {
    let g = grads.global_norm();
    if g > max_norm && g > F::zero() {
        let scale = max_norm / g;
        grads.values_mut().for_each(|x| *x = *x * scale);
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment accumulators mirroring the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Gradients<F>,
    pub second: Gradients<F>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(enc: &DualEncoder<F>, config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Gradients::zeros_like(enc),
            second: Gradients::zeros_like(enc),
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step<F: Real>(
    enc: &mut DualEncoder<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
    lr: F,
) {
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = F::of(c.beta1);
    let b2 = F::of(c.beta2);
    let step_size = lr / (F::one() - b1.powi(t));
    let bc2_sqrt = (F::one() - b2.powi(t)).sqrt();
    let hyper = Hyper {
        b1,
        b2,
        eps: F::of(c.eps),
        decay: F::one() - lr * F::of(c.weight_decay),
        step_size,
        bc2_sqrt,
    };
    for side in [Side::Context, Side::Response] {
        update_tower(
            enc.tower_mut(side),
            grads.tower(side),
            state.first.tower_mut(side),
            state.second.tower_mut(side),
            &hyper,
        );
    }
}

struct Hyper<F> {
    b1: F,
    b2: F,
    eps: F,
    decay: F,
    step_size: F,
    bc2_sqrt: F,
}

fn update_tower<F: Real>(
    p: &mut TowerParams<F>,
    g: &TowerParams<F>,
    m: &mut TowerParams<F>,
    v: &mut TowerParams<F>,
    h: &Hyper<F>,
) {
    let blocks = p
        .blocks_mut()
        .into_iter()
        .zip(g.blocks())
        .zip(m.blocks_mut())
        .zip(v.blocks_mut());
    for ((((_, p), (_, g)), (_, m)), (_, v)) in blocks {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = h.b1 * m[i] + (F::one() - h.b1) * gi;
            v[i] = h.b2 * v[i] + (F::one() - h.b2) * gi * gi;
            let denom = v[i].sqrt() / h.bc2_sqrt + h.eps;
            p[i] = p[i] * h.decay - h.step_size * m[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::encoder::EncoderConfig;

    fn enc() -> DualEncoder<f64> {
        let vocab = build_vocab(["a b c"], 10, 1).unwrap();
        let cfg = EncoderConfig {
            emb_dim: 3,
            dim: 2,
            max_ctx_tokens: 8,
            max_res_tokens: 8,
        };
        DualEncoder::init(cfg, vocab, 9).unwrap()
    }

    fn filled(e: &DualEncoder<f64>, f: impl Fn(usize) -> f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(e);
        g.values_mut().enumerate().for_each(|(i, x)| *x = f(i));
        g
    }

    #[test]
    fn clipping_halves_when_norm_is_double() {
        let e = enc();
        let n = Gradients::zeros_like(&e).values_mut().count();
        // every entry equal: norm = |x| sqrt(n) = 10
        let x = 10.0 / (n as f64).sqrt();
        let mut g = filled(&e, |_| x);
        let before = clip_gradients(&mut g, 5.0);
        assert!((before - 10.0).abs() < 1e-12);
        assert!(g.values_mut().all(|v| (*v - x / 2.0).abs() < 1e-12));
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_below_threshold_and_zero_are_identity() {
        let e = enc();
        let mut g = filled(&e, |i| (i as f64) * 1e-3);
        let orig = g.clone();
        clip_gradients(&mut g, 5.0);
        assert_eq!(g, orig);
        let mut z = Gradients::zeros_like(&e);
        let zc = z.clone();
        assert_eq!(clip_gradients(&mut z, 5.0), 0.0);
        assert_eq!(z, zc);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut e = enc();
        let before = e.clone();
        let g = filled(&e, |i| (i as f64 - 7.0) * 0.3);
        let mut state = OptimizerState::new(&e, AdamWConfig::default());
        let lr = 5e-5;
        adamw_step(&mut e, &g, &mut state, lr);
        let mut gv = g.clone();
        let grads: Vec<f64> = gv.values_mut().map(|x| *x).collect();
        let mut p0 = Gradients { ctx: before.tower(Side::Context).clone(), res: before.tower(Side::Response).clone() };
        let mut p1 = Gradients { ctx: e.tower(Side::Context).clone(), res: e.tower(Side::Response).clone() };
        for ((a, b), g) in p0.values_mut().zip(p1.values_mut()).zip(grads) {
            let want = *a * (1.0 - lr * 0.01) - lr * g / (g.abs() + 1e-8);
            assert!((*b - want).abs() < 1e-15, "{b} vs {want}");
        }
    }

    #[test]
    fn zero_grad_without_decay_or_zero_lr_is_identity() {
        let mut e = enc();
        let before = e.clone();
        let g = Gradients::zeros_like(&e);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut state = OptimizerState::new(&e, cfg);
        adamw_step(&mut e, &g, &mut state, 1e-3);
        assert_eq!(e, before);

        let g = filled(&e, |i| i as f64);
        let mut state = OptimizerState::new(&e, AdamWConfig::default());
        adamw_step(&mut e, &g, &mut state, 0.0);
        assert_eq!(e, before);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut e = enc();
            let mut state = OptimizerState::new(&e, AdamWConfig::default());
            for s in 0..5 {
                let g = filled(&e, |i| ((i + s) as f64).sin());
                adamw_step(&mut e, &g, &mut state, 1e-2);
            }
            e
        };
        assert_eq!(run(), run());
    }
}
