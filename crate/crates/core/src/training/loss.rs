//! Batch objectives over context/response embeddings.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix, Real};

/// `M[i][j] = <V_c_i, V_r_j>` for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<F>(pub Matrix<F>);

impl<F: Real> ScoreMatrix<F> {
    pub fn from_embeddings(ctx: &Matrix<F>, res: &Matrix<F>) -> Self {
        let n = ctx.rows();
        let mut m = Matrix::zeros(n, res.rows());
        for i in 0..n {
            let c = ctx.row(i);
            for (j, slot) in m.row_mut(i).iter_mut().enumerate() {
                *slot = dot(c, res.row(j));
            }
        }
        ScoreMatrix(m)
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Option<Self> {
        let m = Matrix::from_rows(rows)?;
        (m.rows() == m.cols()).then_some(ScoreMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    fn check(&self) -> Result<()> {
        if self.0.rows() != self.0.cols() || self.0.rows() == 0 {
            return Err(Error::Config(format!(
                "score matrix must be square and non-empty, got {}x{}",
                self.0.rows(),
                self.0.cols()
            )));
        }
        if self.0.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(())
    }
}

fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-batch negative contrastive loss: the mean over rows of the softmax
/// cross-entropy with the diagonal as the target.
pub fn contrastive_loss<F: Real>(m: &ScoreMatrix<F>) -> Result<F> {
    m.check()?;
    let n = m.n();
    let total: F = (0..m.n())
        .map(|i| {
            let row = m.0.row(i);
            log_sum_exp(row) - row[i]
        })
        .sum();
    // each row term is >= 0 in exact arithmetic; clamp rounding noise
    Ok((total / F::of(n as f64)).max(F::zero()))
}

/// `dL/dM[i][j] = (softmax_i(M)[j] - [i == j]) / n`
pub fn contrastive_loss_grad<F: Real>(m: &ScoreMatrix<F>) -> Result<Matrix<F>> {
    m.check()?;
    let n = m.n();
    let inv_n = F::one() / F::of(n as f64);
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        let row = m.0.row(i);
        let lse = log_sum_exp(row);
        for (j, slot) in g.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            let target = if i == j { F::one() } else { F::zero() };
            *slot = (p - target) * inv_n;
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletOutput<F> {
    /// Sum of hinge terms over the batch.
    pub loss: F,
    pub grad_ctx: Matrix<F>,
    pub grad_res: Matrix<F>,
    /// Hardest in-batch negative chosen for each row.
    pub negatives: Vec<usize>,
    /// Number of rows with an active (positive) hinge.
    pub active: usize,
}

/// `d cos(a, b) / d a`
fn cos_grad<F: Real>(a: &[F], b: &[F], cos: F, na: F, nb: F) -> Vec<F> {
    let inv = F::one() / (na * nb);
    let self_term = cos / (na * na);
    a.iter().zip(b).map(|(&ai, &bi)| bi * inv - ai * self_term).collect()
}

/// Hardest-negative triplet margin loss on cosine similarity with sum
/// reduction. For row `i` the negative is the response `j != i` with the
/// highest cosine to `c_i` (lowest `j` on ties). The hinge has zero
/// subgradient at its kink.
pub fn triplet_margin_loss<F: Real>(
    ctx: &Matrix<F>,
    res: &Matrix<F>,
    margin: F,
) -> Result<TripletOutput<F>> {
    let n = ctx.rows();
    if n < 2 || res.rows() != n {
        return Err(Error::Config(format!(
            "triplet loss needs a batch of >= 2 matched rows, got {n} contexts and {} responses",
            res.rows()
        )));
    }
    if ctx.cols() != res.cols() {
        return Err(Error::DimensionMismatch {
            expected: ctx.cols(),
            found: res.cols(),
        });
    }
    let ctx_norms: Vec<F> = ctx.iter_rows().map(norm).collect();
    let res_norms: Vec<F> = res.iter_rows().map(norm).collect();
    for (side, norms) in [("context", &ctx_norms), ("response", &res_norms)] {
        if let Some(row) = norms.iter().position(|&x| x == F::zero()) {
            return Err(Error::ZeroNorm { side, row });
        }
        if norms.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{side} embeddings")));
        }
    }

    let d = ctx.cols();
    let mut out = TripletOutput {
        loss: F::zero(),
        grad_ctx: Matrix::zeros(n, d),
        grad_res: Matrix::zeros(n, d),
        negatives: Vec::with_capacity(n),
        active: 0,
    };
    for i in 0..n {
        let c = ctx.row(i);
        let cos = |j: usize| dot(c, res.row(j)) / (ctx_norms[i] * res_norms[j]);
        let mut neg = usize::MAX;
        let mut neg_cos = F::neg_infinity();
        for j in (0..n).filter(|&j| j != i) {
            let s = cos(j);
            if s > neg_cos {
                neg = j;
                neg_cos = s;
            }
        }
        out.negatives.push(neg);
        let pos_cos = cos(i);
        let term = neg_cos - pos_cos + margin;
        if term <= F::zero() {
            continue;
        }
        out.loss = out.loss + term;
        out.active += 1;

        let (r_pos, r_neg) = (res.row(i), res.row(neg));
        let dc_neg = cos_grad(c, r_neg, neg_cos, ctx_norms[i], res_norms[neg]);
        let dc_pos = cos_grad(c, r_pos, pos_cos, ctx_norms[i], res_norms[i]);
        for ((g, a), b) in out.grad_ctx.row_mut(i).iter_mut().zip(&dc_neg).zip(&dc_pos) {
            *g = *g + *a - *b;
        }
        let dr_neg = cos_grad(r_neg, c, neg_cos, res_norms[neg], ctx_norms[i]);
        for (g, a) in out.grad_res.row_mut(neg).iter_mut().zip(&dr_neg) {
            *g = *g + *a;
        }
        let dr_pos = cos_grad(r_pos, c, pos_cos, res_norms[i], ctx_norms[i]);
        for (g, b) in out.grad_res.row_mut(i).iter_mut().zip(&dr_pos) {
            *g = *g - *b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(rows: Vec<Vec<f64>>) -> ScoreMatrix<f64> {
        ScoreMatrix::from_rows(rows).unwrap()
    }

    /// Direct evaluation of the loss definition without the max shift.
    fn naive_loss(m: &[Vec<f64>]) -> f64 {
        let n = m.len() as f64;
        m.iter()
            .enumerate()
            .map(|(i, row)| {
                let denom: f64 = row.iter().map(|x| x.exp()).sum();
                -(row[i].exp() / denom).ln()
            })
            .sum::<f64>()
            / n
    }

    #[test]
    fn tagged_loss_values() {
        assert_eq!(contrastive_loss(&sm(vec![vec![3.7]])).unwrap(), 0.0);
        let l = contrastive_loss(&sm(vec![vec![0.4, 0.4], vec![0.4, 0.4]])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = contrastive_loss(&sm(vec![vec![2.0, 0.0], vec![0.0, 2.0]])).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn large_logits_stay_finite() {
        let l = contrastive_loss(&sm(vec![vec![1000.0, 0.0], vec![0.0, 1000.0]])).unwrap();
        assert_eq!(l, 0.0);
        let l = contrastive_loss(&sm(vec![vec![0.0, 800.0], vec![0.0, 0.0]])).unwrap();
        assert!((l - (800.0 + std::f64::consts::LN_2) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let m = sm(vec![vec![f64::NAN, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(contrastive_loss(&m), Err(Error::NonFinite(_))));
        assert!(contrastive_loss_grad(&m).is_err());
    }

    #[test]
    fn uniform_row_gradient() {
        let n = 4;
        let g = contrastive_loss_grad(&sm(vec![vec![0.3; n]; n])).unwrap();
        let nf = n as f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { (1.0 / nf) * (1.0 / nf - 1.0) } else { (1.0 / nf) * (1.0 / nf) };
                assert!((g.get(i, j) - want).abs() < 1e-15);
            }
        }
        let g1 = contrastive_loss_grad(&sm(vec![vec![5.0]])).unwrap();
        assert_eq!(g1.get(0, 0), 0.0);
    }

    fn square(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, n), n)
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(m in (1usize..6).prop_flat_map(square)) {
            let g = contrastive_loss_grad(&sm(m.clone())).unwrap();
            let h = 1e-5;
            for i in 0..m.len() {
                for j in 0..m.len() {
                    let mut up = m.clone();
                    up[i][j] += h;
                    let mut dn = m.clone();
                    dn[i][j] -= h;
                    let fd = (naive_loss(&up) - naive_loss(&dn)) / (2.0 * h);
                    let a = g.get(i, j);
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    prop_assert!(rel < 1e-6, "({i},{j}) analytic {a} fd {fd}");
                }
            }
        }

        #[test]
        fn loss_properties(m in (1usize..7).prop_flat_map(square), shift in -50.0f64..50.0, row in 0usize..7, rot in 0usize..7) {
            let n = m.len();
            let base = contrastive_loss(&sm(m.clone())).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - naive_loss(&m)).abs() < 1e-9);

            let mut shifted = m.clone();
            shifted[row % n].iter_mut().for_each(|x| *x += shift);
            prop_assert!((contrastive_loss(&sm(shifted)).unwrap() - base).abs() < 1e-9);

            // same permutation on rows and columns
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| m[i][j]).collect()).collect();
            prop_assert!((contrastive_loss(&sm(permuted)).unwrap() - base).abs() < 1e-9);

            let g = contrastive_loss_grad(&sm(m)).unwrap();
            for i in 0..n {
                let s: f64 = g.row(i).iter().sum();
                prop_assert!(s.abs() < 1e-12);
                prop_assert!(g.get(i, i) <= 0.0);
            }
        }
    }

    fn unit(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    /// Builds a two-row batch where row 0 has cosine `pos` to its response
    /// and `neg` to the other response.
    fn two_rows(pos: f64, neg: f64) -> (Matrix<f64>, Matrix<f64>) {
        let ctx = Matrix::from_rows(vec![unit(0.0), unit(1.0)]).unwrap();
        let res = Matrix::from_rows(vec![unit(pos.acos()), unit(-neg.acos())]).unwrap();
        (ctx, res)
    }

    /// Hinge term of row 0 by definition; also checks the summed loss.
    fn row0_term(pos: f64, neg: f64, margin: f64) -> f64 {
        let (c, r) = two_rows(pos, neg);
        let out = triplet_margin_loss(&c, &r, margin).unwrap();
        let cos = |a: &[f64], b: &[f64]| dot(a, b) / (norm(a) * norm(b));
        let term = |i: usize, j: usize| (cos(c.row(i), r.row(j)) - cos(c.row(i), r.row(i)) + margin).max(0.0);
        assert_eq!(out.negatives, vec![1, 0]);
        assert!((out.loss - (term(0, 1) + term(1, 0))).abs() < 1e-12);
        term(0, 1)
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(row0_term(0.9, 0.2, 0.1), 0.0);
        assert!((row0_term(0.5, 0.6, 0.1) - 0.2).abs() < 1e-12);
        assert!(row0_term(0.5, 0.5, 0.0).abs() < 1e-12);
    }

    #[test]
    fn triplet_hinge_inactive_has_zero_gradient() {
        let ctx = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let res = ctx.clone();
        let out = triplet_margin_loss(&ctx, &res, 0.1).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.active, 0);
        assert!(out.grad_ctx.as_slice().iter().all(|&x| x == 0.0));
        // margin exactly at the kink: cos(c,n) - cos(c,r) + m == 0
        let out = triplet_margin_loss(&ctx, &res, 1.0).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_res.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triplet_rejects_zero_vectors() {
        let ctx = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let res = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            triplet_margin_loss(&ctx, &res, 0.1),
            Err(Error::ZeroNorm { side: "context", row: 1 })
        ));
        let one = Matrix::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        assert!(triplet_margin_loss(&one, &one, 0.1).is_err());
    }

    #[test]
    fn triplet_ties_pick_lowest_index() {
        let ctx = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let res = Matrix::from_rows(vec![vec![0.0, -1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let out = triplet_margin_loss(&ctx, &res, 0.1).unwrap();
        assert_eq!(out.negatives[0], 1);
    }
}
