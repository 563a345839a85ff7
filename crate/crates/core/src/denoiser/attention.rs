//! Efficient attention: `ρ_q(Q) · (ρ_k(K)ᵀ · V)` where `ρ_q` is a softmax over
//! each query row's features and `ρ_k` a softmax over positions for each key
//! column. No `n × n` score matrix is ever formed.

use crate::error::{shape_err, Result};
use crate::tensor::Mat;

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax over consecutive blocks of `group` features in every row.
pub(crate) fn softmax_rows_grouped(x: &Mat, group: usize) -> Mat {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for block in out.row_mut(i).chunks_mut(group) {
            softmax_in_place(block);
        }
    }
    out
}

/// Softmax down every column (over positions).
pub(crate) fn softmax_cols(x: &Mat) -> Mat {
    let t = softmax_rows_grouped(&x.transpose(), x.rows());
    t.transpose()
}

/// Cached intermediates of one multi-head evaluation, kept for the backward pass.
pub(crate) struct AttentionParts {
    pub q_soft: Mat,
    pub k_soft: Mat,
    /// Per-head `ρ_k(K_h)ᵀ · V_h`, each `d_k × d_v`.
    pub context: Vec<Mat>,
    pub out: Mat,
}

pub(crate) fn check_shapes(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Result<()> {
    if heads == 0 {
        return shape_err("attention needs at least one head");
    }
    if q.cols() != k.cols() {
        return shape_err(format!("query width {} != key width {}", q.cols(), k.cols()));
    }
    if k.rows() != v.rows() {
        return shape_err(format!("{} keys but {} values", k.rows(), v.rows()));
    }
    if k.rows() == 0 || q.rows() == 0 {
        return shape_err("attention over an empty sequence");
    }
    if q.cols() % heads != 0 || v.cols() % heads != 0 {
        return shape_err(format!(
            "widths {}/{} not divisible by {heads} heads",
            q.cols(),
            v.cols()
        ));
    }
    Ok(())
}

pub(crate) fn forward_parts(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> AttentionParts {
    let dk = q.cols() / heads;
    let dv = v.cols() / heads;
    let q_soft = softmax_rows_grouped(q, dk);
    let k_soft = softmax_cols(k);
    let mut out = Mat::zeros(q.rows(), v.cols());
    let mut context = Vec::with_capacity(heads);
    for h in 0..heads {
        let kh = k_soft.cols_range(h * dk, dk);
        let vh = v.cols_range(h * dv, dv);
        let ctx = kh.t_matmul(&vh);
        let qh = q_soft.cols_range(h * dk, dk);
        let oh = qh.matmul(&ctx);
        for i in 0..out.rows() {
            out.row_mut(i)[h * dv..(h + 1) * dv].copy_from_slice(oh.row(i));
        }
        context.push(ctx);
    }
    AttentionParts { q_soft, k_soft, context, out }
}

/// Single-head efficient attention, `Q: n×d_k`, `K: m×d_k`, `V: m×d_v`.
pub fn efficient_attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    efficient_attention_heads(q, k, v, 1)
}

/// Multi-head efficient attention; features are split into `heads` equal
/// blocks and each block attends independently.
pub fn efficient_attention_heads(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Result<Mat> {
    check_shapes(q, k, v, heads)?;
    Ok(forward_parts(q, k, v, heads).out)
}

/// Softmax backward for one normalized block: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
fn softmax_block_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yy), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d = yy * (g - inner);
    }
}

/// Gradients `(dQ, dK, dV)` given the upstream gradient of the output.
pub(crate) fn backward_parts(parts: &AttentionParts, v: &Mat, heads: usize, d_out: &Mat) -> (Mat, Mat, Mat) {
    let dk = parts.q_soft.cols() / heads;
    let dv = v.cols() / heads;
    let n = parts.q_soft.rows();
    let m = parts.k_soft.rows();
    let mut d_qs = Mat::zeros(n, parts.q_soft.cols());
    let mut d_ks = Mat::zeros(m, parts.k_soft.cols());
    let mut d_v = Mat::zeros(m, v.cols());
    for h in 0..heads {
        let ctx = &parts.context[h];
        let doh = d_out.cols_range(h * dv, dv);
        let qh = parts.q_soft.cols_range(h * dk, dk);
        let kh = parts.k_soft.cols_range(h * dk, dk);
        let vh = v.cols_range(h * dv, dv);
        let d_qh = doh.matmul_t(ctx);
        let d_ctx = qh.t_matmul(&doh);
        let d_kh = vh.matmul_t(&d_ctx);
        let d_vh = kh.matmul(&d_ctx);
        for i in 0..n {
            d_qs.row_mut(i)[h * dk..(h + 1) * dk].copy_from_slice(d_qh.row(i));
        }
        for i in 0..m {
            d_ks.row_mut(i)[h * dk..(h + 1) * dk].copy_from_slice(d_kh.row(i));
            d_v.row_mut(i)[h * dv..(h + 1) * dv].copy_from_slice(d_vh.row(i));
        }
    }
    let mut d_q = Mat::zeros(n, parts.q_soft.cols());
    for i in 0..n {
        for b in 0..heads {
            let r = b * dk..(b + 1) * dk;
            let y = &parts.q_soft.row(i)[r.clone()];
            let g = &d_qs.row(i)[r.clone()];
            let mut tmp = vec![0.0; dk];
            softmax_block_backward(y, g, &mut tmp);
            d_q.row_mut(i)[r].copy_from_slice(&tmp);
        }
    }
    let kt = parts.k_soft.transpose();
    let dkt = d_ks.transpose();
    let mut d_k_t = Mat::zeros(kt.rows(), kt.cols());
    for j in 0..kt.rows() {
        let mut tmp = vec![0.0; m];
        softmax_block_backward(kt.row(j), dkt.row(j), &mut tmp);
        d_k_t.row_mut(j).copy_from_slice(&tmp);
    }
    (d_q, d_k_t.transpose(), d_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Quadratic reference: materialize `ρ_q(Q) ρ_k(K)ᵀ` then multiply by V,
    /// with the softmaxes written out longhand.
    fn naive(q: &Mat, k: &Mat, v: &Mat) -> Mat {
        let (n, m, dk) = (q.rows(), k.rows(), q.cols());
        let qs = Mat::from_fn(n, dk, |i, j| {
            let z: f64 = (0..dk).map(|c| q[(i, c)].exp()).sum();
            q[(i, j)].exp() / z
        });
        let ks = Mat::from_fn(m, dk, |i, j| {
            let z: f64 = (0..m).map(|r| k[(r, j)].exp()).sum();
            k[(i, j)].exp() / z
        });
        let scores = Mat::from_fn(n, m, |i, r| (0..dk).map(|c| qs[(i, c)] * ks[(r, c)]).sum());
        Mat::from_fn(n, v.cols(), |i, j| (0..m).map(|r| scores[(i, r)] * v[(r, j)]).sum())
    }

    fn rel_err(a: &Mat, b: &Mat) -> f64 {
        a.sub(b).max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn single_token_returns_value_row() {
        let q = Mat::row_vector(&[0.3, -1.0, 2.0]);
        let k = Mat::row_vector(&[1.0, 4.0, -3.0]);
        let v = Mat::row_vector(&[5.0, -6.0]);
        let out = efficient_attention(&q, &k, &v).unwrap();
        assert!(out.sub(&v).max_abs() < 1e-12);
    }

    #[test]
    fn matches_naive_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Mat::randn(8, 4, &mut rng);
        let k = Mat::randn(8, 4, &mut rng);
        let v = Mat::randn(8, 4, &mut rng);
        let out = efficient_attention(&q, &k, &v).unwrap();
        assert!(rel_err(&out, &naive(&q, &k, &v)) < 1e-6);
    }

    #[test]
    fn constant_keys_give_uniform_pooling() {
        // ρ_k(K) is 1/m everywhere, so every output row is the mean value row
        // (the query softmax rows sum to one).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Mat::randn(5, 3, &mut rng);
        let k = Mat::filled(5, 3, 0.7);
        let v = Mat::randn(5, 2, &mut rng);
        let mean = v.col_sums().scale(1.0 / 5.0);
        let out = efficient_attention(&q, &k, &v).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                assert!((out[(i, j)] - mean[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = Mat::zeros(3, 4);
        assert!(efficient_attention(&a, &Mat::zeros(3, 5), &a).is_err());
        assert!(efficient_attention(&a, &a, &Mat::zeros(2, 4)).is_err());
        assert!(efficient_attention_heads(&a, &a, &a, 3).is_err());
    }

    #[test]
    fn multi_head_is_blockwise_single_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Mat::randn(6, 8, &mut rng);
        let k = Mat::randn(7, 8, &mut rng);
        let v = Mat::randn(7, 4, &mut rng);
        let out = efficient_attention_heads(&q, &k, &v, 2).unwrap();
        for h in 0..2 {
            let oh = naive(&q.cols_range(h * 4, 4), &k.cols_range(h * 4, 4), &v.cols_range(h * 2, 2));
            assert!(rel_err(&out.cols_range(h * 2, 2), &oh) < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn equivalence_over_small_shapes(
            n in 1usize..=16, m in 1usize..=16, dk in 1usize..=6, dv in 1usize..=6, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Mat::randn(n, dk, &mut rng);
            let k = Mat::randn(m, dk, &mut rng);
            let v = Mat::randn(m, dv, &mut rng);
            let out = efficient_attention(&q, &k, &v).unwrap();
            prop_assert!(rel_err(&out, &naive(&q, &k, &v)) < 1e-6);
        }
    }
}
