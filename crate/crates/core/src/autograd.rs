//! A small reverse-mode tape over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep
//! accumulates every gradient. Parameters enter as [`Op::Param`] leaves and
//! their gradients are returned indexed by parameter slot.

use crate::denoiser::attention::{self, AttentionParts};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, parts: AttentionParts },
    HCat(Var, Var),
    FirstRow(Var),
    /// Broadcast a `1 × d` row to `n` rows.
    Repeat(Var),
    /// Mean squared error against a constant target; yields `1 × 1`.
    Mse { x: Var, target: Mat },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, slot: usize, value: &Mat) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// `x + row` with `row` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        let mut v = self.value(x).clone();
        for i in 0..v.rows() {
            for (a, b) in v.row_mut(i).iter_mut().zip(r.as_slice()) {
                *a += b;
            }
        }
        self.push(v, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x))
    }

    /// Per-row layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let mut xhat = Mat::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut out = xhat.clone();
        for i in 0..n {
            for ((o, gg), bb) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let parts = attention::forward_parts(self.value(q), self.value(k), self.value(v), heads);
        let out = parts.out.clone();
        self.push(out, Op::Attention { q, k, v, heads, parts })
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hcat(self.value(b));
        self.push(v, Op::HCat(a, b))
    }

    pub fn first_row(&mut self, x: Var) -> Var {
        let v = self.value(x).row_mat(0);
        self.push(v, Op::FirstRow(x))
    }

    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        let v = Mat::from_fn(n, r.cols(), |_, j| r[(0, j)]);
        self.push(v, Op::Repeat(row))
    }

    pub fn mse(&mut self, x: Var, target: &Mat) -> Var {
        let xv = self.value(x);
        assert!(xv.same_shape(target), "mse target shape");
        let v = xv.sub(target).sum_sq() / xv.len() as f64;
        self.push(Mat::filled(1, 1, v), Op::Mse { x, target: target.clone() })
    }

    /// Gradients of the scalar `loss` with respect to every parameter slot
    /// in `0..n_slots`. Slots that did not contribute come back as `None`.
    pub fn backward(&self, loss: Var, n_slots: usize) -> Vec<Option<Mat>> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut slots: Vec<Option<Mat>> = (0..n_slots).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(slot) => match &mut slots[*slot] {
                    Some(existing) => existing.add_assign(&g),
                    s @ None => *s = Some(g),
                },
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.matmul_t(bv));
                    acc(&mut grads, *b, av.t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    acc(&mut grads, *row, g.col_sums());
                    acc(&mut grads, *x, g);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.scale(*s)),
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &xx) in d.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        *dv *= gelu_grad(xx);
                    }
                    acc(&mut grads, *x, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain).as_slice();
                    let (n, d) = xhat.shape();
                    let mut d_gain = Mat::zeros(1, d);
                    let mut d_x = Mat::zeros(n, d);
                    for i in 0..n {
                        let gr = g.row(i);
                        let xh = xhat.row(i);
                        let mut dxhat = vec![0.0; d];
                        for j in 0..d {
                            d_gain.as_mut_slice()[j] += gr[j] * xh[j];
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (j, o) in d_x.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(&mut grads, *bias, g.col_sums());
                    acc(&mut grads, *gain, d_gain);
                    acc(&mut grads, *x, d_x);
                }
                Op::Attention { q, k, v, heads, parts } => {
                    let (dq, dk, dv) = attention::backward_parts(parts, self.value(*v), *heads, &g);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::HCat(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    acc(&mut grads, *a, g.cols_range(0, ca));
                    acc(&mut grads, *b, g.cols_range(ca, cb));
                }
                Op::FirstRow(x) => {
                    let (n, d) = self.value(*x).shape();
                    let mut full = Mat::zeros(n, d);
                    full.row_mut(0).copy_from_slice(g.as_slice());
                    acc(&mut grads, *x, full);
                }
                Op::Repeat(row) => acc(&mut grads, *row, g.col_sums()),
                Op::Mse { x, target } => {
                    let xv = self.value(*x);
                    let s = 2.0 * g[(0, 0)] / xv.len() as f64;
                    acc(&mut grads, *x, xv.lincomb(s, target, -s));
                }
            }
        }
        slots
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference check of every op on a small composite graph.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: Vec<Mat> = vec![
            Mat::randn(3, 4, &mut rng),             // x
            Mat::randn(4, 4, &mut rng),             // w
            Mat::randn(1, 4, &mut rng),             // bias row
            Mat::randn(1, 4, &mut rng).map(|v| 1.0 + 0.1 * v), // gain
            Mat::randn(1, 4, &mut rng),             // ln bias
            Mat::randn(1, 4, &mut rng),             // token
        ];
        let target = Mat::randn(3, 8, &mut rng);
        let eval = |ps: &[Mat]| -> (f64, Vec<Option<Mat>>) {
            let mut tape = Tape::new();
            let v: Vec<Var> = ps.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
            let h = tape.matmul(v[0], v[1]);
            let h = tape.add_row(h, v[2]);
            let h = tape.layer_norm(h, v[3], v[4]);
            let g = tape.gelu(h);
            let a = tape.attention(g, h, g, 2);
            let r = tape.repeat_rows(v[5], 3);
            let s = tape.add(a, r);
            let s = tape.scale(s, 1.5);
            let c = tape.hcat(s, g);
            let l1 = tape.mse(c, &target);
            let f = tape.first_row(c);
            let l2 = tape.mse(f, &target.row_mat(0));
            let l = tape.add(l1, l2);
            (tape.value(l)[(0, 0)], tape.backward(l, ps.len()))
        };
        let (_, grads) = eval(&params);
        let h = 1e-5;
        for (slot, p) in params.iter().enumerate() {
            let g = grads[slot].as_ref().expect("every slot contributes");
            for e in 0..p.len() {
                let mut plus = params.clone();
                plus[slot].as_mut_slice()[e] += h;
                let mut minus = params.clone();
                minus[slot].as_mut_slice()[e] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g.as_slice()[e];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "slot {slot} entry {e}: {fd} vs {an}");
            }
        }
    }
}
