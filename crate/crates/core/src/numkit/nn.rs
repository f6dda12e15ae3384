//! Forward and backward kernels for the fixed layer types used by the toy
//! encoder, denoiser and adapters. Every backward accumulates parameter
//! gradients into caller-provided buffers and returns the input gradient.

use crate::numkit::tensor::{gemm_into, matmul, Op};
use crate::numkit::{softmax_in_place, Real, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `y = x W (+ b)` for `x: n x i`, `W: i x o`, `b: o`.
pub fn linear<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: Option<&Tensor<R>>) -> Tensor<R> {
    let mut y = matmul(x, Op::N, w, Op::N);
    if let Some(b) = b {
        for i in 0..y.rows() {
            for (v, &bb) in y.row_mut(i).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dx = dy W^T`.
pub fn linear_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    dy: &Tensor<R>,
    dw: &mut Tensor<R>,
    db: Option<&mut Tensor<R>>,
) -> Tensor<R> {
    gemm_into(x, Op::T, dy, Op::N, dw, R::one());
    if let Some(db) = db {
        for i in 0..dy.rows() {
            for (g, &d) in db.data_mut().iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
    }
    matmul(dy, Op::N, w, Op::T)
}

/// Same as [`linear_backward`] without the input gradient.
pub fn linear_backward_params<R: Real>(
    x: &Tensor<R>,
    dy: &Tensor<R>,
    dw: &mut Tensor<R>,
    db: Option<&mut Tensor<R>>,
) {
    gemm_into(x, Op::T, dy, Op::N, dw, R::one());
    if let Some(db) = db {
        for i in 0..dy.rows() {
            for (g, &d) in db.data_mut().iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<R> {
    pub xhat: Tensor<R>,
    pub rstd: Vec<R>,
}

/// Row-wise layer normalization with affine `gamma`, `beta`.
pub fn layer_norm<R: Real>(
    x: &Tensor<R>,
    gamma: &Tensor<R>,
    beta: &Tensor<R>,
) -> (Tensor<R>, LayerNormCache<R>) {
    let (n, d) = (x.rows(), x.cols());
    let inv_d = R::of(1.0 / d as f64);
    let eps = R::of(LN_EPS);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut y = Tensor::zeros(&[n, d]);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<R>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() * inv_d;
        let r = R::one() / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let yr = y.row_mut(i);
        for k in 0..d {
            yr[k] = xhat.data()[i * d + k] * gamma.data()[k] + beta.data()[k];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward<R: Real>(
    cache: &LayerNormCache<R>,
    gamma: &Tensor<R>,
    dy: &Tensor<R>,
    dgamma: &mut Tensor<R>,
    dbeta: &mut Tensor<R>,
) -> Tensor<R> {
    let (n, d) = (dy.rows(), dy.cols());
    let inv_d = R::of(1.0 / d as f64);
    let mut dx = Tensor::zeros(&[n, d]);
    let mut dxhat = vec![R::zero(); d];
    for i in 0..n {
        let xh = cache.xhat.row(i);
        let dyr = dy.row(i);
        for k in 0..d {
            dgamma.data_mut()[k] += dyr[k] * xh[k];
            dbeta.data_mut()[k] += dyr[k];
            dxhat[k] = dyr[k] * gamma.data()[k];
        }
        let mean_d = dxhat.iter().copied().sum::<R>() * inv_d;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<R>() * inv_d;
        let r = cache.rstd[i];
        for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let c = R::of(GELU_C);
    let a = R::of(GELU_A);
    let half = R::of(0.5);
    let data = x
        .data()
        .iter()
        .map(|&v| half * v * (R::one() + (c * (v + a * v * v * v)).tanh()))
        .collect();
    Tensor::from_vec(x.dims(), data)
}

pub fn gelu_backward<R: Real>(x: &Tensor<R>, dy: &Tensor<R>) -> Tensor<R> {
    let c = R::of(GELU_C);
    let a = R::of(GELU_A);
    let half = R::of(0.5);
    let three = R::of(3.0);
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let th = (c * (v + a * v * v * v)).tanh();
            let dth = (R::one() - th * th) * c * (R::one() + three * a * v * v);
            g * (half * (R::one() + th) + half * v * dth)
        })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

/// Options for [`attention`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AttnMask<'a, R> {
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
    /// Additive logit offsets `n x m`, shared by every head.
    pub bias: Option<&'a Tensor<R>>,
}

/// Multi-head scaled dot-product attention over pre-projected `q: n x D`,
/// `k, v: m x D`, heads splitting `D` into contiguous column blocks.
///
/// Returns the concatenated head outputs (`n x D`) and per-head weights.
pub fn attention<R: Real>(
    q: &Tensor<R>,
    k: &Tensor<R>,
    v: &Tensor<R>,
    heads: usize,
    mask: AttnMask<'_, R>,
) -> (Tensor<R>, Vec<Tensor<R>>) {
    let (n, dm) = (q.rows(), q.cols());
    let m = k.rows();
    let dh = dm / heads;
    let scale = R::of(1.0 / (dh as f64).sqrt());
    let mut out = Tensor::zeros(&[n, dm]);
    let mut probs = Vec::with_capacity(heads);
    let mut logits = vec![R::zero(); m];
    for h in 0..heads {
        let off = h * dh;
        let mut p = Tensor::zeros(&[n, m]);
        for i in 0..n {
            let qi = &q.row(i)[off..off + dh];
            let visible = if mask.causal { i + 1 } else { m };
            for (j, l) in logits.iter_mut().enumerate().take(visible) {
                let kj = &k.row(j)[off..off + dh];
                let mut s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<R>() * scale;
                if let Some(bias) = mask.bias {
                    s += bias.at(i, j);
                }
                *l = s;
            }
            softmax_in_place(&mut logits[..visible]);
            let prow = p.row_mut(i);
            prow[..visible].copy_from_slice(&logits[..visible]);
            let orow = &mut out.row_mut(i)[off..off + dh];
            for (j, &w) in logits[..visible].iter().enumerate() {
                let vj = &v.row(j)[off..off + dh];
                for (o, &x) in orow.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
        probs.push(p);
    }
    (out, probs)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
pub fn attention_backward<R: Real>(
    q: &Tensor<R>,
    k: &Tensor<R>,
    v: &Tensor<R>,
    probs: &[Tensor<R>],
    dout: &Tensor<R>,
) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let heads = probs.len();
    let (n, dm) = (q.rows(), q.cols());
    let m = k.rows();
    let dh = dm / heads;
    let scale = R::of(1.0 / (dh as f64).sqrt());
    let mut dq = Tensor::zeros(&[n, dm]);
    let mut dk = Tensor::zeros(&[m, dm]);
    let mut dv = Tensor::zeros(&[m, dm]);
    let mut dp = vec![R::zero(); m];
    for (h, p) in probs.iter().enumerate() {
        let off = h * dh;
        for i in 0..n {
            let doi = &dout.row(i)[off..off + dh];
            let prow = p.row(i);
            let mut weighted = R::zero();
            for j in 0..m {
                let pij = prow[j];
                if pij == R::zero() {
                    dp[j] = R::zero();
                    continue;
                }
                let vj = &v.row(j)[off..off + dh];
                let g = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<R>();
                dp[j] = g;
                weighted += g * pij;
                let dvj = &mut dv.row_mut(j)[off..off + dh];
                for (d, &o) in dvj.iter_mut().zip(doi) {
                    *d += pij * o;
                }
            }
            let qi: Vec<R> = q.row(i)[off..off + dh].to_vec();
            for j in 0..m {
                let pij = prow[j];
                if pij == R::zero() {
                    continue;
                }
                let dl = pij * (dp[j] - weighted) * scale;
                let kj = &k.row(j)[off..off + dh];
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                for (d, &x) in dqi.iter_mut().zip(kj) {
                    *d += dl * x;
                }
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                for (d, &x) in dkj.iter_mut().zip(&qi) {
                    *d += dl * x;
                }
            }
        }
    }
    (dq, dk, dv)
}
