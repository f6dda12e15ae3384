//! Token-wise (CLP) and window-based (WiCLP) linear adapters on encoder
//! outputs, both with a skip connection:
//! `c'_i = c_i + W^T concat(c_{i-s}, ..., c_{i+s}) + b`, zero-padded at the
//! sequence ends. CLP is the `s = 0` case.

use crate::error::{Error, Result};
use crate::numkit::{gemm_into, matmul, Op, ParamSet, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    Clp,
    Wiclp,
}

impl ProjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clp => "clp",
            Self::Wiclp => "wiclp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Clp => "CLP",
            Self::Wiclp => "WiCLP",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clp" => Ok(Self::Clp),
            "wiclp" => Ok(Self::Wiclp),
            _ => Err(Error::Config(format!("unknown projection kind {s:?}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Clp => 0,
            Self::Wiclp => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Clp),
            1 => Ok(Self::Wiclp),
            _ => Err(Error::Format(format!("projection kind code {code}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams<R = f32> {
    pub kind: ProjectionKind,
    /// Window radius; always 0 for CLP.
    pub s: usize,
    /// `(2s+1)d x d`; block `k` (rows `k*d..(k+1)*d`) acts on `c_{i-s+k}`.
    pub w: Tensor<R>,
    pub b: Tensor<R>,
}

pub const DEFAULT_WINDOW_RADIUS: usize = 2;

impl<R: Real> ProjectionParams<R> {
    /// Zero-initialized (identity) adapter for width `d`.
    pub fn zeros(kind: ProjectionKind, s: usize, d: usize) -> Result<Self> {
        if kind == ProjectionKind::Clp && s != 0 {
            return Err(Error::Config(format!("CLP has window radius 0, got {s}")));
        }
        if d == 0 {
            return Err(Error::Config("projection width must be positive".into()));
        }
        Ok(Self {
            kind,
            s,
            w: Tensor::zeros(&[(2 * s + 1) * d, d]),
            b: Tensor::zeros(&[d]),
        })
    }

    pub fn clp(d: usize) -> Self {
        Self::zeros(ProjectionKind::Clp, 0, d).expect("valid CLP shape")
    }

    pub fn wiclp(s: usize, d: usize) -> Self {
        Self::zeros(ProjectionKind::Wiclp, s, d).expect("valid WiCLP shape")
    }

    pub fn width(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        if self.kind == ProjectionKind::Clp && self.s != 0 {
            return Err(Error::Config(format!("CLP has window radius 0, got {}", self.s)));
        }
        if self.w.dims() != [(2 * self.s + 1) * d, d] || self.b.dims() != [d] {
            return Err(Error::Shape(format!(
                "projection W {:?} / b {:?} inconsistent with s={} d={d}",
                self.w.dims(),
                self.b.dims(),
                self.s
            )));
        }
        Ok(())
    }

    pub fn cast<S: Real>(&self) -> ProjectionParams<S> {
        ProjectionParams {
            kind: self.kind,
            s: self.s,
            w: self.w.cast(),
            b: self.b.cast(),
        }
    }

    /// Applies the adapter regardless of kind.
    pub fn apply(&self, c: &Tensor<R>) -> Result<Tensor<R>> {
        self.validate()?;
        check_width(c, self.width())?;
        Ok(apply_window(c, &self.w, &self.b, self.s))
    }
}

impl<R: Real> ParamSet<R> for ProjectionParams<R> {
    fn named(&self) -> Vec<(String, &Tensor<R>)> {
        vec![("proj.W".into(), &self.w), ("proj.b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        vec![&mut self.w, &mut self.b]
    }
}

fn check_width<R: Real>(c: &Tensor<R>, d: usize) -> Result<()> {
    if c.dims().len() != 2 || c.cols() != d {
        return Err(Error::Shape(format!("embeddings {:?} do not have width {d}", c.dims())));
    }
    Ok(())
}

/// Rows of `concat(c_{i-s}, ..., c_{i+s})` with zero padding.
fn windows<R: Real>(c: &Tensor<R>, s: usize) -> Tensor<R> {
    let (n, d) = (c.rows(), c.cols());
    let mut x = Tensor::zeros(&[n, (2 * s + 1) * d]);
    for i in 0..n {
        for k in 0..=2 * s {
            let j = i as isize + k as isize - s as isize;
            if (0..n as isize).contains(&j) {
                x.row_mut(i)[k * d..(k + 1) * d].copy_from_slice(c.row(j as usize));
            }
        }
    }
    x
}

fn apply_window<R: Real>(c: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>, s: usize) -> Tensor<R> {
    let delta = matmul(&windows(c, s), Op::N, w, Op::N);
    let mut out = c.clone();
    for i in 0..c.rows() {
        for ((o, &dv), &bv) in out.row_mut(i).iter_mut().zip(delta.row(i)).zip(b.data()) {
            let add = dv + bv;
            // Adding an exact zero could flip the sign of a -0.0 input.
            if add != R::zero() {
                *o += add;
            }
        }
    }
    out
}

/// `c'_i = c_i + W^T c_i + b`.
pub fn clp_apply<R: Real>(c: &Tensor<R>, params: &ProjectionParams<R>) -> Result<Tensor<R>> {
    if params.kind != ProjectionKind::Clp {
        return Err(Error::Config("clp_apply needs a CLP projection".into()));
    }
    params.apply(c)
}

/// `c'_i = c_i + W^T concat(c_{i-s}..c_{i+s}) + b` with zero padding.
pub fn wiclp_apply<R: Real>(c: &Tensor<R>, params: &ProjectionParams<R>) -> Result<Tensor<R>> {
    if params.kind != ProjectionKind::Wiclp {
        return Err(Error::Config("wiclp_apply needs a WiCLP projection".into()));
    }
    params.apply(c)
}

/// Accumulates `dW`, `db` into `grads` and returns the gradient with respect
/// to the adapter input.
pub fn projection_backward<R: Real>(
    params: &ProjectionParams<R>,
    c: &Tensor<R>,
    dout: &Tensor<R>,
    grads: &mut ProjectionParams<R>,
) -> Tensor<R> {
    let (n, d, s) = (c.rows(), c.cols(), params.s);
    gemm_into(&windows(c, s), Op::T, dout, Op::N, &mut grads.w, R::one());
    for i in 0..n {
        for (g, &v) in grads.b.data_mut().iter_mut().zip(dout.row(i)) {
            *g += v;
        }
    }
    let dx = matmul(dout, Op::N, &params.w, Op::T);
    let mut dc = dout.clone();
    for i in 0..n {
        for k in 0..=2 * s {
            let j = i as isize + k as isize - s as isize;
            if (0..n as isize).contains(&j) {
                let src = &dx.row(i)[k * d..(k + 1) * d];
                for (o, &v) in dc.row_mut(j as usize).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
    }
    dc
}
