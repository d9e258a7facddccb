use std::sync::Arc;

use crate::error::{Error, Result};

use super::{ParamVector, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A linear operator usable inside a differentiable computation. Its
/// vector-Jacobian product is the adjoint.
pub trait LinearMap: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
}

enum Op {
    Constant,
    Param {
        offset: usize,
    },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        cols: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Linear {
        x: Var,
        map: Arc<dyn LinearMap>,
    },
    SumSquares {
        x: Var,
    },
    Opaque {
        name: String,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list over a borrowed parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(
            context,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// Builds the replicate-padded patch matrix `[cin*k*k, h*w]`.
fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let [cin, h, w] = x.shape();
    let pad = (k / 2) as isize;
    let hw = h * w;
    let src = x.data();
    let mut cols = vec![0.0; cin * k * k * hw];
    for ci in 0..cin {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (lo, hi, dx) = interior(w, kx as isize - pad);
                for y in 0..h {
                    let sy = clamp(y as isize + ky as isize - pad, h);
                    let srow = &plane[sy * w..(sy + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    for (xx, d) in drow.iter_mut().enumerate().take(lo) {
                        *d = srow[clamp(xx as isize + dx, w)];
                    }
                    if lo < hi {
                        drow[lo..hi].copy_from_slice(
                            &srow[(lo as isize + dx) as usize..(hi as isize + dx) as usize],
                        );
                    }
                    for (xx, d) in drow.iter_mut().enumerate().skip(hi.max(lo)) {
                        *d = srow[clamp(xx as isize + dx, w)];
                    }
                }
            }
        }
    }
    cols
}

fn clamp(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Range `lo..hi` of output columns whose shifted source column `x + dx`
/// lies inside `0..w` (empty when the shift exceeds the width).
fn interior(w: usize, dx: isize) -> (usize, usize, isize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx.max(0)).max(0) as usize;
    (lo.min(w), hi, dx)
}

/// Scatter-adds a patch-matrix gradient back onto the input grid.
fn col2im(dcols: &[f64], shape: [usize; 3], k: usize, dx: &mut [f64]) {
    let [cin, h, w] = shape;
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &dcols[row * hw..(row + 1) * hw];
                let (lo, hi, shift) = interior(w, kx as isize - pad);
                for y in 0..h {
                    let sy = clamp(y as isize + ky as isize - pad, h);
                    let srow = &src[y * w..(y + 1) * w];
                    let prow = &mut plane[sy * w..(sy + 1) * w];
                    for (xx, v) in srow.iter().enumerate().take(lo) {
                        prow[clamp(xx as isize + shift, w)] += v;
                    }
                    if lo < hi {
                        let dst = &mut prow
                            [(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        for (d, v) in dst.iter_mut().zip(&srow[lo..hi]) {
                            *d += v;
                        }
                    }
                    for (xx, v) in srow.iter().enumerate().skip(hi.max(lo)) {
                        prow[clamp(xx as isize + shift, w)] += v;
                    }
                }
            }
        }
    }
}

/// `c = a(m x k) * b(k x n) + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices covering every index reachable through
    // the given dimensions and strides; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Self {
            params: params.as_slice(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf viewing `params[offset..offset + prod(shape)]`.
    pub fn param(&mut self, offset: usize, shape: [usize; 3]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let slice = self
            .params
            .get(offset..offset + len)
            .ok_or_else(|| Error::mismatch("Tape::param", offset + len, self.params.len()))?;
        let value = Tensor::new(shape, slice.to_vec())?;
        Ok(self.push(value, Op::Param { offset }, true))
    }

    /// Same-size 2D convolution with replicate padding. `weight` has shape
    /// `[cout, cin, k*k]`, `bias` `[cout, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let [cin, h, w] = self.value(x).shape();
        let [cout, wcin, kk] = self.value(weight).shape();
        let k = (kk as f64).sqrt().round() as usize;
        if k * k != kk || k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel must be odd and square, got {kk} taps"
            )));
        }
        if wcin != cin {
            return Err(Error::mismatch("conv2d input channels", wcin, cin));
        }
        if self.value(bias).len() != cout {
            return Err(Error::mismatch("conv2d bias", cout, self.value(bias).len()));
        }
        let hw = h * w;
        let cols = im2col(self.value(x), k);
        let mut out = vec![0.0; cout * hw];
        for (co, b) in self.value(bias).data().iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(*b);
        }
        gemm(
            cout,
            cin * kk,
            hw,
            self.value(weight).data(),
            (cin * kk, 1),
            &cols,
            (hw, 1),
            1.0,
            &mut out,
        );
        let rg = self.grad_of(x) || self.grad_of(weight) || self.grad_of(bias);
        let value = Tensor::new([cout, h, w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                kernel: k,
                cols,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.grad_of(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let [c, h, w] = src.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::mismatch(
                "max_pool2",
                "even spatial size",
                format!("{h}x{w}"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        let d = src.data();
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ci * h * w + 2 * y * w + 2 * xx;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if d[cand] > d[best] {
                            best = cand;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out)?;
        let rg = self.grad_of(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [c, h, w] = src.shape();
        let (oh, ow) = (2 * h, 2 * w);
        let d = src.data();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ci * oh + y) * ow + xx] = d[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out).expect("shape");
        let rg = self.grad_of(x);
        self.push(value, Op::Upsample2 { x }, rg)
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let [ca, h, w] = va.shape();
        let [cb, hb, wb] = vb.shape();
        if (h, w) != (hb, wb) {
            return Err(Error::mismatch(
                "concat",
                format!("{h}x{w}"),
                format!("{hb}x{wb}"),
            ));
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let value = Tensor::new([ca + cb, h, w], data)?;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(src.shape(), data).expect("shape");
        let rg = self.grad_of(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn linear(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let value = map.apply(self.value(x))?;
        let rg = self.grad_of(x);
        Ok(self.push(value, Op::Linear { x, map }, rg))
    }

    /// `||x||^2` as a scalar.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.grad_of(x);
        self.push(Tensor::scalar(s), Op::SumSquares { x }, rg)
    }

    /// Records an arbitrary forward-only function. Back-propagating through it
    /// fails with [`Error::NonDifferentiable`].
    pub fn opaque(
        &mut self,
        x: Var,
        name: &str,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<Var> {
        let value = f(self.value(x))?;
        let rg = self.grad_of(x);
        Ok(self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
            },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`; returns d loss / d params.
    pub fn backward(&self, loss: Var) -> Result<ParamVector> {
        if !self.value(loss).is_scalar() {
            return Err(Error::mismatch(
                "backward",
                "scalar loss",
                format!("{:?}", self.value(loss).shape()),
            ));
        }
        let mut pgrad = vec![0.0; self.params.len()];
        if !self.nodes[loss.0].requires_grad {
            return ParamVector::new(pgrad);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (p, v) in pgrad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *p += v;
                    }
                }
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    kernel,
                    cols,
                } => {
                    let xshape = self.value(*x).shape();
                    let [cin, h, w] = xshape;
                    let hw = h * w;
                    let cout = node.value.channels();
                    let ckk = cin * kernel * kernel;
                    if self.grad_of(*weight) {
                        let mut dw = vec![0.0; cout * ckk];
                        gemm(cout, hw, ckk, &g, (hw, 1), cols, (1, hw), 0.0, &mut dw);
                        acc(&mut grads, *weight, dw);
                    }
                    if self.grad_of(*bias) {
                        let db = g.chunks(hw).map(|c| c.iter().sum()).collect();
                        acc(&mut grads, *bias, db);
                    }
                    if self.grad_of(*x) {
                        let mut dcols = vec![0.0; ckk * hw];
                        let wdata = self.value(*weight).data();
                        gemm(ckk, cout, hw, wdata, (1, ckk), &g, (hw, 1), 0.0, &mut dcols);
                        let mut dx = vec![0.0; cin * hw];
                        col2im(&dcols, xshape, *kernel, &mut dx);
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] += gv;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Upsample2 { x } => {
                    let [c, h, w] = self.value(*x).shape();
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; c * h * w];
                    for ci in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[(ci * h + y / 2) * w + xx / 2] += g[(ci * oh + y) * ow + xx];
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    if self.grad_of(*a) {
                        acc(&mut grads, *a, g[..na].to_vec());
                    }
                    if self.grad_of(*b) {
                        acc(&mut grads, *b, g[na..].to_vec());
                    }
                }
                Op::Add { a, b } => {
                    if self.grad_of(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.grad_of(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub { a, b } => {
                    if self.grad_of(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.grad_of(*b) {
                        acc(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Affine { x, scale } => {
                    acc(&mut grads, *x, g.iter().map(|v| scale * v).collect());
                }
                Op::Linear { x, map } => {
                    let gt = Tensor::new(node.value.shape(), g)?;
                    let dx = map.adjoint(&gt)?;
                    same_shape("linear map adjoint", self.value(*x), &dx)?;
                    acc(&mut grads, *x, dx.into_data());
                }
                Op::SumSquares { x } => {
                    let s = 2.0 * g[0];
                    acc(
                        &mut grads,
                        *x,
                        self.value(*x).data().iter().map(|v| s * v).collect(),
                    );
                }
                Op::Opaque { name } => {
                    return Err(Error::NonDifferentiable(name.clone()));
                }
            }
        }
        ParamVector::new(pgrad)
    }
}

/// Evaluates a scalar loss built by `closure` and its gradient with respect to
/// `params`.
pub fn loss_grad<F>(params: &ParamVector, closure: F) -> Result<(f64, ParamVector)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = closure(&mut tape)?;
    let value = tape.value(loss);
    if !value.is_scalar() {
        return Err(Error::mismatch(
            "loss_grad",
            "scalar loss",
            format!("{:?}", value.shape()),
        ));
    }
    let l = value.data()[0];
    if !l.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    let grad = tape.backward(loss)?;
    Ok((l, grad))
}
