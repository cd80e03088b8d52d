use crate::deformation::sampling::{warp_backward, warp_forward};
use crate::error::{Error, Result};

use super::conv::{conv3d_backward, conv3d_forward, conv_transpose3d_backward, conv_transpose3d_forward};
use super::filter::box_mean;
use super::lncc::{lncc_backward, lncc_mean};
use super::tensor::dims5;
use super::{NdArray, ParamId, ParamStore, Scalar};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    BoxMean(Var, usize),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose3d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Concat(Vec<Var>),
    Warp {
        src: Var,
        field: Var,
    },
    Lncc {
        x: Var,
        y: Var,
        window: usize,
        eps: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(_) => "abs",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BoxMean(..) => "mean_over_window",
            Op::Conv3d { .. } => "conv3d",
            Op::ConvTranspose3d { .. } => "conv3d_transpose",
            Op::Concat(_) => "concat",
            Op::Warp { .. } => "warp",
            Op::Lncc { .. } => "lncc",
        }
    }
}

struct Node<T> {
    value: NdArray<T>,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph recorded as a tape.
///
/// Nodes are appended in evaluation order, so the tape order is a
/// topological order and `backward` walks it in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<NdArray<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&NdArray<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn same_shape<T: Scalar>(op: &str, a: &NdArray<T>, b: &NdArray<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: operands {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &NdArray<T>, b: &NdArray<T>, f: impl Fn(T, T) -> T) -> NdArray<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    NdArray::from_vec(a.shape(), data).expect("zip_map shapes agree")
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: NdArray<T>, op: Op) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::Diverged(format!("non-finite output of {}", op.name())));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Abs(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::BoxMean(a, _) => self.requires_grad(*a),
            Op::Conv3d { input, kernel, bias, .. } | Op::ConvTranspose3d { input, kernel, bias, .. } => {
                self.requires_grad(*input) || self.requires_grad(*kernel) || self.requires_grad(*bias)
            }
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Warp { src, field } => self.requires_grad(*src) || self.requires_grad(*field),
            Op::Lncc { x, y, .. } => self.requires_grad(*x) || self.requires_grad(*y),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`] when
    /// `requires_grad` is set.
    pub fn input(&mut self, value: NdArray<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Snapshot of a parameter; gradients flow back into the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let c = T::from_f64_lossy(factor);
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let c = T::from_f64_lossy(offset);
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64_lossy(slope);
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * s });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Empty("sum of empty array".into()));
        }
        let v = NdArray::scalar(T::from_f64_lossy(x.sum_f64()));
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Empty("mean of empty array".into()));
        }
        let v = NdArray::scalar(T::from_f64_lossy(x.sum_f64() / x.len() as f64));
        self.push(v, Op::Mean(a))
    }

    /// Zero-padded `window^3` box mean over the three trailing axes.
    pub fn mean_over_window(&mut self, a: Var, window: usize) -> Result<Var> {
        if window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("window must be odd, got {window}")));
        }
        let x = self.value(a);
        let dims = trailing3(x.shape())?;
        if x.is_empty() {
            return Err(Error::Empty("window mean of empty array".into()));
        }
        let v = NdArray::from_vec(x.shape(), box_mean(x.data(), dims, window))?;
        self.push(v, Op::BoxMean(a, window))
    }

    /// Strided, zero-padded 3-D cross-correlation.
    /// `input [N, C, D, H, W]`, `kernel [F, C, k, k, k]`, `bias [F]`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = conv3d_forward(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        self.push(
            v,
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        )
    }

    /// Adjoint of [`Graph::conv3d`] with the same kernel layout: maps `F`
    /// channels back to `C`. `bias [C]`.
    pub fn conv3d_transpose(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = conv_transpose3d_forward(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        self.push(
            v,
            Op::ConvTranspose3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        )
    }

    /// Concatenation along the channel axis of 5-D arrays.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Empty("concat of nothing".into()))?;
        let (n, _, spatial) = dims5(self.value(*first).shape())?;
        let mut total = 0;
        for p in parts {
            let (pn, pc, ps) = dims5(self.value(*p).shape())?;
            if pn != n || ps != spatial {
                return Err(Error::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    self.value(*p).shape(),
                    self.value(*first).shape()
                )));
            }
            total += pc;
        }
        let vox: usize = spatial.iter().product();
        let mut data = Vec::with_capacity(n * total * vox);
        for s in 0..n {
            for p in parts {
                let x = self.value(*p);
                let c = x.shape()[1];
                data.extend_from_slice(&x.data()[s * c * vox..(s + 1) * c * vox]);
            }
        }
        let v = NdArray::from_vec(&[n, total, spatial[0], spatial[1], spatial[2]], data)?;
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Pull-warp `src [N, C, D, H, W]` by `field [N, 3, D, H, W]` (voxel
    /// displacements): `out(p) = src(p + u(p))`, trilinear, clamp-to-border.
    pub fn warp(&mut self, src: Var, field: Var) -> Result<Var> {
        let (n, c, dims) = dims5(self.value(src).shape())?;
        let (fnn, fc, fdims) = dims5(self.value(field).shape())?;
        if fnn != n || fc != 3 || fdims != dims {
            return Err(Error::Shape(format!(
                "warp: field {:?} does not match source {:?}",
                self.value(field).shape(),
                self.value(src).shape()
            )));
        }
        let vox: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n * c * vox);
        for s in 0..n {
            let sv = &self.value(src).data()[s * c * vox..(s + 1) * c * vox];
            let fv = &self.value(field).data()[s * 3 * vox..(s + 1) * 3 * vox];
            data.extend(warp_forward(sv, fv, dims, c));
        }
        let v = NdArray::from_vec(self.value(src).shape(), data)?;
        self.push(v, Op::Warp { src, field })
    }

    /// Mean local normalized cross-correlation of two equally shaped arrays.
    pub fn lncc(&mut self, x: Var, y: Var, window: usize, eps: f64) -> Result<Var> {
        same_shape("lncc", self.value(x), self.value(y))?;
        if window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("lncc window must be odd, got {window}")));
        }
        let dims = trailing3(self.value(x).shape())?;
        let m = lncc_mean(self.value(x).data(), self.value(y).data(), dims, window, eps);
        self.push(NdArray::scalar(T::from_f64_lossy(m)), Op::Lncc { x, y, window, eps })
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// the store's buffers (accumulating across calls); all node gradients
    /// are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<NdArray<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(NdArray::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<NdArray<T>>], v: Var, delta: NdArray<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &NdArray<T>, grads: &mut [Option<NdArray<T>>], store: &mut ParamStore<T>) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = zip_map(g, self.value(*b), |x, y| x * y);
                let db = zip_map(g, self.value(*a), |x, y| x * y);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => {
                let c = T::from_f64_lossy(*c);
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Abs(a) => {
                let d = zip_map(g, self.value(*a), |gx, x| {
                    if x > T::zero() {
                        gx
                    } else if x < T::zero() {
                        -gx
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64_lossy(*slope);
                let d = zip_map(g, self.value(*a), |gx, x| if x > T::zero() { gx } else { gx * s });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, &node.value, |gx, y| gx * y * (T::one() - y));
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, NdArray::full(&shape, g.item()));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gv = T::from_f64_lossy(g.item().as_f64() / x.len() as f64);
                self.accumulate(grads, *a, NdArray::full(x.shape(), gv));
            }
            Op::BoxMean(a, window) => {
                let dims = trailing3(g.shape())?;
                let d = NdArray::from_vec(g.shape(), box_mean(g.data(), dims, *window))?;
                self.accumulate(grads, *a, d);
            }
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let need = [self.requires_grad(*input), self.requires_grad(*kernel), self.requires_grad(*bias)];
                let cg = conv3d_backward(self.value(*input), self.value(*kernel), self.value(*bias), *stride, *padding, g, need)?;
                if let Some(d) = cg.input {
                    self.accumulate(grads, *input, d);
                }
                if let Some(d) = cg.kernel {
                    self.accumulate(grads, *kernel, d);
                }
                if let Some(d) = cg.bias {
                    self.accumulate(grads, *bias, d);
                }
            }
            Op::ConvTranspose3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let need = [self.requires_grad(*input), self.requires_grad(*kernel), self.requires_grad(*bias)];
                let cg = conv_transpose3d_backward(self.value(*input), self.value(*kernel), self.value(*bias), *stride, *padding, g, need)?;
                if let Some(d) = cg.input {
                    self.accumulate(grads, *input, d);
                }
                if let Some(d) = cg.kernel {
                    self.accumulate(grads, *kernel, d);
                }
                if let Some(d) = cg.bias {
                    self.accumulate(grads, *bias, d);
                }
            }
            Op::Concat(parts) => {
                let (n, total, spatial) = dims5(g.shape())?;
                let vox: usize = spatial.iter().product();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).shape()[1];
                    if self.requires_grad(*p) {
                        let mut data = Vec::with_capacity(n * c * vox);
                        for s in 0..n {
                            let start = (s * total + offset) * vox;
                            data.extend_from_slice(&g.data()[start..start + c * vox]);
                        }
                        self.accumulate(grads, *p, NdArray::from_vec(self.value(*p).shape(), data)?);
                    }
                    offset += c;
                }
            }
            Op::Warp { src, field } => {
                let (n, c, dims) = dims5(self.value(*src).shape())?;
                let vox: usize = dims.iter().product();
                let need_src = self.requires_grad(*src);
                let need_field = self.requires_grad(*field);
                let mut dsrc = Vec::with_capacity(if need_src { n * c * vox } else { 0 });
                let mut dfield = Vec::with_capacity(if need_field { n * 3 * vox } else { 0 });
                for s in 0..n {
                    let sv = &self.value(*src).data()[s * c * vox..(s + 1) * c * vox];
                    let fv = &self.value(*field).data()[s * 3 * vox..(s + 1) * 3 * vox];
                    let gv = &g.data()[s * c * vox..(s + 1) * c * vox];
                    let (ds, df) = warp_backward(sv, fv, dims, c, gv, need_src, need_field);
                    if let Some(ds) = ds {
                        dsrc.extend(ds);
                    }
                    if let Some(df) = df {
                        dfield.extend(df);
                    }
                }
                if need_src {
                    self.accumulate(grads, *src, NdArray::from_vec(self.value(*src).shape(), dsrc)?);
                }
                if need_field {
                    self.accumulate(grads, *field, NdArray::from_vec(self.value(*field).shape(), dfield)?);
                }
            }
            Op::Lncc { x, y, window, eps } => {
                let xv = self.value(*x);
                let dims = trailing3(xv.shape())?;
                let (dx, dy) = lncc_backward(xv.data(), self.value(*y).data(), dims, *window, *eps, g.item().as_f64());
                self.accumulate(grads, *x, NdArray::from_vec(xv.shape(), dx)?);
                self.accumulate(grads, *y, NdArray::from_vec(xv.shape(), dy)?);
            }
        }
        Ok(())
    }
}

fn trailing3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [.., d, h, w] => Ok([*d, *h, *w]),
        _ => Err(Error::Shape(format!("need at least three spatial axes, got {shape:?}"))),
    }
}
