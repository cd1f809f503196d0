use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::TensorError;
use crate::kernels::{self, ConvGeom, ConvSpec};
use crate::tensor::{Element, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle into one [`Graph`]. Cheap to copy; tagged with the graph id so that
/// cross-graph use fails loudly instead of reading the wrong node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone)]
enum Op<E: Element> {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, E),
    AddScalar(Var, E),
    Powf(Var, E),
    Relu(Var),
    LeakyRelu(Var, E),
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Conv { x: Var, w: Var, geom: ConvGeom },
    // Adjoint of Conv with respect to its input; doubles as the deconv layer.
    AdjInput { src: Var, w: Var, geom: ConvGeom },
    // Adjoint of Conv with respect to its kernel.
    KernelGrad { x: Var, src: Var, geom: ConvGeom },
    AddBias { x: Var, bias: Var },
    BiasSum(Var),
    BiasBroadcast(Var),
    Sum(Var),
    BroadcastScalar(Var),
    SumPerSample(Var),
    BroadcastPerSample(Var),
    PerSampleScale { x: Var, coeffs: Arc<Vec<E>> },
    PerSampleShift(Var),
    Reshape(Var),
    IndexZ { x: Var, z: usize },
    EmbedZ { x: Var, z: usize },
    ConcatZ(Vec<Var>),
}

impl<E: Element> Op<E> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Powf(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::BiasSum(a)
            | Op::Sum(a)
            | Op::SumPerSample(a) => vec![*a],
            Op::Matmul { a, b, .. } => vec![*a, *b],
            Op::Conv { x, w, .. } => vec![*x, *w],
            Op::AdjInput { src, w, .. } => vec![*src, *w],
            Op::KernelGrad { x, src, .. } => vec![*x, *src],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::BiasBroadcast(v) | Op::BroadcastScalar(v) | Op::BroadcastPerSample(v) => {
                vec![*v]
            }
            Op::PerSampleScale { x, .. } => vec![*x],
            Op::PerSampleShift(x) | Op::Reshape(x) => vec![*x],
            Op::IndexZ { x, .. } | Op::EmbedZ { x, .. } => vec![*x],
            Op::ConcatZ(parts) => parts.clone(),
        }
    }
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    needs: bool,
}

/// Gradients returned by [`Graph::backward`], keyed by leaf. Every trainable
/// leaf gets an entry; leaves with no path to the loss get zeros and are
/// reported as unreached.
pub struct GradientMap<E: Element> {
    graph: u64,
    entries: HashMap<usize, Tensor<E>>,
    reached: HashSet<usize>,
}

impl<E: Element> GradientMap<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        if v.graph != self.graph {
            return None;
        }
        self.entries.get(&v.index)
    }

    /// True when the leaf had an actual gradient path to the loss.
    pub fn reached(&self, v: Var) -> bool {
        v.graph == self.graph && self.reached.contains(&v.index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradients in the order of `vars`, rejecting any missing entry.
    pub fn ordered(&self, vars: &[Var]) -> Result<Vec<Tensor<E>>, TensorError> {
        vars.iter()
            .map(|v| {
                self.get(*v)
                    .cloned()
                    .ok_or(TensorError::MissingGradient { index: v.index })
            })
            .collect()
    }
}

enum Target {
    Trainables,
    Single(usize),
}

/// One forward pass worth of computation. Append-only arena of eagerly
/// evaluated nodes; `backward` frees its own scratch, the graph itself is
/// dropped by the caller once the step is done.
pub struct Graph<E: Element> {
    id: u64,
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, needs: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs });
        Var { graph: self.id, index: nodes.len() - 1 }
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.graph != self.id || v.index >= self.nodes.borrow().len() {
            return Err(TensorError::GraphMismatch);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.index].needs
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.nodes.borrow()[v.index].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.index].value.shape().to_vec()
    }

    pub fn var(&self, t: Tensor<E>, trainable: bool) -> Var {
        self.push(t, Op::Leaf { trainable }, trainable)
    }

    pub fn constant(&self, t: Tensor<E>) -> Var {
        self.var(t, false)
    }

    fn zip(
        &self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.index].value, &nodes[b.index].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data: Vec<E> =
            ta.data().iter().zip(tb.data().iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(ta.shape().to_vec(), data).expect("zip preserves length"))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.zip("div", a, b, |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), self.needs(a) || self.needs(b)))
    }

    fn unary(&self, a: Var, op: Op<E>, f: impl Fn(E) -> E) -> Var {
        self.check(a).expect("unary op var");
        let v = self.nodes.borrow()[a.index].value.map(f);
        let needs = self.needs(a);
        self.push(v, op, needs)
    }

    pub fn scale(&self, a: Var, c: E) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: E) -> Var {
        self.unary(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn powf(&self, a: Var, p: E) -> Var {
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.powf(a, E::from_f64(0.5))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > E::zero() { x } else { E::zero() })
    }

    pub fn leaky_relu(&self, a: Var, slope: E) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > E::zero() { x } else { x * slope })
    }

    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(TensorError::BadOperand {
                op: "matmul",
                detail: format!("expects rank-2 operands, got {:?} and {:?}", av.shape(), bv.shape()),
            });
        }
        let (data, m, n) = kernels::matmul(
            av.data(),
            (av.shape()[0], av.shape()[1]),
            ta,
            bv.data(),
            (bv.shape()[0], bv.shape()[1]),
            tb,
        )?;
        let t = Tensor::new(vec![m, n], data).expect("matmul shape");
        Ok(self.push(t, Op::Matmul { a, b, ta, tb }, self.needs(a) || self.needs(b)))
    }

    /// y = x W^T + bias for x [B, n], W [m, n], bias [m].
    pub fn dense(&self, x: Var, w: Var, bias: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w, false, true)?;
        self.add_bias(y, bias)
    }

    fn kernel_cube(&self, w: &Tensor<E>, dims: usize) -> Result<usize, TensorError> {
        if w.rank() != dims + 2 {
            return Err(TensorError::BadOperand {
                op: "conv",
                detail: format!("kernel rank {} does not match spatial rank {}", w.rank(), dims),
            });
        }
        let k = w.shape()[2];
        if w.shape()[2..].iter().any(|&s| s != k) {
            return Err(TensorError::BadOperand {
                op: "conv",
                detail: format!("kernel must be a cube, got {:?}", &w.shape()[2..]),
            });
        }
        Ok(k)
    }

    fn conv_raw(&self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let batch = xv.shape()[0];
        let data = kernels::conv_apply(xv.data(), batch, wv.data(), &geom);
        let mut shape = vec![batch, geom.out_ch];
        shape.extend_from_slice(&geom.spatial_out);
        let t = Tensor::new(shape, data).expect("conv shape");
        self.push(t, Op::Conv { x, w, geom }, self.needs(x) || self.needs(w))
    }

    fn adj_raw(&self, src: Var, w: Var, geom: ConvGeom) -> Var {
        let sv = self.value(src);
        let wv = self.value(w);
        let batch = sv.shape()[0];
        let data = kernels::adjoint_input(sv.data(), batch, wv.data(), &geom);
        let mut shape = vec![batch, geom.in_ch];
        shape.extend_from_slice(&geom.spatial_in);
        let t = Tensor::new(shape, data).expect("adjoint shape");
        self.push(t, Op::AdjInput { src, w, geom }, self.needs(src) || self.needs(w))
    }

    fn kgrad_raw(&self, x: Var, src: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let sv = self.value(src);
        let batch = xv.shape()[0];
        let data = kernels::kernel_grad(xv.data(), sv.data(), batch, &geom);
        let mut shape = vec![geom.out_ch, geom.in_ch];
        shape.extend(std::iter::repeat(geom.k).take(geom.dims()));
        let t = Tensor::new(shape, data).expect("kernel grad shape");
        self.push(t, Op::KernelGrad { x, src, geom }, self.needs(x) || self.needs(src))
    }

    /// Cross-correlation (no kernel flip). Input [B, ic, spatial..], kernel
    /// [oc, ic, k..]; spatial rank (2 or 3) comes from the ranks.
    pub fn conv(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.rank() != 4 && xv.rank() != 5 {
            return Err(TensorError::BadOperand {
                op: "conv",
                detail: format!("input must be [B,C,H,W] or [B,C,D,H,W], got {:?}", xv.shape()),
            });
        }
        let dims = xv.rank() - 2;
        let k = self.kernel_cube(&wv, dims)?;
        if wv.shape()[1] != xv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let geom = ConvGeom::for_conv(&xv.shape()[2..], wv.shape()[1], wv.shape()[0], k, spec)?;
        let out = self.conv_raw(x, w, geom);
        match bias {
            Some(b) => self.add_bias(out, b),
            None => Ok(out),
        }
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv`] with the
    /// same kernel and spec. Input [B, a, spatial..], kernel [a, b, k..],
    /// output [B, b, grown spatial..].
    pub fn deconv(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.rank() != 4 && xv.rank() != 5 {
            return Err(TensorError::BadOperand {
                op: "deconv",
                detail: format!("input must be [B,C,H,W] or [B,C,D,H,W], got {:?}", xv.shape()),
            });
        }
        let dims = xv.rank() - 2;
        let k = self.kernel_cube(&wv, dims)?;
        if wv.shape()[0] != xv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "deconv",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let geom = ConvGeom::for_deconv(&xv.shape()[2..], wv.shape()[1], wv.shape()[0], k, spec)?;
        let out = self.adj_raw(x, w, geom);
        match bias {
            Some(b) => self.add_bias(out, b),
            None => Ok(out),
        }
    }

    /// x + bias broadcast over axis 1 (channels).
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(bias)?;
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.rank() < 2 || bv.rank() != 1 || bv.shape()[0] != xv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let ch = xv.shape()[1];
        let inner: usize = xv.shape()[2..].iter().product();
        let batch = xv.shape()[0];
        let mut data = xv.data().to_vec();
        for b in 0..batch {
            for c in 0..ch {
                let beta = bv.data()[c];
                let base = (b * ch + c) * inner;
                for v in &mut data[base..base + inner] {
                    *v = *v + beta;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data).expect("add_bias shape");
        Ok(self.push(t, Op::AddBias { x, bias }, self.needs(x) || self.needs(bias)))
    }

    fn bias_sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let ch = xv.shape()[1];
        let inner: usize = xv.shape()[2..].iter().product();
        let batch = xv.shape()[0];
        let mut out = vec![E::zero(); ch];
        for b in 0..batch {
            for (c, slot) in out.iter_mut().enumerate() {
                let base = (b * ch + c) * inner;
                for v in &xv.data()[base..base + inner] {
                    *slot = *slot + *v;
                }
            }
        }
        let t = Tensor::new(vec![ch], out).expect("bias_sum shape");
        let needs = self.needs(x);
        self.push(t, Op::BiasSum(x), needs)
    }

    fn bias_broadcast(&self, v: Var, shape: Vec<usize>) -> Var {
        let bv = self.value(v);
        let ch = shape[1];
        let inner: usize = shape[2..].iter().product();
        let batch = shape[0];
        let mut data = vec![E::zero(); batch * ch * inner];
        for b in 0..batch {
            for c in 0..ch {
                let beta = bv.data()[c];
                let base = (b * ch + c) * inner;
                for slot in &mut data[base..base + inner] {
                    *slot = beta;
                }
            }
        }
        let t = Tensor::new(shape, data).expect("bias_broadcast shape");
        let needs = self.needs(v);
        self.push(t, Op::BiasBroadcast(v), needs)
    }

    /// Sum of every element, shape [1].
    pub fn sum(&self, a: Var) -> Var {
        self.check(a).expect("sum var");
        let av = self.value(a);
        let mut acc = E::zero();
        for v in av.data() {
            acc = acc + *v;
        }
        let needs = self.needs(a);
        self.push(Tensor::scalar_value(acc), Op::Sum(a), needs)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, E::from_f64(1.0 / n as f64))
    }

    fn broadcast_scalar(&self, v: Var, shape: Vec<usize>) -> Var {
        let s = self.value(v).data()[0];
        let t = Tensor::full(&shape, s);
        let needs = self.needs(v);
        self.push(t, Op::BroadcastScalar(v), needs)
    }

    /// Sum over all axes except the first; [B, ..] -> [B].
    pub fn sum_per_sample(&self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let av = self.value(a);
        if av.rank() < 1 {
            return Err(TensorError::BadOperand {
                op: "sum_per_sample",
                detail: "needs at least one axis".into(),
            });
        }
        let batch = av.shape()[0];
        let inner: usize = av.shape()[1..].iter().product();
        let mut out = vec![E::zero(); batch];
        for (b, slot) in out.iter_mut().enumerate() {
            for v in &av.data()[b * inner..(b + 1) * inner] {
                *slot = *slot + *v;
            }
        }
        let t = Tensor::new(vec![batch], out).expect("sum_per_sample shape");
        let needs = self.needs(a);
        Ok(self.push(t, Op::SumPerSample(a), needs))
    }

    fn broadcast_per_sample(&self, v: Var, shape: Vec<usize>) -> Var {
        let bv = self.value(v);
        let batch = shape[0];
        let inner: usize = shape[1..].iter().product();
        let mut data = vec![E::zero(); batch * inner];
        for b in 0..batch {
            let val = bv.data()[b];
            for slot in &mut data[b * inner..(b + 1) * inner] {
                *slot = val;
            }
        }
        let t = Tensor::new(shape, data).expect("broadcast_per_sample shape");
        let needs = self.needs(v);
        self.push(t, Op::BroadcastPerSample(v), needs)
    }

    fn per_sample_apply(
        &self,
        op: &'static str,
        x: Var,
        coeffs: &Arc<Vec<E>>,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>, TensorError> {
        self.check(x)?;
        let xv = self.value(x);
        let batch = xv.shape().first().copied().unwrap_or(0);
        if coeffs.len() != batch {
            return Err(TensorError::BadOperand {
                op,
                detail: format!("{} coefficients for batch {}", coeffs.len(), batch),
            });
        }
        let inner: usize = xv.shape()[1..].iter().product();
        let mut data = xv.data().to_vec();
        for b in 0..batch {
            let c = coeffs[b];
            for v in &mut data[b * inner..(b + 1) * inner] {
                *v = f(*v, c);
            }
        }
        Ok(Tensor::new(xv.shape().to_vec(), data).expect("per_sample shape"))
    }

    /// Multiply each sample by its own coefficient.
    pub fn per_sample_scale(&self, x: Var, coeffs: Vec<E>) -> Result<Var, TensorError> {
        let coeffs = Arc::new(coeffs);
        let t = self.per_sample_apply("per_sample_scale", x, &coeffs, |v, c| v * c)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::PerSampleScale { x, coeffs }, needs))
    }

    /// Add a per-sample constant to each sample.
    pub fn per_sample_shift(&self, x: Var, coeffs: Vec<E>) -> Result<Var, TensorError> {
        let coeffs = Arc::new(coeffs);
        let t = self.per_sample_apply("per_sample_shift", x, &coeffs, |v, c| v + c)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::PerSampleShift(x), needs))
    }

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        self.check(x)?;
        let t = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Extract z-plane `z` of a [B, C, D, H, W] tensor as [B, C, H, W].
    pub fn index_z(&self, x: Var, z: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.rank() != 5 {
            return Err(TensorError::BadOperand {
                op: "index_z",
                detail: format!("expects rank 5, got {:?}", xv.shape()),
            });
        }
        let (b, c, d, h, w) =
            (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3], xv.shape()[4]);
        if z >= d {
            return Err(TensorError::BadOperand {
                op: "index_z",
                detail: format!("plane {z} out of depth {d}"),
            });
        }
        let hw = h * w;
        let mut data = vec![E::zero(); b * c * hw];
        for bi in 0..b {
            for ci in 0..c {
                let src = (((bi * c) + ci) * d + z) * hw;
                let dst = (bi * c + ci) * hw;
                data[dst..dst + hw].copy_from_slice(&xv.data()[src..src + hw]);
            }
        }
        let t = Tensor::new(vec![b, c, h, w], data).expect("index_z shape");
        let needs = self.needs(x);
        Ok(self.push(t, Op::IndexZ { x, z }, needs))
    }

    fn embed_z(&self, x: Var, z: usize, depth: usize) -> Var {
        let xv = self.value(x);
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let hw = h * w;
        let mut data = vec![E::zero(); b * c * depth * hw];
        for bi in 0..b {
            for ci in 0..c {
                let dst = (((bi * c) + ci) * depth + z) * hw;
                let src = (bi * c + ci) * hw;
                data[dst..dst + hw].copy_from_slice(&xv.data()[src..src + hw]);
            }
        }
        let t = Tensor::new(vec![b, c, depth, h, w], data).expect("embed_z shape");
        let needs = self.needs(x);
        self.push(t, Op::EmbedZ { x, z }, needs)
    }

    /// All z-planes in order; inverse of [`Graph::concat_z`].
    pub fn split_z(&self, x: Var) -> Result<Vec<Var>, TensorError> {
        let d = {
            let xv = self.value(x);
            if xv.rank() != 5 {
                return Err(TensorError::BadOperand {
                    op: "split_z",
                    detail: format!("expects rank 5, got {:?}", xv.shape()),
                });
            }
            xv.shape()[2]
        };
        (0..d).map(|z| self.index_z(x, z)).collect()
    }

    /// Stack [B, C, H, W] planes into [B, C, P, H, W].
    pub fn concat_z(&self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadOperand { op: "concat_z", detail: "no planes".into() });
        }
        let first = self.value(parts[0]);
        if first.rank() != 4 {
            return Err(TensorError::BadOperand {
                op: "concat_z",
                detail: format!("expects rank-4 planes, got {:?}", first.shape()),
            });
        }
        let (b, c, h, w) =
            (first.shape()[0], first.shape()[1], first.shape()[2], first.shape()[3]);
        let depth = parts.len();
        let hw = h * w;
        let mut data = vec![E::zero(); b * c * depth * hw];
        let mut needs = false;
        for (p, part) in parts.iter().enumerate() {
            self.check(*part)?;
            let pv = self.value(*part);
            if pv.shape() != first.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_z",
                    left: first.shape().to_vec(),
                    right: pv.shape().to_vec(),
                });
            }
            needs = needs || self.needs(*part);
            for bi in 0..b {
                for ci in 0..c {
                    let dst = (((bi * c) + ci) * depth + p) * hw;
                    let src = (bi * c + ci) * hw;
                    data[dst..dst + hw].copy_from_slice(&pv.data()[src..src + hw]);
                }
            }
        }
        let t = Tensor::new(vec![b, c, depth, h, w], data).expect("concat_z shape");
        Ok(self.push(t, Op::ConcatZ(parts.to_vec()), needs))
    }

    fn accumulate(
        &self,
        adj: &mut HashMap<usize, Var>,
        node: usize,
        v: Var,
    ) -> Result<(), TensorError> {
        if let Some(&cur) = adj.get(&node) {
            let summed = self.add(cur, v)?;
            adj.insert(node, summed);
        } else {
            adj.insert(node, v);
        }
        Ok(())
    }

    fn adjoints(&self, scalar: Var, target: Target) -> Result<HashMap<usize, Var>, TensorError> {
        self.check(scalar)?;
        {
            let value = &self.nodes.borrow()[scalar.index].value;
            if value.numel() != 1 {
                return Err(TensorError::NotScalar { shape: value.shape().to_vec() });
            }
        }
        let limit = scalar.index;
        let mut useful = vec![false; limit + 1];
        {
            let nodes = self.nodes.borrow();
            for i in 0..=limit {
                let seed = match target {
                    Target::Trainables => matches!(nodes[i].op, Op::Leaf { trainable: true }),
                    Target::Single(w) => i == w,
                };
                useful[i] = seed || nodes[i].op.inputs().iter().any(|v| useful[v.index]);
            }
        }
        if !useful[limit] {
            return match target {
                Target::Single(_) => Err(TensorError::Unreachable),
                Target::Trainables => Ok(HashMap::new()),
            };
        }
        let mut adj: HashMap<usize, Var> = HashMap::new();
        let seed_shape = self.shape_of(scalar);
        adj.insert(limit, self.constant(Tensor::full(&seed_shape, E::one())));
        for idx in (0..=limit).rev() {
            let Some(&g) = adj.get(&idx) else { continue };
            let op = self.nodes.borrow()[idx].op.clone();
            self.emit_vjps(idx, &op, g, &useful, &mut adj)?;
        }
        Ok(adj)
    }

    fn emit_vjps(
        &self,
        idx: usize,
        op: &Op<E>,
        g: Var,
        useful: &[bool],
        adj: &mut HashMap<usize, Var>,
    ) -> Result<(), TensorError> {
        let want = |v: &Var| useful[v.index];
        match op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                if want(a) {
                    self.accumulate(adj, a.index, g)?;
                }
                if want(b) {
                    self.accumulate(adj, b.index, g)?;
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    self.accumulate(adj, a.index, g)?;
                }
                if want(b) {
                    let n = self.scale(g, E::from_f64(-1.0));
                    self.accumulate(adj, b.index, n)?;
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let v = self.mul(g, *b)?;
                    self.accumulate(adj, a.index, v)?;
                }
                if want(b) {
                    let v = self.mul(g, *a)?;
                    self.accumulate(adj, b.index, v)?;
                }
            }
            Op::Div(a, b) => {
                if want(a) {
                    let v = self.div(g, *b)?;
                    self.accumulate(adj, a.index, v)?;
                }
                if want(b) {
                    let out = Var { graph: self.id, index: idx };
                    let q = self.div(out, *b)?;
                    let v = self.mul(g, q)?;
                    let v = self.scale(v, E::from_f64(-1.0));
                    self.accumulate(adj, b.index, v)?;
                }
            }
            Op::Scale(a, c) => {
                if want(a) {
                    let v = self.scale(g, *c);
                    self.accumulate(adj, a.index, v)?;
                }
            }
            Op::AddScalar(a, _) => {
                if want(a) {
                    self.accumulate(adj, a.index, g)?;
                }
            }
            Op::Powf(a, p) => {
                if want(a) {
                    let pc = *p;
                    let partial = self.value(*a).map(|x| pc * x.powf(pc - E::one()));
                    let pv = self.constant(partial);
                    let v = self.mul(g, pv)?;
                    self.accumulate(adj, a.index, v)?;
                }
            }
            Op::Relu(a) => {
                if want(a) {
                    let mask = self
                        .value(*a)
                        .map(|x| if x > E::zero() { E::one() } else { E::zero() });
                    let mv = self.constant(mask);
                    let v = self.mul(g, mv)?;
                    self.accumulate(adj, a.index, v)?;
                }
            }
            Op::LeakyRelu(a, s) => {
                if want(a) {
                    let slope = *s;
                    let mask =
                        self.value(*a).map(|x| if x > E::zero() { E::one() } else { slope });
                    let mv = self.constant(mask);
                    let v = self.mul(g, mv)?;
                    self.accumulate(adj, a.index, v)?;
                }
            }
            Op::Matmul { a, b, ta, tb } => {
                if want(a) {
                    let da = if !*ta {
                        self.matmul(g, *b, false, !*tb)?
                    } else {
                        self.matmul(*b, g, *tb, true)?
                    };
                    self.accumulate(adj, a.index, da)?;
                }
                if want(b) {
                    let db = if !*tb {
                        self.matmul(*a, g, !*ta, false)?
                    } else {
                        self.matmul(g, *a, true, *ta)?
                    };
                    self.accumulate(adj, b.index, db)?;
                }
            }
            Op::Conv { x, w, geom } => {
                if want(x) {
                    let v = self.adj_raw(g, *w, geom.clone());
                    self.accumulate(adj, x.index, v)?;
                }
                if want(w) {
                    let v = self.kgrad_raw(*x, g, geom.clone());
                    self.accumulate(adj, w.index, v)?;
                }
            }
            Op::AdjInput { src, w, geom } => {
                if want(src) {
                    let v = self.conv_raw(g, *w, geom.clone());
                    self.accumulate(adj, src.index, v)?;
                }
                if want(w) {
                    let v = self.kgrad_raw(g, *src, geom.clone());
                    self.accumulate(adj, w.index, v)?;
                }
            }
            Op::KernelGrad { x, src, geom } => {
                if want(x) {
                    let v = self.adj_raw(*src, g, geom.clone());
                    self.accumulate(adj, x.index, v)?;
                }
                if want(src) {
                    let v = self.conv_raw(*x, g, geom.clone());
                    self.accumulate(adj, src.index, v)?;
                }
            }
            Op::AddBias { x, bias } => {
                if want(x) {
                    self.accumulate(adj, x.index, g)?;
                }
                if want(bias) {
                    let v = self.bias_sum(g);
                    self.accumulate(adj, bias.index, v)?;
                }
            }
            Op::BiasSum(x) => {
                if want(x) {
                    let v = self.bias_broadcast(g, self.shape_of(*x));
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::BiasBroadcast(v) => {
                if want(v) {
                    let s = self.bias_sum(g);
                    self.accumulate(adj, v.index, s)?;
                }
            }
            Op::Sum(x) => {
                if want(x) {
                    let v = self.broadcast_scalar(g, self.shape_of(*x));
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::BroadcastScalar(v) => {
                if want(v) {
                    let s = self.sum(g);
                    self.accumulate(adj, v.index, s)?;
                }
            }
            Op::SumPerSample(x) => {
                if want(x) {
                    let v = self.broadcast_per_sample(g, self.shape_of(*x));
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::BroadcastPerSample(v) => {
                if want(v) {
                    let s = self.sum_per_sample(g)?;
                    self.accumulate(adj, v.index, s)?;
                }
            }
            Op::PerSampleScale { x, coeffs } => {
                if want(x) {
                    let t = self.per_sample_apply("per_sample_scale", g, coeffs, |v, c| v * c)?;
                    let needs = self.needs(g);
                    let node =
                        self.push(t, Op::PerSampleScale { x: g, coeffs: Arc::clone(coeffs) }, needs);
                    self.accumulate(adj, x.index, node)?;
                }
            }
            Op::PerSampleShift(x) => {
                if want(x) {
                    self.accumulate(adj, x.index, g)?;
                }
            }
            Op::Reshape(x) => {
                if want(x) {
                    let v = self.reshape(g, self.shape_of(*x))?;
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::IndexZ { x, z } => {
                if want(x) {
                    let depth = self.shape_of(*x)[2];
                    let v = self.embed_z(g, *z, depth);
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::EmbedZ { x, z, .. } => {
                if want(x) {
                    let v = self.index_z(g, *z)?;
                    self.accumulate(adj, x.index, v)?;
                }
            }
            Op::ConcatZ(parts) => {
                for (p, part) in parts.iter().enumerate() {
                    if want(part) {
                        let v = self.index_z(g, p)?;
                        self.accumulate(adj, part.index, v)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `scalar` for every trainable leaf. Scratch nodes created by
    /// the pass are freed before returning; the forward graph stays usable.
    pub fn backward(&self, scalar: Var) -> Result<GradientMap<E>, TensorError> {
        let mark = self.nodes.borrow().len();
        let adj = self.adjoints(scalar, Target::Trainables)?;
        let mut entries = HashMap::new();
        let mut reached = HashSet::new();
        {
            let nodes = self.nodes.borrow();
            for (i, node) in nodes.iter().enumerate().take(mark) {
                if let Op::Leaf { trainable: true } = node.op {
                    if let Some(gv) = adj.get(&i) {
                        entries.insert(i, nodes[gv.index].value.clone());
                        reached.insert(i);
                    } else {
                        entries.insert(i, Tensor::zeros(node.value.shape()));
                    }
                }
            }
        }
        self.nodes.borrow_mut().truncate(mark);
        Ok(GradientMap { graph: self.id, entries, reached })
    }

    /// Gradient of `scalar` with respect to `wrt`, returned as a live node so
    /// it can be composed and differentiated again (double backprop). Nodes
    /// are retained. Errors if `wrt` has no path into `scalar`.
    pub fn grad(&self, scalar: Var, wrt: Var) -> Result<Var, TensorError> {
        self.check(wrt)?;
        if wrt.index > scalar.index {
            return Err(TensorError::Unreachable);
        }
        let adj = self.adjoints(scalar, Target::Single(wrt.index))?;
        adj.get(&wrt.index).copied().ok_or(TensorError::Unreachable)
    }
}
