//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every derivative rule is written in terms of recorded operations, so
//! gradients produced with `create_graph = true` are themselves differentiable.
//! This is what the gradient-penalty term of WGAN-GP needs.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::kernels::{self, ConvGeom};
use crate::resample::ResamplePlan;
use crate::{Array, Scalar};

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Exp(usize),
    Ln(usize),
    Powf(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    /// Multiplication by a constant array (piecewise-linear activations).
    MaskMul(usize, Rc<Array<T>>),
    BroadcastTo(usize),
    SumTo(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Conv2d { x: usize, w: usize, geom: ConvGeom },
    ConvTranspose { g: usize, w: usize, geom: ConvGeom },
    ConvWeightGrad { x: usize, gy: usize, geom: ConvGeom },
    Resample(usize, ResamplePlan<T>),
    Gather { x: usize, idx: Rc<Vec<usize>> },
    ScatterAdd { x: usize, idx: Rc<Vec<usize>> },
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Embed { x: usize, axis: usize, start: usize },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Exp(a) | Ln(a) | Powf(a, _) | Sigmoid(a) | Tanh(a)
            | Softplus(a) | MaskMul(a, _) | BroadcastTo(a) | SumTo(a) | Transpose(a) | Reshape(a)
            | Resample(a, _) => vec![*a],
            Conv2d { x, w, .. } => vec![*x, *w],
            ConvTranspose { g, w, .. } => vec![*g, *w],
            ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
            Gather { x, .. } | ScatterAdd { x, .. } | Narrow { x, .. } | Embed { x, .. } => vec![*x],
            Concat { parts, .. } => parts.clone(),
        }
    }
}

struct Node<T> {
    value: Rc<Array<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass. Drop it to free the graph.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: Cell::new(true) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient can be requested.
    pub fn var(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Array<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Array::scalar(v))
    }

    /// Runs `f` without recording derivative information.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.grad_enabled.replace(false);
        let r = f();
        self.grad_enabled.set(prev);
        r
    }

    fn push(&self, value: Array<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires = self.grad_enabled.get() && op.parents().iter().any(|&p| nodes[p].requires_grad);
        let op = if requires { op } else { Op::Leaf };
        nodes.push(Node { value: Rc::new(value), op, requires_grad: requires });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var_at(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar-or-tensor `output` (seeded with ones) with respect
    /// to each of `wrt`. `None` means `output` does not depend on that input.
    ///
    /// With `create_graph` the returned gradients are recorded and can be
    /// differentiated again.
    pub fn grad<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>], create_graph: bool) -> Vec<Option<Var<'t, T>>> {
        let n = output.id + 1;
        let (ops, needs) = {
            let nodes = self.nodes.borrow();
            let mut needs = vec![false; n];
            for w in wrt {
                if w.id < n {
                    needs[w.id] = true;
                }
            }
            let mut ops = Vec::with_capacity(n);
            for (i, node) in nodes[..n].iter().enumerate() {
                if !needs[i] && node.requires_grad {
                    needs[i] = node.op.parents().iter().any(|&p| needs[p]);
                }
                ops.push(node.op.clone());
            }
            (ops, needs)
        };
        let prev = self.grad_enabled.replace(create_graph);
        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; n];
        if needs[output.id] {
            let shape = output.shape();
            grads[output.id] = Some(self.constant(Array::ones(&shape)));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !needs[i] || matches!(ops[i], Op::Leaf) {
                continue;
            }
            let parents = ops[i].parents();
            let pg = self.backward_op(&ops[i], self.var_at(i), g, &parents, &needs);
            for (p, gp) in parents.iter().zip(pg) {
                if let Some(gp) = gp {
                    grads[*p] = Some(match grads[*p] {
                        Some(acc) => acc.add(gp),
                        None => gp,
                    });
                }
            }
        }
        self.grad_enabled.set(prev);
        wrt.iter().map(|w| if w.id < n { grads[w.id] } else { None }).collect()
    }

    fn backward_op<'t>(
        &'t self,
        op: &Op<T>,
        out: Var<'t, T>,
        g: Var<'t, T>,
        parents: &[usize],
        needs: &[bool],
    ) -> Vec<Option<Var<'t, T>>> {
        let v = |i: usize| self.var_at(i);
        let want = |k: usize| needs[parents[k]];
        let one = |f: &dyn Fn() -> Var<'t, T>| -> Vec<Option<Var<'t, T>>> { vec![if want(0) { Some(f()) } else { None }] };
        use Op::*;
        match op {
            Leaf => vec![],
            Add(_, _) => vec![want(0).then_some(g), want(1).then_some(g)],
            Sub(_, _) => vec![want(0).then_some(g), want(1).then(|| g.neg())],
            Mul(a, b) => vec![want(0).then(|| g.mul(v(*b))), want(1).then(|| g.mul(v(*a)))],
            Div(_, b) => vec![want(0).then(|| g.div(v(*b))), want(1).then(|| g.mul(out).div(v(*b)).neg())],
            Scale(_, c) => one(&|| g.scale(*c)),
            AddScalar(_) => vec![Some(g)],
            Exp(_) => one(&|| g.mul(out)),
            Ln(a) => one(&|| g.div(v(*a))),
            Powf(a, p) => one(&|| g.mul(v(*a).powf(*p - T::one()).scale(*p))),
            Sigmoid(_) => one(&|| g.mul(out.sub(out.mul(out)))),
            Tanh(_) => one(&|| g.sub(g.mul(out).mul(out))),
            Softplus(a) => one(&|| g.mul(v(*a).sigmoid())),
            MaskMul(_, m) => one(&|| g.mask_mul(Rc::clone(m))),
            BroadcastTo(a) => one(&|| g.sum_to(&v(*a).shape())),
            SumTo(a) => one(&|| g.broadcast_to(&v(*a).shape())),
            MatMul(a, b) => vec![
                want(0).then(|| g.matmul(v(*b).t())),
                want(1).then(|| v(*a).t().matmul(g)),
            ],
            Transpose(_) => one(&|| g.t()),
            Reshape(a) => one(&|| g.reshape(&v(*a).shape())),
            Conv2d { x, w, geom } => vec![
                want(0).then(|| g.conv_transpose2d(v(*w), *geom)),
                want(1).then(|| v(*x).conv_weight_grad(g, *geom)),
            ],
            ConvTranspose { g: gin, w, geom } => vec![
                want(0).then(|| g.conv2d_geom(v(*w), *geom)),
                want(1).then(|| g.conv_weight_grad(v(*gin), *geom)),
            ],
            ConvWeightGrad { x, gy, geom } => vec![
                want(0).then(|| v(*gy).conv_transpose2d(g, *geom)),
                want(1).then(|| v(*x).conv2d_geom(g, *geom)),
            ],
            Resample(_, plan) => one(&|| g.resample(&plan.transpose())),
            Gather { x, idx } => one(&|| g.scatter_add(Rc::clone(idx), &v(*x).shape())),
            ScatterAdd { x, idx } => one(&|| g.gather(Rc::clone(idx), &v(*x).shape())),
            Concat { parts, axis } => {
                let mut start = 0;
                parts
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        let len = v(p).shape()[*axis];
                        let r = want(k).then(|| g.narrow(*axis, start, len));
                        start += len;
                        r
                    })
                    .collect()
            }
            Narrow { x, axis, start } => one(&|| g.embed(*axis, *start, v(*x).shape()[*axis])),
            Embed { x, axis, start } => one(&|| g.narrow(*axis, *start, v(*x).shape()[*axis])),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.value_of(self.id)
    }

    /// Borrow the value without cloning the `Rc`.
    pub fn with_value<R>(&self, f: impl FnOnce(&Array<T>) -> R) -> R {
        let nodes: Ref<'_, Vec<Node<T>>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|a| a.shape().to_vec())
    }

    pub fn item(&self) -> T {
        self.with_value(|a| a.item())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        let v = self.value();
        self.tape.constant((*v).clone())
    }

    fn unary(&self, f: impl Fn(&Array<T>) -> Array<T>, op: Op<T>) -> Var<'t, T> {
        let out = self.with_value(f);
        self.tape.push(out, op)
    }

    fn binary_same(
        self,
        rhs: Var<'t, T>,
        f: impl Fn(T, T) -> T,
        op: impl Fn(usize, usize) -> Op<T>,
    ) -> Var<'t, T> {
        let (a, b) = self.broadcast_pair(rhs);
        let out = {
            let nodes = self.tape.nodes.borrow();
            nodes[a.id].value.zip_map(&nodes[b.id].value, f)
        };
        self.tape.push(out, op(a.id, b.id))
    }

    fn broadcast_pair(self, rhs: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa == sb {
            return (self, rhs);
        }
        let target = kernels::broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("shapes {sa:?} and {sb:?} do not broadcast"));
        let a = if sa == target { self } else { self.broadcast_to(&target) };
        let b = if sb == target { rhs } else { rhs.broadcast_to(&target) };
        (a, b)
    }

    pub fn add(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.binary_same(rhs, |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.binary_same(rhs, |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.binary_same(rhs, |a, b| a * b, Op::Mul)
    }

    pub fn div(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.binary_same(rhs, |a, b| a / b, Op::Div)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v + c), Op::AddScalar(self.id))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    /// `c - self`
    pub fn rsub_scalar(self, c: T) -> Var<'t, T> {
        self.neg().add_scalar(c)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v.exp()), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v.ln()), Op::Ln(self.id))
    }

    pub fn powf(self, p: T) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v.powf(p)), Op::Powf(self.id, p))
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.powf(T::lit(0.5))
    }

    pub fn square(self) -> Var<'t, T> {
        self.mul(self)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(|a| a.map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|a| a.map(|v| v.tanh()), Op::Tanh(self.id))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(|a| a.map(softplus), Op::Softplus(self.id))
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mask_mul(self, mask: Rc<Array<T>>) -> Var<'t, T> {
        let out = self.with_value(|a| a.zip_map(&mask, |x, m| x * m));
        self.tape.push(out, Op::MaskMul(self.id, mask))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let mask = self.with_value(|a| a.map(|v| if v > T::zero() { T::one() } else { slope }));
        self.mask_mul(Rc::new(mask))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.leaky_relu(T::zero())
    }

    pub fn abs(self) -> Var<'t, T> {
        let mask = self.with_value(|a| a.map(|v| if v >= T::zero() { T::one() } else { -T::one() }));
        self.mask_mul(Rc::new(mask))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'t, T> {
        if self.shape() == shape {
            return self;
        }
        self.unary(|a| kernels::broadcast_to(a, shape), Op::BroadcastTo(self.id))
    }

    pub fn sum_to(self, shape: &[usize]) -> Var<'t, T> {
        if self.shape() == shape {
            return self;
        }
        self.unary(|a| kernels::sum_to(a, shape), Op::SumTo(self.id))
    }

    /// Sum of all elements as a rank-0 value.
    pub fn sum(self) -> Var<'t, T> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.with_value(|a| a.len());
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Mean over the spatial axes of an NCHW tensor, keeping them as size 1.
    pub fn mean_hw(self) -> Var<'t, T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "mean_hw expects NCHW");
        self.sum_to(&[s[0], s[1], 1, 1]).scale(T::one() / T::lit((s[2] * s[3]) as f64))
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Var<'t, T> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            kernels::matmul(&nodes[self.id].value, &nodes[rhs.id].value)
        };
        self.tape.push(out, Op::MatMul(self.id, rhs.id))
    }

    pub fn t(self) -> Var<'t, T> {
        self.unary(kernels::transpose2, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        self.unary(|a| a.clone().reshape(shape), Op::Reshape(self.id))
    }

    /// 2-D convolution of NCHW input with `[cout, cin, kh, kw]` weights.
    pub fn conv2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Var<'t, T> {
        let (_, _, h, wd) = self.with_value(|a| a.dims4());
        let (_, _, kh, kw) = w.with_value(|a| a.dims4());
        self.conv2d_geom(w, ConvGeom::new(h, wd, kh, kw, stride, pad))
    }

    pub fn conv2d_geom(self, w: Var<'t, T>, geom: ConvGeom) -> Var<'t, T> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            kernels::conv2d(&nodes[self.id].value, &nodes[w.id].value, &geom)
        };
        self.tape.push(out, Op::Conv2d { x: self.id, w: w.id, geom })
    }

    /// Adjoint of `conv2d` in its input; output has the geometry's input size.
    pub fn conv_transpose2d(self, w: Var<'t, T>, geom: ConvGeom) -> Var<'t, T> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            kernels::conv_transpose2d(&nodes[self.id].value, &nodes[w.id].value, &geom)
        };
        self.tape.push(out, Op::ConvTranspose { g: self.id, w: w.id, geom })
    }

    /// Adjoint of `conv2d` in its weights, with `self` the convolution input.
    pub fn conv_weight_grad(self, gy: Var<'t, T>, geom: ConvGeom) -> Var<'t, T> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            kernels::conv_weight_grad(&nodes[self.id].value, &nodes[gy.id].value, &geom)
        };
        self.tape.push(out, Op::ConvWeightGrad { x: self.id, gy: gy.id, geom })
    }

    pub fn resample(self, plan: &ResamplePlan<T>) -> Var<'t, T> {
        self.unary(|a| plan.apply(a), Op::Resample(self.id, plan.clone()))
    }

    pub fn gather(self, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var<'t, T> {
        self.unary(|a| kernels::gather(a, &idx, shape), Op::Gather { x: self.id, idx: Rc::clone(&idx) })
    }

    pub fn scatter_add(self, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var<'t, T> {
        self.unary(|a| kernels::scatter_add(a, &idx, shape), Op::ScatterAdd { x: self.id, idx: Rc::clone(&idx) })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(self) -> Var<'t, T> {
        let (idx, shape) = self.with_value(kernels::max_pool2_indices);
        self.gather(Rc::new(idx), &shape)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t, T> {
        self.unary(|a| kernels::narrow(a, axis, start, len), Op::Narrow { x: self.id, axis, start })
    }

    pub fn embed(self, axis: usize, start: usize, full: usize) -> Var<'t, T> {
        self.unary(|a| kernels::embed(a, axis, start, full), Op::Embed { x: self.id, axis, start })
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let tape = parts[0].tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let refs: Vec<&Array<T>> = parts.iter().map(|p| &*nodes[p.id].value).collect();
            kernels::concat(&refs, axis)
        };
        tape.push(out, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis })
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
