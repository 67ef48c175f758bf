//! Define-by-run reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass: each operation appends one
//! node holding its output value and a record of how to push gradients back
//! to its inputs. [`Var`] is a cheap handle into the tape. Calling
//! [`Var::backward`] on a scalar seeds it with 1 and replays the tape in
//! reverse, visiting each node exactly once (the tape is topologically
//! ordered by construction).
//!
//! Gradients accumulate: a second `backward` call without
//! [`Tape::zero_grads`] adds onto the gradients already stored.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{Real, Tensor};

enum Op<T> {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: T },
    Tanh { a: usize },
    Exp { a: usize },
    Relu { a: usize },
    Abs { a: usize },
    Sigmoid { a: usize },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    Conv2d { x: usize, k: usize, stride: usize, pad: usize },
    ConvTranspose2d { x: usize, k: usize, stride: usize, pad: usize },
    Softmax { a: usize, axis: usize },
    CrossEntropy { logits: usize, labels: Vec<usize> },
    SumAll { a: usize },
    Stack { parts: Vec<usize> },
    IndexRows { a: usize, rows: Vec<usize> },
    ConcatCols { a: usize, b: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Recording tape; clone handles share the same storage.
pub struct Tape<T: Real> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Real> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one tape node.
pub struct Var<T: Real> {
    tape: Tape<T>,
    id: usize,
    shape: Vec<usize>,
}

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var { tape: self.tape.clone(), id: self.id, shape: self.shape.clone() }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), grads: Vec::new() })),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        debug_assert!(value.is_finite(), "non-finite values produced on the tape");
        let shape = value.shape().to_vec();
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, op });
        inner.grads.push(None);
        drop(inner);
        Var { tape: self.clone(), id, shape }
    }

    /// Registers an input or parameter value.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf)
    }

    /// Same as [`Tape::leaf`]; names intent for non-trainable values.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: T) -> Var<T> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn zero_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            *g = None;
        }
    }

    /// Gradient accumulated at `var` by previous `backward` calls.
    pub fn grad(&self, var: &Var<T>) -> Option<Tensor<T>> {
        let inner = self.inner.borrow();
        inner.grads[var.id]
            .as_ref()
            .map(|g| Tensor::from_vec(inner.nodes[var.id].value.shape(), g.clone()))
    }

}

impl<T: Real> Var<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn value(&self) -> Tensor<T> {
        let inner = self.tape.inner.borrow();
        inner.nodes[self.id].value.clone()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(self)
    }

    fn same_tape(&self, other: &Var<T>) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars belong to different tapes"
        );
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, BinKind::Add)
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, BinKind::Sub)
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, BinKind::Mul)
    }

    pub fn scale(&self, factor: T) -> Var<T> {
        let value = self.value().map(|x| x * factor);
        self.tape.push(value, Op::Scale { a: self.id, factor })
    }

    /// `factor + self` element-wise, without a second operand tensor.
    pub fn shift(&self, offset: T) -> Var<T> {
        let c = self.tape.constant(Tensor::filled(&self.shape, offset));
        self.add(&c)
    }

    pub fn tanh(&self) -> Var<T> {
        let value = self.value().map(|x| x.tanh());
        self.tape.push(value, Op::Tanh { a: self.id })
    }

    pub fn exp(&self) -> Var<T> {
        let value = self.value().map(|x| x.exp());
        self.tape.push(value, Op::Exp { a: self.id })
    }

    pub fn relu(&self) -> Var<T> {
        let value = self.value().map(|x| x.max(T::zero()));
        self.tape.push(value, Op::Relu { a: self.id })
    }

    pub fn abs(&self) -> Var<T> {
        let value = self.value().map(|x| x.abs());
        self.tape.push(value, Op::Abs { a: self.id })
    }

    pub fn sigmoid(&self) -> Var<T> {
        let one = T::one();
        let value = self.value().map(|x| one / (one + (-x).exp()));
        self.tape.push(value, Op::Sigmoid { a: self.id })
    }

    fn binary(&self, other: &Var<T>, kind: BinKind) -> Var<T> {
        self.same_tape(other);
        let (av, bv) = {
            let inner = self.tape.inner.borrow();
            (
                inner.nodes[self.id].value.clone(),
                inner.nodes[other.id].value.clone(),
            )
        };
        let value = broadcast_apply(&av, &bv, kind);
        let op = match kind {
            BinKind::Add => Op::Add { a: self.id, b: other.id },
            BinKind::Sub => Op::Sub { a: self.id, b: other.id },
            BinKind::Mul => Op::Mul { a: self.id, b: other.id },
        };
        self.tape.push(value, op)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        self.same_tape(other);
        let (m, ka) = mat_dims(&self.shape);
        let (kb, n) = mat_dims(&other.shape);
        assert_eq!(
            ka, kb,
            "matmul inner dimensions differ: {:?} x {:?}",
            self.shape, other.shape
        );
        let a = self.value();
        let b = other.value();
        let mut out = vec![T::zero(); m * n];
        unsafe {
            T::gemm(
                m,
                ka,
                n,
                a.data().as_ptr(),
                ka as isize,
                1,
                b.data().as_ptr(),
                n as isize,
                1,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        self.tape.push(
            Tensor::from_vec(&[m, n], out),
            Op::Matmul { a: self.id, b: other.id },
        )
    }

    pub fn transpose(&self) -> Var<T> {
        let (m, n) = mat_dims(&self.shape);
        let a = self.value();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        self.tape
            .push(Tensor::from_vec(&[n, m], out), Op::Transpose { a: self.id })
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let value = self.value().reshaped(shape);
        self.tape.push(value, Op::Reshape { a: self.id })
    }

    // ---- convolution ----

    /// Cross-correlation of `self` `[H, W, Cin]` with `kernel`
    /// `[kh, kw, Cin, Cout]`, producing `[H', W', Cout]` with
    /// `H' = (H + 2 pad - kh) / stride + 1` (floor).
    pub fn conv2d(&self, kernel: &Var<T>, stride: usize, pad: usize) -> Var<T> {
        self.same_tape(kernel);
        let g = ConvGeom::of(&self.shape, &kernel.shape, stride, pad);
        let x = self.value();
        let k = kernel.value();
        let cols = im2col(x.data(), &g);
        let q = g.kh * g.kw * g.cin;
        let rows = g.oh * g.ow;
        let mut out = vec![T::zero(); rows * g.cout];
        unsafe {
            T::gemm(
                rows,
                q,
                g.cout,
                cols.as_ptr(),
                q as isize,
                1,
                k.data().as_ptr(),
                g.cout as isize,
                1,
                out.as_mut_ptr(),
                g.cout as isize,
                1,
            );
        }
        self.tape.push(
            Tensor::from_vec(&[g.oh, g.ow, g.cout], out),
            Op::Conv2d { x: self.id, k: kernel.id, stride, pad },
        )
    }

    /// Exact adjoint of [`Var::conv2d`] with the same kernel, stride and
    /// padding: `<conv2d(a, k), y> == <a, conv_transpose2d(y, k)>`.
    ///
    /// `self` is `[H', W', Cout]`; the output is `[H, W, Cin]` with
    /// `H = (H' - 1) stride - 2 pad + kh`.
    pub fn conv_transpose2d(&self, kernel: &Var<T>, stride: usize, pad: usize) -> Var<T> {
        self.same_tape(kernel);
        let kshape = kernel.shape.clone();
        assert_eq!(kshape.len(), 4, "kernel must be [kh, kw, Cin, Cout]");
        let (kh, kw, cin, cout) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        assert_eq!(self.shape.len(), 3, "input must be [H, W, C]");
        assert_eq!(
            self.shape[2], cout,
            "input channels {:?} do not match kernel Cout {}",
            self.shape, cout
        );
        let (ih, iw) = (self.shape[0], self.shape[1]);
        let oh = (ih - 1) * stride + kh;
        let ow = (iw - 1) * stride + kw;
        assert!(
            oh > 2 * pad && ow > 2 * pad,
            "conv_transpose2d output dims are not positive"
        );
        let g = ConvGeom {
            h: oh - 2 * pad,
            w: ow - 2 * pad,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: ih,
            ow: iw,
        };
        let y = self.value();
        let k = kernel.value();
        let out = conv_input_grad(y.data(), k.data(), &g);
        self.tape.push(
            Tensor::from_vec(&[g.h, g.w, cin], out),
            Op::ConvTranspose2d { x: self.id, k: kernel.id, stride, pad },
        )
    }

    // ---- reductions and structure ----

    pub fn softmax(&self, axis: usize) -> Var<T> {
        assert!(axis < self.shape.len(), "softmax axis {} out of range for {:?}", axis, self.shape);
        let value = softmax_forward(&self.value(), axis);
        self.tape.push(value, Op::Softmax { a: self.id, axis })
    }

    pub fn sum(&self) -> Var<T> {
        let total = self
            .value()
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.tape
            .push(Tensor::scalar(total), Op::SumAll { a: self.id })
    }

    pub fn mean(&self) -> Var<T> {
        let n = T::from_f64(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Gathers rows of a matrix-like tensor (axis 0), allowing repeats.
    pub fn index_rows(&self, rows: &[usize]) -> Var<T> {
        assert!(!self.shape.is_empty());
        let r = self.shape[0];
        for &i in rows {
            assert!(i < r, "row index {} out of range for {:?}", i, self.shape);
        }
        let chunk = self.numel() / r;
        let value = self.value();
        let mut out = Vec::with_capacity(rows.len() * chunk);
        for &i in rows {
            out.extend_from_slice(&value.data()[i * chunk..(i + 1) * chunk]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        self.tape.push(
            Tensor::from_vec(&shape, out),
            Op::IndexRows { a: self.id, rows: rows.to_vec() },
        )
    }

    /// Scalar backward entry point. Panics unless `self` has one element.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shape
        );
        let mut inner = self.tape.inner.borrow_mut();
        backward_from(&mut inner, self.id);
    }
}

/// Stacks equally-shaped vars along a new leading axis.
pub fn stack<T: Real>(parts: &[Var<T>]) -> Var<T> {
    assert!(!parts.is_empty(), "stack of zero vars");
    let tape = parts[0].tape.clone();
    let shape = parts[0].shape.clone();
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        p.same_tape(&parts[0]);
        assert_eq!(p.shape, shape, "stack shape mismatch: {:?} vs {:?}", p.shape, shape);
        data.extend_from_slice(p.value().data());
    }
    let mut out_shape = vec![parts.len()];
    out_shape.extend_from_slice(&shape);
    tape.push(
        Tensor::from_vec(&out_shape, data),
        Op::Stack { parts: parts.iter().map(|p| p.id).collect() },
    )
}

/// Concatenates two matrices along the column axis.
pub fn concat_cols<T: Real>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    a.same_tape(b);
    let (m, ca) = mat_dims(&a.shape);
    let (mb, cb) = mat_dims(&b.shape);
    assert_eq!(m, mb, "concat_cols row mismatch: {:?} vs {:?}", a.shape, b.shape);
    let av = a.value();
    let bv = b.value();
    let mut out = Vec::with_capacity(m * (ca + cb));
    for i in 0..m {
        out.extend_from_slice(&av.data()[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&bv.data()[i * cb..(i + 1) * cb]);
    }
    a.tape.push(
        Tensor::from_vec(&[m, ca + cb], out),
        Op::ConcatCols { a: a.id, b: b.id },
    )
}

/// Mean of `-log softmax(logits)[label]` over the batch.
///
/// `logits` is `[B, K]`; labels must lie in `[0, K)`.
pub fn cross_entropy<T: Real>(logits: &Var<T>, labels: &[usize]) -> Var<T> {
    let (b, k) = mat_dims(&logits.shape);
    assert_eq!(b, labels.len(), "{} logit rows but {} labels", b, labels.len());
    for &l in labels {
        assert!(l < k, "label {} out of range for {} classes", l, k);
    }
    let v = logits.value();
    let mut loss = T::zero();
    for (row, &label) in labels.iter().enumerate() {
        let x = &v.data()[row * k..(row + 1) * k];
        let m = x.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let lse = m + x.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp()).ln();
        loss += lse - x[label];
    }
    loss = loss / T::from_f64(b as f64);
    logits.tape.push(
        Tensor::scalar(loss),
        Op::CrossEntropy { logits: logits.id, labels: labels.to_vec() },
    )
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

fn mat_dims(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a matrix, got shape {:?}", shape);
    (shape[0], shape[1])
}

/// Trailing-dimension broadcast: shapes equal, or the smaller operand is a
/// single element or a suffix of the larger shape.
fn broadcast_check(large: &[usize], small: &[usize]) -> bool {
    let small_numel: usize = small.iter().product();
    if small_numel == 1 {
        return true;
    }
    small.len() <= large.len() && large[large.len() - small.len()..] == *small
}

fn broadcast_apply<T: Real>(a: &Tensor<T>, b: &Tensor<T>, kind: BinKind) -> Tensor<T> {
    let f = |x: T, y: T| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape(), data);
    }
    if a.numel() >= b.numel() {
        assert!(
            broadcast_check(a.shape(), b.shape()),
            "shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        );
        let n = b.numel();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % n]))
            .collect();
        Tensor::from_vec(a.shape(), data)
    } else {
        assert!(
            broadcast_check(b.shape(), a.shape()),
            "shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        );
        let n = a.numel();
        let data = b
            .data()
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a.data()[i % n], y))
            .collect();
        Tensor::from_vec(b.shape(), data)
    }
}

/// Sums `grad` (shaped like the broadcast result) down to `small_numel`
/// elements by folding the leading block.
fn reduce_to<T: Real>(grad: &[T], small_numel: usize) -> Vec<T> {
    let mut out = vec![T::zero(); small_numel];
    for (i, &g) in grad.iter().enumerate() {
        out[i % small_numel] += g;
    }
    out
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn of(xshape: &[usize], kshape: &[usize], stride: usize, pad: usize) -> ConvGeom {
        assert_eq!(xshape.len(), 3, "conv input must be [H, W, C], got {:?}", xshape);
        assert_eq!(kshape.len(), 4, "kernel must be [kh, kw, Cin, Cout], got {:?}", kshape);
        assert!(stride >= 1, "stride must be positive");
        let (h, w, cin) = (xshape[0], xshape[1], xshape[2]);
        let (kh, kw, kcin, cout) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        assert_eq!(cin, kcin, "input channels {:?} vs kernel {:?}", xshape, kshape);
        let oh = (h + 2 * pad) as isize - kh as isize;
        let ow = (w + 2 * pad) as isize - kw as isize;
        assert!(
            oh >= 0 && ow >= 0,
            "conv output dims are not positive for input {:?} kernel {:?} pad {}",
            xshape,
            kshape,
            pad
        );
        ConvGeom {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: oh as usize / stride + 1,
            ow: ow as usize / stride + 1,
        }
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let q = g.kh * g.kw * g.cin;
    let mut cols = vec![T::zero(); g.oh * g.ow * q];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * q;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = row + (ky * g.kw + kx) * g.cin;
                    cols[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column rows back onto the image.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let q = g.kh * g.kw * g.cin;
    let mut x = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * q;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = row + (ky * g.kw + kx) * g.cin;
                    for c in 0..g.cin {
                        x[dst + c] += cols[src + c];
                    }
                }
            }
        }
    }
    x
}

/// `col2im(y . K^T)`: shared by conv2d's input gradient and the
/// conv_transpose2d forward pass.
fn conv_input_grad<T: Real>(y: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let q = g.kh * g.kw * g.cin;
    let rows = g.oh * g.ow;
    let mut dcols = vec![T::zero(); rows * q];
    unsafe {
        // K^T: element (i, j) of [Cout, q] reads k[j * cout + i].
        T::gemm(
            rows,
            g.cout,
            q,
            y.as_ptr(),
            g.cout as isize,
            1,
            k.as_ptr(),
            1,
            g.cout as isize,
            dcols.as_mut_ptr(),
            q as isize,
            1,
        );
    }
    col2im(&dcols, g)
}

fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..len {
                m = m.max(x.data()[base + j * inner]);
            }
            let mut z = T::zero();
            for j in 0..len {
                let e = (x.data()[base + j * inner] - m).exp();
                out[base + j * inner] = e;
                z += e;
            }
            for j in 0..len {
                out[base + j * inner] /= z;
            }
        }
    }
    Tensor::from_vec(shape, out)
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, numel: usize, add: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| vec![T::zero(); numel]);
    add(g);
}

fn backward_from<T: Real>(inner: &mut TapeInner<T>, seed: usize) {
    // Propagate into a fresh buffer so repeated backward calls push exactly
    // one unit of seed each; results fold into the persistent accumulators
    // at the end.
    let mut local: Vec<Option<Vec<T>>> = vec![None; inner.nodes.len()];
    local[seed] = Some(vec![T::one()]);
    for id in (0..inner.nodes.len()).rev() {
        let go = match local[id].clone() {
            Some(g) => g,
            None => continue,
        };
        let (nodes, grads) = (&inner.nodes, &mut local);
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let na = nodes[a].value.numel();
                let nb = nodes[b].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    if na == go.len() {
                        for (gi, &x) in g.iter_mut().zip(&go) {
                            *gi += x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&go, na)) {
                            *gi += x;
                        }
                    }
                });
                accumulate(&mut grads[b], nb, |g| {
                    if nb == go.len() {
                        for (gi, &x) in g.iter_mut().zip(&go) {
                            *gi += x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&go, nb)) {
                            *gi += x;
                        }
                    }
                });
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                let na = nodes[a].value.numel();
                let nb = nodes[b].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    if na == go.len() {
                        for (gi, &x) in g.iter_mut().zip(&go) {
                            *gi += x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&go, na)) {
                            *gi += x;
                        }
                    }
                });
                accumulate(&mut grads[b], nb, |g| {
                    if nb == go.len() {
                        for (gi, &x) in g.iter_mut().zip(&go) {
                            *gi -= x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&go, nb)) {
                            *gi -= x;
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let na = nodes[a].value.numel();
                let nb = nodes[b].value.numel();
                let out_len = go.len();
                // d a = go * broadcast(b); d b = reduce(go * broadcast(a)).
                let mut da = vec![T::zero(); out_len];
                let mut db = vec![T::zero(); out_len];
                let av = nodes[a].value.data();
                let bv = nodes[b].value.data();
                for i in 0..out_len {
                    da[i] = go[i] * bv[i % bv.len()];
                    db[i] = go[i] * av[i % av.len()];
                }
                accumulate(&mut grads[a], na, |g| {
                    if na == out_len {
                        for (gi, &x) in g.iter_mut().zip(&da) {
                            *gi += x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&da, na)) {
                            *gi += x;
                        }
                    }
                });
                accumulate(&mut grads[b], nb, |g| {
                    if nb == out_len {
                        for (gi, &x) in g.iter_mut().zip(&db) {
                            *gi += x;
                        }
                    } else {
                        for (gi, x) in g.iter_mut().zip(reduce_to(&db, nb)) {
                            *gi += x;
                        }
                    }
                });
            }
            Op::Scale { a, factor } => {
                let (a, factor) = (*a, *factor);
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for (gi, &x) in g.iter_mut().zip(&go) {
                        *gi += x * factor;
                    }
                });
            }
            Op::Tanh { a } => {
                let a = *a;
                let y = nodes[id].value.data();
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for i in 0..na {
                        g[i] += go[i] * (T::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Exp { a } => {
                let a = *a;
                let y = nodes[id].value.data();
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for i in 0..na {
                        g[i] += go[i] * y[i];
                    }
                });
            }
            Op::Relu { a } => {
                let a = *a;
                let y = nodes[id].value.data();
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for i in 0..na {
                        if y[i] > T::zero() {
                            g[i] += go[i];
                        }
                    }
                });
            }
            Op::Abs { a } => {
                let a = *a;
                let x = nodes[a].value.data().to_vec();
                let na = x.len();
                accumulate(&mut grads[a], na, |g| {
                    for i in 0..na {
                        if x[i] > T::zero() {
                            g[i] += go[i];
                        } else if x[i] < T::zero() {
                            g[i] -= go[i];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                let a = *a;
                let y = nodes[id].value.data();
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for i in 0..na {
                        g[i] += go[i] * y[i] * (T::one() - y[i]);
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = mat_dims(nodes[a].value.shape());
                let n = nodes[b].value.shape()[1];
                let av = nodes[a].value.data().as_ptr();
                let bv = nodes[b].value.data().as_ptr();
                accumulate(&mut grads[a], m * k, |g| unsafe {
                    // dA += dC . B^T
                    T::gemm(
                        m,
                        n,
                        k,
                        go.as_ptr(),
                        n as isize,
                        1,
                        bv,
                        1,
                        n as isize,
                        g.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                });
                accumulate(&mut grads[b], k * n, |g| unsafe {
                    // dB += A^T . dC
                    T::gemm(
                        k,
                        m,
                        n,
                        av,
                        1,
                        k as isize,
                        go.as_ptr(),
                        n as isize,
                        1,
                        g.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                });
            }
            Op::Transpose { a } => {
                let a = *a;
                let (m, n) = mat_dims(nodes[a].value.shape());
                accumulate(&mut grads[a], m * n, |g| {
                    for i in 0..n {
                        for j in 0..m {
                            g[j * n + i] += go[i * m + j];
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                let a = *a;
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for (gi, &x) in g.iter_mut().zip(&go) {
                        *gi += x;
                    }
                });
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (x, k, stride, pad) = (*x, *k, *stride, *pad);
                let g = ConvGeom::of(
                    nodes[x].value.shape(),
                    nodes[k].value.shape(),
                    stride,
                    pad,
                );
                let q = g.kh * g.kw * g.cin;
                let rows = g.oh * g.ow;
                let xv = nodes[x].value.data();
                let kv = nodes[k].value.data();
                let dx = conv_input_grad(&go, kv, &g);
                let cols = im2col(xv, &g);
                accumulate(&mut grads[x], dx.len(), |gr| {
                    for (gi, &v) in gr.iter_mut().zip(&dx) {
                        *gi += v;
                    }
                });
                accumulate(&mut grads[k], q * g.cout, |gr| unsafe {
                    // dK += cols^T . dY
                    T::gemm(
                        q,
                        rows,
                        g.cout,
                        cols.as_ptr(),
                        1,
                        q as isize,
                        go.as_ptr(),
                        g.cout as isize,
                        1,
                        gr.as_mut_ptr(),
                        g.cout as isize,
                        1,
                    );
                });
            }
            Op::ConvTranspose2d { x, k, stride, pad } => {
                let (x, k, stride, pad) = (*x, *k, *stride, *pad);
                // The forward output plays the image role in the geometry.
                let g = ConvGeom::of(
                    nodes[id].value.shape(),
                    nodes[k].value.shape(),
                    stride,
                    pad,
                );
                let q = g.kh * g.kw * g.cin;
                let rows = g.oh * g.ow;
                let yv = nodes[x].value.data();
                let kv = nodes[k].value.data();
                let cols = im2col(&go, &g);
                accumulate(&mut grads[x], rows * g.cout, |gr| unsafe {
                    // dY += im2col(dOut) . K
                    T::gemm(
                        rows,
                        q,
                        g.cout,
                        cols.as_ptr(),
                        q as isize,
                        1,
                        kv.as_ptr(),
                        g.cout as isize,
                        1,
                        gr.as_mut_ptr(),
                        g.cout as isize,
                        1,
                    );
                });
                accumulate(&mut grads[k], q * g.cout, |gr| unsafe {
                    // dK += im2col(dOut)^T . Y
                    T::gemm(
                        q,
                        rows,
                        g.cout,
                        cols.as_ptr(),
                        1,
                        q as isize,
                        yv.as_ptr(),
                        g.cout as isize,
                        1,
                        gr.as_mut_ptr(),
                        g.cout as isize,
                        1,
                    );
                });
            }
            Op::Softmax { a, axis } => {
                let (a, axis) = (*a, *axis);
                let y = nodes[id].value.clone();
                let shape = y.shape();
                let len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let na = y.numel();
                accumulate(&mut grads[a], na, |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = T::zero();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dot += go[idx] * y.data()[idx];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                g[idx] += y.data()[idx] * (go[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let l = *logits;
                let labels = labels.clone();
                let v = nodes[l].value.clone();
                let (b, k) = mat_dims(v.shape());
                let gscale = go[0] / T::from_f64(b as f64);
                accumulate(&mut grads[l], b * k, |g| {
                    for (row, &label) in labels.iter().enumerate() {
                        let x = &v.data()[row * k..(row + 1) * k];
                        let m = x.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
                        let z = x.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
                        for j in 0..k {
                            let s = (x[j] - m).exp() / z;
                            let delta = if j == label { T::one() } else { T::zero() };
                            g[row * k + j] += gscale * (s - delta);
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                let a = *a;
                let na = nodes[a].value.numel();
                accumulate(&mut grads[a], na, |g| {
                    for gi in g.iter_mut() {
                        *gi += go[0];
                    }
                });
            }
            Op::Stack { parts } => {
                let parts = parts.clone();
                let chunk = go.len() / parts.len();
                for (i, &p) in parts.iter().enumerate() {
                    let np = nodes[p].value.numel();
                    accumulate(&mut grads[p], np, |g| {
                        for (gi, &x) in g.iter_mut().zip(&go[i * chunk..(i + 1) * chunk]) {
                            *gi += x;
                        }
                    });
                }
            }
            Op::IndexRows { a, rows } => {
                let a = *a;
                let rows = rows.clone();
                let na = nodes[a].value.numel();
                let chunk = na / nodes[a].value.shape()[0];
                accumulate(&mut grads[a], na, |g| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..chunk {
                            g[r * chunk + j] += go[i * chunk + j];
                        }
                    }
                });
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (m, ca) = mat_dims(nodes[a].value.shape());
                let cb = nodes[b].value.shape()[1];
                accumulate(&mut grads[a], m * ca, |g| {
                    for i in 0..m {
                        for j in 0..ca {
                            g[i * ca + j] += go[i * (ca + cb) + j];
                        }
                    }
                });
                accumulate(&mut grads[b], m * cb, |g| {
                    for i in 0..m {
                        for j in 0..cb {
                            g[i * cb + j] += go[i * (ca + cb) + ca + j];
                        }
                    }
                });
            }
        }
    }
    for (slot, fresh) in inner.grads.iter_mut().zip(local) {
        if let Some(f) = fresh {
            let g = slot.get_or_insert_with(|| vec![T::zero(); f.len()]);
            for (gi, x) in g.iter_mut().zip(f) {
                *gi += x;
            }
        }
    }
}
