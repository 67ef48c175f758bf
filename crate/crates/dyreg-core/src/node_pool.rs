//! Triangular-kernel pooling and its adjoint re-mapping.
//!
//! Each node owns a separable kernel over the feature grid. Along one axis
//! the weight at integer position `p` is `max(0, w - |c + dx - p|)`: a
//! triangle of half-width `w` around the region center. `w = 1` degenerates
//! to bilinear interpolation weights. Pooling contracts the grid against
//! the kernel; re-mapping is the exact transpose, scattering node features
//! back with the same weights. Neither is normalized by kernel mass.

use crate::diffcore::{stack, Binding, Initializer, ParamStore, Real, Tensor, Var};
use crate::region_gen::RegionVars;

/// Exact axis kernel values at positions `0..size`.
///
/// Panics if `w <= 0`; the constraint map upstream guarantees positivity.
pub fn kernel_1d<T: Real>(c: T, delta: T, w: T, size: usize) -> Vec<T> {
    assert!(w > T::zero(), "kernel half-width must be positive, got {w}");
    let center = c + delta;
    (0..size)
        .map(|p| (w - (center - T::from_f64(p as f64)).abs()).max(T::zero()))
        .collect()
}

/// Separable 2-D kernel `[H, W]`: outer product of the axis kernels.
pub fn kernel_2d<T: Real>(
    center_x: T,
    center_y: T,
    w: T,
    h: T,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let kx = kernel_1d(center_x, T::zero(), w, width);
    let ky = kernel_1d(center_y, T::zero(), h, height);
    let mut data = Vec::with_capacity(height * width);
    for y in &ky {
        for x in &kx {
            data.push(*y * *x);
        }
    }
    Tensor::from_vec(&[height, width], data)
}

/// Tape version of [`kernel_1d`]: differentiable w.r.t. `delta` and `w`
/// away from the kink points of the triangle.
pub fn kernel_1d_var<T: Real>(c: f64, delta: &Var<T>, w: &Var<T>, size: usize) -> Var<T> {
    assert!(
        w.value().item() > T::zero(),
        "kernel half-width must be positive"
    );
    let tape = delta.tape().clone();
    let positions = tape.constant(Tensor::from_vec(
        &[size],
        (0..size).map(|p| T::from_f64(p as f64)).collect(),
    ));
    let center = delta.shift(T::from_f64(c));
    w.sub(&center.sub(&positions).abs()).relu()
}

/// Tape kernel `[H, W]` for one region.
pub fn kernel_2d_var<T: Real>(region: &RegionVars<T>, height: usize, width: usize) -> Var<T> {
    let kx = kernel_1d_var(region.ref_x, &region.dx, &region.w, width);
    let ky = kernel_1d_var(region.ref_y, &region.dy, &region.h, height);
    ky.reshape(&[height, 1]).matmul(&kx.reshape(&[1, width]))
}

/// Kernel-weighted sum of the input: `v_c = sum_p K(p) x[p, c]`.
/// `x: [H, W, C]`, `kernel: [H, W]`; returns `[1, C]`.
pub fn pool_node<T: Real>(x: &Var<T>, kernel: &Var<T>) -> Var<T> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(
        kernel.shape(),
        &[h, w],
        "kernel {:?} does not match input {:?}",
        kernel.shape(),
        x.shape()
    );
    kernel.reshape(&[1, h * w]).matmul(&x.reshape(&[h * w, c]))
}

/// Registers the positional-embedding projection: a `(H W) x C` linear map
/// of the flattened kernel, added to the pooled feature by the caller.
pub fn register_positional<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    height: usize,
    width: usize,
    channels: usize,
) {
    let hw = height * width;
    store.insert(format!("{prefix}.pe.proj"), init.fan_in(&[hw, channels], hw));
}

/// `projection^T . flatten(kernel)` as `[1, C]`.
pub fn positional_embedding<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    kernel: &Var<T>,
) -> Var<T> {
    let proj = binding.leaf(&format!("{prefix}.pe.proj"));
    let hw = kernel.numel();
    assert_eq!(
        proj.shape()[0],
        hw,
        "positional projection expects {} kernel weights, got {:?}",
        proj.shape()[0],
        kernel.shape()
    );
    kernel.reshape(&[1, hw]).matmul(&proj)
}

/// Scatters node features back onto the grid with the pooling kernels:
/// `y[p, c] = sum_i K_i(p) v[i, c]`.
///
/// `nodes: [N, C]`, one kernel `[H, W]` per node; returns `[H, W, C]`.
pub fn remap<T: Real>(nodes: &Var<T>, kernels: &[Var<T>]) -> Var<T> {
    let n = nodes.shape()[0];
    let c = nodes.shape()[1];
    assert_eq!(
        kernels.len(),
        n,
        "{} kernels for {} node rows",
        kernels.len(),
        n
    );
    let (h, w) = (kernels[0].shape()[0], kernels[0].shape()[1]);
    let flat: Vec<Var<T>> = kernels.iter().map(|k| k.reshape(&[h * w])).collect();
    let kmat = stack(&flat); // [N, H*W]
    kmat.transpose().matmul(nodes).reshape(&[h, w, c])
}
