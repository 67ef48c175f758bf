//! Small three-stage residual conv backbone, applied per frame.
//!
//! Each stage halves the spatial dims with a stride-2 conv and follows with
//! one residual block. No batch statistics anywhere: a learnable
//! per-channel scale and shift stands in, which keeps the forward pass a
//! pure function of parameters and input.

use crate::diffcore::{scale_shift, Binding, Initializer, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
}

impl BackboneConfig {
    pub fn stage_count(&self) -> usize {
        self.widths.len()
    }

    /// Spatial extent after `stage` stages of an input `size` pixels wide.
    pub fn dims_after(&self, size: usize, stage: usize) -> usize {
        let mut s = size;
        for _ in 0..stage {
            s = (s - 1) / 2 + 1;
        }
        s
    }
}

fn conv_ss<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    path: &str,
    kin: usize,
    kout: usize,
) {
    store.insert(format!("{path}.w"), init.fan_in(&[3, 3, kin, kout], 9 * kin));
    store.insert(format!("{path}.scale"), Tensor::filled(&[kout], T::one()));
    store.insert(format!("{path}.shift"), Tensor::zeros(&[kout]));
}

pub fn register<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    cfg: &BackboneConfig,
) {
    let mut cin = cfg.in_channels;
    for (i, &cout) in cfg.widths.iter().enumerate() {
        let s = i + 1;
        conv_ss(store, init, &format!("{prefix}.s{s}.down"), cin, cout);
        conv_ss(store, init, &format!("{prefix}.s{s}.r1"), cout, cout);
        conv_ss(store, init, &format!("{prefix}.s{s}.r2"), cout, cout);
        cin = cout;
    }
}

fn conv_ss_forward<T: Real>(
    binding: &mut Binding<'_, T>,
    path: &str,
    x: &Var<T>,
    stride: usize,
) -> Var<T> {
    let w = binding.leaf(&format!("{path}.w"));
    let scale = binding.leaf(&format!("{path}.scale"));
    let shift = binding.leaf(&format!("{path}.shift"));
    scale_shift(&x.conv2d(&w, stride, 1), &scale, &shift)
}

/// One stage: stride-2 downsample then a residual block.
pub fn stage_forward<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    stage: usize,
    x: &Var<T>,
) -> Var<T> {
    let base = format!("{prefix}.s{stage}");
    let down = conv_ss_forward(binding, &format!("{base}.down"), x, 2).relu();
    let h = conv_ss_forward(binding, &format!("{base}.r1"), &down, 1).relu();
    let h = conv_ss_forward(binding, &format!("{base}.r2"), &h, 1);
    h.add(&down).relu()
}
