//! Per-frame, per-node region prediction.
//!
//! The pipeline runs, per frame: a small conv net condenses the input
//! feature map into a saliency map; per-node readout functions turn the map
//! into latent vectors; a node-shared GRU threads those latents through
//! time; a linear projection gated by a learnable `gamma` produces raw
//! region parameters, which a constraint map turns into valid in-frame
//! regions. With `gamma` at its zero initialization every region sits at
//! its reference point with the configured initial size.

use serde::{Deserialize, Serialize};

use crate::diffcore::{
    gru_cell, register_gru, Binding, GruVars, Initializer, ParamStore, Real, Tensor, Var,
};
use crate::error::{Error, Result};

/// The stored `gamma` parameter is this factor smaller than the effective
/// gate: the forward pass multiplies it back, which multiplies its gradient
/// by the same factor. The effective gate still initializes to exactly zero.
pub const GAMMA_GAIN: f64 = 64.0;

/// Readout architecture for the per-node latent functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GVariant {
    /// One distinct fully connected layer per node over the flattened map.
    FullFc,
    /// Per-node attention-weighted global average pooling over the map
    /// augmented with sinusoidal positional embeddings.
    LightPool,
}

/// Whether region sizes are predicted or pinned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeMode {
    Predicted,
    /// Half-extents fixed at these feature-map values; only offsets are
    /// predicted (two-column projection).
    Fixed { w: f64, h: f64 },
}

/// Spatial geometry of the saliency network, derived from the input dims.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaliencyGeom {
    pub stride_a: usize,
    pub stride_b: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn conv_out(size: usize, stride: usize) -> usize {
    // 3x3 kernel, pad 1
    (size - 1) / stride + 1
}

fn tconv_out(size: usize, stride: usize) -> usize {
    // 3x3 kernel, pad 1
    (size - 1) * stride + 1
}

impl SaliencyGeom {
    /// Picks strides for the two downsampling convs (and the matching
    /// transposed conv) so the output stays at 6 or larger.
    pub fn for_input(h: usize, w: usize) -> SaliencyGeom {
        let stride_a = if h.min(w) >= 12 { 2 } else { 1 };
        let (h1, w1) = (conv_out(h, stride_a), conv_out(w, stride_a));
        let stride_b = if h1.min(w1) >= 7 { 2 } else { 1 };
        let (h2, w2) = (conv_out(h1, stride_b), conv_out(w1, stride_b));
        SaliencyGeom {
            stride_a,
            stride_b,
            out_h: tconv_out(h2, stride_b),
            out_w: tconv_out(w2, stride_b),
        }
    }
}

/// Static description of one region-generation module.
#[derive(Clone, Debug)]
pub struct RegionGenConfig {
    pub nodes: usize,
    pub in_channels: usize,
    pub latent_channels: usize,
    pub height: usize,
    pub width: usize,
    pub h_init: f64,
    pub w_init: f64,
    pub reference_points: Vec<(f64, f64)>,
    pub g_variant: GVariant,
    pub size_mode: SizeMode,
    pub use_gru: bool,
    pub geom: SaliencyGeom,
}

impl RegionGenConfig {
    /// Validates and completes a config. `reference_points` must be strictly
    /// interior: the constraint map is singular at 0 and at the frame edge.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nodes: usize,
        in_channels: usize,
        latent_channels: usize,
        height: usize,
        width: usize,
        reference_points: Vec<(f64, f64)>,
        g_variant: GVariant,
        size_mode: SizeMode,
        use_gru: bool,
    ) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidConfig("node count must be at least 1".into()));
        }
        if reference_points.len() != nodes {
            return Err(Error::InvalidConfig(format!(
                "{} reference points for {} nodes",
                reference_points.len(),
                nodes
            )));
        }
        for &(cx, cy) in &reference_points {
            if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
                return Err(Error::InvalidConfig(format!(
                    "reference point ({cx}, {cy}) must be strictly inside (0, {width}) x (0, {height})"
                )));
            }
        }
        let geom = SaliencyGeom::for_input(height, width);
        if geom.out_h < 6 || geom.out_w < 6 {
            return Err(Error::InvalidConfig(format!(
                "saliency map {}x{} is smaller than 6x6 (input {}x{})",
                geom.out_h, geom.out_w, height, width
            )));
        }
        Ok(RegionGenConfig {
            nodes,
            in_channels,
            latent_channels,
            height,
            width,
            h_init: height as f64 / 6.0,
            w_init: width as f64 / 6.0,
            reference_points,
            g_variant,
            size_mode,
            use_gru,
            geom,
        })
    }

    /// Reference points all at the exact frame center, the default layout.
    pub fn center_references(nodes: usize, height: usize, width: usize) -> Vec<(f64, f64)> {
        vec![((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0); nodes]
    }

    /// `sqrt(N) x sqrt(N)` grid of cell centers; `nodes` must be square.
    pub fn grid_references(nodes: usize, height: usize, width: usize) -> Result<Vec<(f64, f64)>> {
        let side = (nodes as f64).sqrt().round() as usize;
        if side * side != nodes {
            return Err(Error::InvalidConfig(format!(
                "grid reference layout needs a square node count, got {nodes}"
            )));
        }
        let mut refs = Vec::with_capacity(nodes);
        for row in 0..side {
            for col in 0..side {
                refs.push((
                    (col as f64 + 0.5) * width as f64 / side as f64 - 0.5,
                    (row as f64 + 0.5) * height as f64 / side as f64 - 0.5,
                ));
            }
        }
        Ok(refs)
    }

    /// Number of projection columns: 4 when sizes are predicted, else 2.
    pub fn proj_cols(&self) -> usize {
        match self.size_mode {
            SizeMode::Predicted => 4,
            SizeMode::Fixed { .. } => 2,
        }
    }
}

/// Constrained region for one node at one frame, on the tape.
///
/// `dx`/`dy` are offsets from the reference point; `w`/`h` are half-extents.
/// All in feature-map units.
#[derive(Clone)]
pub struct RegionVars<T: Real> {
    pub dx: Var<T>,
    pub dy: Var<T>,
    pub w: Var<T>,
    pub h: Var<T>,
    pub ref_x: f64,
    pub ref_y: f64,
}

impl<T: Real> RegionVars<T> {
    /// `(center_x, center_y, w, h)` as plain values in feature-map units.
    pub fn to_values(&self) -> (f64, f64, f64, f64) {
        (
            self.ref_x + self.dx.value().item().as_f64(),
            self.ref_y + self.dy.value().item().as_f64(),
            self.w.value().item().as_f64(),
            self.h.value().item().as_f64(),
        )
    }
}

/// Registers every parameter this module owns under `prefix`.
pub fn register<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    cfg: &RegionGenConfig,
) {
    let c = cfg.in_channels;
    let cl = cfg.latent_channels;
    let (gh, gw) = (cfg.geom.out_h, cfg.geom.out_w);

    store.insert(format!("{prefix}.f.c1.w"), init.fan_in(&[1, 1, c, cl], c));
    store.insert(format!("{prefix}.f.c1.b"), Tensor::zeros(&[cl]));
    for layer in ["c2", "c3", "t4", "c5"] {
        store.insert(
            format!("{prefix}.f.{layer}.w"),
            init.fan_in(&[3, 3, cl, cl], 9 * cl),
        );
        store.insert(format!("{prefix}.f.{layer}.b"), Tensor::zeros(&[cl]));
    }

    match cfg.g_variant {
        GVariant::FullFc => {
            let flat = gh * gw * cl;
            for i in 0..cfg.nodes {
                store.insert(format!("{prefix}.g.n{i:02}.w"), init.fan_in(&[flat, cl], flat));
                store.insert(format!("{prefix}.g.n{i:02}.b"), Tensor::zeros(&[cl]));
            }
        }
        GVariant::LightPool => {
            store.insert(
                format!("{prefix}.g.attn.w"),
                init.fan_in(&[1, 1, cl, cfg.nodes], cl),
            );
            store.insert(format!("{prefix}.g.attn.b"), Tensor::zeros(&[cfg.nodes]));
            store.insert(
                format!("{prefix}.g.proj.w"),
                init.fan_in(&[2 * cl, cl], 2 * cl),
            );
            store.insert(format!("{prefix}.g.proj.b"), Tensor::zeros(&[cl]));
        }
    }

    if cfg.use_gru {
        register_gru(store, init, &format!("{prefix}.gru"), cl, cl);
    }

    store.insert(
        format!("{prefix}.wo"),
        init.fan_in(&[cl, cfg.proj_cols()], cl),
    );
    // gamma = 0 pins every region to its reference point at initialization
    store.insert(format!("{prefix}.gamma"), Tensor::zeros(&[cfg.proj_cols()]));
}

fn conv_block<T: Real>(
    binding: &mut Binding<'_, T>,
    path: &str,
    x: &Var<T>,
    stride: usize,
    pad: usize,
) -> Var<T> {
    let w = binding.leaf(&format!("{path}.w"));
    let b = binding.leaf(&format!("{path}.b"));
    x.conv2d(&w, stride, pad).add(&b)
}

fn tconv_block<T: Real>(
    binding: &mut Binding<'_, T>,
    path: &str,
    x: &Var<T>,
    stride: usize,
    pad: usize,
) -> Var<T> {
    let w = binding.leaf(&format!("{path}.w"));
    let b = binding.leaf(&format!("{path}.b"));
    x.conv_transpose2d(&w, stride, pad).add(&b)
}

/// Saliency network: 1x1 projection, two convs, a transposed conv and a
/// final conv, relu between layers. Parameters are shared across time.
pub fn saliency_map<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    x: &Var<T>,
    cfg: &RegionGenConfig,
) -> Var<T> {
    assert_eq!(
        x.shape(),
        &[cfg.height, cfg.width, cfg.in_channels],
        "saliency input shape mismatch"
    );
    let g = cfg.geom;
    let h = conv_block(binding, &format!("{prefix}.f.c1"), x, 1, 0).relu();
    let h = conv_block(binding, &format!("{prefix}.f.c2"), &h, g.stride_a, 1).relu();
    let h = conv_block(binding, &format!("{prefix}.f.c3"), &h, g.stride_b, 1).relu();
    let h = tconv_block(binding, &format!("{prefix}.f.t4"), &h, g.stride_b, 1).relu();
    conv_block(binding, &format!("{prefix}.f.c5"), &h, 1, 1)
}

/// Sinusoidal positional embedding table for a `gh x gw` grid, `channels`
/// wide: the first half encodes x, the second half y, alternating sin/cos
/// over a geometric frequency ladder.
pub fn positional_table<T: Real>(gh: usize, gw: usize, channels: usize) -> Tensor<T> {
    let half_x = channels.div_ceil(2);
    let half_y = channels - half_x;
    let mut data = Vec::with_capacity(gh * gw * channels);
    let fill = |pos: f64, j: usize, half: usize| -> f64 {
        let pair = (j / 2) as f64;
        let denom = 10000f64.powf(2.0 * pair / half.max(1) as f64);
        if j % 2 == 0 {
            (pos / denom).sin()
        } else {
            (pos / denom).cos()
        }
    };
    for y in 0..gh {
        for x in 0..gw {
            for j in 0..half_x {
                data.push(T::from_f64(fill(x as f64, j, half_x)));
            }
            for j in 0..half_y {
                data.push(T::from_f64(fill(y as f64, j, half_y)));
            }
        }
    }
    Tensor::from_vec(&[gh * gw, channels], data)
}

/// Per-node latent readout of the saliency map. Returns one `[1, C']` row
/// per node.
pub fn node_latents<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    m: &Var<T>,
    cfg: &RegionGenConfig,
) -> Vec<Var<T>> {
    let (gh, gw, cl) = (cfg.geom.out_h, cfg.geom.out_w, cfg.latent_channels);
    assert_eq!(m.shape(), &[gh, gw, cl], "saliency map shape mismatch");
    match cfg.g_variant {
        GVariant::FullFc => {
            let flat = m.reshape(&[1, gh * gw * cl]);
            (0..cfg.nodes)
                .map(|i| {
                    let w = binding.leaf(&format!("{prefix}.g.n{i:02}.w"));
                    let b = binding.leaf(&format!("{prefix}.g.n{i:02}.b"));
                    flat.matmul(&w).add(&b)
                })
                .collect()
        }
        GVariant::LightPool => {
            let wa = binding.leaf(&format!("{prefix}.g.attn.w"));
            let ba = binding.leaf(&format!("{prefix}.g.attn.b"));
            let logits = m.conv2d(&wa, 1, 0).add(&ba).reshape(&[gh * gw, cfg.nodes]);
            let weights = logits.softmax(0).transpose(); // [N, gh*gw]
            let pe = binding
                .tape()
                .constant(positional_table::<T>(gh, gw, cl));
            let augmented = crate::diffcore::concat_cols(&m.reshape(&[gh * gw, cl]), &pe);
            let wp = binding.leaf(&format!("{prefix}.g.proj.w"));
            let bp = binding.leaf(&format!("{prefix}.g.proj.b"));
            (0..cfg.nodes)
                .map(|i| {
                    let row = weights.index_rows(&[i]); // [1, gh*gw]
                    row.matmul(&augmented).matmul(&wp).add(&bp)
                })
                .collect()
        }
    }
}

/// One recurrent step of the node-shared GRU; identity pass-through when
/// the config disables recurrence.
pub fn recurrent_update<T: Real>(
    z_prev: &Var<T>,
    m_hat: &Var<T>,
    gru: Option<&GruVars<T>>,
) -> Var<T> {
    match gru {
        Some(p) => gru_cell(m_hat, z_prev, p),
        None => m_hat.clone(),
    }
}

/// Offset `a` such that `(size/2) * tanh(raw + a) + (size/2 - c)` is zero at
/// `raw = 0`, refined so the cancellation is exact in `T`'s arithmetic when
/// a representable offset exists.
pub fn constraint_shift<T: Real>(c: f64, size: f64) -> T {
    let half = T::from_f64(size / 2.0);
    let offset = T::from_f64(size / 2.0 - c);
    let residual = |a: T| half * a.tanh() + offset;
    let mut a = T::from_f64((2.0 * c / size - 1.0).atanh());
    // Newton polish toward an exact zero of the full float expression.
    for _ in 0..4 {
        let r = residual(a);
        if r == T::zero() {
            return a;
        }
        let slope = half * (T::one() - a.tanh() * a.tanh());
        if slope == T::zero() {
            break;
        }
        a = a - r / slope;
    }
    // Scan a few neighbors for the smallest residual.
    let mut best = a;
    let mut best_r = residual(a).abs();
    for step in 1..=4 {
        for dir in [-1.0, 1.0] {
            let eps = T::from_f64(dir * step as f64) * a.abs().max(T::one()) * T::epsilon();
            let cand = a + eps;
            let r = residual(cand).abs();
            if r < best_r {
                best = cand;
                best_r = r;
            }
        }
    }
    best
}

/// Applies the projection and constraint map to one node's latent state.
///
/// `o~ = gamma * (z W_o)`; sizes go through `exp` scaled by the initial
/// half-extents, offsets through a shifted `tanh` that keeps centers inside
/// `[0, W] x [0, H]`.
pub fn project_and_constrain<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    z: &Var<T>,
    cfg: &RegionGenConfig,
    node_index: usize,
) -> RegionVars<T> {
    let wo = binding.leaf(&format!("{prefix}.wo"));
    let gamma = binding
        .leaf(&format!("{prefix}.gamma"))
        .scale(T::from_f64(GAMMA_GAIN));
    let cols = cfg.proj_cols();
    let raw = z.matmul(&wo).mul(&gamma).reshape(&[cols, 1]);
    let comp = |i: usize| raw.index_rows(&[i]).reshape(&[1]);

    let (ref_x, ref_y) = cfg.reference_points[node_index];
    let de_x = constrain_offset(&comp(0), ref_x, cfg.width as f64);
    let de_y = constrain_offset(&comp(1), ref_y, cfg.height as f64);
    let (w, h) = match cfg.size_mode {
        SizeMode::Predicted => (
            comp(2).exp().scale(T::from_f64(cfg.w_init)),
            comp(3).exp().scale(T::from_f64(cfg.h_init)),
        ),
        SizeMode::Fixed { w, h } => (
            binding.tape().scalar(T::from_f64(w)),
            binding.tape().scalar(T::from_f64(h)),
        ),
    };
    RegionVars { dx: de_x, dy: de_y, w, h, ref_x, ref_y }
}

fn constrain_offset<T: Real>(raw: &Var<T>, reference: f64, size: f64) -> Var<T> {
    let shift = constraint_shift::<T>(reference, size);
    let half = T::from_f64(size / 2.0);
    raw.shift(shift)
        .tanh()
        .scale(half)
        .shift(T::from_f64(size / 2.0 - reference))
}

/// Recurrent state plus bound GRU weights for one region generator.
pub struct RegionState<T: Real> {
    gru: Option<GruVars<T>>,
    z: Vec<Var<T>>,
}

impl<T: Real> RegionState<T> {
    /// Fresh per-video state: zero vectors, one per node.
    pub fn new(binding: &mut Binding<'_, T>, prefix: &str, cfg: &RegionGenConfig) -> Self {
        let gru = cfg
            .use_gru
            .then(|| GruVars::bind(binding, &format!("{prefix}.gru")));
        let zero = Tensor::zeros(&[1, cfg.latent_channels]);
        let z = (0..cfg.nodes)
            .map(|_| binding.tape().constant(zero.clone()))
            .collect();
        RegionState { gru, z }
    }

    /// Advances all nodes one frame given the saliency map, producing this
    /// frame's regions.
    pub fn step(
        &mut self,
        binding: &mut Binding<'_, T>,
        prefix: &str,
        m: &Var<T>,
        cfg: &RegionGenConfig,
    ) -> Vec<RegionVars<T>> {
        let latents = node_latents(binding, prefix, m, cfg);
        latents
            .into_iter()
            .enumerate()
            .map(|(i, m_hat)| {
                let z = recurrent_update(&self.z[i], &m_hat, self.gru.as_ref());
                self.z[i] = z.clone();
                project_and_constrain(binding, prefix, &z, cfg, i)
            })
            .collect()
    }
}

/// Full pipeline over a frame sequence: per frame saliency, readout,
/// recurrence and constraint. Returns regions indexed `[frame][node]`.
pub fn generate_regions<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    frames: &[Var<T>],
    cfg: &RegionGenConfig,
) -> Vec<Vec<RegionVars<T>>> {
    assert!(!frames.is_empty(), "need at least one frame");
    let mut state = RegionState::new(binding, prefix, cfg);
    frames
        .iter()
        .map(|x| {
            let m = saliency_map(binding, prefix, x, cfg);
            state.step(binding, prefix, &m, cfg)
        })
        .collect()
}
