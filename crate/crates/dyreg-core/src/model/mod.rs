//! Model assembly: backbone, region-graph modules at configurable stages,
//! classifier head, and every node-ablation variant behind one config.

pub mod backbone;
pub mod coords;

use serde::{Deserialize, Serialize};

use crate::diffcore::{stack, Binding, Initializer, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::node_pool::{kernel_2d_var, pool_node, positional_embedding, register_positional, remap};
use crate::region_gen::{
    self, GVariant, RegionGenConfig, RegionState, RegionVars, SizeMode,
};
use crate::st_gnn::{self, GnnConfig};
use crate::syncshapes::{DatasetConfig, GtBox, VideoSample};

use backbone::BackboneConfig;

/// Node ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Constant grid regions, nothing predicted.
    Fixed,
    /// Learnable but input-independent latents.
    Static,
    /// Regions predicted once per video from the time-averaged saliency map.
    ConstantTime,
    /// Offsets predicted, sizes pinned at `H / lambda`.
    PositionOnly,
    /// Offsets and sizes predicted per frame.
    Full,
    /// Global attention maps instead of localized kernels.
    Semantic,
    /// Regions read off the ground-truth boxes.
    OracleBoxes,
}

pub const VARIANT_NAMES: [&str; 7] = [
    "fixed",
    "static",
    "constant_time",
    "position_only",
    "full",
    "semantic",
    "oracle_boxes",
];

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Variant::Fixed),
            "static" => Ok(Variant::Static),
            "constant_time" => Ok(Variant::ConstantTime),
            "position_only" => Ok(Variant::PositionOnly),
            "full" => Ok(Variant::Full),
            "semantic" => Ok(Variant::Semantic),
            "oracle_boxes" => Ok(Variant::OracleBoxes),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}'; valid variants: {}",
                VARIANT_NAMES.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Fixed => "fixed",
            Variant::Static => "static",
            Variant::ConstantTime => "constant_time",
            Variant::PositionOnly => "position_only",
            Variant::Full => "full",
            Variant::Semantic => "semantic",
            Variant::OracleBoxes => "oracle_boxes",
        };
        f.write_str(name)
    }
}

/// Reference-point layout for the region generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefLayout {
    Center,
    Grid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    /// Stages (1-based) after which a region-graph module runs.
    pub insertion_stages: Vec<usize>,
    pub nodes: usize,
    pub gnn_iterations: usize,
    pub latent_channels: usize,
    pub variant: Variant,
    pub use_region_gru: bool,
    /// Pins region half-extents at `H / lambda`; only meaningful for the
    /// position-only variant (default 6 there).
    pub fixed_size_lambda: Option<f64>,
    pub g_variant: GVariant,
    /// Defaults to grid for fixed/static, center otherwise.
    pub reference_layout: Option<RefLayout>,
    pub residual: bool,
    /// Defaults to the dataset's label count.
    pub num_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![16, 32, 64],
            insertion_stages: vec![2],
            nodes: 9,
            gnn_iterations: 3,
            latent_channels: 16,
            variant: Variant::Full,
            use_region_gru: true,
            fixed_size_lambda: None,
            g_variant: GVariant::FullFc,
            reference_layout: None,
            residual: true,
            num_classes: None,
        }
    }
}

/// One region-graph module placement.
#[derive(Clone, Debug)]
pub struct Site {
    pub stage: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub prefix: String,
    pub refs: Vec<(f64, f64)>,
    /// Default half-extents `(w, h)` in feature units.
    pub default_half: (f64, f64),
    pub region_cfg: Option<RegionGenConfig>,
    pub gnn: GnnConfig,
}

/// Normalized `[0, 1]` region boxes per frame and node.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTrace {
    /// `[frame][node]`, each `(cx, cy, w, h)` with half-extent sizes.
    pub frames: Vec<Vec<TraceBox>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

pub struct Model<T: Real> {
    pub dataset: DatasetConfig,
    pub cfg: ModelConfig,
    pub backbone: BackboneConfig,
    pub sites: Vec<Site>,
    pub num_classes: usize,
    pub params: ParamStore<T>,
}

/// Everything one forward pass produces on the tape.
pub struct ItemForward<T: Real> {
    pub logits: Var<T>,
    /// Per site: regions `[frame][node]`, absent for the semantic variant.
    pub site_regions: Vec<Option<Vec<Vec<RegionVars<T>>>>>,
    /// Per site.
    pub traces: Vec<RegionTrace>,
}

impl<T: Real> Model<T> {
    /// Builds a model with deterministic initialization from `seed`.
    pub fn build(cfg: ModelConfig, dataset: DatasetConfig, seed: u64) -> Result<Model<T>> {
        dataset.validate()?;
        if cfg.widths.is_empty() {
            return Err(Error::InvalidConfig("backbone needs at least one stage".into()));
        }
        let num_classes = match cfg.num_classes {
            None => dataset.num_labels(),
            Some(n) if n == dataset.num_labels() => n,
            Some(n) => {
                return Err(Error::InvalidConfig(format!(
                    "num_classes {n} does not match the dataset's {}",
                    dataset.num_labels()
                )))
            }
        };
        if cfg.insertion_stages.is_empty() {
            return Err(Error::InvalidConfig("need at least one insertion stage".into()));
        }
        let mut stages = cfg.insertion_stages.clone();
        stages.sort_unstable();
        stages.dedup();
        if stages.len() != cfg.insertion_stages.len() {
            return Err(Error::InvalidConfig("duplicate insertion stages".into()));
        }
        let backbone_cfg = BackboneConfig { in_channels: 1, widths: cfg.widths.clone() };
        for &s in &stages {
            if s == 0 || s > backbone_cfg.stage_count() {
                return Err(Error::InvalidConfig(format!(
                    "insertion stage {s} does not exist (1..={})",
                    backbone_cfg.stage_count()
                )));
            }
            let dims = backbone_cfg.dims_after(dataset.frame_size, s);
            if dims < 8 {
                return Err(Error::InvalidConfig(format!(
                    "features at stage {s} are {dims}x{dims}, need at least 8x8"
                )));
            }
        }

        let mut cfg = ModelConfig { insertion_stages: stages, num_classes: Some(num_classes), ..cfg };
        match cfg.variant {
            Variant::PositionOnly => {
                let lambda = cfg.fixed_size_lambda.unwrap_or(6.0);
                if lambda <= 0.0 {
                    return Err(Error::InvalidConfig("fixed_size_lambda must be positive".into()));
                }
                cfg.fixed_size_lambda = Some(lambda);
            }
            _ => {
                if cfg.fixed_size_lambda.is_some() {
                    return Err(Error::InvalidConfig(
                        "fixed_size_lambda only applies to the position_only variant".into(),
                    ));
                }
            }
        }
        let layout = cfg.reference_layout.unwrap_or(match cfg.variant {
            Variant::Fixed | Variant::Static => RefLayout::Grid,
            _ => RefLayout::Center,
        });
        cfg.reference_layout = Some(layout);

        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        backbone::register(&mut params, &mut init, "backbone", &backbone_cfg);

        let mut sites = Vec::new();
        for &stage in &cfg.insertion_stages {
            let dims = backbone_cfg.dims_after(dataset.frame_size, stage);
            let channels = cfg.widths[stage - 1];
            let prefix = format!("dyreg{stage}");
            let refs = match layout {
                RefLayout::Center => RegionGenConfig::center_references(cfg.nodes, dims, dims),
                RefLayout::Grid => RegionGenConfig::grid_references(cfg.nodes, dims, dims)?,
            };
            let default_half = (dims as f64 / 6.0, dims as f64 / 6.0);
            let size_mode = match (cfg.variant, cfg.fixed_size_lambda) {
                (Variant::PositionOnly, Some(lambda)) => SizeMode::Fixed {
                    w: dims as f64 / lambda,
                    h: dims as f64 / lambda,
                },
                _ => SizeMode::Predicted,
            };
            let region_cfg = match cfg.variant {
                Variant::Full | Variant::PositionOnly | Variant::ConstantTime | Variant::Static => {
                    Some(RegionGenConfig::new(
                        cfg.nodes,
                        channels,
                        cfg.latent_channels,
                        dims,
                        dims,
                        refs.clone(),
                        cfg.g_variant,
                        size_mode,
                        cfg.use_region_gru,
                    )?)
                }
                Variant::Fixed | Variant::Semantic | Variant::OracleBoxes => None,
            };

            match cfg.variant {
                Variant::Full | Variant::PositionOnly | Variant::ConstantTime => {
                    region_gen::register(
                        &mut params,
                        &mut init,
                        &format!("{prefix}.rg"),
                        region_cfg.as_ref().unwrap(),
                    );
                }
                Variant::Static => {
                    register_static(
                        &mut params,
                        &mut init,
                        &format!("{prefix}.rg"),
                        region_cfg.as_ref().unwrap(),
                    );
                }
                Variant::Semantic => {
                    params.insert(
                        format!("{prefix}.sem.w"),
                        init.fan_in(&[1, 1, channels, cfg.nodes], channels),
                    );
                    params.insert(format!("{prefix}.sem.b"), Tensor::zeros(&[cfg.nodes]));
                }
                Variant::Fixed | Variant::OracleBoxes => {}
            }

            register_positional(&mut params, &mut init, &prefix, dims, dims, channels);
            st_gnn::register(&mut params, &mut init, &format!("{prefix}.gnn"), channels);
            // zero-initialized output projection keeps the residual branch
            // an identity at the start of training
            params.insert(format!("{prefix}.out.w"), Tensor::zeros(&[channels, channels]));
            params.insert(format!("{prefix}.out.b"), Tensor::zeros(&[channels]));

            sites.push(Site {
                stage,
                height: dims,
                width: dims,
                channels,
                prefix,
                refs,
                default_half,
                region_cfg,
                gnn: GnnConfig::new(cfg.nodes, channels, cfg.gnn_iterations),
            });
        }

        let c_last = *cfg.widths.last().unwrap();
        params.insert("classifier.w", init.fan_in(&[c_last, num_classes], c_last));
        params.insert("classifier.b", Tensor::zeros(&[num_classes]));

        Ok(Model { dataset, cfg, backbone: backbone_cfg, sites, num_classes, params })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_scalars()
    }

    /// Scalar counts grouped by the leading path segment.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: std::collections::BTreeMap<String, usize> = Default::default();
        for (path, tensor) in self.params.iter() {
            let head = path.split('.').next().unwrap_or(path).to_string();
            *groups.entry(head).or_default() += tensor.numel();
        }
        groups.into_iter().collect()
    }

    /// Full forward pass for one sample on the given tape.
    pub fn forward_item<'a>(
        &'a self,
        tape: &Tape<T>,
        sample: &VideoSample,
    ) -> (Binding<'a, T>, ItemForward<T>) {
        assert_eq!(
            sample.frame_size, self.dataset.frame_size,
            "sample frame size does not match the model's dataset config"
        );
        let mut binding = Binding::new(tape, &self.params);
        let t_len = sample.num_frames;
        let mut feats: Vec<Var<T>> = (0..t_len)
            .map(|t| tape.constant(sample.frame_tensor(t)))
            .collect();

        let mut site_regions = Vec::new();
        let mut traces = Vec::new();
        for stage in 1..=self.backbone.stage_count() {
            for f in feats.iter_mut() {
                *f = backbone::stage_forward(&mut binding, "backbone", stage, f);
            }
            for site in self.sites.iter().filter(|s| s.stage == stage) {
                let (regions, trace) = self.run_site(&mut binding, site, &mut feats, sample);
                site_regions.push(regions);
                traces.push(trace);
            }
        }

        // spatial then temporal global average, then the linear head
        let c_last = *self.cfg.widths.last().unwrap();
        let mut pooled: Option<Var<T>> = None;
        for f in &feats {
            let hw = f.shape()[0] * f.shape()[1];
            let ones = tape.constant(Tensor::filled(&[1, hw], T::one()));
            let avg = ones
                .matmul(&f.reshape(&[hw, c_last]))
                .scale(T::one() / T::from_f64(hw as f64));
            pooled = Some(match pooled {
                None => avg,
                Some(acc) => acc.add(&avg),
            });
        }
        let video_feat = pooled.unwrap().scale(T::one() / T::from_f64(t_len as f64));
        let w = binding.leaf("classifier.w");
        let b = binding.leaf("classifier.b");
        let logits = video_feat.matmul(&w).add(&b);

        (binding, ItemForward { logits, site_regions, traces })
    }

    /// Convenience forward that returns plain values on a throwaway tape.
    pub fn predict(&self, sample: &VideoSample) -> (Tensor<T>, Vec<RegionTrace>) {
        let tape = Tape::new();
        let (_binding, out) = self.forward_item(&tape, sample);
        (out.logits.value(), out.traces)
    }

    fn run_site(
        &self,
        binding: &mut Binding<'_, T>,
        site: &Site,
        feats: &mut [Var<T>],
        sample: &VideoSample,
    ) -> (Option<Vec<Vec<RegionVars<T>>>>, RegionTrace) {
        let t_len = feats.len();
        let (h, w) = (site.height, site.width);

        // kernels per frame per node, plus the trace
        let (kernels, regions, trace): (Vec<Vec<Var<T>>>, Option<Vec<Vec<RegionVars<T>>>>, RegionTrace) =
            if self.cfg.variant == Variant::Semantic {
                let mut kernels = Vec::with_capacity(t_len);
                let mut trace_frames = Vec::with_capacity(t_len);
                for f in feats.iter() {
                    let maps = semantic_maps(binding, &site.prefix, f, self.cfg.nodes); // [N, H*W]
                    let mut per_node = Vec::with_capacity(self.cfg.nodes);
                    let mut trace_nodes = Vec::with_capacity(self.cfg.nodes);
                    for i in 0..self.cfg.nodes {
                        let map = maps.index_rows(&[i]).reshape(&[h, w]);
                        trace_nodes.push(map_trace(&map.value(), h, w));
                        per_node.push(map);
                    }
                    kernels.push(per_node);
                    trace_frames.push(trace_nodes);
                }
                (kernels, None, RegionTrace { frames: trace_frames })
            } else {
                let regions = self.regions_for_site(binding, site, feats, sample);
                let kernels = regions
                    .iter()
                    .map(|frame| frame.iter().map(|r| kernel_2d_var(r, h, w)).collect())
                    .collect();
                let trace = trace_of_regions(&regions, h, w);
                (kernels, Some(regions), trace)
            };

        // pool with positional embedding, per frame
        let node_seq: Vec<Var<T>> = (0..t_len)
            .map(|t| {
                let rows: Vec<Var<T>> = (0..self.cfg.nodes)
                    .map(|i| {
                        let k = &kernels[t][i];
                        let pooled = pool_node(&feats[t], k);
                        let pe = positional_embedding(binding, &site.prefix, k);
                        pooled.add(&pe).reshape(&[site.channels])
                    })
                    .collect();
                stack(&rows)
            })
            .collect();

        let out_seq = st_gnn::gnn_forward(binding, &format!("{}.gnn", site.prefix), &node_seq, &site.gnn);

        let wout = binding.leaf(&format!("{}.out.w", site.prefix));
        let bout = binding.leaf(&format!("{}.out.b", site.prefix));
        for t in 0..t_len {
            let projected = out_seq[t].matmul(&wout).add(&bout);
            let mapped = remap(&projected, &kernels[t]);
            feats[t] = if self.cfg.residual {
                feats[t].add(&mapped)
            } else {
                mapped
            };
        }
        (regions, trace)
    }

    fn regions_for_site(
        &self,
        binding: &mut Binding<'_, T>,
        site: &Site,
        feats: &[Var<T>],
        sample: &VideoSample,
    ) -> Vec<Vec<RegionVars<T>>> {
        let tape = binding.tape().clone();
        let t_len = feats.len();
        let rg_prefix = format!("{}.rg", site.prefix);
        match self.cfg.variant {
            Variant::Fixed => {
                let frame: Vec<RegionVars<T>> = site
                    .refs
                    .iter()
                    .map(|&(cx, cy)| constant_region(&tape, cx, cy, 0.0, 0.0, site.default_half))
                    .collect();
                (0..t_len).map(|_| frame.clone()).collect()
            }
            Variant::OracleBoxes => {
                let per_frame = oracle_regions(
                    &sample.gt_boxes,
                    sample.frame_size,
                    site.height,
                    site.width,
                    self.cfg.nodes,
                    (site.refs[0], site.default_half),
                );
                per_frame
                    .iter()
                    .map(|frame| {
                        frame
                            .iter()
                            .map(|&(cx, cy, hw, hh)| {
                                constant_region(&tape, cx, cy, 0.0, 0.0, (hw, hh))
                            })
                            .collect()
                    })
                    .collect()
            }
            Variant::Static => {
                let cfg = site.region_cfg.as_ref().unwrap();
                let frame: Vec<RegionVars<T>> = (0..self.cfg.nodes)
                    .map(|i| {
                        let z = binding.leaf(&format!("{rg_prefix}.static.z{i:02}"));
                        region_gen::project_and_constrain(binding, &rg_prefix, &z, cfg, i)
                    })
                    .collect();
                (0..t_len).map(|_| frame.clone()).collect()
            }
            Variant::ConstantTime => {
                let cfg = site.region_cfg.as_ref().unwrap();
                let mut sum: Option<Var<T>> = None;
                for f in feats {
                    let m = region_gen::saliency_map(binding, &rg_prefix, f, cfg);
                    sum = Some(match sum {
                        None => m,
                        Some(acc) => acc.add(&m),
                    });
                }
                let avg = sum.unwrap().scale(T::one() / T::from_f64(t_len as f64));
                let mut state = RegionState::new(binding, &rg_prefix, cfg);
                let frame = state.step(binding, &rg_prefix, &avg, cfg);
                (0..t_len).map(|_| frame.clone()).collect()
            }
            Variant::Full | Variant::PositionOnly => {
                let cfg = site.region_cfg.as_ref().unwrap();
                region_gen::generate_regions(binding, &rg_prefix, feats, cfg)
            }
            Variant::Semantic => unreachable!("semantic kernels bypass region generation"),
        }
    }
}

fn constant_region<T: Real>(
    tape: &Tape<T>,
    ref_x: f64,
    ref_y: f64,
    dx: f64,
    dy: f64,
    half: (f64, f64),
) -> RegionVars<T> {
    RegionVars {
        dx: tape.scalar(T::from_f64(dx)),
        dy: tape.scalar(T::from_f64(dy)),
        w: tape.scalar(T::from_f64(half.0)),
        h: tape.scalar(T::from_f64(half.1)),
        ref_x,
        ref_y,
    }
}

/// Registers the static-variant parameters: per-node learnable latents plus
/// the shared projection and gamma gate.
pub fn register_static<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    cfg: &RegionGenConfig,
) {
    for i in 0..cfg.nodes {
        store.insert(
            format!("{prefix}.static.z{i:02}"),
            init.scaled(&[1, cfg.latent_channels], 0.5),
        );
    }
    store.insert(
        format!("{prefix}.wo"),
        init.fan_in(&[cfg.latent_channels, cfg.proj_cols()], cfg.latent_channels),
    );
    store.insert(format!("{prefix}.gamma"), Tensor::zeros(&[cfg.proj_cols()]));
}

/// Per-node attention maps over all positions: 1x1 conv logits, softmax
/// across the grid. Returns `[N, H*W]` rows that each sum to one.
pub fn semantic_maps<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    x: &Var<T>,
    nodes: usize,
) -> Var<T> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let wa = binding.leaf(&format!("{prefix}.sem.w"));
    let ba = binding.leaf(&format!("{prefix}.sem.b"));
    let logits = x.conv2d(&wa, 1, 0).add(&ba).reshape(&[h * w, nodes]);
    logits.softmax(0).transpose()
}

/// Attention-map summary used for traces: weighted centroid and spread, in
/// normalized coordinates.
fn map_trace<T: Real>(map: &Tensor<T>, h: usize, w: usize) -> TraceBox {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = map.at(&[y, x]).as_f64();
            cx += v * x as f64;
            cy += v * y as f64;
        }
    }
    let mut vx = 0.0;
    let mut vy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = map.at(&[y, x]).as_f64();
            vx += v * (x as f64 - cx).powi(2);
            vy += v * (y as f64 - cy).powi(2);
        }
    }
    TraceBox {
        cx: coords::to_norm(cx, w),
        cy: coords::to_norm(cy, h),
        w: coords::extent_to_norm(vx.sqrt().max(0.5), w),
        h: coords::extent_to_norm(vy.sqrt().max(0.5), h),
    }
}

fn trace_of_regions<T: Real>(
    regions: &[Vec<RegionVars<T>>],
    h: usize,
    w: usize,
) -> RegionTrace {
    RegionTrace {
        frames: regions
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|r| {
                        let (cx, cy, hw, hh) = r.to_values();
                        TraceBox {
                            cx: coords::to_norm(cx, w),
                            cy: coords::to_norm(cy, h),
                            w: coords::extent_to_norm(hw, w),
                            h: coords::extent_to_norm(hh, h),
                        }
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Converts ground-truth boxes to per-node feature-map regions
/// `(cx, cy, half_w, half_h)`.
///
/// Fewer boxes than nodes: nodes cycle over the boxes. More: the largest
/// `nodes` boxes by area win. No boxes at all: every node falls back to the
/// centered default.
pub fn oracle_regions(
    gt_boxes: &[Vec<GtBox>],
    frame_size: usize,
    feat_h: usize,
    feat_w: usize,
    nodes: usize,
    default: ((f64, f64), (f64, f64)),
) -> Vec<Vec<(f64, f64, f64, f64)>> {
    let ((ref_x, ref_y), (dw, dh)) = default;
    gt_boxes
        .iter()
        .map(|frame| {
            if frame.is_empty() {
                return vec![(ref_x, ref_y, dw, dh); nodes];
            }
            let mut order: Vec<usize> = (0..frame.len()).collect();
            if frame.len() > nodes {
                order.sort_by(|&a, &b| {
                    let area_a = frame[a].w as f64 * frame[a].h as f64;
                    let area_b = frame[b].w as f64 * frame[b].h as f64;
                    area_b.partial_cmp(&area_a).unwrap().then(a.cmp(&b))
                });
                order.truncate(nodes);
            }
            (0..nodes)
                .map(|i| {
                    let b = &frame[order[i % order.len()]];
                    let cx = coords::from_norm(coords::to_norm(b.cx as f64, frame_size), feat_w);
                    let cy = coords::from_norm(coords::to_norm(b.cy as f64, frame_size), feat_h);
                    let hw = coords::extent_from_norm(
                        coords::extent_to_norm(b.w as f64 / 2.0, frame_size),
                        feat_w,
                    );
                    let hh = coords::extent_from_norm(
                        coords::extent_to_norm(b.h as f64 / 2.0, frame_size),
                        feat_h,
                    );
                    (cx, cy, hw, hh)
                })
                .collect()
        })
        .collect()
}
