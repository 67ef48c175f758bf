//! Training on streamed synthetic data: SGD with momentum, plateau
//! learning-rate drops, an optional region-distillation kick-start, and
//! fixed-seed evaluation.

mod checkpoint;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ScheduleState};
pub use schedule::PlateauSchedule;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{cross_entropy, Gradients, Sgd, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, DistScore, FramePoints};
use crate::model::{coords, ItemForward, Model, RegionTrace};
use crate::syncshapes::{generate_sample, DatasetConfig, VideoSample};

/// Evaluation seeds live far away from the training counter so the two
/// streams never overlap.
pub const EVAL_SEED_OFFSET: u64 = 1 << 40;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_samples: u64,
    /// Samples between evaluation points.
    pub eval_every: u64,
    pub eval_samples: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_plateau_drops: usize,
    pub distill_fraction: f64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            batch_size: 32,
            total_samples: 20_000,
            eval_every: 2_000,
            eval_samples: 200,
            plateau_patience: 5,
            plateau_factor: 0.1,
            max_plateau_drops: 3,
            distill_fraction: 0.10,
            seed: 1,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distill_fraction > 0.0 && self.distill_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "distill_fraction must lie in (0, 1), got {}",
                self.distill_fraction
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if self.batch_size == 0 || self.total_samples == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, total_samples and eval_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1).max(1)
    }
}

/// One evaluation row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub samples_seen: u64,
    pub loss: f64,
    pub lr: f64,
    pub accuracy: f64,
    pub dist_p: f64,
    pub dist_r: f64,
    pub dist_h: f64,
}

/// Ordered parallel map: results come back in input order whatever the
/// thread count, so reductions stay bit-deterministic.
pub fn map_ordered<I, O, F>(items: Vec<I>, threads: usize, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Sync + Send,
{
    if threads <= 1 {
        items.into_iter().map(f).collect()
    } else {
        items.into_par_iter().map(f).collect()
    }
}

/// Distillation teachers: one single-site model per student site, in the
/// student's insertion-stage order.
pub struct TeacherRegions {
    pub teachers: Vec<Model<f32>>,
}

impl TeacherRegions {
    pub fn check_compatible(&self, student: &Model<f32>) -> Result<()> {
        if self.teachers.len() != student.sites.len() {
            return Err(Error::InvalidConfig(format!(
                "{} teachers for {} student sites",
                self.teachers.len(),
                student.sites.len()
            )));
        }
        for (t, site) in self.teachers.iter().zip(&student.sites) {
            if t.cfg.nodes != student.cfg.nodes {
                return Err(Error::InvalidConfig(format!(
                    "teacher has {} nodes, student {}",
                    t.cfg.nodes, student.cfg.nodes
                )));
            }
            if t.sites.len() != 1 || t.sites[0].stage != site.stage {
                return Err(Error::InvalidConfig(format!(
                    "teacher for stage {} must be a single-graph model at that stage",
                    site.stage
                )));
            }
        }
        Ok(())
    }

    /// Region values `[site][frame][node] -> (dx, dy, w, h)` on teacher
    /// tapes, detached.
    fn targets(&self, sample: &VideoSample) -> Vec<Vec<Vec<(f32, f32, f32, f32)>>> {
        self.teachers
            .iter()
            .map(|teacher| {
                let tape = Tape::new();
                let (_b, fwd) = teacher.forward_item(&tape, sample);
                let regions = fwd.site_regions[0]
                    .as_ref()
                    .expect("teacher variants carry regions");
                regions
                    .iter()
                    .map(|frame| {
                        frame
                            .iter()
                            .map(|r| {
                                (
                                    r.dx.value().item(),
                                    r.dy.value().item(),
                                    r.w.value().item(),
                                    r.h.value().item(),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean squared error between the student's on-tape regions and detached
/// teacher targets, over all sites, frames, nodes and the four components.
pub fn distill_loss(
    tape: &Tape<f32>,
    student: &ItemForward<f32>,
    targets: &[Vec<Vec<(f32, f32, f32, f32)>>],
) -> Var<f32> {
    let mut terms: Option<Var<f32>> = None;
    let mut count = 0usize;
    for (site_regions, site_targets) in student.site_regions.iter().zip(targets) {
        let regions = site_regions
            .as_ref()
            .expect("distillation needs a region-bearing student variant");
        for (frame, frame_targets) in regions.iter().zip(site_targets) {
            for (r, &(dx, dy, w, h)) in frame.iter().zip(frame_targets) {
                for (var, target) in [(&r.dx, dx), (&r.dy, dy), (&r.w, w), (&r.h, h)] {
                    let d = var.shift(-target);
                    let sq = d.mul(&d);
                    terms = Some(match terms {
                        None => sq,
                        Some(acc) => acc.add(&sq),
                    });
                    count += 1;
                }
            }
        }
    }
    terms
        .unwrap_or_else(|| tape.scalar(0.0))
        .scale(1.0 / count.max(1) as f32)
        .reshape(&[1])
}

pub struct EvalResult {
    pub accuracy: f64,
    pub dist: DistScore,
}

/// Evaluates on a fixed seed set disjoint from the training stream.
pub fn evaluate(
    model: &Model<f32>,
    dataset: &DatasetConfig,
    n_samples: usize,
    seed_base: u64,
    threads: usize,
) -> EvalResult {
    let outputs = map_ordered(
        (0..n_samples as u64).collect::<Vec<_>>(),
        threads,
        |i| {
            let sample = generate_sample(dataset, EVAL_SEED_OFFSET + seed_base + i);
            let (logits, traces) = model.predict(&sample);
            (logits, traces, sample)
        },
    );
    summarize_eval(&outputs)
}

fn summarize_eval(outputs: &[(Tensor<f32>, Vec<RegionTrace>, VideoSample)]) -> EvalResult {
    let classes = outputs[0].0.numel();
    let mut logits = Vec::with_capacity(outputs.len() * classes);
    let mut labels = Vec::with_capacity(outputs.len());
    let mut frames = Vec::new();
    for (l, traces, sample) in outputs {
        logits.extend_from_slice(l.data());
        labels.push(sample.label);
        frames.extend(trace_frame_points(&traces[0], sample));
    }
    let logits = Tensor::from_vec(&[outputs.len(), classes], logits);
    EvalResult {
        accuracy: accuracy(&logits, &labels),
        dist: DistScore::from_frames(&frames),
    }
}

/// Pairs a trace with the sample's boxes as normalized point sets.
pub fn trace_frame_points(trace: &RegionTrace, sample: &VideoSample) -> Vec<FramePoints> {
    trace
        .frames
        .iter()
        .enumerate()
        .map(|(t, nodes)| FramePoints {
            regions: nodes.iter().map(|b| (b.cx, b.cy)).collect(),
            objects: sample.gt_boxes[t]
                .iter()
                .map(|b| {
                    (
                        coords::to_norm(b.cx as f64, sample.frame_size),
                        coords::to_norm(b.cy as f64, sample.frame_size),
                    )
                })
                .collect(),
        })
        .collect()
}

/// Training state around a model: optimizer, schedule, sample counter.
pub struct Trainer {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    pub opt: Sgd<f32>,
    pub schedule: PlateauSchedule,
    pub samples_seen: u64,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let opt = Sgd::new(cfg.lr as f32, cfg.momentum as f32);
        let schedule =
            PlateauSchedule::new(cfg.plateau_patience, cfg.plateau_factor, cfg.max_plateau_drops);
        Ok(Trainer { model, cfg, opt, schedule, samples_seen: 0 })
    }

    /// Restores optimizer and counter state from a checkpoint; the model's
    /// parameters must already have been replaced by the checkpoint's.
    pub fn restore(&mut self, ckpt: &Checkpoint) {
        self.opt.set_velocity(ckpt.momentum.clone());
        self.samples_seen = ckpt.samples_seen;
        self.schedule
            .restore(ckpt.schedule.best, ckpt.schedule.since_improve, ckpt.schedule.drops);
    }

    pub fn to_checkpoint(&self, config_json: String) -> Checkpoint {
        let (best, since_improve, drops) = self.schedule.state();
        Checkpoint {
            config_json,
            params: self.model.params.clone(),
            momentum: self.opt.velocity().clone(),
            samples_seen: self.samples_seen,
            schedule: ScheduleState { best, since_improve, drops },
        }
    }

    /// Sample-count boundary of the distillation kick-start window: the
    /// batch starting exactly at the boundary is the last one with the
    /// auxiliary loss.
    pub fn distill_boundary(&self) -> u64 {
        (self.cfg.distill_fraction * self.cfg.total_samples as f64).floor() as u64
    }

    /// Runs until `total_samples`, calling `on_row` at every evaluation
    /// point. Streams fresh samples seeded by the global counter.
    pub fn run(
        &mut self,
        teachers: Option<&TeacherRegions>,
        mut on_row: impl FnMut(&TrainLogRow),
    ) -> Result<Vec<TrainLogRow>> {
        if let Some(t) = teachers {
            t.check_compatible(&self.model)?;
        }
        let threads = self.cfg.threads();
        let dataset = self.model.dataset.clone();
        let mut log = Vec::new();
        let mut next_eval = (self.samples_seen / self.cfg.eval_every + 1) * self.cfg.eval_every;

        while self.samples_seen < self.cfg.total_samples {
            let remaining = self.cfg.total_samples - self.samples_seen;
            let batch = (self.cfg.batch_size as u64).min(remaining);
            let first_seed = self.samples_seen;
            let seeds: Vec<u64> = (first_seed..first_seed + batch).collect();
            let aux_active = teachers.is_some() && first_seed <= self.distill_boundary();

            let model = &self.model;
            let items = map_ordered(seeds, threads, |seed| {
                let sample = generate_sample(&dataset, seed);
                let tape = Tape::new();
                let (binding, fwd) = model.forward_item(&tape, &sample);
                let ce = cross_entropy(&fwd.logits, &[sample.label]);
                let loss = if aux_active {
                    let targets = teachers.unwrap().targets(&sample);
                    ce.add(&distill_loss(&tape, &fwd, &targets))
                } else {
                    ce
                };
                loss.backward();
                (loss.value().item() as f64, binding.gradients())
            });

            let mut loss_sum = 0.0;
            let mut grads: Option<Gradients<f32>> = None;
            for (loss, g) in items {
                loss_sum += loss;
                grads = Some(match grads {
                    None => g,
                    Some(mut acc) => {
                        acc.add_assign(&g);
                        acc
                    }
                });
            }
            let mean_loss = loss_sum / batch as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NanAbort(first_seed));
            }
            let mut grads = grads.unwrap();
            grads.scale(1.0 / batch as f32);

            self.opt.lr = (self.cfg.lr * self.schedule.multiplier()) as f32;
            self.opt.step(&mut self.model.params, &grads);
            self.samples_seen += batch;

            if self.samples_seen >= next_eval || self.samples_seen >= self.cfg.total_samples {
                let eval = evaluate(
                    &self.model,
                    &dataset,
                    self.cfg.eval_samples,
                    0,
                    threads,
                );
                self.schedule.observe(eval.accuracy);
                let row = TrainLogRow {
                    samples_seen: self.samples_seen,
                    loss: mean_loss,
                    lr: self.cfg.lr * self.schedule.multiplier(),
                    accuracy: eval.accuracy,
                    dist_p: eval.dist.dist_p,
                    dist_r: eval.dist.dist_r,
                    dist_h: eval.dist.harmonic,
                };
                on_row(&row);
                log.push(row);
                next_eval += self.cfg.eval_every;
            }
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};

    fn tiny_setup() -> (ModelConfig, DatasetConfig) {
        let dataset = DatasetConfig {
            frame_size: 32,
            frames: 2,
            glyphs: 2,
            classes: 3,
            glyph_px: 9,
            ..DatasetConfig::default()
        };
        let model = ModelConfig {
            widths: vec![4, 8],
            insertion_stages: vec![2],
            nodes: 4,
            gnn_iterations: 1,
            latent_channels: 4,
            variant: Variant::Full,
            ..ModelConfig::default()
        };
        (model, dataset)
    }

    #[test]
    fn one_probe_step_decreases_loss_on_the_same_batch() {
        let (mcfg, dcfg) = tiny_setup();
        let mut model = Model::<f32>::build(mcfg, dcfg.clone(), 7).unwrap();
        let sample = generate_sample(&dcfg, 3);

        let loss_of = |m: &Model<f32>| -> f64 {
            let tape = Tape::new();
            let (_b, fwd) = m.forward_item(&tape, &sample);
            cross_entropy(&fwd.logits, &[sample.label]).value().item() as f64
        };
        let before = loss_of(&model);

        // one SGD step on the classifier head only (frozen backbone probe)
        let tape = Tape::new();
        let (binding, fwd) = model.forward_item(&tape, &sample);
        cross_entropy(&fwd.logits, &[sample.label]).backward();
        let grads = binding.gradients();
        let lr = 0.5f32;
        for path in ["classifier.w", "classifier.b"] {
            let g = grads.get(path).clone();
            let p = model.params.get_mut(path);
            for i in 0..p.numel() {
                p.data_mut()[i] -= lr * g.data()[i];
            }
        }
        let after = loss_of(&model);
        assert!(after < before, "probe step did not reduce loss: {before} -> {after}");
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (mcfg, dcfg) = tiny_setup();
        let cfg = TrainConfig {
            total_samples: 12,
            batch_size: 4,
            eval_every: 6,
            eval_samples: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let model = Model::<f32>::build(mcfg.clone(), dcfg.clone(), 11).unwrap();
            let mut trainer = Trainer::new(model, cfg.clone()).unwrap();
            trainer.run(None, |_| {}).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn distillation_window_gates_exactly_at_the_boundary() {
        let (mcfg, dcfg) = tiny_setup();
        let cfg = TrainConfig { total_samples: 100, distill_fraction: 0.10, ..TrainConfig::default() };
        let model = Model::<f32>::build(mcfg, dcfg, 5).unwrap();
        let trainer = Trainer::new(model, cfg).unwrap();
        assert_eq!(trainer.distill_boundary(), 10);
    }

    #[test]
    fn distill_loss_of_identical_regions_is_zero() {
        let (mcfg, dcfg) = tiny_setup();
        let model = Model::<f32>::build(mcfg.clone(), dcfg.clone(), 13).unwrap();
        let teacher = Model::<f32>::build(mcfg, dcfg.clone(), 13).unwrap();
        let teachers = TeacherRegions { teachers: vec![teacher] };
        teachers.check_compatible(&model).unwrap();
        let sample = generate_sample(&dcfg, 9);
        let tape = Tape::new();
        let (_b, fwd) = model.forward_item(&tape, &sample);
        let targets = teachers.targets(&sample);
        let loss = distill_loss(&tape, &fwd, &targets).value().item();
        assert_eq!(loss, 0.0, "same weights, same regions, zero distillation loss");
    }

    #[test]
    fn teacher_node_count_mismatch_is_rejected() {
        let (mcfg, dcfg) = tiny_setup();
        let student = Model::<f32>::build(mcfg.clone(), dcfg.clone(), 1).unwrap();
        let mut tcfg = mcfg;
        tcfg.nodes = 9;
        let teacher = Model::<f32>::build(tcfg, dcfg, 1).unwrap();
        let teachers = TeacherRegions { teachers: vec![teacher] };
        assert!(teachers.check_compatible(&student).is_err());
    }

    #[test]
    fn untrained_accuracy_is_near_chance() {
        let (mcfg, dcfg) = tiny_setup();
        let model = Model::<f32>::build(mcfg, dcfg.clone(), 17).unwrap();
        let eval = evaluate(&model, &dcfg, 200, 0, 1);
        // 7 classes; 3 sigma of a binomial around 1/7 with n = 200
        let chance = 1.0 / dcfg.num_labels() as f64;
        let sigma = (chance * (1.0 - chance) / 200.0).sqrt();
        assert!(
            (eval.accuracy - chance).abs() < 3.0 * sigma + 0.05,
            "accuracy {} too far from chance {}",
            eval.accuracy,
            chance
        );
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (mcfg, dcfg) = tiny_setup();
        let model = Model::<f32>::build(mcfg, dcfg.clone(), 19).unwrap();
        let a = evaluate(&model, &dcfg, 20, 7, 1);
        let b = evaluate(&model, &dcfg, 20, 7, 1);
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.dist, b.dist);
    }
}
