//! Command implementations behind the `dyreg` binary. Everything here is
//! callable from tests; the binary only parses flags and maps errors to
//! exit codes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, RegionTrace};
use crate::syncshapes::{config_digest, generate_sample, write_shard, VideoSample};
use crate::trainkit::{
    evaluate, load_checkpoint, save_checkpoint, Trainer, EVAL_SEED_OFFSET,
};

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub resume: Option<&'a Path>,
    pub sets: Vec<String>,
    pub threads: Option<usize>,
}

pub fn cmd_train(args: TrainArgs<'_>) -> Result<()> {
    let mut overrides = args.sets.clone();
    if let Some(v) = &args.variant {
        overrides.push(format!("model.variant={v}"));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("train.seed={s}"));
    }
    if let Some(t) = args.threads {
        overrides.push(format!("train.threads={t}"));
    }
    let cfg = RunConfig::load(args.config, &overrides)?;

    std::fs::create_dir_all(args.out)?;
    let resolved = cfg.to_json_pretty();
    std::fs::write(args.out.join("config.json"), &resolved)?;

    let mut model = Model::<f32>::build(cfg.model.clone(), cfg.dataset.clone(), cfg.train.seed)?;
    let mut resume_ckpt = None;
    if let Some(path) = args.resume {
        let ckpt = load_checkpoint(path)?;
        if ckpt.digest() != config_digest(&resolved) {
            eprintln!(
                "warning: checkpoint config digest {:#018x} differs from the resolved config",
                ckpt.digest()
            );
        }
        for (path, tensor) in ckpt.params.iter() {
            if !model.params.contains(path) {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint parameter {path} does not exist in this model"
                )));
            }
            let dst = model.params.get_mut(path);
            if dst.shape() != tensor.shape() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint parameter {path} has shape {:?}, model wants {:?}",
                    tensor.shape(),
                    dst.shape()
                )));
            }
            *dst = tensor.clone();
        }
        resume_ckpt = Some(ckpt);
    }

    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    if let Some(ckpt) = &resume_ckpt {
        trainer.restore(ckpt);
    }

    let log_path = args.out.join("train_log.csv");
    let mut log = BufWriter::new(if resume_ckpt.is_some() && log_path.exists() {
        File::options().append(true).open(&log_path)?
    } else {
        let mut f = File::create(&log_path)?;
        writeln!(f, "samples_seen,loss,lr,acc,dist_p,dist_r,dist_h")?;
        f
    });

    trainer.run(None, |row| {
        let line = format!(
            "{},{},{},{},{},{},{}",
            row.samples_seen, row.loss, row.lr, row.accuracy, row.dist_p, row.dist_r, row.dist_h
        );
        println!("{line}");
        let _ = writeln!(log, "{line}");
        let _ = log.flush();
    })?;
    log.flush()?;

    let ckpt = trainer.to_checkpoint(resolved);
    save_checkpoint(&args.out.join("model.dyrg"), &ckpt)?;
    Ok(())
}

/// Rebuilds a model from the config stored inside a checkpoint.
pub fn model_from_checkpoint(path: &Path) -> Result<(Model<f32>, RunConfig)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = RunConfig::from_json(&ckpt.config_json)?;
    let mut model = Model::<f32>::build(cfg.model.clone(), cfg.dataset.clone(), cfg.train.seed)?;
    for (path, tensor) in ckpt.params.iter() {
        if !model.params.contains(path) {
            return Err(Error::Format(format!(
                "checkpoint parameter {path} does not exist in the rebuilt model"
            )));
        }
        *model.params.get_mut(path) = tensor.clone();
    }
    Ok((model, cfg))
}

pub fn cmd_eval(
    ckpt: &Path,
    samples: usize,
    trace: Option<&Path>,
    seed_base: u64,
    threads: usize,
) -> Result<()> {
    let (model, cfg) = model_from_checkpoint(ckpt)?;
    let eval = evaluate(&model, &cfg.dataset, samples, seed_base, threads);
    println!(
        "accuracy={} dist_p={} dist_r={} dist_h={}",
        eval.accuracy, eval.dist.dist_p, eval.dist.dist_r, eval.dist.harmonic
    );
    if let Some(trace_path) = trace {
        let mut w = BufWriter::new(File::create(trace_path)?);
        for i in 0..samples as u64 {
            let sample = generate_sample(&cfg.dataset, EVAL_SEED_OFFSET + seed_base + i);
            let (_logits, traces) = model.predict(&sample);
            write_trace_lines(&mut w, i, &traces[0])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct TraceLine {
    sample: u64,
    t: usize,
    node: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

fn write_trace_lines(w: &mut impl Write, sample: u64, trace: &RegionTrace) -> Result<()> {
    for (t, nodes) in trace.frames.iter().enumerate() {
        for (node, b) in nodes.iter().enumerate() {
            let line = TraceLine { sample, t, node, cx: b.cx, cy: b.cy, w: b.w, h: b.h };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
    }
    Ok(())
}

/// Nine distinguishable overlay colors, one per node, cycled past nine.
pub const PALETTE: [[u8; 3]; 9] = [
    [230, 60, 60],
    [60, 200, 60],
    [70, 100, 250],
    [230, 220, 50],
    [220, 70, 220],
    [70, 220, 220],
    [240, 150, 40],
    [150, 80, 230],
    [245, 245, 245],
];

pub fn cmd_render(ckpt: &Path, seed: u64, out: &Path) -> Result<()> {
    let (model, cfg) = model_from_checkpoint(ckpt)?;
    std::fs::create_dir_all(out)?;
    let sample = generate_sample(&cfg.dataset, seed);
    let (_logits, traces) = model.predict(&sample);
    let trace = &traces[0];

    let mut w = BufWriter::new(File::create(out.join("trace.jsonl"))?);
    write_trace_lines(&mut w, seed, trace)?;
    w.flush()?;

    let s = sample.frame_size;
    for t in 0..sample.num_frames {
        let mut rgb = vec![0u8; s * s * 3];
        for (i, &v) in sample.frames[t * s * s..(t + 1) * s * s].iter().enumerate() {
            let gray = (v * 255.0).round() as u8;
            rgb[i * 3] = gray;
            rgb[i * 3 + 1] = gray;
            rgb[i * 3 + 2] = gray;
        }
        for (node, b) in trace.frames[t].iter().enumerate() {
            draw_rect(&mut rgb, s, b.cx, b.cy, b.w, b.h, PALETTE[node % PALETTE.len()]);
        }
        let path = out.join(format!("frame_{t:03}.ppm"));
        let mut f = BufWriter::new(File::create(path)?);
        write!(f, "P6\n{s} {s}\n255\n")?;
        f.write_all(&rgb)?;
        f.flush()?;
    }
    Ok(())
}

/// Draws a one-pixel rectangle border for a normalized box.
fn draw_rect(rgb: &mut [u8], size: usize, cx: f64, cy: f64, w: f64, h: f64, color: [u8; 3]) {
    let s = size as f64;
    let clamp = |v: f64| (v.round() as i64).clamp(0, size as i64 - 1) as usize;
    let x0 = clamp(cx * s - 0.5 - w * s);
    let x1 = clamp(cx * s - 0.5 + w * s);
    let y0 = clamp(cy * s - 0.5 - h * s);
    let y1 = clamp(cy * s - 0.5 + h * s);
    let mut put = |x: usize, y: usize| {
        let i = (y * size + x) * 3;
        rgb[i..i + 3].copy_from_slice(&color);
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

pub fn cmd_gen(config: &Path, n: usize, out: &Path, seed_base: u64, sets: Vec<String>) -> Result<()> {
    let cfg = RunConfig::load(config, &sets)?;
    let entries: Vec<(u64, VideoSample)> = (0..n as u64)
        .map(|i| (seed_base + i, generate_sample(&cfg.dataset, seed_base + i)))
        .collect();
    write_shard(out, &cfg.dataset, &entries)?;

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, s) in &entries {
        *histogram.entry(s.label).or_default() += 1;
    }
    println!("wrote {} samples to {}", entries.len(), out.display());
    for (label, count) in &histogram {
        println!("label {label}: {count}");
    }
    println!("total: {}", entries.len());
    Ok(())
}

pub fn cmd_inspect(config: &Path, variant: Option<String>, sets: Vec<String>) -> Result<()> {
    let mut overrides = sets;
    if let Some(v) = variant {
        overrides.push(format!("model.variant={v}"));
    }
    let cfg = RunConfig::load(config, &overrides)?;
    let model = Model::<f32>::build(cfg.model.clone(), cfg.dataset.clone(), cfg.train.seed)?;
    println!("variant: {}", model.cfg.variant);
    println!("classes: {}", model.num_classes);
    for (group, count) in model.parameter_breakdown() {
        println!("module {group}: {count} parameters");
    }
    println!("total parameters: {}", model.count_parameters());
    println!();
    for (path, tensor) in model.params.iter() {
        println!("{path}: {:?}", tensor.shape());
    }
    Ok(())
}

/// Exit code for an error, per the command-line contract.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NanAbort(_) => 3,
        _ => 2,
    }
}
