use dyreg_core::diffcore::cross_entropy;
use dyreg_core::diffcore::Tape;
use dyreg_core::model::{Model, ModelConfig, Variant};
use dyreg_core::syncshapes::{generate_sample, DatasetConfig};

fn main() {
    let dataset = DatasetConfig {
        frame_size: 64, frames: 8, glyphs: 3, classes: 5, seed: 100,
        ..DatasetConfig::default()
    };
    let mcfg = ModelConfig { variant: Variant::Full, ..ModelConfig::default() };
    let mut model = Model::<f32>::build(mcfg, dataset.clone(), 1).unwrap();
    let sample = generate_sample(&dataset, 0);

    for step in 0..6 {
        let tape = Tape::new();
        let (binding, fwd) = model.forward_item(&tape, &sample);
        let loss = cross_entropy(&fwd.logits, &[sample.label]);
        loss.backward();
        let grads = binding.gradients();
        let gnorm = |p: &str| -> f32 {
            grads.get(p).data().iter().map(|v| v * v).sum::<f32>().sqrt()
        };
        let pnorm = |p: &str| -> f32 {
            model.params.get(p).data().iter().map(|v| v * v).sum::<f32>().sqrt()
        };
        println!(
            "step {step}: loss={:.4} |g gamma|={:.3e} |g out.w|={:.3e} |g wo|={:.3e} |gamma|={:.3e} |out.w|={:.3e} |g cls.w|={:.3e} |g bb.s1|={:.3e}",
            loss.value().item(),
            gnorm("dyreg2.rg.gamma"),
            gnorm("dyreg2.out.w"),
            gnorm("dyreg2.rg.wo"),
            pnorm("dyreg2.rg.gamma"),
            pnorm("dyreg2.out.w"),
            gnorm("classifier.w"),
            gnorm("backbone.s1.down.w"),
        );
        // plain SGD step
        let lr = 0.01f32;
        for (path, p) in model.params.iter_mut() {
            let g = grads.get(path);
            for i in 0..p.numel() {
                p.data_mut()[i] -= lr * g.data()[i];
            }
        }
    }
}
