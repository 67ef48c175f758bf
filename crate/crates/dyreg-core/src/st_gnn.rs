//! Graph processing over pooled node features: dot-product attention
//! message passing inside each frame, a node-shared GRU across frames, the
//! two alternated for a fixed number of iterations.

use crate::diffcore::{
    concat_cols, gru_cell, linear, register_gru, stack, Binding, GruVars, Initializer,
    ParamStore, Real, Var,
};

/// Message-passing hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct GnnConfig {
    pub nodes: usize,
    pub channels: usize,
    /// Spatial/temporal alternations per forward; the default is 3.
    pub iterations: usize,
}

impl GnnConfig {
    pub fn new(nodes: usize, channels: usize, iterations: usize) -> Self {
        assert!(iterations >= 1, "need at least one graph iteration");
        GnnConfig { nodes, channels, iterations }
    }
}

/// Registers the message MLP and temporal GRU under `prefix`.
pub fn register<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    channels: usize,
) {
    let c = channels;
    store.insert(format!("{prefix}.mlp.w1"), init.fan_in(&[2 * c, c], 2 * c));
    store.insert(format!("{prefix}.mlp.b1"), crate::Tensor::zeros(&[c]));
    store.insert(format!("{prefix}.mlp.w2"), init.fan_in(&[c, c], c));
    store.insert(format!("{prefix}.mlp.b2"), crate::Tensor::zeros(&[c]));
    register_gru(store, init, &format!("{prefix}.gru"), c, c);
}

/// Row-stochastic attention: `a[i, j] = softmax_j(v_j . v_i / sqrt(C))`.
pub fn attention_weights<T: Real>(nodes: &Var<T>) -> Var<T> {
    let c = nodes.shape()[1];
    let scale = T::one() / T::from_f64((c as f64).sqrt());
    nodes
        .matmul(&nodes.transpose())
        .scale(scale)
        .softmax(1)
}

/// One round of intra-frame message passing: every node becomes the
/// attention-weighted sum of MLP messages over all ordered pairs
/// `[v_j ; v_i]`, self-edges included.
pub fn spatial_message_pass<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    nodes: &Var<T>,
) -> Var<T> {
    let n = nodes.shape()[0];
    let c = nodes.shape()[1];
    let attn = attention_weights(nodes);

    let mut src = Vec::with_capacity(n * n);
    let mut dst = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            src.push(j);
            dst.push(i);
        }
    }
    let pairs = concat_cols(&nodes.index_rows(&src), &nodes.index_rows(&dst));
    let w1 = binding.leaf(&format!("{prefix}.mlp.w1"));
    let b1 = binding.leaf(&format!("{prefix}.mlp.b1"));
    let w2 = binding.leaf(&format!("{prefix}.mlp.w2"));
    let b2 = binding.leaf(&format!("{prefix}.mlp.b2"));
    let messages = linear(&linear(&pairs, &w1, &b1).relu(), &w2, &b2); // [N*N, C]

    let rows: Vec<Var<T>> = (0..n)
        .map(|i| {
            let weights = attn.index_rows(&[i]); // [1, N]
            let block: Vec<usize> = (i * n..(i + 1) * n).collect();
            weights.matmul(&messages.index_rows(&block)).reshape(&[c])
        })
        .collect();
    stack(&rows)
}

/// Per-node GRU step with shared weights; the output doubles as the new
/// hidden state.
pub fn temporal_update<T: Real>(
    hidden: &Var<T>,
    messages: &Var<T>,
    gru: &GruVars<T>,
) -> Var<T> {
    gru_cell(messages, hidden, gru)
}

/// Runs `iterations` alternations of spatial message passing and temporal
/// update over the frame sequence.
///
/// The hidden state at the start of each sweep is that sweep's first-frame
/// input features; the output at frame `t` uses messages from frame `t`.
pub fn gnn_forward<T: Real>(
    binding: &mut Binding<'_, T>,
    prefix: &str,
    node_seq: &[Var<T>],
    cfg: &GnnConfig,
) -> Vec<Var<T>> {
    assert!(!node_seq.is_empty(), "need at least one frame of nodes");
    let gru = GruVars::bind(binding, &format!("{prefix}.gru"));
    let mut current: Vec<Var<T>> = node_seq.to_vec();
    for _ in 0..cfg.iterations {
        let mut hidden = current[0].clone();
        let mut next = Vec::with_capacity(current.len());
        for frame in &current {
            let messages = spatial_message_pass(binding, prefix, frame);
            hidden = temporal_update(&hidden, &messages, &gru);
            next.push(hidden.clone());
        }
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tape, Tensor};

    fn build(c: usize, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        register(&mut store, &mut init, "gnn", c);
        store
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(0x2545F4914F6CDD1D) | 1;
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect(),
        )
    }

    #[test]
    fn identical_nodes_attend_uniformly() {
        let tape = Tape::new();
        let nodes = tape.leaf(Tensor::<f64>::filled(&[3, 4], 0.7));
        let a = attention_weights(&nodes).value();
        for &v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_attention_is_one() {
        let tape = Tape::new();
        let nodes = tape.leaf(pseudo(&[1, 4], 3));
        let a = attention_weights(&nodes).value();
        assert_eq!(a.shape(), &[1, 1]);
        assert!((a.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_node_attention_matches_closed_form() {
        let tape = Tape::new();
        let v = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]);
        let nodes = tape.leaf(v.clone());
        let a = attention_weights(&nodes).value();
        let sqrt_c = 2.0f64.sqrt();
        // row 0: logits (v0.v0, v0.v1)/sqrt(C) = (1.0, 0.5)/sqrt(2)
        let l00 = 1.0 / sqrt_c;
        let l01 = 0.5 / sqrt_c;
        let z = l00.exp() + l01.exp();
        assert!((a.at(&[0, 0]) - l00.exp() / z).abs() < 1e-12);
        assert!((a.at(&[0, 1]) - l01.exp() / z).abs() < 1e-12);
        // rows sum to one
        assert!((a.at(&[1, 0]) + a.at(&[1, 1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeroed_output_layer_silences_messages() {
        let mut store = build(3, 5);
        *store.get_mut("gnn.mlp.w2") = Tensor::zeros(&[3, 3]);
        *store.get_mut("gnn.mlp.b2") = Tensor::zeros(&[3]);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let nodes = tape.leaf(pseudo(&[4, 3], 8));
        let out = spatial_message_pass(&mut binding, "gnn", &nodes).value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_gets_its_self_message() {
        let store = build(3, 7);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let v = pseudo(&[1, 3], 11);
        let nodes = tape.leaf(v.clone());
        let out = spatial_message_pass(&mut binding, "gnn", &nodes).value();
        // with one node the softmax weight is exactly 1: out = MLP([v; v])
        let pair = tape.leaf(Tensor::from_vec(
            &[1, 6],
            v.data().iter().chain(v.data()).copied().collect(),
        ));
        let mut binding2 = Binding::new(&tape, &store);
        let w1 = binding2.leaf("gnn.mlp.w1");
        let b1 = binding2.leaf("gnn.mlp.b1");
        let w2 = binding2.leaf("gnn.mlp.w2");
        let b2 = binding2.leaf("gnn.mlp.b2");
        let want = linear(&linear(&pair, &w1, &b1).relu(), &w2, &b2).value();
        for (g, w) in out.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    /// Plain-f64 transcription of the spatial pass, independent of the tape.
    fn spatial_oracle(store: &ParamStore<f64>, nodes: &Tensor<f64>) -> Tensor<f64> {
        let (n, c) = (nodes.shape()[0], nodes.shape()[1]);
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let row = |i: usize| &nodes.data()[i * c..(i + 1) * c];
        // attention
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| dot(row(j), row(i)) / (c as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..n {
                attn[i * n + j] = (logits[j] - m).exp() / z;
            }
        }
        let w1 = store.get("gnn.mlp.w1");
        let b1 = store.get("gnn.mlp.b1");
        let w2 = store.get("gnn.mlp.w2");
        let b2 = store.get("gnn.mlp.b2");
        let mlp = |pair: &[f64]| -> Vec<f64> {
            let mut hidden = vec![0.0; c];
            for (k, h) in hidden.iter_mut().enumerate() {
                let mut acc = b1.data()[k];
                for (j, &p) in pair.iter().enumerate() {
                    acc += p * w1.at(&[j, k]);
                }
                *h = acc.max(0.0);
            }
            let mut out = vec![0.0; c];
            for (k, o) in out.iter_mut().enumerate() {
                let mut acc = b2.data()[k];
                for (j, &h) in hidden.iter().enumerate() {
                    acc += h * w2.at(&[j, k]);
                }
                *o = acc;
            }
            out
        };
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            for j in 0..n {
                let pair: Vec<f64> = row(j).iter().chain(row(i)).copied().collect();
                let msg = mlp(&pair);
                for k in 0..c {
                    out.data_mut()[i * c + k] += attn[i * n + j] * msg[k];
                }
            }
        }
        out
    }

    #[test]
    fn spatial_pass_matches_double_loop_oracle() {
        let store = build(4, 13);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let v = pseudo(&[3, 4], 17);
        let nodes = tape.leaf(v.clone());
        let got = spatial_message_pass(&mut binding, "gnn", &nodes).value();
        let want = spatial_oracle(&store, &v);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_gru_weights_halve_hidden() {
        let mut store = build(3, 19);
        for gate in ["z", "r", "h"] {
            *store.get_mut(&format!("gnn.gru.w{gate}")) = Tensor::zeros(&[3, 3]);
            *store.get_mut(&format!("gnn.gru.u{gate}")) = Tensor::zeros(&[3, 3]);
        }
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let gru = GruVars::bind(&mut binding, "gnn.gru");
        let hidden = tape.leaf(Tensor::from_vec(&[2, 3], vec![2.0, -4.0, 6.0, 1.0, 0.0, -8.0]));
        let messages = tape.leaf(Tensor::zeros(&[2, 3]));
        let out = temporal_update(&hidden, &messages, &gru).value();
        assert_eq!(out.data(), &[1.0, -2.0, 3.0, 0.5, 0.0, -4.0]);
    }

    #[test]
    fn identical_rows_stay_identical() {
        let store = build(4, 23);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let gru = GruVars::bind(&mut binding, "gnn.gru");
        let one = pseudo(&[1, 4], 29);
        let rep = Tensor::from_vec(&[3, 4], one.data().repeat(3));
        let hidden = tape.leaf(rep.clone());
        let msgs = tape.leaf(rep);
        let out = temporal_update(&hidden, &msgs, &gru).value();
        assert_eq!(&out.data()[0..4], &out.data()[4..8]);
        assert_eq!(&out.data()[0..4], &out.data()[8..12]);
    }

    #[test]
    fn temporal_update_is_rowwise_gru() {
        let store = build(3, 31);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let gru = GruVars::bind(&mut binding, "gnn.gru");
        let hidden_t = pseudo(&[2, 3], 37);
        let msg_t = pseudo(&[2, 3], 41);
        let full = temporal_update(
            &tape.leaf(hidden_t.clone()),
            &tape.leaf(msg_t.clone()),
            &gru,
        )
        .value();
        for i in 0..2 {
            let h = tape.leaf(Tensor::from_vec(&[1, 3], hidden_t.data()[i * 3..(i + 1) * 3].to_vec()));
            let x = tape.leaf(Tensor::from_vec(&[1, 3], msg_t.data()[i * 3..(i + 1) * 3].to_vec()));
            let row = gru_cell(&x, &h, &gru).value();
            assert_eq!(&full.data()[i * 3..(i + 1) * 3], row.data());
        }
    }

    #[test]
    fn one_iteration_equals_manual_sweep() {
        let store = build(3, 43);
        let cfg = GnnConfig::new(2, 3, 1);
        let frames: Vec<Tensor<f64>> = (0..3).map(|t| pseudo(&[2, 3], 47 + t)).collect();

        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let seq: Vec<_> = frames.iter().map(|f| tape.leaf(f.clone())).collect();
        let got = gnn_forward(&mut binding, "gnn", &seq, &cfg);

        let tape2 = Tape::new();
        let mut b2 = Binding::new(&tape2, &store);
        let gru = GruVars::bind(&mut b2, "gnn.gru");
        let mut hidden = tape2.leaf(frames[0].clone());
        for (t, f) in frames.iter().enumerate() {
            let msgs = spatial_message_pass(&mut b2, "gnn", &tape2.leaf(f.clone()));
            hidden = temporal_update(&hidden, &msgs, &gru);
            assert_eq!(got[t].value().data(), hidden.value().data());
        }
    }

    #[test]
    fn node_permutation_equivariance() {
        let store = build(4, 53);
        let cfg = GnnConfig::new(3, 4, 2);
        let frames: Vec<Tensor<f64>> = (0..2).map(|t| pseudo(&[3, 4], 59 + t)).collect();
        let perm = [2usize, 0, 1];

        let run = |fs: &[Tensor<f64>]| -> Vec<Tensor<f64>> {
            let tape = Tape::new();
            let mut binding = Binding::new(&tape, &store);
            let seq: Vec<_> = fs.iter().map(|f| tape.leaf(f.clone())).collect();
            gnn_forward(&mut binding, "gnn", &seq, &cfg)
                .iter()
                .map(|v| v.value())
                .collect()
        };
        let base = run(&frames);
        let permuted_frames: Vec<Tensor<f64>> = frames
            .iter()
            .map(|f| {
                let mut data = Vec::new();
                for &p in &perm {
                    data.extend_from_slice(&f.data()[p * 4..(p + 1) * 4]);
                }
                Tensor::from_vec(&[3, 4], data)
            })
            .collect();
        let permuted = run(&permuted_frames);
        for t in 0..2 {
            for (i, &p) in perm.iter().enumerate() {
                for k in 0..4 {
                    let a = permuted[t].at(&[i, k]);
                    let b = base[t].at(&[p, k]);
                    assert!((a - b).abs() < 1e-10, "frame {t} node {i} ch {k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let store = build(4, 61);
        let cfg = GnnConfig::new(3, 4, 3);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let seq: Vec<_> = (0..5).map(|t| tape.leaf(pseudo(&[3, 4], 67 + t))).collect();
        let out = gnn_forward(&mut binding, "gnn", &seq, &cfg);
        assert_eq!(out.len(), 5);
        for v in &out {
            assert_eq!(v.shape(), &[3, 4]);
        }
    }

    /// Straight-line oracle for the full forward on a tiny case.
    #[test]
    fn tiny_forward_matches_straight_line_oracle() {
        let store = build(2, 71);
        let cfg = GnnConfig::new(2, 2, 2);
        let frames: Vec<Tensor<f64>> = (0..2).map(|t| pseudo(&[2, 2], 73 + t)).collect();

        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let seq: Vec<_> = frames.iter().map(|f| tape.leaf(f.clone())).collect();
        let got = gnn_forward(&mut binding, "gnn", &seq, &cfg);

        // oracle: plain f64, explicit gate equations
        let sigm = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |m: &Tensor<f64>, v: &[f64]| -> Vec<f64> {
            let (r, c) = (m.shape()[0], m.shape()[1]);
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += v[i] * m.at(&[i, j]);
                }
            }
            out
        };
        let gru_row = |x: &[f64], h: &[f64]| -> Vec<f64> {
            let gate = |w: &str, u: &str, b: &str| -> Vec<f64> {
                let xw = matvec(store.get(w), x);
                let hu = matvec(store.get(u), h);
                let bb = store.get(b).data();
                (0..2).map(|i| xw[i] + hu[i] + bb[i]).collect()
            };
            let z: Vec<f64> = gate("gnn.gru.wz", "gnn.gru.uz", "gnn.gru.bz")
                .iter()
                .map(|&v| sigm(v))
                .collect();
            let r: Vec<f64> = gate("gnn.gru.wr", "gnn.gru.ur", "gnn.gru.br")
                .iter()
                .map(|&v| sigm(v))
                .collect();
            let xw = matvec(store.get("gnn.gru.wh"), x);
            let hu = matvec(store.get("gnn.gru.uh"), h);
            let bh = store.get("gnn.gru.bh").data();
            (0..2)
                .map(|i| {
                    let cand = (xw[i] + r[i] * hu[i] + bh[i]).tanh();
                    (1.0 - z[i]) * h[i] + z[i] * cand
                })
                .collect()
        };

        let mut cur = frames.clone();
        for _ in 0..2 {
            let mut hidden = cur[0].clone();
            let mut next = Vec::new();
            for f in &cur {
                let msgs = spatial_oracle(&store, f);
                let mut out = Tensor::zeros(&[2, 2]);
                for i in 0..2 {
                    let row = gru_row(
                        &msgs.data()[i * 2..(i + 1) * 2],
                        &hidden.data()[i * 2..(i + 1) * 2],
                    );
                    out.data_mut()[i * 2..(i + 1) * 2].copy_from_slice(&row);
                }
                hidden = out.clone();
                next.push(out);
            }
            cur = next;
        }
        for t in 0..2 {
            for (g, w) in got[t].value().data().iter().zip(cur[t].data()) {
                assert!((g - w).abs() < 1e-10, "frame {t}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let tape = Tape::new();
        let nodes = tape.leaf(pseudo(&[5, 6], 79));
        let a = attention_weights(&nodes).value();
        for i in 0..5 {
            let total: f64 = (0..5).map(|j| a.at(&[i, j])).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_flow_through_the_full_forward() {
        let store = build(3, 83);
        let cfg = GnnConfig::new(2, 3, 2);
        let x0 = pseudo(&[2, 3], 89);
        let x1 = pseudo(&[2, 3], 97);
        let err = crate::diffcore::grad_check(
            |tape, v| {
                let mut binding = Binding::new(tape, &store);
                let seq = vec![v, tape.leaf(x1.clone())];
                let out = gnn_forward(&mut binding, "gnn", &seq, &cfg);
                out[0].add(&out[1]).tanh().sum()
            },
            &x0,
            1e-6,
        );
        assert!(err < 1e-5, "gnn grad check error {err}");
    }
}
