//! Small layer compositions shared across the model: affine maps and the
//! gated recurrent cell.

use super::params::{Binding, Initializer, ParamStore};
use super::tape::Var;
use super::tensor::{Real, Tensor};

/// `x . w + b` for `x: [B, In]`, `w: [In, Out]`, `b: [Out]`.
pub fn linear<T: Real>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Var<T> {
    x.matmul(w).add(b)
}

/// Registers GRU parameters for input width `c_in` and state width `c_out`.
///
/// Gate weights use plain scaled-uniform initialization; biases start at
/// zero.
pub fn register_gru<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) {
    let bound = 1.0 / (c_out.max(1) as f64).sqrt();
    for gate in ["z", "r", "h"] {
        store.insert(format!("{prefix}.w{gate}"), init.scaled(&[c_in, c_out], bound));
        store.insert(format!("{prefix}.u{gate}"), init.scaled(&[c_out, c_out], bound));
        store.insert(format!("{prefix}.b{gate}"), Tensor::zeros(&[c_out]));
    }
}

/// GRU parameters bound onto a tape.
pub struct GruVars<T: Real> {
    wz: Var<T>,
    uz: Var<T>,
    bz: Var<T>,
    wr: Var<T>,
    ur: Var<T>,
    br: Var<T>,
    wh: Var<T>,
    uh: Var<T>,
    bh: Var<T>,
}

impl<T: Real> GruVars<T> {
    pub fn bind(binding: &mut Binding<'_, T>, prefix: &str) -> Self {
        GruVars {
            wz: binding.leaf(&format!("{prefix}.wz")),
            uz: binding.leaf(&format!("{prefix}.uz")),
            bz: binding.leaf(&format!("{prefix}.bz")),
            wr: binding.leaf(&format!("{prefix}.wr")),
            ur: binding.leaf(&format!("{prefix}.ur")),
            br: binding.leaf(&format!("{prefix}.br")),
            wh: binding.leaf(&format!("{prefix}.wh")),
            uh: binding.leaf(&format!("{prefix}.uh")),
            bh: binding.leaf(&format!("{prefix}.bh")),
        }
    }
}

/// One GRU step over row vectors.
///
/// `x: [B, Cin]`, `h: [B, Cout]`; the same weights apply to every row.
/// Convention: `z = sigm(x Wz + h Uz + bz)`, `r = sigm(x Wr + h Ur + br)`,
/// `h~ = tanh(x Wh + r * (h Uh) + bh)`, and the new state is
/// `h' = (1 - z) * h + z * h~` — so all-zero weights halve the state.
pub fn gru_cell<T: Real>(x: &Var<T>, h: &Var<T>, p: &GruVars<T>) -> Var<T> {
    assert_eq!(
        x.shape()[0],
        h.shape()[0],
        "gru_cell batch mismatch: {:?} vs {:?}",
        x.shape(),
        h.shape()
    );
    let z = linear(x, &p.wz, &p.bz).add(&h.matmul(&p.uz)).sigmoid();
    let r = linear(x, &p.wr, &p.br).add(&h.matmul(&p.ur)).sigmoid();
    let cand = linear(x, &p.wh, &p.bh).add(&r.mul(&h.matmul(&p.uh))).tanh();
    let one = x.tape().constant(Tensor::filled(z.shape(), T::one()));
    one.sub(&z).mul(h).add(&z.mul(&cand))
}

/// Per-channel learnable scale and shift, the batch-norm stand-in.
/// `x: [..., C]`, `scale, shift: [C]`.
pub fn scale_shift<T: Real>(x: &Var<T>, scale: &Var<T>, shift: &Var<T>) -> Var<T> {
    x.mul(scale).add(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tape::Tape;

    fn zero_gru(c: usize) -> (ParamStore<f64>, ()) {
        let mut store = ParamStore::new();
        for gate in ["z", "r", "h"] {
            store.insert(format!("gru.w{gate}"), Tensor::zeros(&[c, c]));
            store.insert(format!("gru.u{gate}"), Tensor::zeros(&[c, c]));
            store.insert(format!("gru.b{gate}"), Tensor::zeros(&[c]));
        }
        (store, ())
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (store, _) = zero_gru(3);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let p = GruVars::bind(&mut binding, "gru");
        let x = tape.leaf(Tensor::from_vec(&[1, 3], vec![0.3, -0.4, 2.0]));
        let h = tape.leaf(Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 4.0]));
        let out = gru_cell(&x, &h, &p).value();
        assert_eq!(out.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_everything_stays_zero() {
        let (store, _) = zero_gru(2);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let p = GruVars::bind(&mut binding, "gru");
        let x = tape.leaf(Tensor::zeros(&[1, 2]));
        let h = tape.leaf(Tensor::zeros(&[1, 2]));
        assert_eq!(gru_cell(&x, &h, &p).value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn matches_standalone_gate_equations() {
        // Independent evaluation of the gate equations on a random 4-dim case.
        let c = 4;
        let mut init = Initializer::new(77);
        let mut store = ParamStore::<f64>::new();
        register_gru(&mut store, &mut init, "gru", c, c);
        let xval: Vec<f64> = (0..c).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let hval: Vec<f64> = (0..c).map(|i| -0.2 * (i as f64 - 1.5)).collect();

        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let p = GruVars::bind(&mut binding, "gru");
        let x = tape.leaf(Tensor::from_vec(&[1, c], xval.clone()));
        let h = tape.leaf(Tensor::from_vec(&[1, c], hval.clone()));
        let got = gru_cell(&x, &h, &p).value();

        let matvec = |m: &Tensor<f64>, v: &[f64]| -> Vec<f64> {
            let (rows, cols) = (m.shape()[0], m.shape()[1]);
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += v[i] * m.at(&[i, j]);
                }
            }
            out
        };
        let sigm = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gate = |w: &str, u: &str, b: &str| -> Vec<f64> {
            let xw = matvec(store.get(w), &xval);
            let hu = matvec(store.get(u), &hval);
            let bb = store.get(b).data();
            (0..c).map(|i| xw[i] + hu[i] + bb[i]).collect()
        };
        let z: Vec<f64> = gate("gru.wz", "gru.uz", "gru.bz").iter().map(|&v| sigm(v)).collect();
        let r: Vec<f64> = gate("gru.wr", "gru.ur", "gru.br").iter().map(|&v| sigm(v)).collect();
        let xw = matvec(store.get("gru.wh"), &xval);
        let hu = matvec(store.get("gru.uh"), &hval);
        let bh = store.get("gru.bh").data();
        for i in 0..c {
            let cand = (xw[i] + r[i] * hu[i] + bh[i]).tanh();
            let want = (1.0 - z[i]) * hval[i] + z[i] * cand;
            assert!(
                (got.data()[i] - want).abs() < 1e-12,
                "component {i}: {} vs {}",
                got.data()[i],
                want
            );
        }
    }

    #[test]
    #[should_panic(expected = "batch mismatch")]
    fn rejects_row_count_mismatch() {
        let (store, _) = zero_gru(2);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, &store);
        let p = GruVars::bind(&mut binding, "gru");
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        let h = tape.leaf(Tensor::zeros(&[1, 2]));
        let _ = gru_cell(&x, &h, &p);
    }
}
