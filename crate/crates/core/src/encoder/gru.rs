//! Gated recurrent unit built from tape primitives.
//!
//! Cell convention: update and reset gates from the concatenated
//! [input; previous state], reset applied inside the candidate's recurrent
//! term, and the new state gated as (1-z)*candidate + z*previous.

use crate::error::Result;
use crate::kernel::{ParamStore, SeedRng, Tape, Var};

/// Parameter names for one GRU direction under a prefix such as
/// `utt_enc.gru_fwd`.
pub fn init_gru(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut SeedRng,
) -> Result<()> {
    let cat = input_dim + hidden_dim;
    for gate in ["z", "r", "h"] {
        store.insert_uniform(
            &format!("{prefix}.w_{gate}"),
            vec![hidden_dim, cat],
            hidden_dim,
            rng,
        )?;
        store.insert_zeros(&format!("{prefix}.b_{gate}"), vec![hidden_dim])?;
    }
    Ok(())
}

pub fn gru_param_names(prefix: &str) -> Vec<String> {
    ["w_z", "b_z", "w_r", "b_r", "w_h", "b_h"]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
}

/// Tape handles for one GRU direction.
#[derive(Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(GruVars {
            w_z: tape.param(store, &format!("{prefix}.w_z"))?,
            b_z: tape.param(store, &format!("{prefix}.b_z"))?,
            w_r: tape.param(store, &format!("{prefix}.w_r"))?,
            b_r: tape.param(store, &format!("{prefix}.b_r"))?,
            w_h: tape.param(store, &format!("{prefix}.w_h"))?,
            b_h: tape.param(store, &format!("{prefix}.b_h"))?,
        })
    }
}

/// One recurrence step: returns the next hidden state.
pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let xh = tape.concat(x, h_prev)?;
    let z_pre = tape.affine(xh, p.w_z, p.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = tape.affine(xh, p.w_r, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let xrh = tape.concat(x, rh)?;
    let c_pre = tape.affine(xrh, p.w_h, p.b_h)?;
    let c = tape.tanh(c_pre);
    let zc = tape.one_minus(z);
    let keep_new = tape.mul(zc, c)?;
    let keep_old = tape.mul(z, h_prev)?;
    tape.add(keep_new, keep_old)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{sigmoid, Tensor};

    fn zero_gru(store: &mut ParamStore, input_dim: usize, hidden: usize) {
        let cat = input_dim + hidden;
        for gate in ["z", "r", "h"] {
            store
                .insert_zeros(&format!("g.w_{gate}"), vec![hidden, cat])
                .unwrap();
            store.insert_zeros(&format!("g.b_{gate}"), vec![hidden]).unwrap();
        }
    }

    #[test]
    fn zero_parameters_zero_state_stay_zero() {
        let mut store = ParamStore::new();
        zero_gru(&mut store, 2, 3);
        let mut tape = Tape::new();
        let g = GruVars::bind(&mut tape, &store, "g").unwrap();
        let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]));
        let h0 = tape.leaf(Tensor::zeros(vec![3]));
        let h1 = gru_step(&mut tape, x, h0, &g).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_parameters_halve_previous_state() {
        // z = sigmoid(0) = 0.5 gates half the previous state through.
        let mut store = ParamStore::new();
        zero_gru(&mut store, 2, 3);
        let mut tape = Tape::new();
        let g = GruVars::bind(&mut tape, &store, "g").unwrap();
        let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]));
        let h0 = tape.leaf(Tensor::vector(vec![0.4, -0.8, 1.2]));
        let h1 = gru_step(&mut tape, x, h0, &g).unwrap();
        for (got, want) in tape.value(h1).data().iter().zip(&[0.2, -0.4, 0.6]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    /// Plain-loop reference cell, independent of the tape.
    fn scalar_gru(
        x: &[f64],
        h: &[f64],
        w: impl Fn(&str) -> Vec<f64>,
        hidden: usize,
    ) -> Vec<f64> {
        let cat: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
        let gate = |name: &str, b: &str, inp: &[f64]| -> Vec<f64> {
            let wm = w(name);
            let bm = w(b);
            (0..hidden)
                .map(|o| {
                    bm[o]
                        + inp
                            .iter()
                            .enumerate()
                            .map(|(i, v)| wm[o * inp.len() + i] * v)
                            .sum::<f64>()
                })
                .collect()
        };
        let z: Vec<f64> = gate("w_z", "b_z", &cat).iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = gate("w_r", "b_r", &cat).iter().map(|&v| sigmoid(v)).collect();
        let xrh: Vec<f64> = x
            .iter()
            .copied()
            .chain(r.iter().zip(h).map(|(rv, hv)| rv * hv))
            .collect();
        let c: Vec<f64> = gate("w_h", "b_h", &xrh).iter().map(|&v| v.tanh()).collect();
        (0..hidden)
            .map(|i| (1.0 - z[i]) * c[i] + z[i] * h[i])
            .collect()
    }

    #[test]
    fn matches_scalar_reference_on_random_instance() {
        let mut rng = SeedRng::new(17);
        let (input_dim, hidden) = (3, 3);
        let mut store = ParamStore::new();
        init_gru(&mut store, "g", input_dim, hidden, &mut rng).unwrap();
        // Nudge the biases off zero so every term participates.
        for gate in ["z", "r", "h"] {
            let p = store.get_mut(&format!("g.b_{gate}")).unwrap();
            for v in p.value.data_mut() {
                *v = rng.uniform(-0.3, 0.3);
            }
        }
        let x: Vec<f64> = (0..input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let h: Vec<f64> = (0..hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let mut tape = Tape::new();
        let g = GruVars::bind(&mut tape, &store, "g").unwrap();
        let xv = tape.leaf(Tensor::vector(x.clone()));
        let hv = tape.leaf(Tensor::vector(h.clone()));
        let h1 = gru_step(&mut tape, xv, hv, &g).unwrap();

        let lookup = |name: &str| store.get(&format!("g.{name}")).unwrap().value.data().to_vec();
        let expected = scalar_gru(&x, &h, lookup, hidden);
        for (got, want) in tape.value(h1).data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
