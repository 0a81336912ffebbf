//! Finite-difference verification of reverse-mode gradients.

#![allow(clippy::needless_range_loop)]

use crate::error::Result;
use crate::kernel::optim::ParamStore;
use crate::kernel::tape::{Tape, Var};

/// Worst relative disagreement for one parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Denominator floor: differences on gradients this small are compared
/// absolutely, since central differences carry roundoff noise of order
/// ulp(loss)/eps regardless of the gradient's size.
const DENOM_FLOOR: f64 = 1e-3;

/// Compare reverse-mode gradients against central finite differences.
///
/// `forward` must build a fresh tape over the current store values and
/// return the scalar loss node; it is re-run twice per parameter element
/// with that element nudged by ±eps. Error per element is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-3), a
/// relative error with an absolute-tolerance regime for tiny gradients.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut forward: F) -> Result<Vec<ParamCheck>>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    assert!(eps > 0.0, "eps must be positive");

    // Analytic pass.
    store.zero_grads();
    let (tape, loss) = forward(store)?;
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    store.zero_grads();

    let mut report = Vec::with_capacity(store.len());
    for slot in 0..store.len() {
        let name = store.by_slot(slot).name.clone();
        let n = store.by_slot(slot).value.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let original = store.by_slot(slot).value.data()[i];
            store.by_slot_mut(slot).value.data_mut()[i] = original + eps;
            let (tape, loss) = forward(store)?;
            let plus = tape.value(loss).item();
            store.by_slot_mut(slot).value.data_mut()[i] = original - eps;
            let (tape, loss) = forward(store)?;
            let minus = tape.value(loss).item();
            store.by_slot_mut(slot).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[slot][i];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.push(ParamCheck {
            name,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Largest relative error across all parameters.
pub fn worst_rel_error(report: &[ParamCheck]) -> f64 {
    report.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::rng::SeedRng;
    use crate::kernel::tensor::Tensor;

    #[test]
    fn affine_tanh_network_passes() {
        // loss = tanh(w·x + b) summed to a scalar through dot with ones.
        let mut rng = SeedRng::new(5);
        let mut store = ParamStore::new();
        store.insert_uniform("w", vec![3, 4], 4, &mut rng).unwrap();
        store.insert_uniform("b", vec![3], 4, &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let report = grad_check(&mut store, 1e-5, |store| {
            let mut t = Tape::new();
            let w = t.param(store, "w")?;
            let b = t.param(store, "b")?;
            let xv = t.leaf(Tensor::vector(x.clone()));
            let y = t.affine(xv, w, b)?;
            let y = t.tanh(y);
            let ones = t.leaf(Tensor::vector(vec![1.0; 3]));
            t.dot(y, ones).map(|loss| (t, loss))
        })
        .unwrap();
        let worst = worst_rel_error(&report);
        assert!(worst < 1e-6, "worst rel error {worst}");
    }

    #[test]
    fn constant_closure_reports_zero_everywhere() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let report = grad_check(&mut store, 1e-5, |_| {
            let mut t = Tape::new();
            let c = t.leaf(Tensor::scalar(4.0));
            Ok((t, c))
        })
        .unwrap();
        assert_eq!(worst_rel_error(&report), 0.0);
        assert_eq!(store.get("w").unwrap().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn composite_ops_pass_on_multiple_seeds() {
        // Exercises mul, one_minus, concat, pooling, softmax, pick, log paths.
        for seed in 0..5u64 {
            let mut rng = SeedRng::new(seed);
            let mut store = ParamStore::new();
            store.insert_uniform("a", vec![4], 4, &mut rng).unwrap();
            store.insert_uniform("b", vec![4], 4, &mut rng).unwrap();
            store.insert_uniform("m", vec![3, 8], 8, &mut rng).unwrap();
            store.insert_uniform("bias", vec![3], 8, &mut rng).unwrap();

            let report = grad_check(&mut store, 1e-5, |store| {
                let mut t = Tape::new();
                let a = t.param(store, "a")?;
                let b = t.param(store, "b")?;
                let m = t.param(store, "m")?;
                let bias = t.param(store, "bias")?;
                let s = t.sigmoid(a);
                let om = t.one_minus(b);
                let prod = t.mul(s, om)?;
                let cat = t.concat(prod, b)?;
                let h = t.stack_rows(&[cat, cat])?;
                let mx = t.pool_max(h)?;
                let mn = t.pool_mean(h)?;
                let pooled = t.add(mx, mn)?;
                let logits = t.affine(pooled, m, bias)?;
                let dist = t.softmax(logits)?;
                let p = t.pick(dist, 1)?;
                let lp = t.ln_clamped(p, 1e-12);
                let neg = t.neg(lp);
                let d = t.dot(a, b)?;
                let ls = t.log_sigmoid(d);
                let nls = t.neg(ls);
                t.sum(&[neg, nls]).map(|loss| (t, loss))
            })
            .unwrap();
            let worst = worst_rel_error(&report);
            assert!(worst < 1e-6, "seed {seed}: worst rel error {worst}");
        }
    }
}
