//! Central finite-difference checks of tape gradients.

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Entries whose analytic and numeric magnitudes are both below this are
/// compared absolutely instead of relatively.
pub const REL_FLOOR: f64 = 1e-5;

/// Compares tape gradients of every trainable entry of `store` (every
/// `stride`-th one) against `(L(p + h) - L(p - h)) / 2h`.
pub fn check_store<F>(store: &mut ParameterStore, h: f64, stride: usize, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    store.zero_grad();
    store.accumulate(&grads)?;
    let analytic = store.flat_grads();
    let base = store.flat_values();

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut p = base.clone();
    for i in (0..base.len()).step_by(stride.max(1)) {
        p[i] = base[i] + h;
        store.set_flat_values(&p)?;
        let up = eval(store)?;
        p[i] = base[i] - h;
        store.set_flat_values(&p)?;
        let down = eval(store)?;
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    store.set_flat_values(&base)?;
    Ok(report)
}
