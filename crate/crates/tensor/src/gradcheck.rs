//! Central finite-difference verification of analytic gradients.
//!
//! Each coordinate uses the five-point central stencil
//! `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, whose truncation error
//! is O(h⁴). That lets `h` be large enough to keep roundoff well below the
//! smallest gradients worth checking. Steps that straddle a kink of a
//! piecewise activation are detected through [`Graph::branch_fingerprint`]
//! and shrunk tenfold until every stencil point sits on the same smooth piece
//! as `x`, down to `min_epsilon`.

use rand::seq::index::sample;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::TensorError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Initial step.
    pub epsilon: f64,
    /// Smallest step tried when kinks are straddled.
    pub min_epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-2,
            min_epsilon: 1e-7,
            tolerance: 1e-4,
            coords_per_param: Some(8),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Step actually used.
    pub step: f64,
    /// Whether all stencil points shared the branch pattern of `x`.
    pub smooth: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordCheck>,
    /// Every coordinate whose relative error reached the tolerance.
    pub failures: Vec<CoordCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backpropagated gradients of `loss_fn` against central differences
/// on a sample of coordinates of every parameter in `store`.
///
/// `loss_fn` must build a scalar loss from the store's current values and be
/// deterministic. The store's values are restored before returning; its
/// gradient slots are left zeroed.
pub fn finite_diff_check<F, R>(
    store: &mut ParamStore,
    mut loss_fn: F,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var, TensorError>,
    R: Rng + ?Sized,
{
    store.zero_grad();
    let mut graph = Graph::with_grad();
    let loss = loss_fn(store, &mut graph)?;
    graph.backward(loss)?;
    store.accumulate(&graph);
    drop(graph);

    let mut eval = |store: &ParamStore| -> Result<(f64, Option<u64>), TensorError> {
        let mut g = Graph::tracking_branches();
        let l = loss_fn(store, &mut g)?;
        let v = g
            .value(l)
            .item()
            .ok_or(TensorError::NotScalarLoss(g.shape(l)))?;
        Ok((v, g.branch_fingerprint()))
    };
    let (_, center) = eval(store)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance: opts.tolerance,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let analytic = store.grad(id).data()[i];
            let orig = store.value(id).data()[i];
            let mut h = opts.epsilon;
            let (numeric, smooth) = loop {
                let mut at = |offset: f64| -> Result<(f64, Option<u64>), TensorError> {
                    store.value_mut(id).data_mut()[i] = orig + offset;
                    eval(store)
                };
                let points = [at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?];
                store.value_mut(id).data_mut()[i] = orig;
                let smooth = points.iter().all(|p| p.1 == center);
                let [p1, m1, p2, m2] = points.map(|p| p.0);
                let d = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                if smooth || h * 0.1 < opts.min_epsilon * (1.0 - 1e-9) {
                    break (d, smooth);
                }
                h *= 0.1;
            };
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            let coord = CoordCheck {
                param: store.name(id).to_string(),
                index: i,
                analytic,
                numeric,
                rel_error: rel,
                step: h,
                smooth,
            };
            if rel >= opts.tolerance {
                report.failures.push(coord.clone());
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(coord);
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
