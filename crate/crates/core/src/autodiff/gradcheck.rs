//! Central finite-difference checks for graph-built scalar functions.

use super::graph::{Graph, NodeId};
use super::params::{Bound, ParamSet};

/// Denominator floor: entries smaller than this are compared in absolute
/// terms (central differences at h = 1e-5 carry ~1e-11 of round-off).
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central errors above this trigger the one-sided kink test.
const KINK_SUSPECT: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Entries where a ReLU or max-pool kink lay within `h` and the
    /// analytic value was matched against a one-sided difference instead.
    pub kinks: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval<F>(params: &ParamSet, f: &F) -> f64
where
    F: Fn(&mut Graph, &Bound) -> NodeId,
{
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let out = f(&mut g, &b);
    g.value(out).data()[0]
}

/// Compares backprop gradients of `f` against central differences with step
/// `h` for every parameter entry. Returns the worst relative error.
pub fn finite_diff_check<F>(params: &ParamSet, f: F, h: f64) -> f64
where
    F: Fn(&mut Graph, &Bound) -> NodeId,
{
    finite_diff_report(params, f, h, usize::MAX).max_rel_error
}

/// Like [`finite_diff_check`] but probes at most `max_per_tensor` evenly
/// spaced entries of each tensor.
pub fn finite_diff_report<F>(params: &ParamSet, f: F, h: f64, max_per_tensor: usize) -> GradCheckReport
where
    F: Fn(&mut Graph, &Bound) -> NodeId,
{
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let out = f(&mut g, &b);
    g.backward(out);
    let analytic = params.grads(&g, &b);

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for (ti, name) in names.iter().enumerate() {
        let n = params.get(name).unwrap().len();
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let orig = params.get(name).unwrap().data()[j];
            probe.get_mut(name).unwrap().data_mut()[j] = orig + h;
            let fp = eval(&probe, &f);
            probe.get_mut(name).unwrap().data_mut()[j] = orig - h;
            let fm = eval(&probe, &f);
            probe.get_mut(name).unwrap().data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let mut e = rel_error(a, numeric);
            if e > KINK_SUSPECT {
                let f0 = eval(&probe, &f);
                let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
                let one_sided = rel_error(a, right).min(rel_error(a, left));
                if rel_error(right, left) > 10.0 * one_sided && one_sided < e {
                    e = one_sided;
                    report.kinks += 1;
                }
            }
            report.checked += 1;
            if e > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(e);
                if e >= report.max_rel_error {
                    report.worst_param = name.clone();
                    report.worst_index = j;
                }
            }
        }
    }
    report
}
