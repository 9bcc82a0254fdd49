//! Central finite-difference verification of reverse-mode gradients.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Denominator floor of the relative error, so that parameters with a
/// vanishing gradient are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let v = g.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::shape(format!("checked function returned {:?}", v.shape())));
    }
    let value = v.get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("checked function is not finite: {value}")));
    }
    Ok(value)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// `(f(theta + h) - f(theta - h)) / 2h` for every entry of every parameter.
///
/// `f` must bind parameters through [`Graph::param`] and be deterministic
/// (no dropout).
pub fn grad_check<F>(params: &ParamStore, h: f64, tol: f64, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    if !g.value(out).is_finite() {
        return Err(Error::Numeric("checked function is not finite".into()));
    }
    let grads = g.backward(out)?;
    let analytic = g.param_grads(&grads, params);

    let mut report = CheckReport {
        entries_checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance: tol,
    };
    let mut probe = params.clone();
    let ids: Vec<String> = params.ids().cloned().collect();
    for id in &ids {
        let n = params.get(id)?.len();
        for k in 0..n {
            let original = params.get(id)?.data()[k];
            probe.get_mut(id)?.data_mut()[k] = original + h;
            let plus = evaluate(&f, &probe)?;
            probe.get_mut(id)?.data_mut()[k] = original - h;
            let minus = evaluate(&f, &probe)?;
            probe.get_mut(id)?.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id)?.data()[k];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if report.worst_param.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = id.clone();
                report.worst_index = k;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_squares() {
        let mut store = ParamStore::new(0);
        store
            .insert("w", Tensor::from_rows(&[vec![0.3, -1.2], vec![2.5, 0.7]]).unwrap())
            .unwrap();
        let f = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            let flat = g.reshape(w, 1, 4)?;
            Ok(g.matmul_t(flat, flat)?)
        };
        let report = grad_check(&store, 1e-4, 1e-6, f).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.entries_checked, 4);

        // analytic gradient 2 theta
        let mut g = Graph::new();
        let out = f(&mut g, &store).unwrap();
        let grads = g.backward(out).unwrap();
        let pg = g.param_grads(&grads, &store);
        assert_eq!(pg.get("w").unwrap().data(), &[0.6, -2.4, 5.0, 1.4]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new(0);
        store.insert_uniform("w", 3, 2).unwrap();
        let f = |g: &mut Graph, s: &ParamStore| {
            let _ = g.param(s, "w")?;
            Ok(g.constant(Tensor::scalar(4.0)))
        };
        let report = grad_check(&store, 1e-4, 0.0, f).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        let f = |g: &mut Graph, s: &ParamStore| {
            let w = g.param(s, "w")?;
            Ok(g.scale(w, f64::INFINITY))
        };
        assert!(matches!(grad_check(&store, 1e-4, 1e-6, f), Err(Error::Numeric(_))));
    }
}
