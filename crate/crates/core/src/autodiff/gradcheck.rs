//! Central finite-difference oracle for the tape.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `loss_fn` against
/// `(f(θ+eps) − f(θ−eps)) / 2eps`, coordinate by coordinate over every
/// parameter in `store`.
pub fn grad_check<F>(store: &ParamStore<f64>, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Input(format!("invalid finite-difference step {eps}")));
    }
    let analytic = {
        let mut g = Graph::with_store(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_store(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for name in &names {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?
            .data()
            .to_vec();
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
