use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::{Graph, Var};

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences with step `eps`. Each parameter tensor is scored as
/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)` over all of its elements; the worst
/// tensor's score is returned.
pub fn grad_check<F>(params: &mut ParamStore, eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.backward(loss)?.param_tensors(params)
    };
    let eval = |params: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Contract("non-finite loss during grad check".into()));
        }
        Ok(value)
    };

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (mut diff, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for i in 0..params.get(id).numel() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].data()[i];
            diff += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        worst = worst.max(diff.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(1e-12));
    }
    Ok(worst)
}
