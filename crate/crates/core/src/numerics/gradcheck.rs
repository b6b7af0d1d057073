use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Result of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coordinates: usize,
    /// Per-parameter maximum error, in store order.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rtol: f64) -> bool {
        self.max_rel_error <= rtol
    }

    pub fn into_result(self, rtol: f64) -> Result<Self> {
        if self.passes(rtol) {
            Ok(self)
        } else {
            Err(Error::GradCheck {
                max_rel_error: self.max_rel_error,
                location: format!(
                    "{}[{}]",
                    self.worst_param.as_deref().unwrap_or("?"),
                    self.worst_index
                ),
            })
        }
    }
}

pub const DEFAULT_EPS: f64 = 1e-5;

/// Checks the gradient of the scalar `f` with respect to every trainable
/// parameter of `store`, coordinate by coordinate.
///
/// `f` records its computation on the tape it is given and returns the loss
/// handle. Existing gradients in `store` are zeroed and left holding the
/// analytic gradient at the unperturbed point.
pub fn finite_difference_check<F>(store: &mut ParamStore, mut f: F, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let v = tape.scalar(loss)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                op: "finite_difference_check",
            })
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coordinates: 0,
        per_param: Vec::new(),
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let mut param_max: f64 = 0.0;
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = store.grad(id).data()[i];
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            param_max = param_max.max(err);
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = i;
            }
        }
        report.per_param.push((store.get(id).name.clone(), param_max));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn sum_of_squares_is_accurate() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let report = finite_difference_check(
            &mut store,
            |tape, store| {
                let p = tape.param(store, id)?;
                let sq = tape.mul(p, p)?;
                tape.sum(sq)
            },
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let report = finite_difference_check(
            &mut store,
            |tape, _| tape.constant(Tensor::scalar(4.0)),
            DEFAULT_EPS,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut store = ParamStore::new();
        assert!(finite_difference_check(&mut store, |t, _| t.constant(Tensor::scalar(0.0)), 0.0).is_err());
    }
}
