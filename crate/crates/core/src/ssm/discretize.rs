use crate::error::{Error, Result};

/// Zero-order-hold discretization of one diagonal entry.
///
/// Returns `(Ā, (exp(ΔA) − 1) / A)`; the second factor multiplies `B` to
/// give `B̄`. `expm1` keeps the factor accurate as `ΔA → 0`, while `exp`
/// keeps `Ā` accurate for strongly negative `ΔA`.
#[inline]
pub fn zoh(a: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    if x.abs() < 0.5 {
        let em1 = x.exp_m1();
        (1.0 + em1, em1 / a)
    } else {
        let e = x.exp();
        (e, (e - 1.0) / a)
    }
}

/// Discretizes a diagonal continuous system `(A, B)` with step `Δ`.
///
/// `A` must be strictly negative and `Δ` strictly positive.
pub fn discretize(a: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::shape("discretize", &[a.len()], &[b.len()]));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("discretize: step must be positive, got {delta}")));
    }
    if let Some(n) = a.iter().position(|&v| !(v < 0.0)) {
        return Err(Error::invalid(format!(
            "discretize: A[{n}] = {} is not strictly negative",
            a[n]
        )));
    }
    let mut a_bar = Vec::with_capacity(a.len());
    let mut b_bar = Vec::with_capacity(a.len());
    for (&av, &bv) in a.iter().zip(b) {
        let (ab, f) = zoh(av, delta);
        a_bar.push(ab);
        b_bar.push(f * bv);
    }
    Ok((a_bar, b_bar))
}
