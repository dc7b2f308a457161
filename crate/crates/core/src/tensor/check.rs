use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_GRAD_CHECK_EPS: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns the largest relative error
/// `|analytic - numeric| / max(1, |numeric|)` over all coordinates of `x`.
///
/// `f` receives a fresh tape and the variable holding `x` (or a perturbed
/// copy of it) and must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "grad_check eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    let analytic = tape.grad_tensor(v);

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point);
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        // dyadic inputs and step keep every difference exact
        let x = Tensor::from_vec(vec![0.5, -1.25, 4.0, 9.5]);
        let err = grad_check(|t, v| t.sum_all(v), &x, 2f64.powi(-10)).unwrap();
        assert!(err < 1e-12, "{err}");
        let x = Tensor::from_vec(vec![0.3, -1.2, 4.0, 9.5]);
        let err = grad_check(|t, v| t.sum_all(v), &x, DEFAULT_GRAD_CHECK_EPS).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_out_of_range_eps_and_vector_output() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(grad_check(|t, v| t.sum_all(v), &x, 1e-2).is_err());
        assert!(matches!(
            grad_check(|_, v| Ok(v), &x, 1e-5),
            Err(Error::NotScalar(_))
        ));
    }
}
