use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;
use crate::numeric::tape::{Tape, Var};

/// Floor on the denominator of the relative error, so that entries whose
/// true gradient is (numerically) zero do not dominate the maximum.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares tape gradients with central finite differences.
///
/// `forward` receives a fresh tape with one leaf per entry of `params`
/// (same order) and returns the scalar loss node. It must be a pure
/// function of the parameter values.
pub fn gradient_check<F>(forward: F, params: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = forward(&mut tape, &leaves)?;
        Ok(tape.scalar_value(loss))
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = forward(&mut tape, &leaves)?;
    let base = tape.scalar_value(loss);
    let grads = tape.backward(loss)?;
    if eval(params)?.to_bits() != base.to_bits() {
        return Err(Error::Numeric(
            "forward pass is not deterministic: two evaluations disagree".into(),
        ));
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf);
        for k in 0..params[pi].len() {
            let orig = work[pi].as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_exact() {
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]);
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]]);
        let r = gradient_check(
            |t, p| {
                let xv = t.constant(x.clone());
                let y = t.matmul(p[0], xv)?;
                Ok(t.sum(y))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{:?}", r);
    }

    #[test]
    fn constant_loss_zero_error() {
        let r = gradient_check(|t, _| Ok(t.scalar(4.0)), &[Matrix::filled(2, 2, 1.0)], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn nondeterminism_detected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let res = gradient_check(
            |t, p| {
                calls.set(calls.get() + 1.0);
                let c = t.scalar(calls.get());
                let s = t.sum(p[0]);
                t.mul(s, c)
            },
            &[Matrix::filled(1, 1, 1.0)],
            1e-5,
        );
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn bad_step_rejected() {
        assert!(gradient_check(|t, _| Ok(t.scalar(0.0)), &[], 0.0).is_err());
    }
}
