use super::{DiffError, Tape, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over entries of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Vec<f64>>,
    pub entries_checked: usize,
}

/// Checks the gradient of a scalar function of `params` by central
/// differences with step `eps`.
///
/// `f` receives a fresh tape and one [`Var`] per parameter, and must return a
/// one-element output. Runs in `f64` with non-finite checking enabled, so a
/// NaN or infinity surfaces as [`DiffError::NonFinite`] naming the node.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, DiffError>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(DiffError::Domain { op: "grad_check", detail: format!("step {eps} outside [1e-4, 1e-2]") });
    }
    let eval = |values: &[Tensor<f64>]| -> Result<f64, DiffError> {
        let mut tape = Tape::<f64>::new().with_finite_checks(true);
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::<f64>::new().with_finite_checks(true);
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel_error = 0.0_f64;
    let mut worst = None;
    let mut entries_checked = 0;
    for p in 0..work.len() {
        for k in 0..work[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p][k];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            entries_checked += 1;
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(rel);
                worst = Some((p, k));
            }
        }
    }
    Ok(GradCheckReport { max_rel_error, worst, analytic, entries_checked })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert_eq!(report.analytic[0], vec![2.0, 4.0, 6.0]);
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn rejects_step_outside_range() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(grad_check(|t, v| t.sum(v[0]), &[x], 0.5).is_err());
    }

    #[test]
    fn names_the_non_finite_node() {
        let x = Tensor::new(vec![1], vec![1000.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let e = t.exp(v[0])?;
                t.sum(e)
            },
            &[x],
            1e-3,
        )
        .unwrap_err();
        assert_eq!(err, DiffError::NonFinite { node: 1, op: "exp" });
    }
}
