use super::{AutodiffError, Graph, NodeId, Tensor};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub passed: bool,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError>,
{
    finite_difference_check_many(|g, ids| f(g, ids[0]), std::slice::from_ref(x), h, tol)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// Each coordinate's error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check_many<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    if !(h > 0.0) {
        return Err(AutodiffError::Domain {
            op: "finite_difference_check",
            detail: format!("step must be positive, got {h}"),
        });
    }
    let eval = |ps: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let root = f(&mut g, &ids)?;
        Ok(g.scalar_value(root))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &ids)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros_like(p)))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error: f64 = 0.0;
    let mut coordinate = 0;
    for (pi, p) in params.iter().enumerate() {
        let mut num = Tensor::zeros_like(p);
        for j in 0..p.len() {
            let orig = p.data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            for v in [plus, minus] {
                if !v.is_finite() {
                    return Err(AutodiffError::NonFinite { coordinate, value: v });
                }
            }
            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[j] = n;
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(n.abs()).max(DENOMINATOR_FLOOR);
            max_rel_error = max_rel_error.max((a - n).abs() / denom);
            coordinate += 1;
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error,
        passed: max_rel_error <= tol,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_difference_check(
            |g, x| g.square(x).and_then(|y| g.sum(y)),
            &Tensor::scalar(3.0),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!((r.analytic[0].item() - 6.0).abs() < 1e-12);
        assert!((r.numeric[0].item() - 6.0).abs() < 1e-6);
        assert!(r.passed);
    }

    #[test]
    fn constant_function_passes() {
        let r = finite_difference_check(
            |g, _x| Ok(g.constant(Tensor::scalar(4.2))),
            &Tensor::vector(vec![1.0, 2.0]),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn non_finite_evaluation_is_error() {
        let r = finite_difference_check(
            |g, x| {
                let big = g.scale(x, 1e300)?;
                let e = g.exp(big)?;
                g.sum(e)
            },
            &Tensor::scalar(1.0),
            1e-5,
            1e-4,
        );
        assert!(matches!(r, Err(AutodiffError::NonFinite { .. })));
    }
}
