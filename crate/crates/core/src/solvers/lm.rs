use nalgebra::{DMatrix, DVector};

/// Small dense Levenberg-Marquardt with a central-difference Jacobian.
///
/// `residuals(params, out)` fills `out` and returns false when the parameters
/// are outside the model's domain. Returns the final cost, or `None` if the
/// starting point is not evaluable. `params` is only ever replaced by a point
/// of strictly lower cost.
pub(crate) fn minimize<F>(
    params: &mut [f64],
    n_residuals: usize,
    max_iterations: usize,
    residuals: F,
) -> Option<f64>
where
    F: Fn(&[f64], &mut DVector<f64>) -> bool,
{
    let n = params.len();
    let mut res = DVector::zeros(n_residuals);
    if !residuals(params, &mut res) {
        return None;
    }
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    let mut jac = DMatrix::zeros(n_residuals, n);
    let mut plus = res.clone();
    let mut minus = res.clone();
    let mut p = params.to_vec();
    let mut m = params.to_vec();
    for _ in 0..max_iterations {
        for j in 0..n {
            let h = 1e-7 * (1.0 + params[j].abs());
            p.copy_from_slice(params);
            m.copy_from_slice(params);
            p[j] += h;
            m[j] -= h;
            if !(residuals(&p, &mut plus) && residuals(&m, &mut minus)) {
                return Some(cost);
            }
            jac.set_column(j, &((&plus - &minus) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += mu * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            for j in 0..n {
                p[j] = params[j] + step[j];
            }
            if residuals(&p, &mut plus) && plus.norm_squared() < cost {
                let new_cost = plus.norm_squared();
                let rel = (cost - new_cost) / cost.max(1e-300);
                params.copy_from_slice(&p);
                res.copy_from(&plus);
                cost = new_cost;
                mu = (mu * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some(cost)
}
