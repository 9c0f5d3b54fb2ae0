//! Real roots of low-degree polynomials.

/// Real roots of `c[0] x^3 + c[1] x^2 + c[2] x + c[3]`, ascending.
///
/// Closed form (trigonometric / Cardano) followed by Newton polishing on the
/// original coefficients. When the leading coefficient is negligible relative
/// to the largest one the problem degrades to the quadratic (or linear) case.
pub fn real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    if c[0].abs() < 1e-12 * scale {
        return real_quadratic_roots([c[1], c[2], c[3]]);
    }
    let (a, b, d) = (c[1] / c[0], c[2] / c[0], c[3] / c[0]);
    // x = t - a/3 gives t^3 + p t + q = 0.
    let shift = a / 3.0;
    let p = b - a * shift;
    let q = 2.0 * shift * shift * shift - shift * b + d;
    let disc = 0.25 * q * q + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        // Avoid cancellation: pick the larger-magnitude cube root first.
        let u = (-0.5 * q - q.signum() * s).cbrt();
        let t = if u != 0.0 { u - p / (3.0 * u) } else { 0.0 };
        vec![t - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    };
    for r in roots.iter_mut() {
        *r = polish(&c, *r);
    }
    roots.sort_by(|x, y| x.total_cmp(y));
    roots
}

/// Real roots of `c[0] x^2 + c[1] x + c[2]`, ascending.
pub fn real_quadratic_roots(c: [f64; 3]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    if c[0].abs() < 1e-12 * scale {
        if c[1].abs() < 1e-12 * scale {
            return Vec::new();
        }
        return vec![-c[2] / c[1]];
    }
    let disc = c[1] * c[1] - 4.0 * c[0] * c[2];
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (c[1] + c[1].signum() * disc.sqrt());
    let mut roots = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / c[0], c[2] / q]
    };
    roots.sort_by(|x, y| x.total_cmp(y));
    roots
}

fn polish(c: &[f64; 4], mut x: f64) -> f64 {
    for _ in 0..3 {
        let f = ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
        let df = (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2];
        if df == 0.0 {
            break;
        }
        let step = f / df;
        let next = x - step;
        // Keep the step only when it does not make the residual worse.
        let fn_ = ((c[0] * next + c[1]) * next + c[2]) * next + c[3];
        if fn_.abs() <= f.abs() {
            x = next;
        } else {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(c: &[f64; 4], x: f64) -> f64 {
        ((c[0] * x + c[1]) * x + c[2]) * x + c[3]
    }

    #[test]
    fn three_real_roots() {
        // (x - 1)(x + 2)(x - 3)
        let r = real_cubic_roots([1.0, -2.0, -5.0, 6.0]);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn one_real_root() {
        // (x - 2)(x^2 + 1)
        let r = real_cubic_roots([1.0, -2.0, 1.0, -2.0]);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn vanishing_leading_coefficient_falls_back() {
        let r = real_cubic_roots([1e-20, 1.0, -3.0, 2.0]);
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14);
        assert_eq!(real_cubic_roots([0.0, 0.0, 2.0, -1.0]), vec![0.5]);
        assert!(real_cubic_roots([0.0; 4]).is_empty());
    }

    #[test]
    fn triple_root() {
        let r = real_cubic_roots([1.0, -3.0, 3.0, -1.0]);
        assert!(!r.is_empty());
        assert!(r.iter().all(|x| (x - 1.0).abs() < 1e-5));
    }

    proptest! {
        #[test]
        fn roots_of_planted_cubic(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, k in 0.1f64..10.0) {
            prop_assume!((a - b).abs() > 1e-3 && (b - c).abs() > 1e-3 && (a - c).abs() > 1e-3);
            let coeffs = [k, -k * (a + b + c), k * (a * b + b * c + a * c), -k * a * b * c];
            let roots = real_cubic_roots(coeffs);
            prop_assert_eq!(roots.len(), 3);
            for r in &roots {
                prop_assert!(eval(&coeffs, *r).abs() < 1e-9 * k * 125.0);
            }
            for want in [a, b, c] {
                prop_assert!(roots.iter().any(|r| (r - want).abs() < 1e-6));
            }
        }
    }
}
