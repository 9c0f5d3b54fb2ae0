/// Parameters of the geometric robust information criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GricParams {
    pub sigma: f64,
    /// Dimension of the model manifold (3 for F, 2 for a homography).
    pub d: usize,
    /// Number of model parameters.
    pub k: usize,
    /// Dimension of a datum (4 for a correspondence).
    pub r: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl GricParams {
    /// Torr's constants: `lambda1 = ln r`, `lambda2 = ln(r n)`, `lambda3 = 2`.
    pub fn torr(sigma: f64, d: usize, k: usize, n: usize) -> Self {
        let r = 4;
        Self {
            sigma,
            d,
            k,
            r,
            lambda1: (r as f64).ln(),
            lambda2: ((r * n.max(1)) as f64).ln(),
            lambda3: 2.0,
        }
    }
}

/// `sum min(e^2 / sigma^2, lambda3 (r - d)) + lambda1 d n + lambda2 k`;
/// lower is better. `residuals` are squared errors `e^2`.
pub fn gric_score(residuals: &[f64], p: &GricParams) -> f64 {
    let cap = p.lambda3 * (p.r - p.d) as f64;
    let s2 = p.sigma * p.sigma;
    let data: f64 = residuals.iter().map(|e| (e / s2).min(cap)).sum();
    data + p.lambda1 * (p.d * residuals.len()) as f64 + p.lambda2 * p.k as f64
}
