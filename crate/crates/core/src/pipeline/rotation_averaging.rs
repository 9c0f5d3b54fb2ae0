use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, Vector3};

use super::view_graph::{check_connected, ViewGraphEdge};
use super::PipelineError;
use crate::geom::{rotation_log, Rotation};

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingConfig {
    /// Huber threshold on relative-rotation residuals, degrees.
    pub huber_delta_deg: f64,
    /// Edges with residual above `trim_factor * huber_delta_deg` get zero
    /// weight, as long as the graph stays connected without them.
    pub trim_factor: f64,
    /// Iterations of the L1 warm start.
    pub l1_iterations: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the largest update, radians.
    pub tolerance: f64,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self {
            huber_delta_deg: 5.0,
            trim_factor: 3.0,
            l1_iterations: 20,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

/// Composes relative rotations along a maximum-support spanning tree (Kruskal)
/// rooted at the anchor.
fn spanning_tree_init(
    nodes: &[usize],
    edges: &[ViewGraphEdge],
    anchor: usize,
) -> BTreeMap<usize, Rotation> {
    let index = |f: usize| nodes.binary_search(&f).unwrap();
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| edges[b].support.cmp(&edges[a].support).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut adjacency: Vec<Vec<(usize, Rotation)>> = vec![Vec::new(); nodes.len()];
    for k in order {
        let e = &edges[k];
        let (a, b) = (index(e.i), index(e.j));
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            adjacency[a].push((b, e.relative_rotation));
            adjacency[b].push((a, e.relative_rotation.inverse()));
        }
    }
    let mut out = BTreeMap::new();
    let root = index(anchor);
    let mut global: Vec<Option<Rotation>> = vec![None; nodes.len()];
    global[root] = Some(Rotation::identity());
    let mut queue = VecDeque::from([root]);
    while let Some(a) = queue.pop_front() {
        let ra = global[a].unwrap();
        for &(b, rel) in &adjacency[a] {
            if global[b].is_none() {
                global[b] = Some(rel * ra);
                queue.push_back(b);
            }
        }
    }
    for (k, g) in global.into_iter().enumerate() {
        out.insert(nodes[k], g.unwrap_or_else(Rotation::identity));
    }
    out
}

/// Residual of an edge: `log(R_j^T R_ij R_i)`, expressed as the difference of
/// right-multiplied corrections `w_j - w_i`.
fn edge_residual(e: &ViewGraphEdge, rot: &BTreeMap<usize, Rotation>) -> Vector3<f64> {
    rotation_log(&(rot[&e.j].inverse() * e.relative_rotation * rot[&e.i]))
}

/// One weighted least-squares step in the tangent space; returns the largest
/// correction applied.
fn weighted_step(
    nodes: &[usize],
    edges: &[ViewGraphEdge],
    weights: &[f64],
    anchor: usize,
    rot: &mut BTreeMap<usize, Rotation>,
) -> f64 {
    let free: Vec<usize> = nodes.iter().copied().filter(|&n| n != anchor).collect();
    let slot = |f: usize| free.binary_search(&f).ok();
    let n = 3 * free.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for (e, &w) in edges.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let r = edge_residual(e, rot);
        let (si, sj) = (slot(e.i), slot(e.j));
        for (s, sign) in [(sj, 1.0), (si, -1.0)] {
            if let Some(s) = s {
                for d in 0..3 {
                    h[(3 * s + d, 3 * s + d)] += w;
                    g[3 * s + d] += sign * w * r[d];
                }
            }
        }
        if let (Some(si), Some(sj)) = (si, sj) {
            for d in 0..3 {
                h[(3 * si + d, 3 * sj + d)] -= w;
                h[(3 * sj + d, 3 * si + d)] -= w;
            }
        }
    }
    for d in 0..n {
        h[(d, d)] += 1e-12;
    }
    let Some(chol) = h.cholesky() else { return 0.0 };
    let w = chol.solve(&g);
    let mut max = 0.0f64;
    for (k, &f) in free.iter().enumerate() {
        let step = Vector3::new(w[3 * k], w[3 * k + 1], w[3 * k + 2]);
        max = max.max(step.norm());
        let r = rot.get_mut(&f).unwrap();
        *r *= Rotation::new(step);
        r.renormalize();
    }
    max
}

/// Global rotations from relative ones, with the anchor fixed to identity.
///
/// Starts from the maximum-support spanning tree, runs an L1 warm start
/// (weights `1 / residual`), then iteratively reweighted least squares with
/// a Huber weight. Edges far beyond the Huber threshold are trimmed when the
/// remaining graph stays connected.
pub fn average_rotations(
    edges: &[ViewGraphEdge],
    anchor: usize,
    cfg: &AveragingConfig,
) -> Result<BTreeMap<usize, Rotation>, PipelineError> {
    let mut nodes: Vec<usize> = edges
        .iter()
        .flat_map(|e| [e.i, e.j])
        .chain([anchor])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    check_connected(
        &nodes,
        &edges.iter().map(|e| (e.i, e.j)).collect::<Vec<_>>(),
    )?;
    let mut rot = spanning_tree_init(&nodes, edges, anchor);
    if edges.is_empty() {
        return Ok(rot);
    }
    let delta = cfg.huber_delta_deg.to_radians();
    for _ in 0..cfg.l1_iterations {
        let weights: Vec<f64> = edges
            .iter()
            .map(|e| 1.0 / edge_residual(e, &rot).norm().max(1e-4))
            .collect();
        if weighted_step(&nodes, edges, &weights, anchor, &mut rot) < cfg.tolerance {
            break;
        }
    }
    for _ in 0..cfg.max_iterations {
        let residuals: Vec<f64> = edges
            .iter()
            .map(|e| edge_residual(e, &rot).norm())
            .collect();
        let huber: Vec<f64> = residuals
            .iter()
            .map(|&r| if r <= delta { 1.0 } else { delta / r })
            .collect();
        let trimmed: Vec<f64> = huber
            .iter()
            .zip(&residuals)
            .map(|(&w, &r)| if r > cfg.trim_factor * delta { 0.0 } else { w })
            .collect();
        let kept: Vec<(usize, usize)> = edges
            .iter()
            .zip(&trimmed)
            .filter(|(_, w)| **w > 0.0)
            .map(|(e, _)| (e.i, e.j))
            .collect();
        let weights = if check_connected(&nodes, &kept).is_ok() {
            trimmed
        } else {
            huber
        };
        if weighted_step(&nodes, edges, &weights, anchor, &mut rot) < cfg.tolerance {
            break;
        }
    }
    Ok(rot)
}
