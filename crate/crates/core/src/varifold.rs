//! Discrete varifolds of shape graphs and their Gaussian-Binet kernel metric.
//!
//! Every edge `(p, q)` becomes one atom with centroid `c = (v_p + v_q) / 2`,
//! unit tangent `u = (v_q - v_p) / l` and mass `l = |v_q - v_p|`. Two
//! varifolds are compared through
//!
//! ```text
//! <mu, nu> = sum_i sum_j exp(-a |c_i - c_j|^2) <u_i, u_j>^2 l_i l_j
//! |mu - nu|^2 = <mu, mu> + <nu, nu> - 2 <mu, nu>
//! ```
//!
//! The squared cosine makes the metric blind to edge orientation, and the
//! atom multiset does not depend on vertex or edge ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ShapeGraph;
use crate::vec3::{self, Vec3};

/// Edges shorter than this are treated as massless when lifting decoder output.
pub const MASS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Coefficient of the spatial Gaussian `exp(-a |x - y|^2)`, in 1/length^2.
    pub a: f64,
}

impl KernelConfig {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidConfig(format!("kernel coefficient a={a} must be positive and finite")));
        }
        Ok(KernelConfig { a })
    }
}

/// `a = 1 / (2 sigma^2)` with `sigma = sigma_ratio * diameter(template)`.
pub fn default_kernel(template: &ShapeGraph, sigma_ratio: f64) -> Result<KernelConfig> {
    if !(sigma_ratio > 0.0 && sigma_ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_ratio {sigma_ratio} must be positive")));
    }
    let sigma = sigma_ratio * template.bounding_diameter();
    KernelConfig::new(1.0 / (2.0 * sigma * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub centroid: Vec3,
    pub tangent: Vec3,
    pub mass: f64,
    pub source_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteVarifold {
    pub atoms: Vec<Atom>,
}

impl DiscreteVarifold {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// Lifts a shape to its varifold. Fails on any edge no longer than the
/// default degeneracy threshold.
pub fn lift(g: &ShapeGraph) -> Result<DiscreteVarifold> {
    let eps = crate::geometry::default_eps_len(&g.vertices);
    let mut atoms = Vec::with_capacity(g.edges.len());
    for (e, &[p, q]) in g.edges.iter().enumerate() {
        let t = vec3::sub(g.vertices[q], g.vertices[p]);
        let l = vec3::norm(t);
        if !(l > eps) {
            return Err(Error::DegenerateEdge { edge: e, length: l, eps });
        }
        atoms.push(Atom {
            centroid: vec3::midpoint(g.vertices[p], g.vertices[q]),
            tangent: vec3::scale(t, 1.0 / l),
            mass: l,
            source_edge: e,
        });
    }
    Ok(DiscreteVarifold { atoms })
}

/// Lifting that never fails: edges of length `<= MASS_CLAMP` get mass
/// `MASS_CLAMP` and a zero tangent, so they drop out of every kernel term.
pub fn lift_clamped(vertices: &[Vec3], edges: &[[usize; 2]]) -> DiscreteVarifold {
    let atoms = edges
        .iter()
        .enumerate()
        .map(|(e, &[p, q])| {
            let t = vec3::sub(vertices[q], vertices[p]);
            let l = vec3::norm(t);
            let (tangent, mass) = if l > MASS_CLAMP {
                (vec3::scale(t, 1.0 / l), l)
            } else {
                ([0.0; 3], MASS_CLAMP)
            };
            Atom {
                centroid: vec3::midpoint(vertices[p], vertices[q]),
                tangent,
                mass,
                source_edge: e,
            }
        })
        .collect();
    DiscreteVarifold { atoms }
}

#[inline]
fn pair_kernel(x: &Atom, y: &Atom, a: f64) -> f64 {
    let s = vec3::dot(x.tangent, y.tangent);
    (-a * vec3::dist_sq(x.centroid, y.centroid)).exp() * s * s
}

/// Kernel inner product, one row of the double sum at a time.
pub fn inner(mu: &DiscreteVarifold, nu: &DiscreteVarifold, k: &KernelConfig) -> f64 {
    mu.atoms
        .iter()
        .map(|x| x.mass * nu.atoms.iter().map(|y| pair_kernel(x, y, k.a) * y.mass).sum::<f64>())
        .sum()
}

/// Squared RKHS distance between lifted varifolds, clamped at zero.
pub fn dist_sq_varifolds(mu: &DiscreteVarifold, nu: &DiscreteVarifold, k: &KernelConfig) -> f64 {
    (inner(mu, mu, k) + inner(nu, nu, k) - 2.0 * inner(mu, nu, k)).max(0.0)
}

pub fn dist_sq(g1: &ShapeGraph, g2: &ShapeGraph, k: &KernelConfig) -> Result<f64> {
    Ok(dist_sq_varifolds(&lift(g1)?, &lift(g2)?, k))
}

/// Gradient of `sum_{i in x} sum_{j in y} K(x_i, y_j)` with respect to the
/// vertices carrying `x`, with `y` held fixed.
///
/// Per pair, with `s = <u_i, u_j>` and `E = exp(-a |c_i - c_j|^2)`:
/// `d/dc_i = -2a (c_i - c_j) E s^2 l_i l_j` and, writing the orientation
/// and mass factor as `<t_i, t_j>^2 / (l_i l_j)` in the raw edge vector
/// `t_i`, `d/dt_i = E l_j (2 s u_j - s^2 u_i)`. The edge `(p, q)` then
/// receives `d/dc / 2 - d/dt` at `p` and `d/dc / 2 + d/dt` at `q`.
fn cross_gradient(
    vertex_count: usize,
    edges: &[[usize; 2]],
    x: &DiscreteVarifold,
    y: &DiscreteVarifold,
    a: f64,
    out: &mut [Vec3],
    weight: f64,
) {
    debug_assert_eq!(out.len(), vertex_count);
    for xi in &x.atoms {
        let mut dc = [0.0; 3];
        let mut dt = [0.0; 3];
        for yj in &y.atoms {
            let s = vec3::dot(xi.tangent, yj.tangent);
            if s == 0.0 {
                continue;
            }
            let diff = vec3::sub(xi.centroid, yj.centroid);
            let e = (-a * vec3::dot(diff, diff)).exp();
            let wc = -2.0 * a * e * s * s * xi.mass * yj.mass;
            vec3::add_assign(&mut dc, vec3::scale(diff, wc));
            let wt = e * yj.mass;
            let term = vec3::sub(vec3::scale(yj.tangent, 2.0 * s), vec3::scale(xi.tangent, s * s));
            vec3::add_assign(&mut dt, vec3::scale(term, wt));
        }
        let [p, q] = edges[xi.source_edge];
        let half = vec3::scale(dc, 0.5 * weight);
        let dt = vec3::scale(dt, weight);
        vec3::add_assign(&mut out[p], vec3::sub(half, dt));
        vec3::add_assign(&mut out[q], vec3::add(half, dt));
    }
}

/// Gradient of `|mu(V) - nu|^2` with respect to the vertices `V`:
/// `2 dK(V, V) - 2 dK(V, nu)`, the self term doubled by symmetry.
pub fn grad_dist_sq_raw(
    vertices: &[Vec3],
    edges: &[[usize; 2]],
    mu: &DiscreteVarifold,
    nu: &DiscreteVarifold,
    k: &KernelConfig,
) -> Vec<Vec3> {
    let mut out = vec![[0.0; 3]; vertices.len()];
    cross_gradient(vertices.len(), edges, mu, mu, k.a, &mut out, 2.0);
    cross_gradient(vertices.len(), edges, mu, nu, k.a, &mut out, -2.0);
    out
}

/// Analytic gradient of `dist_sq(target_of_grad, other)` with respect to the
/// vertices of `target_of_grad`.
pub fn grad_dist_sq(target_of_grad: &ShapeGraph, other: &ShapeGraph, k: &KernelConfig) -> Result<Vec<Vec3>> {
    let mu = lift(target_of_grad)?;
    let nu = lift(other)?;
    Ok(grad_dist_sq_raw(&target_of_grad.vertices, &target_of_grad.edges, &mu, &nu, k))
}

/// Loss and vertex gradient for an unvalidated output shape (decoder output)
/// against a fixed target varifold. Near-zero edges are clamped, see [`lift_clamped`].
pub fn recon_loss_and_grad(
    vertices: &[Vec3],
    edges: &[[usize; 2]],
    target: &DiscreteVarifold,
    k: &KernelConfig,
) -> (f64, Vec<Vec3>) {
    let mu = lift_clamped(vertices, edges);
    let loss = dist_sq_varifolds(&mu, target, k);
    let grad = grad_dist_sq_raw(vertices, edges, &mu, target, k);
    (loss, grad)
}

/// Result of comparing [`grad_dist_sq`] with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest `|analytic - fd| / max(|fd|, 1e-8)` over all coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat coordinate index (`3 * vertex + axis`) of the worst relative error.
    pub worst_coordinate: usize,
    pub analytic_norm: f64,
    pub fd_norm: f64,
}

/// Floor for the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Perturbs every coordinate of `g1` by `+-h` and compares the central
/// difference of `dist_sq(g1, g2)` with the analytic gradient.
///
/// Only kernel terms that involve an edge incident to the perturbed vertex
/// change, so the difference is accumulated over those terms alone. That
/// is the same central difference, minus the cancellation of the unchanged
/// bulk of the sum.
pub fn check_grad(g1: &ShapeGraph, g2: &ShapeGraph, k: &KernelConfig, h: f64) -> Result<GradCheckReport> {
    let analytic = grad_dist_sq(g1, g2, k)?;
    let fd = finite_difference_gradient(g1, g2, k, h)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_coordinate: 0,
        analytic_norm: 0.0,
        fd_norm: 0.0,
    };
    for v in 0..analytic.len() {
        for axis in 0..3 {
            let an = analytic[v][axis];
            let num = fd[v][axis];
            let abs = (an - num).abs();
            let rel = abs / num.abs().max(REL_ERR_FLOOR);
            report.analytic_norm += an * an;
            report.fd_norm += num * num;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_coordinate = 3 * v + axis;
            }
        }
    }
    report.analytic_norm = report.analytic_norm.sqrt();
    report.fd_norm = report.fd_norm.sqrt();
    Ok(report)
}

/// Central-difference gradient of `dist_sq(g1, g2)` in the vertices of `g1`.
pub fn finite_difference_gradient(g1: &ShapeGraph, g2: &ShapeGraph, k: &KernelConfig, h: f64) -> Result<Vec<Vec3>> {
    let nu = lift(g2)?;
    lift(g1)?;
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); g1.vertices.len()];
    for (e, &[p, q]) in g1.edges.iter().enumerate() {
        incident[p].push(e);
        incident[q].push(e);
    }
    let mut out = vec![[0.0; 3]; g1.vertices.len()];
    let mut shape = g1.clone();
    for v in 0..g1.vertices.len() {
        if incident[v].is_empty() {
            continue;
        }
        for axis in 0..3 {
            let x0 = g1.vertices[v][axis];
            shape.vertices[v][axis] = x0 + h;
            let plus = local_terms(&shape, &incident[v], &nu, k);
            shape.vertices[v][axis] = x0 - h;
            let minus = local_terms(&shape, &incident[v], &nu, k);
            shape.vertices[v][axis] = x0;
            out[v][axis] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// The part of `dist_sq(g, nu)` that depends on the edges in `moving`.
fn local_terms(g: &ShapeGraph, moving: &[usize], nu: &DiscreteVarifold, k: &KernelConfig) -> f64 {
    let mu = lift_clamped(&g.vertices, &g.edges);
    let mut total = 0.0;
    for &e in moving {
        let x = &mu.atoms[e];
        for (f, y) in mu.atoms.iter().enumerate() {
            // pairs with both ends moving appear twice in the symmetric sum
            let w = if moving.contains(&f) { 1.0 } else { 2.0 };
            total += w * pair_kernel(x, y, k.a) * x.mass * y.mass;
        }
        for y in &nu.atoms {
            total -= 2.0 * pair_kernel(x, y, k.a) * x.mass * y.mass;
        }
    }
    total
}
