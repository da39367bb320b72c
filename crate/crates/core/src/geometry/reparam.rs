//! Reparameterizations: vertex relabeling, edge reorientation and
//! arc-length resampling of every branch of a shape graph.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ShapeGraph;
use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReparamSpec {
    /// Relabel vertices with a random permutation and shuffle the edge list.
    pub permute_vertices: bool,
    /// Reverse the orientation of a random subset of edges (each with probability 1/2).
    pub flip_edges: bool,
    /// Ratio of new to old edge count along each branch. Exactly `1.0`
    /// keeps the original sampling.
    pub resample_factor: f64,
    pub rng_seed: u64,
}

impl ReparamSpec {
    pub const FACTOR_RANGE: (f64, f64) = (0.5, 2.0);

    pub fn identity() -> Self {
        ReparamSpec {
            permute_vertices: false,
            flip_edges: false,
            resample_factor: 1.0,
            rng_seed: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let (lo, hi) = Self::FACTOR_RANGE;
        if !(self.resample_factor >= lo && self.resample_factor <= hi) {
            return Err(Error::InvalidConfig(format!(
                "resample_factor {} outside [{lo}, {hi}]",
                self.resample_factor
            )));
        }
        Ok(())
    }
}

/// A maximal path whose interior vertices all have degree 2.
///
/// `vertices` has one more entry than `edges`. For closed chains the first
/// and last entries coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
}

impl Chain {
    pub fn is_closed(&self) -> bool {
        self.vertices.first() == self.vertices.last()
    }
}

/// Splits the edge set into chains between vertices of degree != 2.
/// Components where every vertex has degree 2 come out as closed chains
/// starting at their lowest-index vertex.
pub fn chains(g: &ShapeGraph) -> Vec<Chain> {
    let n = g.vertices.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &[i, j]) in g.edges.iter().enumerate() {
        adj[i].push((j, e));
        adj[j].push((i, e));
    }
    let is_anchor = |v: usize| adj[v].len() != 2;
    let mut used = vec![false; g.edges.len()];
    let mut out = Vec::new();

    let walk = |start: usize, first: (usize, usize), used: &mut Vec<bool>, stop: &dyn Fn(usize) -> bool| {
        let mut chain = Chain {
            vertices: vec![start],
            edges: Vec::new(),
        };
        let (mut next, mut e) = first;
        loop {
            used[e] = true;
            chain.edges.push(e);
            chain.vertices.push(next);
            if stop(next) {
                break;
            }
            match adj[next].iter().find(|&&(_, f)| !used[f]) {
                Some(&(w, f)) => {
                    e = f;
                    next = w;
                }
                None => break,
            }
        }
        chain
    };

    for a in 0..n {
        if !is_anchor(a) {
            continue;
        }
        for k in 0..adj[a].len() {
            let (nb, e) = adj[a][k];
            if !used[e] {
                out.push(walk(a, (nb, e), &mut used, &is_anchor));
            }
        }
    }
    // remaining edges lie on pure cycles
    for e in 0..g.edges.len() {
        if used[e] {
            continue;
        }
        let [i, j] = g.edges[e];
        let start = i.min(j);
        let other = if start == i { j } else { i };
        let stop = move |v: usize| v == start;
        out.push(walk(start, (other, e), &mut used, &stop));
    }
    out
}

/// Applies resampling, then relabeling, then edge flips, all driven by
/// `spec.rng_seed`. Junction vertices (degree >= 3) and open endpoints
/// keep their exact coordinates.
pub fn apply_reparam(g: &ShapeGraph, spec: &ReparamSpec) -> Result<ShapeGraph> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut out = if spec.resample_factor == 1.0 {
        g.clone()
    } else {
        resample(g, spec.resample_factor, &mut rng)
    };
    if spec.permute_vertices {
        let n = out.vertices.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut vertices = vec![[0.0; 3]; n];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = out.vertices[old];
        }
        let mut edges: Vec<[usize; 2]> = out.edges.iter().map(|&[i, j]| [perm[i], perm[j]]).collect();
        edges.shuffle(&mut rng);
        out.vertices = vertices;
        out.edges = edges;
    }
    if spec.flip_edges {
        for e in out.edges.iter_mut() {
            if rng.random_bool(0.5) {
                e.swap(0, 1);
            }
        }
    }
    out.validated()
}

fn resample(g: &ShapeGraph, factor: f64, rng: &mut ChaCha8Rng) -> ShapeGraph {
    let deg = g.degrees();
    let all_chains = chains(g);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut remap = vec![usize::MAX; g.vertices.len()];
    let mut keep = |v: usize, vertices: &mut Vec<Vec3>| -> usize {
        if remap[v] == usize::MAX {
            remap[v] = vertices.len();
            vertices.push(g.vertices[v]);
        }
        remap[v]
    };
    // anchors and isolated vertices first, in original order
    for v in 0..g.vertices.len() {
        if deg[v] != 2 {
            keep(v, &mut vertices);
        }
    }
    let mut edges = Vec::new();
    for mut chain in all_chains {
        let closed = chain.is_closed();
        if closed && deg[chain.vertices[0]] == 2 {
            // pure cycle: start at a random vertex so the new samples are not
            // tied to the original labeling
            let k = chain.vertices.len() - 1;
            let shift = rng.random_range(0..k);
            chain.vertices.pop();
            chain.vertices.rotate_left(shift);
            chain.vertices.push(chain.vertices[0]);
        }
        let old_edges = chain.vertices.len() - 1;
        let min_edges = if closed { 3 } else { old_edges.min(2) };
        let new_edges = ((factor * old_edges as f64).round() as usize).max(min_edges).max(1);
        let pts: Vec<Vec3> = chain.vertices.iter().map(|&v| g.vertices[v]).collect();
        let interior = arc_length_samples(&pts, new_edges);
        let a = keep(chain.vertices[0], &mut vertices);
        let b = keep(*chain.vertices.last().unwrap(), &mut vertices);
        let mut prev = a;
        for p in interior {
            vertices.push(p);
            let cur = vertices.len() - 1;
            edges.push([prev, cur]);
            prev = cur;
        }
        edges.push([prev, b]);
    }
    ShapeGraph {
        vertices,
        edges,
        label: g.label,
    }
}

/// Interior points splitting the polyline `pts` into `pieces` arcs of equal length.
fn arc_length_samples(pts: &[Vec3], pieces: usize) -> Vec<Vec3> {
    let cum: Vec<f64> = std::iter::once(0.0)
        .chain(pts.windows(2).scan(0.0, |s, w| {
            *s += vec3::norm(vec3::sub(w[1], w[0]));
            Some(*s)
        }))
        .collect();
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(pieces.saturating_sub(1));
    let mut seg = 0;
    for m in 1..pieces {
        let s = total * m as f64 / pieces as f64;
        while seg + 2 < cum.len() && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push(vec3::lerp(pts[seg], pts[seg + 1], t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{closed_polyline, open_polyline};

    fn square() -> ShapeGraph {
        closed_polyline(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    /// A "T": three arms meeting at vertex 0.
    fn tee() -> ShapeGraph {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [-2.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, -2.0, 0.0],
        ];
        let edges = vec![[0, 1], [1, 2], [0, 3], [3, 4], [0, 5], [5, 6]];
        ShapeGraph::new(vertices, edges).validated().unwrap()
    }

    #[test]
    fn identity_returns_input() {
        let g = square();
        assert_eq!(apply_reparam(&g, &ReparamSpec::identity()).unwrap(), g);
    }

    #[test]
    fn square_doubled_splits_every_edge_at_midpoint() {
        let g = square();
        let spec = ReparamSpec {
            resample_factor: 2.0,
            ..ReparamSpec::identity()
        };
        let r = apply_reparam(&g, &spec).unwrap();
        assert_eq!(r.vertex_count(), 8);
        assert_eq!(r.edge_count(), 8);
        assert!((r.total_length() - 4.0).abs() < 1e-12);
        for e in 0..r.edge_count() {
            assert!((r.edge_length(e) - 0.5).abs() < 1e-12);
        }
        // every corner survives
        for c in &g.vertices {
            assert!(r.vertices.iter().any(|v| v == c));
        }
    }

    #[test]
    fn straight_segment_length_preserved() {
        let g = open_polyline(vec![[0.0; 3], [0.3, 0.1, 0.0], [0.9, 0.3, 0.0], [1.5, 0.5, 0.0]]).unwrap();
        for f in [0.5, 0.7, 1.4, 2.0] {
            let spec = ReparamSpec {
                resample_factor: f,
                ..ReparamSpec::identity()
            };
            let r = apply_reparam(&g, &spec).unwrap();
            let rel = (r.total_length() - g.total_length()).abs() / g.total_length();
            assert!(rel <= 1e-12, "factor {f}: rel {rel}");
            assert_eq!(r.vertices[0], g.vertices[0]);
            assert_eq!(r.vertices[1], g.vertices[3]);
        }
    }

    #[test]
    fn junctions_are_preserved() {
        let g = tee();
        let spec = ReparamSpec {
            resample_factor: 2.0,
            permute_vertices: false,
            flip_edges: true,
            rng_seed: 3,
        };
        let r = apply_reparam(&g, &spec).unwrap();
        let deg = r.degrees();
        let junctions: Vec<_> = (0..r.vertex_count()).filter(|&v| deg[v] == 3).collect();
        assert_eq!(junctions.len(), 1);
        assert_eq!(r.vertices[junctions[0]], [0.0, 0.0, 0.0]);
        assert_eq!(r.edge_count(), 12);
        assert!((r.total_length() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn chains_of_tee_and_square() {
        let c = chains(&tee());
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|ch| ch.edges.len() == 2 && !ch.is_closed()));
        let c = chains(&square());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].vertices, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn permutation_relabels_consistently() {
        let g = tee();
        let spec = ReparamSpec {
            permute_vertices: true,
            rng_seed: 11,
            ..ReparamSpec::identity()
        };
        let r = apply_reparam(&g, &spec).unwrap();
        let mut a: Vec<_> = g.edges.iter().map(|&[i, j]| key(g.vertices[i], g.vertices[j])).collect();
        let mut b: Vec<_> = r.edges.iter().map(|&[i, j]| key(r.vertices[i], r.vertices[j])).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    fn key(p: Vec3, q: Vec3) -> Vec<u64> {
        p.iter().chain(q.iter()).map(|x| x.to_bits()).collect()
    }

    #[test]
    fn factor_out_of_range() {
        let spec = ReparamSpec {
            resample_factor: 3.0,
            ..ReparamSpec::identity()
        };
        assert!(matches!(apply_reparam(&square(), &spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn seeded_reparam_is_deterministic() {
        let spec = ReparamSpec {
            permute_vertices: true,
            flip_edges: true,
            resample_factor: 1.3,
            rng_seed: 5,
        };
        let g = tee();
        assert_eq!(apply_reparam(&g, &spec).unwrap(), apply_reparam(&g, &spec).unwrap());
    }
}
