//! Point-set baseline: a shared per-vertex MLP followed by a coordinate-wise
//! max over vertices. Edges are ignored.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::{Param, Sequential};
use crate::geometry::ShapeGraph;

#[derive(Debug, Clone)]
pub struct PointNetEncoder {
    pub mlp: Sequential,
    cache: Option<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl PointNetEncoder {
    pub const DEFAULT_WIDTHS: [usize; 2] = [64, 128];

    /// Per-vertex layers `3 -> widths[0] -> ... -> widths[last]`, each followed by a rectifier.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![3];
        dims.extend_from_slice(widths);
        let mut mlp = Sequential::mlp("pointnet", &dims, None, rng);
        mlp.push(super::Layer::Relu(super::Relu::default()));
        PointNetEncoder { mlp, cache: None }
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp
            .layers
            .iter()
            .rev()
            .find_map(|l| match l {
                super::Layer::Dense(d) => Some(d.outputs()),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn forward(&self, points: ArrayView2<f64>) -> Array1<f64> {
        let per_vertex = self.mlp.forward_eval(&points.to_owned());
        max_rows(&per_vertex, 0, per_vertex.nrows()).0
    }

    /// All point sets are stacked into one matrix so the shared MLP runs once.
    pub fn forward_train(&mut self, points: &[Array2<f64>]) -> Array2<f64> {
        let total: usize = points.iter().map(|p| p.nrows()).sum();
        let mut stacked = Array2::zeros((total, 3));
        let mut offsets = Vec::with_capacity(points.len() + 1);
        let mut at = 0;
        for p in points {
            offsets.push(at);
            stacked.slice_mut(ndarray::s![at..at + p.nrows(), ..]).assign(p);
            at += p.nrows();
        }
        offsets.push(at);
        let per_vertex = self.mlp.forward_train(stacked);
        let dim = per_vertex.ncols();
        let mut out = Array2::zeros((points.len(), dim));
        let mut arg = Vec::with_capacity(points.len());
        for b in 0..points.len() {
            let (m, idx) = max_rows(&per_vertex, offsets[b], offsets[b + 1]);
            out.row_mut(b).assign(&m);
            arg.push(idx);
        }
        self.cache = Some((offsets, arg));
        out
    }

    pub fn backward(&mut self, d_out: &Array2<f64>) {
        let (offsets, arg) = self.cache.take().expect("PointNetEncoder::backward without forward_train");
        let total = *offsets.last().unwrap();
        let mut d_vertex = Array2::zeros((total, d_out.ncols()));
        for (b, rows) in arg.iter().enumerate() {
            for (c, &r) in rows.iter().enumerate() {
                d_vertex[[r, c]] += d_out[[b, c]];
            }
        }
        self.mlp.backward(&d_vertex);
    }

    pub fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }
}

/// Column-wise maximum over rows `lo..hi` and the (absolute) row achieving it.
/// Ties go to the first row.
fn max_rows(m: &Array2<f64>, lo: usize, hi: usize) -> (Array1<f64>, Vec<usize>) {
    let cols = m.ncols();
    let mut best = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut idx = vec![lo; cols];
    for r in lo..hi {
        for c in 0..cols {
            if m[[r, c]] > best[c] {
                best[c] = m[[r, c]];
                idx[c] = r;
            }
        }
    }
    (best, idx)
}

pub fn vertices_array(g: &ShapeGraph) -> Array2<f64> {
    Array2::from_shape_fn((g.vertex_count(), 3), |(v, c)| g.vertices[v][c])
}

/// Fixed-size embedding of the vertex set of `g`.
pub fn pointnet_baseline_forward(g: &ShapeGraph, encoder: &PointNetEncoder) -> Array1<f64> {
    encoder.forward(vertices_array(g).view())
}
