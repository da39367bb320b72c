//! Shape graphs: vertices in 3-space joined by straight edges.
//!
//! A [`ShapeGraph`] covers open curves, closed curves and branching graphs
//! alike. Edges are stored as given (directed) but every downstream
//! computation treats them as undirected.

mod io;
mod reparam;

pub use io::{read_jsonl, read_shape, write_jsonl, write_shape};
pub use reparam::{apply_reparam, chains, Chain, ReparamSpec};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Absolute floor for the degenerate-edge threshold.
pub const EPS_LEN_FLOOR: f64 = 1e-300;
/// Degenerate-edge threshold relative to the bounding diameter.
pub const EPS_LEN_RELATIVE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeGraph {
    pub vertices: Vec<Vec3>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

impl ShapeGraph {
    /// Builds a shape without validating it.
    pub fn new(vertices: Vec<Vec3>, edges: Vec<[usize; 2]>) -> Self {
        ShapeGraph {
            vertices,
            edges,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Checks every structural invariant against `eps_len` and hands the
    /// shape back untouched when they all hold.
    pub fn validate(self, eps_len: f64) -> Result<Self> {
        self.check(eps_len)?;
        Ok(self)
    }

    /// [`ShapeGraph::validate`] with the default threshold from [`default_eps_len`].
    pub fn validated(self) -> Result<Self> {
        let eps = default_eps_len(&self.vertices);
        self.validate(eps)
    }

    pub fn check(&self, eps_len: f64) -> Result<()> {
        let n = self.vertices.len();
        if n < 2 || self.edges.is_empty() {
            return Err(Error::EmptyShape {
                vertices: n,
                edges: self.edges.len(),
            });
        }
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.edges.len());
        for (e, &[i, j]) in self.edges.iter().enumerate() {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange {
                        edge: e,
                        index,
                        vertex_count: n,
                    });
                }
            }
            if i == j {
                return Err(Error::SelfLoop { edge: e, vertex: i });
            }
            let key = (i.min(j), i.max(j));
            if let Some(&first) = seen.get(&key) {
                return Err(Error::DuplicateEdge {
                    edge: e,
                    first,
                    i,
                    j,
                });
            }
            seen.insert(key, e);
            let length = vec3::norm(vec3::sub(self.vertices[j], self.vertices[i]));
            if !(length > eps_len) {
                return Err(Error::DegenerateEdge {
                    edge: e,
                    length,
                    eps: eps_len,
                });
            }
        }
        Ok(())
    }

    pub fn check_default(&self) -> Result<()> {
        self.check(default_eps_len(&self.vertices))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [i, j] = self.edges[e];
        vec3::norm(vec3::sub(self.vertices[j], self.vertices[i]))
    }

    pub fn total_length(&self) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_length(e)).sum()
    }

    /// Number of incident edges per vertex.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &[i, j] in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Diagonal of the axis-aligned bounding box of the vertices.
    pub fn bounding_diameter(&self) -> f64 {
        bounding_diameter(&self.vertices)
    }

    /// Applies `f` to every vertex, keeping connectivity and label.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> ShapeGraph {
        ShapeGraph {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            edges: self.edges.clone(),
            label: self.label,
        }
    }
}

pub fn bounding_diameter(vertices: &[Vec3]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    vec3::norm(vec3::sub(hi, lo))
}

/// Degenerate-edge threshold: `1e-9` times the bounding diameter, floored at `1e-300`.
pub fn default_eps_len(vertices: &[Vec3]) -> f64 {
    (EPS_LEN_RELATIVE * bounding_diameter(vertices)).max(EPS_LEN_FLOOR)
}

/// Closed loop through `points` in order, last point joined back to the first.
pub fn closed_polyline(points: Vec<Vec3>) -> Result<ShapeGraph> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let edges = (0..n).map(|i| [i, (i + 1) % n]).collect();
    ShapeGraph::new(points, edges).validated()
}

/// Open path through `points` in order.
pub fn open_polyline(points: Vec<Vec3>) -> Result<ShapeGraph> {
    let n = points.len();
    let edges = (1..n).map(|i| [i - 1, i]).collect();
    ShapeGraph::new(points, edges).validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_segment() -> ShapeGraph {
        ShapeGraph::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], vec![[0, 1]])
    }

    pub(crate) fn unit_square() -> ShapeGraph {
        closed_polyline(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn minimal_segment_is_valid() {
        let g = unit_segment();
        assert_eq!(g.clone().validate(1e-9).unwrap(), g);
    }

    #[test]
    fn self_loop_rejected() {
        let g = ShapeGraph::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0, 0]]);
        assert!(matches!(g.validate(1e-9), Err(Error::SelfLoop { .. })));
    }

    #[test]
    fn coincident_vertices_are_degenerate() {
        let g = ShapeGraph::new(vec![[0.5; 3], [0.5; 3]], vec![[0, 1]]);
        assert!(matches!(g.validate(1e-9), Err(Error::DegenerateEdge { .. })));
    }

    #[test]
    fn out_of_range_and_duplicates() {
        let g = ShapeGraph::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0, 7]]);
        assert!(matches!(g.validate(1e-9), Err(Error::IndexOutOfRange { index: 7, .. })));
        let g = ShapeGraph::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0, 1], [1, 0]]);
        assert!(matches!(g.validate(1e-9), Err(Error::DuplicateEdge { edge: 1, .. })));
    }

    #[test]
    fn empty_shapes_rejected() {
        let g = ShapeGraph::new(vec![[0.0; 3]], vec![]);
        assert!(matches!(g.validate(1e-9), Err(Error::EmptyShape { .. })));
        let g = ShapeGraph::new(vec![[0.0; 3], [1.0; 3]], vec![]);
        assert!(matches!(g.validate(1e-9), Err(Error::EmptyShape { .. })));
    }

    #[test]
    fn square_polyline() {
        let g = unit_square();
        assert_eq!(g.vertex_count(), 4);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.edges[3], [3, 0]);
    }

    #[test]
    fn collinear_points_form_valid_loop() {
        let g = closed_polyline(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(g.is_ok());
        let g = closed_polyline(vec![[0.0; 3], [0.0; 3], [2.0, 0.0, 0.0]]);
        assert!(matches!(g, Err(Error::DegenerateEdge { .. })));
    }

    #[test]
    fn too_few_points() {
        let g = closed_polyline(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(g, Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn regular_polygon_perimeter() {
        let n = 64;
        let pts = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        let g = closed_polyline(pts).unwrap();
        // chord length sum of the inscribed 64-gon
        let expected = 64.0 * 2.0 * (PI / 64.0).sin();
        assert!((g.total_length() - expected).abs() < 1e-12);
        assert!((expected - 6.280_662_313_909_506).abs() < 1e-12);
    }

    #[test]
    fn diameters() {
        assert_eq!(unit_segment().bounding_diameter(), 1.0);
        assert!((unit_square().bounding_diameter() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_eps_is_relative_with_floor() {
        let g = unit_segment();
        assert_eq!(default_eps_len(&g.vertices), 1e-9);
        assert_eq!(default_eps_len(&[[0.0; 3]]), EPS_LEN_FLOOR);
    }

    #[test]
    fn degrees_of_square() {
        assert_eq!(unit_square().degrees(), vec![2, 2, 2, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn diameter_of_unit_cube_cloud_is_bounded(
                pts in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 2..40)
            ) {
                let d = bounding_diameter(&pts);
                prop_assert!(d >= 0.0 && d <= 3f64.sqrt() + 1e-15);
            }
        }
    }
}
