//! Deterministic inputs shared by the kernel benchmarks.

use std::f64::consts::TAU;

use varigrad_core::ShapeGraph;
use varigrad_core::geometry::closed_polyline;

/// A closed 3D curve with `n` vertices and a `lobes`-fold radial wobble.
pub fn lobed_curve(n: usize, lobes: f64, phase: f64) -> ShapeGraph {
    let pts = (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let r = 1.0 + 0.3 * (lobes * t + phase).cos();
            [r * t.cos(), r * t.sin(), 0.2 * ((lobes - 1.0) * t).sin()]
        })
        .collect();
    closed_polyline(pts).expect("benchmark curve is valid")
}
