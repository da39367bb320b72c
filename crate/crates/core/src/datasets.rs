//! Synthetic labeled datasets: closed 3D curves whose class is a harmonic
//! number, and five-chain stick figures whose class is an arm pose regime.
//! Every sample draws from its own RNG seeded with `base_seed + index`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, apply_reparam, closed_polyline, ReparamSpec, ShapeGraph};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Curve,
    #[serde(rename = "stickfigure")]
    StickFigure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: ShapeKind,
    pub class_count: usize,
    pub samples_per_class: usize,
    /// Inclusive vertex-count range per sample.
    pub vertex_range: (usize, usize),
    /// Standard deviation of the Gaussian vertex jitter.
    pub noise_scale: f64,
    pub rng_seed: u64,
}

impl SyntheticSpec {
    pub const VERTEX_LIMITS: (usize, usize) = (8, 512);

    pub fn check(&self) -> Result<()> {
        let (lo, hi) = self.vertex_range;
        if lo > hi || lo < Self::VERTEX_LIMITS.0 || hi > Self::VERTEX_LIMITS.1 {
            return Err(Error::InvalidConfig(format!(
                "vertex range ({lo}, {hi}) must be ordered and within [8, 512]"
            )));
        }
        if self.class_count < 2 {
            return Err(Error::SingleClass);
        }
        if self.samples_per_class == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise scale must be finite and >= 0".into()));
        }
        if self.kind == ShapeKind::StickFigure && lo < STICK_MIN_VERTICES {
            return Err(Error::InvalidConfig(format!(
                "stick figures need at least {STICK_MIN_VERTICES} vertices"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub shapes: Vec<ShapeGraph>,
    pub split: Option<Split>,
}

impl LabeledDataset {
    pub fn new(shapes: Vec<ShapeGraph>) -> Self {
        LabeledDataset { shapes, split: None }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(index, g)| g.label.map(|l| l as usize).ok_or(Error::MissingLabel { index }))
            .collect()
    }

    /// One more than the largest label.
    pub fn class_count(&self) -> Result<usize> {
        Ok(self.labels()?.into_iter().max().map_or(0, |m| m + 1))
    }

    pub fn class_sizes(&self) -> Result<BTreeMap<usize, usize>> {
        let mut sizes = BTreeMap::new();
        for l in self.labels()? {
            *sizes.entry(l).or_insert(0) += 1;
        }
        Ok(sizes)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        geometry::write_jsonl(&self.shapes)
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self> {
        Ok(LabeledDataset::new(geometry::read_jsonl(bytes)?))
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    match spec.kind {
        ShapeKind::Curve => gen_curves(spec),
        ShapeKind::StickFigure => gen_stickfigures(spec),
    }
}

fn sample_rng(spec: &SyntheticSpec, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.rng_seed.wrapping_add(index as u64))
}

fn jitter<R: Rng>(v: Vec3, noise: &Option<Normal<f64>>, rng: &mut R) -> Vec3 {
    match noise {
        Some(n) => [v[0] + n.sample(rng), v[1] + n.sample(rng), v[2] + n.sample(rng)],
        None => v,
    }
}

fn noise_dist(scale: f64) -> Option<Normal<f64>> {
    (scale > 0.0).then(|| Normal::new(0.0, scale).expect("finite positive scale"))
}

/// Half-width of the uniform distribution of the curve phases `phi` and `psi`.
/// Phases drawn from the full circle rotate the lobes of same-class curves far
/// enough apart that varifold distance no longer separates the classes.
pub const PHASE_HALF_WIDTH: f64 = std::f64::consts::FRAC_PI_4;

/// Class `k`: `r(t) = 1 + 0.3 cos((k + 2) t + phi)`, `z(t) = 0.2 sin((k + 1) t + psi)`,
/// sampled at jittered parameter values.
pub fn gen_curves(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.kind != ShapeKind::Curve {
        return Err(Error::InvalidConfig("gen_curves needs kind=curve".into()));
    }
    spec.check()?;
    let noise = noise_dist(spec.noise_scale);
    let mut shapes = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for class in 0..spec.class_count {
        for i in 0..spec.samples_per_class {
            let mut rng = sample_rng(spec, class * spec.samples_per_class + i);
            let m = rng.random_range(spec.vertex_range.0..=spec.vertex_range.1);
            let phi = rng.random_range(-PHASE_HALF_WIDTH..PHASE_HALF_WIDTH);
            let psi = rng.random_range(-PHASE_HALF_WIDTH..PHASE_HALF_WIDTH);
            let kr = (class + 2) as f64;
            let kz = (class + 1) as f64;
            let pts: Vec<Vec3> = (0..m)
                .map(|j| {
                    let t = TAU * (j as f64 + rng.random_range(-0.3..0.3)) / m as f64;
                    let r = 1.0 + 0.3 * (kr * t + phi).cos();
                    let p = [r * t.cos(), r * t.sin(), 0.2 * (kz * t + psi).sin()];
                    jitter(p, &noise, &mut rng)
                })
                .collect();
            shapes.push(closed_polyline(pts)?.with_label(Some(class as u32)));
        }
    }
    Ok(LabeledDataset::new(shapes))
}

/// Fewest vertices a stick figure can have: five chains of two edges.
pub const STICK_MIN_VERTICES: usize = 11;

/// Five chains (torso, two arms, two legs) meeting at a shoulder and a hip
/// junction. Class `c` fixes the arm elevation interval; everything else
/// (leg spread, lean, limb bends, per-chain sampling) is random per sample.
pub fn gen_stickfigures(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.kind != ShapeKind::StickFigure {
        return Err(Error::InvalidConfig("gen_stickfigures needs kind=stickfigure".into()));
    }
    spec.check()?;
    let noise = noise_dist(spec.noise_scale);
    let c = spec.class_count;
    let bin = (120.0 / (c - 1) as f64).to_radians();
    let mut shapes = Vec::with_capacity(c * spec.samples_per_class);
    for class in 0..c {
        let centre = (-60.0f64).to_radians() + bin * class as f64;
        let half = 0.35 * bin;
        for i in 0..spec.samples_per_class {
            let mut rng = sample_rng(spec, class * spec.samples_per_class + i);
            let total = rng.random_range(spec.vertex_range.0..=spec.vertex_range.1);
            let g = stick_figure(&mut rng, total, (centre - half, centre + half), &noise)?;
            shapes.push(g.with_label(Some(class as u32)));
        }
    }
    Ok(LabeledDataset::new(shapes))
}

fn stick_figure(
    rng: &mut ChaCha8Rng,
    total_vertices: usize,
    arm_range: (f64, f64),
    noise: &Option<Normal<f64>>,
) -> Result<ShapeGraph> {
    let lean = rng.random_range(-8.0f64..8.0).to_radians();
    let up = [lean.sin(), lean.cos(), 0.0];
    let hip = [0.0; 3];
    let shoulder = vec3::scale(up, 1.0);
    let limb = |root: Vec3, side: f64, elevation: f64, length: f64, rng: &mut ChaCha8Rng| {
        let out_of_plane = rng.random_range(-15.0f64..15.0).to_radians();
        let dir = [
            side * elevation.cos() * out_of_plane.cos(),
            elevation.sin(),
            elevation.cos() * out_of_plane.sin(),
        ];
        let end = vec3::add(root, vec3::scale(dir, length));
        let bend = rng.random_range(-0.12..0.12) * length;
        // bend within the plane spanned by the limb and the z axis
        let normal = [-dir[1] * side, dir[0] * side, 0.0];
        let nn = vec3::norm(normal).max(1e-12);
        let ctrl = vec3::add(vec3::midpoint(root, end), vec3::scale(normal, bend / nn));
        (root, ctrl, end)
    };
    let arms: Vec<_> = [-1.0, 1.0]
        .iter()
        .map(|&side| {
            let e = rng.random_range(arm_range.0..arm_range.1);
            limb(shoulder, side, e, 0.8, rng)
        })
        .collect();
    let legs: Vec<_> = [-1.0, 1.0]
        .iter()
        .map(|&side| {
            let spread = rng.random_range(10.0f64..30.0).to_radians();
            limb(hip, side, -PI / 2.0 + spread, 1.0, rng)
        })
        .collect();
    let torso_bend = rng.random_range(-0.08..0.08);
    let torso = (hip, vec3::add(vec3::midpoint(hip, shoulder), [torso_bend, 0.0, 0.0]), shoulder);

    // vertex 0: hip, 1: shoulder, 2..=5: hands then feet
    let curves = [torso, arms[0], arms[1], legs[0], legs[1]];
    let ends = [(0, 1), (1, 2), (1, 3), (0, 4), (0, 5)];
    let lengths: Vec<f64> = curves.iter().map(|&(a, b, c)| bezier_length(a, b, c)).collect();
    let pieces = allocate_edges(&lengths, total_vertices - 1, 2);

    let mut vertices = vec![hip, shoulder, arms[0].2, arms[1].2, legs[0].2, legs[1].2];
    let mut edges = Vec::new();
    for ((&(a, b, c), &(start, end)), &k) in curves.iter().zip(&ends).zip(&pieces) {
        let mut prev = start;
        for j in 1..k {
            let t = (j as f64 + rng.random_range(-0.3..0.3)) / k as f64;
            vertices.push(bezier(a, b, c, t));
            let cur = vertices.len() - 1;
            edges.push([prev, cur]);
            prev = cur;
        }
        edges.push([prev, end]);
    }
    for v in vertices.iter_mut() {
        *v = jitter(*v, noise, rng);
    }
    ShapeGraph::new(vertices, edges).validated()
}

fn bezier(a: Vec3, b: Vec3, c: Vec3, t: f64) -> Vec3 {
    let s = 1.0 - t;
    vec3::add(vec3::add(vec3::scale(a, s * s), vec3::scale(b, 2.0 * s * t)), vec3::scale(c, t * t))
}

fn bezier_length(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let n = 64;
    (0..n)
        .map(|i| {
            let p = bezier(a, b, c, i as f64 / n as f64);
            let q = bezier(a, b, c, (i + 1) as f64 / n as f64);
            vec3::norm(vec3::sub(q, p))
        })
        .sum()
}

/// Splits `total` edges across chains proportionally to length, at least
/// `min_each` per chain, by largest remainder.
fn allocate_edges(lengths: &[f64], total: usize, min_each: usize) -> Vec<usize> {
    let n = lengths.len();
    let spare = total - min_each * n;
    let sum: f64 = lengths.iter().sum();
    let exact: Vec<f64> = lengths.iter().map(|l| spare as f64 * l / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = spare - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out.iter().map(|k| k + min_each).collect()
}

/// Stratified split: each class contributes `round(test_fraction * size)`
/// shapes (at least one, leaving at least one) to the test set. Both halves
/// keep the original order.
pub fn split(ds: &LabeledDataset, test_fraction: f64, rng_seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let labels = ds.labels()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut is_test = vec![false; ds.len()];
    for (&label, members) in by_class.iter_mut() {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                label: label as u32,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let n_test = ((test_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let pick = |want: bool| -> Vec<ShapeGraph> {
        ds.shapes
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(g, _)| g.clone())
            .collect()
    };
    Ok((
        LabeledDataset {
            shapes: pick(false),
            split: Some(Split::Train),
        },
        LabeledDataset {
            shapes: pick(true),
            split: Some(Split::Test),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Copies of the input.
    Identity,
    /// Relabeling and edge flips only; the varifold is unchanged.
    PermuteFlip,
    /// Relabeling, flips and resampling with a factor drawn from [`RESAMPLE_RANGE`].
    Full,
}

pub const RESAMPLE_RANGE: (f64, f64) = (0.7, 1.4);

/// `per_shape` reparameterized variants of every shape, labels preserved.
/// Variant `v` of shape `i` uses seed `rng_seed + i * per_shape + v`.
pub fn make_reparam_set(ds: &LabeledDataset, per_shape: usize, rng_seed: u64, kind: VariantKind) -> Result<LabeledDataset> {
    let mut shapes = Vec::with_capacity(ds.len() * per_shape);
    for (i, g) in ds.shapes.iter().enumerate() {
        for v in 0..per_shape {
            let seed = rng_seed.wrapping_add((i * per_shape + v) as u64);
            let spec = variant_spec(kind, seed);
            shapes.push(apply_reparam(g, &spec)?);
        }
    }
    Ok(LabeledDataset { shapes, split: ds.split })
}

pub fn variant_spec(kind: VariantKind, seed: u64) -> ReparamSpec {
    match kind {
        VariantKind::Identity => ReparamSpec::identity(),
        VariantKind::PermuteFlip => ReparamSpec {
            permute_vertices: true,
            flip_edges: true,
            resample_factor: 1.0,
            rng_seed: seed,
        },
        VariantKind::Full => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ReparamSpec {
                permute_vertices: true,
                flip_edges: true,
                resample_factor: rng.random_range(RESAMPLE_RANGE.0..=RESAMPLE_RANGE.1),
                rng_seed: rng.random(),
            }
        }
    }
}

/// Random-walk polyline with `n` vertices and steps uniform in `[-step, step]^3`.
pub fn random_walk<R: Rng + ?Sized>(rng: &mut R, n: usize, step: f64, closed: bool) -> Result<ShapeGraph> {
    let mut p = [0.0; 3];
    let pts: Vec<Vec3> = (0..n)
        .map(|_| {
            for c in p.iter_mut() {
                *c += rng.random_range(-step..step);
            }
            p
        })
        .collect();
    if closed {
        closed_polyline(pts)
    } else {
        geometry::open_polyline(pts)
    }
}

/// Pair `index` of a seeded family of random-walk shape pairs with vertex
/// counts drawn from `vertex_range`. Odd pairs are closed curves.
pub fn random_shape_pair(seed: u64, index: usize, vertex_range: (usize, usize)) -> Result<(ShapeGraph, ShapeGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let closed = index % 2 == 1;
    let n1 = rng.random_range(vertex_range.0..=vertex_range.1);
    let n2 = rng.random_range(vertex_range.0..=vertex_range.1);
    Ok((random_walk(&mut rng, n1, 0.3, closed)?, random_walk(&mut rng, n2, 0.3, closed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_spec(per_class: usize) -> SyntheticSpec {
        SyntheticSpec {
            kind: ShapeKind::Curve,
            class_count: 4,
            samples_per_class: per_class,
            vertex_range: (64, 96),
            noise_scale: 0.01,
            rng_seed: 7,
        }
    }

    fn stick_spec() -> SyntheticSpec {
        SyntheticSpec {
            kind: ShapeKind::StickFigure,
            class_count: 3,
            samples_per_class: 10,
            vertex_range: (30, 60),
            noise_scale: 0.005,
            rng_seed: 1,
        }
    }

    #[test]
    fn curve_counts_and_ranges() {
        let ds = gen_curves(&curve_spec(100)).unwrap();
        assert_eq!(ds.len(), 400);
        assert!(ds.shapes.iter().all(|g| (64..=96).contains(&g.vertex_count())));
        assert!(ds.shapes.iter().all(|g| g.check_default().is_ok()));
        assert_eq!(ds.class_count().unwrap(), 4);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(gen_curves(&curve_spec(5)).unwrap(), gen_curves(&curve_spec(5)).unwrap());
        assert_eq!(gen_stickfigures(&stick_spec()).unwrap(), gen_stickfigures(&stick_spec()).unwrap());
    }

    #[test]
    fn noiseless_curves_lie_on_the_class_surface() {
        let spec = SyntheticSpec {
            noise_scale: 0.0,
            ..curve_spec(3)
        };
        let ds = gen_curves(&spec).unwrap();
        for g in &ds.shapes {
            let k = g.label.unwrap() as f64;
            for v in &g.vertices {
                let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
                assert!((0.7 - 1e-12..=1.3 + 1e-12).contains(&r));
                assert!(v[2].abs() <= 0.2 + 1e-12);
            }
            let _ = k;
        }
    }

    #[test]
    fn stick_figures_have_two_junctions() {
        let ds = gen_stickfigures(&stick_spec()).unwrap();
        for g in &ds.shapes {
            g.check_default().unwrap();
            let deg = g.degrees();
            assert_eq!(deg.iter().filter(|&&d| d == 3).count(), 2);
            assert_eq!(deg.iter().filter(|&&d| d == 1).count(), 4);
            assert!((30..=60).contains(&g.vertex_count()));
            assert_eq!(g.edge_count(), g.vertex_count() - 1);
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let mut s = curve_spec(10);
        s.class_count = 1;
        assert!(matches!(gen_curves(&s), Err(Error::SingleClass)));
        let mut s = curve_spec(10);
        s.vertex_range = (4, 10);
        assert!(gen_curves(&s).is_err());
        let mut s = stick_spec();
        s.vertex_range = (9, 20);
        assert!(gen_stickfigures(&s).is_err());
    }

    #[test]
    fn stratified_split() {
        let ds = gen_curves(&curve_spec(100)).unwrap();
        let (train, test) = split(&ds, 0.1, 3).unwrap();
        assert_eq!((train.len(), test.len()), (360, 40));
        assert!(test.class_sizes().unwrap().values().all(|&n| n == 10));
        let (train2, test2) = split(&ds, 0.1, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // union is the original multiset
        let mut all: Vec<Vec<u8>> = train.shapes.iter().chain(&test.shapes).map(geometry::write_shape).collect();
        let mut orig: Vec<Vec<u8>> = ds.shapes.iter().map(geometry::write_shape).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_needs_two_per_class() {
        let mut ds = gen_curves(&curve_spec(3)).unwrap();
        ds.shapes.truncate(4);
        assert!(matches!(split(&ds, 0.5, 0), Err(Error::ClassTooSmall { label: 1, count: 1 })));
    }

    #[test]
    fn random_pairs_are_seeded() {
        let (a, b) = random_shape_pair(3, 5, (10, 40)).unwrap();
        assert_eq!((a.clone(), b.clone()), random_shape_pair(3, 5, (10, 40)).unwrap());
        assert!((10..=40).contains(&a.vertex_count()) && (10..=40).contains(&b.vertex_count()));
        assert_eq!(a.edge_count(), a.vertex_count());
        let (c, _) = random_shape_pair(3, 4, (10, 40)).unwrap();
        assert_eq!(c.edge_count() + 1, c.vertex_count());
    }

    #[test]
    fn reparam_sets() {
        let ds = gen_curves(&curve_spec(2)).unwrap();
        let same = make_reparam_set(&ds, 1, 0, VariantKind::Identity).unwrap();
        assert_eq!(same, ds);
        let full = make_reparam_set(&ds, 3, 0, VariantKind::Full).unwrap();
        assert_eq!(full.len(), 24);
        for (i, g) in full.shapes.iter().enumerate() {
            assert_eq!(g.label, ds.shapes[i / 3].label);
        }
        let hundred = make_reparam_set(&LabeledDataset::new(vec![ds.shapes[0].clone()]), 100, 5, VariantKind::Full).unwrap();
        assert_eq!(hundred.len(), 100);
    }
}
