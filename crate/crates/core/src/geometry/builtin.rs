//! Procedural shape set: analytic triangle meshes used for tests and
//! dataset generation without external model files.

use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::Vec3;
use crate::rng::SplitRng;
use crate::scalar::{cast, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinKind {
    Sphere,
    Box,
    Torus,
    Cylinder,
    LBracket,
}

pub const BUILTIN_KINDS: [BuiltinKind; 5] = [
    BuiltinKind::Sphere,
    BuiltinKind::Box,
    BuiltinKind::Torus,
    BuiltinKind::Cylinder,
    BuiltinKind::LBracket,
];

impl BuiltinKind {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::Sphere => "sphere",
            BuiltinKind::Box => "box",
            BuiltinKind::Torus => "torus",
            BuiltinKind::Cylinder => "cylinder",
            BuiltinKind::LBracket => "l-bracket",
        }
    }
}

fn grid_faces(faces: &mut Vec<[usize; 3]>, rows: usize, cols: usize, wrap_rows: bool, wrap_cols: bool, base: usize) {
    let row_count = if wrap_rows { rows } else { rows - 1 };
    let col_count = if wrap_cols { cols } else { cols - 1 };
    for r in 0..row_count {
        for c in 0..col_count {
            let r1 = (r + 1) % rows;
            let c1 = (c + 1) % cols;
            let a = base + r * cols + c;
            let b = base + r * cols + c1;
            let d = base + r1 * cols + c;
            let e = base + r1 * cols + c1;
            faces.push([a, b, e]);
            faces.push([a, e, d]);
        }
    }
}

/// Ellipsoid as a UV sphere with per-axis radii.
fn ellipsoid<S: Scalar>(radii: [f64; 3], rings: usize, segments: usize) -> TriMesh<S> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let (rx, ry, rz) = (radii[0], radii[1], radii[2]);
    // Poles handled as rings of duplicated points kept tiny to preserve the
    // simple grid topology; the duplicated area is negligible for sampling.
    for r in 0..=rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(
                cast::<S>(rx * theta.sin() * phi.cos()),
                cast::<S>(ry * theta.sin() * phi.sin()),
                cast::<S>(rz * theta.cos()),
            ));
        }
    }
    grid_faces(&mut faces, rings + 1, segments, false, true, 0);
    TriMesh { vertices, faces }
}

fn cuboid<S: Scalar>(half: [f64; 3]) -> TriMesh<S> {
    let (hx, hy, hz) = (half[0], half[1], half[2]);
    let corners = [
        [-hx, -hy, -hz],
        [hx, -hy, -hz],
        [hx, hy, -hz],
        [-hx, hy, -hz],
        [-hx, -hy, hz],
        [hx, -hy, hz],
        [hx, hy, hz],
        [-hx, hy, hz],
    ];
    let vertices = corners
        .iter()
        .map(|&[x, y, z]| Vec3::new(cast::<S>(x), cast::<S>(y), cast::<S>(z)))
        .collect();
    let quads = [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ];
    let mut faces = Vec::new();
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    TriMesh { vertices, faces }
}

fn torus<S: Scalar>(major: f64, minor: f64, rings: usize, segments: usize) -> TriMesh<S> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for r in 0..rings {
        let u = 2.0 * std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let v = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let w = major + minor * v.cos();
            vertices.push(Vec3::new(
                cast::<S>(w * u.cos()),
                cast::<S>(w * u.sin()),
                cast::<S>(minor * v.sin()),
            ));
        }
    }
    grid_faces(&mut faces, rings, segments, true, true, 0);
    TriMesh { vertices, faces }
}

fn cylinder<S: Scalar>(radius: f64, half_height: f64, segments: usize) -> TriMesh<S> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for &z in &[-half_height, half_height] {
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(
                cast::<S>(radius * phi.cos()),
                cast::<S>(radius * phi.sin()),
                cast::<S>(z),
            ));
        }
    }
    grid_faces(&mut faces, 2, segments, false, true, 0);
    // Caps: fan around a center vertex per end.
    for (ring, &z) in [-half_height, half_height].iter().enumerate() {
        let center = vertices.len();
        vertices.push(Vec3::new(S::zero(), S::zero(), cast::<S>(z)));
        for s in 0..segments {
            let a = ring * segments + s;
            let b = ring * segments + (s + 1) % segments;
            if ring == 0 {
                faces.push([center, b, a]);
            } else {
                faces.push([center, a, b]);
            }
        }
    }
    TriMesh { vertices, faces }
}

/// L-shaped prism: an L hexagon in the xy plane extruded along z.
fn l_bracket<S: Scalar>(arm_a: f64, arm_b: f64, thickness: f64, half_depth: f64) -> TriMesh<S> {
    // Outline, counterclockwise.
    let outline = [
        [0.0, 0.0],
        [arm_a, 0.0],
        [arm_a, thickness],
        [thickness, thickness],
        [thickness, arm_b],
        [0.0, arm_b],
    ];
    let mut vertices = Vec::new();
    for &z in &[-half_depth, half_depth] {
        for &[x, y] in &outline {
            vertices.push(Vec3::new(cast::<S>(x), cast::<S>(y), cast::<S>(z)));
        }
    }
    // Triangulate the L as two rectangles: (0,1,2,3) and (0,3,4,5).
    let cap = |base: usize, flip: bool, faces: &mut Vec<[usize; 3]>| {
        let tris = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]];
        for t in tris {
            let f = [base + t[0], base + t[1], base + t[2]];
            faces.push(if flip { [f[0], f[2], f[1]] } else { f });
        }
    };
    let mut faces = Vec::new();
    cap(0, true, &mut faces);
    cap(6, false, &mut faces);
    for s in 0..6 {
        let s1 = (s + 1) % 6;
        faces.push([s, s1, 6 + s1]);
        faces.push([s, 6 + s1, 6 + s]);
    }
    TriMesh { vertices, faces }
}

/// Builds one procedural shape with seed-randomized proportions. The load
/// path normalizes clouds afterwards, so absolute scale does not matter.
pub fn builtin_shape<S: Scalar>(kind: BuiltinKind, seed: u64) -> TriMesh<S> {
    let mut rng = SplitRng::new(seed);
    let mut stretch = || rng.uniform_in(0.6, 1.4);
    match kind {
        BuiltinKind::Sphere => ellipsoid([stretch(), stretch(), stretch()], 24, 32),
        BuiltinKind::Box => cuboid([stretch(), stretch() * 0.7, stretch() * 0.45]),
        BuiltinKind::Torus => {
            let major = stretch();
            let minor = major * rng.uniform_in(0.2, 0.45);
            torus(major, minor, 32, 20)
        }
        BuiltinKind::Cylinder => cylinder(stretch() * 0.5, stretch(), 32),
        BuiltinKind::LBracket => {
            let arm_a = stretch();
            let arm_b = stretch();
            let thickness = 0.3 * arm_a.min(arm_b);
            l_bracket(arm_a, arm_b, thickness, stretch() * 0.25)
        }
    }
}

/// A reproducible family of `count` shapes cycling through the builtin kinds
/// with per-shape proportion seeds.
pub fn builtin_set<S: Scalar>(count: usize, seed: u64) -> Vec<TriMesh<S>> {
    let root = SplitRng::new(seed);
    (0..count)
        .map(|i| {
            let kind = BUILTIN_KINDS[i % BUILTIN_KINDS.len()];
            let mut child = root.child(i as u64);
            builtin_shape(kind, child.next_u64())
        })
        .collect()
}

use rand::RngCore;
