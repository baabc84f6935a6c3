//! Watertight primitive meshes.

use std::collections::HashMap;

use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::{self, Vec3};

/// Regular icosahedron with circumscribed radius `radius`.
pub fn icosahedron(radius: f64) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Vec3> = raw
        .iter()
        .map(|&v| vec3::scale(vec3::normalize(v), radius))
        .collect();
    let faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh { vertices, faces, colors: None }
}

/// Icosphere: `subdivisions` rounds of 1:4 splitting with reprojection.
/// Three rounds give the classic 1280-face sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let mut mesh = icosahedron(radius);
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut vertices = mesh.vertices.clone();
        let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
        for f in &mesh.faces {
            let mut mids = [0u32; 3];
            for (e, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].iter().enumerate() {
                let key = if a < b { (*a, *b) } else { (*b, *a) };
                mids[e] = *midpoints.entry(key).or_insert_with(|| {
                    let m = vec3::scale(
                        vec3::add(vertices[*a as usize], vertices[*b as usize]),
                        0.5,
                    );
                    let id = vertices.len() as u32;
                    vertices.push(vec3::scale(vec3::normalize(m), radius));
                    id
                });
            }
            faces.push([f[0], mids[0], mids[2]]);
            faces.push([mids[0], f[1], mids[1]]);
            faces.push([mids[1], f[2], mids[2]]);
            faces.push([mids[0], mids[1], mids[2]]);
        }
        mesh = TriMesh { vertices, faces, colors: None };
    }
    mesh
}

/// Ellipsoid with semi-axes `(a, b, c)`, built by scaling an icosphere.
pub fn ellipsoid(a: f64, b: f64, c: f64, subdivisions: usize) -> TriMesh {
    let mut mesh = icosphere(1.0, subdivisions);
    for v in &mut mesh.vertices {
        v[0] *= a;
        v[1] *= b;
        v[2] *= c;
    }
    mesh
}

/// Axis-aligned box with full extents `(ex, ey, ez)` centered at the origin.
/// Each face is tessellated into `segments`^2 quads; edge vertices are shared
/// so the result is watertight.
pub fn tessellated_box(ex: f64, ey: f64, ez: f64, segments: usize) -> TriMesh {
    let s = segments.max(1);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut lookup: HashMap<(usize, usize, usize), u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let mut vertex =
        |lookup: &mut HashMap<(usize, usize, usize), u32>, i: usize, j: usize, k: usize| -> u32 {
            *lookup.entry((i, j, k)).or_insert_with(|| {
                let p = [
                    ex * (i as f64 / s as f64 - 0.5),
                    ey * (j as f64 / s as f64 - 0.5),
                    ez * (k as f64 / s as f64 - 0.5),
                ];
                let id = vertices.len() as u32;
                vertices.push(p);
                id
            })
        };

    // (fixed axis, fixed lattice value, flip winding)
    let sides: [(usize, usize, bool); 6] = [
        (0, 0, true),
        (0, s, false),
        (1, 0, false),
        (1, s, true),
        (2, 0, true),
        (2, s, false),
    ];
    for (axis, fixed, flip) in sides {
        for u in 0..s {
            for v in 0..s {
                let lat = |uu: usize, vv: usize| -> (usize, usize, usize) {
                    match axis {
                        0 => (fixed, uu, vv),
                        1 => (uu, fixed, vv),
                        _ => (uu, vv, fixed),
                    }
                };
                let (a0, a1, a2) = lat(u, v);
                let (b0, b1, b2) = lat(u + 1, v);
                let (c0, c1, c2) = lat(u + 1, v + 1);
                let (d0, d1, d2) = lat(u, v + 1);
                let va = vertex(&mut lookup, a0, a1, a2);
                let vb = vertex(&mut lookup, b0, b1, b2);
                let vc = vertex(&mut lookup, c0, c1, c2);
                let vd = vertex(&mut lookup, d0, d1, d2);
                if flip {
                    faces.push([va, vc, vb]);
                    faces.push([va, vd, vc]);
                } else {
                    faces.push([va, vb, vc]);
                    faces.push([va, vc, vd]);
                }
            }
        }
    }
    TriMesh { vertices, faces, colors: None }
}

/// Capsule: cylinder of `radius` and half-length `half_len` along z with
/// hemispherical caps. `segments` around the axis, `rings` per hemisphere.
pub fn capsule(radius: f64, half_len: f64, segments: usize, rings: usize) -> TriMesh {
    let seg = segments.max(3);
    let rings = rings.max(2);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    // stacked latitude rings from bottom pole to top pole
    let bottom_pole = vertices.len() as u32;
    vertices.push([0.0, 0.0, -half_len - radius]);

    let mut ring_starts: Vec<u32> = Vec::new();
    // bottom hemisphere rings (excluding pole), equator last
    for r in 1..=rings {
        let lat = -std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_2 * r as f64 / rings as f64;
        let (z, rad) = (-half_len + radius * lat.sin(), radius * lat.cos());
        ring_starts.push(push_ring(&mut vertices, rad, z, seg));
    }
    // top cylinder ring plus top hemisphere rings
    for r in 0..=rings {
        let lat = std::f64::consts::FRAC_PI_2 * r as f64 / rings as f64;
        let (z, rad) = (half_len + radius * lat.sin(), radius * lat.cos());
        ring_starts.push(push_ring(&mut vertices, rad, z, seg));
    }
    let top_pole = vertices.len() as u32;
    vertices.push([0.0, 0.0, half_len + radius]);

    // bottom fan
    let first = ring_starts[0];
    for s in 0..seg as u32 {
        let next = (s + 1) % seg as u32;
        faces.push([bottom_pole, first + next, first + s]);
    }
    // ring bands
    for w in 0..ring_starts.len() - 1 {
        let (a, b) = (ring_starts[w], ring_starts[w + 1]);
        for s in 0..seg as u32 {
            let next = (s + 1) % seg as u32;
            faces.push([a + s, a + next, b + s]);
            faces.push([a + next, b + next, b + s]);
        }
    }
    // top fan
    let last = *ring_starts.last().unwrap();
    for s in 0..seg as u32 {
        let next = (s + 1) % seg as u32;
        faces.push([top_pole, last + s, last + next]);
    }

    TriMesh { vertices, faces, colors: None }
}

fn push_ring(vertices: &mut Vec<Vec3>, radius: f64, z: f64, seg: usize) -> u32 {
    let start = vertices.len() as u32;
    for s in 0..seg {
        let theta = 2.0 * std::f64::consts::PI * s as f64 / seg as f64;
        vertices.push([radius * theta.cos(), radius * theta.sin(), z]);
    }
    start
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_face_count_and_radius() {
        let m = icosphere(0.5, 3);
        assert_eq!(m.faces.len(), 1280);
        for v in &m.vertices {
            assert!((vec3::norm(*v) - 0.5).abs() < 1e-12);
        }
        assert_eq!(m.watertight_violation(), None);
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn box_is_watertight_with_correct_area_and_volume() {
        let m = tessellated_box(0.4, 0.2, 0.6, 3);
        assert_eq!(m.watertight_violation(), None);
        let area = m.total_area();
        let expected = 2.0 * (0.4 * 0.2 + 0.2 * 0.6 + 0.4 * 0.6);
        assert!((area - expected).abs() < 1e-9, "area {area} vs {expected}");
        let vol = m.signed_volume();
        assert!((vol - 0.4 * 0.2 * 0.6).abs() < 1e-9, "volume {vol}");
    }

    #[test]
    fn capsule_is_watertight_with_positive_volume() {
        let m = capsule(0.2, 0.3, 16, 6);
        assert_eq!(m.watertight_violation(), None);
        let vol = m.signed_volume();
        let analytic = std::f64::consts::PI * 0.2 * 0.2 * 0.6
            + 4.0 / 3.0 * std::f64::consts::PI * 0.2f64.powi(3);
        assert!((vol - analytic).abs() < 0.05 * analytic, "volume {vol} vs {analytic}");
    }

    #[test]
    fn ellipsoid_is_watertight() {
        let m = ellipsoid(0.4, 0.25, 0.3, 2);
        assert_eq!(m.watertight_violation(), None);
        assert!(m.signed_volume() > 0.0);
    }
}
