//! Signed distance sampling of watertight meshes onto cubic grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::grid::SdfGrid;
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::{self, Vec3};

/// Three fixed, incommensurate ray directions for the parity sign test.
/// Majority vote across them makes grazing hits harmless.
const RAY_DIRS: [Vec3; 3] = [
    [0.819172513396164, 0.395982119403497, 0.415232503506058],
    [-0.287145876125141, 0.914701994192831, 0.284503895276712],
    [0.148278773098100, -0.495234125561200, 0.855995347791600],
];

/// Samples the signed distance field of a watertight mesh on a cubic grid
/// covering the mesh bounding box expanded by `padding` on every side.
///
/// Magnitudes are exact unsigned distances to the surface; the sign comes
/// from ray-crossing parity (negative strictly inside). Non-watertight
/// meshes are rejected, naming the first grid cell whose parity votes
/// disagree.
pub fn sample_sdf_from_mesh(mesh: &TriMesh, resolution: usize, padding: f64) -> Result<SdfGrid> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "sdf sampling requires resolution >= 8, got {resolution}"
        )));
    }
    if mesh.faces.is_empty() || mesh.total_area() <= 0.0 {
        return Err(Error::DegenerateMesh(
            "mesh has no area; cannot sample a signed distance field".into(),
        ));
    }
    mesh.validate()?;

    let (mut lo, mut hi) = mesh.bbox()?;
    for a in 0..3 {
        lo[a] -= padding;
        hi[a] += padding;
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    if extent <= 0.0 {
        return Err(Error::DegenerateMesh("mesh bounding box has no extent".into()));
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let half = 0.5 * extent;
    let origin = [center[0] - half, center[1] - half, center[2] - half];
    let spacing = extent / (resolution - 1) as f64;

    let bvh = TriangleBvh::build(mesh);
    let watertight = mesh.watertight_violation();

    let r = resolution;
    let results: Vec<(f64, bool)> = (0..r * r * r)
        .into_par_iter()
        .map(|flat| {
            let i = flat % r;
            let j = (flat / r) % r;
            let k = flat / (r * r);
            let p = [
                origin[0] + spacing * i as f64,
                origin[1] + spacing * j as f64,
                origin[2] + spacing * k as f64,
            ];
            let dist = bvh.distance(p);
            let votes: u32 = RAY_DIRS
                .iter()
                .map(|&d| (bvh.ray_crossings(p, d) % 2 == 1) as u32)
                .sum();
            let inside = votes >= 2;
            let unanimous = votes == 0 || votes == 3;
            (if inside { -dist } else { dist }, unanimous)
        })
        .collect();

    if let Some((a, b)) = watertight {
        // locate the first ambiguous cell for the error message
        let cell = results
            .iter()
            .position(|&(_, unanimous)| !unanimous)
            .map(|flat| (flat % r, (flat / r) % r, flat / (r * r)))
            .unwrap_or((0, 0, 0));
        return Err(Error::NonWatertight(
            cell.0,
            cell.1,
            cell.2,
            format!("edge ({a}, {b}) is not shared by exactly two opposed faces"),
        ));
    }

    let values = results.into_iter().map(|(v, _)| v).collect();
    SdfGrid::new(resolution, origin, spacing, values)
}

/// AABB tree over mesh triangles for exact distance queries and ray-crossing
/// counts. Zero-area faces are skipped.
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<BvhNode>,
}

struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // leaf: range into tris; inner: children indices
    kind: NodeKind,
}

enum NodeKind {
    Leaf { start: usize, len: usize },
    Inner { left: usize, right: usize },
}

const BVH_LEAF: usize = 8;

impl TriangleBvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let mut tris: Vec<[Vec3; 3]> = (0..mesh.faces.len())
            .filter(|&f| mesh.face_area(f) > 1e-30)
            .map(|f| mesh.face_vertices(f))
            .collect();
        let mut nodes = Vec::new();
        if tris.is_empty() {
            nodes.push(BvhNode {
                lo: [0.0; 3],
                hi: [0.0; 3],
                kind: NodeKind::Leaf { start: 0, len: 0 },
            });
        } else {
            build_node(&mut tris, 0, &mut nodes);
        }
        TriangleBvh { tris, nodes }
    }

    /// Exact unsigned distance from `p` to the closest triangle.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.distance_sq(p).sqrt()
    }

    pub fn distance_sq(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.distance_rec(0, p, &mut best);
        best
    }

    fn distance_rec(&self, node: usize, p: Vec3, best: &mut f64) {
        let n = &self.nodes[node];
        if aabb_dist_sq(n.lo, n.hi, p) >= *best {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, len } => {
                for t in &self.tris[start..start + len] {
                    let d = vec3::point_triangle_dist_sq(p, t[0], t[1], t[2]);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                let dl = aabb_dist_sq(self.nodes[left].lo, self.nodes[left].hi, p);
                let dr = aabb_dist_sq(self.nodes[right].lo, self.nodes[right].hi, p);
                if dl <= dr {
                    self.distance_rec(left, p, best);
                    self.distance_rec(right, p, best);
                } else {
                    self.distance_rec(right, p, best);
                    self.distance_rec(left, p, best);
                }
            }
        }
    }

    /// Number of triangle crossings along the ray from `orig` in direction
    /// `dir`.
    pub fn ray_crossings(&self, orig: Vec3, dir: Vec3) -> usize {
        let mut count = 0;
        self.ray_rec(0, orig, dir, &mut count);
        count
    }

    fn ray_rec(&self, node: usize, orig: Vec3, dir: Vec3, count: &mut usize) {
        let n = &self.nodes[node];
        if !ray_hits_aabb(n.lo, n.hi, orig, dir) {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, len } => {
                for t in &self.tris[start..start + len] {
                    if vec3::ray_triangle(orig, dir, t[0], t[1], t[2]).is_some() {
                        *count += 1;
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                self.ray_rec(left, orig, dir, count);
                self.ray_rec(right, orig, dir, count);
            }
        }
    }

    /// Signed distance: parity vote over the fixed ray directions.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let votes: u32 = RAY_DIRS
            .iter()
            .map(|&d| (self.ray_crossings(p, d) % 2 == 1) as u32)
            .sum();
        let d = self.distance(p);
        if votes >= 2 {
            -d
        } else {
            d
        }
    }
}

fn build_node(tris: &mut [[Vec3; 3]], offset: usize, nodes: &mut Vec<BvhNode>) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for t in tris.iter() {
        for v in t {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
    }
    let id = nodes.len();
    nodes.push(BvhNode { lo, hi, kind: NodeKind::Leaf { start: offset, len: tris.len() } });
    if tris.len() <= BVH_LEAF {
        return id;
    }

    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = tris.len() / 2;
    tris.select_nth_unstable_by(mid, |a, b| {
        let ca = a[0][axis] + a[1][axis] + a[2][axis];
        let cb = b[0][axis] + b[1][axis] + b[2][axis];
        ca.total_cmp(&cb)
    });
    let (left_tris, right_tris) = tris.split_at_mut(mid);
    let left = build_node(left_tris, offset, nodes);
    let right = build_node(right_tris, offset + mid, nodes);
    nodes[id].kind = NodeKind::Inner { left, right };
    id
}

fn aabb_dist_sq(lo: Vec3, hi: Vec3, p: Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if p[a] < lo[a] {
            lo[a] - p[a]
        } else if p[a] > hi[a] {
            p[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

fn ray_hits_aabb(lo: Vec3, hi: Vec3, orig: Vec3, dir: Vec3) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if orig[a] < lo[a] || orig[a] > hi[a] {
                return false;
            }
        } else {
            let inv = 1.0 / dir[a];
            let mut t0 = (lo[a] - orig[a]) * inv;
            let mut t1 = (hi[a] - orig[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{icosphere, tessellated_box};

    #[test]
    fn sphere_center_value_is_minus_radius() {
        let mesh = icosphere(0.5, 3);
        assert_eq!(mesh.faces.len(), 1280);
        let grid = sample_sdf_from_mesh(&mesh, 64, 0.1).unwrap();
        let mid = grid.resolution() / 2;
        let v = grid.get(mid, mid, mid);
        assert!(
            (v + 0.5).abs() <= 2.0 * grid.spacing(),
            "center value {v}, expected about -0.5"
        );
    }

    #[test]
    fn sphere_surface_cells_have_small_magnitude() {
        let mesh = icosphere(0.5, 3);
        let grid = sample_sdf_from_mesh(&mesh, 64, 0.1).unwrap();
        // walk the +x axis from the center and find the sign change
        let mid = grid.resolution() / 2;
        let mut prev = grid.get(mid, mid, mid);
        for i in mid + 1..grid.resolution() {
            let v = grid.get(i, mid, mid);
            if prev < 0.0 && v >= 0.0 {
                assert!(v.abs() <= grid.spacing(), "surface cell value {v}");
                assert!(prev.abs() <= grid.spacing(), "surface cell value {prev}");
                return;
            }
            prev = v;
        }
        panic!("no sign change found along the axis");
    }

    /// Closed-form box SDF: exterior corner distance equals the Euclidean
    /// distance to the nearest box corner.
    #[test]
    fn box_corner_matches_analytic_sdf() {
        let (ex, ey, ez) = (0.4, 0.2, 0.6);
        let mesh = tessellated_box(ex, ey, ez, 4);
        let grid = sample_sdf_from_mesh(&mesh, 32, 0.15).unwrap();
        let analytic = |p: Vec3| -> f64 {
            let q = [
                p[0].abs() - ex / 2.0,
                p[1].abs() - ey / 2.0,
                p[2].abs() - ez / 2.0,
            ];
            let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
            let out_len = vec3::norm(outside);
            out_len + q[0].max(q[1]).max(q[2]).min(0.0)
        };
        let r = grid.resolution();
        // exterior corner region of the grid
        let corner = grid.position(r - 1, r - 1, r - 1);
        let got = grid.get(r - 1, r - 1, r - 1);
        assert!(
            (got - analytic(corner)).abs() <= 2.0 * grid.spacing(),
            "corner cell {got}, analytic {}",
            analytic(corner)
        );
        // spot-check random-ish exterior and interior cells
        for (i, j, k) in [(2, 2, 2), (r / 2, r / 2, r / 2), (r - 2, r / 2, r / 2)] {
            let got = grid.get(i, j, k);
            let want = analytic(grid.position(i, j, k));
            assert!(
                (got - want).abs() <= 2.0 * grid.spacing(),
                "cell ({i},{j},{k}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn non_watertight_mesh_is_rejected_naming_a_cell() {
        let mut mesh = icosphere(0.5, 2);
        mesh.faces.pop(); // open a hole
        let err = sample_sdf_from_mesh(&mesh, 8, 0.1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not watertight"), "message: {msg}");
        assert!(msg.contains("cell"), "message: {msg}");
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let mesh = TriMesh {
            vertices: vec![[0.0; 3], [0.0; 3], [0.0; 3]],
            faces: vec![[0, 1, 2]],
            colors: None,
        };
        assert!(matches!(
            sample_sdf_from_mesh(&mesh, 8, 0.1),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn sign_changes_only_across_surface_crossings() {
        let mesh = icosphere(0.5, 2);
        let grid = sample_sdf_from_mesh(&mesh, 24, 0.1).unwrap();
        let bvh = TriangleBvh::build(&mesh);
        let r = grid.resolution();
        for k in 0..r {
            for j in 0..r {
                for i in 0..r - 1 {
                    let a = grid.get(i, j, k);
                    let b = grid.get(i + 1, j, k);
                    if a.signum() != b.signum() {
                        // the segment between the nodes must cross the surface:
                        // both endpoint magnitudes within one cell of it
                        let pa = grid.position(i, j, k);
                        let pb = grid.position(i + 1, j, k);
                        assert!(bvh.distance(pa) <= grid.spacing() + 1e-9);
                        assert!(bvh.distance(pb) <= grid.spacing() + 1e-9);
                    }
                }
            }
        }
    }
}
