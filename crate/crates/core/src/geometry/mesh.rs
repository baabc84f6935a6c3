//! Indexed triangle meshes with optional per-vertex colors.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};

/// Indexed triangle mesh. Colors, when present, are RGB in [0,1] and run
/// parallel to `vertices`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

/// A sampled point, optionally carrying an interpolated color and a signed
/// offset from the surface it was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    pub color: Option<[f64; 3]>,
    pub sdf: Option<f64>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriMesh { vertices, faces, colors: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_colors(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        colors: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let mesh = TriMesh { vertices, faces, colors: Some(colors) };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            if f[0] >= n || f[1] >= n || f[2] >= n {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references vertex out of range ({:?}, {n} vertices)",
                    f
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references the same vertex twice: {:?}",
                    f
                )));
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.vertices.len() {
                return Err(Error::InvalidMesh(format!(
                    "color count {} does not match vertex count {}",
                    colors.len(),
                    self.vertices.len()
                )));
            }
            for (i, c) in colors.iter().enumerate() {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidMesh(format!(
                        "color {i} out of [0,1]: {:?}",
                        c
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_vertices(f);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounding box as (min, max). Errors on empty meshes.
    pub fn bbox(&self) -> Result<(Vec3, Vec3)> {
        if self.vertices.is_empty() {
            return Err(Error::Empty("mesh has no vertices".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Ok((lo, hi))
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            // cross product length is twice the area, so this is area weighting
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
            for &vi in f {
                normals[vi as usize] = vec3::add(normals[vi as usize], n);
            }
        }
        normals.into_iter().map(vec3::normalize).collect()
    }

    /// Signed volume via the divergence theorem. Positive for outward-wound
    /// closed meshes.
    pub fn signed_volume(&self) -> f64 {
        let mut vol = 0.0;
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            vol += vec3::dot(a, vec3::cross(b, c)) / 6.0;
        }
        vol
    }

    /// Checks that every undirected edge is shared by exactly two faces with
    /// opposite orientation. Returns the first offending edge otherwise.
    pub fn watertight_violation(&self) -> Option<(u32, u32)> {
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let (key, sign) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                *edges.entry(key).or_insert(0) += sign;
            }
        }
        let mut bad: Vec<(u32, u32)> = edges
            .into_iter()
            .filter(|&(_, count)| count != 0)
            .map(|(e, _)| e)
            .collect();
        bad.sort_unstable();
        bad.into_iter().next()
    }

    pub fn translated(&self, offset: Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| vec3::add(v, offset)).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| vec3::scale(v, s)).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }
}

/// Longest-edge midpoint subdivision until `target_vertices` is reached.
///
/// Splitting an edge inserts its midpoint and bisects every face sharing the
/// edge, so the surface is unchanged as a point set. Returns the input
/// unchanged when the target is already met. Ties on edge length break by
/// vertex index pair so results are deterministic.
pub fn remesh_subdivide(mesh: &TriMesh, target_vertices: usize) -> TriMesh {
    if mesh.vertices.len() >= target_vertices || mesh.faces.is_empty() {
        return mesh.clone();
    }

    let mut vertices = mesh.vertices.clone();
    let mut colors = mesh.colors.clone();
    let mut faces = mesh.faces.clone();

    // edge -> faces currently containing it
    let mut edge_faces: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    let edge_key = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
    for (fi, f) in faces.iter().enumerate() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edge_faces.entry(edge_key(a, b)).or_default().push(fi);
        }
    }

    // max-heap on (length, edge); stale entries are skipped on pop
    let mut heap: std::collections::BinaryHeap<(EdgeLen, (u32, u32))> = edge_faces
        .keys()
        .map(|&(a, b)| {
            let len = vec3::dist(vertices[a as usize], vertices[b as usize]);
            (EdgeLen(len), (a, b))
        })
        .collect();

    while vertices.len() < target_vertices {
        let Some((_, (a, b))) = heap.pop() else { break };
        let Some(adjacent) = edge_faces.remove(&(a, b)) else {
            continue; // edge no longer exists
        };

        let mid = vec3::scale(vec3::add(vertices[a as usize], vertices[b as usize]), 0.5);
        let m = vertices.len() as u32;
        vertices.push(mid);
        if let Some(cols) = &mut colors {
            let ca = cols[a as usize];
            let cb = cols[b as usize];
            cols.push([
                0.5 * (ca[0] + cb[0]),
                0.5 * (ca[1] + cb[1]),
                0.5 * (ca[2] + cb[2]),
            ]);
        }

        for fi in adjacent {
            let f = faces[fi];
            // rotate so the split edge is (f[0], f[1])
            let rot = if edge_key(f[0], f[1]) == edge_key(a, b) {
                [f[0], f[1], f[2]]
            } else if edge_key(f[1], f[2]) == edge_key(a, b) {
                [f[1], f[2], f[0]]
            } else {
                [f[2], f[0], f[1]]
            };
            let [va, vb, vc] = rot;
            faces[fi] = [va, m, vc];
            let new_fi = faces.len();
            faces.push([m, vb, vc]);

            // edge (vb, vc) now belongs to the new child; (va, vc) keeps fi
            if let Some(list) = edge_faces.get_mut(&edge_key(vb, vc)) {
                for slot in list.iter_mut() {
                    if *slot == fi {
                        *slot = new_fi;
                    }
                }
            }

            // new edges incident to the midpoint; (m, vc) is shared by both
            // children of this face
            for (x, y, owners) in [
                (va, m, &[fi][..]),
                (m, vb, &[new_fi][..]),
                (m, vc, &[fi, new_fi][..]),
            ] {
                let key = edge_key(x, y);
                if !edge_faces.contains_key(&key) {
                    let len = vec3::dist(vertices[x as usize], vertices[y as usize]);
                    heap.push((EdgeLen(len), key));
                    edge_faces.insert(key, Vec::new());
                }
                edge_faces.get_mut(&key).unwrap().extend_from_slice(owners);
            }
        }
    }

    TriMesh { vertices, faces, colors }
}

/// Edge length ordered descending with a deterministic tie-break.
#[derive(PartialEq)]
struct EdgeLen(f64);

impl Eq for EdgeLen {}

impl PartialOrd for EdgeLen {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EdgeLen {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{icosahedron, icosphere};

    #[test]
    fn icosahedron_subdivides_to_42_vertices() {
        let mesh = icosahedron(0.5);
        assert_eq!(mesh.vertices.len(), 12);
        let out = remesh_subdivide(&mesh, 42);
        assert_eq!(out.vertices.len(), 42);
        assert_eq!(out.faces.len(), 80);
        assert_eq!(out.watertight_violation(), None);
    }

    #[test]
    fn target_at_current_count_is_a_no_op() {
        let mesh = icosphere(0.5, 1);
        let out = remesh_subdivide(&mesh, mesh.vertices.len());
        assert_eq!(out, mesh);
        let out = remesh_subdivide(&mesh, 3);
        assert_eq!(out, mesh);
    }

    /// New vertices always lie on original face planes, so their radial
    /// deviation is bounded by the worst chord deviation of those planes.
    #[test]
    fn subdivision_respects_chord_height_bound() {
        let mesh = icosphere(0.5, 2);
        let max_chord_dev = mesh
            .faces
            .iter()
            .map(|f| {
                let a = mesh.vertices[f[0] as usize];
                let b = mesh.vertices[f[1] as usize];
                let c = mesh.vertices[f[2] as usize];
                let n = vec3::normalize(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
                0.5 - vec3::dot(n, a).abs()
            })
            .fold(0.0f64, f64::max);
        let out = remesh_subdivide(&mesh, 10_000);
        assert!(out.vertices.len() >= 10_000);
        for v in &out.vertices[mesh.vertices.len()..] {
            let dev = 0.5 - vec3::norm(*v);
            assert!(
                dev <= max_chord_dev + 1e-12,
                "new vertex deviation {dev} exceeds chord bound {max_chord_dev}"
            );
        }
    }

    /// Every new vertex must lie on one of the original face planes.
    #[test]
    fn subdivision_preserves_the_surface() {
        let mesh = icosphere(0.3, 1);
        let original_faces: Vec<[Vec3; 3]> =
            (0..mesh.faces.len()).map(|f| mesh.face_vertices(f)).collect();
        let out = remesh_subdivide(&mesh, 500);
        for v in &out.vertices[mesh.vertices.len()..] {
            let on_some_face = original_faces.iter().any(|[a, b, c]| {
                vec3::point_triangle_dist_sq(*v, *a, *b, *c) < 1e-18
            });
            assert!(on_some_face, "vertex {v:?} left the original surface");
        }
    }

    #[test]
    fn subdivision_averages_colors_at_midpoints() {
        let mut mesh = icosahedron(0.5);
        let n = mesh.vertices.len();
        mesh.colors = Some((0..n).map(|i| [i as f64 / n as f64, 0.25, 0.75]).collect());
        let out = remesh_subdivide(&mesh, 42);
        let cols = out.colors.unwrap();
        assert_eq!(cols.len(), 42);
        for c in cols {
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn watertight_violation_detects_open_meshes() {
        let mut mesh = icosphere(0.5, 1);
        assert_eq!(mesh.watertight_violation(), None);
        mesh.faces.pop();
        assert!(mesh.watertight_violation().is_some());
    }

    #[test]
    fn validation_rejects_bad_faces_and_colors() {
        let bad = TriMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 5]],
            colors: None,
        };
        assert!(bad.validate().is_err());
        let dup = TriMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 1]],
            colors: None,
        };
        assert!(dup.validate().is_err());
        let colors = TriMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2]],
            colors: Some(vec![[0.0; 3]]),
        };
        assert!(colors.validate().is_err());
    }
}
