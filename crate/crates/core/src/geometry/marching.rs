//! Isosurface extraction from SDF grids.

use std::collections::HashMap;

use crate::geometry::grid::SdfGrid;
use crate::geometry::mesh::TriMesh;
use crate::geometry::tables::{CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE};
use crate::geometry::vec3::{lerp, Vec3};

/// Extracts the iso-level surface of `grid` as a triangle mesh.
///
/// Vertices lie on grid edges whose endpoint values straddle `iso`,
/// positioned by linear interpolation, and are shared between adjacent
/// cells. Triangles are wound so normals point toward increasing SDF
/// (outward for the negative-inside convention). A grid without crossings
/// yields an empty mesh.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> TriMesh {
    let r = grid.resolution();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    // key: (grid node index of lower corner, axis of the edge)
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();

    let mut corner_vals = [0.0f64; 8];
    let mut corner_idx = [0usize; 8];

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut case = 0usize;
                for (c, &(dx, dy, dz)) in CORNER_OFFSETS.iter().enumerate() {
                    let idx = grid.index(i + dx, j + dy, k + dz);
                    corner_idx[c] = idx;
                    corner_vals[c] = grid.values()[idx];
                    if corner_vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                let tris = &TRI_TABLE[case];
                if tris[0] < 0 {
                    continue;
                }

                let mut t = 0;
                while tris[t] >= 0 {
                    let mut tri = [0u32; 3];
                    // reversed winding: the table is wound for inside-positive,
                    // our SDFs are negative inside
                    for (slot, &e) in tri.iter_mut().rev().zip(&tris[t..t + 3]) {
                        let (ca, cb) = EDGE_CORNERS[e as usize];
                        let (ia, ib) = (corner_idx[ca], corner_idx[cb]);
                        let key = edge_id(ia, ib, r);
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let (oa, ob) = (CORNER_OFFSETS[ca], CORNER_OFFSETS[cb]);
                            let pa = grid.position(i + oa.0, j + oa.1, k + oa.2);
                            let pb = grid.position(i + ob.0, j + ob.1, k + ob.2);
                            let (va, vb) = (corner_vals[ca], corner_vals[cb]);
                            let frac = if (vb - va).abs() < 1e-30 {
                                0.5
                            } else {
                                ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                            };
                            let id = vertices.len() as u32;
                            vertices.push(lerp(pa, pb, frac));
                            id
                        });
                    }
                    faces.push(tri);
                    t += 3;
                }
            }
        }
    }

    TriMesh { vertices, faces, colors: None }
}

/// Canonical edge key: (lower node index, axis). Grid edges are axis-aligned
/// between adjacent nodes, so the pair is unique.
fn edge_id(ia: usize, ib: usize, r: usize) -> (usize, u8) {
    let (lo, hi) = if ia < ib { (ia, ib) } else { (ib, ia) };
    let diff = hi - lo;
    let axis = if diff == 1 {
        0
    } else if diff == r {
        1
    } else {
        2
    };
    (lo, axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;
    use rand::{Rng, SeedableRng};

    fn sphere_grid(resolution: usize, radius: f64) -> SdfGrid {
        let spacing = 2.0 / (resolution - 1) as f64;
        let origin = [-1.0; 3];
        let mut grid = SdfGrid::zeros(resolution, origin, spacing).unwrap();
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let p = grid.position(i, j, k);
                    grid.set(i, j, k, vec3::norm(p) - radius);
                }
            }
        }
        grid
    }

    #[test]
    fn sphere_vertices_sit_on_radius() {
        let grid = sphere_grid(64, 0.5);
        let mesh = marching_cubes(&grid, 0.0);
        assert!(!mesh.is_empty());
        let band = 2.0 * grid.spacing();
        for v in &mesh.vertices {
            let r = vec3::norm(*v);
            assert!(
                (r - 0.5).abs() <= band,
                "vertex radius {r} outside [{}, {}]",
                0.5 - band,
                0.5 + band
            );
        }
    }

    #[test]
    fn sphere_surface_is_watertight_with_outward_orientation() {
        let grid = sphere_grid(32, 0.5);
        let mesh = marching_cubes(&grid, 0.0);
        assert_eq!(mesh.watertight_violation(), None);
        let vol = mesh.signed_volume();
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.powi(3);
        assert!(
            (vol - expected).abs() < 0.05 * expected,
            "signed volume {vol}, expected about {expected}"
        );
    }

    #[test]
    fn constant_positive_grid_yields_empty_mesh() {
        let grid = SdfGrid::new(8, [0.0; 3], 0.1, vec![1.0; 512]).unwrap();
        let mesh = marching_cubes(&grid, 0.0);
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    #[test]
    fn iso_outside_value_range_yields_empty_mesh() {
        let grid = sphere_grid(16, 0.5);
        let mesh = marching_cubes(&grid, 1e6);
        assert!(mesh.is_empty());
    }

    /// Random interior sign patterns exercise every table case pair; a closed
    /// positive shell means the extracted surface must be watertight.
    #[test]
    fn random_padded_grids_extract_watertight_surfaces() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = 6;
            let mut grid = SdfGrid::zeros(r, [0.0; 3], 1.0).unwrap();
            for k in 0..r {
                for j in 0..r {
                    for i in 0..r {
                        let boundary =
                            i == 0 || j == 0 || k == 0 || i == r - 1 || j == r - 1 || k == r - 1;
                        let v = if boundary {
                            1.0
                        } else {
                            rng.gen_range(-1.0..1.0)
                        };
                        grid.set(i, j, k, v);
                    }
                }
            }
            let mesh = marching_cubes(&grid, 0.0);
            assert_eq!(
                mesh.watertight_violation(),
                None,
                "open edge in randomly signed grid"
            );
        }
    }

    #[test]
    fn box_surface_area_matches_analytic() {
        use crate::geometry::primitives::tessellated_box;
        use crate::geometry::sdf::sample_sdf_from_mesh;
        let (ex, ey, ez) = (0.4, 0.2, 0.6);
        let mesh = tessellated_box(ex, ey, ez, 4);
        let grid = sample_sdf_from_mesh(&mesh, 64, 0.1).unwrap();
        let out = marching_cubes(&grid, 0.0);
        let area = out.total_area();
        let analytic = 2.0 * (ex * ey + ey * ez + ex * ez);
        assert!(
            (area - analytic).abs() < 0.05 * analytic,
            "area {area} vs analytic {analytic}"
        );
    }
}
