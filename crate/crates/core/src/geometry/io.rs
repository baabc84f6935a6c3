//! OBJ (geometry only) and PLY (with per-vertex uchar RGB) import/export.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::mesh::TriMesh;
use crate::geometry::vec3::Vec3;

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut v = [0.0f64; 3];
                for slot in v.iter_mut() {
                    *slot = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| {
                            Error::format(path, format!("bad vertex on line {}", lineno + 1))
                        })?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        head.parse::<u32>().map(|i| i - 1).map_err(|_| {
                            Error::format(path, format!("bad face on line {}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::format(
                        path,
                        format!("face with fewer than 3 vertices on line {}", lineno + 1),
                    ));
                }
                // fan triangulation for polygons
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = TriMesh { vertices, faces, colors: None };
    mesh.validate()?;
    Ok(mesh)
}

/// Binary little-endian PLY with float positions and, when the mesh has
/// colors, uchar RGB (rounded from [0,1]).
pub fn save_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let has_colors = mesh.colors.is_some();
    buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    buf.extend_from_slice(format!("element vertex {}\n", mesh.vertices.len()).as_bytes());
    buf.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    if has_colors {
        buf.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    buf.extend_from_slice(format!("element face {}\n", mesh.faces.len()).as_bytes());
    buf.extend_from_slice(b"property list uchar uint vertex_indices\nend_header\n");

    for (i, v) in mesh.vertices.iter().enumerate() {
        for k in 0..3 {
            buf.extend_from_slice(&(v[k] as f32).to_le_bytes());
        }
        if let Some(cols) = &mesh.colors {
            for ch in 0..3 {
                buf.push((cols[i][ch] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    for f in &mesh.faces {
        buf.push(3u8);
        for &vi in f {
            buf.extend_from_slice(&vi.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<TriMesh> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        match name {
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            "uchar" | "uint8" => Some(Scalar::U8),
            "int" | "int32" => Some(Scalar::I32),
            "uint" | "uint32" => Some(Scalar::U32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            _ => 4,
        }
    }
}

fn parse_ply(bytes: &[u8], path: &Path) -> Result<TriMesh> {
    let header_end = find_header_end(bytes)
        .ok_or_else(|| Error::format(path, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "non-utf8 header"))?;

    let mut format = None;
    let mut vertex_count = 0usize;
    let mut face_count = 0usize;
    // (name, type) per vertex property, in order
    let mut vertex_props: Vec<(String, Scalar)> = Vec::new();
    let mut face_index_type = Scalar::I32;
    let mut face_count_type = Scalar::U8;
    let mut current = "";

    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, _] => {
                return Err(Error::format(path, format!("unsupported format {other}")))
            }
            ["element", "vertex", n] => {
                vertex_count = n.parse().map_err(|_| Error::format(path, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                face_count = n.parse().map_err(|_| Error::format(path, "bad face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", cnt, idx, _name] if current == "face" => {
                face_count_type = Scalar::parse(cnt)
                    .ok_or_else(|| Error::format(path, format!("bad list count type {cnt}")))?;
                face_index_type = Scalar::parse(idx)
                    .ok_or_else(|| Error::format(path, format!("bad list index type {idx}")))?;
            }
            ["property", ty, name] if current == "vertex" => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::format(path, format!("unsupported type {ty}")))?;
                vertex_props.push((name.to_string(), scalar));
            }
            _ => {}
        }
    }
    let format = format.ok_or_else(|| Error::format(path, "missing format line"))?;

    let find = |n: &str| vertex_props.iter().position(|(name, _)| name == n);
    let (px, py, pz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::format(path, "vertex element lacks x/y/z")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let body = &bytes[header_end..];
    let mut vertices = Vec::with_capacity(vertex_count);
    let mut colors: Option<Vec<[f64; 3]>> = rgb.map(|_| Vec::with_capacity(vertex_count));
    let mut faces = Vec::with_capacity(face_count);

    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::format(path, "non-utf8 ascii body"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for _ in 0..vertex_count {
                let line = lines.next().ok_or_else(|| Error::format(path, "missing vertex row"))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(path, "bad vertex row"))?;
                if vals.len() < vertex_props.len() {
                    return Err(Error::format(path, "short vertex row"));
                }
                vertices.push([vals[px], vals[py], vals[pz]]);
                if let (Some(cols), Some((r, g, b))) = (&mut colors, rgb) {
                    cols.push(decode_rgb(vals[r], vals[g], vals[b], vertex_props[r].1));
                }
            }
            for _ in 0..face_count {
                let line = lines.next().ok_or_else(|| Error::format(path, "missing face row"))?;
                let vals: Vec<u32> = line
                    .split_whitespace()
                    .map(|t| t.parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(path, "bad face row"))?;
                push_face(&vals[1..], vals[0] as usize, &mut faces, path)?;
            }
        }
        PlyFormat::BinaryLe => {
            let mut off = 0usize;
            let read_scalar = |off: &mut usize, ty: Scalar| -> Result<f64> {
                let size = ty.size();
                if *off + size > body.len() {
                    return Err(Error::format(path, "truncated body"));
                }
                let s = &body[*off..*off + size];
                *off += size;
                Ok(match ty {
                    Scalar::F32 => f32::from_le_bytes(s.try_into().unwrap()) as f64,
                    Scalar::F64 => {
                        // f64 occupies 8 bytes; handled separately below
                        unreachable!("f64 handled in read_scalar64")
                    }
                    Scalar::U8 => s[0] as f64,
                    Scalar::I32 => i32::from_le_bytes(s.try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(s.try_into().unwrap()) as f64,
                })
            };
            let read_any = |off: &mut usize, ty: Scalar| -> Result<f64> {
                if ty == Scalar::F64 {
                    if *off + 8 > body.len() {
                        return Err(Error::format(path, "truncated body"));
                    }
                    let v = f64::from_le_bytes(body[*off..*off + 8].try_into().unwrap());
                    *off += 8;
                    Ok(v)
                } else {
                    read_scalar(off, ty)
                }
            };
            for _ in 0..vertex_count {
                let mut vals = Vec::with_capacity(vertex_props.len());
                for (_, ty) in &vertex_props {
                    vals.push(read_any(&mut off, *ty)?);
                }
                vertices.push([vals[px], vals[py], vals[pz]]);
                if let (Some(cols), Some((r, g, b))) = (&mut colors, rgb) {
                    cols.push(decode_rgb(vals[r], vals[g], vals[b], vertex_props[r].1));
                }
            }
            for _ in 0..face_count {
                let count = read_any(&mut off, face_count_type)? as usize;
                let mut idx = Vec::with_capacity(count);
                for _ in 0..count {
                    idx.push(read_any(&mut off, face_index_type)? as u32);
                }
                push_face(&idx, count, &mut faces, path)?;
            }
        }
    }

    let mesh = TriMesh { vertices, faces, colors };
    mesh.validate()?;
    Ok(mesh)
}

fn decode_rgb(r: f64, g: f64, b: f64, ty: Scalar) -> [f64; 3] {
    match ty {
        Scalar::U8 => [r / 255.0, g / 255.0, b / 255.0],
        _ => [r, g, b],
    }
}

fn push_face(idx: &[u32], count: usize, faces: &mut Vec<[u32; 3]>, path: &Path) -> Result<()> {
    if idx.len() < count || count < 3 {
        return Err(Error::format(path, "bad face list"));
    }
    for i in 1..count - 1 {
        faces.push([idx[0], idx[i], idx[i + 1]]);
    }
    Ok(())
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let pos = bytes.windows(needle.len()).position(|w| w == needle)?;
    // skip to after the newline terminating the end_header line
    let rest = &bytes[pos..];
    let nl = rest.iter().position(|&b| b == b'\n')?;
    Some(pos + nl + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    #[test]
    fn obj_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = icosphere(0.5, 1);
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ply_roundtrip_with_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mut mesh = icosphere(0.5, 1);
        let n = mesh.vertices.len();
        mesh.colors = Some(
            (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    [t, 1.0 - t, 0.5]
                })
                .collect(),
        );
        save_ply(&mesh, &path).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        let cols = back.colors.unwrap();
        for (a, b) in cols.iter().zip(mesh.colors.as_ref().unwrap()) {
            for ch in 0..3 {
                // u8 quantization error bound
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }

    #[test]
    fn ascii_ply_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n";
        std::fs::write(&path, text).unwrap();
        let mesh = load_ply(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
        let cols = mesh.colors.unwrap();
        assert!((cols[0][0] - 1.0).abs() < 1e-12);
        assert!((cols[1][1] - 1.0).abs() < 1e-12);
    }
}
