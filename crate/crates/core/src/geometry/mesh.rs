//! Triangle meshes, OBJ loading, and procedural fixtures.

use crate::brdf::MaterialParams;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

/// Raw mesh geometry prior to material binding and cleanup.
#[derive(Clone, Debug, Default)]
pub struct MeshData {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-triangle index into `material_names`.
    pub tri_material: Vec<u16>,
    pub material_names: Vec<String>,
}

/// Triangle mesh with per-vertex normals and per-triangle materials.
///
/// Immutable after construction; all ray queries are pure functions.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub tri_material: Vec<u16>,
    pub materials: Vec<MaterialParams>,
    pub material_names: Vec<String>,
    /// Zero-area triangles dropped during construction.
    pub degenerate_dropped: usize,
}

impl TriMesh {
    /// Build a mesh, dropping degenerate triangles and synthesizing
    /// area-weighted vertex normals when `data.normals` is empty.
    pub fn build(data: MeshData, materials: Vec<MaterialParams>) -> Result<TriMesh> {
        let nv = data.vertices.len() as u32;
        for t in &data.triangles {
            if t.iter().any(|&i| i >= nv) {
                return Err(Error::invalid(format!("triangle index {t:?} out of range ({nv} vertices)")));
            }
        }
        let mut material_names = data.material_names;
        if material_names.is_empty() {
            material_names.push("default".to_string());
        }
        let mut materials = materials;
        if materials.is_empty() {
            materials.resize(material_names.len(), MaterialParams::default());
        }
        if materials.len() != material_names.len() {
            return Err(Error::invalid("materials and material_names length mismatch"));
        }

        let mut triangles = Vec::with_capacity(data.triangles.len());
        let mut tri_material = Vec::with_capacity(data.triangles.len());
        let mut dropped = 0usize;
        for (i, t) in data.triangles.iter().enumerate() {
            let area2 = triangle_area2(&data.vertices, *t);
            if area2 <= 1e-24 {
                dropped += 1;
                continue;
            }
            triangles.push(*t);
            tri_material.push(*data.tri_material.get(i).unwrap_or(&0));
        }

        let normals = if data.normals.is_empty() {
            area_weighted_normals(&data.vertices, &triangles)
        } else {
            if data.normals.len() != data.vertices.len() {
                return Err(Error::invalid("per-vertex normal count does not match vertex count"));
            }
            data.normals.iter().map(|n| n.normalized_or(Vec3::Z)).collect()
        };

        Ok(TriMesh {
            vertices: data.vertices,
            normals,
            triangles,
            tri_material,
            materials,
            material_names,
            degenerate_dropped: dropped,
        })
    }

    pub fn with_material(data: MeshData, material: MaterialParams) -> Result<TriMesh> {
        let n = data.material_names.len().max(1);
        TriMesh::build(data, vec![material; n])
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn material_of(&self, tri: usize) -> &MaterialParams {
        &self.materials[self.tri_material[tri] as usize]
    }

    /// Apply a yaw rotation about +z followed by a translation.
    pub fn posed(&self, translation: Vec3, yaw_radians: f64) -> TriMesh {
        let rot = Mat3::rotation_z(yaw_radians);
        let mut out = self.clone();
        out.vertices = self.vertices.iter().map(|&v| rot * v + translation).collect();
        out.normals = self.normals.iter().map(|&n| rot * n).collect();
        out
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for v in &self.vertices {
            lo = lo.min_by_component(*v);
            hi = hi.max_by_component(*v);
        }
        (lo, hi)
    }
}

fn triangle_area2(vertices: &[Vec3], t: [u32; 3]) -> f64 {
    let a = vertices[t[0] as usize];
    let b = vertices[t[1] as usize];
    let c = vertices[t[2] as usize];
    (b - a).cross(c - a).dot((b - a).cross(c - a))
}

fn area_weighted_normals(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; vertices.len()];
    for t in triangles {
        let a = vertices[t[0] as usize];
        let b = vertices[t[1] as usize];
        let c = vertices[t[2] as usize];
        // Cross product length is twice the area; no normalization so large
        // faces weigh more.
        let n = (b - a).cross(c - a);
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter().map(|n| n.normalized_or(Vec3::Z)).collect()
}

/// Parse a Wavefront OBJ from a reader. Supports v / vn / f (with v, v//vn
/// and v/vt/vn forms, negative indices, fan triangulation) and usemtl.
pub fn parse_obj(reader: impl BufRead, path: &str) -> Result<MeshData> {
    let mut data = MeshData::default();
    let mut name_index: HashMap<String, u16> = HashMap::new();
    let mut current_material: u16 = 0;
    let ensure_default = |data: &mut MeshData, name_index: &mut HashMap<String, u16>| {
        if data.material_names.is_empty() {
            data.material_names.push("default".to_string());
            name_index.insert("default".to_string(), 0);
        }
    };

    let mut offset = 0u64;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_len = line.len() as u64 + 1;
        let malformed = |reason: String| Error::Malformed {
            format: "OBJ",
            path: path.to_string(),
            offset,
            reason: format!("line {}: {}", lineno + 1, reason),
        };
        let trimmed = line.split('#').next().unwrap_or("").trim();
        if trimmed.is_empty() {
            offset += line_len;
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap();
        match tag {
            "v" | "vn" => {
                let mut comp = [0.0f64; 3];
                for c in comp.iter_mut() {
                    *c = parts
                        .next()
                        .ok_or_else(|| malformed(format!("{tag} needs 3 components")))?
                        .parse()
                        .map_err(|e| malformed(format!("bad float: {e}")))?;
                }
                let v = Vec3::new(comp[0], comp[1], comp[2]);
                if tag == "v" {
                    data.vertices.push(v);
                } else {
                    data.normals.push(v);
                }
            }
            "f" => {
                ensure_default(&mut data, &mut name_index);
                let mut idx = Vec::with_capacity(4);
                for vert in parts {
                    let vi_str = vert.split('/').next().unwrap();
                    let vi: i64 = vi_str
                        .parse()
                        .map_err(|e| malformed(format!("bad face index {vi_str:?}: {e}")))?;
                    let n = data.vertices.len() as i64;
                    let resolved = if vi > 0 { vi - 1 } else { n + vi };
                    if resolved < 0 || resolved >= n {
                        return Err(malformed(format!("face index {vi} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(malformed("face with fewer than 3 vertices".to_string()));
                }
                for k in 1..idx.len() - 1 {
                    data.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    data.tri_material.push(current_material);
                }
            }
            "usemtl" => {
                let name = parts.next().unwrap_or("default").to_string();
                current_material = *name_index.entry(name.clone()).or_insert_with(|| {
                    data.material_names.push(name);
                    (data.material_names.len() - 1) as u16
                });
            }
            // vt, o, g, s, mtllib and anything else: ignored.
            _ => {}
        }
        offset += line_len;
    }
    // OBJ vn indices are per-face-corner; we only keep them when they map
    // 1:1 onto vertices, otherwise normals are recomputed at build time.
    if data.normals.len() != data.vertices.len() {
        data.normals.clear();
    }
    Ok(data)
}

pub fn load_obj(path: &Path) -> Result<MeshData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_obj(std::io::BufReader::new(file), &path.display().to_string())
}

/// Icosphere fixture: unit-sphere subdivision scaled by `radius`, analytic
/// normals.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> MeshData {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5).normalized();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }

    let normals = vertices.clone();
    let vertices: Vec<Vec3> = vertices.into_iter().map(|v| center + v * radius).collect();
    let tri_material = vec![0u16; faces.len()];
    MeshData {
        vertices,
        normals,
        triangles: faces,
        tri_material,
        material_names: vec!["default".to_string()],
    }
}

/// Axis-aligned rectangle fixture in the plane spanned by `u` and `v`,
/// centered at `center`, two triangles.
pub fn quad(center: Vec3, u: Vec3, v: Vec3) -> MeshData {
    let n = u.cross(v).normalized();
    let vertices = vec![
        center - u - v,
        center + u - v,
        center + u + v,
        center - u + v,
    ];
    MeshData {
        vertices,
        normals: vec![n; 4],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        tri_material: vec![0, 0],
        material_names: vec!["default".to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_basic_obj_with_materials() {
        let src = "\
# comment
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
vn 0 0 1
vn 0 0 1
vn 0 0 1
vn 0 0 1
usemtl body
f 1//1 2//2 3//3
usemtl glass
f 1 2 4
";
        let data = parse_obj(Cursor::new(src), "test.obj").unwrap();
        assert_eq!(data.vertices.len(), 4);
        assert_eq!(data.triangles.len(), 2);
        assert_eq!(data.material_names, vec!["body", "glass"]);
        assert_eq!(data.tri_material, vec![0, 1]);
    }

    #[test]
    fn negative_indices_and_quads() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n";
        let data = parse_obj(Cursor::new(src), "quad.obj").unwrap();
        assert_eq!(data.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn bad_face_index_reports_line() {
        let src = "v 0 0 0\nf 1 2 3\n";
        let err = parse_obj(Cursor::new(src), "bad.obj").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn degenerate_triangles_dropped() {
        let data = MeshData {
            vertices: vec![Vec3::ZERO, Vec3::X, Vec3::Y],
            normals: vec![],
            triangles: vec![[0, 1, 2], [0, 0, 1], [1, 1, 1]],
            tri_material: vec![0, 0, 0],
            material_names: vec![],
        };
        let mesh = TriMesh::build(data, vec![]).unwrap();
        assert_eq!(mesh.triangle_count(), 1);
        assert_eq!(mesh.degenerate_dropped, 2);
    }

    #[test]
    fn synthesized_normals_face_outward_on_quad() {
        let mut data = quad(Vec3::ZERO, Vec3::X, Vec3::Y);
        data.normals.clear();
        let mesh = TriMesh::build(data, vec![]).unwrap();
        for n in &mesh.normals {
            assert!((n.dot(Vec3::Z) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn icosphere_vertices_on_sphere() {
        let m = icosphere(Vec3::new(1.0, 2.0, 3.0), 0.5, 2);
        for (v, n) in m.vertices.iter().zip(&m.normals) {
            let r = (*v - Vec3::new(1.0, 2.0, 3.0)).norm();
            assert!((r - 0.5).abs() < 1e-12);
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.triangles.len(), 20 * 16);
    }

    #[test]
    fn posed_mesh_rotates_normals() {
        let mesh = TriMesh::with_material(quad(Vec3::ZERO, Vec3::X, Vec3::Z), MaterialParams::default())
            .unwrap();
        let posed = mesh.posed(Vec3::new(0.0, 5.0, 0.0), std::f64::consts::FRAC_PI_2);
        // Quad normal -y rotates to +x under a 90 degree yaw.
        assert!((posed.normals[0].x.abs() - 1.0).abs() < 1e-12);
    }
}
