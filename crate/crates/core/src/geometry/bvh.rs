//! Median-split BVH over mesh triangles.
//!
//! Built for exactness, not build speed: traversal must return the same
//! nearest hit as exhaustive iteration over every triangle.

use super::mesh::TriMesh;
use super::Ray;
use crate::brdf::MaterialParams;
use crate::math::Vec3;

/// Minimum hit distance; avoids re-hitting the surface a ray starts on.
pub const RAY_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Aabb {
        Aabb {
            min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.min = self.min.min_by_component(p);
        self.max = self.max.max_by_component(p);
    }

    fn union(&mut self, o: &Aabb) {
        self.min = self.min.min_by_component(o.min);
        self.max = self.max.max_by_component(o.max);
    }

    fn longest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test against [t_min, t_max]; conservative for zero direction
    /// components (inf arithmetic handles them).
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> bool {
        let mut t0 = RAY_EPSILON;
        let mut t1 = t_max;
        for axis in 0..3 {
            let inv = inv_dir[axis];
            let lo = (self.min[axis] - origin[axis]) * inv;
            let hi = (self.max[axis] - origin[axis]) * inv;
            let (near, far) = if inv >= 0.0 { (lo, hi) } else { (hi, lo) };
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

struct Node {
    aabb: Aabb,
    /// Leaf: index of first triangle; internal: index of left child (right
    /// child is `index + 1` in `nodes`... not guaranteed by median build, so
    /// store explicitly).
    left: u32,
    right: u32,
    first: u32,
    count: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Ray-mesh intersection record.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub position: Vec3,
    /// Interpolated shading normal, flipped toward the incoming ray.
    pub normal: Vec3,
    pub triangle: usize,
}

impl Hit {
    pub fn material(&self, mesh: &TriMesh) -> MaterialParams {
        *mesh.material_of(self.triangle)
    }
}

/// Bounding volume hierarchy. Leaves hold up to 4 triangles; interior nodes
/// split at the median of triangle centroids along the longest axis.
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle indices into the mesh, permuted during the build.
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let n = mesh.triangle_count();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vec3> = mesh
            .triangles
            .iter()
            .map(|t| {
                (mesh.vertices[t[0] as usize]
                    + mesh.vertices[t[1] as usize]
                    + mesh.vertices[t[2] as usize])
                    / 3.0
            })
            .collect();
        let boxes: Vec<Aabb> = mesh
            .triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(mesh.vertices[i as usize]);
                }
                b
            })
            .collect();

        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&mut nodes, &mut order, 0, n, &centroids, &boxes);
        } else {
            nodes.push(Node { aabb: Aabb::empty(), left: 0, right: 0, first: 0, count: 0 });
        }
        Bvh { nodes, order }
    }

    /// Nearest intersection with `t` in `(RAY_EPSILON, t_max)`.
    pub fn intersect(&self, mesh: &TriMesh, ray: &Ray, t_max: f64) -> Option<Hit> {
        if self.order.is_empty() {
            return None;
        }
        let inv_dir = Vec3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut best: Option<(f64, f64, f64, usize)> = None; // (t, u, v, tri)
        let mut closest = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !node.aabb.hit(ray.origin, inv_dir, closest) {
                continue;
            }
            if node.is_leaf() {
                for k in node.first..node.first + node.count {
                    let tri = self.order[k as usize] as usize;
                    if let Some((t, u, v)) = intersect_triangle(mesh, tri, ray, closest) {
                        closest = t;
                        best = Some((t, u, v, tri));
                    }
                }
            } else {
                stack[sp] = node.left;
                sp += 1;
                stack[sp] = node.right;
                sp += 1;
            }
        }
        best.map(|(t, u, v, tri)| make_hit(mesh, tri, ray, t, u, v))
    }

    /// Any intersection closer than `t_max` (occlusion query).
    pub fn occluded(&self, mesh: &TriMesh, ray: &Ray, t_max: f64) -> bool {
        if self.order.is_empty() {
            return false;
        }
        let inv_dir = Vec3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !node.aabb.hit(ray.origin, inv_dir, t_max) {
                continue;
            }
            if node.is_leaf() {
                for k in node.first..node.first + node.count {
                    let tri = self.order[k as usize] as usize;
                    if intersect_triangle(mesh, tri, ray, t_max).is_some() {
                        return true;
                    }
                }
            } else {
                stack[sp] = node.left;
                sp += 1;
                stack[sp] = node.right;
                sp += 1;
            }
        }
        false
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    first: usize,
    count: usize,
    centroids: &[Vec3],
    boxes: &[Aabb],
) -> u32 {
    let mut aabb = Aabb::empty();
    let mut centroid_box = Aabb::empty();
    for &tri in &order[first..first + count] {
        aabb.union(&boxes[tri as usize]);
        centroid_box.grow(centroids[tri as usize]);
    }
    let index = nodes.len() as u32;
    nodes.push(Node { aabb, left: 0, right: 0, first: first as u32, count: count as u32 });

    let extent = centroid_box.max - centroid_box.min;
    let degenerate = extent.x <= 0.0 && extent.y <= 0.0 && extent.z <= 0.0;
    if count <= LEAF_SIZE || degenerate {
        return index;
    }

    let axis = centroid_box.longest_axis();
    let mid = first + count / 2;
    order[first..first + count].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
    });

    let left = build_node(nodes, order, first, mid - first, centroids, boxes);
    let right = build_node(nodes, order, mid, first + count - mid, centroids, boxes);
    nodes[index as usize].left = left;
    nodes[index as usize].right = right;
    nodes[index as usize].count = 0;
    index
}

/// Moller-Trumbore; returns `(t, u, v)` with barycentrics of the hit.
fn intersect_triangle(mesh: &TriMesh, tri: usize, ray: &Ray, t_max: f64) -> Option<(f64, f64, f64)> {
    let idx = mesh.triangles[tri];
    let a = mesh.vertices[idx[0] as usize];
    let b = mesh.vertices[idx[1] as usize];
    let c = mesh.vertices[idx[2] as usize];
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.direction.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-16 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = ray.direction.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t <= RAY_EPSILON || t >= t_max {
        return None;
    }
    Some((t, u, v))
}

fn make_hit(mesh: &TriMesh, tri: usize, ray: &Ray, t: f64, u: f64, v: f64) -> Hit {
    let idx = mesh.triangles[tri];
    let n0 = mesh.normals[idx[0] as usize];
    let n1 = mesh.normals[idx[1] as usize];
    let n2 = mesh.normals[idx[2] as usize];
    let mut normal = (n0 * (1.0 - u - v) + n1 * u + n2 * v).normalized_or(Vec3::Z);
    if normal.dot(ray.direction) > 0.0 {
        normal = -normal;
    }
    Hit { t, position: ray.at(t), normal, triangle: tri }
}

/// Exhaustive nearest hit over all triangles; the traversal oracle.
#[cfg(test)]
pub fn brute_force_hit(mesh: &TriMesh, ray: &Ray, t_max: f64) -> Option<Hit> {
    let mut best: Option<(f64, f64, f64, usize)> = None;
    let mut closest = t_max;
    for tri in 0..mesh.triangle_count() {
        if let Some((t, u, v)) = intersect_triangle(mesh, tri, ray, closest) {
            closest = t;
            best = Some((t, u, v, tri));
        }
    }
    best.map(|(t, u, v, tri)| make_hit(mesh, tri, ray, t, u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::{icosphere, quad};
    use crate::math::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_mesh() -> TriMesh {
        TriMesh::with_material(icosphere(Vec3::ZERO, 1.0, 3), MaterialParams::default()).unwrap()
    }

    #[test]
    fn ray_from_center_hits_sphere_along_z() {
        let mesh = sphere_mesh();
        let bvh = Bvh::build(&mesh);
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        let hit = bvh.intersect(&mesh, &ray, f64::INFINITY).unwrap();
        // Icosphere subdiv-3 approximates the unit sphere to ~1e-2.
        assert!((hit.t - 1.0).abs() < 2e-2, "t = {}", hit.t);
        // Surface normal is +-Z here; the flip rule orients it back toward
        // the ray origin, so from inside the sphere it faces -Z.
        assert!((hit.normal + Vec3::Z).norm() < 0.1);
        assert!(hit.normal.dot(ray.direction) < 0.0);
    }

    #[test]
    fn ray_from_outside_keeps_outward_normal() {
        let mesh = sphere_mesh();
        let bvh = Bvh::build(&mesh);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 2.0), -Vec3::Z);
        let hit = bvh.intersect(&mesh, &ray, f64::INFINITY).unwrap();
        assert!((hit.t - 1.0).abs() < 2e-2, "t = {}", hit.t);
        assert!((hit.normal - Vec3::Z).norm() < 0.1);
    }

    #[test]
    fn miss_outside_bounding_box() {
        let mesh = sphere_mesh();
        let bvh = Bvh::build(&mesh);
        let ray = Ray::new(Vec3::new(5.0, 0.0, 0.0), Vec3::Z);
        assert!(bvh.intersect(&mesh, &ray, f64::INFINITY).is_none());
    }

    #[test]
    fn self_hit_epsilon_respected() {
        let mesh = TriMesh::with_material(quad(Vec3::ZERO, Vec3::X, Vec3::Y), MaterialParams::default())
            .unwrap();
        let bvh = Bvh::build(&mesh);
        // Ray starting on the quad surface pointing away must not hit.
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        assert!(bvh.intersect(&mesh, &ray, f64::INFINITY).is_none());
    }

    #[test]
    fn traversal_matches_brute_force() {
        let meshes = [
            sphere_mesh(),
            TriMesh::with_material(quad(Vec3::new(0.0, 2.0, 0.0), Vec3::X, Vec3::Z), MaterialParams::default()).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for mesh in &meshes {
            let bvh = Bvh::build(mesh);
            for _ in 0..2000 {
                let origin = Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                );
                let dir = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized_or(Vec3::Z);
                let ray = Ray::new(origin, dir);
                let a = bvh.intersect(mesh, &ray, f64::INFINITY);
                let b = brute_force_hit(mesh, &ray, f64::INFINITY);
                match (a, b) {
                    (None, None) => {}
                    (Some(x), Some(y)) => {
                        assert_eq!(x.triangle, y.triangle);
                        assert_eq!(x.t, y.t);
                    }
                    (x, y) => panic!("mismatch: {x:?} vs {y:?}"),
                }
                assert_eq!(bvh.occluded(mesh, &ray, f64::INFINITY), b.is_some());
            }
        }
    }
}
