//! Indexed triangle meshes with exact closest-point and signed-distance
//! queries.
//!
//! Signs come from angle-weighted pseudonormals, so queries whose closest
//! feature is an edge or a vertex still classify inside/outside correctly.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::spatial::Vec3;

const MIN_TRIANGLE_AREA: f64 = 1e-12;
const LEAF_SIZE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {0} references a missing vertex")]
    BadIndex(usize),
    #[error("triangle {index} is degenerate (area {area:e} m²)")]
    Degenerate { index: usize, area: f64 },
    #[error("mesh is not watertight: edge ({0}, {1}) is not shared by exactly two triangles")]
    NotWatertight(u32, u32),
    #[error("mesh normals point inward (signed volume {0:e})")]
    Inverted(f64),
    #[error("malformed STL: {0}")]
    Stl(String),
    #[error("invalid phantom: {0}")]
    Phantom(String),
}

/// Which part of a triangle a closest point landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Local edge index: 0 = ab, 1 = bc, 2 = ca.
    Edge(u8),
    Vertex(u8),
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    /// Outward (pseudo)normal at `point`.
    pub normal: Vec3,
    /// Negative inside the mesh.
    pub signed_distance: f64,
    pub triangle: usize,
}

/// Closest point on triangle `abc` to `p`, with the feature it lies on.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, len: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    fn build(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Self {
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(&vertices[i as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        Self::build_node(&mut nodes, &mut order, 0, triangles.len(), &boxes, &centroids);
        Self { nodes, order }
    }

    fn build_node(
        nodes: &mut Vec<Node>,
        order: &mut [u32],
        start: usize,
        end: usize,
        boxes: &[Aabb],
        centroids: &[Vec3],
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &i in &order[start..end] {
            bounds.merge(&boxes[i as usize]);
            cb.grow(&centroids[i as usize]);
        }
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                bounds,
                start,
                len: end - start,
            });
            return idx;
        }
        let extent = cb.max - cb.min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        nodes.push(Node::Leaf {
            bounds,
            start: 0,
            len: 0,
        });
        let left = Self::build_node(nodes, order, start, mid, boxes, centroids);
        let right = Self::build_node(nodes, order, mid, end, boxes, centroids);
        nodes[idx] = Node::Inner {
            bounds,
            left,
            right,
        };
        idx
    }
}

/// Closed, consistently oriented triangle mesh.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    edge_normals: Vec<[Vec3; 3]>,
    vertex_normals: Vec<Vec3>,
    bvh: Bvh,
}

impl TriangleMesh {
    /// Validates watertightness, orientation and triangle quality.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut normals = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= vertices.len()) {
                return Err(MeshError::BadIndex(i));
            }
            let [a, b, c] = t.map(|v| vertices[v as usize]);
            let n = (b - a).cross(&(c - a));
            let area = 0.5 * n.norm();
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(MeshError::Degenerate { index: i, area });
            }
            normals.push(n.normalize());
        }

        // every directed edge once, and its reverse exactly once
        let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(triangles.len() * 3);
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let e = (t[k], t[(k + 1) % 3]);
                if directed.insert(e, ti).is_some() {
                    return Err(MeshError::NotWatertight(e.0, e.1));
                }
            }
        }
        let mut edge_normals = vec![[Vec3::zeros(); 3]; triangles.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                let Some(&other) = directed.get(&(v, u)) else {
                    return Err(MeshError::NotWatertight(u, v));
                };
                edge_normals[ti][k] = (normals[ti] + normals[other]).normalize();
            }
        }

        let mut vertex_normals = vec![Vec3::zeros(); vertices.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let p = vertices[t[k] as usize];
                let e1 = (vertices[t[(k + 1) % 3] as usize] - p).normalize();
                let e2 = (vertices[t[(k + 2) % 3] as usize] - p).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_normals[t[k] as usize] += normals[ti] * angle;
            }
        }
        for n in vertex_normals.iter_mut() {
            if n.norm() > 0.0 {
                *n = n.normalize();
            }
        }

        let bvh = Bvh::build(&vertices, &triangles);
        let mesh = Self {
            vertices,
            triangles,
            normals,
            edge_normals,
            vertex_normals,
            bvh,
        };
        let vol = mesh.signed_volume();
        if !(vol > 0.0) {
            return Err(MeshError::Inverted(vol));
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|v| self.vertices[v as usize])
    }

    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| self.vertices[v as usize]);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    fn feature_normal(&self, tri: usize, feature: Feature) -> Vec3 {
        match feature {
            Feature::Face => self.normals[tri],
            Feature::Edge(k) => self.edge_normals[tri][k as usize],
            Feature::Vertex(k) => self.vertex_normals[self.triangles[tri][k as usize] as usize],
        }
    }

    fn query_triangle(&self, tri: usize, p: &Vec3) -> (Vec3, Feature, f64) {
        let [a, b, c] = self.triangle(tri);
        let (q, f) = closest_point_on_triangle(p, &a, &b, &c);
        (q, f, (p - q).norm_squared())
    }

    /// Nearest surface point, its outward normal and the signed distance.
    pub fn closest_point(&self, p: &Vec3) -> SurfacePoint {
        let mut best_d2 = f64::INFINITY;
        let mut best = (Vec3::zeros(), Feature::Face, 0usize);
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.bvh.nodes[ni];
            if node.bounds().distance_sq(p) > best_d2 {
                continue;
            }
            match node {
                Node::Leaf { start, len, .. } => {
                    for &t in &self.bvh.order[*start..start + len] {
                        let (q, f, d2) = self.query_triangle(t as usize, p);
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = (q, f, t as usize);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.bvh.nodes[*left].bounds().distance_sq(p);
                    let dr = self.bvh.nodes[*right].bounds().distance_sq(p);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        let (point, feature, tri) = best;
        let normal = self.feature_normal(tri, feature);
        let dist = best_d2.sqrt();
        let signed_distance = if dist == 0.0 {
            0.0
        } else if (p - point).dot(&normal) < 0.0 {
            -dist
        } else {
            dist
        };
        SurfacePoint {
            point,
            normal,
            signed_distance,
            triangle: tri,
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.closest_point(p).signed_distance
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// Axis-aligned box, 12 triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Result<Self, MeshError> {
        Self::heightfield_box(min.x, max.x, min.y, max.y, min.z, 1, 1, |_, _| max.z)
    }

    /// UV sphere with `n_lon` meridians and `n_lat` latitude bands;
    /// `2·n_lon·(n_lat − 1)` triangles.
    pub fn uv_sphere(center: Vec3, radius: f64, n_lon: usize, n_lat: usize) -> Result<Self, MeshError> {
        assert!(n_lon >= 3 && n_lat >= 2);
        let mut vertices = vec![center + Vec3::new(0.0, 0.0, radius)];
        for i in 1..n_lat {
            let theta = std::f64::consts::PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                let phi = std::f64::consts::TAU * j as f64 / n_lon as f64;
                vertices.push(
                    center
                        + radius * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                );
            }
        }
        let south = vertices.len() as u32;
        vertices.push(center - Vec3::new(0.0, 0.0, radius));
        let ring = |i: usize, j: usize| (1 + (i - 1) * n_lon + (j % n_lon)) as u32;
        let mut triangles = Vec::new();
        for j in 0..n_lon {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                let (a, b, c, d) = (ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        for j in 0..n_lon {
            triangles.push([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
        }
        Self::new(vertices, triangles)
    }

    /// Closed box whose top face is the height field `top(x, y)` sampled on
    /// an `nx × ny` grid. The bottom is a fan around its center.
    #[allow(clippy::too_many_arguments)]
    pub fn heightfield_box(
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        z_bottom: f64,
        nx: usize,
        ny: usize,
        top: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, MeshError> {
        assert!(nx >= 1 && ny >= 1);
        let xs: Vec<f64> = (0..=nx).map(|i| x0 + (x1 - x0) * i as f64 / nx as f64).collect();
        let ys: Vec<f64> = (0..=ny).map(|j| y0 + (y1 - y0) * j as f64 / ny as f64).collect();
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + 2 * (nx + ny) + 1);
        for &y in &ys {
            for &x in &xs {
                vertices.push(Vec3::new(x, y, top(x, y)));
            }
        }
        let t = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut triangles = Vec::with_capacity(2 * nx * ny + 6 * (nx + ny));
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([t(i, j), t(i + 1, j), t(i + 1, j + 1)]);
                triangles.push([t(i, j), t(i + 1, j + 1), t(i, j + 1)]);
            }
        }

        // bottom ring, counter-clockwise seen from above
        let mut ring: Vec<(usize, usize)> = Vec::new();
        ring.extend((0..nx).map(|i| (i, 0)));
        ring.extend((0..ny).map(|j| (nx, j)));
        ring.extend((1..=nx).rev().map(|i| (i, ny)));
        ring.extend((1..=ny).rev().map(|j| (0, j)));
        let mut bottom_index = HashMap::new();
        for &(i, j) in &ring {
            bottom_index.insert((i, j), vertices.len() as u32);
            vertices.push(Vec3::new(xs[i], ys[j], z_bottom));
        }
        if ring.len() == 4 {
            let q: Vec<u32> = ring.iter().map(|k| bottom_index[k]).collect();
            triangles.push([q[0], q[2], q[1]]);
            triangles.push([q[0], q[3], q[2]]);
        } else {
            let center = vertices.len() as u32;
            vertices.push(Vec3::new(0.5 * (x0 + x1), 0.5 * (y0 + y1), z_bottom));
            for k in 0..ring.len() {
                let a = bottom_index[&ring[k]];
                let b = bottom_index[&ring[(k + 1) % ring.len()]];
                triangles.push([center, b, a]);
            }
        }
        // side walls follow the same ring
        for k in 0..ring.len() {
            let (ia, ja) = ring[k];
            let (ib, jb) = ring[(k + 1) % ring.len()];
            let (ba, bb) = (bottom_index[&(ia, ja)], bottom_index[&(ib, jb)]);
            let (ta, tb) = (t(ia, ja), t(ib, jb));
            triangles.push([ba, bb, tb]);
            triangles.push([ba, tb, ta]);
        }
        Self::new(vertices, triangles)
    }

    /// ASCII STL text.
    pub fn to_ascii_stl(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "solid {name}");
        for (i, _) in self.triangles.iter().enumerate() {
            let n = self.normals[i];
            let _ = writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
            let _ = writeln!(s, "    outer loop");
            for v in self.triangle(i) {
                let _ = writeln!(s, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z);
            }
            let _ = writeln!(s, "    endloop");
            let _ = writeln!(s, "  endfacet");
        }
        let _ = writeln!(s, "endsolid {name}");
        s
    }

    /// Parses ASCII STL, welding vertices with identical coordinates.
    pub fn from_ascii_stl(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        let mut triangles = Vec::new();
        let mut current: Vec<u32> = Vec::with_capacity(3);
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("vertex") => {
                    let mut v = [0.0; 3];
                    for c in v.iter_mut() {
                        *c = it
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| MeshError::Stl(format!("bad vertex on line {}", ln + 1)))?;
                    }
                    let key = v.map(f64::to_bits);
                    let id = *index.entry(key).or_insert_with(|| {
                        vertices.push(Vec3::new(v[0], v[1], v[2]));
                        (vertices.len() - 1) as u32
                    });
                    current.push(id);
                }
                Some("endfacet") => {
                    if current.len() != 3 {
                        return Err(MeshError::Stl(format!("facet ending on line {} is not a triangle", ln + 1)));
                    }
                    triangles.push([current[0], current[1], current[2]]);
                    current.clear();
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_valid() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3)).unwrap();
        assert_eq!(m.triangles().len(), 12);
        assert!((m.signed_volume() - 0.006).abs() < 1e-15);
    }

    #[test]
    fn rejects_open_and_inverted_meshes() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let mut tris = m.triangles().to_vec();
        tris.pop();
        assert!(matches!(
            TriangleMesh::new(m.vertices().to_vec(), tris),
            Err(MeshError::NotWatertight(..))
        ));
        let flipped: Vec<[u32; 3]> = m.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
        assert!(matches!(
            TriangleMesh::new(m.vertices().to_vec(), flipped),
            Err(MeshError::Inverted(_))
        ));
    }

    #[test]
    fn rejects_degenerate_triangle() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            TriangleMesh::new(v, vec![[0, 1, 2]]),
            Err(MeshError::Degenerate { .. })
        ));
    }

    #[test]
    fn plane_query_above_top_face() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.15, 0.1, 0.06)).unwrap();
        let s = m.closest_point(&Vec3::new(0.07, 0.04, 0.07));
        assert!((s.signed_distance - 0.010).abs() < 1e-12);
        assert!((s.normal - Vec3::z()).norm() < 1e-12);
        let inside = m.closest_point(&Vec3::new(0.07, 0.04, 0.058));
        assert!((inside.signed_distance + 0.002).abs() < 1e-12);
    }

    #[test]
    fn vertex_query_is_zero() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.15, 0.1, 0.06)).unwrap();
        for v in m.vertices() {
            assert_eq!(m.closest_point(v).signed_distance, 0.0);
        }
    }

    #[test]
    fn sphere_sign_and_distance() {
        let m = TriangleMesh::uv_sphere(Vec3::zeros(), 0.05, 25, 11).unwrap();
        assert_eq!(m.triangles().len(), 500);
        assert!(m.contains(&Vec3::zeros()));
        assert!(!m.contains(&Vec3::new(0.0, 0.0, 0.06)));
        // edges and poles of the faceted sphere
        for p in [Vec3::new(0.0, 0.0, 0.049), Vec3::new(0.0, 0.0, 0.051), Vec3::new(0.03, 0.03, 0.0)] {
            let s = m.closest_point(&p);
            assert!(((p - s.point).norm() - s.signed_distance.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn stl_round_trip() {
        let m = TriangleMesh::heightfield_box(0.0, 0.1, 0.0, 0.05, 0.0, 6, 3, |x, y| 0.03 + 0.002 * (x * 40.0).sin() * y)
            .unwrap();
        let text = m.to_ascii_stl("phantom");
        let back = TriangleMesh::from_ascii_stl(&text).unwrap();
        assert_eq!(back.triangles().len(), m.triangles().len());
        for i in 0..m.triangles().len() {
            for (a, b) in m.triangle(i).iter().zip(back.triangle(i).iter()) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn stl_rejects_garbage() {
        assert!(TriangleMesh::from_ascii_stl("solid x\nvertex 1 2\nendsolid").is_err());
        assert!(matches!(TriangleMesh::from_ascii_stl("solid x\nendsolid"), Err(MeshError::Empty)));
    }
}
