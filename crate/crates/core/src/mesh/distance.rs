//! Exact point-to-surface distance (AABB tree) and winding-number inside tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TriMesh;
use crate::geom::Vec3;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedDistanceSample<T> {
    pub point: Vec3<T>,
    /// Negative inside the surface.
    pub distance: T,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle<T: Real>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Vec3<T> {
    let zero = T::zero();
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Debug, Clone)]
struct Node<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
    /// Leaf when `count > 0`: faces `order[start..start + count]`.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding-volume hierarchy over the faces of a mesh, for closest-point queries.
#[derive(Debug, Clone)]
pub struct Bvh<'m, T> {
    mesh: &'m TriMesh<T>,
    nodes: Vec<Node<T>>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl<'m, T: Real> Bvh<'m, T> {
    pub fn new(mesh: &'m TriMesh<T>) -> Self {
        let mut order: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let centroids: Vec<Vec3<T>> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / T::lit(3.0)
            })
            .collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build(mesh, &centroids, &mut order, 0, mesh.faces.len(), &mut nodes);
        }
        Self { mesh, nodes, order }
    }

    /// Closest surface point: `(squared distance, face, point)`.
    pub fn closest(&self, p: Vec3<T>) -> Option<(T, usize, Vec3<T>)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (T::infinity(), usize::MAX, p);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if box_dist2(p, node.lo, node.hi) > best.0 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.triangle(f as usize);
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d2 = (q - p).norm_squared();
                    // ties resolved toward the lowest face index
                    if d2 < best.0 || (d2 == best.0 && (f as usize) < best.1) {
                        best = (d2, f as usize, q);
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = box_dist2(p, self.nodes[l as usize].lo, self.nodes[l as usize].hi);
                let dr = box_dist2(p, self.nodes[r as usize].lo, self.nodes[r as usize].hi);
                // visit the nearer child first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }

    pub fn distance(&self, p: Vec3<T>) -> T {
        self.closest(p).map(|(d2, _, _)| d2.sqrt()).unwrap_or_else(T::infinity)
    }
}

fn box_dist2<T: Real>(p: Vec3<T>, lo: Vec3<T>, hi: Vec3<T>) -> T {
    let mut d = T::zero();
    for k in 0..3 {
        let e = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            T::zero()
        };
        d += e * e;
    }
    d
}

fn build<T: Real>(
    mesh: &TriMesh<T>,
    centroids: &[Vec3<T>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let slice = &mut order[start..end];
    let mut lo = Vec3::splat(T::infinity());
    let mut hi = Vec3::splat(T::neg_infinity());
    let mut clo = lo;
    let mut chi = hi;
    for &f in slice.iter() {
        for v in mesh.triangle(f as usize) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        clo = clo.min(centroids[f as usize]);
        chi = chi.max(centroids[f as usize]);
    }
    let idx = nodes.len() as u32;
    nodes.push(Node { lo, hi, start: start as u32, count: 0, left: 0, right: 0 });
    let n = end - start;
    if n <= LEAF_SIZE {
        nodes[idx as usize].count = n as u32;
        return idx;
    }
    let ext = chi - clo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    slice.sort_unstable_by(|&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = start + n / 2;
    let left = build(mesh, centroids, order, start, mid, nodes);
    let right = build(mesh, centroids, order, mid, end, nodes);
    let node = &mut nodes[idx as usize];
    node.left = left;
    node.right = right;
    idx
}

/// Generalized winding number of the surface around `p` (≈1 inside a closed
/// outward-oriented surface, ≈0 outside).
pub fn winding_number<T: Real>(mesh: &TriMesh<T>, p: Vec3<T>) -> T {
    let mut total = T::zero();
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let det = a.dot(b.cross(c));
        let denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += det.atan2(denom);
    }
    // each term is half the signed solid angle
    total * T::two() / (T::lit(4.0) * T::PI())
}

#[derive(Debug, Clone)]
pub struct SignedDistanceReport<T> {
    pub samples: Vec<SignedDistanceSample<T>>,
    /// False when the mesh is open and signs came from the normal-direction fallback.
    pub watertight: bool,
}

/// Exact unsigned distance with the sign taken from the generalized winding
/// number (`> 0.5` means inside). Open meshes fall back to the side of the
/// closest face and log a warning.
pub fn signed_distance<T: Real>(mesh: &TriMesh<T>, points: &[Vec3<T>]) -> Vec<SignedDistanceSample<T>> {
    let report = signed_distance_report(mesh, points);
    if !report.watertight {
        log::warn!("signed_distance: mesh is not watertight; signs use the closest-face normal");
    }
    report.samples
}

pub fn signed_distance_report<T: Real>(mesh: &TriMesh<T>, points: &[Vec3<T>]) -> SignedDistanceReport<T> {
    let watertight = mesh.is_watertight();
    let bvh = Bvh::new(mesh);
    let samples = points
        .par_iter()
        .map(|&p| {
            let Some((d2, face, q)) = bvh.closest(p) else {
                return SignedDistanceSample { point: p, distance: T::infinity() };
            };
            let d = d2.sqrt();
            if d == T::zero() {
                return SignedDistanceSample { point: p, distance: T::zero() };
            }
            let inside = if watertight {
                winding_number(mesh, p) > T::half()
            } else {
                (p - q).dot(mesh.face_cross(face)) < T::zero()
            };
            SignedDistanceSample { point: p, distance: if inside { -d } else { d } }
        })
        .collect();
    SignedDistanceReport { samples, watertight }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};

    fn brute_distance(mesh: &TriMesh<f64>, p: Vec3<f64>) -> f64 {
        (0..mesh.num_faces())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (closest_point_on_triangle(p, a, b, c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn sphere_center_and_outside() {
        let m = icosphere::<f64>(4, 1.0);
        let s = signed_distance(&m, &[Vec3::zero(), Vec3::new(2.0, 0.0, 0.0)]);
        assert!((s[0].distance + 1.0).abs() < 5e-3, "{}", s[0].distance);
        assert!((s[1].distance - 1.0).abs() < 1e-9, "{}", s[1].distance);
    }

    #[test]
    fn vertex_query_is_exactly_zero() {
        let m = icosphere::<f64>(2, 1.0);
        let s = signed_distance(&m, &[m.vertices[7]]);
        assert_eq!(s[0].distance, 0.0);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let m = icosphere::<f64>(2, 0.8).map_vertices(|v| Vec3::new(v.x * 1.3, v.y, v.z * 0.6));
        let bvh = Bvh::new(&m);
        for i in 0..200 {
            let t = i as f64;
            let p = Vec3::new((t * 0.7).sin(), (t * 1.3).cos(), (t * 0.31).sin() * 1.5);
            assert_eq!(bvh.distance(p), brute_distance(&m, p));
        }
    }

    #[test]
    fn winding_number_inside_outside() {
        let m = box_mesh::<f64>(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        assert!((winding_number(&m, Vec3::new(0.2, -0.3, 0.5)) - 1.0).abs() < 1e-9);
        assert!(winding_number(&m, Vec3::new(3.0, 0.0, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn sign_flips_across_surface_along_ray() {
        let m = icosphere::<f64>(3, 0.5);
        let dir = Vec3::new(0.3, 0.5, -0.8).normalize();
        let pts: Vec<_> = (0..40).map(|i| dir * (i as f64 * 0.025)).collect();
        let s = signed_distance(&m, &pts);
        let flips = s.windows(2).filter(|w| (w[0].distance < 0.0) != (w[1].distance < 0.0)).count();
        assert_eq!(flips, 1);
        assert!(s[0].distance < 0.0 && s[39].distance > 0.0);
    }

    #[test]
    fn open_mesh_uses_normal_fallback() {
        let mut m = box_mesh(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        m.faces.truncate(10);
        let r = signed_distance_report(&m, &[Vec3::new(0.0, 0.0, 0.9), Vec3::new(0.0, 0.0, 1.5)]);
        assert!(!r.watertight);
        assert!(r.samples[0].distance < 0.0);
        assert!(r.samples[1].distance > 0.0);
    }
}
