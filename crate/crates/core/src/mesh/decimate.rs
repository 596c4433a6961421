//! Quadric-error-metric edge-collapse decimation (Garland–Heckbert).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::{Bvh, TriMesh};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct DecimateOptions {
    /// Boundary edges are preserved with penalty planes of this weight.
    pub boundary_weight: f64,
}

impl Default for DecimateOptions {
    fn default() -> Self {
        Self { boundary_weight: 1e3 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3<f64>, d: f64, w: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Self([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d].map(|x| x * w))
    }

    fn add(&mut self, o: &Self) {
        for (a, b) in self.0.iter_mut().zip(o.0) {
            *a += b;
        }
    }

    fn sum(a: &Self, b: &Self) -> Self {
        let mut q = *a;
        q.add(b);
        q
    }

    fn eval(&self, p: Vec3<f64>) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x + q[4] * y * y + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    fn minimizer(&self) -> Option<Vec3<f64>> {
        let q = &self.0;
        let a = Mat3::from_rows(Vec3::new(q[0], q[1], q[2]), Vec3::new(q[1], q[4], q[5]), Vec3::new(q[2], q[5], q[7]));
        // reject near-singular systems relative to the matrix scale
        let scale = q[0].abs().max(q[4].abs()).max(q[7].abs());
        if scale == 0.0 || a.det().abs() < 1e-12 * scale * scale * scale {
            return None;
        }
        let inv = a.inverse()?;
        let p = inv.mul_vec(Vec3::new(-q[3], -q[6], -q[8]));
        p.is_finite().then_some(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct State {
    pos: Vec<Vec3<f64>>,
    quadric: Vec<Quadric>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<u32>>,
    vert_alive: Vec<bool>,
    version: Vec<u32>,
}

impl State {
    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self.vert_faces[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn edge_faces(&self, u: u32, v: u32) -> Vec<u32> {
        self.vert_faces[u as usize].iter().copied().filter(|&f| self.faces[f as usize].contains(&v)).collect()
    }

    fn candidate(&self, u: u32, v: u32) -> (f64, Vec3<f64>) {
        let q = Quadric::sum(&self.quadric[u as usize], &self.quadric[v as usize]);
        let (pu, pv) = (self.pos[u as usize], self.pos[v as usize]);
        let mut best = (q.eval(pu), pu);
        for p in q.minimizer().into_iter().chain([pv, (pu + pv) * 0.5]) {
            let c = q.eval(p);
            if c < best.0 {
                best = (c, p);
            }
        }
        (best.0.max(0.0), best.1)
    }

    /// Link condition plus a no-flip check on the surviving faces.
    fn collapse_ok(&self, u: u32, v: u32, target: Vec3<f64>) -> bool {
        let shared = self.edge_faces(u, v);
        let nu = self.neighbors(u);
        let nv = self.neighbors(v);
        let common = nu.iter().filter(|w| nv.binary_search(w).is_ok()).count();
        if common != shared.len() {
            return false;
        }
        for &w in [u, v].iter() {
            for &f in &self.vert_faces[w as usize] {
                if shared.contains(&f) {
                    continue;
                }
                let tri = self.faces[f as usize];
                let p = tri.map(|i| self.pos[i as usize]);
                let before = (p[1] - p[0]).cross(p[2] - p[0]);
                let moved = tri.map(|i| if i == u || i == v { target } else { self.pos[i as usize] });
                let after = (moved[1] - moved[0]).cross(moved[2] - moved[0]);
                if after.dot(before) <= 0.0 || after.norm_squared() <= 1e-30 {
                    return false;
                }
            }
        }
        true
    }
}

/// Collapse edges by increasing quadric error until the face count reaches
/// `ceil((1 - reduce_fraction) * faces)`. Ties are broken by the lower
/// `(min, max)` vertex pair, so the result is deterministic.
pub fn decimate<T: Real>(mesh: &TriMesh<T>, reduce_fraction: f64, opts: &DecimateOptions) -> Result<TriMesh<T>> {
    if !(reduce_fraction > 0.0 && reduce_fraction < 1.0) {
        return Err(Error::Precondition(format!("reduce_fraction must lie in (0, 1), got {reduce_fraction}")));
    }
    let nf = mesh.faces.len();
    let target = nf - ((reduce_fraction * nf as f64) + 1e-9).floor() as usize;

    let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let e = (f[k], f[(k + 1) % 3]);
            let c = directed.entry(e).or_insert(0);
            *c += 1;
            if *c > 1 {
                return Err(Error::NonManifoldInput(format!("directed edge {e:?} used by more than one face")));
            }
        }
    }
    let edge_list = mesh.edge_faces();
    if let Some((e, fs)) = edge_list.iter().find(|(_, fs)| fs.len() > 2) {
        return Err(Error::NonManifoldInput(format!("edge {e:?} shared by {} faces", fs.len())));
    }

    let pos: Vec<Vec3<f64>> = mesh.vertices.iter().map(|v| v.cast()).collect();
    let mut quadric = vec![Quadric::default(); pos.len()];
    let mut vert_faces = vec![Vec::new(); pos.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = f.map(|i| pos[i as usize]);
        let n = (p[1] - p[0]).cross(p[2] - p[0]);
        if let Some(n) = n.try_normalize() {
            let q = Quadric::plane(n, -n.dot(p[0]), 1.0);
            for &i in f {
                quadric[i as usize].add(&q);
            }
        }
        for &i in f {
            vert_faces[i as usize].push(fi as u32);
        }
    }
    for ((a, b), fs) in &edge_list {
        if fs.len() != 1 {
            continue;
        }
        let f = mesh.faces[fs[0] as usize].map(|i| pos[i as usize]);
        let fnrm = (f[1] - f[0]).cross(f[2] - f[0]);
        let (pa, pb) = (pos[*a as usize], pos[*b as usize]);
        if let Some(n) = (pb - pa).cross(fnrm).try_normalize() {
            let q = Quadric::plane(n, -n.dot(pa), opts.boundary_weight);
            quadric[*a as usize].add(&q);
            quadric[*b as usize].add(&q);
        }
    }

    let mut st = State {
        pos,
        quadric,
        faces: mesh.faces.clone(),
        face_alive: vec![true; nf],
        vert_faces,
        vert_alive: vec![true; mesh.vertices.len()],
        version: vec![0; mesh.vertices.len()],
    };

    type Entry = Reverse<(Cost, u32, u32, u32, u32)>;
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let push = |st: &State, heap: &mut BinaryHeap<Entry>, a: u32, b: u32| {
        let (u, v) = (a.min(b), a.max(b));
        let (c, _) = st.candidate(u, v);
        heap.push(Reverse((Cost(c), u, v, st.version[u as usize], st.version[v as usize])));
    };
    for ((a, b), _) in &edge_list {
        push(&st, &mut heap, *a, *b);
    }

    let mut alive_faces = nf;
    while alive_faces > target {
        let Some(Reverse((_, u, v, vu, vv))) = heap.pop() else { break };
        if !st.vert_alive[u as usize] || !st.vert_alive[v as usize] {
            continue;
        }
        if st.version[u as usize] != vu || st.version[v as usize] != vv {
            continue;
        }
        let shared = st.edge_faces(u, v);
        if shared.is_empty() {
            continue;
        }
        let (_, target_pos) = st.candidate(u, v);
        if !st.collapse_ok(u, v, target_pos) {
            continue;
        }
        for &f in &shared {
            st.face_alive[f as usize] = false;
            alive_faces -= 1;
            for &w in &st.faces[f as usize] {
                st.vert_faces[w as usize].retain(|&g| g != f);
            }
        }
        let moved = std::mem::take(&mut st.vert_faces[v as usize]);
        for &f in &moved {
            for w in st.faces[f as usize].iter_mut() {
                if *w == v {
                    *w = u;
                }
            }
        }
        st.vert_faces[u as usize].extend(moved);
        st.vert_faces[u as usize].sort_unstable();
        st.vert_alive[v as usize] = false;
        st.pos[u as usize] = target_pos;
        let qv = st.quadric[v as usize];
        st.quadric[u as usize].add(&qv);
        st.version[u as usize] += 1;
        for w in st.neighbors(u) {
            st.version[w as usize] += 1;
        }
        for w in st.neighbors(u) {
            push(&st, &mut heap, u, w);
            for x in st.neighbors(w) {
                if x != u {
                    push(&st, &mut heap, w, x);
                }
            }
        }
    }

    let faces: Vec<[u32; 3]> =
        st.faces.iter().zip(&st.face_alive).filter(|(_, &a)| a).map(|(f, _)| *f).collect();
    let out = TriMesh { vertices: st.pos.iter().map(|p| p.cast()).collect(), faces, vertex_normals: None };
    Ok(out.compact())
}

/// Symmetric Hausdorff distance estimated on vertices, face centroids and
/// interior barycentric samples of both meshes.
pub fn hausdorff_distance<T: Real>(a: &TriMesh<T>, b: &TriMesh<T>) -> T {
    fn one_sided<T: Real>(from: &TriMesh<T>, to: &TriMesh<T>) -> T {
        let bvh = Bvh::new(to);
        let bary = [(1.0 / 3.0, 1.0 / 3.0), (0.6, 0.2), (0.2, 0.6), (0.2, 0.2), (0.5, 0.5), (0.5, 0.0), (0.0, 0.5)];
        let mut worst = T::zero();
        for v in &from.vertices {
            worst = worst.max(bvh.distance(*v));
        }
        for f in 0..from.num_faces() {
            let [p, q, r] = from.triangle(f);
            for &(s, t) in &bary {
                let x = p + (q - p) * T::lit(s) + (r - p) * T::lit(t);
                worst = worst.max(bvh.distance(x));
            }
        }
        worst
    }
    one_sided(a, b).max(one_sided(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn icosphere_to_ten_percent_stays_genus_zero() {
        let m = icosphere::<f64>(3, 1.0);
        assert_eq!(m.num_faces(), 1280);
        let d = decimate(&m, 0.9, &DecimateOptions::default()).unwrap();
        assert!(d.num_faces() <= 128, "{} faces", d.num_faces());
        assert!(d.is_watertight());
        assert_eq!(d.euler_characteristic(), 2);
        let tol = 0.02 * m.bbox_diagonal();
        let h = hausdorff_distance(&m, &d);
        assert!(h < tol, "hausdorff {h} > {tol}");
    }

    #[test]
    fn rejects_out_of_range_fraction() {
        let m = icosphere::<f64>(1, 1.0);
        for r in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(decimate(&m, r, &DecimateOptions::default()), Err(Error::Precondition(_))));
        }
    }

    #[test]
    fn rejects_non_manifold_edge() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 4, 1]]).unwrap();
        assert!(matches!(decimate(&m, 0.5, &DecimateOptions::default()), Err(Error::NonManifoldInput(_))));
    }

    #[test]
    fn deterministic() {
        let m = icosphere::<f64>(2, 1.0);
        let a = decimate(&m, 0.5, &DecimateOptions::default()).unwrap();
        let b = decimate(&m, 0.5, &DecimateOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
