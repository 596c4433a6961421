//! Differentiable marching tetrahedra over a [`TetGrid`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriMesh;
use crate::scalar::Real;
use crate::tet::TetGrid;

/// Values that are exactly zero are moved to this positive value so every
/// grid vertex has a strict sign.
pub const ZERO_NUDGE: f64 = 1e-10;

/// Where an output vertex came from: grid edge `(a, b)` with `a < b`, at
/// `(1 - t) * v_a + t * v_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCrossing<T> {
    pub a: u32,
    pub b: u32,
    pub t: T,
    pub s_a: T,
    pub s_b: T,
}

#[derive(Debug, Clone)]
pub struct MtOutput<T> {
    pub mesh: TriMesh<T>,
    pub provenance: Vec<EdgeCrossing<T>>,
    /// `[∂x/∂s_a, ∂x/∂s_b]` per output vertex.
    pub jacobian: Vec<[Vec3<T>; 2]>,
    pub grid_vertex_count: usize,
}

fn nudged<T: Real>(s: T) -> T {
    if s == T::zero() {
        T::lit(ZERO_NUDGE)
    } else {
        s
    }
}

pub fn marching_tet<T: Real>(grid: &TetGrid<T>, sdf: &[T]) -> Result<MtOutput<T>> {
    if sdf.len() != grid.vertices.len() {
        return Err(Error::LengthMismatch { expected: grid.vertices.len(), actual: sdf.len() });
    }
    let s: Vec<T> = sdf.iter().map(|&x| nudged(x)).collect();
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut provenance: Vec<EdgeCrossing<T>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let mut vertex_on = |a: u32, b: u32| -> u32 {
        let (a, b) = (a.min(b), a.max(b));
        *index.entry((a, b)).or_insert_with(|| {
            let (s_a, s_b) = (s[a as usize], s[b as usize]);
            provenance.push(EdgeCrossing { a, b, t: s_a / (s_a - s_b), s_a, s_b });
            (provenance.len() - 1) as u32
        })
    };

    for tet in &grid.tets {
        let neg: Vec<usize> = (0..4).filter(|&i| s[tet[i] as usize] < T::zero()).collect();
        let pos: Vec<usize> = (0..4).filter(|&i| s[tet[i] as usize] > T::zero()).collect();
        if neg.is_empty() || pos.is_empty() {
            continue;
        }
        let p = tet.map(|i| grid.vertices[i as usize]);
        let centroid = |ids: &[usize]| {
            ids.iter().fold(Vec3::zero(), |acc, &i| acc + p[i]) / T::lit(ids.len() as f64)
        };
        let outward = centroid(&pos) - centroid(&neg);
        let mid = |i: usize, j: usize| (p[i] + p[j]) * T::half();

        // edges crossed, ordered as a cycle around the cut polygon
        let cycle: Vec<(usize, usize)> = match (neg.len(), pos.len()) {
            (1, 3) => pos.iter().map(|&o| (neg[0], o)).collect(),
            (3, 1) => neg.iter().map(|&o| (o, pos[0])).collect(),
            (2, 2) => {
                let (i, j, k, l) = (neg[0], neg[1], pos[0], pos[1]);
                vec![(i, k), (i, l), (j, l), (j, k)]
            }
            _ => unreachable!(),
        };
        let n = (mid(cycle[1].0, cycle[1].1) - mid(cycle[0].0, cycle[0].1))
            .cross(mid(cycle[2].0, cycle[2].1) - mid(cycle[0].0, cycle[0].1));
        let mut verts: Vec<(u32, (u32, u32))> = cycle
            .iter()
            .map(|&(i, j)| (vertex_on(tet[i], tet[j]), (tet[i].min(tet[j]), tet[i].max(tet[j]))))
            .collect();
        if n.dot(outward) < T::zero() {
            verts.reverse();
        }
        if verts.len() == 3 {
            faces.push([verts[0].0, verts[1].0, verts[2].0]);
        } else {
            // split from the corner whose source edge key is smallest
            let m = (0..4).min_by_key(|&k| verts[k].1).unwrap();
            let q = |k: usize| verts[(m + k) % 4].0;
            faces.push([q(0), q(1), q(2)]);
            faces.push([q(0), q(2), q(3)]);
        }
    }

    let mut vertices = Vec::with_capacity(provenance.len());
    let mut jacobian = Vec::with_capacity(provenance.len());
    for c in &provenance {
        let (va, vb) = (grid.vertices[c.a as usize], grid.vertices[c.b as usize]);
        vertices.push(va.lerp(vb, c.t));
        let denom = (c.s_a - c.s_b) * (c.s_a - c.s_b);
        let e = vb - va;
        jacobian.push([e * (-c.s_b / denom), e * (c.s_a / denom)]);
    }
    Ok(MtOutput {
        mesh: TriMesh { vertices, faces, vertex_normals: None },
        provenance,
        jacobian,
        grid_vertex_count: grid.vertices.len(),
    })
}

/// Gradient w.r.t. the grid SDF values given `∂L/∂x` for every output vertex.
pub fn mt_backward<T: Real>(out: &MtOutput<T>, upstream: &[Vec3<T>]) -> Result<Vec<T>> {
    if upstream.len() != out.provenance.len() {
        return Err(Error::LengthMismatch { expected: out.provenance.len(), actual: upstream.len() });
    }
    let mut grad = vec![T::zero(); out.grid_vertex_count];
    for ((c, j), u) in out.provenance.iter().zip(&out.jacobian).zip(upstream) {
        grad[c.a as usize] += j[0].dot(*u);
        grad[c.b as usize] += j[1].dot(*u);
    }
    Ok(grad)
}

/// Forward linearisation: output vertex displacement for an SDF perturbation.
pub fn mt_jvp<T: Real>(out: &MtOutput<T>, delta: &[T]) -> Vec<Vec3<T>> {
    out.provenance
        .iter()
        .zip(&out.jacobian)
        .map(|(c, j)| j[0] * delta[c.a as usize] + j[1] * delta[c.b as usize])
        .collect()
}

/// Edges of the grid whose endpoints carry opposite signs, after the zero nudge.
pub fn count_sign_changes<T: Real>(grid: &TetGrid<T>, sdf: &[T]) -> usize {
    grid.edges()
        .iter()
        .filter(|&&(a, b)| (nudged(sdf[a as usize]) < T::zero()) != (nudged(sdf[b as usize]) < T::zero()))
        .count()
}
