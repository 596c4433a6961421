//! Indexed triangle meshes and the surface operators built on them.

mod decimate;
mod distance;
pub mod io;
mod ops;
mod primitives;


use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

pub use decimate::{decimate, hausdorff_distance, DecimateOptions};
pub use distance::{
    closest_point_on_triangle, signed_distance, signed_distance_report, winding_number, Bvh,
    SignedDistanceReport, SignedDistanceSample,
};
pub use io::{load_mesh, save_mesh, PlyFormat};
pub use ops::{dilate, laplacian_energy, laplacian_energy_and_grad, sample_surface};
pub use primitives::{box_mesh, icosphere, plane_grid};

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    /// Area-weighted unit vertex normals, filled by [`TriMesh::with_normals`].
    pub vertex_normals: Option<Vec<Vec3<T>>>,
}

impl<T: Real> Default for TriMesh<T> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<T: Real> TriMesh<T> {
    pub fn empty() -> Self {
        Self { vertices: Vec::new(), faces: Vec::new(), vertex_normals: None }
    }

    /// Build a mesh, checking index range and face degeneracy.
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces, vertex_normals: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::Topology(format!(
                        "face {fi} references vertex {i} but mesh has {n} vertices"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} repeats a vertex index: {f:?}")));
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != n {
                return Err(Error::LengthMismatch { expected: n, actual: normals.len() });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal `(b-a)×(c-a)`; its length is twice the area.
    #[inline]
    pub fn face_cross(&self, f: usize) -> Vec3<T> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, f: usize) -> T {
        self.face_cross(f).norm() * T::half()
    }

    pub fn surface_area(&self) -> T {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    pub fn bbox_diagonal(&self) -> T {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or_else(T::zero)
    }

    /// Area-weighted vertex normals; zero-area faces contribute nothing.
    /// Entry `i` is `None` when the umbrella around vertex `i` has zero area.
    pub fn area_weighted_normals(&self) -> Vec<Option<Vec3<T>>> {
        let mut acc = vec![Vec3::zero(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = self.face_cross(fi);
            if c.norm_squared() == T::zero() {
                continue;
            }
            for &i in f {
                acc[i as usize] += c;
            }
        }
        acc.into_iter().map(Vec3::try_normalize).collect()
    }

    /// Copy of the mesh with `vertex_normals` filled in. Vertices without a
    /// well-defined normal get the zero vector.
    pub fn with_normals(mut self) -> Self {
        let normals = self.area_weighted_normals().into_iter().map(|n| n.unwrap_or_else(Vec3::zero)).collect();
        self.vertex_normals = Some(normals);
        self
    }

    pub fn normals(&self) -> Vec<Vec3<T>> {
        match &self.vertex_normals {
            Some(n) => n.clone(),
            None => self.area_weighted_normals().into_iter().map(|n| n.unwrap_or_else(Vec3::zero)).collect(),
        }
    }

    /// Undirected edges `(min, max)` mapped to their incident faces, in sorted order.
    pub fn edge_faces(&self) -> Vec<((u32, u32), Vec<u32>)> {
        let mut half: Vec<(u64, u32)> = Vec::with_capacity(3 * self.faces.len());
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                half.push((((a.min(b) as u64) << 32) | a.max(b) as u64, fi as u32));
            }
        }
        half.sort_unstable();
        let mut edges: Vec<((u32, u32), Vec<u32>)> = Vec::new();
        for (key, f) in half {
            let e = ((key >> 32) as u32, key as u32);
            match edges.last_mut() {
                Some((last, faces)) if *last == e => faces.push(f),
                _ => edges.push((e, vec![f])),
            }
        }
        edges
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_faces().iter().all(|(_, fs)| fs.len() == 2)
    }

    /// `V - E + F` over the vertices referenced by at least one face.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_faces().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Sorted, deduplicated one-ring neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a as usize].push(b);
                nbrs[b as usize].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Drop vertices that no face references, keeping relative order.
    pub fn compact(&self) -> Self {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = vertices.len() as u32;
                vertices.push(self.vertices[i]);
            }
        }
        let faces = self
            .faces
            .iter()
            .map(|f| [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]])
            .collect();
        Self { vertices, faces, vertex_normals: None }
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            vertex_normals: None,
        }
    }

    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            vertex_normals: self.vertex_normals.as_ref().map(|n| n.iter().map(|v| v.cast()).collect()),
        }
    }
}
