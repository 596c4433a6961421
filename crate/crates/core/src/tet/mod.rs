//! Tetrahedral grids filling a closed shell, surface marking and conforming refinement.

mod build;
pub mod io;
mod subdivide;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

pub use build::{build_shell_grid, inside_by_scanline};
pub use subdivide::subdivide_surface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetGrid<T> {
    pub vertices: Vec<Vec3<T>>,
    pub tets: Vec<[u32; 4]>,
    /// Number of refinement passes applied so far.
    pub level: u32,
    /// Per tet: the SDF changes sign across its vertices.
    pub surface_mask: Vec<bool>,
}

pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

pub fn signed_volume<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>, d: Vec3<T>) -> T {
    (b - a).cross(c - a).dot(d - a) / T::lit(6.0)
}

impl<T: Real> TetGrid<T> {
    pub fn new(vertices: Vec<Vec3<T>>, tets: Vec<[u32; 4]>, level: u32) -> Self {
        let n = tets.len();
        Self { vertices, tets, level, surface_mask: vec![false; n] }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3<T>; 4] {
        self.tets[t].map(|i| self.vertices[i as usize])
    }

    pub fn tet_volume(&self, t: usize) -> T {
        let [a, b, c, d] = self.corners(t);
        signed_volume(a, b, c, d)
    }

    pub fn total_volume(&self) -> T {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn max_edge_length(&self, t: usize) -> T {
        let p = self.corners(t);
        TET_EDGES.iter().map(|&(i, j)| (p[i] - p[j]).norm()).fold(T::zero(), T::max)
    }

    pub fn min_edge_length(&self) -> T {
        let mut m = T::infinity();
        for t in 0..self.tets.len() {
            let p = self.corners(t);
            for &(i, j) in &TET_EDGES {
                m = m.min((p[i] - p[j]).norm());
            }
        }
        m
    }

    pub fn num_marked(&self) -> usize {
        self.surface_mask.iter().filter(|&&m| m).count()
    }

    /// Unique undirected edges as sorted `(min, max)` pairs.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = self
            .tets
            .iter()
            .flat_map(|t| TET_EDGES.iter().map(move |&(i, j)| (t[i].min(t[j]), t[i].max(t[j]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Sorted vertex triple of every face mapped to the tets that own it.
    pub fn face_map(&self) -> HashMap<[u32; 3], Vec<u32>> {
        let mut map: HashMap<[u32; 3], Vec<u32>> = HashMap::new();
        for (ti, t) in self.tets.iter().enumerate() {
            for f in &TET_FACES {
                let mut key = f.map(|i| t[i]);
                key.sort_unstable();
                map.entry(key).or_default().push(ti as u32);
            }
        }
        map
    }

    /// Every face is owned by one (boundary) or two (interior) tets, and no
    /// vertex lies strictly inside an edge of another tet.
    pub fn is_conforming(&self) -> bool {
        if self.face_map().values().any(|v| v.len() > 2) {
            return false;
        }
        // hanging vertices show up as midpoints of existing edges
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            index.insert(v.to_f64().map(f64::to_bits), i as u32);
        }
        for (a, b) in self.edges() {
            let m = (self.vertices[a as usize] + self.vertices[b as usize]) * T::half();
            if index.contains_key(&m.to_f64().map(f64::to_bits)) {
                return false;
            }
        }
        true
    }

    /// Point location by brute force; returns the first containing tet.
    pub fn locate(&self, p: Vec3<T>, eps: T) -> Option<usize> {
        (0..self.tets.len()).find(|&t| {
            let [a, b, c, d] = self.corners(t);
            let v = signed_volume(a, b, c, d);
            [
                signed_volume(p, b, c, d),
                signed_volume(a, p, c, d),
                signed_volume(a, b, p, d),
                signed_volume(a, b, c, p),
            ]
            .iter()
            .all(|&w| w >= -eps * v)
        })
    }
}

/// Set `surface_mask` to the tets whose four SDF values are not all one sign.
pub fn mark_surface_tets<T: Real>(mut grid: TetGrid<T>, sdf: &[T]) -> Result<TetGrid<T>> {
    if sdf.len() != grid.vertices.len() {
        return Err(Error::LengthMismatch { expected: grid.vertices.len(), actual: sdf.len() });
    }
    grid.surface_mask = grid
        .tets
        .iter()
        .map(|t| {
            let neg = t.iter().filter(|&&i| sdf[i as usize] < T::zero()).count();
            neg > 0 && neg < 4
        })
        .collect();
    Ok(grid)
}
