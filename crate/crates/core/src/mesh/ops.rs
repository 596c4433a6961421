use rand::Rng;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

/// Offset every vertex along its area-weighted normal. Normals are computed
/// once from the input mesh, so repeated calls do not compose exactly.
pub fn dilate<T: Real>(mesh: &TriMesh<T>, offset: T) -> Result<TriMesh<T>> {
    if !(offset >= T::zero()) {
        return Err(Error::Precondition(format!("dilation offset must be >= 0, got {offset}")));
    }
    if offset == T::zero() {
        return Ok(mesh.clone());
    }
    let normals = mesh.area_weighted_normals();
    let mut referenced = vec![false; mesh.vertices.len()];
    for f in &mesh.faces {
        for &i in f {
            referenced[i as usize] = true;
        }
    }
    let mut vertices = mesh.vertices.clone();
    for (i, v) in vertices.iter_mut().enumerate() {
        if !referenced[i] {
            continue;
        }
        let n = normals[i].ok_or(Error::DegenerateNormal(i))?;
        *v += n * offset;
    }
    Ok(TriMesh { vertices, faces: mesh.faces.clone(), vertex_normals: None })
}

/// `Σ_v ‖v − mean(one-ring(v))‖²`.
pub fn laplacian_energy<T: Real>(mesh: &TriMesh<T>) -> T {
    let nbrs = mesh.vertex_neighbors();
    umbrella_deltas(mesh, &nbrs).iter().map(|d| d.norm_squared()).sum()
}

fn umbrella_deltas<T: Real>(mesh: &TriMesh<T>, nbrs: &[Vec<u32>]) -> Vec<Vec3<T>> {
    mesh.vertices
        .iter()
        .zip(nbrs)
        .map(|(&v, n)| {
            if n.is_empty() {
                return Vec3::zero();
            }
            let mut mean = Vec3::zero();
            for &j in n {
                mean += mesh.vertices[j as usize];
            }
            v - mean / T::lit(n.len() as f64)
        })
        .collect()
}

/// Energy together with its exact gradient with respect to every vertex.
pub fn laplacian_energy_and_grad<T: Real>(mesh: &TriMesh<T>) -> (T, Vec<Vec3<T>>) {
    let nbrs = mesh.vertex_neighbors();
    let deltas = umbrella_deltas(mesh, &nbrs);
    let energy = deltas.iter().map(|d| d.norm_squared()).sum();
    let mut grad: Vec<Vec3<T>> = deltas.iter().map(|&d| d * T::two()).collect();
    for (w, n) in nbrs.iter().enumerate() {
        if n.is_empty() {
            continue;
        }
        let share = deltas[w] * (T::two() / T::lit(n.len() as f64));
        for &j in n {
            grad[j as usize] -= share;
        }
    }
    (energy, grad)
}

/// Area-weighted uniform samples on the surface, returned with their face index.
pub fn sample_surface<T: Real, R: Rng + ?Sized>(mesh: &TriMesh<T>, n: usize, rng: &mut R) -> Vec<(Vec3<T>, usize)> {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0f64;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f).as_f64();
        cdf.push(total);
    }
    if total <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let (u, v) = (T::lit(s * (1.0 - r2)), T::lit(s * r2));
            let [a, b, c] = mesh.triangle(f);
            (a + (b - a) * u + (c - a) * v, f)
        })
        .collect()
}
