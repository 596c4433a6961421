use rayon::prelude::*;

use super::{signed_volume, TetGrid};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Bvh, TriMesh};
use crate::scalar::Real;

fn orient2d(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Inside test for every point of the regular lattice `xs × ys × zs` (x
/// fastest) by counting signed crossings of +x rays with a closed surface.
/// Shared edges use a fixed tie rule evaluated once per undirected edge, so
/// rays through edges and vertices are counted exactly once.
pub fn inside_by_scanline<T: Real>(mesh: &TriMesh<T>, xs: &[f64], ys: &[f64], zs: &[f64]) -> Vec<bool> {
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
    let mut crossings: Vec<Vec<(f64, i32)>> = vec![Vec::new(); ny * nz];
    let pos: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| v.to_f64()).collect();
    let yz = |i: u32| [pos[i as usize][1], pos[i as usize][2]];
    let range = |sorted: &[f64], lo: f64, hi: f64| {
        let a = sorted.partition_point(|&v| v < lo);
        let b = sorted.partition_point(|&v| v <= hi);
        a..b
    };
    for f in &mesh.faces {
        let area2 = orient2d(yz(f[0]), yz(f[1]), yz(f[2]));
        if area2 == 0.0 {
            continue;
        }
        let sign = if area2 > 0.0 { 1 } else { -1 };
        let tri = if area2 > 0.0 { *f } else { [f[0], f[2], f[1]] };
        let p = tri.map(yz);
        let lo = [p[0][0].min(p[1][0]).min(p[2][0]), p[0][1].min(p[1][1]).min(p[2][1])];
        let hi = [p[0][0].max(p[1][0]).max(p[2][0]), p[0][1].max(p[1][1]).max(p[2][1])];
        for k in range(zs, lo[1], hi[1]) {
            for j in range(ys, lo[0], hi[0]) {
                let q = [ys[j], zs[k]];
                let mut w = [0.0; 3];
                let mut hit = true;
                for e in 0..3 {
                    let (i0, i1) = (tri[e], tri[(e + 1) % 3]);
                    // canonical evaluation so both owners of an edge agree bit for bit
                    let wc = orient2d(yz(i0.min(i1)), yz(i0.max(i1)), q);
                    let we = if i0 < i1 { wc } else { -wc };
                    let d = [yz(i1)[0] - yz(i0)[0], yz(i1)[1] - yz(i0)[1]];
                    let ok = we > 0.0 || (we == 0.0 && (d[1] > 0.0 || (d[1] == 0.0 && d[0] < 0.0)));
                    if !ok {
                        hit = false;
                        break;
                    }
                    w[e] = we;
                }
                if !hit {
                    continue;
                }
                // w[e] weights the vertex opposite edge e
                let total = w[0] + w[1] + w[2];
                let x = if total > 0.0 {
                    (w[1] * pos[tri[0] as usize][0] + w[2] * pos[tri[1] as usize][0] + w[0] * pos[tri[2] as usize][0])
                        / total
                } else {
                    pos[tri[0] as usize][0]
                };
                crossings[k * ny + j].push((x, sign));
            }
        }
    }
    let mut out = vec![false; nx * ny * nz];
    for (line, cr) in crossings.iter_mut().enumerate() {
        if cr.is_empty() {
            continue;
        }
        cr.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut c = cr.len();
        let mut winding: i32 = cr.iter().map(|c| c.1).sum();
        for (i, &x) in xs.iter().enumerate() {
            while c > 0 && cr[cr.len() - c].0 <= x {
                winding -= cr[cr.len() - c].1;
                c -= 1;
            }
            out[line * nx + i] = winding != 0;
        }
    }
    out
}

/// Fill the interior of a closed shell with a body-centred cubic lattice of
/// congruent tets (12 per cell), keeping every tet that can touch the shell
/// interior. `resolution` is in cells per unit length.
pub fn build_shell_grid<T: Real>(shell: &TriMesh<T>, resolution: usize) -> Result<TetGrid<T>> {
    if resolution < 8 {
        return Err(Error::Precondition(format!("grid resolution must be at least 8, got {resolution}")));
    }
    if shell.is_empty() || !shell.is_watertight() {
        return Err(Error::Precondition("shell mesh must be non-empty and watertight".into()));
    }
    let h = 1.0 / resolution as f64;
    let (lo, hi) = shell.bounds().expect("non-empty shell");
    let (lo, hi) = (lo.to_f64(), hi.to_f64());
    let i0: [i64; 3] = std::array::from_fn(|a| (lo[a] / h).floor() as i64 - 2);
    let i1: [i64; 3] = std::array::from_fn(|a| (hi[a] / h).ceil() as i64 + 2);
    let n: [usize; 3] = std::array::from_fn(|a| (i1[a] - i0[a]) as usize);

    let axis = |a: usize, count: usize, off: f64| -> Vec<f64> {
        (0..count).map(|i| (i0[a] as f64 + i as f64 + off) * h).collect()
    };
    let corner_axes: [Vec<f64>; 3] = std::array::from_fn(|a| axis(a, n[a] + 1, 0.0));
    let center_axes: [Vec<f64>; 3] = std::array::from_fn(|a| axis(a, n[a], 0.5));
    let corner_id = |i: usize, j: usize, k: usize| (k * (n[1] + 1) + j) * (n[0] + 1) + i;
    let n_corner = (n[0] + 1) * (n[1] + 1) * (n[2] + 1);
    let center_id = |i: usize, j: usize, k: usize| n_corner + (k * n[1] + j) * n[0] + i;

    let mut points: Vec<Vec3<f64>> = Vec::new();
    for axes in [&corner_axes, &center_axes] {
        for &z in &axes[2] {
            for &y in &axes[1] {
                for &x in &axes[0] {
                    points.push(Vec3::new(x, y, z));
                }
            }
        }
    }
    let mut inside = inside_by_scanline(shell, &corner_axes[0], &corner_axes[1], &corner_axes[2]);
    inside.extend(inside_by_scanline(shell, &center_axes[0], &center_axes[1], &center_axes[2]));

    let shell64: TriMesh<f64> = shell.cast();
    let bvh = Bvh::new(&shell64);
    let sdf: Vec<f64> = points
        .par_iter()
        .zip(inside.par_iter())
        .map(|(p, &ins)| {
            let d = bvh.distance(*p);
            if ins {
                -d
            } else {
                d
            }
        })
        .collect();

    // every lattice tet has longest edge h
    let keep_below = h;
    let mut tets: Vec<[u32; 4]> = Vec::new();
    let mut push = |t: [usize; 4]| {
        if t.iter().map(|&i| sdf[i]).fold(f64::INFINITY, f64::min) > keep_below {
            return;
        }
        let [a, b, c, d] = t.map(|i| points[i]);
        let t = if signed_volume(a, b, c, d) > 0.0 { t } else { [t[0], t[1], t[3], t[2]] };
        tets.push(t.map(|i| i as u32));
    };
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let c = center_id(i, j, k);
                // shared face between this cell and its +x, +y, +z neighbour
                if i + 1 < n[0] {
                    let f = [corner_id(i + 1, j, k), corner_id(i + 1, j + 1, k), corner_id(i + 1, j + 1, k + 1), corner_id(i + 1, j, k + 1)];
                    let c2 = center_id(i + 1, j, k);
                    for e in 0..4 {
                        push([c, c2, f[e], f[(e + 1) % 4]]);
                    }
                }
                if j + 1 < n[1] {
                    let f = [corner_id(i, j + 1, k), corner_id(i + 1, j + 1, k), corner_id(i + 1, j + 1, k + 1), corner_id(i, j + 1, k + 1)];
                    let c2 = center_id(i, j + 1, k);
                    for e in 0..4 {
                        push([c, c2, f[e], f[(e + 1) % 4]]);
                    }
                }
                if k + 1 < n[2] {
                    let f = [corner_id(i, j, k + 1), corner_id(i + 1, j, k + 1), corner_id(i + 1, j + 1, k + 1), corner_id(i, j + 1, k + 1)];
                    let c2 = center_id(i, j, k + 1);
                    for e in 0..4 {
                        push([c, c2, f[e], f[(e + 1) % 4]]);
                    }
                }
            }
        }
    }
    if tets.is_empty() {
        return Err(Error::EmptyShell);
    }

    let mut remap = vec![u32::MAX; points.len()];
    for t in &tets {
        for &i in t {
            remap[i as usize] = 0;
        }
    }
    let mut vertices = Vec::new();
    for (i, r) in remap.iter_mut().enumerate() {
        if *r == 0 {
            *r = vertices.len() as u32;
            vertices.push(points[i].cast::<T>());
        }
    }
    for t in &mut tets {
        *t = t.map(|i| remap[i as usize]);
    }
    Ok(TetGrid::new(vertices, tets, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scanline_matches_winding_on_sphere() {
        let m = icosphere::<f64>(3, 0.4);
        let ax: Vec<f64> = (0..21).map(|i| -0.5 + i as f64 * 0.05).collect();
        let ins = inside_by_scanline(&m, &ax, &ax, &ax);
        let mut idx = 0;
        for &z in &ax {
            for &y in &ax {
                for &x in &ax {
                    let w = crate::mesh::winding_number(&m, Vec3::new(x, y, z));
                    if (w - 0.5).abs() > 0.1 {
                        assert_eq!(ins[idx], w > 0.5, "({x},{y},{z})");
                    }
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn unit_cube_is_covered() {
        let shell = box_mesh::<f64>(Vec3::splat(-0.5), Vec3::splat(0.5));
        let g = build_shell_grid(&shell, 8).unwrap();
        let max_vol = (1.0f64 / 8.0).powi(3);
        for t in 0..g.num_tets() {
            let v = g.tet_volume(t);
            assert!(v > 0.0 && v <= max_vol + 1e-15);
        }
        assert!(g.is_conforming());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let covered = (0..n)
            .filter(|_| {
                let p = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                g.locate(p, 1e-12).is_some()
            })
            .count();
        assert!(covered as f64 / n as f64 >= 0.999, "{covered}/{n}");
    }

    #[test]
    fn smaller_shell_has_fewer_tets() {
        let a = build_shell_grid(&icosphere::<f64>(2, 0.4), 16).unwrap();
        let b = build_shell_grid(&icosphere::<f64>(2, 0.5), 16).unwrap();
        assert!(a.num_tets() < b.num_tets());
    }

    #[test]
    fn rejects_coarse_and_open() {
        let shell = box_mesh::<f64>(Vec3::splat(-0.5), Vec3::splat(0.5));
        assert!(matches!(build_shell_grid(&shell, 4), Err(Error::Precondition(_))));
        let mut open = shell.clone();
        open.faces.pop();
        assert!(matches!(build_shell_grid(&open, 8), Err(Error::Precondition(_))));
    }

    #[test]
    fn vertices_unique_and_deterministic() {
        let shell = icosphere::<f64>(2, 0.3);
        let a = build_shell_grid(&shell, 16).unwrap();
        let b = build_shell_grid(&shell, 16).unwrap();
        assert_eq!(a, b);
        let mut keys: Vec<[u64; 3]> = a.vertices.iter().map(|v| v.to_f64().map(f64::to_bits)).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), a.num_vertices());
    }
}
