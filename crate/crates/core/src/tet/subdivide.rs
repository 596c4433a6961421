use std::collections::{HashMap, HashSet};

use super::{signed_volume, TetGrid, TET_EDGES};
use crate::scalar::Real;

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Local indices of the flagged edges of a tet when they form a conforming
/// pattern: none, one edge, the three edges of one face, or all six.
fn pattern(flags: [bool; 6]) -> Option<Pattern> {
    let count = flags.iter().filter(|&&f| f).count();
    match count {
        0 => Some(Pattern::Keep),
        1 => Some(Pattern::Bisect(flags.iter().position(|&f| f).unwrap())),
        3 => {
            // face opposite local vertex v has its three edges flagged
            (0..4).find_map(|v| {
                let on_face = TET_EDGES.iter().map(|&(a, b)| a != v && b != v);
                let matches = on_face.zip(flags).all(|(in_face, f)| in_face == f);
                matches.then_some(Pattern::Face(v))
            })
        }
        6 => Some(Pattern::Red),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Keep,
    Bisect(usize),
    Face(usize),
    Red,
}

/// Red (1→8) refinement of every marked tet, with the neighbours closed by
/// bisection or face splits so the grid stays conforming. Tets whose flagged
/// edges fit no closure pattern are promoted to red until a fixpoint.
pub fn subdivide_surface<T: Real>(grid: &TetGrid<T>) -> TetGrid<T> {
    let mut flagged: HashSet<(u32, u32)> = HashSet::new();
    for (t, &m) in grid.tets.iter().zip(&grid.surface_mask) {
        if m {
            for &(a, b) in &TET_EDGES {
                flagged.insert(key(t[a], t[b]));
            }
        }
    }
    let flags_of = |flagged: &HashSet<(u32, u32)>, t: &[u32; 4]| -> [bool; 6] {
        TET_EDGES.map(|(a, b)| flagged.contains(&key(t[a], t[b])))
    };
    loop {
        let mut changed = false;
        for t in &grid.tets {
            let f = flags_of(&flagged, t);
            if pattern(f).is_none() {
                for &(a, b) in &TET_EDGES {
                    flagged.insert(key(t[a], t[b]));
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut vertices = grid.vertices.clone();
    let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
    // assign midpoint indices in tet/edge traversal order for determinism
    for t in &grid.tets {
        for &(a, b) in &TET_EDGES {
            let k = key(t[a], t[b]);
            if flagged.contains(&k) && !midpoint.contains_key(&k) {
                midpoint.insert(k, vertices.len() as u32);
                vertices.push((grid.vertices[k.0 as usize] + grid.vertices[k.1 as usize]) * T::half());
            }
        }
    }

    let mut tets = Vec::with_capacity(grid.tets.len());
    let mut emit = |t: [u32; 4]| {
        let [a, b, c, d] = t.map(|i| vertices[i as usize]);
        tets.push(if signed_volume(a, b, c, d) > T::zero() { t } else { [t[0], t[1], t[3], t[2]] });
    };
    for t in &grid.tets {
        let m = |i: usize, j: usize| midpoint[&key(t[i], t[j])];
        match pattern(flags_of(&flagged, t)).expect("closure reached a fixpoint") {
            Pattern::Keep => emit(*t),
            Pattern::Bisect(e) => {
                let (i, j) = TET_EDGES[e];
                let mid = m(i, j);
                let mut c1 = *t;
                c1[j] = mid;
                let mut c2 = *t;
                c2[i] = mid;
                emit(c1);
                emit(c2);
            }
            Pattern::Face(v) => {
                let f: Vec<usize> = (0..4).filter(|&i| i != v).collect();
                let (a, b, c) = (f[0], f[1], f[2]);
                let apex = t[v];
                emit([t[a], m(a, b), m(a, c), apex]);
                emit([m(a, b), t[b], m(b, c), apex]);
                emit([m(a, c), m(b, c), t[c], apex]);
                emit([m(a, b), m(b, c), m(a, c), apex]);
            }
            Pattern::Red => {
                emit([t[0], m(0, 1), m(0, 2), m(0, 3)]);
                emit([m(0, 1), t[1], m(1, 2), m(1, 3)]);
                emit([m(0, 2), m(1, 2), t[2], m(2, 3)]);
                emit([m(0, 3), m(1, 3), m(2, 3), t[3]]);
                // octahedron split along the fixed m02–m13 diagonal
                let (p, q) = (m(0, 2), m(1, 3));
                let ring = [m(0, 1), m(1, 2), m(2, 3), m(0, 3)];
                for r in 0..4 {
                    emit([p, q, ring[r], ring[(r + 1) % 4]]);
                }
            }
        }
    }
    let mut out = TetGrid::new(vertices, tets, grid.level + 1);
    out.surface_mask = vec![false; out.tets.len()];
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::mesh::icosphere;
    use crate::tet::{build_shell_grid, mark_surface_tets};

    fn single() -> TetGrid<f64> {
        let mut g = TetGrid::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
            0,
        );
        g.surface_mask = vec![true];
        g
    }

    #[test]
    fn single_tet_red_split() {
        let g = single();
        let s = subdivide_surface(&g);
        assert_eq!(s.num_tets(), 8);
        assert_eq!(s.num_vertices(), 10);
        assert_eq!(s.level, 1);
        assert!((s.total_volume() - g.total_volume()).abs() < 1e-12);
        for t in 0..8 {
            assert!(s.tet_volume(t) > 0.0);
        }
        assert!(s.is_conforming());
    }

    #[test]
    fn unmarked_is_identity() {
        let mut g = single();
        g.surface_mask = vec![false];
        let s = subdivide_surface(&g);
        assert_eq!(s.tets, g.tets);
        assert_eq!(s.vertices, g.vertices);
        assert_eq!(s.level, 1);
    }

    fn sphere_crust() -> TetGrid<f64> {
        let g = build_shell_grid(&icosphere::<f64>(2, 0.45), 12).unwrap();
        let sdf: Vec<f64> = g.vertices.iter().map(|v| v.norm() - 0.3).collect();
        mark_surface_tets(g, &sdf).unwrap()
    }

    #[test]
    fn crust_refinement_conforms_and_conserves_volume() {
        let g = sphere_crust();
        assert!(g.num_marked() > 0);
        let s = subdivide_surface(&g);
        assert!(s.is_conforming());
        let (v0, v1) = (g.total_volume(), s.total_volume());
        assert!(((v1 - v0) / v0).abs() < 1e-10);
        assert!((0..s.num_tets()).all(|t| s.tet_volume(t) > 0.0));
        assert!(s.num_tets() >= g.num_tets() + 7 * g.num_marked());
    }

    #[test]
    fn red_children_halve_corner_edges() {
        let g = single();
        let s = subdivide_surface(&g);
        // first child sits at parent vertex 0
        let c = s.corners(0);
        let p = g.corners(0);
        for k in 1..4 {
            assert!(((c[k] - c[0]).norm() - 0.5 * (p[k] - p[0]).norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn refinement_is_deterministic() {
        let g = sphere_crust();
        assert_eq!(subdivide_surface(&g), subdivide_surface(&g));
    }
}
