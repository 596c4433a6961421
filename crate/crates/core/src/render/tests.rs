use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{FieldConfig, FieldNet};
use crate::geom::Vec3;
use crate::mesh::{icosphere, TriMesh};

fn front_camera(res: usize) -> Camera<f64> {
    Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zero(), 30f64.to_radians(), res, res)
}

fn quad(half: f64, z: f64) -> TriMesh<f64> {
    TriMesh::new(
        vec![Vec3::new(-half, -half, z), Vec3::new(half, -half, z), Vec3::new(half, half, z), Vec3::new(-half, half, z)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

#[test]
fn frame_filling_quad() {
    let cam = front_camera(32);
    let buf = rasterize(&quad(2.0, 0.0), &cam, &RasterOptions::default());
    for i in 0..32 * 32 {
        assert_eq!(buf.mask.data[i], 1.0);
        let n = buf.normal.pixel(i);
        assert!((n[2] - 1.0).abs() < 1e-12 && n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
    }
}

#[test]
fn empty_mesh_is_background() {
    let buf = rasterize(&TriMesh::<f64>::empty(), &front_camera(16), &RasterOptions::default());
    assert!(buf.mask.data.iter().all(|&m| m == 0.0));
    assert!(buf.face_id.iter().all(|&f| f == -1));
}

#[test]
fn sphere_coverage_matches_projected_disk() {
    let cam = front_camera(128);
    let r = 0.4;
    let buf = rasterize(&icosphere::<f64>(5, r), &cam, &RasterOptions::default());
    let covered = buf.face_id.iter().filter(|&&f| f >= 0).count() as f64;
    let half_angle = (r / 2.0f64).asin();
    let rad_px = half_angle.tan() / cam.tan_half_fov() * 64.0;
    let expected = std::f64::consts::PI * rad_px * rad_px;
    assert!((covered / expected - 1.0).abs() < 0.02, "{covered} vs {expected}");
}

fn orient2d(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

#[test]
fn hard_mask_agrees_with_screen_space_oracle() {
    let cam = Camera::look_at(Vec3::new(0.7, 0.4, 1.8), Vec3::new(0.0, 0.05, 0.0), 0.7, 32, 32);
    let mesh = icosphere::<f64>(2, 0.35).map_vertices(|v| Vec3::new(v.x * 1.3, v.y, v.z * 0.8));
    let buf = rasterize(&mesh, &cam, &RasterOptions::default());
    let proj: Vec<_> = mesh.vertices.iter().map(|&v| cam.project(v).unwrap()).collect();
    let mut disagree = 0;
    for py in 0..32 {
        for px in 0..32 {
            let q = (px as f64 + 0.5, py as f64 + 0.5);
            let mut hit = false;
            for f in &mesh.faces {
                let [a, b, c] = f.map(|i| (proj[i as usize].0, proj[i as usize].1));
                // y points down on screen, so front faces wind clockwise
                let area = orient2d(a, b, c);
                if area >= 0.0 {
                    continue;
                }
                if orient2d(a, b, q) <= 0.0 && orient2d(b, c, q) <= 0.0 && orient2d(c, a, q) <= 0.0 {
                    hit = true;
                    break;
                }
            }
            if hit != buf.is_covered(py * 32 + px) {
                disagree += 1;
            }
        }
    }
    assert!(disagree as f64 <= 0.005 * 1024.0, "{disagree} pixels disagree");
}

#[test]
fn inner_sphere_never_wins_depth_test() {
    let outer = icosphere::<f64>(3, 0.4);
    let inner = icosphere::<f64>(3, 0.3);
    let nf = outer.num_faces() as i64;
    let mut both = outer.clone();
    let off = both.vertices.len() as u32;
    both.vertices.extend(inner.vertices);
    both.faces.extend(inner.faces.iter().map(|f| f.map(|i| i + off)));
    let buf = rasterize(&both, &front_camera(64), &RasterOptions::default());
    assert!(buf.face_id.iter().all(|&f| f < nf));
}

#[test]
fn sphere_normals_match_analytic() {
    let cam = front_camera(128);
    let buf = rasterize(&icosphere::<f64>(4, 0.4), &cam, &RasterOptions::default());
    let mut errs = Vec::new();
    for i in 0..128 * 128 {
        if !buf.is_covered(i) {
            continue;
        }
        let p = buf.position.pixel(i);
        let truth = cam.to_camera(Vec3::new(p[0], p[1], p[2]).normalize());
        let n = buf.normal_raw.pixel(i);
        let cos = (truth.x * n[0] + truth.y * n[1] + truth.z * n[2]).clamp(-1.0, 1.0);
        errs.push(cos.acos().to_degrees());
    }
    errs.sort_by(f64::total_cmp);
    assert!(errs[errs.len() / 2] < 2.0);
}

fn loss_and_grad(
    mesh: &TriMesh<f64>,
    cam: &Camera<f64>,
    gm: &Image<f64>,
    gn: &Image<f64>,
    gp: &Image<f64>,
) -> (f64, Vec<Vec3<f64>>) {
    let buf = rasterize(mesh, cam, &RasterOptions::default());
    let dot = |a: &Image<f64>, b: &Image<f64>| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
    let covered_pos = Image::from_fn(cam.width, cam.height, 3, |x, y, c| {
        if buf.is_covered(y * cam.width + x) {
            buf.position.get(x, y, c)
        } else {
            0.0
        }
    });
    let loss = dot(&buf.mask, gm) + dot(&buf.normal, gn) + dot(&covered_pos, gp);
    let up = RenderUpstream { mask: Some(gm), normal: Some(gn), position: Some(gp) };
    let g = rasterize_backward(&buf, mesh, &up).unwrap();
    (loss, g.vertices)
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mesh = icosphere::<f64>(2, 0.4);
    let cam = front_camera(32);
    let z1 = Image::new(32, 32, 1);
    let z3 = Image::new(32, 32, 3);
    let (_, g) = loss_and_grad(&mesh, &cam, &z1, &z3, &z3);
    assert!(g.iter().all(|v| *v == Vec3::zero()));
}

#[test]
fn translation_gradient_matches_finite_differences() {
    let cam = front_camera(64);
    let tri = TriMesh::new(
        vec![Vec3::new(-0.3, -0.2, 0.0), Vec3::new(0.25, -0.25, 0.1), Vec3::new(0.0, 0.3, -0.1)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let z1 = Image::new(64, 64, 1);
    let z3 = Image::new(64, 64, 3);
    let gm = Image::from_fn(64, 64, 1, |x, _, _| x as f64 / 64.0);
    let gn = Image::from_fn(64, 64, 3, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 7.0 - 0.4);
    // position weights only well inside the triangle, where coverage is stable
    let gp = Image::from_fn(64, 64, 3, |x, y, c| {
        let inside = (28..34).contains(&x) && (30..36).contains(&y);
        if inside && c == 2 {
            1.0
        } else {
            0.0
        }
    });
    for (name, m, n, p) in [("mask", &gm, &z3, &z3), ("normal", &z1, &gn, &z3), ("position", &z1, &z3, &gp)] {
        let (_, g) = loss_and_grad(&tri, &cam, m, n, p);
        for axis in 0..3 {
            let analytic: f64 = g.iter().map(|v| v[axis]).sum();
            let h = 1e-4;
            let shift = |s: f64| {
                tri.map_vertices(|mut v| {
                    v[axis] += s;
                    v
                })
            };
            let (lp, _) = loss_and_grad(&shift(h), &cam, m, n, p);
            let (lm, _) = loss_and_grad(&shift(-h), &cam, m, n, p);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 5e-2 * fd.abs().max(analytic.abs()).max(1.0),
                "{name} axis {axis}: fd {fd} analytic {analytic}"
            );
        }
    }
}

#[test]
fn outward_vertex_motion_grows_mask() {
    let mesh = icosphere::<f64>(2, 0.4);
    let cam = front_camera(64);
    let ones = Image::filled(64, 64, 1, 1.0);
    let z3 = Image::new(64, 64, 3);
    let (_, g) = loss_and_grad(&mesh, &cam, &ones, &z3, &z3);
    let buf = rasterize(&mesh, &cam, &RasterOptions::default());
    let mut checked = 0;
    for [a, b] in &buf.silhouette {
        for &v in &[*a, *b] {
            let p = mesh.vertices[v as usize];
            let outward = Vec3::new(p.x, p.y, 0.0).normalize();
            assert!(g[v as usize].dot(outward) > 0.0);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn normal_gradient_matches_finite_differences() {
    let mesh = icosphere::<f64>(1, 0.4);
    let cam = Camera::look_at(Vec3::new(0.3, 0.5, 1.9), Vec3::zero(), 0.6, 48, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gm = Image::new(48, 48, 1);
    let gn = Image { width: 48, height: 48, channels: 3, data: (0..48 * 48 * 3).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let gp = Image::new(48, 48, 3);
    let (_, g) = loss_and_grad(&mesh, &cam, &gm, &gn, &gp);
    let h = 1e-5;
    let mut checked = 0;
    for v in 0..mesh.num_vertices() {
        if mesh.vertices[v].z < 0.1 {
            continue;
        }
        for axis in 0..3 {
            let bump = |s: f64| {
                let mut m = mesh.clone();
                m.vertices[v][axis] += s;
                m
            };
            let (lp, _) = loss_and_grad(&bump(h), &cam, &gm, &gn, &gp);
            let (lm, _) = loss_and_grad(&bump(-h), &cam, &gm, &gn, &gp);
            let fd = (lp - lm) / (2.0 * h);
            let a = g[v][axis];
            assert!((fd - a).abs() <= 5e-2 * fd.abs().max(a.abs()).max(1e-2), "v{v} axis {axis}: fd {fd} analytic {a}");
            checked += 1;
        }
    }
    assert!(checked > 6);
}

#[test]
fn stale_buffers_rejected() {
    let mesh = icosphere::<f64>(1, 0.4);
    let buf = rasterize(&mesh, &front_camera(16), &RasterOptions::default());
    let moved = mesh.map_vertices(|v| v * 1.01);
    let z = Image::new(16, 16, 1);
    let up = RenderUpstream { mask: Some(&z), ..Default::default() };
    assert!(matches!(rasterize_backward(&buf, &moved, &up), Err(crate::Error::StaleBuffers)));
}

#[test]
fn visibility_queries() {
    let cam = front_camera(64);
    let sphere = icosphere::<f64>(3, 0.4);
    let front: Vec<_> = sphere.vertices.iter().copied().filter(|v| v.z > 0.2).collect();
    assert!(visibility_mask(&sphere, &cam, &front, VISIBILITY_EPS).iter().all(|&v| v));
    let back = [Vec3::new(0.0, 0.0, -0.4)];
    assert!(!visibility_mask(&sphere, &cam, &back, VISIBILITY_EPS)[0]);

    // near plane covers x < 0 only
    let mut planes = quad(0.3, 0.2).map_vertices(|v| Vec3::new(v.x.min(0.0) - 0.001, v.y, v.z));
    let far = quad(0.3, -0.2);
    let off = planes.vertices.len() as u32;
    planes.vertices.extend(far.vertices);
    planes.faces.extend(far.faces.iter().map(|f| f.map(|i| i + off)));
    let buf = rasterize(&planes, &cam, &RasterOptions::default());
    for py in 0..64 {
        for px in 0..64 {
            let i = py * 64 + px;
            if !buf.is_covered(i) {
                continue;
            }
            let (o, d) = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
            let t_far = (-0.2 - o.z) / d.z;
            let p_far = o + d * t_far;
            if p_far.x.abs() > 0.3 || p_far.y.abs() > 0.3 {
                continue;
            }
            let t_near = (0.2 - o.z) / d.z;
            let p_near = o + d * t_near;
            let occluded = p_near.x <= -0.001 && p_near.x >= -0.301 && p_near.y.abs() <= 0.3;
            let vis = visibility_from_buffers(&buf, &planes, &[p_far], VISIBILITY_EPS)[0];
            assert_eq!(vis, !occluded, "pixel ({px},{py})");
        }
    }
}

fn color_net(seed: u64) -> FieldNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FieldNet::new(FieldConfig::color(64, 1 << 12), &mut rng).unwrap()
}

#[test]
fn constant_color_net_gives_constant_albedo() {
    let mut net = color_net(1);
    let n_table = net.num_table_params();
    let n = net.num_params();
    for i in 0..n_table {
        net.params_mut()[i] = 0.0;
    }
    let mesh = icosphere::<f64>(2, 0.4);
    let cam = front_camera(32);
    let buf = rasterize(&mesh, &cam, &RasterOptions::default());
    let r = query_albedo(&net, &buf, &mesh, None, Vec3::zero()).unwrap();
    let first = r.raw.pixel(r.evaluated_pixels()[0]).to_vec();
    for &i in r.evaluated_pixels() {
        assert_eq!(r.raw.pixel(i), &first[..]);
    }
    assert!(n > n_table);
}

#[test]
fn identity_correspondence_matches_positions() {
    let net = color_net(2);
    let mesh = icosphere::<f64>(2, 0.4);
    let cam = front_camera(32);
    let buf = rasterize(&mesh, &cam, &RasterOptions::default());
    let direct = query_albedo(&net, &buf, &mesh, None, Vec3::zero()).unwrap();
    for (k, &i) in direct.evaluated_pixels().iter().enumerate() {
        let p = buf.position.pixel(i);
        assert_eq!(direct.query_points[k], Vec3::new(p[0], p[1], p[2]));
    }
    let with = query_albedo(&net, &buf, &mesh, Some(&mesh.vertices), Vec3::zero()).unwrap();
    for (a, b) in direct.raw.data.iter().zip(&with.raw.data) {
        assert!((a - b).abs() < 1e-9);
    }
    let bad = vec![Vec3::zero(); 3];
    assert!(matches!(
        query_albedo(&net, &buf, &mesh, Some(&bad), Vec3::zero()),
        Err(crate::Error::CorrespondenceMismatch { .. })
    ));
}

#[test]
fn shared_canonical_space_gives_shared_colors() {
    let net = color_net(3);
    let canon = icosphere::<f64>(2, 0.3);
    let shift = Vec3::new(0.1, -0.05, 0.02);
    let posed = canon.map_vertices(|v| v + shift);
    let cam_a = front_camera(48);
    let mut cam_b = cam_a;
    cam_b.eye += shift;
    cam_b.target += shift;
    let ra = query_albedo(&net, &rasterize(&canon, &cam_a, &RasterOptions::default()), &canon, None, Vec3::zero()).unwrap();
    let buf_b = rasterize(&posed, &cam_b, &RasterOptions::default());
    let rb = query_albedo(&net, &buf_b, &posed, Some(&canon.vertices), Vec3::zero()).unwrap();
    let mut compared = 0;
    for &i in rb.evaluated_pixels() {
        if buf_b.is_covered(i) {
            for c in 0..3 {
                assert!((ra.raw.data[3 * i + c] - rb.raw.data[3 * i + c]).abs() < 1e-6);
            }
            compared += 1;
        }
    }
    assert!(compared > 100);
}
