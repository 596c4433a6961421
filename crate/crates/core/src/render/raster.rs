use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::image::Image;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::mesh::TriMesh;
use crate::scalar::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RasterOptions {
    /// Width of the silhouette sigmoid in pixels.
    pub sigma_px: f64,
    /// Camera-space value composited behind the normal buffer.
    pub normal_background: [f64; 3],
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self { sigma_px: 1.0, normal_background: [0.0; 3] }
    }
}

/// Where a pixel's surface attributes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelSource {
    Background,
    /// Closest front-facing triangle hit by the pixel-centre ray.
    Face(u32),
    /// Uncovered pixel inside the soft band: nearest point on a silhouette edge.
    Edge(u32),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SoftPixel<T> {
    edge: u32,
    /// +1 when the pixel centre is covered, −1 otherwise.
    sign: T,
    pub(crate) dist: T,
    /// Closest-point parameter along the projected edge.
    s: T,
    closest: [T; 2],
}

/// Render triple plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderBuffers<T> {
    pub camera: Camera<T>,
    pub options: RasterOptions,
    /// World-space surface point per pixel (zero on background).
    pub position: Image<T>,
    /// Soft coverage in [0, 1].
    pub mask: Image<T>,
    /// Camera-space normals composited over `normal_background`.
    pub normal: Image<T>,
    /// Camera-space unit normals before compositing (zero on background).
    pub normal_raw: Image<T>,
    /// View depth, `+inf` on background.
    pub depth: Image<T>,
    /// Hit triangle, −1 on background.
    pub face_id: Vec<i64>,
    pub source: Vec<PixelSource>,
    /// Vertices and weights interpolating per-vertex attributes at each pixel.
    pub attr_vertices: Vec<[u32; 3]>,
    pub attr_weights: Vec<[T; 3]>,
    /// Silhouette edges as vertex pairs.
    pub silhouette: Vec<[u32; 2]>,
    pub(crate) soft: Vec<Option<SoftPixel<T>>>,
    vertex_normal_sums: Vec<Vec3<T>>,
    vertex_normals: Vec<Vec3<T>>,
    mesh_stamp: u64,
}

pub(crate) fn mesh_stamp<T: Real>(mesh: &TriMesh<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        h ^= x;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    eat(mesh.vertices.len() as u64);
    eat(mesh.faces.len() as u64);
    for v in &mesh.vertices {
        for c in v.to_f64() {
            eat(c.to_bits());
        }
    }
    for f in &mesh.faces {
        for &i in f {
            eat(i as u64);
        }
    }
    h
}

fn intersect<T: Real>(o: Vec3<T>, d: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Option<(T, T, T)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = d.cross(e2);
    let det = e1.dot(pvec);
    if det == T::zero() {
        return None;
    }
    let inv = T::one() / det;
    let tvec = o - a;
    let u = tvec.dot(pvec) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = d.dot(qvec) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = e2.dot(qvec) * inv;
    (t > T::zero()).then_some((u, v, t))
}

fn closest_on_segment<T: Real>(q: [T; 2], a: [T; 2], b: [T; 2]) -> (T, T, [T; 2]) {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > T::zero() {
        (((q[0] - a[0]) * ab[0] + (q[1] - a[1]) * ab[1]) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let c = [a[0] + ab[0] * s, a[1] + ab[1] * s];
    let d = ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2)).sqrt();
    (d, s, c)
}

/// Soft band half-width in pixels.
fn soft_radius(sigma_px: f64) -> f64 {
    (3.0 * sigma_px).ceil().max(1.0)
}

/// Sigmoid of the signed edge distance, rescaled onto [0, 1] over the band
/// and passed through a cubic smoothstep so value and slope both vanish at
/// the band limits.
fn soft_coverage<T: Real>(signed_dist: T, sigma: T, reach: T) -> T {
    let r = rescaled_sigmoid(signed_dist, sigma, reach);
    r * r * (T::lit(3.0) - r - r)
}

fn soft_coverage_slope<T: Real>(signed_dist: T, sigma: T, reach: T) -> T {
    let lo = sigmoid(-reach / sigma);
    let hi = sigmoid(reach / sigma);
    let s = sigmoid(signed_dist / sigma);
    let r = rescaled_sigmoid(signed_dist, sigma, reach);
    T::lit(6.0) * r * (T::one() - r) * s * (T::one() - s) / sigma / (hi - lo)
}

fn rescaled_sigmoid<T: Real>(signed_dist: T, sigma: T, reach: T) -> T {
    let lo = sigmoid(-reach / sigma);
    let hi = sigmoid(reach / sigma);
    ((sigmoid(signed_dist / sigma) - lo) / (hi - lo)).max(T::zero()).min(T::one())
}

/// Area-weighted vertex normal sums and their normalisations.
fn vertex_normals<T: Real>(mesh: &TriMesh<T>) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
    let mut sums = vec![Vec3::zero(); mesh.vertices.len()];
    for f in 0..mesh.faces.len() {
        let c = mesh.face_cross(f);
        for &i in &mesh.faces[f] {
            sums[i as usize] += c;
        }
    }
    let normals = sums.iter().map(|s| s.try_normalize().unwrap_or_else(Vec3::zero)).collect();
    (sums, normals)
}

impl<T: Real> RenderBuffers<T> {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn hard_mask(&self) -> Image<T> {
        let mut m = Image::new(self.width(), self.height(), 1);
        for (i, &f) in self.face_id.iter().enumerate() {
            if f >= 0 {
                m.data[i] = T::one();
            }
        }
        m
    }

    pub fn is_covered(&self, i: usize) -> bool {
        self.face_id[i] >= 0
    }

    /// Interpolate a per-vertex attribute with the pixel's attribute weights.
    pub fn interpolate(&self, i: usize, attr: &[Vec3<T>]) -> Option<Vec3<T>> {
        if self.source[i] == PixelSource::Background {
            return None;
        }
        let (v, w) = (self.attr_vertices[i], self.attr_weights[i]);
        Some(attr[v[0] as usize] * w[0] + attr[v[1] as usize] * w[1] + attr[v[2] as usize] * w[2])
    }

    pub fn matches(&self, mesh: &TriMesh<T>) -> bool {
        self.mesh_stamp == mesh_stamp(mesh)
    }
}

/// Z-buffered, back-face-culled rasterisation by pixel-centre ray casting
/// (perspective-correct by construction), with a soft silhouette band.
pub fn rasterize<T: Real>(mesh: &TriMesh<T>, camera: &Camera<T>, options: &RasterOptions) -> RenderBuffers<T> {
    let (w, h) = (camera.width, camera.height);
    let n = w * h;
    let bg = Vec3::from_f64(options.normal_background);
    let mut buf = RenderBuffers {
        camera: *camera,
        options: *options,
        position: Image::new(w, h, 3),
        mask: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        normal_raw: Image::new(w, h, 3),
        depth: Image::filled(w, h, 1, T::infinity()),
        face_id: vec![-1; n],
        source: vec![PixelSource::Background; n],
        attr_vertices: vec![[0; 3]; n],
        attr_weights: vec![[T::zero(); 3]; n],
        silhouette: Vec::new(),
        soft: vec![None; n],
        vertex_normal_sums: Vec::new(),
        vertex_normals: Vec::new(),
        mesh_stamp: mesh_stamp(mesh),
    };
    for i in 0..n {
        buf.normal.pixel_mut(i).copy_from_slice(&[bg.x, bg.y, bg.z]);
    }
    if mesh.is_empty() {
        return buf;
    }
    let (sums, normals) = vertex_normals(mesh);
    let proj: Vec<Option<(T, T, T)>> = mesh.vertices.iter().map(|&p| camera.project(p)).collect();
    let front: Vec<bool> = (0..mesh.faces.len())
        .map(|f| {
            let a = mesh.vertices[mesh.faces[f][0] as usize];
            mesh.face_cross(f).dot(camera.eye - a) > T::zero()
        })
        .collect();

    let mut uv = vec![(T::zero(), T::zero()); n];
    for (fi, face) in mesh.faces.iter().enumerate() {
        if !front[fi] {
            continue;
        }
        let (Some(p0), Some(p1), Some(p2)) = (proj[face[0] as usize], proj[face[1] as usize], proj[face[2] as usize]) else {
            continue;
        };
        let p = [p0, p1, p2];
        let xmin = p.iter().map(|q| q.0).fold(T::infinity(), T::min);
        let xmax = p.iter().map(|q| q.0).fold(T::neg_infinity(), T::max);
        let ymin = p.iter().map(|q| q.1).fold(T::infinity(), T::min);
        let ymax = p.iter().map(|q| q.1).fold(T::neg_infinity(), T::max);
        let lo_x = (xmin - T::half()).ceil().max(T::zero());
        let hi_x = (xmax - T::half()).floor().min(T::lit(w as f64 - 1.0));
        let lo_y = (ymin - T::half()).ceil().max(T::zero());
        let hi_y = (ymax - T::half()).floor().min(T::lit(h as f64 - 1.0));
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let [a, b, c] = face.map(|i| mesh.vertices[i as usize]);
        for py in lo_y.as_f64() as usize..=hi_y.as_f64() as usize {
            for px in lo_x.as_f64() as usize..=hi_x.as_f64() as usize {
                let (o, d) = camera.ray(T::lit(px as f64 + 0.5), T::lit(py as f64 + 0.5));
                let Some((u, v, t)) = intersect(o, d, a, b, c) else { continue };
                let i = py * w + px;
                let cur = buf.depth.data[i];
                if t < cur || (t == cur && (fi as i64) < buf.face_id[i]) {
                    buf.depth.data[i] = t;
                    buf.face_id[i] = fi as i64;
                    uv[i] = (u, v);
                }
            }
        }
    }

    for i in 0..n {
        let f = buf.face_id[i];
        if f < 0 {
            continue;
        }
        let face = mesh.faces[f as usize];
        let (u, v) = uv[i];
        buf.source[i] = PixelSource::Face(f as u32);
        buf.attr_vertices[i] = face;
        buf.attr_weights[i] = [T::one() - u - v, u, v];
        let (px, py) = (i % w, i / w);
        let (o, d) = camera.ray(T::lit(px as f64 + 0.5), T::lit(py as f64 + 0.5));
        let p = o + d * buf.depth.data[i];
        buf.position.pixel_mut(i).copy_from_slice(&[p.x, p.y, p.z]);
        buf.mask.data[i] = T::one();
    }

    // silhouette edges: exactly one adjacent front-facing triangle
    let hard: Vec<bool> = buf.face_id.iter().map(|&f| f >= 0).collect();
    let background_near = |x: T, y: T, r: i64| -> bool {
        let (cx, cy) = (x.floor().as_f64() as i64, y.floor().as_f64() as i64);
        for yy in cy - r..=cy + r {
            for xx in cx - r..=cx + r {
                if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 || !hard[yy as usize * w + xx as usize] {
                    return true;
                }
            }
        }
        false
    };
    let mut keys: Vec<u64> = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if front[fi] {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                keys.push(((a.min(b) as u64) << 32) | a.max(b) as u64);
            }
        }
    }
    keys.sort_unstable();
    let mut k = 0;
    while k < keys.len() {
        let key = keys[k];
        let mut run = 1;
        while k + run < keys.len() && keys[k + run] == key {
            run += 1;
        }
        k += run;
        if run != 1 {
            continue;
        }
        let (a, b) = ((key >> 32) as u32, key as u32);
        let (Some(pa), Some(pb)) = (proj[a as usize], proj[b as usize]) else { continue };
        let (mx, my) = ((pa.0 + pb.0) * T::half(), (pa.1 + pb.1) * T::half());
        if background_near(mx, my, 2) {
            buf.silhouette.push([a, b]);
        }
    }

    let sigma = T::lit(options.sigma_px);
    let reach = T::lit(soft_radius(options.sigma_px));
    const BIN: usize = 8;
    let (bw, bh) = (w.div_ceil(BIN), h.div_ceil(BIN));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bw * bh];
    for (ei, [a, b]) in buf.silhouette.iter().enumerate() {
        let (pa, pb) = (proj[*a as usize].unwrap(), proj[*b as usize].unwrap());
        let bin_of = |v: T, count: usize| ((v.as_f64().max(0.0) as usize) / BIN).min(count - 1);
        let (x0, x1) = (bin_of(pa.0.min(pb.0) - reach, bw), bin_of(pa.0.max(pb.0) + reach, bw));
        let (y0, y1) = (bin_of(pa.1.min(pb.1) - reach, bh), bin_of(pa.1.max(pb.1) + reach, bh));
        for by in y0..=y1 {
            for bx in x0..=x1 {
                bins[by * bw + bx].push(ei as u32);
            }
        }
    }
    for i in 0..n {
        let (px, py) = (i % w, i / w);
        let bin = &bins[(py / BIN) * bw + px / BIN];
        if bin.is_empty() {
            continue;
        }
        let q = [T::lit(px as f64 + 0.5), T::lit(py as f64 + 0.5)];
        let mut best: Option<(T, u32, T, [T; 2])> = None;
        for &ei in bin {
            let [a, b] = buf.silhouette[ei as usize];
            let (pa, pb) = (proj[a as usize].unwrap(), proj[b as usize].unwrap());
            let (d, s, c) = closest_on_segment(q, [pa.0, pa.1], [pb.0, pb.1]);
            if best.is_none_or(|bst| d < bst.0 || (d == bst.0 && ei < bst.1)) {
                best = Some((d, ei, s, c));
            }
        }
        let Some((d, ei, s, c)) = best else { continue };
        if d >= reach {
            continue;
        }
        let sign = if hard[i] { T::one() } else { -T::one() };
        buf.mask.data[i] = soft_coverage(sign * d, sigma, reach);
        buf.soft[i] = Some(SoftPixel { edge: ei, sign, dist: d, s, closest: c });
        if !hard[i] {
            let [a, b] = buf.silhouette[ei as usize];
            buf.source[i] = PixelSource::Edge(ei);
            buf.attr_vertices[i] = [a, b, b];
            buf.attr_weights[i] = [T::one() - s, s, T::zero()];
            let p = mesh.vertices[a as usize].lerp(mesh.vertices[b as usize], s);
            buf.position.pixel_mut(i).copy_from_slice(&[p.x, p.y, p.z]);
        }
    }

    for i in 0..n {
        if buf.source[i] == PixelSource::Background {
            continue;
        }
        let (v, wt) = (buf.attr_vertices[i], buf.attr_weights[i]);
        let s = normals[v[0] as usize] * wt[0] + normals[v[1] as usize] * wt[1] + normals[v[2] as usize] * wt[2];
        let nc = camera.to_camera(s.try_normalize().unwrap_or_else(Vec3::zero));
        buf.normal_raw.pixel_mut(i).copy_from_slice(&[nc.x, nc.y, nc.z]);
        let m = buf.mask.data[i];
        let out = nc * m + bg * (T::one() - m);
        buf.normal.pixel_mut(i).copy_from_slice(&[out.x, out.y, out.z]);
    }
    buf.vertex_normal_sums = sums;
    buf.vertex_normals = normals;
    buf
}

/// Upstream gradients on the differentiable buffers.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderUpstream<'a, T> {
    pub mask: Option<&'a Image<T>>,
    /// Gradient on the composited normal image.
    pub normal: Option<&'a Image<T>>,
    /// Gradient on the position buffer (covered pixels only).
    pub position: Option<&'a Image<T>>,
}

#[derive(Debug, Clone)]
pub struct RenderGradient<T> {
    pub vertices: Vec<Vec3<T>>,
    pub normal_background: Vec3<T>,
}

/// Pull pixel gradients back to mesh vertex positions. Covered pixels
/// differentiate the ray–triangle intersection implicitly with the face
/// fixed; band pixels differentiate the soft-mask sigmoid through the
/// projected silhouette edge.
pub fn rasterize_backward<T: Real>(
    buffers: &RenderBuffers<T>,
    mesh: &TriMesh<T>,
    upstream: &RenderUpstream<T>,
) -> Result<RenderGradient<T>> {
    if !buffers.matches(mesh) {
        return Err(Error::StaleBuffers);
    }
    for img in [upstream.mask, upstream.normal, upstream.position].into_iter().flatten() {
        if img.width != buffers.width() || img.height != buffers.height() {
            return Err(Error::DimensionMismatch("upstream gradient size differs from render".into()));
        }
    }
    let cam = &buffers.camera;
    let w = buffers.width();
    let nv = mesh.vertices.len();
    let mut grad = vec![Vec3::zero(); nv];
    let mut grad_normal = vec![Vec3::zero(); nv];
    let mut grad_bg = Vec3::zero();
    let bg = Vec3::from_f64(buffers.options.normal_background);
    let sigma = T::lit(buffers.options.sigma_px);
    let px3 = |img: &Image<T>, i: usize| Vec3::new(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);

    for i in 0..buffers.face_id.len() {
        let m = buffers.mask.data[i];
        let mut gm = upstream.mask.map_or(T::zero(), |g| g.data[i]);
        let g_n = upstream.normal.map(|g| px3(g, i));
        if let Some(gn) = g_n {
            grad_bg += gn * (T::one() - m);
            gm += gn.dot(px3(&buffers.normal_raw, i) - bg);
        }
        if let (Some(sp), true) = (buffers.soft[i], gm != T::zero()) {
            if sp.dist > T::zero() {
                let reach = T::lit(soft_radius(buffers.options.sigma_px));
                let dm_dd = soft_coverage_slope(sp.sign * sp.dist, sigma, reach) * sp.sign;
                let g_d = gm * dm_dd;
                let q = [T::lit((i % w) as f64 + 0.5), T::lit((i / w) as f64 + 0.5)];
                let dir = [(sp.closest[0] - q[0]) / sp.dist, (sp.closest[1] - q[1]) / sp.dist];
                let [a, b] = buffers.silhouette[sp.edge as usize];
                for (v, wt) in [(a, T::one() - sp.s), (b, sp.s)] {
                    if wt == T::zero() {
                        continue;
                    }
                    let (jx, jy) = cam.project_jacobian(mesh.vertices[v as usize]);
                    grad[v as usize] += (jx * dir[0] + jy * dir[1]) * (g_d * wt);
                }
            }
        }
        if let (PixelSource::Edge(_), Some(gn)) = (buffers.source[i], g_n) {
            let gw = cam.from_camera(gn * m);
            let [a, b, _] = buffers.attr_vertices[i];
            let [wa, wb, _] = buffers.attr_weights[i];
            let (na, nb) = (buffers.vertex_normals[a as usize], buffers.vertex_normals[b as usize]);
            let s = na * wa + nb * wb;
            let len = s.norm();
            if len > T::zero() {
                let n = s / len;
                let g_s = (gw - n * n.dot(gw)) / len;
                grad_normal[a as usize] += g_s * wa;
                grad_normal[b as usize] += g_s * wb;
                // interpolation parameter moves with the projected edge
                let g_t = g_s.dot(nb - na);
                if wb > T::zero() && wb < T::one() && g_t != T::zero() {
                    if let (Some(pa), Some(pb)) = (cam.project(mesh.vertices[a as usize]), cam.project(mesh.vertices[b as usize])) {
                        let q = [T::lit((i % w) as f64 + 0.5), T::lit((i / w) as f64 + 0.5)];
                        let e = [pb.0 - pa.0, pb.1 - pa.1];
                        let r = [q[0] - pa.0, q[1] - pa.1];
                        let l2 = e[0] * e[0] + e[1] * e[1];
                        let two_s = wb + wb;
                        let ds_da = [(two_s * e[0] - e[0] - r[0]) / l2, (two_s * e[1] - e[1] - r[1]) / l2];
                        let ds_db = [(r[0] - two_s * e[0]) / l2, (r[1] - two_s * e[1]) / l2];
                        for (v, ds) in [(a, ds_da), (b, ds_db)] {
                            let (jx, jy) = cam.project_jacobian(mesh.vertices[v as usize]);
                            grad[v as usize] += (jx * ds[0] + jy * ds[1]) * g_t;
                        }
                    }
                }
            }
        }
        let PixelSource::Face(f) = buffers.source[i] else { continue };
        let face = mesh.faces[f as usize];
        let [pa, pb, pc] = face.map(|k| mesh.vertices[k as usize]);
        let (_, d) = cam.ray(T::lit((i % w) as f64 + 0.5), T::lit((i / w) as f64 + 0.5));
        let wts = buffers.attr_weights[i];
        let (mut g_u, mut g_v, mut g_t) = (T::zero(), T::zero(), T::zero());
        if let Some(gp) = upstream.position {
            g_t += px3(gp, i).dot(d);
        }
        if let Some(gn) = g_n {
            let gn_raw_world = cam.from_camera(gn * m);
            let ns = face.map(|k| buffers.vertex_normals[k as usize]);
            let s = ns[0] * wts[0] + ns[1] * wts[1] + ns[2] * wts[2];
            let len = s.norm();
            if len > T::zero() {
                let n = s / len;
                let g_s = (gn_raw_world - n * n.dot(gn_raw_world)) / len;
                for k in 0..3 {
                    grad_normal[face[k] as usize] += g_s * wts[k];
                }
                g_u += g_s.dot(ns[1] - ns[0]);
                g_v += g_s.dot(ns[2] - ns[0]);
            }
        }
        if g_u != T::zero() || g_v != T::zero() || g_t != T::zero() {
            let mat = Mat3::from_cols(pb - pa, pc - pa, -d);
            if let Some(inv) = mat.inverse() {
                let x = inv.tr_mul_vec(Vec3::new(g_u, g_v, g_t));
                for k in 0..3 {
                    grad[face[k] as usize] -= x * wts[k];
                }
            }
        }
    }

    // back through vertex normal = normalize(sum of face cross products)
    let mut grad_sum = vec![Vec3::zero(); nv];
    for k in 0..nv {
        let g = grad_normal[k];
        if g == Vec3::zero() {
            continue;
        }
        let s = buffers.vertex_normal_sums[k];
        let len = s.norm();
        if len > T::zero() {
            let n = s / len;
            grad_sum[k] = (g - n * n.dot(g)) / len;
        }
    }
    for face in &mesh.faces {
        let g = grad_sum[face[0] as usize] + grad_sum[face[1] as usize] + grad_sum[face[2] as usize];
        if g == Vec3::zero() {
            continue;
        }
        let [a, b, c] = face.map(|k| mesh.vertices[k as usize]);
        let (e1, e2) = (b - a, c - a);
        let gb = e2.cross(g);
        let gc = g.cross(e1);
        grad[face[1] as usize] += gb;
        grad[face[2] as usize] += gc;
        grad[face[0] as usize] -= gb + gc;
    }
    Ok(RenderGradient { vertices: grad, normal_background: grad_bg })
}

/// Per-point visibility: the point projects into the frame and the nearest
/// front-facing surface along its exact view ray is no closer than `eps`.
pub fn visibility_mask<T: Real>(mesh: &TriMesh<T>, camera: &Camera<T>, points: &[Vec3<T>], eps: T) -> Vec<bool> {
    let buf = rasterize(mesh, camera, &RasterOptions::default());
    visibility_from_buffers(&buf, mesh, points, eps)
}

/// Depth test against the faces rasterised around each point's projection,
/// intersected along the exact ray through the point rather than the pixel
/// centre.
pub fn visibility_from_buffers<T: Real>(buf: &RenderBuffers<T>, mesh: &TriMesh<T>, points: &[Vec3<T>], eps: T) -> Vec<bool> {
    let (w, h) = (buf.width() as i64, buf.height() as i64);
    let cam = &buf.camera;
    points
        .iter()
        .map(|&p| {
            let Some((x, y, z)) = cam.project(p) else { return false };
            if x < T::zero() || y < T::zero() || x >= T::lit(w as f64) || y >= T::lit(h as f64) {
                return false;
            }
            let (cx, cy) = (x.floor().as_f64() as i64, y.floor().as_f64() as i64);
            let (o, d) = cam.ray(x, y);
            let mut nearest = T::infinity();
            let mut seen = Vec::with_capacity(9);
            for yy in (cy - 1).max(0)..=(cy + 1).min(h - 1) {
                for xx in (cx - 1).max(0)..=(cx + 1).min(w - 1) {
                    let f = buf.face_id[(yy * w + xx) as usize];
                    if f < 0 || seen.contains(&f) {
                        continue;
                    }
                    seen.push(f);
                    let [a, b, c] = mesh.faces[f as usize].map(|k| mesh.vertices[k as usize]);
                    if let Some((_, _, t)) = intersect(o, d, a, b, c) {
                        nearest = nearest.min(t);
                    }
                }
            }
            z <= nearest + eps
        })
        .collect()
}

pub const VISIBILITY_EPS: f64 = 1e-3;
