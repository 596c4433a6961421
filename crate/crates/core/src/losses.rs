//! Image and point-set losses for the geometry and texture stages.
//!
//! Image losses are means over counted pixels with squared errors summed over
//! channels. Gradients come back as images of the same shape as the
//! differentiated input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::render::Image;
use crate::scalar::Real;

/// Loss weights. Defaults are the full-scale values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sil: f64,
    pub lambda_sds: f64,
    pub lambda_norm_base: f64,
    pub lambda_lap: f64,
    pub lambda_recon: f64,
    pub lambda_cd: f64,
    /// Inner weight of the squared error inside the reconstruction loss.
    pub lambda_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sil: 1e4,
            lambda_sds: 1.0,
            lambda_norm_base: 1e4,
            lambda_lap: 1e4,
            lambda_recon: 2e4,
            lambda_cd: 1e6,
            lambda_mse: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_sil", self.lambda_sil),
            ("lambda_sds", self.lambda_sds),
            ("lambda_norm_base", self.lambda_norm_base),
            ("lambda_lap", self.lambda_lap),
            ("lambda_recon", self.lambda_recon),
            ("lambda_cd", self.lambda_cd),
            ("lambda_mse", self.lambda_mse),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub weight: f64,
    pub value: f64,
}

/// Per-iteration record of every loss term and where its gradient went.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: BTreeMap<String, WeightedTerm>,
    pub total: f64,
    pub grad_targets: Vec<String>,
}

impl LossReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, weight: f64, value: f64) {
        self.terms.insert(name.to_string(), WeightedTerm { weight, value });
        self.total = self.terms.values().map(|t| t.weight * t.value).sum();
    }

    pub fn mark_target(&mut self, target: &str) {
        if !self.grad_targets.iter().any(|t| t == target) {
            self.grad_targets.push(target.to_string());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.values().all(|t| t.value.is_finite())
    }
}

/// Loss value with its gradient on the differentiated image.
#[derive(Debug, Clone)]
pub struct ImageLoss<T> {
    pub value: f64,
    pub grad: Image<T>,
}

#[derive(Debug, Clone)]
pub struct SilhouetteLoss<T> {
    /// Mean squared mask difference.
    pub mse: f64,
    /// Summed L1 distance of rendered boundary pixels to the target boundary.
    pub edge: f64,
    /// `mse + edge`.
    pub value: f64,
    /// Exact gradient of `mse` plus the distance-weighted residual on
    /// rendered boundary pixels standing in for the edge term.
    pub grad: Image<T>,
}

fn single_channel<T>(img: &Image<T>, what: &str) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::DimensionMismatch(format!("{what} must have one channel, has {}", img.channels)));
    }
    Ok(())
}

/// Foreground pixels (value >= 0.5) with a background 4-neighbour or on the
/// image border.
pub fn boundary_pixels<T: Real>(mask: &Image<T>) -> Vec<bool> {
    let (w, h) = (mask.width, mask.height);
    let fg = |x: usize, y: usize| mask.data[(y * w + x) * mask.channels] >= T::half();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !fg(x, y) {
                continue;
            }
            let edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h || !fg(x - 1, y) || !fg(x + 1, y) || !fg(x, y - 1) || !fg(x, y + 1);
            out[y * w + x] = edge;
        }
    }
    out
}

/// L1 distance from every pixel to the nearest seed, by a forward and a
/// backward chamfer sweep. `None` when there is no seed.
pub fn l1_distance_transform(seeds: &[bool], width: usize, height: usize) -> Option<Vec<u32>> {
    if !seeds.iter().any(|&s| s) {
        return None;
    }
    const FAR: u32 = u32::MAX / 2;
    let mut d: Vec<u32> = seeds.iter().map(|&s| if s { 0 } else { FAR }).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x > 0 {
                d[i] = d[i].min(d[i - 1] + 1);
            }
            if y > 0 {
                d[i] = d[i].min(d[i - width] + 1);
            }
        }
    }
    for y in (0..height).rev() {
        for x in (0..width).rev() {
            let i = y * width + x;
            if x + 1 < width {
                d[i] = d[i].min(d[i + 1] + 1);
            }
            if y + 1 < height {
                d[i] = d[i].min(d[i + width] + 1);
            }
        }
    }
    Some(d)
}

/// Mask squared error plus the boundary distance term.
pub fn silhouette_loss<T: Real>(rendered: &Image<T>, target: &Image<T>) -> Result<SilhouetteLoss<T>> {
    rendered.check_shape(target)?;
    single_channel(rendered, "rendered mask")?;
    let n = rendered.data.len();
    let scale = 2.0 / n as f64;
    let mut mse = 0.0;
    let mut grad = Image::new(rendered.width, rendered.height, 1);
    for i in 0..n {
        let r = rendered.data[i].as_f64() - target.data[i].as_f64();
        mse += r * r;
        grad.data[i] = T::lit(scale * r);
    }
    mse /= n as f64;

    let mut edge = 0.0;
    let target_edges = boundary_pixels(target);
    if let Some(dist) = l1_distance_transform(&target_edges, target.width, target.height) {
        for (i, &b) in boundary_pixels(rendered).iter().enumerate() {
            if b {
                let d = dist[i] as f64;
                edge += d;
                let r = rendered.data[i].as_f64() - target.data[i].as_f64();
                grad.data[i] += T::lit(d * r);
            }
        }
    }
    Ok(SilhouetteLoss { mse, edge, value: mse + edge, grad })
}

/// Squared normal error summed over channels, averaged over valid pixels.
pub fn normal_reg_loss<T: Real>(rendered: &Image<T>, target: &Image<T>, valid: &[bool]) -> Result<ImageLoss<T>> {
    rendered.check_shape(target)?;
    if valid.len() != rendered.num_pixels() {
        return Err(Error::DimensionMismatch(format!(
            "valid mask has {} entries for {} pixels",
            valid.len(),
            rendered.num_pixels()
        )));
    }
    let c = rendered.channels;
    let mut grad = Image::new(rendered.width, rendered.height, c);
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        log::warn!("normal loss: empty valid mask");
        return Ok(ImageLoss { value: 0.0, grad });
    }
    let mut value = 0.0;
    for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        for k in c * i..c * (i + 1) {
            let r = rendered.data[k].as_f64() - target.data[k].as_f64();
            value += r * r;
            grad.data[k] = T::lit(2.0 * r / count as f64);
        }
    }
    Ok(ImageLoss { value: value / count as f64, grad })
}

/// `lambda_mse` times the occlusion-weighted squared error, summed over
/// channels and averaged over the mask weight.
pub fn occlusion_recon_loss<T: Real>(rendered: &Image<T>, input: &Image<T>, occ: &Image<T>, lambda_mse: f64) -> Result<ImageLoss<T>> {
    rendered.check_shape(input)?;
    single_channel(occ, "occlusion mask")?;
    if occ.width != rendered.width || occ.height != rendered.height {
        return Err(Error::DimensionMismatch("occlusion mask size differs from render".into()));
    }
    let c = rendered.channels;
    let mut grad = Image::new(rendered.width, rendered.height, c);
    let weight: f64 = occ.data.iter().map(|m| m.as_f64()).sum();
    if weight <= 0.0 {
        return Ok(ImageLoss { value: 0.0, grad });
    }
    let mut value = 0.0;
    for i in 0..rendered.num_pixels() {
        let m = occ.data[i].as_f64();
        if m == 0.0 {
            continue;
        }
        for k in c * i..c * (i + 1) {
            let r = rendered.data[k].as_f64() - input.data[k].as_f64();
            value += m * r * r;
            grad.data[k] = T::lit(lambda_mse * 2.0 * m * r / weight);
        }
    }
    Ok(ImageLoss { value: lambda_mse * value / weight, grad })
}

#[derive(Debug, Clone)]
pub struct ChamferLoss<T> {
    pub value: T,
    /// Gradient per render colour; the input set is data.
    pub grad: Vec<Vec3<T>>,
}

#[inline]
fn sq_dist<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Uniform grid over the unit colour cube. Points outside the cube are
/// clamped into border cells, which keeps the ring lower bound valid.
struct ColorGrid<'a, T> {
    points: &'a [Vec3<T>],
    res: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

impl<'a, T: Real> ColorGrid<'a, T> {
    fn new(points: &'a [Vec3<T>]) -> Self {
        let res = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 64);
        let ncell = res * res * res;
        let mut counts = vec![0u32; ncell + 1];
        let cells: Vec<usize> = points.iter().map(|&p| Self::cell_index(res, p)).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for k in 0..ncell {
            counts[k + 1] += counts[k];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        ColorGrid { points, res, start, items }
    }

    fn coord(res: usize, v: T) -> usize {
        let f = v.as_f64() * res as f64;
        if f.is_nan() || f <= 0.0 {
            0
        } else {
            (f as usize).min(res - 1)
        }
    }

    fn cell_of(res: usize, p: Vec3<T>) -> [usize; 3] {
        [Self::coord(res, p.x), Self::coord(res, p.y), Self::coord(res, p.z)]
    }

    fn cell_index(res: usize, p: Vec3<T>) -> usize {
        let [x, y, z] = Self::cell_of(res, p);
        (z * res + y) * res + x
    }

    /// Exact nearest neighbour; ties go to the lowest index.
    fn nearest(&self, q: Vec3<T>) -> (T, usize) {
        let res = self.res as i64;
        let cell = 1.0 / self.res as f64;
        let [cx, cy, cz] = Self::cell_of(self.res, q).map(|c| c as i64);
        let mut best: Option<(T, usize)> = None;
        for ring in 0..res {
            for z in (cz - ring).max(0)..=(cz + ring).min(res - 1) {
                for y in (cy - ring).max(0)..=(cy + ring).min(res - 1) {
                    for x in (cx - ring).max(0)..=(cx + ring).min(res - 1) {
                        let on_shell = (x - cx).abs() == ring || (y - cy).abs() == ring || (z - cz).abs() == ring;
                        if !on_shell {
                            continue;
                        }
                        let c = ((z * res + y) * res + x) as usize;
                        for &j in &self.items[self.start[c] as usize..self.start[c + 1] as usize] {
                            let d = sq_dist(q, self.points[j as usize]);
                            let j = j as usize;
                            if best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                                best = Some((d, j));
                            }
                        }
                    }
                }
            }
            // everything outside rings 0..=ring is at least ring cells away
            if let Some((bd, _)) = best {
                let bound = (ring as f64 * cell - 1e-9).max(0.0);
                if bd.as_f64() < bound * bound {
                    break;
                }
            }
        }
        best.expect("grid over a nonempty set")
    }
}

fn check_nonempty<T>(render: &[Vec3<T>], input: &[Vec3<T>]) -> Result<()> {
    if render.is_empty() {
        return Err(Error::EmptySet("render colours"));
    }
    if input.is_empty() {
        return Err(Error::EmptySet("input colours"));
    }
    Ok(())
}

/// Mean squared nearest-neighbour distance from each colour set to the
/// other, summed over both directions. Nearest neighbours come from a
/// colour grid.
pub fn chamfer_rgb_loss<T: Real>(render: &[Vec3<T>], input: &[Vec3<T>]) -> Result<ChamferLoss<T>> {
    check_nonempty(render, input)?;
    let input_grid = ColorGrid::new(input);
    let render_grid = ColorGrid::new(render);
    let forward: Vec<(T, usize)> = render.iter().map(|&x| input_grid.nearest(x)).collect();
    let backward: Vec<(T, usize)> = input.iter().map(|&y| render_grid.nearest(y)).collect();
    Ok(assemble_chamfer(render, input, &forward, &backward))
}

/// Reference O(N·M) evaluation with the same tie rule and summation order.
pub fn chamfer_rgb_brute_force<T: Real>(render: &[Vec3<T>], input: &[Vec3<T>]) -> Result<ChamferLoss<T>> {
    check_nonempty(render, input)?;
    let scan = |q: Vec3<T>, set: &[Vec3<T>]| {
        let mut best = (sq_dist(q, set[0]), 0);
        for (j, &p) in set.iter().enumerate().skip(1) {
            let d = sq_dist(q, p);
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    };
    let forward: Vec<(T, usize)> = render.iter().map(|&x| scan(x, input)).collect();
    let backward: Vec<(T, usize)> = input.iter().map(|&y| scan(y, render)).collect();
    Ok(assemble_chamfer(render, input, &forward, &backward))
}

fn assemble_chamfer<T: Real>(render: &[Vec3<T>], input: &[Vec3<T>], forward: &[(T, usize)], backward: &[(T, usize)]) -> ChamferLoss<T> {
    let (n, m) = (T::lit(render.len() as f64), T::lit(input.len() as f64));
    let mut grad = vec![Vec3::zero(); render.len()];
    let mut a = T::zero();
    for (i, &(d, j)) in forward.iter().enumerate() {
        a += d;
        grad[i] += (render[i] - input[j]) * (T::two() / n);
    }
    let mut b = T::zero();
    for (k, &(d, i)) in backward.iter().enumerate() {
        b += d;
        grad[i] += (render[i] - input[k]) * (T::two() / m);
    }
    ChamferLoss { value: a / n + b / m, grad }
}

/// Two-round cosine annealing of the normal-loss weight: each round starts
/// at `base` and decays towards zero.
pub fn lambda_norm_schedule(t: usize, t_coarse: usize, t_fine: usize, base: f64) -> Result<f64> {
    if t >= t_coarse + t_fine {
        return Err(Error::OutOfRange(format!("iteration {t} beyond schedule length {}", t_coarse + t_fine)));
    }
    let phase = if t < t_coarse {
        t as f64 / t_coarse as f64
    } else {
        (t - t_coarse) as f64 / t_fine as f64
    };
    Ok(0.5 * base * (1.0 + (std::f64::consts::PI * phase).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(size: usize, x0: usize, y0: usize, side: usize) -> Image<f64> {
        Image::from_fn(size, size, 1, |x, y, _| {
            if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn random_image(rng: &mut ChaCha8Rng, c: usize) -> Image<f64> {
        let data: Vec<f64> = (0..64 * c).map(|_| rng.random::<f64>()).collect();
        Image { width: 8, height: 8, channels: c, data }
    }

    fn fd_check(f: impl Fn(&Image<f64>) -> f64, x: &Image<f64>, grad: &Image<f64>) {
        let h = 1e-6;
        for k in 0..x.data.len() {
            let mut p = x.clone();
            p.data[k] += h;
            let mut m = x.clone();
            m.data[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = grad.data[k];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "entry {k}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn silhouette_identical_is_zero() {
        let s = square(32, 8, 8, 10);
        let l = silhouette_loss(&s, &s).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn silhouette_empty_render_counts_pixels() {
        let target = square(64, 20, 20, 10);
        let l = silhouette_loss(&Image::new(64, 64, 1), &target).unwrap();
        assert_eq!(l.mse, 100.0 / 4096.0);
        assert_eq!(l.edge, 0.0);
    }

    fn brute_force_edge(rendered: &Image<f64>, target: &Image<f64>) -> f64 {
        let re = boundary_pixels(rendered);
        let te = boundary_pixels(target);
        let w = rendered.width as i64;
        let seeds: Vec<(i64, i64)> = te.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i as i64 % w, i as i64 / w)).collect();
        re.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| {
                let (x, y) = (i as i64 % w, i as i64 / w);
                seeds.iter().map(|&(sx, sy)| (sx - x).abs() + (sy - y).abs()).min().unwrap() as f64
            })
            .sum()
    }

    #[test]
    fn edge_term_matches_brute_force_for_offset_square() {
        let target = square(48, 10, 10, 16);
        let shifted = square(48, 13, 10, 16);
        let l = silhouette_loss(&shifted, &target).unwrap();
        let oracle = brute_force_edge(&shifted, &target);
        assert_eq!(l.edge, oracle);
        // trailing side 3 px off everywhere, leading side 3 px off except
        // near the corners, overlapping horizontal sides 0 to 2 px off
        assert_eq!(boundary_pixels(&shifted).iter().filter(|&&b| b).count(), 60);
        assert_eq!(oracle, 48.0 + 36.0 + 6.0);
    }

    #[test]
    fn distance_transform_is_exact_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (23, 17);
        let seeds: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.02).collect();
        let d = l1_distance_transform(&seeds, w, h).unwrap();
        for i in 0..w * h {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let best = (0..w * h)
                .filter(|&j| seeds[j])
                .map(|j| ((j % w) as i64 - x).abs() + ((j / w) as i64 - y).abs())
                .min()
                .unwrap();
            assert_eq!(d[i] as i64, best);
        }
        assert!(l1_distance_transform(&vec![false; 4], 2, 2).is_none());
    }

    #[test]
    fn edge_term_grows_with_offset() {
        let target = square(64, 8, 20, 12);
        let mut last = -1.0;
        for off in 0..30 {
            let r = square(64, 8 + off, 20, 12);
            let e = silhouette_loss(&r, &target).unwrap().edge;
            assert!(e >= last, "offset {off}: {e} < {last}");
            last = e;
        }
    }

    #[test]
    fn silhouette_mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // values kept away from 0.5 so the boundary set is stable under FD
        let away = |rng: &mut ChaCha8Rng| -> Image<f64> {
            let mut im = random_image(rng, 1);
            im.data.iter_mut().for_each(|v| *v = if *v < 0.5 { *v * 0.8 } else { 0.6 + *v * 0.4 });
            im
        };
        let r = away(&mut rng);
        let t = square(8, 2, 2, 4);
        let l = silhouette_loss(&r, &t).unwrap();
        let mut mse_grad = l.grad.clone();
        let rb = boundary_pixels(&r);
        let dist = l1_distance_transform(&boundary_pixels(&t), 8, 8).unwrap();
        for i in 0..64 {
            if rb[i] {
                mse_grad.data[i] -= dist[i] as f64 * (r.data[i] - t.data[i]);
            }
        }
        fd_check(|x| silhouette_loss(x, &t).unwrap().mse, &r, &mse_grad);
    }

    #[test]
    fn normal_loss_cases() {
        let n = Image::from_fn(8, 8, 3, |x, y, c| [x as f64, y as f64, 1.0][c] / 8.0);
        let valid = vec![true; 64];
        assert_eq!(normal_reg_loss(&n, &n, &valid).unwrap().value, 0.0);
        // 180 degrees about the view axis negates x and y
        let rot = Image::from_fn(8, 8, 3, |x, y, c| if c < 2 { -n.get(x, y, c) } else { n.get(x, y, c) });
        let mut valid = vec![false; 64];
        for v in valid.iter_mut().step_by(3) {
            *v = true;
        }
        let count = valid.iter().filter(|&&v| v).count() as f64;
        let expect: f64 = (0..64)
            .filter(|&i| valid[i])
            .map(|i| {
                let p = n.pixel(i);
                let q = rot.pixel(i);
                (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / count;
        let got = normal_reg_loss(&n, &rot, &valid).unwrap().value;
        assert!((got - expect).abs() < 1e-15);
        assert_eq!(normal_reg_loss(&n, &rot, &vec![false; 64]).unwrap().value, 0.0);
        assert!(matches!(normal_reg_loss(&n, &rot, &[true]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn normal_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_image(&mut rng, 3);
        let t = random_image(&mut rng, 3);
        let valid: Vec<bool> = (0..64).map(|i| i % 5 != 0).collect();
        let l = normal_reg_loss(&r, &t, &valid).unwrap();
        fd_check(|x| normal_reg_loss(x, &t, &valid).unwrap().value, &r, &l.grad);
    }

    #[test]
    fn recon_loss_cases() {
        let img = Image::from_fn(16, 16, 3, |x, y, c| ((x * 3 + y + c) % 10) as f64 / 20.0);
        let full = Image::filled(16, 16, 1, 1.0);
        assert_eq!(occlusion_recon_loss(&img, &img, &full, 1.0).unwrap().value, 0.0);
        let off = img.map(|v| v + 0.1);
        let zero = Image::new(16, 16, 1);
        assert_eq!(occlusion_recon_loss(&off, &img, &zero, 1.0).unwrap().value, 0.0);
        let l = occlusion_recon_loss(&off, &img, &full, 2.5).unwrap().value;
        assert!((l - 2.5 * 0.01 * 3.0).abs() < 1e-12, "{l}");
        assert!(occlusion_recon_loss(&off, &Image::new(8, 8, 3), &full, 1.0).is_err());
    }

    #[test]
    fn recon_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_image(&mut rng, 3);
        let t = random_image(&mut rng, 3);
        let occ = random_image(&mut rng, 1).map(|v| if v < 0.3 { 0.0 } else { v });
        let l = occlusion_recon_loss(&r, &t, &occ, 3.0).unwrap();
        fd_check(|x| occlusion_recon_loss(x, &t, &occ, 3.0).unwrap().value, &r, &l.grad);
    }

    #[test]
    fn chamfer_fixture_is_six() {
        let a = [Vec3::new(0.0, 0.0, 0.0)];
        let b = [Vec3::new(1.0, 1.0, 1.0)];
        assert_eq!(chamfer_rgb_loss(&a, &b).unwrap().value, 6.0);
        assert_eq!(chamfer_rgb_loss(&a, &a).unwrap().value, 0.0);
        assert!(matches!(chamfer_rgb_loss::<f64>(&[], &b), Err(Error::EmptySet(_))));
        assert!(matches!(chamfer_rgb_loss::<f64>(&a, &[]), Err(Error::EmptySet(_))));
    }

    fn random_colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn chamfer_matches_brute_force_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (n, m) = (rng.random_range(1..=200), rng.random_range(1..=200));
            let a = random_colors(&mut rng, n);
            let b = random_colors(&mut rng, m);
            let fast = chamfer_rgb_loss(&a, &b).unwrap();
            let slow = chamfer_rgb_brute_force(&a, &b).unwrap();
            assert_eq!(fast.value.to_bits(), slow.value.to_bits());
            assert_eq!(fast.grad, slow.grad);
        }
    }

    #[test]
    fn chamfer_handles_clustered_and_duplicate_colours() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a: Vec<Vec3<f64>> = (0..150).map(|_| Vec3::new(0.5, 0.5, rng.random::<f64>() * 0.01)).collect();
        a.extend(random_colors(&mut rng, 20));
        let mut b = a.clone();
        b.truncate(40);
        b.push(Vec3::new(1.0, 1.0, 1.0));
        let fast = chamfer_rgb_loss(&a, &b).unwrap();
        let slow = chamfer_rgb_brute_force(&a, &b).unwrap();
        assert_eq!(fast.value.to_bits(), slow.value.to_bits());
        assert_eq!(fast.grad, slow.grad);
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_colors(&mut rng, 30);
        let b = random_colors(&mut rng, 25);
        let g = chamfer_rgb_loss(&a, &b).unwrap().grad;
        let h = 1e-7;
        for i in 0..a.len() {
            for ax in 0..3 {
                let mut p = a.clone();
                p[i][ax] += h;
                let mut m = a.clone();
                m[i][ax] -= h;
                let fd = (chamfer_rgb_loss(&p, &b).unwrap().value - chamfer_rgb_loss(&m, &b).unwrap().value) / (2.0 * h);
                assert!((fd - g[i][ax]).abs() <= 1e-4 * fd.abs().max(1e-3), "{i} {ax}: {fd} vs {}", g[i][ax]);
            }
        }
    }

    #[test]
    fn schedule_values() {
        let base = LossWeights::default().lambda_norm_base;
        assert_eq!(base, 1e4);
        assert_eq!(lambda_norm_schedule(0, 500, 500, base).unwrap(), base);
        assert_eq!(lambda_norm_schedule(500, 500, 500, base).unwrap(), base);
        assert_eq!(lambda_norm_schedule(250, 500, 500, base).unwrap(), 0.5 * base);
        assert!(matches!(lambda_norm_schedule(1000, 500, 500, base), Err(Error::OutOfRange(_))));
        let late = lambda_norm_schedule(999, 500, 500, base).unwrap();
        assert!(late > 0.0 && late < 1e-2 * base);
    }

    #[test]
    fn report_total_is_weighted_sum() {
        let mut r = LossReport::new();
        r.add("sil", 1e4, 0.25);
        r.add("lap", 3.0, 0.5);
        r.mark_target("geometry");
        r.mark_target("geometry");
        assert!((r.total - (2500.0 + 1.5)).abs() < 1e-9);
        assert_eq!(r.grad_targets, vec!["geometry".to_string()]);
        assert!(LossWeights { lambda_cd: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chamfer_symmetric_and_nonnegative(
            a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..60),
            b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..60),
        ) {
            let a: Vec<Vec3<f64>> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let b: Vec<Vec3<f64>> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let ab = chamfer_rgb_loss(&a, &b).unwrap().value;
            let ba = chamfer_rgb_loss(&b, &a).unwrap().value;
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn image_losses_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_image(&mut rng, 1);
            let t = random_image(&mut rng, 1).map(|v| v.round());
            prop_assert!(silhouette_loss(&r, &t).unwrap().value >= 0.0);
            let r3 = random_image(&mut rng, 3);
            let t3 = random_image(&mut rng, 3);
            prop_assert!(normal_reg_loss(&r3, &t3, &[true; 64]).unwrap().value >= 0.0);
            prop_assert!(occlusion_recon_loss(&r3, &t3, &r, 1.0).unwrap().value >= 0.0);
        }
    }
}
