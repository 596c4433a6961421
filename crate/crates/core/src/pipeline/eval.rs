use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{sample_surface, Bvh, TriMesh};
use crate::render::{rasterize, Image, RasterOptions};
use crate::sampler::orbit_camera;
use crate::scalar::Real;

/// Camera azimuths, in degrees, for the normal-error renders.
pub const EVAL_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
const SAMPLE_SEED: u64 = 0x6576_616c;
const NORMAL_RESOLUTION: usize = 128;

/// Mesh and image metrics. Each part is present only when it was computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
}

impl EvalReport {
    /// Fields of `other` override missing ones.
    pub fn merge(self, other: EvalReport) -> EvalReport {
        EvalReport {
            chamfer: self.chamfer.or(other.chamfer),
            p2s: self.p2s.or(other.p2s),
            normal_error: self.normal_error.or(other.normal_error),
            psnr: self.psnr.or(other.psnr),
            ssim: self.ssim.or(other.ssim),
        }
    }
}

/// Mean distance from points sampled on `from` to the surface of `to`.
fn directed_distance<T: Real>(from: &TriMesh<T>, to: &TriMesh<T>, n: usize, snap: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let pts = sample_surface(from, n, &mut rng);
    let bvh = Bvh::new(to);
    let d: Vec<f64> = pts
        .par_iter()
        .map(|(p, _)| {
            let d = bvh.distance(*p).as_f64();
            if d < snap {
                0.0
            } else {
                d
            }
        })
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Mean per-pixel normal difference over the union of both masks, pooled
/// over [`EVAL_AZIMUTHS`] around the truth's bounding box.
pub fn normal_error<T: Real>(recon: &TriMesh<T>, truth: &TriMesh<T>, resolution: usize) -> Result<f64> {
    let (lo, hi) = truth.bounds().ok_or(Error::EmptyMesh("truth"))?;
    let center = (lo + hi) * T::half();
    let radius = truth.bbox_diagonal().as_f64() * 0.5;
    let opts = RasterOptions::default();
    let mut sum = 0.0;
    let mut count = 0usize;
    for az in EVAL_AZIMUTHS {
        let cam = orbit_camera(center, center, 2.4 * radius, 0.0, az, 0.0, 60.0, resolution, resolution);
        let a = rasterize(recon, &cam, &opts);
        let b = rasterize(truth, &cam, &opts);
        for i in 0..a.face_id.len() {
            if !(a.is_covered(i) || b.is_covered(i)) {
                continue;
            }
            let (p, q) = (a.normal_raw.pixel(i), b.normal_raw.pixel(i));
            let d: f64 = (0..3).map(|c| (p[c] - q[c]).as_f64().powi(2)).sum();
            sum += d.sqrt();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Chamfer (mean of both directions), truth-to-recon P2S and normal error.
/// Distances below 1e-9 of the truth's bounding-box diagonal count as zero.
pub fn eval_meshes<T: Real>(recon: &TriMesh<T>, truth: &TriMesh<T>, n_samples: usize) -> Result<EvalReport> {
    if recon.is_empty() {
        return Err(Error::EmptyMesh("reconstruction"));
    }
    if truth.is_empty() {
        return Err(Error::EmptyMesh("truth"));
    }
    if n_samples == 0 {
        return Err(Error::EmptySet("evaluation samples"));
    }
    let snap = 1e-9 * truth.bbox_diagonal().as_f64();
    let r2t = directed_distance(recon, truth, n_samples, snap);
    let t2r = directed_distance(truth, recon, n_samples, snap);
    Ok(EvalReport {
        chamfer: Some(0.5 * (r2t + t2r)),
        p2s: Some(t2r),
        normal_error: Some(normal_error(recon, truth, NORMAL_RESOLUTION)?),
        ..Default::default()
    })
}

fn check_pair<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for images in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_pair(a, b)?;
    if a.data.is_empty() {
        return Err(Error::EmptySet("image pixels"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 11×11 filter over the valid region of one channel.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; 11]) -> Vec<f64> {
    let (ow, oh) = (w - 10, h - 10);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..11).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..11).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity for images in [0, 1]: Gaussian 11×11 window with
/// σ = 1.5, K1 = 0.01, K2 = 0.03, averaged over the valid region and the
/// channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    if w < 11 || h < 11 {
        return Err(Error::DimensionMismatch(format!("SSIM needs at least 11x11 pixels, got {w}x{h}")));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[i * ch + c].as_f64()).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[i * ch + c].as_f64()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&prod(&x, &x), w, h, &k);
        let syy = filter_valid(&prod(&y, &y), w, h, &k);
        let sxy = filter_valid(&prod(&x, &y), w, h, &k);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

/// Mean PSNR and SSIM over matched render/truth pairs.
pub fn eval_images<T: Real>(renders: &[Image<T>], truths: &[Image<T>]) -> Result<EvalReport> {
    if renders.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!("{} renders vs {} truths", renders.len(), truths.len())));
    }
    if renders.is_empty() {
        return Err(Error::EmptySet("images"));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in renders.iter().zip(truths) {
        p += psnr(a, b)?;
        s += ssim(a, b)?;
    }
    let n = renders.len() as f64;
    Ok(EvalReport { psnr: Some(p / n), ssim: Some(s / n), ..Default::default() })
}
