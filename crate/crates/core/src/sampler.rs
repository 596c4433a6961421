//! Random body and face cameras for multi-view guidance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::render::Camera;
use crate::scalar::Real;

/// Angles in degrees, lengths in scene units. Intervals are `[lo, hi)`;
/// `lo == hi` pins the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub p_body: f64,
    pub h_body: [f64; 2],
    pub r_body: [f64; 2],
    pub theta_body: [f64; 2],
    /// Elevations drawn uniformly from this set.
    pub phi_body: Vec<f64>,
    pub body_center: [f64; 3],
    /// Head keypoint the face cameras look at.
    pub face_target: [f64; 3],
    pub r_face: [f64; 2],
    pub theta_face: [f64; 2],
    pub phi_face: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub face_fov_deg: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p_body: 0.7,
            h_body: [-0.4, 0.4],
            r_body: [0.7, 1.3],
            theta_body: [-180.0, 180.0],
            phi_body: vec![0.0],
            body_center: [0.0; 3],
            face_target: [0.0, 0.35, 0.0],
            r_face: [0.3, 0.4],
            theta_face: [-90.0, 90.0],
            phi_face: vec![0.0],
            width: 128,
            height: 128,
            fov_deg: 60.0,
            face_fov_deg: 40.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_body) {
            return Err(Error::Config(format!("p_body must lie in [0, 1], got {}", self.p_body)));
        }
        for (name, [lo, hi]) in [
            ("h_body", self.h_body),
            ("r_body", self.r_body),
            ("theta_body", self.theta_body),
            ("r_face", self.r_face),
            ("theta_face", self.theta_face),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} must be a finite interval with lo <= hi")));
            }
        }
        if self.r_body[0] <= 0.0 || self.r_face[0] <= 0.0 {
            return Err(Error::Config("camera radii must be positive".into()));
        }
        if self.phi_body.is_empty() || self.phi_face.is_empty() {
            return Err(Error::Config("elevation sets must be nonempty".into()));
        }
        if self.phi_body.iter().chain(&self.phi_face).any(|p| p.abs() >= 90.0) {
            return Err(Error::Config("elevations must lie strictly inside (-90, 90)".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("render size must be positive".into()));
        }
        for fov in [self.fov_deg, self.face_fov_deg] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(Error::Config(format!("field of view {fov} outside (0, 180)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledCamera<T> {
    pub camera: Camera<T>,
    pub is_face: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, set: &[f64]) -> f64 {
    if set.len() == 1 {
        set[0]
    } else {
        set[rng.random_range(0..set.len())]
    }
}

/// Camera on a sphere of radius `r` around `center`, raised by `height`.
/// Azimuth 0 looks at the front (+z side) of the subject.
pub fn orbit_camera<T: Real>(
    center: Vec3<T>,
    target: Vec3<T>,
    radius: f64,
    height: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    fov_deg: f64,
    width: usize,
    height_px: usize,
) -> Camera<T> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let offset = Vec3::new(radius * el.cos() * az.sin(), height + radius * el.sin(), radius * el.cos() * az.cos());
    let mut cam = Camera::look_at(center + offset.cast(), target, T::lit(fov_deg.to_radians()), width, height_px);
    cam.azimuth = T::lit(az);
    cam.elevation = T::lit(el);
    cam
}

/// One draw: body camera with probability `p_body`, face camera otherwise.
pub fn sample_camera<T: Real, R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> SampledCamera<T> {
    let is_face = rng.random::<f64>() >= config.p_body;
    let c = &config;
    let camera = if is_face {
        let target = Vec3::from_f64(c.face_target);
        let r = uniform(rng, c.r_face);
        let theta = uniform(rng, c.theta_face);
        let phi = pick(rng, &c.phi_face);
        orbit_camera(target, target, r, 0.0, theta, phi, c.face_fov_deg, c.width, c.height)
    } else {
        let center = Vec3::from_f64(c.body_center);
        let h = uniform(rng, c.h_body);
        let r = uniform(rng, c.r_body);
        let theta = uniform(rng, c.theta_body);
        let phi = pick(rng, &c.phi_body);
        orbit_camera(center, center, r, h, theta, phi, c.fov_deg, c.width, c.height)
    };
    SampledCamera { camera, is_face }
}

/// Sampler owning its random stream.
#[derive(Debug, Clone)]
pub struct CameraSampler {
    pub config: SamplerConfig,
    seed: u64,
    rng: ChaCha8Rng,
}

impl CameraSampler {
    pub fn new(config: SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, seed, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn sample<T: Real>(&mut self) -> SampledCamera<T> {
        sample_camera(&self.config, &mut self.rng)
    }

    /// Independent sampler with the same configuration.
    pub fn fork(&self, seed: u64) -> Self {
        Self { config: self.config.clone(), seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn rng_state(&self) -> (u64, u128) {
        (self.seed, self.rng.get_word_pos())
    }

    /// Rebuild a sampler at a saved stream position.
    pub fn restore(config: SamplerConfig, seed: u64, word_pos: u128) -> Result<Self> {
        let mut s = Self::new(config, seed)?;
        s.rng.set_word_pos(word_pos);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn body_radius_height(cam: &Camera<f64>, center: Vec3<f64>) -> (f64, f64) {
        let d = cam.eye - center;
        ((d.x * d.x + d.z * d.z).sqrt(), d.y)
    }

    #[test]
    fn face_fraction_bounds_and_uniform_azimuth() {
        let cfg = SamplerConfig::default();
        let mut s = CameraSampler::new(cfg.clone(), 11).unwrap();
        let n = 100_000;
        let mut faces = 0;
        let mut bins = [0usize; 36];
        let mut body = 0usize;
        for _ in 0..n {
            let c = s.sample::<f64>();
            if c.is_face {
                faces += 1;
                let r = (c.camera.eye - Vec3::from_f64(cfg.face_target)).norm();
                assert!(r >= 0.3 - 1e-12 && r < 0.4 + 1e-12);
                let az = c.camera.azimuth.to_degrees();
                assert!((-90.0 - 1e-9..90.0 + 1e-9).contains(&az));
            } else {
                body += 1;
                let (r, h) = body_radius_height(&c.camera, Vec3::zero());
                assert!((0.7 - 1e-12..1.3 + 1e-12).contains(&r), "radius {r}");
                assert!((-0.4 - 1e-12..0.4 + 1e-12).contains(&h), "height {h}");
                let az = c.camera.azimuth.to_degrees();
                let k = (((az + 180.0) / 10.0).floor() as usize).min(35);
                bins[k] += 1;
            }
        }
        let frac = faces as f64 / n as f64;
        assert!((frac - 0.3).abs() <= 0.01, "face fraction {frac}");
        let expect = body as f64 / 36.0;
        let stat: f64 = bins.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(35.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p {p}");
    }

    #[test]
    fn degenerate_height_interval_pins_height() {
        let cfg = SamplerConfig { h_body: [0.0, 0.0], p_body: 1.0, ..Default::default() };
        let mut s = CameraSampler::new(cfg, 3).unwrap();
        for _ in 0..1000 {
            let c = s.sample::<f64>();
            assert!(!c.is_face);
            assert_eq!(c.camera.eye.y, 0.0);
        }
    }

    #[test]
    fn seeded_determinism_and_fork() {
        let cfg = SamplerConfig::default();
        let mut a = CameraSampler::new(cfg.clone(), 5).unwrap();
        let mut b = CameraSampler::new(cfg, 5).unwrap();
        let sa: Vec<_> = (0..100).map(|_| a.sample::<f64>()).collect();
        let sb: Vec<_> = (0..100).map(|_| b.sample::<f64>()).collect();
        assert_eq!(sa, sb);
        let (seed, pos) = a.rng_state();
        let mut c = CameraSampler::restore(a.config.clone(), seed, pos).unwrap();
        assert_eq!(a.sample::<f64>(), c.sample::<f64>());
        let mut f = a.fork(99);
        assert_ne!(f.sample::<f64>(), a.sample::<f64>());
    }

    #[test]
    fn front_camera_looks_at_front() {
        let cam = orbit_camera::<f64>(Vec3::zero(), Vec3::zero(), 1.0, 0.0, 0.0, 0.0, 60.0, 32, 32);
        assert!((cam.eye - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let side = orbit_camera::<f64>(Vec3::zero(), Vec3::zero(), 1.0, 0.0, 90.0, 0.0, 60.0, 32, 32);
        assert!((side.eye - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SamplerConfig { p_body: 1.5, ..Default::default() },
            SamplerConfig { r_body: [1.0, 0.5], ..Default::default() },
            SamplerConfig { phi_body: vec![], ..Default::default() },
            SamplerConfig { phi_face: vec![90.0], ..Default::default() },
            SamplerConfig { width: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(CameraSampler::new(cfg, 0).is_err());
        }
    }
}
