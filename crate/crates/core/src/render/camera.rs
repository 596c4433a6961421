use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

/// Look-at pinhole camera. Camera space follows the OpenGL convention: x
/// right, y up, the camera looks down −z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub eye: Vec3<T>,
    pub target: Vec3<T>,
    pub up: Vec3<T>,
    /// Vertical field of view in radians.
    pub vertical_fov: T,
    pub width: usize,
    pub height: usize,
    /// Bookkeeping for view tags, radians.
    pub azimuth: T,
    pub elevation: T,
}

/// Orthonormal frame: `right`, `up`, and `forward` (towards the target).
#[derive(Debug, Clone, Copy)]
pub struct Frame<T> {
    pub right: Vec3<T>,
    pub up: Vec3<T>,
    pub forward: Vec3<T>,
}

impl<T: Real> Camera<T> {
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, vertical_fov: T, width: usize, height: usize) -> Self {
        Self {
            eye,
            target,
            up: Vec3::new(T::zero(), T::one(), T::zero()),
            vertical_fov,
            width,
            height,
            azimuth: T::zero(),
            elevation: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eye == self.target {
            return Err(Error::Precondition("camera eye equals target".into()));
        }
        if !(self.vertical_fov > T::zero() && self.vertical_fov < T::PI()) {
            return Err(Error::Precondition("camera fov must lie in (0, pi)".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Precondition("camera image size must be positive".into()));
        }
        if (self.target - self.eye).cross(self.up).try_normalize().is_none() {
            return Err(Error::Precondition("camera up vector is parallel to the view direction".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> Frame<T> {
        let forward = (self.target - self.eye).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        Frame { right, up, forward }
    }

    pub fn aspect(&self) -> T {
        T::lit(self.width as f64) / T::lit(self.height as f64)
    }

    pub fn tan_half_fov(&self) -> T {
        (self.vertical_fov * T::half()).tan()
    }

    /// Pixel coordinates (x right, y down, pixel centres at +0.5) and depth
    /// along the view axis. `None` behind the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T, T)> {
        let f = self.frame();
        let d = p - self.eye;
        let z = d.dot(f.forward);
        if z <= T::zero() {
            return None;
        }
        let th = self.tan_half_fov();
        let xn = d.dot(f.right) / (z * th * self.aspect());
        let yn = d.dot(f.up) / (z * th);
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        Some(((xn + T::one()) * T::half() * w, (T::one() - yn) * T::half() * h, z))
    }

    /// Jacobian rows `∂px/∂p` and `∂py/∂p` of [`Camera::project`].
    pub fn project_jacobian(&self, p: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
        let f = self.frame();
        let d = p - self.eye;
        let z = d.dot(f.forward);
        let (xc, yc) = (d.dot(f.right), d.dot(f.up));
        let th = self.tan_half_fov();
        let sx = T::lit(self.width as f64) * T::half() / (th * self.aspect());
        let sy = -T::lit(self.height as f64) * T::half() / th;
        let jx = (f.right * z - f.forward * xc) * (sx / (z * z));
        let jy = (f.up * z - f.forward * yc) * (sy / (z * z));
        (jx, jy)
    }

    /// Ray through pixel coordinates `(px, py)`; the direction is scaled so
    /// the ray parameter equals view depth.
    pub fn ray(&self, px: T, py: T) -> (Vec3<T>, Vec3<T>) {
        let f = self.frame();
        let th = self.tan_half_fov();
        let xn = px / T::lit(self.width as f64) * T::two() - T::one();
        let yn = T::one() - py / T::lit(self.height as f64) * T::two();
        (self.eye, f.forward + f.right * (xn * th * self.aspect()) + f.up * (yn * th))
    }

    /// World direction to camera space.
    pub fn to_camera(&self, v: Vec3<T>) -> Vec3<T> {
        let f = self.frame();
        Vec3::new(v.dot(f.right), v.dot(f.up), -v.dot(f.forward))
    }

    /// Transpose of [`Camera::to_camera`].
    pub fn from_camera(&self, v: Vec3<T>) -> Vec3<T> {
        let f = self.frame();
        f.right * v.x + f.up * v.y - f.forward * v.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera<f64> {
        Camera::look_at(Vec3::new(0.3, 0.2, 2.0), Vec3::zero(), 0.6, 64, 48)
    }

    #[test]
    fn target_projects_to_centre() {
        let c = cam();
        let (x, y, z) = c.project(c.target).unwrap();
        assert!((x - 32.0).abs() < 1e-12 && (y - 24.0).abs() < 1e-12);
        assert!((z - (c.eye - c.target).norm()).abs() < 1e-12);
    }

    #[test]
    fn ray_and_projection_agree() {
        let c = cam();
        let (o, d) = c.ray(10.5, 40.25);
        let p = o + d * 1.7;
        let (x, y, z) = c.project(p).unwrap();
        assert!((x - 10.5).abs() < 1e-9 && (y - 40.25).abs() < 1e-9 && (z - 1.7).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = cam();
        let p = Vec3::new(0.1, -0.2, 0.3);
        let (jx, jy) = c.project_jacobian(p);
        let h = 1e-6;
        for a in 0..3 {
            let mut pp = p;
            pp[a] += h;
            let mut pm = p;
            pm[a] -= h;
            let (xp, yp, _) = c.project(pp).unwrap();
            let (xm, ym, _) = c.project(pm).unwrap();
            assert!(((xp - xm) / (2.0 * h) - jx[a]).abs() < 1e-5);
            assert!(((yp - ym) / (2.0 * h) - jy[a]).abs() < 1e-5);
        }
    }

    #[test]
    fn camera_space_faces_minus_z() {
        let c = cam();
        let towards_camera = (c.eye - c.target).normalize();
        let n = c.to_camera(towards_camera);
        assert!((n.z - 1.0).abs() < 1e-12);
        let back = c.from_camera(n);
        assert!((back - towards_camera).norm() < 1e-12);
    }

    #[test]
    fn invalid_cameras() {
        let mut c = cam();
        c.vertical_fov = 0.0;
        assert!(c.validate().is_err());
        let mut c = cam();
        c.target = c.eye;
        assert!(c.validate().is_err());
    }
}
