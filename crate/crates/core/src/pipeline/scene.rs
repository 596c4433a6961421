use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::guidance::Attributes;
use crate::mesh::{icosphere, load_mesh, save_mesh, TriMesh};
use crate::render::image::{load_png, load_raw, normals_to_rgb, save_png, save_raw};
use crate::render::{rasterize, Camera, Image, PixelSource, RasterOptions};
use crate::scalar::Real;

pub const SCENE_FILE: &str = "scene.json";

/// A view by eye, target and vertical field of view in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub fov_deg: f64,
}

impl ViewSpec {
    pub fn camera<T: Real>(&self, width: usize, height: usize) -> Camera<T> {
        let mut cam =
            Camera::look_at(Vec3::from_f64(self.eye), Vec3::from_f64(self.target), T::lit(self.fov_deg.to_radians()), width, height);
        let d = [self.eye[0] - self.target[0], self.eye[1] - self.target[1], self.eye[2] - self.target[2]];
        let horiz = (d[0] * d[0] + d[2] * d[2]).sqrt();
        cam.azimuth = T::lit(d[0].atan2(d[2]));
        cam.elevation = T::lit(d[1].atan2(horiz));
        cam
    }
}

/// On-disk layout of a scene directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub image: String,
    pub mask: String,
    pub normal_front: String,
    pub normal_back: String,
    pub template: String,
    #[serde(default)]
    pub canonical: Option<String>,
    pub attributes: String,
    pub head_keypoint: [f64; 3],
    pub view: ViewSpec,
    pub back_view: ViewSpec,
    /// Ground-truth surface, present for synthetic scenes.
    #[serde(default)]
    pub truth: Option<String>,
}

/// Observations and priors for one subject.
#[derive(Debug, Clone)]
pub struct SceneInput<T> {
    pub image: Image<T>,
    /// Binary foreground, one channel.
    pub mask: Image<T>,
    /// Camera-space normals seen from the input and the opposite view.
    pub normal_front: Image<T>,
    pub normal_back: Image<T>,
    pub template: TriMesh<T>,
    /// Canonical-pose mesh in 1:1 vertex correspondence with the posed mesh.
    pub canonical: Option<TriMesh<T>>,
    pub attributes: Attributes,
    pub head_keypoint: Vec3<T>,
    pub view: ViewSpec,
    pub back_view: ViewSpec,
}

fn load_image<T: Real>(path: &Path, channels: usize) -> Result<Image<T>> {
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path, channels)?,
        _ => load_raw(path)?,
    };
    if img.channels != channels {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} channels, expected {channels}",
            path.display(),
            img.channels
        )));
    }
    Ok(img)
}

impl<T: Real> SceneInput<T> {
    pub fn camera(&self) -> Camera<T> {
        self.view.camera(self.image.width, self.image.height)
    }

    pub fn back_camera(&self) -> Camera<T> {
        self.back_view.camera(self.image.width, self.image.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.channels != 3 || self.mask.channels != 1 {
            return Err(Error::DimensionMismatch("scene image must be RGB and mask single-channel".into()));
        }
        for (name, img) in [("mask", &self.mask), ("normal_front", &self.normal_front), ("normal_back", &self.normal_back)] {
            if img.width != self.image.width || img.height != self.image.height {
                return Err(Error::DimensionMismatch(format!("{name} size differs from the input image")));
            }
        }
        for (name, n) in [("normal_front", &self.normal_front), ("normal_back", &self.normal_back)] {
            if n.channels != 3 {
                return Err(Error::DimensionMismatch(format!("{name} must have 3 channels")));
            }
        }
        for i in 0..self.mask.num_pixels() {
            if self.mask.data[i] < T::half() {
                continue;
            }
            let v = self.normal_front.pixel(i);
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().as_f64();
            if (len - 1.0).abs() > 1e-3 {
                return Err(Error::Precondition(format!("front normal at pixel {i} is not unit (length {len})")));
            }
        }
        if self.template.is_empty() {
            return Err(Error::EmptyMesh("template"));
        }
        if self.canonical.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(Error::EmptyMesh("canonical"));
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(SCENE_FILE);
        let text = fs::read_to_string(&path)?;
        let m: SceneManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
        let scene = Self {
            image: load_image(&dir.join(&m.image), 3)?,
            mask: load_image(&dir.join(&m.mask), 1)?,
            normal_front: load_image(&dir.join(&m.normal_front), 3)?,
            normal_back: load_image(&dir.join(&m.normal_back), 3)?,
            template: load_mesh(dir.join(&m.template))?,
            canonical: m.canonical.as_ref().map(|c| load_mesh(dir.join(c))).transpose()?,
            attributes: Attributes::load(dir.join(&m.attributes))?,
            head_keypoint: Vec3::from_f64(m.head_keypoint),
            view: m.view,
            back_view: m.back_view,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Write the scene with exact raw buffers, PNG previews and a manifest.
    pub fn save(&self, dir: impl AsRef<Path>, truth: Option<&TriMesh<T>>) -> Result<SceneManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_raw(&self.image, dir.join("image.raw"))?;
        save_raw(&self.mask, dir.join("mask.raw"))?;
        save_raw(&self.normal_front, dir.join("normal_front.raw"))?;
        save_raw(&self.normal_back, dir.join("normal_back.raw"))?;
        save_png(&self.image, dir.join("image.png"))?;
        save_png(&self.mask, dir.join("mask.png"))?;
        save_png(&normals_to_rgb(&self.normal_front), dir.join("normal_front.png"))?;
        save_png(&normals_to_rgb(&self.normal_back), dir.join("normal_back.png"))?;
        save_mesh(&self.template, dir.join("template.obj"))?;
        if let Some(c) = &self.canonical {
            save_mesh(c, dir.join("canonical.obj"))?;
        }
        if let Some(t) = truth {
            save_mesh(t, dir.join("gt.obj"))?;
        }
        fs::write(dir.join("attributes.json"), serde_json::to_string_pretty(&self.attributes)?)?;
        let manifest = SceneManifest {
            image: "image.raw".into(),
            mask: "mask.raw".into(),
            normal_front: "normal_front.raw".into(),
            normal_back: "normal_back.raw".into(),
            template: "template.obj".into(),
            canonical: self.canonical.as_ref().map(|_| "canonical.obj".into()),
            attributes: "attributes.json".into(),
            head_keypoint: self.head_keypoint.to_f64(),
            view: self.view,
            back_view: self.back_view,
            truth: truth.map(|_| "gt.obj".into()),
        };
        fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Path of the ground-truth mesh of a scene directory, if it has one.
pub fn scene_truth_path(dir: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    let dir = dir.as_ref();
    let path = dir.join(SCENE_FILE);
    let m: SceneManifest = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
    Ok(m.truth.map(|t| dir.join(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Sphere,
    Capsule,
    SphereWithBump,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "capsule" => Ok(Shape::Capsule),
            "sphere-with-bump" => Ok(Shape::SphereWithBump),
            other => Err(Error::Config(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    /// Smoothly varying colour.
    Smooth,
    /// Same pattern with equal channels.
    Grayscale,
}

impl FromStr for Texture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Texture::Smooth),
            "grayscale" => Ok(Texture::Grayscale),
            other => Err(Error::Config(format!("unknown texture {other:?}"))),
        }
    }
}

impl Texture {
    pub fn color(self, p: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = p;
        match self {
            Texture::Smooth => [
                0.5 + 0.35 * (7.0 * x + 0.3).sin(),
                0.5 + 0.35 * (5.0 * y + 1.1).sin(),
                0.5 + 0.35 * (6.0 * z + 0.4).cos(),
            ],
            Texture::Grayscale => {
                let g = 0.5 + 0.3 * (7.0 * x).sin() * (5.0 * y + 0.5).cos();
                [g; 3]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOptions {
    pub shape: Shape,
    pub texture: Texture,
    pub resolution: usize,
    pub background: [f64; 3],
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { shape: Shape::Sphere, texture: Texture::Smooth, resolution: 128, background: [1.0; 3] }
    }
}

pub const SYNTH_RADIUS: f64 = 0.3;
pub const SYNTH_TEMPLATE_RADIUS: f64 = 0.27;
const BUMP_HEIGHT: f64 = 0.05;
const BUMP_WIDTH: f64 = 0.35;
const CAPSULE_RADIUS: f64 = 0.15;
const VIEW_DISTANCE: f64 = 1.2;

/// Ground-truth surface of a synthetic shape.
pub fn synth_mesh<T: Real>(shape: Shape) -> TriMesh<T> {
    let unit = icosphere::<f64>(5, 1.0);
    let bump_dir = [0.0, 0.5f64.sin(), 0.5f64.cos()];
    let m = unit.map_vertices(|v| match shape {
        Shape::Sphere => v * SYNTH_RADIUS,
        Shape::Capsule => {
            // hemispheres pulled apart along y; equator vertices stay put
            let shift = if v.y > 0.0 {
                1.0
            } else if v.y < 0.0 {
                -1.0
            } else {
                0.0
            };
            v * CAPSULE_RADIUS + Vec3::new(0.0, shift * (SYNTH_RADIUS - CAPSULE_RADIUS), 0.0)
        }
        Shape::SphereWithBump => {
            let c = (v.x * bump_dir[0] + v.y * bump_dir[1] + v.z * bump_dir[2]).clamp(-1.0, 1.0);
            let a = c.acos();
            v * (SYNTH_RADIUS + BUMP_HEIGHT * (-(a * a) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp())
        }
    });
    m.cast()
}

/// Render ground truth for `shape` at the front view and assemble a scene
/// whose template is a smaller plain sphere.
pub fn synth_scene<T: Real>(opts: &SynthOptions) -> Result<(SceneInput<T>, TriMesh<T>)> {
    if opts.resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let truth = synth_mesh::<T>(opts.shape);
    let view = ViewSpec { eye: [0.0, 0.0, VIEW_DISTANCE], target: [0.0; 3], fov_deg: 60.0 };
    let back_view = ViewSpec { eye: [0.0, 0.0, -VIEW_DISTANCE], target: [0.0; 3], fov_deg: 60.0 };
    let (w, h) = (opts.resolution, opts.resolution);
    let raster = RasterOptions::default();
    let front = rasterize(&truth, &view.camera(w, h), &raster);
    let back = rasterize(&truth, &back_view.camera(w, h), &raster);
    let image = shade_albedo(&front, |p| opts.texture.color(p), opts.background);
    let attributes = Attributes { gender: Some("person".into()), ..Default::default() };
    let scene = SceneInput {
        image,
        mask: front.hard_mask(),
        normal_front: front.normal_raw.clone(),
        normal_back: back.normal_raw.clone(),
        template: icosphere(4, T::lit(SYNTH_TEMPLATE_RADIUS)),
        canonical: None,
        attributes,
        head_keypoint: Vec3::new(T::zero(), T::lit(0.25), T::zero()),
        view,
        back_view,
    };
    scene.validate()?;
    Ok((scene, truth))
}

/// Composite an analytic albedo over `background` with the soft mask, the
/// same way field albedo is composited.
pub fn shade_albedo<T: Real>(
    buf: &crate::render::RenderBuffers<T>,
    color: impl Fn([f64; 3]) -> [f64; 3],
    background: [f64; 3],
) -> Image<T> {
    let (w, h) = (buf.width(), buf.height());
    let mut img = Image::new(w, h, 3);
    for i in 0..w * h {
        let m = buf.mask.data[i].as_f64();
        let c = if buf.source[i] == PixelSource::Background {
            background
        } else {
            let q = buf.position.pixel(i);
            color([q[0].as_f64(), q[1].as_f64(), q[2].as_f64()])
        };
        for k in 0..3 {
            img.data[3 * i + k] = T::lit(c[k] * m + background[k] * (1.0 - m));
        }
    }
    img
}
