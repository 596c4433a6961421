use super::image::Image;
use super::raster::{PixelSource, RenderBuffers};
use crate::error::{Error, Result};
use crate::field::{FieldCache, FieldNet};
use crate::geom::Vec3;
use crate::mesh::TriMesh;
use crate::scalar::Real;

/// Albedo image plus what is needed to push image gradients into the colour
/// field.
#[derive(Debug, Clone)]
pub struct AlbedoRender<T> {
    /// Field colour composited over the background with the soft mask.
    pub image: Image<T>,
    /// Field colour on surface pixels, zero elsewhere.
    pub raw: Image<T>,
    /// Query point per evaluated pixel.
    pub query_points: Vec<Vec3<T>>,
    pixels: Vec<usize>,
    mask: Vec<T>,
    cache: FieldCache,
}

impl<T: Real> AlbedoRender<T> {
    pub fn evaluated_pixels(&self) -> &[usize] {
        &self.pixels
    }
}

/// Evaluate the colour field at each surface pixel. With a correspondence,
/// the query point is the same barycentric blend of the corresponding
/// canonical vertices; without one it is the rendered position.
pub fn query_albedo<T: Real>(
    net: &FieldNet<T>,
    buffers: &RenderBuffers<T>,
    mesh: &TriMesh<T>,
    canonical: Option<&[Vec3<T>]>,
    background: Vec3<T>,
) -> Result<AlbedoRender<T>> {
    if !buffers.matches(mesh) {
        return Err(Error::StaleBuffers);
    }
    if let Some(c) = canonical {
        if c.len() != mesh.vertices.len() {
            return Err(Error::CorrespondenceMismatch { mesh: mesh.vertices.len(), canonical: c.len() });
        }
    }
    if net.output_dim() != 3 {
        return Err(Error::Precondition("albedo field must have 3 outputs".into()));
    }
    let n = buffers.face_id.len();
    let mut pixels = Vec::new();
    let mut points = Vec::new();
    for i in 0..n {
        if buffers.source[i] == PixelSource::Background {
            continue;
        }
        let p = match canonical {
            Some(c) => buffers.interpolate(i, c).expect("surface pixel"),
            None => {
                let q = buffers.position.pixel(i);
                Vec3::new(q[0], q[1], q[2])
            }
        };
        pixels.push(i);
        points.push(p);
    }
    let cache = net.forward_cached(&points);
    let (w, h) = (buffers.width(), buffers.height());
    let mut raw = Image::new(w, h, 3);
    let mut image = Image::new(w, h, 3);
    for i in 0..n {
        image.pixel_mut(i).copy_from_slice(&[background.x, background.y, background.z]);
    }
    for (k, &i) in pixels.iter().enumerate() {
        let m = buffers.mask.data[i];
        for c in 0..3 {
            let a = T::lit(cache.outputs[3 * k + c]);
            raw.data[3 * i + c] = a;
            image.data[3 * i + c] = a * m + background[c] * (T::one() - m);
        }
    }
    Ok(AlbedoRender { image, raw, query_points: points, pixels, mask: buffers.mask.data.clone(), cache })
}

/// Accumulate field parameter gradients for `grad` (on the composited image)
/// and return the background colour gradient.
pub fn albedo_backward<T: Real>(net: &mut FieldNet<T>, render: &AlbedoRender<T>, grad: &Image<T>) -> Result<Vec3<T>> {
    render.image.check_shape(grad)?;
    let mut up = Vec::with_capacity(3 * render.pixels.len());
    for &i in &render.pixels {
        let m = render.mask[i];
        for c in 0..3 {
            up.push(grad.data[3 * i + c] * m);
        }
    }
    if !render.pixels.is_empty() {
        net.backward(&render.cache, &up)?;
    }
    let mut g_bg = Vec3::zero();
    for (i, &m) in render.mask.iter().enumerate() {
        let g = Vec3::new(grad.data[3 * i], grad.data[3 * i + 1], grad.data[3 * i + 2]);
        g_bg += g * (T::one() - m);
    }
    Ok(g_bg)
}
