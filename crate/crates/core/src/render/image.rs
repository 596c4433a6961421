//! Multi-channel float images, a raw little-endian container and PNG previews.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape<U>(&self, other: &Image<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

const MAGIC: &[u8; 8] = b"RAWIMG\0\0";
const VERSION: u32 = 1;

pub fn write_raw<T: Real, W: Write>(img: &Image<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, img.width as u32, img.height as u32, img.channels as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in &img.data {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw<T: Real, R: Read>(mut r: R) -> Result<Image<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse { path: "<raw image>".into(), message: "bad magic".into() });
    }
    let mut b4 = [0u8; 4];
    let mut hdr = [0u32; 4];
    for h in &mut hdr {
        r.read_exact(&mut b4)?;
        *h = u32::from_le_bytes(b4);
    }
    if hdr[0] != VERSION {
        return Err(Error::Parse { path: "<raw image>".into(), message: format!("unsupported version {}", hdr[0]) });
    }
    let (w, h, c) = (hdr[1] as usize, hdr[2] as usize, hdr[3] as usize);
    let mut data = Vec::with_capacity(w * h * c);
    for _ in 0..w * h * c {
        r.read_exact(&mut b4)?;
        data.push(T::lit(f32::from_le_bytes(b4) as f64));
    }
    Ok(Image { width: w, height: h, channels: c, data })
}

pub fn save_raw<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    write_raw(img, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_raw<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    read_raw(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// 8-bit preview. One channel is written as grey, three as RGB; values are
/// clamped to [0, 1].
pub fn save_png<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = img.data.iter().map(|&v| q(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path.as_ref())),
        3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path.as_ref())),
        c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
    };
    match res {
        Some(r) => r.map_err(|e| Error::Image(e.to_string())),
        None => Err(Error::Image("buffer size mismatch".into())),
    }
}

/// Load a PNG as floats in [0, 1] with 1 or 3 channels.
pub fn load_png<T: Real>(path: impl AsRef<Path>, channels: usize) -> Result<Image<T>> {
    let img = image::open(path.as_ref()).map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match channels {
        1 => img.to_luma8().into_raw().into_iter().map(|b| T::lit(b as f64 / 255.0)).collect(),
        3 => img.to_rgb8().into_raw().into_iter().map(|b| T::lit(b as f64 / 255.0)).collect(),
        c => return Err(Error::Image(format!("cannot read {c}-channel PNG"))),
    };
    Ok(Image { width: w, height: h, channels, data })
}

/// Map unit normals to RGB via `(n + 1) / 2`.
pub fn normals_to_rgb<T: Real>(img: &Image<T>) -> Image<T> {
    img.map(|v| (v + T::one()) * T::half())
}
