//! Software rasterizer with a soft silhouette and analytic gradients.

mod albedo;
mod camera;
pub mod image;
mod raster;

pub use albedo::{albedo_backward, query_albedo, AlbedoRender};
pub use camera::{Camera, Frame};
pub use image::Image;
pub use raster::{
    rasterize, rasterize_backward, visibility_from_buffers, visibility_mask, PixelSource, RasterOptions, RenderBuffers,
    RenderGradient, RenderUpstream, VISIBILITY_EPS,
};

#[cfg(test)]
mod tests;
