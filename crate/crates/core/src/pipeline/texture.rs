use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::StageConfig;
use super::geometry::background_adam;
use super::scene::SceneInput;
use super::{iteration_rng, should_checkpoint, IterationRecord, Monitor, Stage};
use crate::error::{Error, Result};
use crate::field::{AdamState, FieldNet};
use crate::geom::Vec3;
use crate::guidance::{classify_view, compose_prompt, sds_gradient, ScoreProvider};
use crate::losses::{chamfer_rgb_loss, occlusion_recon_loss, LossReport};
use crate::mesh::TriMesh;
use crate::render::{
    albedo_backward, query_albedo, rasterize, visibility_from_buffers, AlbedoRender, Image, PixelSource, RenderBuffers,
    VISIBILITY_EPS,
};
use crate::sampler::sample_camera;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct TextureState<T> {
    pub net: FieldNet<T>,
    pub adam: AdamState,
    /// Learnable constant colour behind the albedo renders.
    pub background: [f64; 3],
    pub background_adam: AdamState,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct TextureOutcome<T> {
    pub state: TextureState<T>,
    /// Final albedo render at the input view.
    pub input_render: Image<T>,
    pub records: Vec<IterationRecord>,
}

/// Randomly initialized colour field.
pub fn init_texture<T: Real>(cfg: &StageConfig) -> Result<TextureState<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ Stage::Texture.salt());
    let net = FieldNet::new(cfg.color_field.clone(), &mut rng)?;
    let n = net.num_params();
    Ok(TextureState {
        net,
        adam: AdamState::new(cfg.texture_adam, n),
        background: [1.0; 3],
        background_adam: AdamState::new(background_adam(cfg.texture_adam), 3),
        iteration: 0,
    })
}

/// Pixels where the input image shows a point of the mesh that the input
/// camera actually sees: foreground in the scene mask, hit by a triangle,
/// and not occluded.
pub fn occlusion_mask<T: Real>(scene_mask: &Image<T>, buf: &RenderBuffers<T>, mesh: &TriMesh<T>) -> Result<Image<T>> {
    scene_mask.check_shape(&buf.mask)?;
    let n = buf.face_id.len();
    let hits: Vec<usize> = (0..n).filter(|&i| matches!(buf.source[i], PixelSource::Face(_))).collect();
    let points: Vec<Vec3<T>> = hits
        .iter()
        .map(|&i| {
            let q = buf.position.pixel(i);
            Vec3::new(q[0], q[1], q[2])
        })
        .collect();
    let visible = visibility_from_buffers(buf, mesh, &points, T::lit(VISIBILITY_EPS));
    let mut occ = Image::new(buf.width(), buf.height(), 1);
    for (&i, v) in hits.iter().zip(visible) {
        if v && scene_mask.data[i] >= T::half() {
            occ.data[i] = T::one();
        }
    }
    Ok(occ)
}

/// Mean HSV saturation over the covered pixels of an RGB render.
pub fn saturation<T: Real>(img: &Image<T>, buf: &RenderBuffers<T>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..buf.face_id.len() {
        if !buf.is_covered(i) {
            continue;
        }
        let p = img.pixel(i);
        let (r, g, b) = (p[0].as_f64(), p[1].as_f64(), p[2].as_f64());
        let hi = r.max(g).max(b);
        let lo = r.min(g).min(b);
        sum += if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn covered_colors<T: Real>(img: &Image<T>, pixels: &[usize]) -> Vec<Vec3<T>> {
    pixels
        .iter()
        .map(|&i| {
            let p = img.pixel(i);
            Vec3::new(p[0], p[1], p[2])
        })
        .collect()
}

fn render_albedo<T: Real>(
    net: &FieldNet<T>,
    buf: &RenderBuffers<T>,
    mesh: &TriMesh<T>,
    canonical: Option<&TriMesh<T>>,
    bg: [f64; 3],
) -> Result<AlbedoRender<T>> {
    query_albedo(net, buf, mesh, canonical.map(|c| c.vertices.as_slice()), Vec3::from_f64(bg))
}

/// Optimize the colour field against the input image, with guidance from
/// sampled views. When a canonical mesh is given the field lives in its
/// coordinates, and sampled views render it instead of `mesh` with
/// probability `p_pose`.
pub fn run_texture_stage<T: Real>(
    scene: &SceneInput<T>,
    mesh: &TriMesh<T>,
    canonical: Option<&TriMesh<T>>,
    mut state: TextureState<T>,
    cfg: &StageConfig,
    provider: &dyn ScoreProvider,
    monitor: &mut dyn Monitor<T>,
) -> Result<TextureOutcome<T>> {
    cfg.validate()?;
    scene.validate()?;
    if mesh.is_empty() {
        return Err(Error::EmptyMesh("texture mesh"));
    }
    if let Some(c) = canonical {
        if c.vertices.len() != mesh.vertices.len() || c.faces != mesh.faces {
            return Err(Error::CorrespondenceMismatch { mesh: mesh.vertices.len(), canonical: c.vertices.len() });
        }
    }
    let w = cfg.weights;
    let sampler = cfg.sampler_for(scene.head_keypoint.to_f64());
    let raster = cfg.raster;
    let input_buf = rasterize(mesh, &scene.camera(), &raster);
    let occ = occlusion_mask(&scene.mask, &input_buf, mesh)?;
    // pixels that are background in both images supervise the background colour
    let bg_mask = Image::from_fn(occ.width, occ.height, 1, |x, y, _| {
        let i = y * occ.width + x;
        if scene.mask.data[i] < T::half() && !input_buf.is_covered(i) {
            T::one()
        } else {
            T::zero()
        }
    });
    let has_bg = bg_mask.data.iter().any(|&v| v > T::zero());
    // fixed novel view for the saturation statistic
    let back_buf = rasterize(mesh, &scene.back_camera(), &raster);
    let input_pixels: Vec<usize> = (0..scene.mask.num_pixels()).filter(|&i| scene.mask.data[i] >= T::half()).collect();
    let input_colors = covered_colors(&scene.image, &input_pixels);
    let cd_start = cfg.t_texture - cfg.t_cd;
    let mut records = Vec::new();

    while state.iteration < cfg.t_texture {
        let it = state.iteration;
        let mut rng = iteration_rng(cfg.seed, Stage::Texture, it);
        let mut report = LossReport::new();
        let mut grad_bg = Vec3::<T>::zero();

        // reconstruction at the input view
        let render = render_albedo(&state.net, &input_buf, mesh, canonical, state.background)?;
        let recon = occlusion_recon_loss(&render.image, &scene.image, &occ, w.lambda_mse)?;
        report.add("recon", w.lambda_recon, recon.value);
        let mut g = recon.grad.map(|v| v * T::lit(w.lambda_recon));
        if has_bg {
            let bg = occlusion_recon_loss(&render.image, &scene.image, &bg_mask, w.lambda_mse)?;
            report.add("recon_bg", w.lambda_recon, bg.value);
            for (d, s) in g.data.iter_mut().zip(&bg.grad.data) {
                *d += *s * T::lit(w.lambda_recon);
            }
        }
        grad_bg += albedo_backward(&mut state.net, &render, &g)?;

        // guidance and colour chamfer on a sampled view
        let use_canonical = canonical.is_some() && rng.random::<f64>() < cfg.p_pose;
        let view = sample_camera::<T, _>(&sampler, &mut rng);
        let (view_mesh, query) = match (use_canonical, canonical) {
            (true, Some(c)) => (c, None),
            _ => (mesh, canonical),
        };
        let buf = rasterize(view_mesh, &view.camera, &raster);
        let render = render_albedo(&state.net, &buf, view_mesh, query, state.background)?;
        let cond = compose_prompt(&scene.attributes, &cfg.identifier, &view.camera, view.is_face, false)?;
        let sds = match sds_gradient(&render.image, &cond, provider, &cfg.schedule, it as u64, rng.next_u64()) {
            Err(e @ Error::DivergenceDetected { .. }) => {
                monitor.texture_checkpoint(&state)?;
                return Err(e);
            }
            r => r?,
        };
        let sq: f64 = sds.grad.data.iter().map(|g| g.as_f64().powi(2)).sum();
        report.add("sds", w.lambda_sds, 0.5 * sq);
        let mut g = sds.grad.map(|v| v * T::lit(w.lambda_sds));
        let mut touched = sq > 0.0;
        if it >= cd_start {
            let pixels: Vec<usize> = (0..buf.face_id.len()).filter(|&i| buf.is_covered(i)).collect();
            if !pixels.is_empty() && !input_colors.is_empty() {
                let cd = chamfer_rgb_loss(&covered_colors(&render.image, &pixels), &input_colors)?;
                report.add("cd", w.lambda_cd, cd.value.as_f64());
                let s = T::lit(w.lambda_cd);
                for (&i, d) in pixels.iter().zip(&cd.grad) {
                    let px = g.pixel_mut(i);
                    px[0] += d.x * s;
                    px[1] += d.y * s;
                    px[2] += d.z * s;
                }
                touched = true;
            }
        }
        if touched {
            grad_bg += albedo_backward(&mut state.net, &render, &g)?;
        }
        let sat = if it >= cd_start {
            let back = render_albedo(&state.net, &back_buf, mesh, canonical, state.background)?;
            Some(saturation(&back.image, &back_buf))
        } else {
            None
        };

        report.mark_target("color_field");
        report.mark_target("background");
        let mut gb = grad_bg.to_f64();
        if !report.is_finite() || !state.net.grads().iter().all(|g| g.is_finite()) || !gb.iter().all(|g| g.is_finite()) {
            state.net.zero_grads();
            monitor.texture_checkpoint(&state)?;
            return Err(Error::DivergenceDetected { iteration: it, what: format!("non-finite loss {:?}", report.terms) });
        }
        let (p, g) = state.net.params_and_grads_mut();
        state.adam.step(p, g)?;
        state.background_adam.step(&mut state.background, &mut gb)?;

        let record = IterationRecord {
            stage: Stage::Texture,
            iteration: it,
            losses: report,
            view: classify_view(&view.camera),
            face: view.is_face,
            t: sds.t,
            vertices: view_mesh.num_vertices(),
            faces: view_mesh.num_faces(),
            saturation: sat,
        };
        monitor.iteration(&record)?;
        records.push(record);
        state.iteration += 1;
        if should_checkpoint(cfg.checkpoint_every, state.iteration, cfg.t_texture) {
            monitor.texture_checkpoint(&state)?;
        }
    }
    let input_render = render_albedo(&state.net, &input_buf, mesh, canonical, state.background)?.image;
    Ok(TextureOutcome { state, input_render, records })
}
