use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::StageConfig;
use super::scene::SceneInput;
use super::{iteration_rng, should_checkpoint, IterationRecord, Monitor, Stage};
use crate::error::{Error, Result};
use crate::field::{fit_to_sdf, AdamConfig, AdamState, FieldNet, FitReport};
use crate::geom::Vec3;
use crate::guidance::{classify_view, compose_prompt, sds_gradient, ScoreProvider};
use crate::losses::{lambda_norm_schedule, normal_reg_loss, silhouette_loss, LossReport};
use crate::mesh::{decimate, dilate, laplacian_energy_and_grad, sample_surface, signed_distance};
use crate::mesh::{DecimateOptions, SignedDistanceSample, TriMesh};
use crate::mt::{marching_tet, mt_backward};
use crate::render::{rasterize, rasterize_backward, Image, RasterOptions, RenderBuffers, RenderUpstream};
use crate::sampler::sample_camera;
use crate::scalar::Real;
use crate::tet::{build_shell_grid, mark_surface_tets, subdivide_surface, TetGrid};

/// Everything the geometry loop carries between iterations.
#[derive(Debug, Clone)]
pub struct GeometryState<T> {
    pub net: FieldNet<T>,
    pub adam: AdamState,
    pub grid: TetGrid<T>,
    /// Learnable constant behind the normal renders.
    pub normal_background: [f64; 3],
    pub background_adam: AdamState,
    /// Next iteration to run.
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct InitReport {
    pub shell_faces: usize,
    pub grid_vertices: usize,
    pub grid_tets: usize,
    pub fit: FitReport,
}

#[derive(Debug, Clone)]
pub struct GeometryOutcome<T> {
    pub state: GeometryState<T>,
    pub mesh: TriMesh<T>,
    pub records: Vec<IterationRecord>,
}

/// Dilate the template and decimate the result.
pub fn build_shell<T: Real>(template: &TriMesh<T>, cfg: &StageConfig) -> Result<TriMesh<T>> {
    let grown = dilate(template, T::lit(cfg.shell.offset))?;
    decimate(&grown, cfg.shell.decimate, &DecimateOptions::default())
}

/// Template SDF samples: most in a band around the template, the rest
/// uniform over the volume of the shell grid, plus every grid vertex.
pub fn init_samples<T: Real, R: Rng + ?Sized>(
    body: &TriMesh<T>,
    grid: &TetGrid<T>,
    cfg: &StageConfig,
    rng: &mut R,
) -> Result<Vec<SignedDistanceSample<T>>> {
    if grid.num_tets() == 0 {
        return Err(Error::EmptyShell);
    }
    let n = cfg.init.samples;
    let n_uniform = (n as f64 * cfg.init.uniform_fraction).round() as usize;
    let n_near = n - n_uniform;
    let normals: Vec<Vec3<T>> = (0..body.faces.len()).map(|f| body.face_cross(f).try_normalize().unwrap_or(Vec3::zero())).collect();
    let mut points: Vec<Vec3<T>> = sample_surface(body, n_near, rng)
        .into_iter()
        .map(|(p, f)| p + normals[f] * T::lit(rng.random_range(-cfg.init.band..=cfg.init.band)))
        .collect();
    let mut cdf = Vec::with_capacity(grid.num_tets());
    let mut total = 0.0;
    for t in 0..grid.num_tets() {
        total += grid.tet_volume(t).as_f64().abs();
        cdf.push(total);
    }
    for _ in 0..n_uniform {
        let u = rng.random::<f64>() * total;
        let t = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        // uniform barycentric coordinates from normalized exponentials
        let e: [f64; 4] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
        let s: f64 = e.iter().sum();
        let c = grid.corners(t);
        let mut p = Vec3::zero();
        for k in 0..4 {
            p += c[k] * T::lit(e[k] / s);
        }
        points.push(p);
    }
    // the grid vertices are where marching tets reads the sign
    points.extend_from_slice(&grid.vertices);
    Ok(signed_distance(body, &points))
}

/// Shell grid plus a geometry field fitted to the template SDF.
pub fn init_geometry<T: Real>(template: &TriMesh<T>, cfg: &StageConfig) -> Result<(GeometryState<T>, InitReport)> {
    cfg.validate()?;
    if template.is_empty() {
        return Err(Error::EmptyMesh("template"));
    }
    let shell = build_shell(template, cfg)?;
    let grid = build_shell_grid(&shell, cfg.grid_resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = init_samples(template, &grid, cfg, &mut rng)?;
    let mut net = FieldNet::new(cfg.geometry_field.clone(), &mut rng)?;
    let fit = fit_to_sdf(&mut net, &samples, &cfg.init.fit, rng.next_u64())?;
    let report = InitReport { shell_faces: shell.num_faces(), grid_vertices: grid.num_vertices(), grid_tets: grid.num_tets(), fit };
    let n = net.num_params();
    let state = GeometryState {
        net,
        adam: AdamState::new(cfg.geometry_adam, n),
        grid,
        normal_background: cfg.raster.normal_background,
        background_adam: AdamState::new(background_adam(cfg.geometry_adam), 3),
        iteration: 0,
    };
    Ok((state, report))
}

pub(crate) fn background_adam(c: AdamConfig) -> AdamConfig {
    AdamConfig { weight_decay: 0.0, ..c }
}

/// Isosurface of the field on the grid.
pub fn extract_mesh<T: Real>(net: &FieldNet<T>, grid: &TetGrid<T>) -> Result<TriMesh<T>> {
    let sdf = net.forward(&grid.vertices);
    Ok(marching_tet(grid, &sdf)?.mesh)
}

fn image_from<T: Real>(src: &Image<T>, scale: f64) -> Image<T> {
    src.map(|v| v * T::lit(scale))
}

fn accumulate<T: Real>(dst: &mut [Vec3<T>], src: &[Vec3<T>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Pixels where both the target and the render show the surface.
fn normal_valid<T: Real>(target_mask: &Image<T>, buf: &RenderBuffers<T>) -> Vec<bool> {
    (0..buf.face_id.len()).map(|i| target_mask.data[i] >= T::half() && buf.face_id[i] >= 0).collect()
}

fn add_background<T: Real>(acc: &mut [f64; 3], g: Vec3<T>) {
    for (a, v) in acc.iter_mut().zip(g.to_f64()) {
        *a += v;
    }
}

/// Run the geometry loop from `state.iteration` to `t_coarse + t_fine`,
/// subdividing the grid once the coarse phase ends.
pub fn run_geometry_stage<T: Real>(
    scene: &SceneInput<T>,
    mut state: GeometryState<T>,
    cfg: &StageConfig,
    provider: &dyn ScoreProvider,
    monitor: &mut dyn Monitor<T>,
) -> Result<GeometryOutcome<T>> {
    cfg.validate()?;
    scene.validate()?;
    let total = cfg.t_coarse + cfg.t_fine;
    let sampler = cfg.sampler_for(scene.head_keypoint.to_f64());
    let cam_in = scene.camera();
    let cam_back = scene.back_camera();
    let w = cfg.weights;
    let mut records = Vec::new();

    while state.iteration < total {
        let it = state.iteration;
        if it == cfg.t_coarse && cfg.t_fine > 0 && state.grid.level == 0 {
            let sdf = state.net.forward(&state.grid.vertices);
            let marked = mark_surface_tets(state.grid.clone(), &sdf)?;
            state.grid = subdivide_surface(&marked);
            log::info!("subdivided grid: {} vertices, {} tets", state.grid.num_vertices(), state.grid.num_tets());
        }
        let mut rng = iteration_rng(cfg.seed, Stage::Geometry, it);
        let raster = RasterOptions { normal_background: state.normal_background, ..cfg.raster };

        let cache = state.net.forward_cached(&state.grid.vertices);
        let sdf: Vec<T> = cache.outputs.iter().map(|&s| T::lit(s)).collect();
        let mt = marching_tet(&state.grid, &sdf)?;
        let mesh = &mt.mesh;
        if mesh.is_empty() {
            monitor.geometry_checkpoint(&state)?;
            return Err(Error::DivergenceDetected { iteration: it, what: "surface vanished".into() });
        }

        let mut report = LossReport::new();
        let mut grad_v = vec![Vec3::zero(); mesh.vertices.len()];
        let mut grad_bg = [0.0; 3];
        let lambda_norm = lambda_norm_schedule(it, cfg.t_coarse, cfg.t_fine, w.lambda_norm_base)?;

        // input view: silhouette and front normals
        let buf = rasterize(mesh, &cam_in, &raster);
        let sil = silhouette_loss(&buf.mask, &scene.mask)?;
        report.add("sil", w.lambda_sil, sil.value);
        let front = normal_reg_loss(&buf.normal, &scene.normal_front, &normal_valid(&scene.mask, &buf))?;
        report.add("norm_front", lambda_norm, front.value);
        let (gm, gn) = (image_from(&sil.grad, w.lambda_sil), image_from(&front.grad, lambda_norm));
        let g = rasterize_backward(&buf, mesh, &RenderUpstream { mask: Some(&gm), normal: Some(&gn), position: None })?;
        accumulate(&mut grad_v, &g.vertices);
        add_background(&mut grad_bg, g.normal_background);

        // opposite view: back normals
        let buf = rasterize(mesh, &cam_back, &raster);
        let back_mask = normal_coverage(&scene.normal_back);
        let back = normal_reg_loss(&buf.normal, &scene.normal_back, &normal_valid(&back_mask, &buf))?;
        report.add("norm_back", lambda_norm, back.value);
        let gn = image_from(&back.grad, lambda_norm);
        let g = rasterize_backward(&buf, mesh, &RenderUpstream { mask: None, normal: Some(&gn), position: None })?;
        accumulate(&mut grad_v, &g.vertices);
        add_background(&mut grad_bg, g.normal_background);

        // guidance on a sampled view of the normal render
        let view = sample_camera::<T, _>(&sampler, &mut rng);
        let buf = rasterize(mesh, &view.camera, &raster);
        let cond = compose_prompt(&scene.attributes, &cfg.identifier, &view.camera, view.is_face, true)?;
        let shaded = buf.normal.map(|v| (v + T::one()) * T::half());
        let sds = match sds_gradient(&shaded, &cond, provider, &cfg.schedule, it as u64, rng.next_u64()) {
            Err(e @ Error::DivergenceDetected { .. }) => {
                monitor.geometry_checkpoint(&state)?;
                return Err(e);
            }
            r => r?,
        };
        let sq: f64 = sds.grad.data.iter().map(|g| g.as_f64().powi(2)).sum();
        report.add("sds", w.lambda_sds, 0.5 * sq);
        if sq > 0.0 {
            let gn = image_from(&sds.grad, 0.5 * w.lambda_sds);
            let g = rasterize_backward(&buf, mesh, &RenderUpstream { mask: None, normal: Some(&gn), position: None })?;
            accumulate(&mut grad_v, &g.vertices);
            add_background(&mut grad_bg, g.normal_background);
        }

        // smoothness, averaged over vertices
        let (lap, lap_grad) = laplacian_energy_and_grad(mesh);
        let nv = T::lit(mesh.vertices.len() as f64);
        report.add("lap", w.lambda_lap, lap.as_f64() / nv.as_f64());
        for (d, s) in grad_v.iter_mut().zip(&lap_grad) {
            *d += *s * (T::lit(w.lambda_lap) / nv);
        }

        report.mark_target("geometry_field");
        report.mark_target("normal_background");
        let finite = report.is_finite() && grad_v.iter().all(|g| g.is_finite()) && grad_bg.iter().all(|g| g.is_finite());
        if !finite {
            monitor.geometry_checkpoint(&state)?;
            return Err(Error::DivergenceDetected { iteration: it, what: format!("non-finite loss {:?}", report.terms) });
        }

        let sdf_grad = mt_backward(&mt, &grad_v)?;
        state.net.backward(&cache, &sdf_grad)?;
        let (p, g) = state.net.params_and_grads_mut();
        state.adam.step(p, g)?;
        state.background_adam.step(&mut state.normal_background, &mut grad_bg)?;

        let record = IterationRecord {
            stage: Stage::Geometry,
            iteration: it,
            losses: report,
            view: classify_view(&view.camera),
            face: view.is_face,
            t: sds.t,
            vertices: mesh.num_vertices(),
            faces: mesh.num_faces(),
            saturation: None,
        };
        monitor.iteration(&record)?;
        records.push(record);
        state.iteration += 1;
        if should_checkpoint(cfg.checkpoint_every, state.iteration, total) {
            monitor.geometry_checkpoint(&state)?;
        }
    }
    let mesh = extract_mesh(&state.net, &state.grid)?;
    Ok(GeometryOutcome { state, mesh, records })
}

/// Pixels of a normal map that hold a normal rather than background zeros.
fn normal_coverage<T: Real>(normals: &Image<T>) -> Image<T> {
    Image::from_fn(normals.width, normals.height, 1, |x, y, _| {
        let n = [0, 1, 2].map(|c| normals.get(x, y, c).as_f64());
        if n[0] * n[0] + n[1] * n[1] + n[2] * n[2] > 0.25 {
            T::one()
        } else {
            T::zero()
        }
    })
}
