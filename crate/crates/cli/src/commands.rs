use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::{json, Value};
use tetra_recon::field::checkpoint::read_field;
use tetra_recon::guidance::{
    compose_prompt_for_view, AnalyticGaussianScore, Attributes, NullScore, RecordedScore, ScoreProvider, ScoreRecorder,
    ViewTag,
};
use tetra_recon::mesh::{load_mesh, save_mesh, TriMesh};
use tetra_recon::pipeline::{
    build_shell, eval_images, eval_meshes, extract_mesh, init_geometry, init_texture, load_geometry_checkpoint,
    load_texture_checkpoint, psnr, run_geometry_stage, run_texture_stage, ssim, synth_scene, RunDir, SceneInput,
    Stage, StageConfig, SynthOptions,
};
use tetra_recon::render::image::{load_png, load_raw, normals_to_rgb, save_png, save_raw};
use tetra_recon::render::{query_albedo, rasterize, Camera, Image};
use tetra_recon::sampler::orbit_camera;
use tetra_recon::{Real, Vec3};

use crate::{Cli, Command, GlobalArgs, Precision, ProviderKind, RenderMode};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable configuration: exit code 1.
    Usage(anyhow::Error),
    /// Anything failing after the inputs were accepted: exit code 2.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(anyhow!(msg.into()))
}

pub fn run(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(anyhow!("thread pool: {e}")))?;
    }
    match cli.global.precision {
        Precision::F32 => dispatch::<f32>(&cli.global, cli.command),
        Precision::F64 => dispatch::<f64>(&cli.global, cli.command),
    }
}

/// Desk or full-scale defaults, overlaid with the config file and the seed and
/// resolution flags.
fn resolve_config(g: &GlobalArgs) -> Result<StageConfig> {
    let base = if g.paper_scale { StageConfig::paper() } else { StageConfig::desk() };
    let mut cfg = match &g.config {
        None => base,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(CliError::Usage)?;
            let patch: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(CliError::Usage)?;
            let mut merged = serde_json::to_value(&base)?;
            merge(&mut merged, patch);
            serde_json::from_value(merged)
                .with_context(|| format!("invalid config {}", path.display()))
                .map_err(CliError::Usage)?
        }
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(r) = g.resolution {
        cfg.resolution = r;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.into()))?;
    Ok(cfg)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn require_out(g: &GlobalArgs) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| usage("--out is required for this command"))
}

fn provider(g: &GlobalArgs) -> Result<Box<dyn ScoreProvider>> {
    let inner: Box<dyn ScoreProvider> = match g.score_provider {
        ProviderKind::Null => Box::new(NullScore),
        ProviderKind::Gaussian => Box::new(AnalyticGaussianScore::constant(g.gaussian_target.clone())),
        ProviderKind::Recorded => {
            let dir = g.scores.as_ref().ok_or_else(|| usage("--score-provider recorded needs --scores DIR"))?;
            Box::new(RecordedScore::open(dir)?)
        }
    };
    Ok(match &g.record_scores {
        Some(dir) => Box::new(ScoreRecorder::create(inner, dir)?),
        None => inner,
    })
}

fn load_scene<T: Real>(dir: &Path) -> Result<SceneInput<T>> {
    SceneInput::load(dir).with_context(|| format!("loading scene {}", dir.display())).map_err(CliError::Runtime)
}

fn load_image<T: Real>(path: &Path, channels: usize) -> Result<Image<T>> {
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path, channels)?,
        _ => load_raw(path)?,
    };
    Ok(img)
}

fn dispatch<T: Real>(g: &GlobalArgs, command: Command) -> Result<Value> {
    match command {
        Command::InitShell { scene } => init_shell::<T>(g, &scene),
        Command::FitGeometry { scene, resume } => fit_geometry::<T>(g, &scene, resume),
        Command::FitTexture { scene, mesh, canonical, resume } => {
            fit_texture::<T>(g, &scene, mesh.as_deref(), canonical.as_deref(), resume)
        }
        Command::ExtractMesh { run } => extract::<T>(g, &run),
        Command::Render { mesh, mode, scene, azimuth, elevation, run } => {
            render::<T>(g, &mesh, mode, scene.as_deref(), azimuth, elevation, run.as_deref())
        }
        Command::SynthScene { shape, texture } => {
            let out = require_out(g)?;
            let opts = SynthOptions {
                shape: shape.parse().map_err(|e: tetra_recon::Error| CliError::Usage(e.into()))?,
                texture: texture.parse().map_err(|e: tetra_recon::Error| CliError::Usage(e.into()))?,
                resolution: g.resolution.unwrap_or(SynthOptions::default().resolution),
                ..Default::default()
            };
            let (scene, truth) = synth_scene::<T>(&opts)?;
            scene.save(out, Some(&truth))?;
            Ok(json!({
                "command": "synth-scene",
                "out": out,
                "shape": shape,
                "texture": texture,
                "resolution": opts.resolution,
                "truth_vertices": truth.num_vertices(),
                "truth_faces": truth.num_faces(),
            }))
        }
        Command::Eval { recon, truth, samples, image, reference } => {
            let mut report = Default::default();
            match (recon, truth) {
                (Some(r), Some(t)) => {
                    let r: TriMesh<T> = load_mesh(&r)?;
                    let t: TriMesh<T> = load_mesh(&t)?;
                    report = eval_meshes(&r, &t, samples)?;
                }
                (None, None) => {}
                _ => return Err(usage("--recon and --truth go together")),
            }
            match (image, reference) {
                (Some(a), Some(b)) => {
                    let a: Image<T> = load_image(&a, 3)?;
                    let b: Image<T> = load_image(&b, 3)?;
                    report = report.merge(eval_images(&[a], &[b])?);
                }
                (None, None) => {}
                _ => return Err(usage("--image and --reference go together")),
            }
            if report == Default::default() {
                return Err(usage("eval needs --recon/--truth or --image/--reference"));
            }
            let mut v = serde_json::to_value(report)?;
            v["command"] = json!("eval");
            Ok(v)
        }
        Command::ComposePrompt { attrs, view, face, normal, identifier } => {
            let a = Attributes::load(&attrs)?;
            let tag: ViewTag = view.parse().map_err(|e: tetra_recon::Error| CliError::Usage(e.into()))?;
            let cond = compose_prompt_for_view(&a, &identifier, tag, face, normal)?;
            Ok(json!({ "command": "compose-prompt", "prompt": cond.text(), "view": tag.as_str() }))
        }
        Command::Schema => {
            let schema = StageConfig::schema();
            match &g.out {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        std::fs::create_dir_all(dir)?;
                    }
                    std::fs::write(path, serde_json::to_string_pretty(&schema)? + "\n")?;
                    Ok(json!({ "command": "schema", "out": path }))
                }
                None => Ok(schema),
            }
        }
    }
}

/// Config of an existing run, or a new run created from the flags.
fn open_or_create<T>(g: &GlobalArgs, out: &Path, command: &str, fresh: bool) -> Result<(RunDir, StageConfig)> {
    if !fresh && out.join("config.json").is_file() {
        let run = RunDir::open(out)?;
        let cfg = match g.config {
            Some(_) => resolve_config(g)?,
            None => {
                let mut c = run.config()?;
                if let Some(s) = g.seed {
                    c.seed = s;
                }
                c
            }
        };
        return Ok((run, cfg));
    }
    let cfg = resolve_config(g)?;
    let run = RunDir::create::<T>(out, &cfg, command)?;
    Ok((run, cfg))
}

fn init_shell<T: Real>(g: &GlobalArgs, scene_dir: &Path) -> Result<Value> {
    let out = require_out(g)?;
    let cfg = resolve_config(g)?;
    let scene = load_scene::<T>(scene_dir)?;
    let run = RunDir::create::<T>(out, &cfg, "init-shell")?;
    let shell = build_shell(&scene.template, &cfg)?;
    let (state, report) = init_geometry(&scene.template, &cfg)?;
    let mesh = extract_mesh(&state.net, &state.grid)?;
    save_mesh(&shell, run.meshes().join("shell.obj"))?;
    save_mesh(&mesh, run.meshes().join("init.obj"))?;
    run.save_geometry(&state)?;
    Ok(json!({
        "command": "init-shell",
        "out": out,
        "shell_faces": report.shell_faces,
        "grid_vertices": report.grid_vertices,
        "grid_tets": report.grid_tets,
        "fit_rms": report.fit.final_rms,
        "mesh_vertices": mesh.num_vertices(),
        "mesh_faces": mesh.num_faces(),
    }))
}

fn fit_geometry<T: Real>(g: &GlobalArgs, scene_dir: &Path, resume: bool) -> Result<Value> {
    let out = require_out(g)?;
    let scene = load_scene::<T>(scene_dir)?;
    let (run, cfg) = open_or_create::<T>(g, out, "fit-geometry", !resume)?;
    let provider = provider(g)?;
    let state = if resume {
        let s = load_geometry_checkpoint::<T>(run.checkpoints(), &cfg)
            .context("resume needs a geometry checkpoint (run init-shell or fit-geometry first)")?;
        run.truncate_log(Stage::Geometry, s.iteration)?;
        s
    } else {
        init_geometry(&scene.template, &cfg)?.0
    };
    let start = state.iteration;
    let outcome = {
        let mut monitor = run.monitor()?;
        run_geometry_stage(&scene, state, &cfg, provider.as_ref(), &mut monitor)?
    };
    run.save_geometry(&outcome.state)?;
    let mesh_path = run.meshes().join("geometry.obj");
    save_mesh(&outcome.mesh, &mesh_path)?;
    let last = outcome.records.last().map(|r| r.losses.total);
    Ok(json!({
        "command": "fit-geometry",
        "out": out,
        "start_iteration": start,
        "iterations": outcome.state.iteration,
        "final_loss": last,
        "mesh": mesh_path,
        "vertices": outcome.mesh.num_vertices(),
        "faces": outcome.mesh.num_faces(),
        "score_provider": provider.name(),
    }))
}

fn fit_texture<T: Real>(
    g: &GlobalArgs,
    scene_dir: &Path,
    mesh: Option<&Path>,
    canonical: Option<&Path>,
    resume: bool,
) -> Result<Value> {
    let out = require_out(g)?;
    let scene = load_scene::<T>(scene_dir)?;
    let (run, cfg) = open_or_create::<T>(g, out, "fit-texture", false)?;
    let mesh_path: PathBuf = mesh.map(Path::to_path_buf).unwrap_or_else(|| run.meshes().join("geometry.obj"));
    let mesh: TriMesh<T> =
        load_mesh(&mesh_path).with_context(|| format!("loading mesh {}", mesh_path.display())).map_err(CliError::Runtime)?;
    let canonical: Option<TriMesh<T>> = match canonical {
        Some(p) => Some(load_mesh(p)?),
        None => scene.canonical.clone(),
    };
    let provider = provider(g)?;
    let state = if resume {
        let s = load_texture_checkpoint::<T>(run.checkpoints(), &cfg).context("resume needs a texture checkpoint")?;
        run.truncate_log(Stage::Texture, s.iteration)?;
        s
    } else {
        run.truncate_log(Stage::Texture, 0)?;
        init_texture::<T>(&cfg)?
    };
    let outcome = {
        let mut monitor = run.monitor()?;
        run_texture_stage(&scene, &mesh, canonical.as_ref(), state, &cfg, provider.as_ref(), &mut monitor)?
    };
    run.save_texture(&outcome.state)?;
    save_png(&outcome.input_render, run.renders().join("input_view.png"))?;
    save_raw(&outcome.input_render, run.renders().join("input_view.raw"))?;
    let p = psnr(&outcome.input_render, &scene.image)?;
    let s = ssim(&outcome.input_render, &scene.image)?;
    Ok(json!({
        "command": "fit-texture",
        "out": out,
        "iterations": outcome.state.iteration,
        "final_loss": outcome.records.last().map(|r| r.losses.total),
        "psnr": p,
        "ssim": s,
        "render": run.renders().join("input_view.png"),
        "score_provider": provider.name(),
    }))
}

fn extract<T: Real>(g: &GlobalArgs, run_dir: &Path) -> Result<Value> {
    let run = RunDir::open(run_dir).map_err(|e| CliError::Usage(e.into()))?;
    let cfg = run.config()?;
    let state = load_geometry_checkpoint::<T>(run.checkpoints(), &cfg)?;
    let mesh = extract_mesh(&state.net, &state.grid)?;
    let out = g.out.clone().unwrap_or_else(|| run.meshes().join("extracted.obj"));
    save_mesh(&mesh, &out)?;
    Ok(json!({
        "command": "extract-mesh",
        "out": out,
        "iteration": state.iteration,
        "vertices": mesh.num_vertices(),
        "faces": mesh.num_faces(),
        "watertight": mesh.is_watertight(),
    }))
}

fn orbit_view<T: Real>(mesh: &TriMesh<T>, azimuth: f64, elevation: f64, res: usize) -> Result<Camera<T>> {
    let (lo, hi) = mesh.bounds().ok_or_else(|| CliError::Runtime(anyhow!("mesh is empty")))?;
    let center = (lo + hi) * T::half();
    let radius = mesh.bbox_diagonal().as_f64() * 0.5;
    Ok(orbit_camera(center, center, 2.4 * radius, 0.0, azimuth, elevation, 60.0, res, res))
}

fn render<T: Real>(
    g: &GlobalArgs,
    mesh_path: &Path,
    mode: RenderMode,
    scene: Option<&Path>,
    azimuth: f64,
    elevation: f64,
    run: Option<&Path>,
) -> Result<Value> {
    let out = require_out(g)?;
    let mesh: TriMesh<T> = load_mesh(mesh_path)?;
    let camera = match scene {
        Some(dir) => {
            let s = load_scene::<T>(dir)?;
            match g.resolution {
                Some(r) => s.view.camera(r, r),
                None => s.camera(),
            }
        }
        None => orbit_view(&mesh, azimuth, elevation, g.resolution.unwrap_or(512))?,
    };
    let buf = rasterize(&mesh, &camera, &Default::default());
    let img = match mode {
        RenderMode::Normal => normals_to_rgb(&buf.normal_raw),
        RenderMode::Mask => buf.mask.clone(),
        RenderMode::Albedo => {
            let run = run.ok_or_else(|| usage("--mode albedo needs --run"))?;
            let file = std::fs::File::open(run.join("checkpoints").join("texture.field"))
                .context("run has no texture checkpoint")?;
            let (net, _) = read_field::<T, _>(std::io::BufReader::new(file))?;
            let extras: Value = serde_json::from_str(&std::fs::read_to_string(run.join("checkpoints/texture.json"))?)?;
            let bg: [f64; 3] = serde_json::from_value(extras["background"].clone())?;
            query_albedo(&net, &buf, &mesh, None, Vec3::from_f64(bg))?.image
        }
    };
    save_png(&img, out)?;
    Ok(json!({
        "command": "render",
        "out": out,
        "width": img.width,
        "height": img.height,
        "covered_pixels": buf.face_id.iter().filter(|&&f| f >= 0).count(),
    }))
}
