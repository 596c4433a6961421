//! Two-stage optimization (geometry, then texture), synthetic scenes,
//! evaluation metrics and run directories.

mod config;
mod eval;
mod geometry;
mod run;
mod scene;
mod texture;

pub use config::{InitConfig, ShellConfig, StageConfig};
pub use eval::{eval_images, eval_meshes, psnr, ssim, EvalReport, EVAL_AZIMUTHS};
pub use geometry::{
    build_shell, extract_mesh, init_geometry, init_samples, run_geometry_stage, GeometryOutcome, GeometryState, InitReport,
};
pub use run::{load_geometry_checkpoint, load_texture_checkpoint, Manifest, RunDir, RunMonitor};
pub use scene::{
    scene_truth_path, shade_albedo, synth_mesh, synth_scene, SceneInput, SceneManifest, Shape, SynthOptions, Texture,
    ViewSpec, SCENE_FILE, SYNTH_RADIUS, SYNTH_TEMPLATE_RADIUS,
};
pub use texture::{init_texture, occlusion_mask, run_texture_stage, saturation, TextureOutcome, TextureState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::guidance::ViewTag;
use crate::losses::LossReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Geometry,
    Texture,
}

impl Stage {
    fn salt(self) -> u64 {
        match self {
            Stage::Geometry => 0x6765_6f6d,
            Stage::Texture => 0x7465_7874,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub losses: LossReport,
    pub view: ViewTag,
    pub face: bool,
    /// Guidance timestep.
    pub t: f64,
    pub vertices: usize,
    pub faces: usize,
    /// Mean saturation of the back-view albedo render during the colour chamfer phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<f64>,
}

/// Receives progress from the stage loops.
pub trait Monitor<T> {
    fn iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }

    fn geometry_checkpoint(&mut self, _state: &GeometryState<T>) -> Result<()> {
        Ok(())
    }

    fn texture_checkpoint(&mut self, _state: &TextureState<T>) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoMonitor;

impl<T> Monitor<T> for NoMonitor {}

/// Keeps the records in memory.
#[derive(Debug, Default, Clone)]
pub struct RecordingMonitor {
    pub records: Vec<IterationRecord>,
}

impl<T> Monitor<T> for RecordingMonitor {
    fn iteration(&mut self, record: &IterationRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Random stream for one iteration, independent of every other iteration so
/// a resumed run draws the same numbers.
pub(crate) fn iteration_rng(seed: u64, stage: Stage, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.salt());
    rng.set_stream(iteration as u64);
    rng
}

pub(crate) fn should_checkpoint(every: usize, next: usize, end: usize) -> bool {
    next == end || (every > 0 && next % every == 0)
}
