use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::StageConfig;
use super::geometry::GeometryState;
use super::texture::TextureState;
use super::{IterationRecord, Monitor, Stage};
use crate::error::{Error, Result};
use crate::field::checkpoint::{read_field, write_field};
use crate::field::{AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tet::io::{load_grid, save_grid};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.jsonl";

/// Provenance of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub version: String,
    /// Scalar width, "f32" or "f64".
    pub precision: String,
    pub command: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeometryExtras {
    iteration: usize,
    normal_background: [f64; 3],
    background_adam: AdamState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextureExtras {
    iteration: usize,
    background: [f64; 3],
    background_adam: AdamState,
}

fn precision_of<T>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn parse_err(path: &Path, e: impl ToString) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

/// Output directory of one run: config, manifest, log, checkpoints,
/// meshes and renders.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create the layout, write the config and manifest, and start an
    /// empty log.
    pub fn create<T>(root: impl AsRef<Path>, cfg: &StageConfig, command: &str) -> Result<Self> {
        let run = Self { root: root.as_ref().to_path_buf() };
        for d in ["checkpoints", "meshes", "renders"] {
            fs::create_dir_all(run.root.join(d))?;
        }
        File::create(run.log_path())?;
        fs::write(run.root.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
        let manifest = Manifest {
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            precision: precision_of::<T>().into(),
            command: command.into(),
            created: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        fs::write(run.root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(run)
    }

    /// Open an existing run directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.join(CONFIG_FILE).is_file() {
            return Err(Error::Precondition(format!("{} is not a run directory", root.display())));
        }
        for d in ["checkpoints", "meshes", "renders"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> Result<StageConfig> {
        StageConfig::load(self.root.join(CONFIG_FILE))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.root.join(MANIFEST_FILE);
        serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| parse_err(&path, e))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn meshes(&self) -> PathBuf {
        self.root.join("meshes")
    }

    pub fn renders(&self) -> PathBuf {
        self.root.join("renders")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn read_log(&self) -> Result<Vec<IterationRecord>> {
        let path = self.log_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| parse_err(&path, e))?);
        }
        Ok(out)
    }

    /// Drop log lines of `stage` at or after `iteration`, so a resumed run
    /// appends where its checkpoint left off.
    pub fn truncate_log(&self, stage: Stage, iteration: usize) -> Result<()> {
        let kept: Vec<_> =
            self.read_log()?.into_iter().filter(|r| r.stage != stage || r.iteration < iteration).collect();
        let mut w = BufWriter::new(File::create(self.log_path())?);
        for r in &kept {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_geometry<T: Real>(&self, state: &GeometryState<T>) -> Result<()> {
        let dir = self.checkpoints();
        write_atomic(&dir.join("geometry.field"), |w| write_field(&state.net, Some(&state.adam), w))?;
        save_grid(&state.grid, dir.join("geometry.grid"))?;
        let extras = GeometryExtras {
            iteration: state.iteration,
            normal_background: state.normal_background,
            background_adam: state.background_adam.clone(),
        };
        fs::write(dir.join("geometry.json"), serde_json::to_string_pretty(&extras)?)?;
        Ok(())
    }

    pub fn save_texture<T: Real>(&self, state: &TextureState<T>) -> Result<()> {
        let dir = self.checkpoints();
        write_atomic(&dir.join("texture.field"), |w| write_field(&state.net, Some(&state.adam), w))?;
        let extras = TextureExtras {
            iteration: state.iteration,
            background: state.background,
            background_adam: state.background_adam.clone(),
        };
        fs::write(dir.join("texture.json"), serde_json::to_string_pretty(&extras)?)?;
        Ok(())
    }

    /// Monitor that appends to the log and writes checkpoints here.
    pub fn monitor(&self) -> Result<RunMonitor<'_>> {
        let log = OpenOptions::new().create(true).append(true).open(self.log_path())?;
        Ok(RunMonitor { run: self, log: BufWriter::new(log) })
    }
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    f(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| parse_err(path, e))
}

fn adam_or_fresh(adam: Option<AdamState>, n: usize, config: AdamConfig) -> AdamState {
    adam.unwrap_or_else(|| AdamState::new(config, n))
}

pub fn load_geometry_checkpoint<T: Real>(dir: impl AsRef<Path>, cfg: &StageConfig) -> Result<GeometryState<T>> {
    let dir = dir.as_ref();
    let (net, adam) = read_field::<T, _>(BufReader::new(File::open(dir.join("geometry.field"))?))?;
    let grid = load_grid(dir.join("geometry.grid"))?;
    let extras: GeometryExtras = read_json(&dir.join("geometry.json"))?;
    let n = net.num_params();
    Ok(GeometryState {
        net,
        adam: adam_or_fresh(adam, n, cfg.geometry_adam),
        grid,
        normal_background: extras.normal_background,
        background_adam: extras.background_adam,
        iteration: extras.iteration,
    })
}

pub fn load_texture_checkpoint<T: Real>(dir: impl AsRef<Path>, cfg: &StageConfig) -> Result<TextureState<T>> {
    let dir = dir.as_ref();
    let (net, adam) = read_field::<T, _>(BufReader::new(File::open(dir.join("texture.field"))?))?;
    let extras: TextureExtras = read_json(&dir.join("texture.json"))?;
    let n = net.num_params();
    Ok(TextureState {
        net,
        adam: adam_or_fresh(adam, n, cfg.texture_adam),
        background: extras.background,
        background_adam: extras.background_adam,
        iteration: extras.iteration,
    })
}

/// Writes every record to `log.jsonl` and checkpoints into the run.
pub struct RunMonitor<'a> {
    run: &'a RunDir,
    log: BufWriter<File>,
}

impl<T: Real> Monitor<T> for RunMonitor<'_> {
    fn iteration(&mut self, record: &IterationRecord) -> Result<()> {
        log::debug!("{:?} {} total {:.6e}", record.stage, record.iteration, record.losses.total);
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    fn geometry_checkpoint(&mut self, state: &GeometryState<T>) -> Result<()> {
        self.log.flush()?;
        self.run.save_geometry(state)
    }

    fn texture_checkpoint(&mut self, state: &TextureState<T>) -> Result<()> {
        self.log.flush()?;
        self.run.save_texture(state)
    }
}

impl Drop for RunMonitor<'_> {
    fn drop(&mut self) {
        let _ = self.log.flush();
    }
}
