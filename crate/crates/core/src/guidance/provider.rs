use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::prompt::PromptCondition;
use crate::error::{Error, Result};
use crate::render::image::{load_raw, save_raw};
use crate::render::Image;

/// Everything a score provider may look at for one noise prediction.
#[derive(Debug, Clone, Copy)]
pub struct ScoreQuery<'a> {
    pub z_t: &'a Image<f64>,
    pub condition: &'a PromptCondition,
    /// Continuous timestep in (0, 1).
    pub t: f64,
    pub alpha_bar: f64,
    /// The noise that was mixed into `z_t`. Real denoisers ignore it; the
    /// null provider returns it to produce zero guidance.
    pub noise: &'a Image<f64>,
    pub step: u64,
    pub seed: u64,
}

/// Noise prediction contract: same shape as `z_t`, finite values.
pub trait ScoreProvider: Send + Sync {
    fn name(&self) -> &str;
    fn predict_noise(&self, query: &ScoreQuery) -> Result<Image<f64>>;
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn predict_noise(&self, query: &ScoreQuery) -> Result<Image<f64>> {
        (**self).predict_noise(query)
    }
}

/// Perfect denoiser: predicts exactly the injected noise, so guidance is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullScore;

impl ScoreProvider for NullScore {
    fn name(&self) -> &str {
        "null"
    }

    fn predict_noise(&self, query: &ScoreQuery) -> Result<Image<f64>> {
        Ok(query.noise.clone())
    }
}

#[derive(Debug, Clone)]
pub enum GaussianTarget {
    Image(Image<f64>),
    /// Per-channel constant, broadcast over any image size.
    Constant(Vec<f64>),
}

/// Exact score of a point mass at the target under the forward process:
/// `(z_t − sqrt(ᾱ)·y) / sqrt(1 − ᾱ)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianScore {
    pub target: GaussianTarget,
}

impl AnalyticGaussianScore {
    pub fn new(target: Image<f64>) -> Self {
        Self { target: GaussianTarget::Image(target) }
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self { target: GaussianTarget::Constant(values) }
    }
}

impl ScoreProvider for AnalyticGaussianScore {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn predict_noise(&self, q: &ScoreQuery) -> Result<Image<f64>> {
        let (sa, sn) = (q.alpha_bar.sqrt(), (1.0 - q.alpha_bar).sqrt());
        let c = q.z_t.channels;
        let target = |k: usize| -> Result<f64> {
            match &self.target {
                GaussianTarget::Image(img) => Ok(img.data[k]),
                GaussianTarget::Constant(v) => v.get(k % c).copied().ok_or_else(|| {
                    Error::DimensionMismatch(format!("constant target has {} channels, image has {c}", v.len()))
                }),
            }
        };
        if let GaussianTarget::Image(img) = &self.target {
            q.z_t.check_shape(img)?;
        }
        let mut out = Image::new(q.z_t.width, q.z_t.height, c);
        for k in 0..q.z_t.data.len() {
            out.data[k] = (q.z_t.data[k] - sa * target(k)?) / sn;
        }
        Ok(out)
    }
}

/// One line of a recorded score stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub step: u64,
    pub t: f64,
    pub seed: u64,
    /// Raw f32 tensor, relative to the stream directory.
    pub eps_hat_path: String,
}

pub const SCORE_INDEX: &str = "scores.jsonl";

/// Wraps a provider and logs every prediction into a stream directory.
/// Predictions are rounded to f32 before being returned so the recorded
/// stream replays the same trajectory.
pub struct ScoreRecorder<P> {
    inner: P,
    dir: PathBuf,
    index: Mutex<BufWriter<File>>,
}

impl<P: ScoreProvider> ScoreRecorder<P> {
    pub fn create(inner: P, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(dir.join(SCORE_INDEX))?;
        Ok(Self { inner, dir, index: Mutex::new(BufWriter::new(file)) })
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: ScoreProvider> ScoreProvider for ScoreRecorder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn predict_noise(&self, q: &ScoreQuery) -> Result<Image<f64>> {
        let eps = self.inner.predict_noise(q)?.map(|v| v as f32 as f64);
        let rel = format!("eps_{:08}.raw", q.step);
        save_raw(&eps, self.dir.join(&rel))?;
        let record = ScoreRecord { step: q.step, t: q.t, seed: q.seed, eps_hat_path: rel };
        let mut index = self.index.lock().expect("score index lock");
        serde_json::to_writer(&mut *index, &record)?;
        index.write_all(b"\n")?;
        index.flush()?;
        Ok(eps)
    }
}

/// Replays a recorded stream keyed by step. The query's timestep and seed
/// must match the record.
#[derive(Debug)]
pub struct RecordedScore {
    dir: PathBuf,
    records: BTreeMap<u64, ScoreRecord>,
}

impl RecordedScore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(SCORE_INDEX);
        let reader = BufReader::new(File::open(&path)?);
        let mut records = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ScoreRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { path: path.clone(), message: format!("line {}: {e}", lineno + 1) })?;
            records.insert(r.step, r);
        }
        Ok(Self { dir, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ScoreProvider for RecordedScore {
    fn name(&self) -> &str {
        "recorded"
    }

    fn predict_noise(&self, q: &ScoreQuery) -> Result<Image<f64>> {
        let r = self
            .records
            .get(&q.step)
            .ok_or_else(|| Error::Precondition(format!("no recorded score for step {}", q.step)))?;
        if r.t != q.t || r.seed != q.seed {
            return Err(Error::Precondition(format!(
                "recorded score for step {} was taken at t={} seed={}, replay asks t={} seed={}",
                q.step, r.t, r.seed, q.t, q.seed
            )));
        }
        let eps: Image<f64> = load_raw(self.dir.join(&r.eps_hat_path))?;
        q.z_t.check_shape(&eps)?;
        Ok(eps)
    }
}
