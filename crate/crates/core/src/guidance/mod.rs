//! Score-distillation guidance against pluggable pixel-space noise
//! predictors, plus prompt composition.

mod prompt;
mod provider;

pub use prompt::{
    classify_angles, classify_view, compose_prompt, compose_prompt_for_view, Attributes, GarmentRecord, PromptCondition,
    ViewTag,
};
pub use provider::{
    AnalyticGaussianScore, GaussianTarget, NullScore, RecordedScore, ScoreProvider, ScoreQuery, ScoreRecord, ScoreRecorder,
    SCORE_INDEX,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Image;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w_t = 1`.
    Constant,
    /// `w_t = 1 − ᾱ_t`.
    OneMinusAlphaBar,
}

/// Scaled-linear beta schedule over discrete steps; continuous `t` in
/// (0, 1) maps to the nearest step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub num_steps: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub weighting: Weighting,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            beta_start: 0.00085,
            beta_end: 0.012,
            num_steps: 1000,
            t_min: 0.02,
            t_max: 0.98,
            weighting: Weighting::Constant,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 2 {
            return Err(Error::Config("noise schedule needs at least 2 steps".into()));
        }
        if !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config("betas must satisfy 0 < start <= end < 1".into()));
        }
        if !(0.0 < self.t_min && self.t_min <= self.t_max && self.t_max < 1.0) {
            return Err(Error::Config("timestep range must satisfy 0 < t_min <= t_max < 1".into()));
        }
        Ok(())
    }

    /// Cumulative products ᾱ for every discrete step.
    pub fn alpha_bars(&self) -> Vec<f64> {
        let (a, b) = (self.beta_start.sqrt(), self.beta_end.sqrt());
        let n = self.num_steps;
        let mut acc = 1.0;
        (0..n)
            .map(|i| {
                let s = a + (b - a) * i as f64 / (n - 1) as f64;
                acc *= 1.0 - s * s;
                acc
            })
            .collect()
    }

    pub fn step_index(&self, t: f64) -> usize {
        ((t * (self.num_steps - 1) as f64).round().max(0.0) as usize).min(self.num_steps - 1)
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        self.alpha_bars()[self.step_index(t)]
    }

    pub fn weight(&self, alpha_bar: f64) -> f64 {
        match self.weighting {
            Weighting::Constant => 1.0,
            Weighting::OneMinusAlphaBar => 1.0 - alpha_bar,
        }
    }
}

/// Result of one guidance evaluation.
#[derive(Debug, Clone)]
pub struct SdsSample<T> {
    pub t: f64,
    pub alpha_bar: f64,
    pub weight: f64,
    /// `w_t·(ε̂ − ε)` on the rendered image.
    pub grad: Image<T>,
}

/// Draw `t ~ U[t_min, t_max]` and `ε ~ N(0, I)` from `seed`, noise the
/// render, and return the weighted noise residual as its gradient.
pub fn sds_gradient<T: Real>(
    rendered: &Image<T>,
    condition: &PromptCondition,
    provider: &dyn ScoreProvider,
    schedule: &NoiseSchedule,
    step: u64,
    seed: u64,
) -> Result<SdsSample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(schedule.t_min..=schedule.t_max);
    sds_with_rng(rendered, condition, provider, schedule, t, step, seed, &mut rng)
}

/// Same as [`sds_gradient`] at a fixed timestep.
pub fn sds_gradient_at<T: Real>(
    rendered: &Image<T>,
    condition: &PromptCondition,
    provider: &dyn ScoreProvider,
    schedule: &NoiseSchedule,
    t: f64,
    step: u64,
    seed: u64,
) -> Result<SdsSample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sds_with_rng(rendered, condition, provider, schedule, t, step, seed, &mut rng)
}

#[allow(clippy::too_many_arguments)]
fn sds_with_rng<T: Real>(
    rendered: &Image<T>,
    condition: &PromptCondition,
    provider: &dyn ScoreProvider,
    schedule: &NoiseSchedule,
    t: f64,
    step: u64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SdsSample<T>> {
    let alpha_bar = schedule.alpha_bar(t);
    let weight = schedule.weight(alpha_bar);
    let (w, h, c) = (rendered.width, rendered.height, rendered.channels);
    let noise = Image { width: w, height: h, channels: c, data: (0..w * h * c).map(|_| rng.sample(StandardNormal)).collect() };
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let z_t = Image {
        width: w,
        height: h,
        channels: c,
        data: rendered.data.iter().zip(&noise.data).map(|(&x, &e)| sa * x.as_f64() + sn * e).collect(),
    };
    let query = ScoreQuery { z_t: &z_t, condition, t, alpha_bar, noise: &noise, step, seed };
    let eps_hat = provider.predict_noise(&query)?;
    z_t.check_shape(&eps_hat)?;
    if eps_hat.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DivergenceDetected {
            iteration: step as usize,
            what: format!("score provider {} returned non-finite values", provider.name()),
        });
    }
    let grad = Image {
        width: w,
        height: h,
        channels: c,
        data: eps_hat.data.iter().zip(&noise.data).map(|(&p, &e)| T::lit(weight * (p - e))).collect(),
    };
    Ok(SdsSample { t, alpha_bar, weight, grad })
}
