use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AdamConfig, FieldConfig, FitOptions};
use crate::guidance::NoiseSchedule;
use crate::losses::LossWeights;
use crate::render::RasterOptions;
use crate::sampler::SamplerConfig;

/// Outer shell around the template body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ShellConfig {
    /// Dilation offset in scene units.
    pub offset: f64,
    /// Fraction of triangles removed by decimation.
    pub decimate: f64,
}

impl Default for ShellConfig {
    fn default() -> Self {
        Self { offset: 0.1, decimate: 0.9 }
    }
}

/// Fitting the geometry field to the template SDF before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub samples: usize,
    /// Half-width of the band around the template for near-surface samples.
    pub band: f64,
    /// Share of samples drawn uniformly inside the shell.
    pub uniform_fraction: f64,
    pub fit: FitOptions,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            band: 0.05,
            uniform_fraction: 0.2,
            fit: FitOptions { iterations: 600, batch_size: 2048, adam: AdamConfig { learning_rate: 1e-2, ..Default::default() } },
        }
    }
}

/// Everything both optimization stages read. Defaults are desk scale;
/// [`StageConfig::paper`] gives the full-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub seed: u64,
    pub t_coarse: usize,
    pub t_fine: usize,
    pub t_texture: usize,
    /// Colour-chamfer iterations at the end of the texture stage.
    pub t_cd: usize,
    /// Probability of rendering the canonical-pose mesh for guidance.
    pub p_pose: f64,
    /// Side of the square guidance renders. Overrides the sampler's size.
    pub resolution: usize,
    /// Lattice cells per unit for the shell grid.
    pub grid_resolution: usize,
    pub shell: ShellConfig,
    pub init: InitConfig,
    pub weights: LossWeights,
    pub sampler: SamplerConfig,
    pub schedule: NoiseSchedule,
    pub geometry_field: FieldConfig,
    pub color_field: FieldConfig,
    pub geometry_adam: AdamConfig,
    pub texture_adam: AdamConfig,
    pub raster: RasterOptions,
    /// Subject token placed in every prompt.
    pub identifier: String,
    /// Checkpoint period in iterations; 0 writes only the final state.
    pub checkpoint_every: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            t_coarse: 500,
            t_fine: 500,
            t_texture: 700,
            t_cd: 200,
            p_pose: 0.5,
            resolution: 128,
            grid_resolution: 32,
            shell: ShellConfig::default(),
            init: InitConfig::default(),
            weights: LossWeights::default(),
            sampler: SamplerConfig::default(),
            schedule: NoiseSchedule::default(),
            geometry_field: FieldConfig::geometry(1024, 1 << 15),
            color_field: FieldConfig::color(2048, 1 << 15),
            geometry_adam: AdamConfig { learning_rate: 1e-3, ..Default::default() },
            texture_adam: AdamConfig { learning_rate: 1e-2, ..Default::default() },
            raster: RasterOptions::default(),
            identifier: "[V]".into(),
            checkpoint_every: 0,
        }
    }
}

impl StageConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-scale iteration counts, render size and table sizes.
    pub fn paper() -> Self {
        let mut c = Self {
            t_coarse: 5000,
            t_fine: 5000,
            t_texture: 7000,
            t_cd: 2000,
            resolution: 512,
            grid_resolution: 128,
            geometry_field: FieldConfig::geometry(1024, 1 << 19),
            color_field: FieldConfig::color(2048, 1 << 19),
            texture_adam: AdamConfig::default(),
            ..Self::default()
        };
        c.init.samples = 200_000;
        c.init.fit.iterations = 2000;
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sampler settings with the render size and face target applied.
    pub fn sampler_for(&self, face_target: [f64; 3]) -> SamplerConfig {
        SamplerConfig { width: self.resolution, height: self.resolution, face_target, ..self.sampler.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_cd > self.t_texture {
            return Err(Error::Config(format!("t_cd ({}) exceeds t_texture ({})", self.t_cd, self.t_texture)));
        }
        if !(0.0..=1.0).contains(&self.p_pose) {
            return Err(Error::Config(format!("p_pose must lie in [0, 1], got {}", self.p_pose)));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.grid_resolution < 8 {
            return Err(Error::Config(format!("grid_resolution must be >= 8, got {}", self.grid_resolution)));
        }
        if !(self.shell.offset > 0.0 && self.shell.offset.is_finite()) {
            return Err(Error::Config("shell offset must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.shell.decimate) {
            return Err(Error::Config("shell decimation must lie in [0, 1)".into()));
        }
        if self.init.samples == 0 || !(self.init.band > 0.0) || !(0.0..=1.0).contains(&self.init.uniform_fraction) {
            return Err(Error::Config("init needs samples > 0, band > 0 and uniform_fraction in [0, 1]".into()));
        }
        if self.init.fit.batch_size == 0 {
            return Err(Error::Config("init batch_size must be positive".into()));
        }
        self.weights.validate()?;
        self.sampler_for(self.sampler.face_target).validate()?;
        self.schedule.validate()?;
        self.geometry_field.validate()?;
        self.color_field.validate()?;
        if self.geometry_field.output_dim != 1 {
            return Err(Error::Config("geometry field must have one output".into()));
        }
        if self.color_field.output_dim != 3 {
            return Err(Error::Config("color field must have three outputs".into()));
        }
        for a in [&self.geometry_adam, &self.texture_adam, &self.init.fit.adam] {
            if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
                return Err(Error::Config("learning rates must be positive".into()));
            }
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) || a.weight_decay < 0.0 {
                return Err(Error::Config("invalid Adam hyperparameters".into()));
            }
        }
        if !(self.raster.sigma_px > 0.0) {
            return Err(Error::Config("sigma_px must be positive".into()));
        }
        if self.identifier.trim().is_empty() {
            return Err(Error::Config("identifier must not be empty".into()));
        }
        Ok(())
    }

    /// JSON schema of the run configuration.
    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(StageConfig)).expect("schema serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_desk_scale() {
        let c = StageConfig::default();
        c.validate().unwrap();
        assert_eq!((c.t_coarse, c.t_fine, c.t_texture, c.t_cd), (500, 500, 700, 200));
        assert_eq!((c.resolution, c.grid_resolution), (128, 32));
        assert_eq!(c.p_pose, 0.5);
        let p = StageConfig::paper();
        p.validate().unwrap();
        assert_eq!((p.t_coarse, p.t_fine, p.t_texture, p.t_cd), (5000, 5000, 7000, 2000));
        assert_eq!(p.geometry_adam.learning_rate, 1e-3);
        assert_eq!(p.geometry_adam.weight_decay, 5e-4);
    }

    #[test]
    fn json_roundtrip_and_partial_configs() {
        let c = StageConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<StageConfig>(&text).unwrap(), c);
        let partial: StageConfig = serde_json::from_str(r#"{"seed": 7, "t_coarse": 3}"#).unwrap();
        assert_eq!((partial.seed, partial.t_coarse, partial.t_fine), (7, 3, 500));
        assert!(serde_json::from_str::<StageConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            StageConfig { t_cd: 800, ..Default::default() },
            StageConfig { p_pose: -0.1, ..Default::default() },
            StageConfig { grid_resolution: 4, ..Default::default() },
            StageConfig { shell: ShellConfig { offset: 0.0, decimate: 0.9 }, ..Default::default() },
            StageConfig { identifier: " ".into(), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn shipped_schema_is_current() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/run_config.schema.json");
        let shipped: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).expect("schema file")).unwrap();
        assert_eq!(shipped, StageConfig::schema(), "regenerate with `tetra-recon schema`");
    }
}
