use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::net::FieldNet;
use crate::error::{Error, Result};
use crate::mesh::SignedDistanceSample;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { iterations: 2000, batch_size: 2048, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean squared error of each minibatch before its update.
    pub loss: Vec<f64>,
    /// Root mean squared error over all samples after the last update.
    pub final_rms: f64,
}

/// Regress the scalar field onto signed distance samples with minibatch Adam.
pub fn fit_to_sdf<T: Real>(
    net: &mut FieldNet<T>,
    samples: &[SignedDistanceSample<T>],
    opts: &FitOptions,
    seed: u64,
) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::EmptySet("SDF samples"));
    }
    if net.output_dim() != 1 {
        return Err(Error::Precondition("fit_to_sdf needs a scalar field".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(opts.adam, net.num_params());
    let batch = opts.batch_size.min(samples.len()).max(1);
    let mut loss = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
        let idx = sample(&mut rng, samples.len(), batch);
        let pts: Vec<_> = idx.iter().map(|i| samples[i].point).collect();
        let cache = net.forward_cached(&pts);
        let mut mse = 0.0;
        let up: Vec<T> = idx
            .iter()
            .zip(&cache.outputs)
            .map(|(i, &s)| {
                let r = s - samples[i].distance.as_f64();
                mse += r * r;
                T::lit(2.0 * r / batch as f64)
            })
            .collect();
        loss.push(mse / batch as f64);
        net.backward(&cache, &up)?;
        let (p, g) = net.params_and_grads_mut();
        adam.step(p, g)?;
    }
    let pts: Vec<_> = samples.iter().map(|s| s.point).collect();
    let out = net.forward(&pts);
    let sse: f64 = out.iter().zip(samples).map(|(o, s)| (o.as_f64() - s.distance.as_f64()).powi(2)).sum();
    Ok(FitReport { loss, final_rms: (sse / samples.len() as f64).sqrt() })
}
