//! Hash-encoded neural fields with hand-written gradients, Adam, and SDF fitting.

mod adam;
pub mod checkpoint;
mod fit;
mod hash;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use fit::{fit_to_sdf, FitOptions, FitReport};
pub use hash::{HashEncodingConfig, HASH_PRIMES};
pub use net::{Activation, FieldCache, FieldConfig, FieldNet, ParamClass};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::mesh::SignedDistanceSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_samples(n: usize, seed: u64) -> Vec<SignedDistanceSample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                SignedDistanceSample { point: p, distance: p.z }
            })
            .collect()
    }

    #[test]
    fn plane_fit_converges_and_is_reproducible() {
        let samples = plane_samples(4096, 1);
        let run = |iterations| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut net = FieldNet::<f64>::new(FieldConfig::geometry(256, 1 << 14), &mut rng).unwrap();
            fit_to_sdf(&mut net, &samples, &FitOptions { iterations, batch_size: 256, ..Default::default() }, 3)
                .unwrap()
        };
        let a = run(2000);
        assert!(a.final_rms < 0.01, "rms {}", a.final_rms);
        let b = run(100);
        assert_eq!(a.loss[..100], b.loss[..]);
    }

    #[test]
    fn empty_samples_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = FieldNet::<f64>::new(FieldConfig::geometry(64, 1 << 10), &mut rng).unwrap();
        assert!(fit_to_sdf(&mut net, &[], &FitOptions::default(), 0).is_err());
    }
}
