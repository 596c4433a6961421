use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial hash primes; the first axis is left unscaled.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HashEncodingConfig {
    pub levels: usize,
    pub min_resolution: u32,
    pub max_resolution: u32,
    pub table_size: usize,
    pub features_per_entry: usize,
}

impl HashEncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("hash encoding needs at least 2 levels".into()));
        }
        if self.min_resolution < 1 || self.min_resolution >= self.max_resolution {
            return Err(Error::Config(format!(
                "hash encoding needs 1 <= min_resolution < max_resolution, got {} and {}",
                self.min_resolution, self.max_resolution
            )));
        }
        if self.table_size == 0 || self.features_per_entry == 0 {
            return Err(Error::Config("hash table size and feature width must be positive".into()));
        }
        Ok(())
    }

    pub fn growth_factor(&self) -> f64 {
        ((self.max_resolution as f64).ln() - (self.min_resolution as f64).ln()) / (self.levels as f64 - 1.0)
    }

    pub fn level_resolution(&self, level: usize) -> u32 {
        let r = self.min_resolution as f64 * (self.growth_factor() * level as f64).exp();
        // guard against exp/ln round-off just below an integer
        (r + 1e-9).floor() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Level {
    pub res: u32,
    pub entries: usize,
    pub dense: bool,
    /// First entry of this level in the concatenated table.
    pub first_entry: usize,
}

/// Corner entries and trilinear weights of one level at one point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lookup {
    pub entry: [usize; 8],
    pub weight: [f64; 8],
    /// ∂weight/∂position in scene units.
    pub dweight: [[f64; 3]; 8],
}

#[derive(Debug, Clone)]
pub(crate) struct HashEncoding {
    pub cfg: HashEncodingConfig,
    pub levels: Vec<Level>,
    pub total_entries: usize,
}

impl HashEncoding {
    pub fn new(cfg: &HashEncodingConfig) -> Self {
        let mut levels = Vec::with_capacity(cfg.levels);
        let mut first = 0;
        for l in 0..cfg.levels {
            let res = cfg.level_resolution(l);
            let corners = (res as u64 + 1).pow(3);
            let dense = corners <= cfg.table_size as u64;
            let entries = if dense { corners as usize } else { cfg.table_size };
            levels.push(Level { res, entries, dense, first_entry: first });
            first += entries;
        }
        Self { cfg: cfg.clone(), levels, total_entries: first }
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.levels * self.cfg.features_per_entry
    }

    fn index(level: &Level, c: [u32; 3]) -> usize {
        let local = if level.dense {
            let n = level.res as usize + 1;
            c[0] as usize + n * (c[1] as usize + n * c[2] as usize)
        } else {
            let h = c[0].wrapping_mul(HASH_PRIMES[0]) ^ c[1].wrapping_mul(HASH_PRIMES[1]) ^ c[2].wrapping_mul(HASH_PRIMES[2]);
            if level.entries.is_power_of_two() {
                h as usize & (level.entries - 1)
            } else {
                h as usize % level.entries
            }
        };
        level.first_entry + local
    }

    fn cell(lv: &Level, p: [f64; 3]) -> ([u32; 3], [f64; 3]) {
        let n = lv.res as f64;
        let mut cell = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = ((p[a] + 0.5) * n).clamp(0.0, n);
            let c = (x.floor() as u32).min(lv.res - 1);
            cell[a] = c;
            frac[a] = x - c as f64;
        }
        (cell, frac)
    }

    /// Corner entries and weights without the position derivatives.
    pub fn lookup_weights(&self, level: usize, p: [f64; 3]) -> ([usize; 8], [f64; 8]) {
        let lv = &self.levels[level];
        let (cell, frac) = Self::cell(lv, p);
        let mut entry = [0; 8];
        let mut weight = [0.0; 8];
        for k in 0..8 {
            let bit = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let w = [0, 1, 2].map(|a| if bit[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            entry[k] = Self::index(lv, [cell[0] + bit[0] as u32, cell[1] + bit[1] as u32, cell[2] + bit[2] as u32]);
            weight[k] = w[0] * w[1] * w[2];
        }
        (entry, weight)
    }

    /// `p` must already lie in `[-0.5, 0.5]³`.
    pub fn lookup(&self, level: usize, p: [f64; 3]) -> Lookup {
        let lv = &self.levels[level];
        let n = lv.res as f64;
        let (cell, frac) = Self::cell(lv, p);
        let mut out = Lookup { entry: [0; 8], weight: [0.0; 8], dweight: [[0.0; 3]; 8] };
        for k in 0..8 {
            let bit = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for a in 0..3 {
                if bit[a] == 1 {
                    w[a] = frac[a];
                    dw[a] = n;
                } else {
                    w[a] = 1.0 - frac[a];
                    dw[a] = -n;
                }
            }
            out.entry[k] = Self::index(lv, [cell[0] + bit[0] as u32, cell[1] + bit[1] as u32, cell[2] + bit[2] as u32]);
            out.weight[k] = w[0] * w[1] * w[2];
            out.dweight[k] = [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HashEncodingConfig {
        HashEncodingConfig { levels: 16, min_resolution: 16, max_resolution: 1024, table_size: 1 << 15, features_per_entry: 2 }
    }

    #[test]
    fn resolutions_grow_geometrically_to_max() {
        let c = cfg();
        assert_eq!(c.level_resolution(0), 16);
        assert_eq!(c.level_resolution(15), 1024);
        for l in 1..16 {
            assert!(c.level_resolution(l) > c.level_resolution(l - 1));
        }
    }

    #[test]
    fn coarse_levels_dense_fine_levels_hashed() {
        let e = HashEncoding::new(&cfg());
        assert!(e.levels[0].dense);
        assert!(!e.levels[15].dense);
        assert_eq!(e.levels[15].entries, 1 << 15);
    }

    #[test]
    fn weights_partition_unity() {
        let e = HashEncoding::new(&cfg());
        for l in [0, 7, 15] {
            let lk = e.lookup(l, [0.123, -0.31, 0.49]);
            let s: f64 = lk.weight.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let ds: [f64; 3] = std::array::from_fn(|a| lk.dweight.iter().map(|d| d[a]).sum());
            assert!(ds.iter().all(|d| d.abs() < 1e-9));
        }
    }

    #[test]
    fn hash_is_fixed() {
        let lv = Level { res: 100, entries: 1000, dense: false, first_entry: 0 };
        let h = (3u32 ^ 5u32.wrapping_mul(2_654_435_761) ^ 7u32.wrapping_mul(805_459_861)) as usize % 1000;
        assert_eq!(HashEncoding::index(&lv, [3, 5, 7]), h);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = cfg();
        c.min_resolution = 2048;
        assert!(c.validate().is_err());
    }
}
