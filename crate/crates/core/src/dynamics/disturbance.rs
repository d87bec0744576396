//! Bounded additive disturbances with counter-based seeding.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Vector;
use crate::error::{Error, Result};

/// Uniform range for a contiguous block of state components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceBlock {
    pub len: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a key tuple into one 64-bit seed.
pub fn mix_key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

impl DisturbanceConfig {
    pub fn from_blocks(blocks: &[DisturbanceBlock], seed: u64) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for b in blocks {
            lo.extend(std::iter::repeat_n(b.lo, b.len));
            hi.extend(std::iter::repeat_n(b.hi, b.len));
        }
        let cfg = DisturbanceConfig { lo, hi, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn zero(n: usize, seed: u64) -> Self {
        DisturbanceConfig {
            lo: vec![0.0; n],
            hi: vec![0.0; n],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Config("disturbance lo/hi lengths differ".into()));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Config(format!("bad disturbance range [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// `w_t` for the given trial; a pure function of `(seed, trial, t)`.
    pub fn sample(&self, trial: u64, t: u64) -> Vector {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[self.seed, trial, t]));
        Vector::from_iterator(
            self.dim(),
            self.lo.iter().zip(&self.hi).map(
                |(&l, &h)| {
                    if l == h {
                        l
                    } else {
                        rng.random_range(l..=h)
                    }
                },
            ),
        )
    }
}

/// Free-function form of [`DisturbanceConfig::sample`].
pub fn sample_disturbance(cfg: &DisturbanceConfig, trial: u64, t: u64) -> Vector {
    cfg.sample(trial, t)
}
