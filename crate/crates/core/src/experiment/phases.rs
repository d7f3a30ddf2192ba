use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PhaseMap;
use crate::grid::GridSpec;
use crate::zernike::{build_zernike_basis, ZernikeBasis};

/// Offset separating held-out phase streams from training streams.
const TEST_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSplit {
    Train,
    Test,
}

/// Random Zernike phases: each coefficient uniform on
/// `[-coeff_scale, coeff_scale]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSampler {
    pub modes: Vec<u32>,
    pub coeff_scale: f64,
}

impl Default for PhaseSampler {
    fn default() -> Self {
        Self {
            modes: (2..=15).collect(),
            coeff_scale: 1.0,
        }
    }
}

impl PhaseSampler {
    pub fn new(modes: Vec<u32>, coeff_scale: f64) -> Result<Self> {
        let s = Self { modes, coeff_scale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::EmptyModeList);
        }
        if self.modes.contains(&1) {
            return Err(Error::InvalidConfig("phase modes must exclude piston (Noll 1)".into()));
        }
        if !(self.coeff_scale > 0.0) || !self.coeff_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "coeff_scale {} must be > 0",
                self.coeff_scale
            )));
        }
        Ok(())
    }

    pub fn with_scale(&self, coeff_scale: f64) -> Self {
        Self {
            modes: self.modes.clone(),
            coeff_scale,
        }
    }

    pub fn basis(&self, grid: &GridSpec) -> Result<ZernikeBasis> {
        build_zernike_basis(grid, &self.modes)
    }

    /// Coefficients of phase `index` in `split`. The draw depends only on
    /// `(seed, split, index)`, and the scale multiplies a fixed unit draw, so
    /// every pupil and every scale sees the same underlying phases.
    pub fn coefficients(&self, seed: u64, split: PhaseSplit, index: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = match split {
            PhaseSplit::Train => 0,
            PhaseSplit::Test => TEST_STREAM_OFFSET,
        };
        rng.set_stream(offset + index as u64);
        self.modes
            .iter()
            .map(|_| self.coeff_scale * rng.gen_range(-1.0..=1.0))
            .collect()
    }

    pub fn phase(&self, basis: &ZernikeBasis, seed: u64, split: PhaseSplit, index: usize) -> Result<PhaseMap> {
        basis.synthesize(&self.coefficients(seed, split, index))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.modes
            .iter()
            .map(|_| self.coeff_scale * rng.gen_range(-1.0..=1.0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_scaled() {
        let s = PhaseSampler::default();
        let a = s.coefficients(7, PhaseSplit::Train, 3);
        let b = s.coefficients(7, PhaseSplit::Test, 3);
        assert_ne!(a, b);
        assert_eq!(a, s.coefficients(7, PhaseSplit::Train, 3));
        let half = s.with_scale(0.5).coefficients(7, PhaseSplit::Train, 3);
        for (x, y) in a.iter().zip(&half) {
            assert!((0.5 * x - y).abs() < 1e-15);
        }
        assert!(PhaseSampler::new(vec![1, 2], 1.0).is_err());
        assert!(PhaseSampler::new(vec![2], 0.0).is_err());
    }
}
