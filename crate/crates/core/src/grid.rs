//! Discretization of the pupil plane.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square simulation grid and the diameter of the
/// reference circular pupil inscribed in it.
///
/// Pixel `(i, j)` sits at offset `(i - n/2, j - n/2)` from the grid centre, so
/// the index map `i -> (n - i) mod n` is an exact point reflection about the
/// centre pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub circle_diameter_px: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 128,
            circle_diameter_px: 64,
        }
    }
}

impl GridSpec {
    pub fn new(n: usize, circle_diameter_px: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("side length {n} must be even and >= 2")));
        }
        if circle_diameter_px == 0 || circle_diameter_px > n {
            return Err(Error::InvalidGrid(format!(
                "circle diameter {circle_diameter_px} must lie in 1..={n}"
            )));
        }
        Ok(Self {
            n,
            circle_diameter_px,
        })
    }

    pub fn radius_px(&self) -> f64 {
        self.circle_diameter_px as f64 / 2.0
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Pixel offset from the grid centre as (x to the right, y upwards).
    pub fn offset(&self, row: usize, col: usize) -> (f64, f64) {
        let c = self.center() as f64;
        (col as f64 - c, c - row as f64)
    }

    /// Pixel centre in unit-circle coordinates of the reference pupil.
    pub fn unit_coords(&self, row: usize, col: usize) -> (f64, f64) {
        let (x, y) = self.offset(row, col);
        let r = self.radius_px();
        (x / r, y / r)
    }

    pub fn in_circle(&self, row: usize, col: usize) -> bool {
        let (x, y) = self.offset(row, col);
        let r = self.radius_px();
        x * x + y * y <= r * r
    }

    /// Binary support of the reference circle.
    pub fn circle_support(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.in_circle(i, j))
    }

    pub fn circle_pixel_count(&self) -> usize {
        self.circle_support().iter().filter(|&&b| b).count()
    }

    pub(crate) fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.n, self.n] {
            let got = if shape.len() == 2 && shape[0] == shape[1] {
                shape[0]
            } else {
                0
            };
            return Err(Error::GridMismatch {
                expected: self.n,
                got,
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(127, 64).is_err());
        assert!(GridSpec::new(128, 0).is_err());
        assert!(GridSpec::new(128, 129).is_err());
        assert!(GridSpec::new(128, 128).is_ok());
    }

    #[test]
    fn circle_is_point_symmetric() {
        let g = GridSpec::new(64, 33).unwrap();
        let c = g.circle_support();
        for i in 0..g.n {
            for j in 0..g.n {
                assert_eq!(c[[i, j]], c[[(g.n - i) % g.n, (g.n - j) % g.n]]);
            }
        }
    }
}
