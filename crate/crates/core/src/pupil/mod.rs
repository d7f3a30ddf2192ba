//! Pupil supports: convex-hull construction and rasterization, the asymmetry
//! metric, symmetric/asymmetric decomposition and the asymmetry-binned
//! sampler.

mod asymmetry;
mod decompose;
mod hull;
mod sampler;

pub use asymmetry::{asymmetry, self_convolution_peak, Asymmetry, OverlapPeak};
pub use decompose::{decompose, decompose_about, decompose_at_best_shift, PupilDecomposition};
pub use hull::{convex_hull, parse_vertex_list, rasterize_hull, regular_polygon, ConvexHullSpec};
pub use sampler::{
    build_pupil_set, sample_pupil, BinEdges, FillStatus, PupilEntry, PupilSet, PupilSetConfig,
    SamplerConfig,
};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::field::{flip_array, FlipCenter};
use crate::grid::GridSpec;

/// Real-valued pupil transmission on the grid, supported inside the
/// reference circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilMask {
    grid: GridSpec,
    values: Array2<f64>,
    area: f64,
}

impl PupilMask {
    /// Validates that every value lies in `[0, 1]` and that the support is
    /// inside the reference circle.
    pub fn new(grid: &GridSpec, values: Array2<f64>) -> Result<Self> {
        grid.check_shape(values.shape())?;
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("pupil mask"));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::PupilValueRange {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            if v > 0.0 && !grid.in_circle(i, j) {
                return Err(Error::PupilOutsideCircle { row: i, col: j });
            }
        }
        let area = values.sum();
        Ok(Self {
            grid: *grid,
            values,
            area,
        })
    }

    /// Binary mask of pixels whose centre satisfies `inside(x, y)` in
    /// unit-circle coordinates, clipped to the reference circle.
    pub fn from_predicate(grid: &GridSpec, inside: impl Fn(f64, f64) -> bool) -> Self {
        let values = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
            let (x, y) = grid.unit_coords(i, j);
            if grid.in_circle(i, j) && inside(x, y) {
                1.0
            } else {
                0.0
            }
        });
        let area = values.sum();
        Self {
            grid: *grid,
            values,
            area,
        }
    }

    /// The reference circle `C`.
    pub fn circle(grid: &GridSpec) -> Self {
        Self::from_predicate(grid, |_, _| true)
    }

    /// Disk of radius `r` centred at `(cx, cy)`, all in unit-circle units.
    pub fn disk(grid: &GridSpec, cx: f64, cy: f64, r: f64) -> Result<Self> {
        if cx.hypot(cy) + r > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "disk ({cx}, {cy}, r={r}) leaves the reference circle"
            )));
        }
        Ok(Self::from_predicate(grid, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        }))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Sum of the transmission values.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area <= 0.0
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn support(&self) -> Array2<bool> {
        self.values.mapv(|v| v > 0.0)
    }

    /// `P_*`, the reflection through the grid origin.
    pub fn flipped(&self) -> PupilMask {
        PupilMask {
            grid: self.grid,
            values: flip_array(&self.values, FlipCenter::ORIGIN),
            area: self.area,
        }
    }

    /// Whether `P == P_*` exactly.
    pub fn is_symmetric(&self) -> bool {
        self.values == flip_array(&self.values, FlipCenter::ORIGIN)
    }

    /// Cyclic translation by `(dr, dc)` pixels. Fails if the result leaves
    /// the reference circle.
    pub fn translated(&self, dr: isize, dc: isize) -> Result<PupilMask> {
        let n = self.grid.n as isize;
        let values = Array2::from_shape_fn((self.grid.n, self.grid.n), |(i, j)| {
            let si = (i as isize - dr).rem_euclid(n) as usize;
            let sj = (j as isize - dc).rem_euclid(n) as usize;
            self.values[[si, sj]]
        });
        PupilMask::new(&self.grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let g = GridSpec::new(16, 8).unwrap();
        let mut v = Array2::zeros((16, 16));
        v[[0, 0]] = 1.0;
        assert!(matches!(
            PupilMask::new(&g, v.clone()),
            Err(Error::PupilOutsideCircle { row: 0, col: 0 })
        ));
        v[[0, 0]] = 0.0;
        v[[8, 8]] = 1.5;
        assert!(matches!(PupilMask::new(&g, v), Err(Error::PupilValueRange { .. })));
    }

    #[test]
    fn circle_is_symmetric_and_binary() {
        let c = PupilMask::circle(&GridSpec::default());
        assert!(c.is_symmetric());
        assert!(c.is_binary());
        let expected = std::f64::consts::PI * 32.0 * 32.0;
        assert!((c.area() - expected).abs() / expected < 0.02);
    }

    #[test]
    fn off_center_disk_is_not_symmetric() {
        let g = GridSpec::default();
        let d = PupilMask::disk(&g, 0.3, 0.0, 0.4).unwrap();
        assert!(!d.is_symmetric());
        assert!(PupilMask::disk(&g, 0.8, 0.0, 0.4).is_err());
    }
}
