use ndarray::Array2;

use crate::error::Result;
use crate::field::{flip_array, FlipCenter};
use crate::pupil::{asymmetry, PupilMask};

/// `P = P_s + P_a` with `P_s = min(P, P_*)` symmetric about `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilDecomposition {
    pub symmetric: Array2<f64>,
    pub asymmetric: Array2<f64>,
    pub center: FlipCenter,
}

impl PupilDecomposition {
    /// `sum(P_a) / sum(P)`.
    pub fn asymmetric_fraction(&self) -> f64 {
        let total = self.symmetric.sum() + self.asymmetric.sum();
        if total == 0.0 {
            0.0
        } else {
            self.asymmetric.sum() / total
        }
    }
}

/// Decomposition about the grid origin.
pub fn decompose(pupil: &PupilMask) -> PupilDecomposition {
    decompose_about(pupil, FlipCenter::ORIGIN)
}

/// Decomposition about an arbitrary reflection centre.
pub fn decompose_about(pupil: &PupilMask, center: FlipCenter) -> PupilDecomposition {
    let p = pupil.values();
    let flipped = flip_array(p, center);
    let mut symmetric = p.clone();
    symmetric.zip_mut_with(&flipped, |a, &b| *a = a.min(b));
    let asymmetric = p - &symmetric;
    PupilDecomposition {
        symmetric,
        asymmetric,
        center,
    }
}

/// Decomposition about the reflection centre that maximizes the overlap, so
/// `P_a` is as small as possible.
pub fn decompose_at_best_shift(pupil: &PupilMask) -> Result<PupilDecomposition> {
    let a = asymmetry(pupil)?;
    Ok(decompose_about(pupil, a.flip_center(pupil.grid().n)))
}
