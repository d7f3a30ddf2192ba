use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::fft2_raw;
use crate::field::FlipCenter;
use crate::pupil::PupilMask;

/// Maximum of the linear self-convolution `(p * p)(s) = sum_i p[i] p[s - i]`.
///
/// `index_sum` is the full-grid index `s`; the overlap at `s` is the overlap
/// of `p` with its reflection `i -> s - i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapPeak {
    pub value: f64,
    pub index_sum: (usize, usize),
}

/// The asymmetry `alpha = 1 - max_s (p * p)(s) / sum p^2` and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub alpha: f64,
    pub max_overlap: f64,
    pub energy: f64,
    /// Index sum of the reflection achieving `max_overlap`.
    pub best_index_sum: (usize, usize),
    /// Overlap with the reflection through the grid origin.
    pub origin_overlap: f64,
}

impl Asymmetry {
    /// Reflection centre achieving the maximum overlap, on a grid of side `n`.
    pub fn flip_center(&self, n: usize) -> FlipCenter {
        FlipCenter::from_index_sum(self.best_index_sum.0, self.best_index_sum.1, n)
    }

    /// Asymmetry measured against the origin reflection only.
    pub fn origin_alpha(&self) -> f64 {
        (1.0 - self.origin_overlap / self.energy).clamp(0.0, 1.0)
    }
}

fn bounding_box(p: &ArrayView2<f64>) -> Option<(usize, usize, usize, usize)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for ((i, j), &v) in p.indexed_iter() {
        if v != 0.0 {
            r0 = r0.min(i);
            r1 = r1.max(i);
            c0 = c0.min(j);
            c1 = c1.max(j);
        }
    }
    (r0 != usize::MAX).then_some((r0, r1, c0, c1))
}

/// Peak of the linear self-convolution, computed by FFT on the support's
/// bounding box. Integer-valued masks give exact integer overlaps. Ties go to
/// the first row-major index sum. Returns `None` for an all-zero array.
pub fn self_convolution_peak(p: ArrayView2<f64>) -> Option<OverlapPeak> {
    let (r0, r1, c0, c1) = bounding_box(&p)?;
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    let crop = p.slice(s![r0..=r1, c0..=c1]);
    let mut buf = Array2::from_elem((2 * h, 2 * w), Complex64::new(0.0, 0.0));
    buf.slice_mut(s![..h, ..w])
        .zip_mut_with(&crop, |b, &v| *b = Complex64::new(v, 0.0));
    fft2_raw(&mut buf, FftDirection::Forward);
    buf.mapv_inplace(|v| v * v);
    fft2_raw(&mut buf, FftDirection::Inverse);

    let scale = 1.0 / buf.len() as f64;
    let integral = crop.iter().all(|v| v.fract() == 0.0);
    let conv = buf.mapv(|v| {
        let x = v.re * scale;
        if integral {
            x.round()
        } else {
            x
        }
    });
    let max = conv
        .slice(s![..2 * h - 1, ..2 * w - 1])
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - 1e-9 * max.abs();
    for t in 0..2 * h - 1 {
        for u in 0..2 * w - 1 {
            if conv[[t, u]] >= threshold {
                return Some(OverlapPeak {
                    value: conv[[t, u]],
                    index_sum: (t + 2 * r0, u + 2 * c0),
                });
            }
        }
    }
    unreachable!("maximum is attained")
}

fn overlap_about(p: &ArrayView2<f64>, center: FlipCenter) -> f64 {
    let n = p.nrows();
    p.indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|((i, j), &v)| {
            let (fi, fj) = center.map(i, j, n);
            v * p[[fi, fj]]
        })
        .sum()
}

/// Asymmetry of a pupil, maximized over all translations of the reflection.
pub fn asymmetry(pupil: &PupilMask) -> Result<Asymmetry> {
    let p = pupil.values().view();
    let peak = self_convolution_peak(p).ok_or(Error::EmptyPupil)?;
    let energy: f64 = p.iter().map(|v| v * v).sum();
    Ok(Asymmetry {
        alpha: (1.0 - peak.value / energy).clamp(0.0, 1.0),
        max_overlap: peak.value,
        energy,
        best_index_sum: peak.index_sum,
        origin_overlap: overlap_about(&p, FlipCenter::ORIGIN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::pupil::{rasterize_hull, ConvexHullSpec};

    #[test]
    fn circle_and_triangle_anchors() {
        let g = GridSpec::default();
        let c = asymmetry(&PupilMask::circle(&g)).unwrap();
        assert_eq!(c.alpha, 0.0);
        assert_eq!(c.flip_center(g.n), FlipCenter::ORIGIN);
        let h = 3f64.sqrt() / 2.0;
        let tri = ConvexHullSpec::new(vec![[1.0, 0.0], [-0.5, h], [-0.5, -h]]).unwrap();
        let a = asymmetry(&rasterize_hull(&tri, &g).unwrap()).unwrap();
        assert!((0.30..=0.36).contains(&a.alpha), "{}", a.alpha);
        assert!(a.origin_alpha() >= a.alpha);
    }

    #[test]
    fn single_pixel_is_symmetric() {
        let mut p = Array2::zeros((8, 8));
        p[[2, 5]] = 1.0;
        let peak = self_convolution_peak(p.view()).unwrap();
        assert_eq!(peak.value, 1.0);
        assert_eq!(peak.index_sum, (4, 10));
        assert!(self_convolution_peak(Array2::<f64>::zeros((4, 4)).view()).is_none());
    }

    #[test]
    fn empty_pupil_errors() {
        let g = GridSpec::new(16, 8).unwrap();
        let m = PupilMask::new(&g, Array2::zeros((16, 16))).unwrap();
        assert!(matches!(asymmetry(&m), Err(Error::EmptyPupil)));
    }
}
