//! Centred two-dimensional DFTs on square grids.
//!
//! Arrays are stored with the origin at index `(n/2, n/2)`. The forward
//! transform is `fftshift(fft2(ifftshift(x)))`, unnormalized, so Parseval
//! reads `sum |X|^2 = n^2 * sum |x|^2`. The inverse carries the `1/n^2`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    let key = (len, direction == FftDirection::Forward);
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction)))
            .clone()
    })
}

/// Corner-origin 2D DFT of a rectangular array, in place.
pub fn fft2_raw(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    if !data.is_standard_layout() {
        *data = data.as_standard_layout().to_owned();
    }
    let buf = data.as_slice_mut().expect("standard layout");
    plan(cols, direction).process(buf);

    let mut t = vec![Complex64::new(0.0, 0.0); rows * cols];
    transpose(buf, &mut t, rows, cols);
    plan(rows, direction).process(&mut t);
    transpose(&t, buf, cols, rows);
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (c, v) in row.iter().enumerate() {
            dst[c * rows + r] = *v;
        }
    }
}

/// Cyclic shift by half the side length in both axes. For even sizes this is
/// both `fftshift` and `ifftshift`.
pub fn half_shift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    let (hr, hc) = (rows / 2, cols / 2);
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        a[[(i + hr) % rows, (j + hc) % cols]].clone()
    })
}

/// Centred forward DFT (unnormalized).
pub fn fft2_centered(field: &Array2<Complex64>) -> Array2<Complex64> {
    let mut x = half_shift(field);
    fft2_raw(&mut x, FftDirection::Forward);
    half_shift(&x)
}

/// Centred inverse DFT (scaled by `1/(rows*cols)`).
pub fn ifft2_centered(spectrum: &Array2<Complex64>) -> Array2<Complex64> {
    let mut x = half_shift(spectrum);
    fft2_raw(&mut x, FftDirection::Inverse);
    let scale = 1.0 / (x.len() as f64);
    x.mapv_inplace(|v| v * scale);
    half_shift(&x)
}

/// `|F field|^2` with the centred convention.
pub fn intensity(field: &Array2<Complex64>) -> Array2<f64> {
    fft2_centered(field).mapv(|v| v.norm_sqr())
}

/// Cyclic convolution of two equally sized real arrays, where `kernel` is
/// stored centred (its origin at `(rows/2, cols/2)`).
pub fn convolve_centered_kernel(image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
    let mut a = image.mapv(|v| Complex64::new(v, 0.0));
    let mut k = half_shift(&kernel.to_owned()).mapv(|v| Complex64::new(v, 0.0));
    fft2_raw(&mut a, FftDirection::Forward);
    fft2_raw(&mut k, FftDirection::Forward);
    a.zip_mut_with(&k, |x, y| *x *= *y);
    fft2_raw(&mut a, FftDirection::Inverse);
    let scale = 1.0 / (a.len() as f64);
    a.mapv(|v| v.re * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn naive_dft(x: &Array2<Complex64>) -> Array2<Complex64> {
        let (r, c) = x.dim();
        Array2::from_shape_fn((r, c), |(k, l)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..r {
                for j in 0..c {
                    let ang = -2.0 * std::f64::consts::PI
                        * ((k * i) as f64 / r as f64 + (l * j) as f64 / c as f64);
                    acc += x[[i, j]] * Complex64::from_polar(1.0, ang);
                }
            }
            acc
        })
    }

    #[test]
    fn raw_matches_naive_dft() {
        let x = Array2::from_shape_fn((6, 4), |(i, j)| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2)
        });
        let mut y = x.clone();
        fft2_raw(&mut y, FftDirection::Forward);
        let z = naive_dft(&x);
        for (a, b) in y.iter().zip(z.iter()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-10);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn centered_round_trip() {
        let x = Array2::from_shape_fn((8, 8), |(i, j)| Complex64::new(i as f64, j as f64 * 0.5));
        let back = ifft2_centered(&fft2_centered(&x));
        for (a, b) in x.iter().zip(back.iter()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn centered_delta_is_flat() {
        let mut x = Array2::from_elem((8, 8), Complex64::new(0.0, 0.0));
        x[[4, 4]] = Complex64::new(1.0, 0.0);
        let y = fft2_centered(&x);
        for v in y.iter() {
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-14);
            assert_relative_eq!(v.im, 0.0, epsilon = 1e-14);
        }
    }
}
