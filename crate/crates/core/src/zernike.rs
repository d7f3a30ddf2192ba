//! Noll-indexed Zernike polynomials on the reference circle.
//!
//! | j | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | 11 | ... |
//! |---|---|---|---|---|---|---|---|---|---|----|----|-----|
//! | n | 0 | 1 | 1 | 2 | 2 | 2 | 3 | 3 | 3 | 3  | 4  | ... |
//! | m | 0 | 1 |-1 | 0 |-2 | 2 |-1 | 1 |-3 | 3  | 0  | ... |
//!
//! Even `j` carry the cosine term, odd `j` the sine term.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PhaseMap;
use crate::grid::GridSpec;

/// Highest supported Noll index (radial order 20).
pub const MAX_NOLL_INDEX: u32 = 231;

/// Radial order `n` and signed azimuthal frequency `m` of Noll index `j`.
pub fn noll_to_nm(j: u32) -> Result<(u32, i32)> {
    if j == 0 || j > MAX_NOLL_INDEX {
        return Err(Error::InvalidNollIndex(j as i64));
    }
    let mut n = 0u32;
    let mut rem = j - 1;
    while rem > n {
        n += 1;
        rem -= n;
    }
    let abs_m = (n % 2) + 2 * ((rem + (n + 1) % 2) / 2);
    let m = if j % 2 == 0 { abs_m as i32 } else { -(abs_m as i32) };
    Ok((n, m))
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Zernike radial polynomial `R_n^{|m|}(r)`.
pub fn radial(n: u32, m: u32, r: f64) -> f64 {
    debug_assert!(m <= n && (n - m) % 2 == 0);
    (0..=(n - m) / 2).fold(0.0, |acc, k| {
        let c = factorial(n - k)
            / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc + sign * c * r.powi((n - 2 * k) as i32)
    })
}

/// Noll-normalized Zernike polynomial at polar coordinates `(r, theta)`.
pub fn zernike(j: u32, r: f64, theta: f64) -> Result<f64> {
    let (n, m) = noll_to_nm(j)?;
    let am = m.unsigned_abs();
    let rad = radial(n, am, r);
    let norm = ((n + 1) as f64).sqrt();
    Ok(match m {
        0 => norm * rad,
        m if m > 0 => norm * std::f64::consts::SQRT_2 * rad * (am as f64 * theta).cos(),
        _ => norm * std::f64::consts::SQRT_2 * rad * (am as f64 * theta).sin(),
    })
}

/// How the sampled maps are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ZernikeNormalization {
    /// Analytic Noll polynomials sampled at pixel centres.
    Analytic,
    /// Analytic maps re-orthonormalized over the disk pixels (modified
    /// Gram-Schmidt in Noll order, starting from piston), so that the
    /// discrete basis has exact unit variance and zero cross terms.
    #[default]
    Orthonormalized,
}

/// Stack of Zernike maps on a grid, zero outside the reference circle.
#[derive(Debug, Clone)]
pub struct ZernikeBasis {
    grid: GridSpec,
    modes: Vec<u32>,
    maps: Vec<Array2<f64>>,
    normalization: ZernikeNormalization,
}

fn analytic_map(grid: &GridSpec, j: u32) -> Result<Array2<f64>> {
    noll_to_nm(j)?;
    Ok(Array2::from_shape_fn((grid.n, grid.n), |(i, k)| {
        if !grid.in_circle(i, k) {
            return 0.0;
        }
        let (x, y) = grid.unit_coords(i, k);
        zernike(j, x.hypot(y), y.atan2(x)).unwrap_or(0.0)
    }))
}

/// Builds the basis for `modes` with the default (orthonormalized) maps.
pub fn build_zernike_basis(grid: &GridSpec, modes: &[u32]) -> Result<ZernikeBasis> {
    ZernikeBasis::new(grid, modes, ZernikeNormalization::default())
}

impl ZernikeBasis {
    pub fn new(grid: &GridSpec, modes: &[u32], normalization: ZernikeNormalization) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::EmptyModeList);
        }
        for &j in modes {
            noll_to_nm(j)?;
        }
        let maps = match normalization {
            ZernikeNormalization::Analytic => modes
                .iter()
                .map(|&j| analytic_map(grid, j))
                .collect::<Result<Vec<_>>>()?,
            ZernikeNormalization::Orthonormalized => {
                let jmax = *modes.iter().max().expect("nonempty");
                let full = orthonormalized(grid, jmax)?;
                modes.iter().map(|&j| full[(j - 1) as usize].clone()).collect()
            }
        };
        Ok(Self {
            grid: *grid,
            modes: modes.to_vec(),
            maps,
            normalization,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn modes(&self) -> &[u32] {
        &self.modes
    }

    pub fn maps(&self) -> &[Array2<f64>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn normalization(&self) -> ZernikeNormalization {
        self.normalization
    }

    /// `phi = sum_m a_m z_m`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<PhaseMap> {
        synthesize_phase(coeffs, self)
    }
}

fn orthonormalized(grid: &GridSpec, jmax: u32) -> Result<Vec<Array2<f64>>> {
    let support = grid.circle_support();
    let count = support.iter().filter(|&&b| b).count() as f64;
    let dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>() / count
    };
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(jmax as usize);
    for j in 1..=jmax {
        let mut v = analytic_map(grid, j)?;
        for u in &out {
            let c = dot(u, &v);
            v.zip_mut_with(u, |a, b| *a -= c * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= f64::EPSILON {
            return Err(Error::InvalidGrid(format!(
                "circle too small to resolve Zernike mode {j}"
            )));
        }
        v.mapv_inplace(|a| a / norm);
        out.push(v);
    }
    Ok(out)
}

/// Pointwise linear combination of the basis maps.
pub fn synthesize_phase(coeffs: &[f64], basis: &ZernikeBasis) -> Result<PhaseMap> {
    if coeffs.len() != basis.len() {
        return Err(Error::CoefficientLength {
            expected: basis.len(),
            got: coeffs.len(),
        });
    }
    let n = basis.grid.n;
    let mut values = Array2::<f64>::zeros((n, n));
    for (a, z) in coeffs.iter().zip(&basis.maps) {
        if *a != 0.0 {
            values.scaled_add(*a, z);
        }
    }
    PhaseMap::new(&basis.grid, values)
}
