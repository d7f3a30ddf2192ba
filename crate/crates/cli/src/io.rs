//! Image, array and pupil/phase inputs shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use ndarray::Array2;
use pupil_design::experiment::{PhaseSampler, PhaseSplit};
use pupil_design::{
    parse_vertex_list, rasterize_hull, regular_polygon, GridSpec, PhaseMap, PupilMask, ZernikeBasis,
};

use crate::config::{parse_list, parse_modes};
use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Hexagon,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Hexagon => "hexagon",
        }
    }

    pub fn mask(self, grid: &GridSpec) -> Result<PupilMask> {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        let hull = match self {
            Shape::Circle => return Ok(PupilMask::circle(grid)),
            Shape::Square => regular_polygon(4, 1.0, FRAC_PI_4)?,
            Shape::Triangle => regular_polygon(3, 1.0, FRAC_PI_2)?,
            Shape::Hexagon => regular_polygon(6, 1.0, 0.0)?,
        };
        Ok(rasterize_hull(&hull, grid)?)
    }
}

/// Exactly one way of naming a pupil.
#[derive(Debug, Clone, Args)]
pub struct PupilArgs {
    /// Text file of "x y" vertices in unit-circle coordinates; the convex hull is used
    #[arg(long, value_name = "FILE", conflicts_with_all = ["shape", "mask"])]
    pub hull: Option<PathBuf>,
    /// Built-in pupil shape
    #[arg(long, value_enum, conflicts_with = "mask")]
    pub shape: Option<Shape>,
    /// Mask image (.pgm, .png: nonzero is open) or raw little-endian .f32 array
    #[arg(long, value_name = "FILE")]
    pub mask: Option<PathBuf>,
}

impl PupilArgs {
    pub fn load(&self, grid: &GridSpec) -> Result<PupilMask> {
        if let Some(path) = &self.hull {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading hull file {}", path.display()))?;
            let hull = parse_vertex_list(&text)?;
            return Ok(rasterize_hull(&hull, grid)?);
        }
        if let Some(shape) = self.shape {
            return shape.mask(grid);
        }
        if let Some(path) = &self.mask {
            let a = read_array(path)?;
            let a = if is_image(path) { a.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }) } else { a };
            return Ok(PupilMask::new(grid, a)?);
        }
        Err(Usage::new("one of --hull, --shape or --mask is required").into())
    }
}

/// A phase given either by explicit coefficients or by index into the
/// seeded phase sampler.
#[derive(Debug, Clone, Args)]
pub struct PhaseArgs {
    /// Comma-separated Zernike coefficients (radians), one per mode
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    pub coeffs: Option<String>,
    /// Noll indices of the modes, e.g. "2-15" or "4,5,7"
    #[arg(long, value_name = "LIST")]
    pub modes: Option<String>,
    /// Coefficient scale for sampled phases
    #[arg(long)]
    pub scale: Option<f64>,
    /// Index of the sampled phase
    #[arg(long, default_value_t = 0)]
    pub phase_index: usize,
    /// Draw sampled phases from the test split instead of the train split
    #[arg(long)]
    pub test_split: bool,
}

impl PhaseArgs {
    pub fn modes(&self) -> Result<Vec<u32>> {
        match &self.modes {
            Some(s) => parse_modes(s).map_err(|e| Usage::new(format!("--modes: {e}")).into()),
            None => Ok(PhaseSampler::default().modes),
        }
    }

    pub fn sampler(&self) -> Result<PhaseSampler> {
        Ok(PhaseSampler::new(self.modes()?, self.scale.unwrap_or(1.0))?)
    }

    pub fn basis(&self, grid: &GridSpec) -> Result<ZernikeBasis> {
        Ok(self.sampler()?.basis(grid)?)
    }

    pub fn load(&self, basis: &ZernikeBasis, seed: u64) -> Result<PhaseMap> {
        match &self.coeffs {
            Some(s) => {
                let c: Vec<f64> = parse_list(s).map_err(|e| Usage::new(format!("--coeffs: {e}")))?;
                let c: Vec<f64> = c.iter().map(|v| v * self.scale.unwrap_or(1.0)).collect();
                Ok(basis.synthesize(&c)?)
            }
            None => {
                let split = if self.test_split { PhaseSplit::Test } else { PhaseSplit::Train };
                Ok(self.sampler()?.phase(basis, seed, split, self.phase_index)?)
            }
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn is_image(path: &Path) -> bool {
    matches!(extension(path).as_str(), "png" | "pgm")
}

/// Reads a square array. Images are scaled to [0, 1]; `.f32` files are raw
/// little-endian row-major values.
pub fn read_array(path: &Path) -> Result<Array2<f64>> {
    match extension(path).as_str() {
        "png" | "pgm" => {
            let img = image::open(path)
                .with_context(|| format!("reading image {}", path.display()))?
                .into_luma8();
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok(Array2::from_shape_vec((h as usize, w as usize), data)?)
        }
        "f32" => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            if bytes.len() % 4 != 0 {
                bail!("{}: length {} is not a multiple of 4", path.display(), bytes.len());
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let n = (values.len() as f64).sqrt().round() as usize;
            if n * n != values.len() {
                bail!("{}: {} values do not form a square array", path.display(), values.len());
            }
            Ok(Array2::from_shape_vec((n, n), values)?)
        }
        other => Err(anyhow!("{}: unsupported extension {other:?} (use .f32, .pgm or .png)", path.display())),
    }
}

/// Writes an array as raw `.f32` or as an 8-bit image scaled to its maximum.
pub fn write_array(path: &Path, a: &Array2<f64>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match extension(path).as_str() {
        "png" | "pgm" => {
            let (h, w) = a.dim();
            let max = a.iter().cloned().fold(0.0f64, f64::max);
            let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
            let pixels: Vec<u8> = a.iter().map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8).collect();
            let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
                .ok_or_else(|| anyhow!("image buffer size mismatch"))?;
            img.save(path).with_context(|| format!("writing {}", path.display()))?;
        }
        "f32" => {
            let bytes: Vec<u8> = a.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        other => bail!("{}: unsupported extension {other:?} (use .f32, .pgm or .png)", path.display()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f32");
        let a = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64 * 0.25);
        write_array(&path, &a).unwrap();
        assert_eq!(read_array(&path).unwrap(), a);
    }

    #[test]
    fn pgm_round_trip_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let a = Array2::from_shape_fn((4, 4), |(i, _)| i as f64 * 2.0);
        write_array(&path, &a).unwrap();
        let b = read_array(&path).unwrap();
        assert_eq!(b[[3, 0]], 1.0);
        assert_eq!(b[[0, 0]], 0.0);
    }

    #[test]
    fn shapes_rasterize() {
        let g = GridSpec::default();
        for s in [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Hexagon] {
            assert!(s.mask(&g).unwrap().area() > 0.0);
        }
    }
}
