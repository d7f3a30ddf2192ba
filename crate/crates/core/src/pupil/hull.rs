use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::pupil::PupilMask;

const MIN_VERTICES: usize = 3;
const MAX_VERTICES: usize = 360;
const GEOM_EPS: f64 = 1e-12;

/// Convex polygon in unit-circle coordinates, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexHullSpec {
    vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let k = v.len();
    (0..k)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % k];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

impl ConvexHullSpec {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < MIN_VERTICES || vertices.len() > MAX_VERTICES {
            return Err(Error::InvalidHull(format!(
                "{} vertices, expected {MIN_VERTICES}..={MAX_VERTICES}",
                vertices.len()
            )));
        }
        for p in &vertices {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite("hull vertex"));
            }
            if p[0].hypot(p[1]) > 1.0 + 1e-9 {
                return Err(Error::InvalidHull(format!(
                    "vertex ({}, {}) lies outside the unit circle",
                    p[0], p[1]
                )));
            }
        }
        let area = signed_area(&vertices);
        if area.abs() <= GEOM_EPS {
            return Err(Error::DegenerateHull);
        }
        if area < 0.0 {
            return Err(Error::InvalidHull("vertices are ordered clockwise".into()));
        }
        let k = vertices.len();
        for i in 0..k {
            if cross(vertices[i], vertices[(i + 1) % k], vertices[(i + 2) % k]) < -GEOM_EPS {
                return Err(Error::InvalidHull("polygon is not convex".into()));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let k = self.vertices.len();
        (0..k).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % k], [x, y]) >= -GEOM_EPS)
    }

    /// Plain-text vertex list, one `x y` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        s
    }
}

/// Parses a vertex list (`x y` per line, `#` comments allowed) and takes its
/// convex hull, so any point order is accepted.
pub fn parse_vertex_list(text: &str) -> Result<ConvexHullSpec> {
    let mut pts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => pts.push([x, y]),
            _ => {
                return Err(Error::InvalidHull(format!(
                    "line {}: expected two numbers, got {line:?}",
                    lineno + 1
                )))
            }
        }
    }
    convex_hull(&pts)
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, without
/// collinear boundary points.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<ConvexHullSpec> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateHull);
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(Error::DegenerateHull);
    }
    ConvexHullSpec::new(lower)
}

/// Regular `k`-gon inscribed in a circle of radius `r`, first vertex at
/// angle `phase` (radians).
pub fn regular_polygon(k: usize, r: f64, phase: f64) -> Result<ConvexHullSpec> {
    let v = (0..k)
        .map(|i| {
            let t = phase + 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            [r * t.cos(), r * t.sin()]
        })
        .collect();
    ConvexHullSpec::new(v)
}

/// Binary mask of pixels whose centre lies in the hull, clipped to the
/// reference circle.
pub fn rasterize_hull(spec: &ConvexHullSpec, grid: &GridSpec) -> Result<PupilMask> {
    if spec.area() <= GEOM_EPS {
        return Err(Error::DegenerateHull);
    }
    Ok(PupilMask::from_predicate(grid, |x, y| spec.contains(x, y)))
}
