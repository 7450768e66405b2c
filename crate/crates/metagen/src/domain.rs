//! Core value types and the analytic physics of the nested-cylinder use case.
//!
//! A system is two hollow cylinders, the inner one touching the outer one
//! (`r_int1 == r_ext2`), plus a material density per cylinder. It balances a
//! cube of mass `m_cube` on a scale with arm lengths `x` and `y`:
//!
//! ```text
//! pi * [(r_ext1^2 - r_int1^2) d1 + (r_ext2^2 - r_int2^2) d2] * y = m_cube * x
//! ```
//!
//! Cylinders and densities are represented as origin-centered circles of 2-D
//! points at a fixed angular partition, so a whole system flattens to 360
//! reals. Everything here is a pure function and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cylinder wall thickness, fixed for the whole benchmark.
pub const THICKNESS: f64 = 5.0;

/// Points per rendered circle.
pub const DEFAULT_POINTS: usize = 30;

/// Scale arm total: dataset records satisfy `x + y == ARM_TOTAL`.
pub const ARM_TOTAL: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("external radius {r_ext} smaller than internal radius {r_int}")]
    InvertedAnnulus { r_ext: f64, r_int: f64 },
    #[error("a circle needs at least 3 points, got {0}")]
    TooFewPoints(usize),
}

/// Scalar ground truth of one system: four radii and two densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub r_ext1: f64,
    pub r_int1: f64,
    pub r_ext2: f64,
    pub r_int2: f64,
    pub d1: f64,
    pub d2: f64,
}

impl SystemParams {
    pub fn new(r_ext1: f64, r_int1: f64, r_ext2: f64, r_int2: f64, d1: f64, d2: f64) -> Self {
        Self { r_ext1, r_int1, r_ext2, r_int2, d1, d2 }
    }

    /// Fields in declaration order, handy for componentwise comparisons.
    pub fn as_array(&self) -> [f64; 6] {
        [self.r_ext1, self.r_int1, self.r_ext2, self.r_int2, self.d1, self.d2]
    }
}

/// The conditioning triple: arm lengths and the mass to balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub x: f64,
    pub y: f64,
    pub m_cube: f64,
}

impl Condition {
    pub fn new(x: f64, y: f64, m_cube: f64) -> Self {
        Self { x, y, m_cube }
    }
}

/// An ordered ring of 2-D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub points: Vec<[f64; 2]>,
}

impl Circle {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The two border circles of one hollow cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub ext: Circle,
    pub int: Circle,
}

/// Point-cloud representation of a whole system: four border circles plus one
/// circle per density (density value = circle radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudSystem {
    pub outer: Cylinder,
    pub inner: Cylinder,
    pub density1: Circle,
    pub density2: Circle,
}

impl PointCloudSystem {
    /// Flattens to `[outer.ext | outer.int | inner.ext | inner.int | d1 | d2]`
    /// with each circle as `x0, y0, x1, y1, ...`. 360 reals at the default
    /// 30-point resolution.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for c in self.circles() {
            for p in &c.points {
                out.push(p[0]);
                out.push(p[1]);
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); `n_points` per circle.
    pub fn from_flat(flat: &[f64], n_points: usize) -> Option<Self> {
        if flat.len() != 12 * n_points {
            return None;
        }
        let circle = |i: usize| {
            let base = i * 2 * n_points;
            Circle {
                points: (0..n_points)
                    .map(|k| [flat[base + 2 * k], flat[base + 2 * k + 1]])
                    .collect(),
            }
        };
        Some(Self {
            outer: Cylinder { ext: circle(0), int: circle(1) },
            inner: Cylinder { ext: circle(2), int: circle(3) },
            density1: circle(4),
            density2: circle(5),
        })
    }

    pub fn flat_len(&self) -> usize {
        self.circles().iter().map(|c| 2 * c.len()).sum()
    }

    fn circles(&self) -> [&Circle; 6] {
        [
            &self.outer.ext,
            &self.outer.int,
            &self.inner.ext,
            &self.inner.int,
            &self.density1,
            &self.density2,
        ]
    }
}

/// Mass that balances the system at arm lengths `x`, `y`:
/// `m_cube = pi * [(r_ext1^2 - r_int1^2) d1 + (r_ext2^2 - r_int2^2) d2] * y / x`.
pub fn equilibrium_mass(p: &SystemParams, x: f64, y: f64) -> Result<f64, DomainError> {
    if x <= 0.0 {
        return Err(DomainError::NonPositiveDistance(x));
    }
    if y <= 0.0 {
        return Err(DomainError::NonPositiveDistance(y));
    }
    if p.r_ext1 < p.r_int1 {
        return Err(DomainError::InvertedAnnulus { r_ext: p.r_ext1, r_int: p.r_int1 });
    }
    if p.r_ext2 < p.r_int2 {
        return Err(DomainError::InvertedAnnulus { r_ext: p.r_ext2, r_int: p.r_int2 });
    }
    let areas = (p.r_ext1 * p.r_ext1 - p.r_int1 * p.r_int1) * p.d1
        + (p.r_ext2 * p.r_ext2 - p.r_int2 * p.r_int2) * p.d2;
    Ok(std::f64::consts::PI * areas * y / x)
}

/// Renders a circle of radius `r` as `n` points at angles `2*pi*i/n`.
pub fn render_circle(r: f64, n: usize) -> Result<Circle, DomainError> {
    if r <= 0.0 {
        return Err(DomainError::NonPositiveRadius(r));
    }
    if n < 3 {
        return Err(DomainError::TooFewPoints(n));
    }
    let points = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [r * theta.cos(), r * theta.sin()]
        })
        .collect();
    Ok(Circle { points })
}

/// Renders the full point-cloud representation of `p` at the default
/// resolution.
pub fn render_system(p: &SystemParams) -> Result<PointCloudSystem, DomainError> {
    render_system_with_points(p, DEFAULT_POINTS)
}

/// Renders with `n` points per circle. Border circles use the four radii,
/// density circles use the density values as radii.
pub fn render_system_with_points(
    p: &SystemParams,
    n: usize,
) -> Result<PointCloudSystem, DomainError> {
    Ok(PointCloudSystem {
        outer: Cylinder {
            ext: render_circle(p.r_ext1, n)?,
            int: render_circle(p.r_int1, n)?,
        },
        inner: Cylinder {
            ext: render_circle(p.r_ext2, n)?,
            int: render_circle(p.r_int2, n)?,
        },
        density1: render_circle(p.d1, n)?,
        density2: render_circle(p.d2, n)?,
    })
}

/// Mean Euclidean norm of the points. Exact inverse of [`render_circle`] for
/// noiseless circles, unbiased under zero-mean radial noise, and invariant to
/// point order. Returns 0 for an empty circle.
pub fn estimate_radius(c: &Circle) -> f64 {
    if c.points.is_empty() {
        return 0.0;
    }
    let sum: f64 = c.points.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum();
    sum / c.points.len() as f64
}

/// Recovers the six scalars of a (possibly generated, possibly invalid)
/// point-cloud system via [`estimate_radius`] on each circle.
pub fn estimate_params(pc: &PointCloudSystem) -> SystemParams {
    SystemParams {
        r_ext1: estimate_radius(&pc.outer.ext),
        r_int1: estimate_radius(&pc.outer.int),
        r_ext2: estimate_radius(&pc.inner.ext),
        r_int2: estimate_radius(&pc.inner.int),
        d1: estimate_radius(&pc.density1),
        d2: estimate_radius(&pc.density2),
    }
}
