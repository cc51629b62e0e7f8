//! Bounded open exit regions `D = {g < 0}` with boundary parametrizations.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::linalg::{dist, halton_point, norm};

#[derive(Debug, Clone)]
pub enum DomainKind {
    /// `(a, b)` in one dimension. Boundary parameter: `-1` at `a`, `+1` at `b`.
    Interval { a: f64, b: f64 },
    /// Open ball. Boundary parameter: polar angle in the plane, angle to the
    /// first axis otherwise.
    Ball { center: Vec<f64>, radius: f64 },
    /// Planar ellipse `((x-c1)/s1)² + ((y-c2)/s2)² < 1`. Boundary parameter:
    /// `θ` with boundary point `c + (s1 cos θ, s2 sin θ)`.
    Ellipse { center: [f64; 2], semi_axes: [f64; 2] },
    /// `{g < 0}` with user-supplied boundary samples. Boundary parameter: the
    /// index of the nearest sample.
    Implicit { g: Expression, boundary: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct Domain {
    kind: DomainKind,
}

/// A point on `∂D` with its boundary parameter.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryPoint {
    pub param: f64,
    pub point: Vec<f64>,
}

impl Domain {
    pub fn new(kind: DomainKind) -> Result<Self> {
        let bad = |m: &str| Err(Error::Precondition(format!("invalid domain: {m}")));
        match &kind {
            DomainKind::Interval { a, b } if !(a < b) => return bad("interval needs a < b"),
            DomainKind::Ball { center, radius } if center.is_empty() || !(*radius > 0.0) => {
                return bad("ball needs a center and a positive radius")
            }
            DomainKind::Ellipse { semi_axes, .. } if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) => {
                return bad("ellipse semi-axes must be positive")
            }
            DomainKind::Implicit { g, boundary } => {
                if boundary.is_empty() || boundary.iter().any(|p| p.len() != g.dim()) {
                    return bad("implicit domain needs boundary samples of matching dimension");
                }
                for p in boundary {
                    let v = g.eval(p)?;
                    if v.abs() > 1e-9 {
                        return bad(&format!("boundary sample {p:?} has g = {v}"));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(DomainKind::Interval { a, b })
    }

    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2]) -> Result<Self> {
        Self::new(DomainKind::Ellipse { center, semi_axes })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(DomainKind::Ball { center, radius })
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::Interval { .. } => 1,
            DomainKind::Ball { center, .. } => center.len(),
            DomainKind::Ellipse { .. } => 2,
            DomainKind::Implicit { g, .. } => g.dim(),
        }
    }

    /// Level function `g`: negative inside, zero on the boundary.
    #[inline]
    pub fn level(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => (a - x[0]).max(x[0] - b),
            DomainKind::Ball { center, radius } => dist(x, center) - radius,
            DomainKind::Ellipse { center, semi_axes } => {
                let u = (x[0] - center[0]) / semi_axes[0];
                let v = (x[1] - center[1]) / semi_axes[1];
                (u * u + v * v).sqrt() - 1.0
            }
            DomainKind::Implicit { g, .. } => g.eval_fast(x),
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) < 0.0
    }

    pub fn center(&self) -> Vec<f64> {
        match &self.kind {
            DomainKind::Interval { a, b } => vec![0.5 * (a + b)],
            DomainKind::Ball { center, .. } => center.clone(),
            DomainKind::Ellipse { center, .. } => center.to_vec(),
            DomainKind::Implicit { boundary, .. } => {
                let n = boundary.len() as f64;
                let d = boundary[0].len();
                (0..d).map(|k| boundary.iter().map(|p| p[k]).sum::<f64>() / n).collect()
            }
        }
    }

    /// Characteristic size (largest center-to-boundary distance).
    pub fn scale(&self) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => 0.5 * (b - a),
            DomainKind::Ball { radius, .. } => *radius,
            DomainKind::Ellipse { semi_axes, .. } => semi_axes[0].max(semi_axes[1]),
            DomainKind::Implicit { boundary, .. } => {
                let c = self.center();
                boundary.iter().map(|p| dist(p, &c)).fold(0.0, f64::max)
            }
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            DomainKind::Interval { a, b } => (vec![*a], vec![*b]),
            DomainKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            DomainKind::Ellipse { center, semi_axes } => (
                vec![center[0] - semi_axes[0], center[1] - semi_axes[1]],
                vec![center[0] + semi_axes[0], center[1] + semi_axes[1]],
            ),
            DomainKind::Implicit { boundary, .. } => {
                let d = boundary[0].len();
                let lo = (0..d)
                    .map(|k| boundary.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min))
                    .collect();
                let hi = (0..d)
                    .map(|k| boundary.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                (lo, hi)
            }
        }
    }

    /// Boundary point for a parameter value, when the boundary is parametrized.
    pub fn boundary_point(&self, param: f64) -> Option<Vec<f64>> {
        match &self.kind {
            DomainKind::Interval { a, b } => Some(vec![if param < 0.0 { *a } else { *b }]),
            DomainKind::Ball { center, radius } if center.len() == 2 => {
                Some(vec![center[0] + radius * param.cos(), center[1] + radius * param.sin()])
            }
            DomainKind::Ball { center, radius } if center.len() == 1 => Some(vec![center[0] + radius * param.signum()]),
            DomainKind::Ellipse { center, semi_axes } => Some(vec![
                center[0] + semi_axes[0] * param.cos(),
                center[1] + semi_axes[1] * param.sin(),
            ]),
            _ => None,
        }
    }

    /// Whether the boundary parameter is a continuous angle.
    pub fn has_angle_parameter(&self) -> bool {
        match &self.kind {
            DomainKind::Ellipse { .. } => true,
            DomainKind::Ball { center, .. } => center.len() == 2,
            _ => false,
        }
    }

    /// Boundary parameter of a point on (or near) `∂D`.
    pub fn boundary_param(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => {
                if (x[0] - a).abs() <= (x[0] - b).abs() {
                    -1.0
                } else {
                    1.0
                }
            }
            DomainKind::Ball { center, .. } => match center.len() {
                1 => (x[0] - center[0]).signum(),
                2 => (x[1] - center[1]).atan2(x[0] - center[0]),
                _ => {
                    let r = dist(x, center);
                    ((x[0] - center[0]) / r).clamp(-1.0, 1.0).acos()
                }
            },
            DomainKind::Ellipse { center, semi_axes } => {
                ((x[1] - center[1]) / semi_axes[1]).atan2((x[0] - center[0]) / semi_axes[0])
            }
            DomainKind::Implicit { boundary, .. } => {
                boundary
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dist(p, x)))
                    .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                    .0 as f64
            }
        }
    }

    /// `n` boundary samples (both endpoints for an interval).
    pub fn boundary_samples(&self, n: usize) -> Vec<BoundaryPoint> {
        match &self.kind {
            DomainKind::Interval { a, b } => vec![
                BoundaryPoint {
                    param: -1.0,
                    point: vec![*a],
                },
                BoundaryPoint {
                    param: 1.0,
                    point: vec![*b],
                },
            ],
            DomainKind::Implicit { boundary, .. } => boundary
                .iter()
                .enumerate()
                .map(|(i, p)| BoundaryPoint {
                    param: i as f64,
                    point: p.clone(),
                })
                .collect(),
            DomainKind::Ball { center, radius } if center.len() > 2 => (1..=n)
                .filter_map(|k| {
                    let dir: Vec<f64> = halton_point(k, center.len()).iter().map(|u| 2.0 * u - 1.0).collect();
                    let r = norm(&dir);
                    (r > 1e-3).then(|| {
                        let point: Vec<f64> = center.iter().zip(&dir).map(|(c, v)| c + radius * v / r).collect();
                        BoundaryPoint {
                            param: self.boundary_param(&point),
                            point,
                        }
                    })
                })
                .collect(),
            _ => (0..n)
                .map(|k| {
                    let param = -PI + 2.0 * PI * k as f64 / n as f64;
                    BoundaryPoint {
                        param,
                        point: self.boundary_point(param).expect("parametrized boundary"),
                    }
                })
                .collect(),
        }
    }

    /// Moves a point toward the center by the fraction `offset` of its
    /// distance to the center.
    pub fn inward(&self, point: &[f64], offset: f64) -> Vec<f64> {
        let c = self.center();
        point
            .iter()
            .zip(&c)
            .map(|(p, c)| c + (p - c) * (1.0 - offset))
            .collect()
    }
}
