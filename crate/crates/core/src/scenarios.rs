//! Built-in problem instances.

use crate::error::Result;
use crate::exitlab::Domain;
use crate::model::ModelSpec;

/// A model with its exit domain and stable point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub model: ModelSpec,
    pub domain: Domain,
    pub x_stable: Vec<f64>,
    /// Radius for the dissipativity estimate.
    pub r0: f64,
}

/// `V(x) = -x`, `φ(u) = u` in one dimension.
pub fn ornstein_uhlenbeck() -> Result<ModelSpec> {
    ModelSpec::gradient(1, OU_POTENTIAL, "u", 1)
}

pub const OU_POTENTIAL: &str = "0.5*x1^2";

/// `U = x² + 0.45x³` on `[-1.6, 1.2]`, blended with smoothstep weights into
/// `2x²` outside `[-2, 1.5]`.
pub const ASYMMETRIC_POTENTIAL: &str = "(1 - (1 - smoothstep(-2, -1.6, x1) + smoothstep(1.2, 1.5, x1))) \
     * (x1^2 + 0.45*x1^3) + (1 - smoothstep(-2, -1.6, x1) + smoothstep(1.2, 1.5, x1)) * 2*x1^2";

/// One-dimensional exit-side switch on `D = (-1.4, 1)`, `φ(u) = 2.5u`.
pub fn asymmetric_well() -> Result<Scenario> {
    Ok(Scenario {
        name: "paper-5.1",
        model: ModelSpec::gradient(1, ASYMMETRIC_POTENTIAL, "2.5*u", 1)?,
        domain: Domain::interval(-1.4, 1.0)?,
        x_stable: vec![0.0],
        r0: 2.0,
    })
}

pub const ELLIPSE_POTENTIAL: &str = "6*x1^2 + 0.5*x2^2";

/// `U = 6x² + y²/2`, `φ(u) = 4u`, `D = {x² + y²/4 < 1}`.
pub fn ellipse() -> Result<Scenario> {
    Ok(Scenario {
        name: "paper-5.2",
        model: ModelSpec::gradient(2, ELLIPSE_POTENTIAL, "4*u", 1)?,
        domain: Domain::ellipse([0.0, 0.0], [1.0, 2.0])?,
        x_stable: vec![0.0, 0.0],
        r0: 1.0,
    })
}

pub fn by_name(name: &str) -> Option<Result<Scenario>> {
    match name {
        "paper-5.1" => Some(asymmetric_well()),
        "paper-5.2" => Some(ellipse()),
        _ => None,
    }
}
