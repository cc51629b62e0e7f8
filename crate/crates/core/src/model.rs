//! Problem instances: the confining field `V`, the radial interaction profile
//! `φ` with its force `Φ(z) = φ(‖z‖) z/‖z‖`, structural checks and the
//! dissipativity constants.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Dual, Expression};
use crate::linalg::{dot, halton_point, norm};

/// The confining vector field `V`.
#[derive(Debug, Clone)]
pub enum VectorField {
    /// `V = -∇U`.
    Gradient(Expression),
    /// Explicit components `V_1..V_d`.
    Components(Vec<Expression>),
}

/// The interaction profile `φ: [0,∞) → [0,∞)`.
#[derive(Debug, Clone)]
pub enum RadialProfile {
    /// Coefficients, lowest degree first.
    Polynomial(Vec<f64>),
    Expr(Expression),
}

impl RadialProfile {
    /// Uses the polynomial form whenever the expression is a polynomial in `u`.
    pub fn from_expression(e: Expression) -> Self {
        match e.as_polynomial() {
            Some(c) => RadialProfile::Polynomial(c),
            None => RadialProfile::Expr(e),
        }
    }

    pub fn linear(slope: f64) -> Self {
        RadialProfile::Polynomial(vec![0.0, slope])
    }

    pub fn zero() -> Self {
        RadialProfile::Polynomial(vec![0.0])
    }

    /// `Some(c)` when `φ(u) = c·u`, i.e. `Φ(z) = c·z`.
    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            RadialProfile::Polynomial(c) => match c.as_slice() {
                [] => Some(0.0),
                [c0] if *c0 == 0.0 => Some(0.0),
                [c0, c1] if *c0 == 0.0 => Some(*c1),
                _ => None,
            },
            RadialProfile::Expr(_) => None,
        }
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match self {
            RadialProfile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * u + ck),
            RadialProfile::Expr(e) => e.eval_fast(&[u]),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            RadialProfile::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * u + k as f64 * ck),
            RadialProfile::Expr(e) => e.eval_with(&[Dual::new(u, 1.0)]).d,
        }
    }

    /// `φ(u)/u`, continuous at 0 for polynomials with zero constant term.
    #[inline]
    pub fn ratio(&self, u: f64) -> f64 {
        match self {
            RadialProfile::Polynomial(c) if c.first().copied().unwrap_or(0.0) == 0.0 => {
                c.iter().skip(1).rev().fold(0.0, |acc, &ck| acc * u + ck)
            }
            _ => self.value(u) / u,
        }
    }

    /// `∫_0^ρ φ(u) du`: closed form for polynomials, adaptive Simpson otherwise.
    pub fn integral(&self, rho: f64) -> f64 {
        match self {
            RadialProfile::Polynomial(c) => {
                c.iter()
                    .enumerate()
                    .rev()
                    .fold(0.0, |acc, (k, &ck)| acc * rho + ck / (k as f64 + 1.0))
                    * rho
            }
            RadialProfile::Expr(_) => adaptive_simpson(&|u| self.value(u), 0.0, rho, 1e-10),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            RadialProfile::Polynomial(c) => {
                let terms: Vec<String> = c
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| match k {
                        0 => format!("{v}"),
                        1 => format!("{v}*u"),
                        _ => format!("{v}*u^{k}"),
                    })
                    .collect();
                if terms.is_empty() {
                    "0".into()
                } else {
                    terms.join(" + ")
                }
            }
            RadialProfile::Expr(e) => e.to_string(),
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// One problem instance `(V, φ)`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    field: VectorField,
    profile: RadialProfile,
    growth_order: u32,
    weight_order: u32,
}

impl ModelSpec {
    /// `weight_order` defaults to `⌊r/2 + 1⌋`.
    pub fn new(
        dim: usize,
        field: VectorField,
        profile: RadialProfile,
        growth_order: u32,
        weight_order: Option<u32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        match &field {
            VectorField::Gradient(u) if u.dim() != dim => {
                return Err(Error::InvalidModel(format!(
                    "potential is in {} variable(s), model dimension is {dim}",
                    u.dim()
                )))
            }
            VectorField::Components(c) if c.len() != dim || c.iter().any(|e| e.dim() != dim) => {
                return Err(Error::InvalidModel(format!(
                    "drift needs {dim} component(s) in {dim} variable(s)"
                )))
            }
            _ => {}
        }
        if let RadialProfile::Expr(e) = &profile {
            if e.dim() != 1 {
                return Err(Error::InvalidModel("radial profile must be a function of u".into()));
            }
        }
        let q = weight_order.unwrap_or(growth_order / 2 + 1);
        if q == 0 || 2 * q <= growth_order {
            return Err(Error::InvalidModel(format!(
                "weight order q = {q} must satisfy 2q > r = {growth_order}"
            )));
        }
        Ok(Self {
            dim,
            field,
            profile,
            growth_order,
            weight_order: q,
        })
    }

    /// Gradient model `V = -∇U` from expression sources.
    pub fn gradient(dim: usize, potential: &str, profile: &str, growth_order: u32) -> Result<Self> {
        let u = crate::expr::parse(potential, dim)?;
        let phi = crate::expr::parse_profile(profile)?;
        Self::new(
            dim,
            VectorField::Gradient(u),
            RadialProfile::from_expression(phi),
            growth_order,
            None,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    pub fn growth_order(&self) -> u32 {
        self.growth_order
    }

    pub fn weight_order(&self) -> u32 {
        self.weight_order
    }

    pub fn is_gradient(&self) -> bool {
        matches!(self.field, VectorField::Gradient(_))
    }

    /// `U(x)` in the gradient case.
    pub fn potential(&self, x: &[f64]) -> Option<Result<f64>> {
        match &self.field {
            VectorField::Gradient(u) => Some(u.eval(x)),
            VectorField::Components(_) => None,
        }
    }

    /// `V(x)`, unchecked; non-finite output signals a domain violation.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.field {
            VectorField::Gradient(u) => {
                u.gradient_into(x, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
            VectorField::Components(c) => {
                for (o, e) in out.iter_mut().zip(c) {
                    *o = e.eval_fast(x);
                }
            }
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    /// Row-major Jacobian `DV(x)`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match &self.field {
            VectorField::Gradient(u) => u.hessian(x).into_iter().map(|h| -h).collect(),
            VectorField::Components(c) => {
                let mut out = vec![0.0; d * d];
                let mut row = vec![0.0; d];
                for (i, e) in c.iter().enumerate() {
                    e.gradient_into(x, &mut row);
                    out[i * d..(i + 1) * d].copy_from_slice(&row);
                }
                out
            }
        }
    }

    /// `DV(x)ᵀ r`.
    pub fn jacobian_transpose_apply(&self, x: &[f64], r: &[f64], out: &mut [f64]) {
        match &self.field {
            VectorField::Gradient(u) => {
                u.hessian_vector_into(x, r, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
            VectorField::Components(_) => {
                let d = self.dim;
                let j = self.jacobian(x);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (0..d).map(|i| j[i * d + k] * r[i]).sum();
                }
            }
        }
    }

    /// `⟨h, DV(x) h⟩`.
    pub fn jacobian_quadratic_form(&self, x: &[f64], h: &[f64]) -> f64 {
        match &self.field {
            VectorField::Gradient(u) => -u.hessian_form(x, h, h),
            VectorField::Components(c) => {
                let mut row = vec![0.0; self.dim];
                c.iter()
                    .zip(h)
                    .map(|(e, hi)| {
                        e.gradient_into(x, &mut row);
                        hi * dot(&row, h)
                    })
                    .sum()
            }
        }
    }

    /// Largest eigenvalue of `½(DV + DVᵀ)` at `x`.
    pub fn max_symmetric_eigenvalue(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let j = self.jacobian(x);
        if d == 1 {
            return j[0];
        }
        let sym = DMatrix::from_fn(d, d, |r, c| 0.5 * (j[r * d + c] + j[c * d + r]));
        sym.symmetric_eigenvalues().max()
    }

    /// `Φ(z)`, zero at the origin.
    #[inline]
    pub fn interaction_force_into(&self, z: &[f64], out: &mut [f64]) {
        let rho = norm(z);
        if rho == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let k = self.profile.ratio(rho);
        for (o, zi) in out.iter_mut().zip(z) {
            *o = k * zi;
        }
    }

    pub fn interaction_force(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.interaction_force_into(z, &mut out);
        out
    }

    /// `DΦ(z) r` (the Jacobian is symmetric).
    pub fn interaction_jacobian_apply(&self, z: &[f64], r: &[f64], out: &mut [f64]) {
        let rho = norm(z);
        if rho == 0.0 {
            let s = self.profile.derivative(0.0);
            for (o, ri) in out.iter_mut().zip(r) {
                *o = s * ri;
            }
            return;
        }
        let radial = self.profile.derivative(rho);
        let tangential = self.profile.ratio(rho);
        let proj = dot(z, r) / (rho * rho);
        for ((o, zi), ri) in out.iter_mut().zip(z).zip(r) {
            *o = radial * proj * zi + tangential * (ri - proj * zi);
        }
    }

    /// `A(z) = ∫_0^{‖z‖} φ(u) du`.
    pub fn interaction_potential(&self, z: &[f64]) -> f64 {
        self.profile.integral(norm(z))
    }
}

/// Axis-aligned region `∏ [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Precondition(format!("invalid box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[-h, h]^dim`.
    pub fn symmetric(half_width: f64, dim: usize) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn contains_ball(&self, radius: f64) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| *a <= -radius && *b >= radius)
    }

    /// Maps a point of the unit cube into the box.
    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (a, b))| a + t * (b - a))
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let (c, h) = (0.5 * (a + b), 0.5 * (b - a) * factor);
                (c - h, c + h)
            })
            .unzip();
        Self { lo, hi }
    }

    fn max_corner_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Constants of the one-sided Lipschitz and convexity-at-infinity bounds.
#[derive(Debug, Clone, Serialize)]
pub struct DissipativityConstants {
    /// One-sided Lipschitz constant, clamped at 0 from below.
    pub k_upper: f64,
    /// Raw supremum of the largest symmetrized eigenvalue over the box.
    pub k_upper_raw: f64,
    /// Convexity constant outside `r0`.
    pub k_convex: f64,
    pub eta: f64,
    pub r0: f64,
    pub r1: f64,
    /// `sup_{‖y‖ = r0} ‖V(y)‖` as sampled.
    pub sup_boundary_drift: f64,
    pub sampling_box: BoxRegion,
    pub n_samples: usize,
}

fn sphere_points(dim: usize, radius: f64, n: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![-radius], vec![radius]],
        2 => (0..n.max(8))
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n.max(8) as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect(),
        _ => (1..=n.max(16))
            .filter_map(|k| {
                let p: Vec<f64> = halton_point(k, dim).iter().map(|u| 2.0 * u - 1.0).collect();
                let r = norm(&p);
                (r > 1e-3).then(|| p.iter().map(|v| radius * v / r).collect())
            })
            .collect(),
    }
}

/// Estimates the dissipativity constants by sampling the symmetrized Jacobian
/// over `region` (Halton points plus the sphere of radius `r0_candidate`).
pub fn estimate_constants(
    model: &ModelSpec,
    region: &BoxRegion,
    r0_candidate: f64,
    n_samples: usize,
) -> Result<DissipativityConstants> {
    let d = model.dim();
    if region.dim() != d {
        return Err(Error::Precondition("sampling box dimension mismatch".into()));
    }
    if !(r0_candidate > 0.0) || !region.contains_ball(r0_candidate) {
        return Err(Error::Precondition(format!(
            "sampling box must contain the ball of radius {r0_candidate}"
        )));
    }
    let sphere = sphere_points(d, r0_candidate, 64);
    let mut points: Vec<Vec<f64>> = (1..=n_samples).map(|k| region.map_unit(&halton_point(k, d))).collect();
    points.extend(sphere.iter().cloned());
    let origin = vec![0.0; d];
    if region.contains(&origin) {
        points.push(origin);
    }

    let mut k_raw = f64::NEG_INFINITY;
    let mut sup_outside = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for x in &points {
        let lam = model.max_symmetric_eigenvalue(x);
        if !lam.is_finite() {
            return Err(Error::InvalidModel(format!("non-finite Jacobian at {x:?}")));
        }
        k_raw = k_raw.max(lam);
        if norm(x) >= r0_candidate * (1.0 - 1e-12) {
            sup_outside = sup_outside.max(lam);
            if lam >= 0.0 && violations.len() < 20 {
                violations.push(x.clone());
            }
        }
    }
    let k_convex = -sup_outside;
    if !(k_convex > 0.0) {
        return Err(Error::Dissipativity { points: violations });
    }
    let sup_boundary_drift = sphere.iter().map(|y| norm(&model.drift(y))).fold(0.0, f64::max);
    Ok(DissipativityConstants {
        k_upper: k_raw.max(0.0),
        k_upper_raw: k_raw,
        k_convex,
        eta: k_convex / 4.0,
        r0: r0_candidate,
        r1: (2.0 * r0_candidate).max(4.0 * sup_boundary_drift / k_convex),
        sup_boundary_drift,
        sampling_box: region.clone(),
        n_samples: points.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionTolerances {
    pub r0: f64,
    pub n_grid: usize,
    pub n_pairs: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        Self {
            r0: 1.0,
            n_grid: 1000,
            n_pairs: 2000,
            n_samples: 4000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClauseResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub clauses: Vec<ClauseResult>,
    /// Whether the convexity bound holds on the whole sampled box.
    pub global_convexity: bool,
    pub constants: Option<DissipativityConstants>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Numerical check of the structural assumptions on `region`.
pub fn check_assumptions(model: &ModelSpec, region: &BoxRegion, tol: &AssumptionTolerances) -> AssumptionReport {
    let d = model.dim();
    let mut clauses = Vec::new();

    // φ(0) = 0, φ ≥ 0, nondecreasing
    let profile = model.profile();
    let u_max = region.max_corner_norm() * 2.0;
    let n = tol.n_grid.max(2);
    let mut prev = profile.value(0.0);
    let mut problem = None;
    if prev.abs() > 1e-12 {
        problem = Some(format!("phi(0) = {prev}"));
    }
    for k in 1..=n {
        let u = u_max * k as f64 / n as f64;
        let v = profile.value(u);
        if problem.is_none() {
            if !v.is_finite() || v < 0.0 {
                problem = Some(format!("phi({u}) = {v} is negative or not finite"));
            } else if v < prev - 1e-12 * (1.0 + prev.abs()) {
                problem = Some(format!("phi decreases at u = {u}"));
            }
        }
        prev = v;
    }
    clauses.push(ClauseResult {
        name: "profile_monotone",
        passed: problem.is_none(),
        detail: problem.unwrap_or_else(|| format!("phi(0)=0, nonnegative and nondecreasing on [0, {u_max}]")),
    });

    // polynomial growth witness, fitted on the box and re-checked on the doubled box
    let r = model.growth_order() as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(tol.seed);
    let mut witness = |b: &BoxRegion| -> f64 {
        let mut k: f64 = 0.0;
        for _ in 0..tol.n_pairs {
            let x: Vec<f64> = b.map_unit(&(0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let y: Vec<f64> = b.map_unit(&(0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let gap = norm(&dxy);
            if gap < 1e-12 {
                continue;
            }
            let fx = model.interaction_force(&x);
            let fy = model.interaction_force(&y);
            let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
            let need = norm(&df) / gap - norm(&x).powi(r) - norm(&y).powi(r);
            k = k.max(if need.is_finite() { need } else { f64::INFINITY });
        }
        k
    };
    let k_fit = witness(region);
    let k_big = witness(&region.scaled(2.0));
    let growth_ok = k_fit.is_finite() && k_big <= 1.5 * k_fit + 1e-9;
    clauses.push(ClauseResult {
        name: "polynomial_growth",
        passed: growth_ok,
        detail: format!("witness K = {k_fit:.6} on the box, {k_big:.6} on the doubled box (r = {r})"),
    });

    let (constants, local) = match estimate_constants(model, region, tol.r0, tol.n_samples) {
        Ok(c) => {
            let detail = format!("K_V = {:.6} outside r0 = {}", c.k_convex, c.r0);
            (
                Some(c),
                ClauseResult {
                    name: "local_dissipativity",
                    passed: true,
                    detail,
                },
            )
        }
        Err(e) => (
            None,
            ClauseResult {
                name: "local_dissipativity",
                passed: false,
                detail: e.to_string(),
            },
        ),
    };
    clauses.push(local);

    let global_convexity = constants.as_ref().is_some_and(|c| c.k_upper_raw < -1e-9);
    AssumptionReport {
        clauses,
        global_convexity,
        constants,
    }
}
