//! Deterministic flows: `ψ̇ = V(ψ)`, the relaxed flow `φ̇ = V(φ) - Φ(φ - x*)`,
//! equilibria and stability of an exit domain under the relaxed flow.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exitlab::Domain;
use crate::linalg::{dist, halton_point, norm};
use crate::model::ModelSpec;

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// A trajectory on a uniform time grid `t0, t0 + dt, ..`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub t0: f64,
    pub dt: f64,
    dim: usize,
    data: Vec<f64>,
}

impl PathSample {
    pub fn new(t0: f64, dt: f64, dim: usize) -> Self {
        Self {
            t0,
            dt,
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_states(t0: f64, dt: f64, states: &[Vec<f64>]) -> Result<Self> {
        if !(dt > 0.0) || states.is_empty() {
            return Err(Error::Precondition("path needs dt > 0 and at least one state".into()));
        }
        let dim = states[0].len();
        let mut p = Self::new(t0, dt, dim);
        for s in states {
            if s.len() != dim {
                return Err(Error::Precondition("path states differ in dimension".into()));
            }
            p.push(s);
        }
        Ok(p)
    }

    pub fn with_capacity(t0: f64, dt: f64, dim: usize, n_states: usize) -> Self {
        Self {
            t0,
            dt,
            dim,
            data: Vec::with_capacity(n_states * dim),
        }
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.data.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states.
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    /// Raw row-major state storage.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Whether two paths share `t0`, `dt` and length.
    pub fn same_grid(&self, other: &PathSample) -> bool {
        self.len() == other.len()
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// Number of uniform steps covering `[0, horizon]` with step at most `dt`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0) || !(dt > 0.0) || !horizon.is_finite() {
        return Err(Error::Precondition(format!(
            "need horizon > 0 and dt > 0, got T = {horizon}, dt = {dt}"
        )));
    }
    Ok(((horizon / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Fixed-step RK4 for `ẋ = f(x)`.
pub fn integrate_rk4<F>(f: F, x0: &[f64], horizon: f64, dt: f64, bound: f64) -> Result<PathSample>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = step_count(horizon, dt)?;
    let h = horizon / n as f64;
    let d = x0.len();
    let mut path = PathSample::with_capacity(0.0, h, d, n + 1);
    path.push(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for step in 0..n {
        f(&x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !x.iter().all(|v| v.is_finite()) || norm(&x) > bound {
            return Err(Error::Divergence(format!(
                "state norm exceeded {bound:e} at t = {} (step {}) from x0 = {x0:?}",
                (step + 1) as f64 * h,
                step + 1
            )));
        }
        path.push(&x);
    }
    Ok(path)
}

/// `ψ_t(x0)` on `[0, T]`.
pub fn integrate_flow(model: &ModelSpec, x0: &[f64], horizon: f64, dt: f64) -> Result<PathSample> {
    check_dim(model, x0)?;
    integrate_rk4(
        |x, out| model.drift_into(x, out),
        x0,
        horizon,
        dt,
        DEFAULT_DIVERGENCE_BOUND,
    )
}

/// Writes `V(x) - Φ(x - x_stable)` into `out`.
#[inline]
pub fn relaxed_drift_into(model: &ModelSpec, x_stable: &[f64], x: &[f64], out: &mut [f64]) {
    model.drift_into(x, out);
    let d = x.len();
    let mut z = [0.0; 8];
    let mut phi = [0.0; 8];
    if d <= 8 {
        for i in 0..d {
            z[i] = x[i] - x_stable[i];
        }
        model.interaction_force_into(&z[..d], &mut phi[..d]);
        for i in 0..d {
            out[i] -= phi[i];
        }
    } else {
        let z: Vec<f64> = x.iter().zip(x_stable).map(|(a, b)| a - b).collect();
        let phi = model.interaction_force(&z);
        for i in 0..d {
            out[i] -= phi[i];
        }
    }
}

/// The relaxed flow started at `y0`.
pub fn integrate_relaxed_flow(
    model: &ModelSpec,
    x_stable: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<PathSample> {
    check_dim(model, x_stable)?;
    check_dim(model, y0)?;
    integrate_rk4(
        |x, out| relaxed_drift_into(model, x_stable, x, out),
        y0,
        horizon,
        dt,
        DEFAULT_DIVERGENCE_BOUND,
    )
}

fn check_dim(model: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Precondition(format!(
            "point has dimension {}, model has {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// `ψ_t(x0)` tabulated once and evaluated at arbitrary `t` by cubic Hermite
/// interpolation (node derivatives are `V(ψ)`).
#[derive(Debug, Clone)]
pub struct FlowCache {
    path: PathSample,
    slopes: Vec<f64>,
}

impl FlowCache {
    pub fn new(model: &ModelSpec, x0: &[f64], horizon: f64, dt: f64) -> Result<Self> {
        let path = integrate_flow(model, x0, horizon, dt)?;
        let d = model.dim();
        let mut slopes = vec![0.0; path.len() * d];
        for (k, s) in path.states().enumerate() {
            model.drift_into(s, &mut slopes[k * d..(k + 1) * d]);
        }
        Ok(Self { path, slopes })
    }

    pub fn horizon(&self) -> f64 {
        self.path.t_end()
    }

    pub fn path(&self) -> &PathSample {
        &self.path
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let h = self.path.dt;
        let tol = 1e-9 * (1.0 + self.horizon());
        if !(t >= -tol && t <= self.horizon() + tol) {
            return Err(Error::OutOfRange {
                what: "flow time",
                value: t,
                lo: 0.0,
                hi: self.horizon(),
            });
        }
        let n = self.path.len() - 1;
        let s = (t / h).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n.saturating_sub(1));
        if n == 0 {
            out.copy_from_slice(self.path.state(0));
            return Ok(());
        }
        let u = s - k as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u),
            u * (1.0 - u) * (1.0 - u),
            u * u * (3.0 - 2.0 * u),
            u * u * (u - 1.0),
        );
        let d = self.path.dim();
        let (a, b) = (self.path.state(k), self.path.state(k + 1));
        let (ma, mb) = (&self.slopes[k * d..(k + 1) * d], &self.slopes[(k + 1) * d..(k + 2) * d]);
        for i in 0..d {
            out[i] = h00 * a[i] + h10 * h * ma[i] + h01 * b[i] + h11 * h * mb[i];
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.path.dim()];
        self.at_into(t, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub point: Vec<f64>,
    /// `‖V(point)‖`.
    pub residual: f64,
    /// Largest eigenvalue of the symmetrized Jacobian; negative means stable.
    pub max_sym_eigenvalue: f64,
    /// Whether the flow fallback was needed.
    pub used_flow_fallback: bool,
}

fn newton(model: &ModelSpec, guess: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let d = model.dim();
    let mut x = guess.to_vec();
    let mut v = model.drift(&x);
    let mut r = norm(&v);
    for _ in 0..max_iter {
        if r <= tol {
            break;
        }
        let j = DMatrix::from_row_slice(d, d, &model.jacobian(&x));
        let rhs = DVector::from_iterator(d, v.iter().map(|a| -a));
        let Some(step) = j.lu().solve(&rhs) else { break };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let tv = model.drift(&trial);
            let tr = norm(&tv);
            if tr.is_finite() && tr < r {
                x = trial;
                v = tv;
                r = tr;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, r)
}

/// Locates a zero of `V` near `guess` by damped Newton, falling back to long
/// flow integration, and reports its local stability.
pub fn find_equilibrium(model: &ModelSpec, guess: &[f64], tol: f64) -> Result<Equilibrium> {
    check_dim(model, guess)?;
    if !(tol > 0.0) {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let stable = |x: &[f64]| model.max_symmetric_eigenvalue(x) < 0.0;
    let (mut x, mut r) = newton(model, guess, tol, 100);
    let mut used_flow_fallback = false;
    if r > tol || !stable(&x) {
        used_flow_fallback = true;
        let mut y = guess.to_vec();
        let mut reached = false;
        for _ in 0..100 {
            let path = integrate_flow(model, &y, 10.0, 1e-2).map_err(|e| Error::NoConvergence {
                iterations: 100,
                reason: format!("flow fallback failed: {e}"),
            })?;
            y = path.final_state().to_vec();
            if norm(&model.drift(&y)) < 1e-4_f64.max(tol) {
                reached = true;
                break;
            }
        }
        if reached {
            (x, r) = newton(model, &y, tol, 100);
        }
    }
    if !(r <= tol) {
        return Err(Error::NoConvergence {
            iterations: 100,
            reason: format!("‖V‖ = {r:e} > {tol:e} near {x:?}"),
        });
    }
    let eig = model.max_symmetric_eigenvalue(&x);
    if eig >= 0.0 {
        return Err(Error::UnstableEquilibrium {
            point: x,
            eigenvalue: eig,
        });
    }
    Ok(Equilibrium {
        point: x,
        residual: r,
        max_sym_eigenvalue: eig,
        used_flow_fallback,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityOptions {
    pub n_boundary: usize,
    pub n_interior: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Inward offset of the boundary starts, as a fraction of the distance to
    /// the domain center.
    pub inward_offset: f64,
    /// Radius of the target ball around `x_stable`.
    pub tol: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            n_boundary: 64,
            n_interior: 64,
            horizon: 50.0,
            dt: 1e-2,
            inward_offset: 1e-3,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum StabilityFailure {
    LeftDomain {
        start: Vec<f64>,
        time: f64,
        point: Vec<f64>,
    },
    NotConverged {
        start: Vec<f64>,
        final_distance: f64,
    },
    Diverged {
        start: Vec<f64>,
        message: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub n_checked: usize,
    pub failures: Vec<StabilityFailure>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_trajectory(
    model: &ModelSpec,
    domain: &Domain,
    x_stable: &[f64],
    start: &[f64],
    opts: &StabilityOptions,
) -> Option<StabilityFailure> {
    // unit-time chunks so an escaping trajectory is caught leaving D before
    // it can trip the divergence guard
    let mut state = start.to_vec();
    let mut t0 = 0.0;
    while t0 < opts.horizon * (1.0 - 1e-12) {
        let len = (opts.horizon - t0).min(1.0);
        let chunk = match integrate_relaxed_flow(model, x_stable, &state, len, opts.dt) {
            Ok(p) => p,
            Err(e) => {
                return Some(StabilityFailure::Diverged {
                    start: start.to_vec(),
                    message: e.to_string(),
                })
            }
        };
        for (k, s) in chunk.states().enumerate() {
            if !domain.contains(s) {
                return Some(StabilityFailure::LeftDomain {
                    start: start.to_vec(),
                    time: t0 + chunk.time(k),
                    point: s.to_vec(),
                });
            }
        }
        state = chunk.final_state().to_vec();
        t0 += len;
    }
    let final_distance = dist(&state, x_stable);
    (final_distance > opts.tol).then(|| StabilityFailure::NotConverged {
        start: start.to_vec(),
        final_distance,
    })
}

/// Integrates the relaxed flow from points just inside `∂D` and from a
/// quasi-random interior sample; every trajectory must stay in `D` and end
/// within `opts.tol` of `x_stable`.
pub fn verify_domain_stability(
    model: &ModelSpec,
    domain: &Domain,
    x_stable: &[f64],
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    check_dim(model, x_stable)?;
    if domain.dim() != model.dim() {
        return Err(Error::Precondition("domain dimension differs from model".into()));
    }
    if !domain.contains(x_stable) {
        return Err(Error::Precondition(format!(
            "x_stable = {x_stable:?} is not inside the domain"
        )));
    }
    let mut starts: Vec<Vec<f64>> = domain
        .boundary_samples(opts.n_boundary)
        .into_iter()
        .map(|b| domain.inward(&b.point, opts.inward_offset))
        .filter(|p| domain.contains(p))
        .collect();
    let (lo, hi) = domain.bounding_box();
    let d = model.dim();
    starts.extend(
        (1..=4 * opts.n_interior)
            .map(|k| {
                halton_point(k, d)
                    .iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(u, (a, b))| a + u * (b - a))
                    .collect::<Vec<f64>>()
            })
            .filter(|p| domain.contains(p))
            .take(opts.n_interior),
    );
    let failures: Vec<StabilityFailure> = starts
        .par_iter()
        .filter_map(|s| check_trajectory(model, domain, x_stable, s, opts))
        .collect();
    Ok(StabilityReport {
        n_checked: starts.len(),
        failures,
    })
}
