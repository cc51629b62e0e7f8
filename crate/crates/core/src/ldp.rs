//! Discrete action functionals, cost minimization, quasi-potentials and their
//! closed form for gradient models.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exitlab::{BoundaryPoint, Domain};
use crate::flow::{FlowCache, PathSample};
use crate::linalg::{dist, norm};
use crate::model::ModelSpec;
use crate::optimize::{lbfgs_preconditioned, LbfgsOptions};

/// Which rate function: the reference point of the interaction term.
#[derive(Debug, Clone)]
pub enum ActionVariant {
    /// Interaction centered at `ψ_{t+offset}(x0)`.
    Tracking { flow: Arc<FlowCache>, offset: f64 },
    /// Interaction centered at `x_stable`.
    Limiting { x_stable: Vec<f64> },
    /// No interaction term.
    Classical,
}

#[derive(Debug, Clone)]
pub struct ActionSpec<'a> {
    pub model: &'a ModelSpec,
    pub variant: ActionVariant,
}

impl<'a> ActionSpec<'a> {
    pub fn new(model: &'a ModelSpec, variant: ActionVariant) -> Result<Self> {
        match &variant {
            ActionVariant::Limiting { x_stable } if x_stable.len() != model.dim() => {
                return Err(Error::Precondition("x_stable dimension differs from model".into()))
            }
            ActionVariant::Tracking { flow, offset } if flow.path().dim() != model.dim() || *offset < 0.0 => {
                return Err(Error::Precondition(
                    "tracking variant needs a matching flow and offset ≥ 0".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { model, variant })
    }

    pub fn limiting(model: &'a ModelSpec, x_stable: &[f64]) -> Result<Self> {
        Self::new(
            model,
            ActionVariant::Limiting {
                x_stable: x_stable.to_vec(),
            },
        )
    }

    pub fn classical(model: &'a ModelSpec) -> Self {
        Self {
            model,
            variant: ActionVariant::Classical,
        }
    }

    /// Writes the interaction reference point at time `t`; `false` for the
    /// classical variant.
    fn reference(&self, t: f64, out: &mut [f64]) -> bool {
        match &self.variant {
            ActionVariant::Classical => false,
            ActionVariant::Limiting { x_stable } => {
                out.copy_from_slice(x_stable);
                true
            }
            ActionVariant::Tracking { flow, offset } => {
                let s = (t + offset).min(flow.horizon());
                flow.at_into(s, out).expect("tracking time within cached flow");
                true
            }
        }
    }

    fn check_horizon(&self, horizon: f64) -> Result<()> {
        if let ActionVariant::Tracking { flow, offset } = &self.variant {
            if offset + horizon > flow.horizon() * (1.0 + 1e-12) {
                return Err(Error::OutOfRange {
                    what: "tracking horizon",
                    value: offset + horizon,
                    lo: 0.0,
                    hi: flow.horizon(),
                });
            }
        }
        Ok(())
    }
}

/// A path on `n` uniform intervals of `[0, T]` with pinned endpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePath {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub horizon: f64,
    intervals: usize,
    /// The `n - 1` free interior nodes, row-major.
    interior: Vec<f64>,
}

impl DiscretePath {
    pub fn new(y: Vec<f64>, z: Vec<f64>, horizon: f64, intervals: usize, interior: Vec<f64>) -> Result<Self> {
        let d = y.len();
        if d == 0 || z.len() != d || intervals < 2 || !(horizon > 0.0) || interior.len() != (intervals - 1) * d {
            return Err(Error::Precondition(
                "discrete path needs matching endpoints, n ≥ 2 intervals, T > 0 and n - 1 interior nodes".into(),
            ));
        }
        Ok(Self {
            y,
            z,
            horizon,
            intervals,
            interior,
        })
    }

    pub fn straight_line(y: &[f64], z: &[f64], horizon: f64, intervals: usize) -> Result<Self> {
        let interior = (1..intervals)
            .flat_map(|k| {
                let s = k as f64 / intervals as f64;
                y.iter().zip(z).map(move |(a, b)| a + s * (b - a))
            })
            .collect();
        Self::new(y.to_vec(), z.to_vec(), horizon, intervals, interior)
    }

    /// Samples `path` at `intervals + 1` equally spaced states (the path must
    /// have exactly that many).
    pub fn from_path_sample(path: &PathSample) -> Result<Self> {
        let n = path.len().saturating_sub(1);
        if n < 2 {
            return Err(Error::Precondition("path needs at least three states".into()));
        }
        let interior = (1..n).flat_map(|k| path.state(k).to_vec()).collect();
        Self::new(
            path.state(0).to_vec(),
            path.final_state().to_vec(),
            path.t_end() - path.t0,
            n,
            interior,
        )
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn set_interior(&mut self, interior: &[f64]) {
        self.interior.copy_from_slice(interior);
    }

    /// Node `k` for `k = 0..=n`.
    pub fn node(&self, k: usize) -> &[f64] {
        let d = self.dim();
        if k == 0 {
            &self.y
        } else if k == self.intervals {
            &self.z
        } else {
            &self.interior[(k - 1) * d..k * d]
        }
    }

    pub fn to_path_sample(&self) -> PathSample {
        let mut p = PathSample::with_capacity(0.0, self.dt(), self.dim(), self.intervals + 1);
        for k in 0..=self.intervals {
            p.push(self.node(k));
        }
        p
    }
}

/// Per-interval residuals `r_k` (row-major) of the midpoint discretization.
fn residuals(spec: &ActionSpec, path: &DiscretePath, mids: &mut Vec<f64>, refs: &mut Vec<f64>) -> Vec<f64> {
    let d = path.dim();
    let n = path.intervals;
    let h = path.dt();
    let mut r = vec![0.0; n * d];
    mids.resize(n * d, 0.0);
    refs.resize(n * d, 0.0);
    let mut v = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut f = vec![0.0; d];
    for k in 0..n {
        let (a, b) = (path.node(k), path.node(k + 1));
        let m = &mut mids[k * d..(k + 1) * d];
        for i in 0..d {
            m[i] = 0.5 * (a[i] + b[i]);
        }
        spec.model.drift_into(m, &mut v);
        let rk = &mut r[k * d..(k + 1) * d];
        for i in 0..d {
            rk[i] = (b[i] - a[i]) / h - v[i];
        }
        let rf = &mut refs[k * d..(k + 1) * d];
        if spec.reference((k as f64 + 0.5) * h, rf) {
            for i in 0..d {
                z[i] = m[i] - rf[i];
            }
            spec.model.interaction_force_into(&z, &mut f);
            for i in 0..d {
                rk[i] += f[i];
            }
        }
    }
    r
}

/// `½ Σ_k ‖r_k‖² Δt` with `r_k = Δx_k/Δt - V(m_k) + Φ(m_k - ref(t_{k+½}))` at
/// interval midpoints `m_k`.
pub fn action(spec: &ActionSpec, path: &DiscretePath) -> f64 {
    let (mut mids, mut refs) = (Vec::new(), Vec::new());
    let r = residuals(spec, path, &mut mids, &mut refs);
    0.5 * r.iter().map(|v| v * v).sum::<f64>() * path.dt()
}

/// Action and its exact gradient with respect to the interior nodes.
pub fn action_with_gradient(spec: &ActionSpec, path: &DiscretePath) -> (f64, Vec<f64>) {
    let d = path.dim();
    let n = path.intervals;
    let h = path.dt();
    let (mut mids, mut refs) = (Vec::new(), Vec::new());
    let r = residuals(spec, path, &mut mids, &mut refs);
    let value = 0.5 * r.iter().map(|v| v * v).sum::<f64>() * h;
    let classical = matches!(spec.variant, ActionVariant::Classical);
    // g_k = ½ (-DV(m_k)ᵀ + DΦ(m_k - ref)) r_k
    let mut g = vec![0.0; n * d];
    let mut tmp = vec![0.0; d];
    let mut z = vec![0.0; d];
    for k in 0..n {
        let (m, rk) = (&mids[k * d..(k + 1) * d], &r[k * d..(k + 1) * d]);
        let gk = &mut g[k * d..(k + 1) * d];
        spec.model.jacobian_transpose_apply(m, rk, &mut tmp);
        for i in 0..d {
            gk[i] = -0.5 * tmp[i];
        }
        if !classical {
            for i in 0..d {
                z[i] = m[i] - refs[k * d + i];
            }
            spec.model.interaction_jacobian_apply(&z, rk, &mut tmp);
            for i in 0..d {
                gk[i] += 0.5 * tmp[i];
            }
        }
    }
    let mut grad = vec![0.0; (n - 1) * d];
    for k in 1..n {
        for i in 0..d {
            grad[(k - 1) * d + i] = r[(k - 1) * d + i] - r[k * d + i] + h * (g[(k - 1) * d + i] + g[k * d + i]);
        }
    }
    (value, grad)
}

pub fn action_gradient(spec: &ActionSpec, path: &DiscretePath) -> Vec<f64> {
    action_with_gradient(spec, path).1
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerOptions {
    /// Gradient-norm convergence threshold.
    pub grad_tol: f64,
    pub max_iter: u64,
    /// Number of perturbed starts in addition to the straight line.
    pub n_perturbed: usize,
    pub seed: u64,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 20_000,
            n_perturbed: 3,
            seed: 17,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostResult {
    pub cost: f64,
    pub path: DiscretePath,
    pub grad_norm: f64,
    pub iterations: u64,
    /// Whether the gradient norm reached `grad_tol`; `false` marks a stall.
    pub converged: bool,
}

/// Inverse of `(L/Δt + μΔt) ⊗ I_d`, with `L` the second-difference matrix on
/// the interior nodes and `μ` the mean squared stiffness of the effective
/// drift along the start path. Without it the condition number grows like n².
struct KineticPreconditioner {
    dim: usize,
    diag: f64,
    off: f64,
}

impl KineticPreconditioner {
    fn new(spec: &ActionSpec, path: &DiscretePath) -> Self {
        let d = path.dim();
        let n = path.intervals();
        let h = path.dt();
        let classical = matches!(spec.variant, ActionVariant::Classical);
        let (mut e, mut col, mut tmp, mut rf, mut z) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut total = 0.0;
        let mut count = 0usize;
        for k in (0..=n).step_by((n / 16).max(1)) {
            let x = path.node(k);
            let has_ref = !classical && spec.reference(k as f64 * h, &mut rf);
            for i in 0..d {
                z[i] = x[i] - rf[i];
            }
            for j in 0..d {
                e.iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = if i == j { 1.0 } else { 0.0 });
                spec.model.jacobian_transpose_apply(x, &e, &mut col);
                if has_ref {
                    spec.model.interaction_jacobian_apply(&z, &e, &mut tmp);
                    col.iter_mut().zip(&tmp).for_each(|(c, t)| *c -= t);
                }
                total += col.iter().map(|c| c * c).sum::<f64>();
            }
            count += d;
        }
        let mu = if count > 0 && total.is_finite() {
            total / count as f64
        } else {
            0.0
        };
        Self {
            dim: d,
            diag: 2.0 / h + mu * h,
            off: -1.0 / h,
        }
    }

    /// Thomas algorithm per coordinate on the row-major interior layout.
    fn apply(&self, v: &mut [f64]) {
        let d = self.dim;
        let m = v.len() / d;
        let mut c = vec![0.0; m];
        for i in 0..d {
            let mut denom = self.diag;
            c[0] = self.off / denom;
            v[i] /= denom;
            for k in 1..m {
                denom = self.diag - self.off * c[k - 1];
                c[k] = self.off / denom;
                v[k * d + i] = (v[k * d + i] - self.off * v[(k - 1) * d + i]) / denom;
            }
            for k in (0..m.saturating_sub(1)).rev() {
                v[k * d + i] -= c[k] * v[(k + 1) * d + i];
            }
        }
    }
}

fn descend(spec: &ActionSpec, start: DiscretePath, opts: &OptimizerOptions) -> Result<CostResult> {
    let (value, grad) = action_with_gradient(spec, &start);
    let g0 = norm(&grad);
    if !value.is_finite() {
        return Err(Error::Domain {
            subexpr: "action".into(),
            reason: "non-finite action on the initial path".into(),
        });
    }
    if g0 <= opts.grad_tol {
        return Ok(CostResult {
            cost: value,
            path: start,
            grad_norm: g0,
            iterations: 0,
            converged: true,
        });
    }
    let mut work = start.clone();
    let precond = KineticPreconditioner::new(spec, &start);
    let res = lbfgs_preconditioned(
        |p, g| {
            work.set_interior(p);
            let (v, gr) = action_with_gradient(spec, &work);
            g.copy_from_slice(&gr);
            v
        },
        |v| precond.apply(v),
        start.interior().to_vec(),
        &LbfgsOptions {
            memory: opts.memory,
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
        },
    );
    let (best, iterations) = (res.x, res.iterations);
    let mut path = start;
    path.set_interior(&best);
    let (cost, grad) = action_with_gradient(spec, &path);
    let grad_norm = norm(&grad);
    Ok(CostResult {
        cost,
        path,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.grad_tol,
    })
}

/// Smooth random deformation of the straight line: a few sine modes with
/// Gaussian amplitudes of scale `0.1‖z - y‖`.
fn perturbed_start(base: &DiscretePath, rng: &mut ChaCha8Rng) -> DiscretePath {
    let d = base.dim();
    let n = base.intervals();
    let scale = 0.1 * dist(&base.y, &base.z);
    let amps: Vec<f64> = (0..3 * d)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    let mut p = base.clone();
    let interior: Vec<f64> = (1..n)
        .flat_map(|k| {
            let s = k as f64 / n as f64;
            let node = base.node(k).to_vec();
            let amps = &amps;
            (0..d).map(move |i| {
                node[i]
                    + (0..3)
                        .map(|mode| amps[mode * d + i] * ((mode + 1) as f64 * std::f64::consts::PI * s).sin())
                        .sum::<f64>()
            })
        })
        .collect();
    p.set_interior(&interior);
    p
}

/// `C(y, z, T) = inf` of the action over paths from `y` to `z` in time `T`:
/// L-BFGS from the straight line plus perturbed restarts, best result kept.
pub fn minimize_cost(
    spec: &ActionSpec,
    y: &[f64],
    z: &[f64],
    horizon: f64,
    intervals: usize,
    opts: &OptimizerOptions,
) -> Result<CostResult> {
    if intervals < 8 {
        return Err(Error::Precondition(
            "cost minimization needs at least 8 intervals".into(),
        ));
    }
    if y.len() != spec.model.dim() || z.len() != spec.model.dim() {
        return Err(Error::Precondition("endpoint dimension differs from model".into()));
    }
    spec.check_horizon(horizon)?;
    let base = DiscretePath::straight_line(y, z, horizon, intervals)?;
    let mut starts = vec![base.clone()];
    if dist(y, z) > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        starts.extend((0..opts.n_perturbed).map(|_| perturbed_start(&base, &mut rng)));
    }
    let mut best: Option<CostResult> = None;
    for s in starts {
        let r = descend(spec, s, opts)?;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiPotentialResult {
    pub value: f64,
    pub best_horizon: f64,
    /// Whether the minimizing horizon lies strictly inside the searched range.
    pub interior: bool,
    pub converged: bool,
    pub path: DiscretePath,
    /// `(T, C(T))` for every evaluated horizon.
    pub scan: Vec<(f64, f64)>,
}

/// Default horizon grid: geometric from 0.25 to 50.
pub fn default_horizon_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 50.0]
}

/// `Q(y, z) = inf_T C(y, z, T)`: scan `horizons`, then golden-section search
/// in `log T` around the best grid point.
pub fn quasipotential_numeric(
    spec: &ActionSpec,
    y: &[f64],
    z: &[f64],
    horizons: &[f64],
    intervals: usize,
    opts: &OptimizerOptions,
) -> Result<QuasiPotentialResult> {
    if horizons.is_empty() || horizons.windows(2).any(|w| !(w[0] < w[1])) || !(horizons[0] > 0.0) {
        return Err(Error::Precondition(
            "horizon grid must be nonempty, positive and increasing".into(),
        ));
    }
    let results: Vec<CostResult> = horizons
        .par_iter()
        .map(|&t| minimize_cost(spec, y, z, t, intervals, opts))
        .collect::<Result<_>>()?;
    let mut scan: Vec<(f64, f64)> = horizons.iter().copied().zip(results.iter().map(|r| r.cost)).collect();
    let (ib, _) = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
        .expect("nonempty");
    let mut best = results[ib].clone();
    let mut best_t = horizons[ib];
    if best.cost > 0.0 && horizons.len() > 1 {
        let lo = horizons[ib.saturating_sub(1)].ln();
        let hi = horizons[(ib + 1).min(horizons.len() - 1)].ln();
        let mut eval = |s: f64| -> Result<f64> {
            let t = s.exp();
            let r = minimize_cost(spec, y, z, t, intervals, opts)?;
            scan.push((t, r.cost));
            let c = r.cost;
            if c < best.cost {
                best = r;
                best_t = t;
            }
            Ok(c)
        };
        golden_section(&mut eval, lo, hi, 0.02, 12)?;
    }
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t_min = horizons[0];
    let t_max = *horizons.last().expect("nonempty");
    Ok(QuasiPotentialResult {
        value: best.cost,
        best_horizon: best_t,
        interior: best_t > t_min * (1.0 + 1e-9) && best_t < t_max * (1.0 - 1e-9),
        converged: best.converged,
        path: best.path,
        scan,
    })
}

/// Golden-section minimization on `[a, b]` until the bracket is below `tol`
/// or `max_evals` evaluations are spent. Returns `(argmin, min)`.
pub fn golden_section<F>(f: &mut F, mut a: f64, mut b: f64, tol: f64, max_evals: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evals = 2;
    while (b - a).abs() > tol && evals < max_evals {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
        evals += 1;
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Which closed form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClosedFormVariant {
    /// `2(U(z) - U(x*))`.
    Classical,
    /// `2(U(z) - U(x*) + A(z - x*))`.
    Stabilized,
}

/// Quasi-potential of a gradient model in closed form.
pub fn quasipotential_closed_form(
    model: &ModelSpec,
    x_stable: &[f64],
    z: &[f64],
    variant: ClosedFormVariant,
) -> Result<f64> {
    if !model.is_gradient() {
        return Err(Error::InvalidModel(
            "closed-form quasi-potential needs a gradient model".into(),
        ));
    }
    if x_stable.len() != model.dim() || z.len() != model.dim() {
        return Err(Error::Precondition("point dimension differs from model".into()));
    }
    let u = |x: &[f64]| model.potential(x).expect("gradient model");
    let mut q = 2.0 * (u(z)? - u(x_stable)?);
    if variant == ClosedFormVariant::Stabilized {
        let dz: Vec<f64> = z.iter().zip(x_stable).map(|(a, b)| a - b).collect();
        q += 2.0 * model.interaction_potential(&dz);
    }
    Ok(q)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryMin {
    pub value: f64,
    /// Every boundary point whose value is within the tolerance of the minimum.
    pub argmins: Vec<BoundaryPoint>,
    pub values: Vec<f64>,
}

/// `inf_{z ∈ ∂D} Q(z)`: dense scan of boundary samples, golden-section
/// refinement of every local minimum in the boundary parameter, and the full
/// set of minimizers within `refine_tol·max(1, |min|)`.
pub fn boundary_min<F>(q: F, domain: &Domain, n_scan: usize, refine_tol: f64) -> Result<BoundaryMin>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let samples = domain.boundary_samples(n_scan.max(3));
    let vals = samples.iter().map(|s| q(&s.point)).collect::<Result<Vec<f64>>>()?;
    let n = samples.len();
    let mut candidates: Vec<(BoundaryPoint, f64)> = Vec::new();
    if domain.has_angle_parameter() {
        let step = 2.0 * std::f64::consts::PI / n as f64;
        for i in 0..n {
            let (prev, next) = (vals[(i + n - 1) % n], vals[(i + 1) % n]);
            if vals[i] <= prev && vals[i] <= next {
                let c = samples[i].param;
                let mut f = |s: f64| q(&domain.boundary_point(s).expect("parametrized"));
                let (s, v) = golden_section(&mut f, c - step, c + step, 1e-11, 200)?;
                let (s, v) = if v <= vals[i] { (s, v) } else { (c, vals[i]) };
                let s = wrap_angle(s);
                candidates.push((
                    BoundaryPoint {
                        param: s,
                        point: domain.boundary_point(s).expect("parametrized"),
                    },
                    v,
                ));
            }
        }
    } else {
        candidates.extend(samples.iter().cloned().zip(vals.iter().copied()));
    }
    let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let thresh = refine_tol * min.abs().max(1.0);
    let mut argmins: Vec<BoundaryPoint> = Vec::new();
    let mut values = Vec::new();
    for (p, v) in candidates {
        if v - min <= thresh && !argmins.iter().any(|a| dist(&a.point, &p.point) < 1e-6 * domain.scale()) {
            argmins.push(p);
            values.push(v);
        }
    }
    Ok(BoundaryMin {
        value: min,
        argmins,
        values,
    })
}

fn wrap_angle(s: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (s + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}
