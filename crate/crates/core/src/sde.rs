//! Euler–Maruyama engines for the classical, particle, frozen-drift, limiting
//! and tracking diffusions, plus second-moment diagnostics.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::flow::{relaxed_drift_into, step_count, FlowCache, PathSample, DEFAULT_DIVERGENCE_BOUND};
use crate::linalg::{dist, norm};
use crate::model::{DissipativityConstants, ModelSpec};

/// Which process to simulate.
#[derive(Debug, Clone)]
pub enum SimulationMode {
    /// `dZ = V(Z)dt + √ε dW`.
    Classical,
    /// `n` particles interacting through `-(1/n) Σ_j Φ(X^i - X^j)`.
    Particle { n: usize },
    /// `dξ = [V(ξ) - b(t + offset, ξ)]dt + √ε dW` with a tabulated drift.
    Frozen { field: Arc<DriftField>, offset: f64 },
    /// `dY = [V(Y) - Φ(Y - x_stable)]dt + √ε dW`.
    Limiting { x_stable: Vec<f64> },
    /// `dY = [V(Y) - Φ(Y - ψ_{t+offset}(x0))]dt + √ε dW`.
    Tracking { flow: Arc<FlowCache>, offset: f64 },
}

impl SimulationMode {
    pub fn name(&self) -> &'static str {
        match self {
            SimulationMode::Classical => "classical",
            SimulationMode::Particle { .. } => "particle",
            SimulationMode::Frozen { .. } => "frozen",
            SimulationMode::Limiting { .. } => "limiting",
            SimulationMode::Tracking { .. } => "tracking",
        }
    }

    pub fn n_particles(&self) -> usize {
        match self {
            SimulationMode::Particle { n } => *n,
            _ => 1,
        }
    }

    fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            SimulationMode::Particle { n } if *n == 0 => {
                Err(Error::Precondition("particle mode needs at least one particle".into()))
            }
            SimulationMode::Particle { n } if *n as u64 > u32::MAX as u64 => {
                Err(Error::Precondition("too many particles".into()))
            }
            SimulationMode::Limiting { x_stable } if x_stable.len() != model.dim() => {
                Err(Error::Precondition("x_stable dimension differs from model".into()))
            }
            SimulationMode::Frozen { field, .. } if field.dim() != model.dim() => {
                Err(Error::Precondition("drift field dimension differs from model".into()))
            }
            SimulationMode::Tracking { flow, .. } if flow.path().dim() != model.dim() => {
                Err(Error::Precondition("flow dimension differs from model".into()))
            }
            _ => Ok(()),
        }
    }

    /// Latest time at which the mode's time-dependent input is available.
    fn horizon_limit(&self) -> Option<f64> {
        match self {
            SimulationMode::Frozen { field, offset } => Some(field.horizon() - offset),
            SimulationMode::Tracking { flow, offset } => Some(flow.horizon() - offset),
            _ => None,
        }
    }
}

/// Seeds for reproducible Gaussian increments: every `(trial, particle)` pair
/// owns an independent ChaCha stream under `base_seed`, consumed one step at a
/// time, so paths never depend on the parallel layout.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoisePlan {
    pub base_seed: u64,
    pub dt: f64,
}

impl NoisePlan {
    pub fn new(base_seed: u64, dt: f64) -> Self {
        Self { base_seed, dt }
    }

    pub fn stream(&self, trial: u64, particle: u64) -> ChaCha8Rng {
        assert!(trial <= u32::MAX as u64 && particle <= u32::MAX as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream((trial << 32) | particle);
        rng
    }
}

/// Step-by-step Euler–Maruyama integrator for one trial.
pub struct Simulator<'a> {
    model: &'a ModelSpec,
    mode: &'a SimulationMode,
    d: usize,
    n: usize,
    dt: f64,
    noise_scale: f64,
    steps: usize,
    time_limit: f64,
    x: Vec<f64>,
    drift: Vec<f64>,
    scratch: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
    trial: u64,
    base_seed: u64,
    bound: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        mode: &'a SimulationMode,
        x_init: &[f64],
        epsilon: f64,
        dt: f64,
        noise: &NoisePlan,
        trial: u64,
    ) -> Result<Self> {
        mode.validate(model)?;
        let d = model.dim();
        if x_init.len() != d {
            return Err(Error::Precondition("initial point dimension differs from model".into()));
        }
        if !(epsilon >= 0.0) || !(dt > 0.0) {
            return Err(Error::Precondition(format!(
                "need ε ≥ 0 and dt > 0, got ε = {epsilon}, dt = {dt}"
            )));
        }
        let n = mode.n_particles();
        let x: Vec<f64> = (0..n).flat_map(|_| x_init.iter().copied()).collect();
        let rngs = (0..n as u64).map(|p| noise.stream(trial, p)).collect();
        Ok(Self {
            model,
            mode,
            d,
            n,
            dt,
            noise_scale: (epsilon * dt).sqrt(),
            steps: 0,
            time_limit: mode.horizon_limit().unwrap_or(f64::INFINITY),
            x,
            drift: vec![0.0; n * d],
            scratch: vec![0.0; 2 * d],
            rngs,
            trial,
            base_seed: noise.base_seed,
            bound: DEFAULT_DIVERGENCE_BOUND,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn state(&self, particle: usize) -> &[f64] {
        &self.x[particle * self.d..(particle + 1) * self.d]
    }

    fn compute_drift(&mut self) -> Result<()> {
        let d = self.d;
        let t = self.time();
        match self.mode {
            SimulationMode::Classical => self.model.drift_into(&self.x, &mut self.drift),
            SimulationMode::Particle { n } => {
                let n = *n;
                for i in 0..n {
                    self.model
                        .drift_into(&self.x[i * d..(i + 1) * d], &mut self.drift[i * d..(i + 1) * d]);
                }
                if let Some(c) = self.model.profile().linear_slope() {
                    // (1/n) Σ_j c (x_i - x_j) = c (x_i - mean)
                    let mut mean = vec![0.0; d];
                    for i in 0..n {
                        for k in 0..d {
                            mean[k] += self.x[i * d + k];
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    for i in 0..n {
                        for k in 0..d {
                            self.drift[i * d + k] -= c * (self.x[i * d + k] - mean[k]);
                        }
                    }
                } else {
                    let (z, f) = self.scratch.split_at_mut(d);
                    for i in 0..n {
                        let mut acc = vec![0.0; d];
                        for j in 0..n {
                            for k in 0..d {
                                z[k] = self.x[i * d + k] - self.x[j * d + k];
                            }
                            self.model.interaction_force_into(z, f);
                            for k in 0..d {
                                acc[k] += f[k];
                            }
                        }
                        for k in 0..d {
                            self.drift[i * d + k] -= acc[k] / n as f64;
                        }
                    }
                }
            }
            SimulationMode::Frozen { field, offset } => {
                self.model.drift_into(&self.x, &mut self.drift);
                let b = &mut self.scratch[..d];
                field.eval_into(t + offset, &self.x, b);
                for k in 0..d {
                    self.drift[k] -= b[k];
                }
            }
            SimulationMode::Limiting { x_stable } => {
                relaxed_drift_into(self.model, x_stable, &self.x, &mut self.drift);
            }
            SimulationMode::Tracking { flow, offset } => {
                let (psi, f) = self.scratch.split_at_mut(d);
                flow.at_into(t + offset, psi)?;
                for k in 0..d {
                    psi[k] = self.x[k] - psi[k];
                }
                self.model.drift_into(&self.x, &mut self.drift);
                self.model.interaction_force_into(psi, f);
                for k in 0..d {
                    self.drift[k] -= f[k];
                }
            }
        }
        Ok(())
    }

    /// Advances every particle by one Euler–Maruyama step.
    pub fn step(&mut self) -> Result<()> {
        if self.time() + self.dt > self.time_limit + 1e-9 * (1.0 + self.time_limit) {
            return Err(Error::OutOfRange {
                what: "simulation time beyond the available drift horizon",
                value: self.time() + self.dt,
                lo: 0.0,
                hi: self.time_limit,
            });
        }
        self.compute_drift()?;
        let d = self.d;
        for i in 0..self.n {
            let rng = &mut self.rngs[i];
            for k in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                let idx = i * d + k;
                self.x[idx] += self.drift[idx] * self.dt + self.noise_scale * z;
            }
            let xi = &self.x[i * d..(i + 1) * d];
            if !xi.iter().all(|v| v.is_finite()) || norm(xi) > self.bound {
                return Err(Error::Divergence(format!(
                    "trajectory blew up at t = {} (seed {}, trial {}, particle {i})",
                    self.time() + self.dt,
                    self.base_seed,
                    self.trial
                )));
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Simulates one trial on `[0, T]`, recording every `record_every`-th state.
/// Returns one path per particle (a single path outside particle mode).
#[allow(clippy::too_many_arguments)]
pub fn simulate_recorded(
    model: &ModelSpec,
    mode: &SimulationMode,
    x_init: &[f64],
    epsilon: f64,
    horizon: f64,
    noise: &NoisePlan,
    trial: u64,
    record_every: usize,
) -> Result<Vec<PathSample>> {
    let n_steps = step_count(horizon, noise.dt)?;
    let h = horizon / n_steps as f64;
    let every = record_every.max(1);
    let mut sim = Simulator::new(model, mode, x_init, epsilon, h, noise, trial)?;
    let mut paths: Vec<PathSample> = (0..sim.n_particles())
        .map(|_| PathSample::with_capacity(0.0, h * every as f64, model.dim(), n_steps / every + 1))
        .collect();
    for (p, path) in paths.iter_mut().enumerate() {
        path.push(sim.state(p));
    }
    for k in 1..=n_steps {
        sim.step()?;
        if k % every == 0 {
            for (p, path) in paths.iter_mut().enumerate() {
                path.push(sim.state(p));
            }
        }
    }
    Ok(paths)
}

/// Simulates one trial on `[0, T]`, recording every step.
pub fn simulate(
    model: &ModelSpec,
    mode: &SimulationMode,
    x_init: &[f64],
    epsilon: f64,
    horizon: f64,
    noise: &NoisePlan,
    trial: u64,
) -> Result<Vec<PathSample>> {
    simulate_recorded(model, mode, x_init, epsilon, horizon, noise, trial, 1)
}

/// Trials `0..n_trials` in parallel (first path of each trial).
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    model: &ModelSpec,
    mode: &SimulationMode,
    x_init: &[f64],
    epsilon: f64,
    horizon: f64,
    noise: &NoisePlan,
    n_trials: usize,
    record_every: usize,
) -> Result<Vec<PathSample>> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            simulate_recorded(model, mode, x_init, epsilon, horizon, noise, trial, record_every)
                .map(|mut p| p.swap_remove(0))
        })
        .collect()
}

/// Per-time estimate of `E‖X_t - ref_t‖^order` with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct MomentCurve {
    pub order: u32,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
}

pub fn empirical_moment(paths: &[PathSample], reference: &PathSample, order: u32) -> Result<MomentCurve> {
    if order == 0 || order % 2 == 1 {
        return Err(Error::Precondition(format!(
            "moment order must be even and positive, got {order}"
        )));
    }
    if paths.is_empty() {
        return Err(Error::Precondition("no paths".into()));
    }
    if let Some(bad) = paths
        .iter()
        .position(|p| !p.same_grid(reference) || p.dim() != reference.dim())
    {
        return Err(Error::GridMismatch(format!(
            "path {bad} has t0 = {}, dt = {}, {} states; reference has t0 = {}, dt = {}, {} states",
            paths[bad].t0,
            paths[bad].dt,
            paths[bad].len(),
            reference.t0,
            reference.dt,
            reference.len()
        )));
    }
    let m = paths.len() as f64;
    let n_t = reference.len();
    let mut mean = Vec::with_capacity(n_t);
    let mut stderr = Vec::with_capacity(n_t);
    for k in 0..n_t {
        let r = reference.state(k);
        let vals: Vec<f64> = paths.iter().map(|p| dist(p.state(k), r).powi(order as i32)).collect();
        let mu = vals.iter().sum::<f64>() / m;
        let var = if paths.len() > 1 {
            vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        mean.push(mu);
        stderr.push((var / m).sqrt());
    }
    Ok(MomentCurve {
        order,
        times: (0..n_t).map(|k| reference.time(k)).collect(),
        mean,
        stderr,
        n_paths: paths.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentViolation {
    pub time: f64,
    pub moment: f64,
    pub bound: f64,
    pub bound_kind: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    /// `ε d / (2 K_V)` when global convexity holds.
    pub uniform_bound: Option<f64>,
    pub slack: f64,
    pub violations: Vec<MomentViolation>,
    /// Largest observed `m(t) / bound(t)` for the time-dependent bound.
    pub worst_curve_ratio: f64,
    /// Largest observed `m(t) / uniform bound`.
    pub worst_uniform_ratio: Option<f64>,
}

impl MomentBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a second-moment curve against `ε t d e^{2Kt}` and, under global
/// convexity, the uniform bound `ε d / (2 K_V)`. A point passes when
/// `m(t) ≤ bound·(1 + slack) + 3·stderr(t)`.
pub fn moment_bound_check(
    constants: &DissipativityConstants,
    curve: &MomentCurve,
    epsilon: f64,
    dim: usize,
    global_convexity: bool,
    slack: f64,
) -> Result<MomentBoundReport> {
    if curve.order != 2 {
        return Err(Error::Precondition("moment bounds apply to the second moment".into()));
    }
    let d = dim as f64;
    let uniform_bound = global_convexity.then(|| epsilon * d / (2.0 * constants.k_convex));
    let mut violations = Vec::new();
    let mut worst_curve_ratio: f64 = 0.0;
    let mut worst_uniform_ratio: Option<f64> = uniform_bound.map(|_| 0.0);
    for ((&t, &m), &se) in curve.times.iter().zip(&curve.mean).zip(&curve.stderr) {
        let bound = epsilon * t * d * (2.0 * constants.k_upper * t).exp();
        if bound > 0.0 {
            worst_curve_ratio = worst_curve_ratio.max(m / bound);
        }
        if m > bound * (1.0 + slack) + 3.0 * se {
            violations.push(MomentViolation {
                time: t,
                moment: m,
                bound,
                bound_kind: "curve",
            });
        }
        if let Some(ub) = uniform_bound {
            if let Some(w) = worst_uniform_ratio.as_mut() {
                *w = w.max(m / ub);
            }
            if m > ub * (1.0 + slack) + 3.0 * se {
                violations.push(MomentViolation {
                    time: t,
                    moment: m,
                    bound: ub,
                    bound_kind: "uniform",
                });
            }
        }
    }
    Ok(MomentBoundReport {
        uniform_bound,
        slack,
        violations,
        worst_curve_ratio,
        worst_uniform_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        use rand::Rng;
        let plan = NoisePlan::new(11, 1e-2);
        let a: Vec<f64> = plan.stream(3, 0).random_iter().take(4).collect();
        let b: Vec<f64> = plan.stream(3, 0).random_iter().take(4).collect();
        let c: Vec<f64> = plan.stream(3, 1).random_iter().take(4).collect();
        let e: Vec<f64> = plan.stream(4, 0).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, e);
    }

    #[test]
    fn zero_noise_limiting_path_decays_at_rate_two() {
        let m = ModelSpec::gradient(1, "0.5*x1^2", "u", 1).unwrap();
        let mode = SimulationMode::Limiting { x_stable: vec![0.0] };
        let p = simulate(&m, &mode, &[1.0], 0.0, 1.0, &NoisePlan::new(1, 1e-3), 0).unwrap();
        assert!((p[0].final_state()[0] - (-2.0f64).exp()).abs() < 1e-3);
    }
}
