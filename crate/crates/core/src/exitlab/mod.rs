//! Exit-time and exit-location Monte Carlo and the Kramers regression.

mod domain;

pub use domain::{BoundaryPoint, Domain, DomainKind};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::step_count;
use crate::linalg::dist;
use crate::model::ModelSpec;
use crate::sde::{NoisePlan, SimulationMode, Simulator};

/// One exit trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRecord {
    pub trial: u64,
    pub seed: u64,
    /// Exit time, or the horizon for censored trials.
    pub exit_time: f64,
    /// Crossing point on `∂D`, or the last state for censored trials.
    pub exit_point: Vec<f64>,
    /// Boundary parameter of the exit point; NaN when censored.
    pub boundary_param: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitRun {
    pub records: Vec<ExitRecord>,
    pub n_censored: usize,
    /// Set when every trial was censored.
    pub warning: Option<String>,
}

/// Locates the crossing of `∂D` on the segment `a → b` (`a` inside, `b`
/// outside) by bisection on the level function. Returns the fraction along
/// the segment and the crossing point, accurate to `|g| ≤ 1e-10` or 64 halvings.
fn bisect_crossing(domain: &Domain, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let point = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect() };
    let mut best = (1.0, b.to_vec());
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let p = point(mid);
        let g = domain.level(&p);
        if g.abs() <= 1e-10 {
            return (mid, p);
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, p);
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    model: &ModelSpec,
    mode: &SimulationMode,
    domain: &Domain,
    x_init: &[f64],
    epsilon: f64,
    dt: f64,
    n_steps: usize,
    noise: &NoisePlan,
    trial: u64,
) -> Result<ExitRecord> {
    let mut sim = Simulator::new(model, mode, x_init, epsilon, dt, noise, trial)?;
    let mut prev = x_init.to_vec();
    for k in 0..n_steps {
        sim.step()?;
        let cur = sim.state(0);
        if !domain.contains(cur) {
            let (s, point) = bisect_crossing(domain, &prev, cur);
            return Ok(ExitRecord {
                trial,
                seed: noise.base_seed,
                exit_time: (k as f64 + s) * dt,
                boundary_param: domain.boundary_param(&point),
                exit_point: point,
                censored: false,
            });
        }
        prev.copy_from_slice(cur);
    }
    Ok(ExitRecord {
        trial,
        seed: noise.base_seed,
        exit_time: n_steps as f64 * dt,
        exit_point: prev,
        boundary_param: f64::NAN,
        censored: true,
    })
}

/// Simulates `n_trials` independent trials until the (tagged, index 0)
/// particle leaves `D`, or until `max_horizon` (censored).
#[allow(clippy::too_many_arguments)]
pub fn run_exit_trials(
    model: &ModelSpec,
    mode: &SimulationMode,
    domain: &Domain,
    x_init: &[f64],
    epsilon: f64,
    dt: f64,
    n_trials: usize,
    max_horizon: f64,
    noise: &NoisePlan,
) -> Result<ExitRun> {
    if domain.dim() != model.dim() {
        return Err(Error::Precondition("domain dimension differs from model".into()));
    }
    if !domain.contains(x_init) {
        return Err(Error::Precondition(format!(
            "initial point {x_init:?} is not inside the domain"
        )));
    }
    let n_steps = step_count(max_horizon, dt)?;
    let h = max_horizon / n_steps as f64;
    let records: Vec<ExitRecord> = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| run_one(model, mode, domain, x_init, epsilon, h, n_steps, noise, trial))
        .collect::<Result<_>>()?;
    let n_censored = records.iter().filter(|r| r.censored).count();
    let warning = (n_trials > 0 && n_censored == n_trials)
        .then(|| format!("all {n_trials} trials censored at horizon {max_horizon}"));
    Ok(ExitRun {
        records,
        n_censored,
        warning,
    })
}

/// Censoring horizon `50·e^{Q̄/ε}`.
pub fn default_horizon(q_bar: f64, epsilon: f64) -> f64 {
    50.0 * (q_bar / epsilon).exp()
}

/// A named ball around a boundary point.
#[derive(Debug, Clone, Serialize)]
pub struct Neighborhood {
    pub name: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeighborhoodFrequency {
    pub name: String,
    pub count: usize,
    /// Fraction of uncensored exits.
    pub probability: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitSummary {
    pub n_trials: usize,
    pub n_censored: usize,
    pub horizon: f64,
    /// Mean over uncensored exits.
    pub mean: Option<f64>,
    pub mean_stderr: Option<f64>,
    pub median: Option<f64>,
    pub median_stderr: Option<f64>,
    /// `E[min(τ, horizon)]` over all trials; a lower bound on `E τ`.
    pub restricted_mean: f64,
    pub restricted_mean_stderr: f64,
    pub histogram: Vec<HistogramBin>,
    pub neighborhoods: Vec<NeighborhoodFrequency>,
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Summary statistics of an exit run. The histogram covers `[-π, π]` in
/// `n_bins` bins for angle-parametrized boundaries and the distinct
/// parameter values otherwise.
pub fn exit_statistics(
    records: &[ExitRecord],
    domain: &Domain,
    n_bins: usize,
    neighborhoods: &[Neighborhood],
) -> Result<ExitSummary> {
    if records.is_empty() {
        return Err(Error::Precondition("no exit records".into()));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.trial);
    let exits: Vec<&ExitRecord> = sorted.iter().filter(|r| !r.censored).collect();
    let times: Vec<f64> = exits.iter().map(|r| r.exit_time).collect();
    let n_censored = sorted.len() - exits.len();
    let horizon = sorted.iter().map(|r| r.exit_time).fold(0.0, f64::max);
    let all: Vec<f64> = sorted.iter().map(|r| r.exit_time).collect();
    let (restricted_mean, restricted_mean_stderr) = mean_and_stderr(&all);

    let (mean, mean_stderr, median, median_stderr) = if times.is_empty() {
        (None, None, None, None)
    } else {
        let (m, se) = mean_and_stderr(&times);
        let mut t = times.clone();
        t.sort_by(f64::total_cmp);
        let n = t.len();
        let med = if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        };
        // order-statistic 95% interval half-width over 1.96
        let half = 1.96 * (n as f64).sqrt() / 2.0;
        let lo = ((n as f64 / 2.0 - half).floor().max(0.0) as usize).min(n - 1);
        let hi = ((n as f64 / 2.0 + half).ceil() as usize).min(n - 1);
        (Some(m), Some(se), Some(med), Some((t[hi] - t[lo]) / (2.0 * 1.96)))
    };

    let histogram = if domain.has_angle_parameter() {
        let pi = std::f64::consts::PI;
        let nb = n_bins.max(1);
        let w = 2.0 * pi / nb as f64;
        let mut bins: Vec<HistogramBin> = (0..nb)
            .map(|i| HistogramBin {
                lo: -pi + i as f64 * w,
                hi: -pi + (i + 1) as f64 * w,
                count: 0,
            })
            .collect();
        for r in &exits {
            let i = (((r.boundary_param + pi) / w).floor() as usize).min(nb - 1);
            bins[i].count += 1;
        }
        bins
    } else {
        let mut params: Vec<f64> = exits.iter().map(|r| r.boundary_param).collect();
        params.sort_by(f64::total_cmp);
        params.dedup();
        params
            .iter()
            .map(|&p| HistogramBin {
                lo: p,
                hi: p,
                count: exits.iter().filter(|r| r.boundary_param == p).count(),
            })
            .collect()
    };

    let n_exit = exits.len();
    let neighborhoods = neighborhoods
        .iter()
        .map(|nb| {
            let count = exits
                .iter()
                .filter(|r| dist(&r.exit_point, &nb.center) <= nb.radius)
                .count();
            let p = if n_exit > 0 { count as f64 / n_exit as f64 } else { 0.0 };
            NeighborhoodFrequency {
                name: nb.name.clone(),
                count,
                probability: p,
                stderr: if n_exit > 0 {
                    (p * (1.0 - p) / n_exit as f64).sqrt()
                } else {
                    0.0
                },
            }
        })
        .collect();

    Ok(ExitSummary {
        n_trials: sorted.len(),
        n_censored,
        horizon,
        mean,
        mean_stderr,
        median,
        median_stderr,
        restricted_mean,
        restricted_mean_stderr,
        histogram,
        neighborhoods,
    })
}

/// Counts of exit times relative to `(e^{(Q̄-η)/ε}, e^{(Q̄+η)/ε})`.
#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub lower: f64,
    pub upper: f64,
    pub inside: usize,
    pub below: usize,
    pub above: usize,
    /// Censored before the window's upper end: position unknown.
    pub undetermined: usize,
    /// `inside / (n - undetermined)`.
    pub fraction_inside: f64,
}

pub fn window_fraction(records: &[ExitRecord], q_bar: f64, epsilon: f64, eta: f64) -> WindowReport {
    let lower = ((q_bar - eta) / epsilon).exp();
    let upper = ((q_bar + eta) / epsilon).exp();
    let (mut inside, mut below, mut above, mut undetermined) = (0, 0, 0, 0);
    for r in records {
        if r.censored {
            if r.exit_time >= upper {
                above += 1;
            } else {
                undetermined += 1;
            }
        } else if r.exit_time <= lower {
            below += 1;
        } else if r.exit_time >= upper {
            above += 1;
        } else {
            inside += 1;
        }
    }
    let known = records.len() - undetermined;
    WindowReport {
        lower,
        upper,
        inside,
        below,
        above,
        undetermined,
        fraction_inside: if known > 0 {
            inside as f64 / known as f64
        } else {
            f64::NAN
        },
    }
}

/// One point of a Kramers series.
#[derive(Debug, Clone, Serialize)]
pub struct KramersPoint {
    pub epsilon: f64,
    pub mean_exit_time: f64,
    pub stderr: f64,
    pub n_trials: usize,
    pub n_censored: usize,
}

impl KramersPoint {
    pub fn eps_log_mean(&self) -> f64 {
        self.epsilon * self.mean_exit_time.ln()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KramersFit {
    /// Slope of `log E τ` against `1/ε`.
    pub q_estimate: f64,
    pub q_stderr: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub eps_log_mean: Vec<f64>,
    pub weighted: bool,
}

/// Weighted least squares of `log(mean τ)` on `1/ε` with weights
/// `(mean/stderr)²` (the delta-method variance of the log); unweighted when
/// any standard error is zero.
pub fn kramers_fit(series: &[KramersPoint]) -> Result<KramersFit> {
    let mut eps: Vec<f64> = series.iter().map(|p| p.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    if eps.len() < 3 {
        return Err(Error::Precondition("Kramers fit needs at least 3 distinct ε".into()));
    }
    if let Some(p) = series.iter().find(|p| !(p.mean_exit_time > 0.0) || !(p.epsilon > 0.0)) {
        return Err(Error::Precondition(format!(
            "Kramers fit needs positive ε and mean exit times (ε = {}, mean = {})",
            p.epsilon, p.mean_exit_time
        )));
    }
    let weighted = series.iter().all(|p| p.stderr > 0.0);
    let w: Vec<f64> = series
        .iter()
        .map(|p| {
            if weighted {
                (p.mean_exit_time / p.stderr).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<f64> = series.iter().map(|p| 1.0 / p.epsilon).collect();
    let y: Vec<f64> = series.iter().map(|p| p.mean_exit_time.ln()).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(a, b)| a * (b - xm).powi(2)).sum();
    let sxy: f64 = w
        .iter()
        .zip(x.iter().zip(&y))
        .map(|(a, (b, c))| a * (b - xm) * (c - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let n = series.len() as f64;
    let q_stderr = if weighted {
        (1.0 / sxx).sqrt()
    } else if series.len() > 2 {
        let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0);
        (s2 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(KramersFit {
        q_estimate: slope,
        q_stderr,
        intercept,
        residuals,
        eps_log_mean: series.iter().map(|p| p.eps_log_mean()).collect(),
        weighted,
    })
}
