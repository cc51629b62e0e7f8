//! One function per subcommand. Each returns the JSON summary printed on
//! stdout; files go through [`OutDir`].

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use selfstab_core::drift::{solve_self_consistent_drift, DriftField, GridSpec, PicardOptions};
use selfstab_core::exitlab::{exit_statistics, kramers_fit, run_exit_trials, Domain, KramersPoint};
use selfstab_core::flow::{
    find_equilibrium, integrate_flow, integrate_relaxed_flow, verify_domain_stability, FlowCache, StabilityOptions,
};
use selfstab_core::ldp::{
    boundary_min, minimize_cost, quasipotential_closed_form, quasipotential_numeric, ActionSpec, ActionVariant,
    ClosedFormVariant, OptimizerOptions,
};
use selfstab_core::model::{check_assumptions, AssumptionTolerances, BoxRegion, ModelSpec};
use selfstab_core::sde::{simulate_recorded, NoisePlan, SimulationMode};

use crate::config::{ExitSection, ScenarioConfig};
use crate::output::{read_kramers, sidecar_name, with_suffix, write_exit_records, write_kramers, write_paths, OutDir};

/// Failures that are not errors of the numerical library.
#[derive(Debug)]
pub enum CliError {
    CheckFailed(String),
    Config(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::CheckFailed(m) => write!(f, "model check failed: {m}"),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub struct Ctx {
    pub out: OutDir,
    pub seed: u64,
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| CliError::Config(format!("config has no [{name}] section")).into())
}

/// Config as actually run: seed and `x_stable` filled in.
pub fn resolve(cfg: &ScenarioConfig, seed: u64) -> Result<(ScenarioConfig, ModelSpec)> {
    let model = cfg.build_model()?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    if resolved.model.x_stable.is_none() {
        let eq =
            find_equilibrium(&model, &vec![0.0; model.dim()], 1e-12).context("searching x_stable from the origin")?;
        resolved.model.x_stable = Some(eq.point);
    }
    Ok((resolved, model))
}

fn x_stable(cfg: &ScenarioConfig) -> Vec<f64> {
    cfg.model.x_stable.clone().expect("resolved config")
}

pub fn write_sidecar(ctx: &Ctx, cfg: &ScenarioConfig, output: &str) -> Result<()> {
    let text = toml::to_string(cfg).context("serializing resolved config")?;
    ctx.out
        .write(&sidecar_name(output), |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(())
}

pub fn check_model(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = cfg.check.clone().unwrap_or_default();
    let tol = AssumptionTolerances {
        r0: cfg.model.r0.unwrap_or(1.0),
        n_samples: sec.n_samples,
        seed: ctx.seed,
        ..AssumptionTolerances::default()
    };
    let report = check_assumptions(model, &BoxRegion::symmetric(sec.half_width, model.dim()), &tol);
    let xs = x_stable(cfg);
    let stability = match (&cfg.domain, sec.stability) {
        (Some(_), true) => Some(verify_domain_stability(
            model,
            &cfg.build_domain()?,
            &xs,
            &StabilityOptions::default(),
        )?),
        _ => None,
    };
    let summary = json!({
        "all_passed": report.all_passed(),
        "global_convexity": report.global_convexity,
        "clauses": report.clauses,
        "constants": report.constants,
        "x_stable": xs,
        "stability": stability,
    });
    ctx.out.write_json(&sec.output, &summary)?;
    write_sidecar(ctx, cfg, &sec.output)?;
    let mut failed: Vec<String> = report
        .clauses
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if let Some(s) = &stability {
        if !s.passed() {
            failed.push(format!(
                "stability: {} of {} starts failed",
                s.failures.len(),
                s.n_checked
            ));
        }
    }
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(failed.join("; ")).into());
    }
    Ok(summary)
}

pub fn flow(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = section(&cfg.flow, "flow")?;
    let path = if sec.relaxed {
        integrate_relaxed_flow(model, &x_stable(cfg), &sec.x0, sec.horizon, sec.dt)?
    } else {
        integrate_flow(model, &sec.x0, sec.horizon, sec.dt)?
    };
    let file = ctx.out.write(&sec.output, |w| write_paths(w, &[(0, 0, &path)]))?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(json!({ "states": path.len(), "final_state": path.final_state(), "output": file }))
}

pub fn solve_drift(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = section(&cfg.drift, "drift")?;
    let region = match (&sec.region_lo, &sec.region_hi) {
        (Some(lo), Some(hi)) => Some(BoxRegion::new(lo.clone(), hi.clone())?),
        (None, None) => None,
        _ => bail!(CliError::Config(
            "drift.region_lo and drift.region_hi go together".into()
        )),
    };
    let opts = PicardOptions {
        epsilon: sec.epsilon,
        horizon: sec.horizon,
        grid: GridSpec {
            n_times: sec.n_times,
            nodes_per_axis: sec.nodes_per_axis,
            region,
        },
        ensemble_size: sec.ensemble,
        noise_seed: ctx.seed,
        dt: sec.dt,
        tol: sec.tol,
        max_iter: sec.max_iter,
        fresh_noise: sec.fresh_noise,
    };
    let sol = solve_self_consistent_drift(model, &sec.x0, &opts)?;
    let file = ctx.out.write(&sec.output, |w| Ok(sol.field.write_table(w)?))?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(json!({
        "iterations": sol.log,
        "lambda_norm": sol.field.lambda_norm(),
        "output": file,
    }))
}

fn load_field(ctx: &Ctx, path: &str, model: &ModelSpec) -> Result<DriftField> {
    let direct = Path::new(path);
    let p = if direct.exists() {
        direct.to_path_buf()
    } else {
        ctx.out.path(path)
    };
    let f = std::fs::File::open(&p).with_context(|| format!("cannot open drift table {}", p.display()))?;
    Ok(DriftField::read_table(std::io::BufReader::new(f), model)?)
}

#[allow(clippy::too_many_arguments)]
fn build_mode(
    ctx: &Ctx,
    cfg: &ScenarioConfig,
    model: &ModelSpec,
    name: &str,
    particles: usize,
    x0: &[f64],
    tracking_horizon: f64,
    drift_table: Option<&str>,
    offset: f64,
) -> Result<SimulationMode> {
    Ok(match name {
        "classical" => SimulationMode::Classical,
        "particle" => SimulationMode::Particle { n: particles },
        "limiting" => SimulationMode::Limiting {
            x_stable: x_stable(cfg),
        },
        "tracking" => SimulationMode::Tracking {
            flow: Arc::new(FlowCache::new(model, x0, tracking_horizon + offset, 1e-3)?),
            offset,
        },
        "frozen" => {
            let path = drift_table.ok_or_else(|| CliError::Config("frozen mode needs simulate.drift_table".into()))?;
            SimulationMode::Frozen {
                field: Arc::new(load_field(ctx, path, model)?),
                offset,
            }
        }
        other => bail!(CliError::Config(format!("unknown mode {other:?}"))),
    })
}

pub fn simulate(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = section(&cfg.simulate, "simulate")?;
    let mode = build_mode(
        ctx,
        cfg,
        model,
        &sec.mode,
        sec.particles,
        &sec.x0,
        sec.horizon,
        sec.drift_table.as_deref(),
        sec.offset,
    )?;
    let noise = NoisePlan::new(ctx.seed, sec.dt);
    let trials: Vec<Vec<_>> = (0..sec.trials as u64)
        .into_par_iter()
        .map(|t| {
            simulate_recorded(
                model,
                &mode,
                &sec.x0,
                sec.epsilon,
                sec.horizon,
                &noise,
                t,
                sec.record_every,
            )
        })
        .collect::<selfstab_core::Result<_>>()?;
    let rows: Vec<(u64, u64, &_)> = trials
        .iter()
        .enumerate()
        .flat_map(|(t, ps)| ps.iter().enumerate().map(move |(p, path)| (t as u64, p as u64, path)))
        .collect();
    let file = ctx.out.write(&sec.output, |w| write_paths(w, &rows))?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(json!({
        "mode": mode.name(),
        "trials": sec.trials,
        "paths": rows.len(),
        "output": file,
    }))
}

fn action_spec<'a>(
    cfg: &ScenarioConfig,
    model: &'a ModelSpec,
    variant: &str,
    x0: Option<&[f64]>,
    horizon: f64,
    offset: f64,
) -> Result<ActionSpec<'a>> {
    Ok(match variant {
        "classical" => ActionSpec::classical(model),
        "limiting" | "stabilized" => ActionSpec::limiting(model, &x_stable(cfg))?,
        "tracking" => {
            let x0 = x0.ok_or_else(|| CliError::Config("tracking variant needs action.x0".into()))?;
            let flow = Arc::new(FlowCache::new(model, x0, horizon + offset, 1e-3)?);
            ActionSpec::new(model, ActionVariant::Tracking { flow, offset })?
        }
        other => bail!(CliError::Config(format!("unknown action variant {other:?}"))),
    })
}

pub fn action(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = section(&cfg.action, "action")?;
    let spec = action_spec(cfg, model, &sec.variant, sec.x0.as_deref(), sec.horizon, sec.offset)?;
    let y = sec.y.clone().unwrap_or_else(|| x_stable(cfg));
    let opts = OptimizerOptions {
        seed: ctx.seed,
        ..OptimizerOptions::default()
    };
    let r = minimize_cost(&spec, &y, &sec.z, sec.horizon, sec.intervals, &opts)?;
    let path = r.path.to_path_sample();
    let file = ctx.out.write(&sec.output, |w| write_paths(w, &[(0, 0, &path)]))?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(json!({
        "cost": r.cost,
        "grad_norm": r.grad_norm,
        "iterations": r.iterations,
        "converged": r.converged,
        "output": file,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasipotentialEntry {
    pub variant: String,
    pub method: &'static str,
    pub value: f64,
    pub argmins: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

fn closed_form_entries(cfg: &ScenarioConfig, model: &ModelSpec, domain: &Domain) -> Result<Vec<QuasipotentialEntry>> {
    let sec = cfg.quasipotential.clone().unwrap_or_default();
    let xs = x_stable(cfg);
    sec.variants
        .iter()
        .map(|v| {
            let variant = if v == "classical" {
                ClosedFormVariant::Classical
            } else {
                ClosedFormVariant::Stabilized
            };
            let b = boundary_min(
                |z| quasipotential_closed_form(model, &xs, z, variant),
                domain,
                sec.n_scan,
                sec.refine_tol,
            )?;
            Ok(QuasipotentialEntry {
                variant: v.clone(),
                method: "closed_form",
                value: b.value,
                argmins: b.argmins.into_iter().map(|a| a.point).collect(),
                best_horizon: None,
                converged: None,
            })
        })
        .collect()
}

fn numeric_entries(
    ctx: &Ctx,
    cfg: &ScenarioConfig,
    model: &ModelSpec,
    domain: &Domain,
    closed: Option<&[QuasipotentialEntry]>,
) -> Result<Vec<QuasipotentialEntry>> {
    let sec = cfg.quasipotential.clone().unwrap_or_default();
    let xs = x_stable(cfg);
    let opts = OptimizerOptions {
        seed: ctx.seed,
        ..OptimizerOptions::default()
    };
    let mut out = Vec::new();
    for v in &sec.variants {
        let spec = action_spec(cfg, model, v, None, 0.0, 0.0)?;
        // the closed-form minimizers when known, a boundary scan otherwise
        let candidates: Vec<Vec<f64>> = match closed.and_then(|c| c.iter().find(|e| &e.variant == v)) {
            Some(e) => e.argmins.clone(),
            None => domain
                .boundary_samples(sec.n_numeric)
                .into_iter()
                .map(|b| b.point)
                .collect(),
        };
        let mut best: Option<(f64, Vec<f64>, f64, bool)> = None;
        for z in candidates {
            let q = quasipotential_numeric(&spec, &xs, &z, &sec.horizons, sec.intervals, &opts)?;
            if best.as_ref().is_none_or(|b| q.value < b.0) {
                best = Some((q.value, z, q.best_horizon, q.converged));
            }
        }
        let (value, z, t, conv) = best.context("no boundary candidates")?;
        out.push(QuasipotentialEntry {
            variant: v.clone(),
            method: "numeric",
            value,
            argmins: vec![z],
            best_horizon: Some(t),
            converged: Some(conv),
        });
    }
    Ok(out)
}

pub fn quasipotential_entries(
    ctx: &Ctx,
    cfg: &ScenarioConfig,
    model: &ModelSpec,
    closed_form: bool,
    numeric: bool,
) -> Result<Vec<QuasipotentialEntry>> {
    let domain = cfg.build_domain()?;
    let closed = if model.is_gradient() && (closed_form || numeric) {
        Some(closed_form_entries(cfg, model, &domain)?)
    } else if closed_form {
        return Err(
            selfstab_core::Error::InvalidModel("closed-form quasi-potential needs a gradient model".into()).into(),
        );
    } else {
        None
    };
    let mut entries = Vec::new();
    if closed_form {
        entries.extend(closed.clone().unwrap_or_default());
    }
    if numeric {
        entries.extend(numeric_entries(ctx, cfg, model, &domain, closed.as_deref())?);
    }
    Ok(entries)
}

pub fn quasipotential(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec, closed_form: bool) -> Result<Value> {
    let sec = cfg.quasipotential.clone().unwrap_or_default();
    let entries = quasipotential_entries(ctx, cfg, model, closed_form, !closed_form)?;
    let summary = json!({ "quasipotential": entries });
    ctx.out.write_json(&sec.output, &summary)?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitSeriesResult {
    pub mode: String,
    pub points: Vec<KramersPoint>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kramers_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kramers_q_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kramers_file: Option<String>,
    /// Nonempty exit histogram bins `(lower edge, count)`, per ε.
    pub exit_histogram: Vec<Vec<(f64, usize)>>,
}

pub fn exit_series(
    ctx: &Ctx,
    cfg: &ScenarioConfig,
    model: &ModelSpec,
    sec: &ExitSection,
    trials_override: Option<usize>,
) -> Result<Vec<ExitSeriesResult>> {
    let domain = cfg.build_domain()?;
    let x0 = sec.x0.clone().unwrap_or_else(|| x_stable(cfg));
    let noise = NoisePlan::new(ctx.seed, sec.dt);
    let mut results = Vec::new();
    for s in &sec.series {
        if s.mode == "frozen" || s.mode == "tracking" {
            bail!(CliError::Config(format!(
                "exit trials run in classical, particle or limiting mode, not {}",
                s.mode
            )));
        }
        let mode = build_mode(ctx, cfg, model, &s.mode, sec.particles, &x0, 0.0, None, 0.0)?;
        let trials = trials_override.or(s.trials).unwrap_or(sec.trials);
        let mut points = Vec::new();
        let mut files = Vec::new();
        let mut sides = Vec::new();
        for &eps in &s.epsilons {
            let run = run_exit_trials(model, &mode, &domain, &x0, eps, sec.dt, trials, sec.horizon, &noise)?;
            let name = with_suffix(&sec.output, &format!("{}_eps{eps}", s.mode));
            ctx.out
                .write(&name, |w| write_exit_records(w, model.dim(), &run.records))?;
            files.push(name);
            let summary = exit_statistics(&run.records, &domain, 16, &[])?;
            sides.push(
                summary
                    .histogram
                    .iter()
                    .filter(|b| b.count > 0)
                    .map(|b| (b.lo, b.count))
                    .collect(),
            );
            points.push(KramersPoint {
                epsilon: eps,
                mean_exit_time: summary.restricted_mean,
                stderr: summary.restricted_mean_stderr,
                n_trials: summary.n_trials,
                n_censored: summary.n_censored,
            });
        }
        let mut r = ExitSeriesResult {
            mode: s.mode.clone(),
            points,
            files,
            kramers_q: None,
            kramers_q_stderr: None,
            kramers_file: None,
            exit_histogram: sides,
        };
        if let Some(k) = &sec.kramers_output {
            let name = with_suffix(k, &s.mode);
            ctx.out.write(&name, |w| write_kramers(w, &r.points))?;
            r.kramers_file = Some(name);
        }
        let mut distinct = s.epsilons.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() >= 3 {
            let fit = kramers_fit(&r.points)?;
            r.kramers_q = Some(fit.q_estimate);
            r.kramers_q_stderr = Some(fit.q_stderr);
        }
        results.push(r);
    }
    Ok(results)
}

pub fn exit(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec) -> Result<Value> {
    let sec = section(&cfg.exit, "exit")?;
    let results = exit_series(ctx, cfg, model, sec, None)?;
    write_sidecar(ctx, cfg, &sec.output)?;
    Ok(json!({ "series": results }))
}

pub fn kramers(ctx: &Ctx, input: &Path, output: &str) -> Result<Value> {
    let points = read_kramers(input)?;
    let fit = kramers_fit(&points)?;
    let summary = json!({
        "q_estimate": fit.q_estimate,
        "q_stderr": fit.q_stderr,
        "intercept": fit.intercept,
        "weighted": fit.weighted,
        "residuals": fit.residuals,
    });
    ctx.out.write_json(output, &summary)?;
    Ok(summary)
}
