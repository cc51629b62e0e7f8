//! The built-in pipelines: constants, stability, closed-form and numeric
//! quasi-potential, exit Monte Carlo, Kramers fit, then a summary table.

use anyhow::Result;
use serde_json::{json, Value};

use selfstab_core::model::ModelSpec;

use crate::commands::{self, CliError, Ctx};
use crate::config::ScenarioConfig;

struct Table {
    rows: Vec<[String; 3]>,
}

impl Table {
    fn push(&mut self, section: &str, item: impl Into<String>, value: impl ToString) {
        self.rows.push([section.to_string(), item.into(), value.to_string()]);
    }
}

pub fn run(ctx: &Ctx, cfg: &ScenarioConfig, model: &ModelSpec, trials: Option<usize>) -> Result<Value> {
    let name = cfg.name.clone().unwrap_or_else(|| "scenario".into());
    let mut table = Table { rows: Vec::new() };

    // a failed check is reported in the table and does not stop the pipeline
    let check = match commands::check_model(ctx, cfg, model) {
        Ok(v) => v,
        Err(e) => match e.downcast_ref::<CliError>() {
            Some(CliError::CheckFailed(m)) => {
                table.push("check", "failure", m);
                serde_json::from_reader(std::fs::File::open(
                    ctx.out.path(&cfg.check.clone().unwrap_or_default().output),
                )?)?
            }
            _ => return Err(e),
        },
    };
    table.push("check", "all_passed", &check["all_passed"]);
    table.push("check", "global_convexity", &check["global_convexity"]);
    for key in ["k_upper", "k_convex", "eta", "r0", "r1"] {
        table.push("constants", key, &check["constants"][key]);
    }
    if !check["stability"].is_null() {
        table.push("stability", "starts_checked", &check["stability"]["n_checked"]);
        table.push(
            "stability",
            "failures",
            check["stability"]["failures"].as_array().map_or(0, Vec::len),
        );
    }

    let q = commands::quasipotential_entries(ctx, cfg, model, model.is_gradient(), true)?;
    for e in &q {
        let section = format!("quasipotential_{}", e.method);
        table.push(&section, format!("{}_value", e.variant), e.value);
        let argmins: Vec<String> = e.argmins.iter().map(|a| format!("{a:?}")).collect();
        table.push(&section, format!("{}_argmin", e.variant), argmins.join(" "));
        if let Some(t) = e.best_horizon {
            table.push(&section, format!("{}_horizon", e.variant), t);
        }
    }
    let qsec = cfg.quasipotential.clone().unwrap_or_default();
    ctx.out.write_json(&qsec.output, &json!({ "quasipotential": q }))?;

    let mut exits = Vec::new();
    if let Some(sec) = &cfg.exit {
        exits = commands::exit_series(ctx, cfg, model, sec, trials)?;
        for r in &exits {
            let section = format!("exit_{}", r.mode);
            for (p, hist) in r.points.iter().zip(&r.exit_histogram) {
                table.push(&section, format!("eps{}_mean_exit_time", p.epsilon), p.mean_exit_time);
                table.push(&section, format!("eps{}_stderr", p.epsilon), p.stderr);
                table.push(&section, format!("eps{}_censored", p.epsilon), p.n_censored);
                let exits = hist
                    .iter()
                    .map(|(at, n)| format!("{at}:{n}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                table.push(&section, format!("eps{}_exits_by_boundary", p.epsilon), exits);
            }
            if let Some(k) = r.kramers_q {
                table.push(&section, "kramers_q", k);
                table.push(&section, "kramers_q_stderr", r.kramers_q_stderr.unwrap_or(f64::NAN));
            }
        }
    }

    let summary_name = "summary.csv";
    ctx.out.write(summary_name, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["section", "item", "value"])?;
        for r in &table.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    })?;
    commands::write_sidecar(ctx, cfg, &format!("{name}.toml"))?;

    for [s, i, v] in &table.rows {
        eprintln!("{s:<28} {i:<32} {v}");
    }
    Ok(json!({
        "scenario": name,
        "check": check,
        "quasipotential": q,
        "exit": exits,
        "summary": ctx.out.path(summary_name),
    }))
}
