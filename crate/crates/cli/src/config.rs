//! Scenario config files (TOML). Unknown keys are rejected everywhere and
//! every expression is parsed while loading.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use selfstab_core::exitlab::{Domain, DomainKind};
use selfstab_core::expr;
use selfstab_core::model::{ModelSpec, RadialProfile, VectorField};

pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "paper-5.1" => Some(include_str!("../scenarios/paper-5.1.toml")),
        "paper-5.2" => Some(include_str!("../scenarios/paper-5.2.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelSection,
    #[serde(default)]
    pub domain: Option<DomainSection>,
    #[serde(default)]
    pub check: Option<CheckSection>,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub drift: Option<DriftSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub action: Option<ActionSection>,
    #[serde(default)]
    pub quasipotential: Option<QuasipotentialSection>,
    #[serde(default)]
    pub exit: Option<ExitSection>,
    #[serde(default)]
    pub kramers: Option<KramersSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    /// `U`, with `V = -∇U`.
    #[serde(default)]
    pub potential: Option<String>,
    /// Components of `V` when the model is not a gradient.
    #[serde(default)]
    pub drift: Option<Vec<String>>,
    /// `φ(u)` as an expression in `u`.
    #[serde(default)]
    pub phi: Option<String>,
    /// `φ(u) = Σ c_k u^k`, lowest degree first.
    #[serde(default)]
    pub phi_coefficients: Option<Vec<f64>>,
    pub growth_order: u32,
    #[serde(default)]
    pub weight_order: Option<u32>,
    /// Found by an equilibrium search from the origin when absent.
    #[serde(default)]
    pub x_stable: Option<Vec<f64>>,
    #[serde(default)]
    pub r0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum DomainSection {
    Interval { lo: f64, hi: f64 },
    Ellipse { center: [f64; 2], semi_axes: [f64; 2] },
    Ball { center: Vec<f64>, radius: f64 },
    Implicit { level: String, boundary: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub half_width: f64,
    pub n_samples: usize,
    pub stability: bool,
    pub output: String,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            n_samples: 4000,
            stability: true,
            output: "check.json".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// Relax toward `x_stable` instead of following `V`.
    pub relaxed: bool,
    pub output: String,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            x0: Vec::new(),
            horizon: 10.0,
            dt: 1e-2,
            relaxed: false,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub horizon: f64,
    pub n_times: usize,
    pub nodes_per_axis: usize,
    pub region_lo: Option<Vec<f64>>,
    pub region_hi: Option<Vec<f64>>,
    pub ensemble: usize,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub fresh_noise: bool,
    pub output: String,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            x0: Vec::new(),
            epsilon: 0.1,
            horizon: 1.0,
            n_times: 101,
            nodes_per_axis: 41,
            region_lo: None,
            region_hi: None,
            ensemble: 10_000,
            dt: 1e-3,
            tol: 1e-4,
            max_iter: 50,
            fresh_noise: false,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// classical, particle, frozen, limiting or tracking.
    pub mode: String,
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    pub particles: usize,
    pub record_every: usize,
    /// Drift table written by `solve-drift`, for the frozen mode.
    pub drift_table: Option<String>,
    pub offset: f64,
    pub output: String,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mode: "classical".into(),
            x0: Vec::new(),
            epsilon: 0.1,
            horizon: 1.0,
            dt: 1e-2,
            trials: 1,
            particles: 100,
            record_every: 1,
            drift_table: None,
            offset: 0.0,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionSection {
    /// classical, limiting or tracking.
    pub variant: String,
    /// Start point; `x_stable` when absent.
    pub y: Option<Vec<f64>>,
    pub z: Vec<f64>,
    pub horizon: f64,
    pub intervals: usize,
    /// Initial point of the tracked flow.
    pub x0: Option<Vec<f64>>,
    pub offset: f64,
    pub output: String,
}

impl Default for ActionSection {
    fn default() -> Self {
        Self {
            variant: "limiting".into(),
            y: None,
            z: Vec::new(),
            horizon: 4.0,
            intervals: 200,
            x0: None,
            offset: 0.0,
            output: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasipotentialSection {
    /// classical or stabilized.
    pub variants: Vec<String>,
    pub intervals: usize,
    pub horizons: Vec<f64>,
    pub n_scan: usize,
    pub refine_tol: f64,
    /// Boundary samples for the numeric minimum of non-gradient models.
    pub n_numeric: usize,
    pub output: String,
}

impl Default for QuasipotentialSection {
    fn default() -> Self {
        Self {
            variants: vec!["classical".into(), "stabilized".into()],
            intervals: 200,
            horizons: selfstab_core::ldp::default_horizon_grid(),
            n_scan: 720,
            refine_tol: 1e-9,
            n_numeric: 16,
            output: "quasipotential.json".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitSection {
    /// Start point; `x_stable` when absent.
    pub x0: Option<Vec<f64>>,
    pub dt: f64,
    pub trials: usize,
    pub horizon: f64,
    pub particles: usize,
    /// Per-ε record files are named `<stem>_<mode>_eps<ε>.csv`.
    pub output: String,
    /// Per-mode Kramers tables are named `<stem>_<mode>.csv`.
    pub kramers_output: Option<String>,
    pub series: Vec<ExitSeries>,
}

impl Default for ExitSection {
    fn default() -> Self {
        Self {
            x0: None,
            dt: 1e-2,
            trials: 200,
            horizon: 1e5,
            particles: 100,
            output: String::new(),
            kramers_output: None,
            series: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitSeries {
    pub mode: String,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KramersSection {
    /// Kramers table to fit.
    pub input: Option<String>,
    pub output: String,
}

impl Default for KramersSection {
    fn default() -> Self {
        Self {
            input: None,
            output: "kramers_fit.json".into(),
        }
    }
}

/// Reads a config file, or a built-in one named `builtin:<name>`.
pub fn load_config(path: &str) -> Result<ScenarioConfig> {
    let source = match path.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_source(name)
            .with_context(|| format!("no built-in scenario named {name:?}"))?
            .to_string(),
        None => std::fs::read_to_string(Path::new(path)).with_context(|| format!("cannot read config {path}"))?,
    };
    parse_config(&source).with_context(|| format!("invalid config {path}"))
}

pub fn parse_config(source: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(source)
        .map_err(|e| anyhow::anyhow!("schema: {}", e.message()).context(describe_span(source, e.span())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe_span(source: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = source[..r.start.min(source.len())].matches('\n').count() + 1;
            format!("at line {line}")
        }
        None => "in config".into(),
    }
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        self.build_model().context("model")?;
        if let Some(d) = &self.domain {
            let dom = build_domain(d).context("domain")?;
            if dom.dim() != self.model.dim {
                bail!(
                    "domain: dimension {} differs from model dimension {}",
                    dom.dim(),
                    self.model.dim
                );
            }
        }
        if let Some(x) = &self.model.x_stable {
            self.check_point("model.x_stable", x)?;
        }
        let outputs = [
            ("check", self.check.as_ref().map(|s| &s.output)),
            ("flow", self.flow.as_ref().map(|s| &s.output)),
            ("drift", self.drift.as_ref().map(|s| &s.output)),
            ("simulate", self.simulate.as_ref().map(|s| &s.output)),
            ("action", self.action.as_ref().map(|s| &s.output)),
            ("quasipotential", self.quasipotential.as_ref().map(|s| &s.output)),
            ("exit", self.exit.as_ref().map(|s| &s.output)),
            ("kramers", self.kramers.as_ref().map(|s| &s.output)),
        ];
        for (name, out) in outputs {
            if out.is_some_and(|o| o.trim().is_empty()) {
                bail!("{name}.output: every run section must name its output file");
            }
        }
        if let Some(s) = &self.flow {
            self.check_point("flow.x0", &s.x0)?;
        }
        if let Some(s) = &self.drift {
            self.check_point("drift.x0", &s.x0)?;
        }
        if let Some(s) = &self.simulate {
            self.check_point("simulate.x0", &s.x0)?;
            parse_mode_name(&s.mode).context("simulate.mode")?;
        }
        if let Some(s) = &self.action {
            self.check_point("action.z", &s.z)?;
            if !["classical", "limiting", "tracking"].contains(&s.variant.as_str()) {
                bail!(
                    "action.variant: expected classical, limiting or tracking, got {:?}",
                    s.variant
                );
            }
        }
        if let Some(s) = &self.quasipotential {
            for v in &s.variants {
                if v != "classical" && v != "stabilized" {
                    bail!("quasipotential.variants: expected classical or stabilized, got {v:?}");
                }
            }
        }
        if let Some(s) = &self.exit {
            if s.series.is_empty() {
                bail!("exit.series: at least one series is required");
            }
            for (i, r) in s.series.iter().enumerate() {
                parse_mode_name(&r.mode).with_context(|| format!("exit.series[{i}].mode"))?;
                if r.epsilons.is_empty() || r.epsilons.iter().any(|e| e.is_nan() || *e <= 0.0) {
                    bail!("exit.series[{i}].epsilons: need at least one positive ε");
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, key: &str, x: &[f64]) -> Result<()> {
        if x.len() != self.model.dim {
            bail!("{key}: expected {} coordinate(s), got {}", self.model.dim, x.len());
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let field = match (&m.potential, &m.drift) {
            (Some(u), None) => VectorField::Gradient(expr::parse(u, m.dim).context("potential")?),
            (None, Some(v)) => VectorField::Components(
                v.iter()
                    .enumerate()
                    .map(|(i, s)| expr::parse(s, m.dim).with_context(|| format!("drift[{i}]")))
                    .collect::<Result<_>>()?,
            ),
            _ => bail!("exactly one of `potential` and `drift` is required"),
        };
        let phi = match (&m.phi, &m.phi_coefficients) {
            (Some(p), None) => expr::parse_profile(p).context("phi")?,
            (None, Some(c)) => expr::parse_profile(&polynomial_source(c)).context("phi_coefficients")?,
            _ => bail!("exactly one of `phi` and `phi_coefficients` is required"),
        };
        Ok(ModelSpec::new(
            m.dim,
            field,
            RadialProfile::from_expression(phi),
            m.growth_order,
            m.weight_order,
        )?)
    }

    pub fn build_domain(&self) -> Result<Domain> {
        match &self.domain {
            Some(d) => build_domain(d),
            None => bail!("this command needs a [domain] section"),
        }
    }
}

fn polynomial_source(c: &[f64]) -> String {
    if c.is_empty() {
        return "0".into();
    }
    c.iter()
        .enumerate()
        .map(|(k, v)| match k {
            0 => format!("({v:?})"),
            _ => format!("({v:?})*u^{k}"),
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

fn build_domain(d: &DomainSection) -> Result<Domain> {
    Ok(match d {
        DomainSection::Interval { lo, hi } => Domain::interval(*lo, *hi)?,
        DomainSection::Ellipse { center, semi_axes } => Domain::ellipse(*center, *semi_axes)?,
        DomainSection::Ball { center, radius } => Domain::ball(center.clone(), *radius)?,
        DomainSection::Implicit { level, boundary } => {
            let dim = boundary.first().map_or(0, |p| p.len());
            let g = expr::parse(level, dim).context("level")?;
            Domain::new(DomainKind::Implicit {
                g,
                boundary: boundary.clone(),
            })?
        }
    })
}

pub fn parse_mode_name(mode: &str) -> Result<&str> {
    match mode {
        "classical" | "particle" | "frozen" | "limiting" | "tracking" => Ok(mode),
        _ => bail!("expected classical, particle, frozen, limiting or tracking, got {mode:?}"),
    }
}
