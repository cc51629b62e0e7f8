//! The self-consistent interaction drift `b(t,x) = E[Φ(x - X_t)]`: tabulated
//! fields, the Γ map realized by one Monte-Carlo ensemble, and its Picard
//! iteration with common random numbers.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowCache;
use crate::linalg::norm;
use crate::model::{BoxRegion, ModelSpec, RadialProfile};
use crate::sde::NoisePlan;

/// One uniform grid axis with `n ≥ 2` nodes on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition(format!(
                "invalid grid axis [{lo}, {hi}] with {n} nodes"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    /// Cell index and local coordinate in `[0, 1]`.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.lo) / self.step()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }
}

/// `b(t, x)` tabulated on a uniform time grid times a tensor spatial grid.
#[derive(Debug, Clone)]
pub struct DriftField {
    dim: usize,
    times: Axis,
    axes: Vec<Axis>,
    /// Indexed `[time][node][component]`; node index is row-major with the
    /// first axis slowest.
    values: Vec<f64>,
    /// Ensemble mean per time, used by the tail fallback.
    means: Vec<f64>,
    q: u32,
    profile: RadialProfile,
}

/// Grid resolution for a tabulated drift.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub n_times: usize,
    pub nodes_per_axis: usize,
    /// Spatial box; `None` selects the ψ bounding box inflated by
    /// `max(3√(εT), 1)`.
    pub region: Option<BoxRegion>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_times: 101,
            nodes_per_axis: 41,
            region: None,
        }
    }
}

impl DriftField {
    fn node_count(axes: &[Axis]) -> usize {
        axes.iter().map(|a| a.n).product()
    }

    /// Tabulates `f(t, x)` with ensemble means `mean(t)`.
    pub fn tabulate<F, M>(model: &ModelSpec, times: Axis, axes: Vec<Axis>, f: F, mean: M) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Sync,
        M: Fn(f64) -> Vec<f64>,
    {
        let dim = model.dim();
        if axes.len() != dim || times.lo != 0.0 {
            return Err(Error::Precondition(
                "drift grid must start at t = 0 and match the dimension".into(),
            ));
        }
        let n_nodes = Self::node_count(&axes);
        let mut field = Self {
            dim,
            times,
            axes,
            values: vec![0.0; times.n * n_nodes * dim],
            means: Vec::with_capacity(times.n * dim),
            q: model.weight_order(),
            profile: model.profile().clone(),
        };
        for k in 0..times.n {
            let m = mean(times.node(k));
            if m.len() != dim {
                return Err(Error::Precondition("ensemble mean has wrong dimension".into()));
            }
            field.means.extend(m);
        }
        let block = n_nodes * dim;
        let axes = field.axes.clone();
        field.values.par_chunks_mut(block).enumerate().for_each(|(k, chunk)| {
            let t = times.node(k);
            let mut x = vec![0.0; dim];
            for node in 0..n_nodes {
                node_point(&axes, node, &mut x);
                f(t, &x, &mut chunk[node * dim..(node + 1) * dim]);
            }
        });
        field.check_finite()?;
        Ok(field)
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().chain(&self.means).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Table("drift field has non-finite entries".into()))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.times.hi
    }

    pub fn times(&self) -> Axis {
        self.times
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn weight_order(&self) -> u32 {
        self.q
    }

    pub fn n_nodes(&self) -> usize {
        Self::node_count(&self.axes)
    }

    pub fn region(&self) -> BoxRegion {
        BoxRegion {
            lo: self.axes.iter().map(|a| a.lo).collect(),
            hi: self.axes.iter().map(|a| a.hi).collect(),
        }
    }

    pub fn node(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        node_point(&self.axes, node, &mut x);
        x
    }

    /// Stored value at time index `k` and spatial node `node`.
    pub fn value_at(&self, k: usize, node: usize) -> &[f64] {
        let base = (k * self.n_nodes() + node) * self.dim;
        &self.values[base..base + self.dim]
    }

    pub fn mean_at(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    /// `b(t, x)`; `t` must lie in `[0, T]`.
    pub fn drift_eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let tol = 1e-9 * (1.0 + self.horizon());
        if !(t >= -tol && t <= self.horizon() + tol) {
            return Err(Error::OutOfRange {
                what: "drift time",
                value: t,
                lo: 0.0,
                hi: self.horizon(),
            });
        }
        if x.len() != self.dim {
            return Err(Error::Precondition("query point dimension differs from field".into()));
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out);
        Ok(out)
    }

    /// `b(t, x)` with `t` clamped to `[0, T]`: multilinear in space, linear in
    /// time inside the box, `Φ(x - mean(t))` outside.
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let (k, w) = self.times.locate(t);
        let inside = x.iter().zip(&self.axes).all(|(v, a)| *v >= a.lo && *v <= a.hi);
        if !inside {
            let mut z = [0.0; 8];
            let mut zv;
            let z: &mut [f64] = if d <= 8 {
                &mut z[..d]
            } else {
                zv = vec![0.0; d];
                &mut zv
            };
            for i in 0..d {
                let m = (1.0 - w) * self.means[k * d + i] + w * self.means[(k + 1) * d + i];
                z[i] = x[i] - m;
            }
            radial_force_into(&self.profile, z, out);
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut cells = [(0usize, 0.0f64); 8];
        let mut cv;
        let cells: &mut [(usize, f64)] = if d <= 8 {
            &mut cells[..d]
        } else {
            cv = vec![(0, 0.0); d];
            &mut cv
        };
        for (c, (v, a)) in cells.iter_mut().zip(x.iter().zip(&self.axes)) {
            *c = a.locate(*v);
        }
        let n_nodes = self.n_nodes();
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut node = 0;
            for (axis, (i, u)) in cells.iter().enumerate() {
                let bit = (corner >> axis) & 1;
                weight *= if bit == 1 { *u } else { 1.0 - u };
                node = node * self.axes[axis].n + i + bit;
            }
            if weight == 0.0 {
                continue;
            }
            for (tk, tw) in [(k, 1.0 - w), (k + 1, w)] {
                if tw == 0.0 {
                    continue;
                }
                let base = (tk * n_nodes + node) * d;
                for i in 0..d {
                    out[i] += weight * tw * self.values[base + i];
                }
            }
        }
    }

    /// Grid sup of `‖b(t,x)‖ / (1 + ‖x‖^{2q})`.
    pub fn lambda_norm(&self) -> f64 {
        lambda_norm_of(self, |k, node| norm(self.value_at(k, node)))
    }

    /// `‖self - other‖` in the grid Λ-norm; the grids must coincide.
    pub fn lambda_distance(&self, other: &DriftField) -> Result<f64> {
        if self.times != other.times || self.axes != other.axes {
            return Err(Error::GridMismatch("drift fields live on different grids".into()));
        }
        Ok(lambda_norm_of(self, |k, node| {
            let (a, b) = (self.value_at(k, node), other.value_at(k, node));
            a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
        }))
    }

    /// Writes the text table: header lines, then rows
    /// `mean,<time_index>,,<m_1..m_d>` and `value,<time_index>,<node_index>,<b_1..b_d>`.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# drift-field v1")?;
        writeln!(w, "dim,{}", self.dim)?;
        writeln!(w, "q,{}", self.q)?;
        writeln!(w, "time,{},{},{}", self.times.lo, self.times.hi, self.times.n)?;
        for a in &self.axes {
            writeln!(w, "axis,{},{},{}", a.lo, a.hi, a.n)?;
        }
        let fmt = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        for k in 0..self.times.n {
            writeln!(w, "mean,{k},,{}", fmt(self.mean_at(k)))?;
        }
        for k in 0..self.times.n {
            for node in 0..self.n_nodes() {
                writeln!(w, "value,{k},{node},{}", fmt(self.value_at(k, node)))?;
            }
        }
        Ok(())
    }

    /// Reads a table written by [`DriftField::write_table`]; the tail fallback
    /// uses `model`'s interaction profile.
    pub fn read_table<R: BufRead>(r: R, model: &ModelSpec) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Table(format!("line {line}: {msg}"));
        let num = |s: &str, line: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(line, &format!("bad number {s:?}")))
        };
        let int = |s: &str, line: usize| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(line, &format!("bad integer {s:?}")))
        };
        let mut dim = None;
        let mut q = None;
        let mut times = None;
        let mut axes = Vec::new();
        let mut means: Vec<Option<Vec<f64>>> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut filled: Vec<bool> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            match f[0] {
                "dim" if f.len() == 2 => dim = Some(int(f[1], line_no)?),
                "q" if f.len() == 2 => q = Some(int(f[1], line_no)? as u32),
                "time" if f.len() == 4 => {
                    times = Some(Axis::new(
                        num(f[1], line_no)?,
                        num(f[2], line_no)?,
                        int(f[3], line_no)?,
                    )?)
                }
                "axis" if f.len() == 4 => axes.push(Axis::new(
                    num(f[1], line_no)?,
                    num(f[2], line_no)?,
                    int(f[3], line_no)?,
                )?),
                "mean" | "value" => {
                    let (Some(d), Some(t)) = (dim, times) else {
                        return Err(bad(line_no, "data row before the header"));
                    };
                    if axes.len() != d {
                        return Err(bad(line_no, "axis count differs from dim"));
                    }
                    if f.len() != 3 + d {
                        return Err(bad(line_no, "wrong number of columns"));
                    }
                    let n_nodes = Self::node_count(&axes);
                    if means.is_empty() {
                        means = vec![None; t.n];
                        values = vec![0.0; t.n * n_nodes * d];
                        filled = vec![false; t.n * n_nodes];
                    }
                    let k = int(f[1], line_no)?;
                    if k >= t.n {
                        return Err(bad(line_no, "time index out of range"));
                    }
                    let comps = f[3..].iter().map(|s| num(s, line_no)).collect::<Result<Vec<f64>>>()?;
                    if f[0] == "mean" {
                        means[k] = Some(comps);
                    } else {
                        let node = int(f[2], line_no)?;
                        if node >= n_nodes {
                            return Err(bad(line_no, "node index out of range"));
                        }
                        let slot = k * n_nodes + node;
                        values[slot * d..(slot + 1) * d].copy_from_slice(&comps);
                        filled[slot] = true;
                    }
                }
                other => return Err(bad(line_no, &format!("unexpected row kind {other:?}"))),
            }
        }
        let (Some(dim), Some(q), Some(times)) = (dim, q, times) else {
            return Err(Error::Table("missing header (dim, q, time)".into()));
        };
        if dim != model.dim() {
            return Err(Error::Table(format!(
                "table is {dim}-dimensional, model is {}",
                model.dim()
            )));
        }
        if filled.is_empty() || filled.iter().any(|f| !f) || means.iter().any(|m| m.is_none()) {
            return Err(Error::Table("table is missing mean or value rows".into()));
        }
        let field = Self {
            dim,
            times,
            axes,
            values,
            means: means.into_iter().flatten().flatten().collect(),
            q,
            profile: model.profile().clone(),
        };
        field.check_finite()?;
        Ok(field)
    }
}

fn lambda_norm_of<F: Fn(usize, usize) -> f64>(field: &DriftField, magnitude: F) -> f64 {
    let n_nodes = field.n_nodes();
    let weights: Vec<f64> = (0..n_nodes)
        .map(|node| 1.0 + norm(&field.node(node)).powi(2 * field.q as i32))
        .collect();
    let mut sup: f64 = 0.0;
    for k in 0..field.times.n {
        for (node, w) in weights.iter().enumerate() {
            sup = sup.max(magnitude(k, node) / w);
        }
    }
    sup
}

#[inline]
fn node_point(axes: &[Axis], mut node: usize, x: &mut [f64]) {
    for (i, a) in axes.iter().enumerate().rev() {
        x[i] = a.node(node % a.n);
        node /= a.n;
    }
}

#[inline]
fn radial_force_into(profile: &RadialProfile, z: &[f64], out: &mut [f64]) {
    let rho = norm(z);
    if rho == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let k = profile.ratio(rho);
    for (o, zi) in out.iter_mut().zip(z) {
        *o = k * zi;
    }
}

/// Ensemble positions at one time.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSnapshot {
    pub time: f64,
    dim: usize,
    data: Vec<f64>,
}

impl EnsembleSnapshot {
    pub fn new(time: f64, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % dim, 0);
        Self { time, dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.len() as f64;
        (0..self.dim)
            .map(|k| self.particles().map(|p| p[k]).sum::<f64>() / m)
            .collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        let mu = self.mean();
        let m = self.len() as f64;
        (0..self.dim)
            .map(|k| self.particles().map(|p| (p[k] - mu[k]).powi(2)).sum::<f64>() / (m - 1.0))
            .collect()
    }

    /// `(1/M) Σ_j Φ(x - X^j)`.
    pub fn empirical_drift(&self, model: &ModelSpec, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut z = vec![0.0; self.dim];
        let mut f = vec![0.0; self.dim];
        for p in self.particles() {
            for k in 0..self.dim {
                z[k] = x[k] - p[k];
            }
            model.interaction_force_into(&z, &mut f);
            for k in 0..self.dim {
                acc[k] += f[k];
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.len() as f64);
        acc
    }
}

/// Result of one application of Γ.
#[derive(Debug, Clone)]
pub struct GammaOutput {
    pub field: DriftField,
    /// Ensemble at every field time.
    pub snapshots: Vec<EnsembleSnapshot>,
}

/// `Γb(t,x) = (1/M) Σ_j Φ(x - X_t^j)` where `X^j` are `M` Euler–Maruyama
/// trajectories of `dX = [V(X) - b(t,X)]dt + √ε dW` from `x0`. Trajectory `j`
/// uses noise stream `(j, 0)` of `noise_seed`. The EM step is `dt` rounded
/// down so that field times fall on EM steps.
pub fn gamma_apply(
    model: &ModelSpec,
    b: &DriftField,
    x0: &[f64],
    epsilon: f64,
    m: usize,
    noise_seed: u64,
    dt: f64,
) -> Result<GammaOutput> {
    let d = model.dim();
    if !(epsilon >= 0.0) || m < 2 || x0.len() != d || b.dim() != d || !(dt > 0.0) {
        return Err(Error::Precondition(format!(
            "gamma_apply needs ε ≥ 0, M ≥ 2, dt > 0 and matching dimensions (ε = {epsilon}, M = {m}, dt = {dt})"
        )));
    }
    let times = b.times;
    let field_dt = times.step();
    let stride = (field_dt / dt - 1e-9).ceil().max(1.0) as usize;
    let h = field_dt / stride as f64;
    let sq = (epsilon * h).sqrt();
    let plan = NoisePlan::new(noise_seed, h);
    let n_t = times.n;

    let trajectories: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = plan.stream(j as u64, 0);
            let mut rec = Vec::with_capacity(n_t * d);
            let mut x = x0.to_vec();
            let mut v = vec![0.0; d];
            let mut bv = vec![0.0; d];
            rec.extend_from_slice(&x);
            for k in 0..n_t - 1 {
                for s in 0..stride {
                    let t = times.node(k) + s as f64 * h;
                    model.drift_into(&x, &mut v);
                    b.eval_into(t, &x, &mut bv);
                    for i in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x[i] += (v[i] - bv[i]) * h + sq * z;
                    }
                }
                if !x.iter().all(|c| c.is_finite()) || norm(&x) > crate::flow::DEFAULT_DIVERGENCE_BOUND {
                    return Err(Error::Divergence(format!(
                        "trajectory {j} (seed {noise_seed}) blew up before t = {}",
                        times.node(k + 1)
                    )));
                }
                rec.extend_from_slice(&x);
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let snapshots: Vec<EnsembleSnapshot> = (0..n_t)
        .map(|k| {
            let mut data = Vec::with_capacity(m * d);
            for tr in &trajectories {
                data.extend_from_slice(&tr[k * d..(k + 1) * d]);
            }
            EnsembleSnapshot::new(times.node(k), d, data)
        })
        .collect();
    drop(trajectories);

    let means: Vec<Vec<f64>> = snapshots.iter().map(|s| s.mean()).collect();
    let field = match model.profile().linear_slope() {
        Some(c) => DriftField::tabulate(
            model,
            times,
            b.axes.clone(),
            |t, x, out| {
                let k = nearest_index(times, t);
                for i in 0..d {
                    out[i] = c * (x[i] - means[k][i]);
                }
            },
            |t| means[nearest_index(times, t)].clone(),
        )?,
        None => DriftField::tabulate(
            model,
            times,
            b.axes.clone(),
            |t, x, out| {
                let s = &snapshots[nearest_index(times, t)];
                out.copy_from_slice(&s.empirical_drift(model, x));
            },
            |t| means[nearest_index(times, t)].clone(),
        )?,
    };
    Ok(GammaOutput { field, snapshots })
}

fn nearest_index(times: Axis, t: f64) -> usize {
    (((t - times.lo) / times.step()).round() as usize).min(times.n - 1)
}

/// One Picard step in the convergence log.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖b_i - b_{i-1}‖` in the grid Λ-norm.
    pub increment: f64,
    /// `increment_i / increment_{i-1}`.
    pub ratio: Option<f64>,
    /// `‖b_i‖` in the grid Λ-norm.
    pub lambda_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardOptions {
    pub epsilon: f64,
    pub horizon: f64,
    pub grid: GridSpec,
    pub ensemble_size: usize,
    pub noise_seed: u64,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Draw fresh noise every iteration instead of common random numbers.
    pub fresh_noise: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            horizon: 1.0,
            grid: GridSpec::default(),
            ensemble_size: 10_000,
            noise_seed: 1,
            dt: 1e-3,
            tol: 1e-4,
            max_iter: 50,
            fresh_noise: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfConsistentDrift {
    pub field: DriftField,
    pub log: Vec<IterationRecord>,
    /// Ensemble of the final Γ application.
    pub snapshots: Vec<EnsembleSnapshot>,
}

/// Spatial box around the flow from `x0` inflated by `max(3√(εT), 1)`.
pub fn default_region(flow: &FlowCache, epsilon: f64, horizon: f64) -> BoxRegion {
    let path = flow.path();
    let d = path.dim();
    let pad = (3.0 * (epsilon * horizon).sqrt()).max(1.0);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in path.states() {
        for i in 0..d {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    BoxRegion {
        lo: lo.iter().map(|v| v - pad).collect(),
        hi: hi.iter().map(|v| v + pad).collect(),
    }
}

/// `b_0(t,x) = Φ(x - ψ_t(x0))` on the requested grid.
pub fn initial_drift(model: &ModelSpec, flow: &FlowCache, times: Axis, axes: Vec<Axis>) -> Result<DriftField> {
    let d = model.dim();
    DriftField::tabulate(
        model,
        times,
        axes,
        |t, x, out| {
            let mut psi = vec![0.0; d];
            flow.at_into(t.min(flow.horizon()), &mut psi)
                .expect("flow covers the grid");
            let z: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a - b).collect();
            model.interaction_force_into(&z, out);
        },
        |t| flow.at(t.min(flow.horizon())).expect("flow covers the grid"),
    )
}

/// Picard iteration `b_{i+1} = Γ b_i` from `b_0 = Φ(x - ψ_t(x0))`, stopping
/// when the Λ-norm increment drops to `tol`.
pub fn solve_self_consistent_drift(model: &ModelSpec, x0: &[f64], opts: &PicardOptions) -> Result<SelfConsistentDrift> {
    if !(opts.tol > 0.0) || !(opts.horizon > 0.0) || opts.grid.n_times < 2 || opts.grid.nodes_per_axis < 2 {
        return Err(Error::Precondition(
            "Picard iteration needs tol > 0, T > 0 and at least two grid points per axis".into(),
        ));
    }
    if x0.len() != model.dim() {
        return Err(Error::Precondition("x0 dimension differs from model".into()));
    }
    let flow_dt = (opts.horizon / (opts.grid.n_times - 1) as f64 / 10.0).min(1e-2);
    let flow = FlowCache::new(model, x0, opts.horizon, flow_dt)?;
    let region = opts
        .grid
        .region
        .clone()
        .unwrap_or_else(|| default_region(&flow, opts.epsilon, opts.horizon));
    if region.dim() != model.dim() {
        return Err(Error::Precondition("grid box dimension differs from model".into()));
    }
    let times = Axis::new(0.0, opts.horizon, opts.grid.n_times)?;
    let axes = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(a, b)| Axis::new(*a, *b, opts.grid.nodes_per_axis))
        .collect::<Result<Vec<_>>>()?;
    let mut b = initial_drift(model, &flow, times, axes)?;
    let mut log: Vec<IterationRecord> = Vec::new();
    for it in 1..=opts.max_iter {
        let seed = if opts.fresh_noise {
            opts.noise_seed.wrapping_add(it as u64)
        } else {
            opts.noise_seed
        };
        let out = gamma_apply(model, &b, x0, opts.epsilon, opts.ensemble_size, seed, opts.dt)?;
        let increment = out.field.lambda_distance(&b)?;
        let ratio = log
            .last()
            .and_then(|prev| (prev.increment > 0.0).then(|| increment / prev.increment));
        log.push(IterationRecord {
            iteration: it,
            increment,
            ratio,
            lambda_norm: out.field.lambda_norm(),
        });
        b = out.field;
        if increment <= opts.tol {
            return Ok(SelfConsistentDrift {
                field: b,
                log,
                snapshots: out.snapshots,
            });
        }
    }
    Err(Error::DriftNoConvergence { log })
}

/// `lim_{ε→0} b(t,x) = Φ(x - ψ_t(x0))`.
pub fn limit_drift(model: &ModelSpec, flow: &FlowCache, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let psi = flow.at(t)?;
    let z: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a - b).collect();
    Ok(model.interaction_force(&z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> ModelSpec {
        ModelSpec::gradient(1, "0.5*x1^2", "u", 1).unwrap()
    }

    fn linear_field(model: &ModelSpec) -> DriftField {
        DriftField::tabulate(
            model,
            Axis::new(0.0, 2.0, 21).unwrap(),
            vec![Axis::new(-3.0, 3.0, 61).unwrap()],
            |t, x, out| out[0] = x[0] - (-t).exp(),
            |t| vec![(-t).exp()],
        )
        .unwrap()
    }

    #[test]
    fn nodes_and_fallback_are_exact() {
        let m = ou();
        let f = linear_field(&m);
        let node = f.node(45);
        let v = f.drift_eval(f.times().node(7), &node).unwrap()[0];
        assert_eq!(v, f.value_at(7, 45)[0]);
        let far = f.drift_eval(0.25, &[10.0]).unwrap()[0];
        let mean = 0.5 * ((-0.2f64).exp() + (-0.3f64).exp());
        assert!((far - (10.0 - mean)).abs() < 1e-12);
        assert!(f.drift_eval(3.0, &[0.0]).is_err());
    }

    #[test]
    fn lambda_norm_of_identity_field() {
        let m = ou();
        let f = DriftField::tabulate(
            &m,
            Axis::new(0.0, 1.0, 3).unwrap(),
            vec![Axis::new(-3.0, 3.0, 61).unwrap()],
            |_, x, out| out[0] = x[0],
            |_| vec![0.0],
        )
        .unwrap();
        assert!((f.lambda_norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn table_round_trip() {
        let m = ou();
        let f = linear_field(&m);
        let mut buf = Vec::new();
        f.write_table(&mut buf).unwrap();
        let g = DriftField::read_table(buf.as_slice(), &m).unwrap();
        assert_eq!(f.lambda_distance(&g).unwrap(), 0.0);
        assert_eq!(g.mean_at(3), f.mean_at(3));
    }

    #[test]
    fn limit_drift_value() {
        let m = ModelSpec::gradient(1, "0.5*x1^2", "2.5*u", 1).unwrap();
        let flow = FlowCache::new(&m, &[1.0], 2.0, 1e-3).unwrap();
        let v = limit_drift(&m, &flow, 1.0, &[0.0]).unwrap()[0];
        assert!((v + 2.5 * (-1.0f64).exp()).abs() < 1e-9);
    }
}
