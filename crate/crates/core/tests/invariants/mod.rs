//! Property suites shared by the `properties` target and the acceptance gate.
//! Each suite returns `Err` with the minimal failing input.

#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rayon::ThreadPoolBuilder;

use selfstab_core::drift::{gamma_apply, solve_self_consistent_drift, DriftField, GridSpec, PicardOptions};
use selfstab_core::exitlab::run_exit_trials;
use selfstab_core::expr::parse;
use selfstab_core::flow::{integrate_relaxed_flow, FlowCache};
use selfstab_core::ldp::{action, action_with_gradient, minimize_cost, ActionSpec, DiscretePath, OptimizerOptions};
use selfstab_core::model::ModelSpec;
use selfstab_core::scenarios;
use selfstab_core::sde::{simulate, simulate_ensemble, NoisePlan, SimulationMode};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn finish<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const PROFILES: [&str; 4] = ["4*u", "2.5*u", "u + u^3", "u^2 + 0.5*u"];

fn profile_model(dim: usize, profile: usize) -> ModelSpec {
    let potential = (1..=dim).map(|i| format!("0.5*x{i}^2")).collect::<Vec<_>>().join(" + ");
    ModelSpec::gradient(dim, &potential, PROFILES[profile], 3).unwrap()
}

fn point(dim: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, dim)
}

/// Antisymmetry, alignment, monotonicity of `x‖x‖ⁿ` against `Φ(x - y)`, and
/// `Φ = ∇A`.
pub fn interaction_suite() -> Result<(), String> {
    let strat =
        (1usize..=3, 0usize..PROFILES.len()).prop_flat_map(|(d, p)| (Just(d), Just(p), point(d, 3.0), point(d, 3.0)));
    finish(runner(1000).run(&strat, |(d, p, x, y)| {
        let m = profile_model(d, p);
        let phi = m.interaction_force(&x);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let phi_neg = m.interaction_force(&neg);
        let sum: Vec<f64> = phi.iter().zip(&phi_neg).map(|(a, b)| a + b).collect();
        prop_assert!(norm(&sum) <= 1e-12 * (1.0 + norm(&phi)), "antisymmetry at {x:?}");

        let r = norm(&x);
        let align = dot(&x, &phi);
        prop_assert!(align >= 0.0);
        prop_assert!((align - r * m.profile().value(r)).abs() <= 1e-12 * (1.0 + align.abs()));

        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let f = m.interaction_force(&z);
        for n in 0..=2 {
            let (nx, ny) = (norm(&x).powi(n), norm(&y).powi(n));
            let w: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * nx - b * ny).collect();
            prop_assert!(dot(&w, &f) >= -1e-12, "monotonicity n = {n} at {x:?}, {y:?}");
        }

        let h = 1e-5;
        let mut fd = vec![0.0; d];
        for i in 0..d {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[i] += h;
            b[i] -= h;
            fd[i] = (m.interaction_potential(&a) - m.interaction_potential(&b)) / (2.0 * h);
        }
        let diff: Vec<f64> = fd.iter().zip(&f).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-8 * (1.0 + norm(&f)), "∇A vs Φ at {z:?}: {diff:?}");
        Ok(())
    }))
}

fn action_cases() -> Vec<(ModelSpec, Vec<f64>)> {
    let e = scenarios::ellipse().unwrap();
    let a = scenarios::asymmetric_well().unwrap();
    vec![(e.model, e.x_stable), (a.model, a.x_stable)]
}

fn random_path(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, usize, Vec<f64>)> {
    (8usize..40, 0.2f64..3.0)
        .prop_flat_map(move |(n, t)| (point(d, 1.0), point(d, 1.0), Just(t), Just(n), point((n - 1) * d, 1.2)))
}

/// Action is nonnegative, vanishes on constant equilibrium paths, and relaxed
/// flows have residuals of order `Δt²`.
pub fn action_suite() -> Result<(), String> {
    let cases = action_cases();
    let strat = (0usize..2, any::<bool>())
        .prop_flat_map(|(c, cl)| (Just(c), Just(cl), random_path(if c == 0 { 2 } else { 1 })));
    finish(runner(300).run(&strat, |(c, classical, (y, z, t, n, interior))| {
        let (m, xs) = &cases[c];
        let spec = if classical {
            ActionSpec::classical(m)
        } else {
            ActionSpec::limiting(m, xs).unwrap()
        };
        let p = DiscretePath::new(y, z, t, n, interior).unwrap();
        prop_assert!(action(&spec, &p) >= 0.0);
        let still = DiscretePath::straight_line(xs, xs, t, n).unwrap();
        prop_assert!(action(&spec, &still) == 0.0);
        Ok(())
    }))?;

    let strat = (0usize..2).prop_flat_map(|c| (Just(c), point(if c == 0 { 2 } else { 1 }, 0.9), 0.5f64..2.0));
    finish(runner(40).run(&strat, |(c, y0, t)| {
        let (m, xs) = &cases[c];
        let spec = ActionSpec::limiting(m, xs).unwrap();
        let rms = |n: usize| {
            let fine = 16;
            let flow = integrate_relaxed_flow(m, xs, &y0, t, t / (n * fine) as f64).unwrap();
            let states: Vec<Vec<f64>> = (0..=n).map(|k| flow.state(k * fine).to_vec()).collect();
            let interior = states[1..n].concat();
            let p = DiscretePath::new(states[0].clone(), states[n].clone(), t, n, interior).unwrap();
            (2.0 * action(&spec, &p) / t).sqrt()
        };
        let (r1, r2) = (rms(20), rms(40));
        prop_assert!(r2 <= r1 / 3.0 || r1 < 1e-12, "halving Δt: {r1} -> {r2}");
        Ok(())
    }))
}

/// Exact action gradient against central differences.
pub fn gradient_suite() -> Result<(), String> {
    let cases = action_cases();
    let strat = (0usize..2, any::<bool>())
        .prop_flat_map(|(c, cl)| (Just(c), Just(cl), random_path(if c == 0 { 2 } else { 1 })));
    finish(runner(100).run(&strat, |(c, classical, (y, z, t, n, interior))| {
        let (m, xs) = &cases[c];
        let spec = if classical {
            ActionSpec::classical(m)
        } else {
            ActionSpec::limiting(m, xs).unwrap()
        };
        let mut p = DiscretePath::new(y, z, t, n, interior.clone()).unwrap();
        let (_, g) = action_with_gradient(&spec, &p);
        let h = 1e-6;
        let mut err: f64 = 0.0;
        let mut w = interior.clone();
        for j in 0..interior.len() {
            w[j] = interior[j] + h;
            p.set_interior(&w);
            let up = action(&spec, &p);
            w[j] = interior[j] - h;
            p.set_interior(&w);
            let down = action(&spec, &p);
            w[j] = interior[j];
            err = err.max(((up - down) / (2.0 * h) - g[j]).abs());
        }
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        prop_assert!(err <= 1e-6 * scale, "max error {err}, scale {scale}");
        Ok(())
    }))
}

fn expression(dim: usize) -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (1..=dim).prop_map(|i| format!("x{i}")),
        (-2.0f64..2.0).prop_map(|c| format!("({c:.3})")),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} / (2 + sin({b})))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("log(2 + cos({a}))")),
            inner.clone().prop_map(|a| format!("({a})^3")),
            inner.prop_map(|a| format!("smoothstep(-3, 3, {a})")),
        ]
    })
}

/// Forward-mode gradients against central differences with step 1e-5.
pub fn ad_suite() -> Result<(), String> {
    let strat = (1usize..=3).prop_flat_map(|d| (Just(d), expression(d), point(d, 1.0)));
    finish(runner(200).run(&strat, |(d, src, x)| {
        let e = parse(&src, d).unwrap();
        let g = e.eval_gradient(&x).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (e.eval(&a).unwrap() - e.eval(&b).unwrap()) / (2.0 * h);
            let ad = g.partials[i];
            // second-order truncation plus rounding of the difference quotient
            let slack = 1e-6 * ad.abs().max(fd.abs()).max(1.0) + 1e-9 * g.value.abs();
            prop_assert!((ad - fd).abs() <= slack, "{src} at {x:?}: ad {ad}, fd {fd}");
        }
        Ok(())
    }))
}

fn converged_field(
    model: &ModelSpec,
    x0: &[f64],
    eps: f64,
    m: usize,
    region: Option<selfstab_core::model::BoxRegion>,
) -> DriftField {
    let opts = PicardOptions {
        epsilon: eps,
        horizon: 1.0,
        grid: GridSpec {
            n_times: 21,
            nodes_per_axis: if model.dim() == 1 { 41 } else { 17 },
            region,
        },
        ensemble_size: m,
        dt: 2e-3,
        ..PicardOptions::default()
    };
    solve_self_consistent_drift(model, x0, &opts).unwrap().field
}

/// `⟨x - y, b(t,x) - b(t,y)⟩ ≥ -10/√M` on random node pairs at every grid
/// time of converged fields.
pub fn dissipativity_suite() -> Result<(), String> {
    let m = 2000;
    let slack = 10.0 / (m as f64).sqrt();
    let ou = scenarios::ornstein_uhlenbeck().unwrap();
    let well = scenarios::asymmetric_well().unwrap();
    let ell = scenarios::ellipse().unwrap();
    let fields = [
        converged_field(&ou, &[1.0], 0.1, m, None),
        converged_field(&well.model, &[0.5], 0.2, m, None),
        converged_field(&ell.model, &[0.6, -0.8], 0.1, m, None),
    ];
    let strat = (0usize..3).prop_flat_map(|i| (Just(i), any::<prop::sample::Index>(), any::<prop::sample::Index>()));
    finish(runner(1000).run(&strat, |(i, a, b)| {
        let f = &fields[i];
        let (na, nb) = (a.index(f.n_nodes()), b.index(f.n_nodes()));
        let (x, y) = (f.node(na), f.node(nb));
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        for k in 0..f.times().n {
            let db: Vec<f64> = f
                .value_at(k, na)
                .iter()
                .zip(f.value_at(k, nb))
                .map(|(p, q)| p - q)
                .collect();
            prop_assert!(dot(&dxy, &db) >= -slack, "field {i}, time index {k}, nodes {na}, {nb}");
        }
        Ok(())
    }))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

/// Same inputs give bitwise-identical outputs, whatever the worker count.
pub fn determinism_suite() -> Result<(), String> {
    let e = scenarios::ellipse().unwrap();
    let well = scenarios::asymmetric_well().unwrap();
    let ou = scenarios::ornstein_uhlenbeck().unwrap();
    let field = Arc::new(converged_field(&ou, &[1.0], 0.1, 500, None));
    let flow = Arc::new(FlowCache::new(&e.model, &[0.5, 0.5], 2.0, 1e-2).unwrap());
    let modes_2d = vec![
        SimulationMode::Classical,
        SimulationMode::Particle { n: 6 },
        SimulationMode::Limiting {
            x_stable: vec![0.0, 0.0],
        },
        SimulationMode::Tracking { flow, offset: 0.5 },
    ];
    finish(runner(12).run(&(any::<u64>(), 0u64..1000), |(seed, trial)| {
        let noise = NoisePlan::new(seed, 1e-2);
        for mode in &modes_2d {
            let a = simulate(&e.model, mode, &[0.5, 0.5], 0.3, 1.0, &noise, trial).unwrap();
            let b = simulate(&e.model, mode, &[0.5, 0.5], 0.3, 1.0, &noise, trial).unwrap();
            prop_assert!(a == b, "{} mode", mode.name());
        }
        let frozen = SimulationMode::Frozen {
            field: field.clone(),
            offset: 0.25,
        };
        let a = simulate(&ou, &frozen, &[0.8], 0.1, 0.5, &noise, trial).unwrap();
        let b = simulate(&ou, &frozen, &[0.8], 0.1, 0.5, &noise, trial).unwrap();
        prop_assert!(a == b, "frozen mode");

        let ens = |t| {
            in_pool(t, || {
                simulate_ensemble(&e.model, &modes_2d[2], &[0.1, 0.2], 0.3, 0.5, &noise, 8, 5).unwrap()
            })
        };
        prop_assert!(ens(1) == ens(3), "ensemble depends on worker count");

        let exits = |t| {
            in_pool(t, || {
                run_exit_trials(
                    &well.model,
                    &SimulationMode::Classical,
                    &well.domain,
                    &[0.0],
                    1.0,
                    1e-2,
                    16,
                    50.0,
                    &noise,
                )
                .unwrap()
                .records
            })
        };
        let (r1, r3) = (exits(1), exits(3));
        prop_assert!(
            r1.iter()
                .zip(&r3)
                .all(|(a, b)| a.exit_time.to_bits() == b.exit_time.to_bits()
                    && a.exit_point == b.exit_point
                    && a.censored == b.censored
                    && a.trial == b.trial
                    && a.seed == b.seed),
            "exit records depend on worker count"
        );

        let gamma = |t| {
            in_pool(t, || {
                let out = gamma_apply(&ou, &field, &[1.0], 0.1, 300, seed, 1e-2).unwrap();
                out.field.lambda_norm().to_bits()
            })
        };
        prop_assert_eq!(gamma(1), gamma(3));

        let spec = ActionSpec::limiting(&well.model, &well.x_stable).unwrap();
        let opts = OptimizerOptions {
            seed,
            max_iter: 200,
            ..OptimizerOptions::default()
        };
        let c1 =
            minimize_cost(&spec, &[0.0], &[0.8], 1.0, 16, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let c2 =
            minimize_cost(&spec, &[0.0], &[0.8], 1.0, 16, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(c1.cost.to_bits() == c2.cost.to_bits() && c1.path == c2.path);
        Ok(())
    }))
}

pub type Suite = fn() -> Result<(), String>;

/// Every suite with its name.
pub fn all() -> Vec<(&'static str, Suite)> {
    vec![
        ("interaction", interaction_suite),
        ("action", action_suite),
        ("action gradient", gradient_suite),
        ("automatic differentiation", ad_suite),
        ("drift dissipativity", dissipativity_suite),
        ("seed determinism", determinism_suite),
    ]
}
