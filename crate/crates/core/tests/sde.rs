use std::sync::Arc;

use selfstab_core::drift::{Axis, DriftField};
use selfstab_core::flow::{integrate_flow, integrate_relaxed_flow, PathSample};
use selfstab_core::linalg::dist;
use selfstab_core::model::{BoxRegion, DissipativityConstants, ModelSpec};
use selfstab_core::scenarios;
use selfstab_core::sde::*;
use selfstab_core::Error;

fn ou() -> ModelSpec {
    scenarios::ornstein_uhlenbeck().unwrap()
}

fn final_gap(model: &ModelSpec, mode: &SimulationMode, x0: &[f64], reference: &PathSample, dt: f64) -> f64 {
    let paths = simulate(model, mode, x0, 0.0, reference.t_end(), &NoisePlan::new(1, dt), 0).unwrap();
    paths
        .iter()
        .map(|p| dist(p.final_state(), reference.final_state()))
        .fold(0.0, f64::max)
}

#[test]
fn noiseless_modes_follow_their_flows() {
    let s = scenarios::ellipse().unwrap();
    let x0 = [0.6, -1.1];
    let flow = integrate_flow(&s.model, &x0, 1.0, 1e-4).unwrap();
    let relaxed = integrate_relaxed_flow(&s.model, &[0.2, 0.1], &x0, 1.0, 1e-4).unwrap();
    let limiting = SimulationMode::Limiting {
        x_stable: vec![0.2, 0.1],
    };
    let cases = [
        (SimulationMode::Classical, &flow),
        (SimulationMode::Particle { n: 3 }, &flow),
        (limiting, &relaxed),
    ];
    for (mode, reference) in cases {
        let coarse = final_gap(&s.model, &mode, &x0, reference, 2e-3);
        let fine = final_gap(&s.model, &mode, &x0, reference, 1e-3);
        assert!(coarse < 0.05, "{}: {coarse}", mode.name());
        let ratio = coarse / fine;
        assert!((1.6..2.4).contains(&ratio), "{}: ratio {ratio}", mode.name());
    }
}

#[test]
fn noiseless_particles_stay_together() {
    let s = scenarios::ellipse().unwrap();
    let paths = simulate(
        &s.model,
        &SimulationMode::Particle { n: 4 },
        &[0.3, 0.3],
        0.0,
        0.5,
        &NoisePlan::new(3, 1e-3),
        0,
    )
    .unwrap();
    assert_eq!(paths.len(), 4);
    for p in &paths[1..] {
        assert_eq!(p.as_flat(), paths[0].as_flat());
    }
}

#[test]
fn bad_modes_are_rejected() {
    let m = ou();
    let plan = NoisePlan::new(0, 1e-2);
    let bad = simulate(&m, &SimulationMode::Particle { n: 0 }, &[0.0], 0.1, 1.0, &plan, 0);
    assert!(matches!(bad, Err(Error::Precondition(_))));
    let bad = simulate(
        &m,
        &SimulationMode::Limiting {
            x_stable: vec![0.0, 0.0],
        },
        &[0.0],
        0.1,
        1.0,
        &plan,
        0,
    );
    assert!(matches!(bad, Err(Error::Precondition(_))));
    let bad = simulate(&m, &SimulationMode::Classical, &[0.0], -0.1, 1.0, &plan, 0);
    assert!(bad.is_err());
}

#[test]
fn same_seed_same_paths() {
    let m = ou();
    let mode = SimulationMode::Particle { n: 5 };
    let a = simulate(&m, &mode, &[1.0], 0.3, 1.0, &NoisePlan::new(42, 1e-2), 7).unwrap();
    let b = simulate(&m, &mode, &[1.0], 0.3, 1.0, &NoisePlan::new(42, 1e-2), 7).unwrap();
    let c = simulate(&m, &mode, &[1.0], 0.3, 1.0, &NoisePlan::new(43, 1e-2), 7).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.as_flat(), q.as_flat());
    }
    assert_ne!(a[0].as_flat(), c[0].as_flat());
}

#[test]
fn empirical_moment_edge_cases() {
    let reference = PathSample::from_states(0.0, 0.1, &[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
    let curve = empirical_moment(&[reference.clone(), reference.clone()], &reference, 2).unwrap();
    assert!(curve.mean.iter().chain(&curve.stderr).all(|v| *v == 0.0));
    assert_eq!(curve.times, vec![0.0, 0.1, 0.2]);

    let shifted = PathSample::from_states(0.0, 0.1, &[vec![3.0, 5.0], vec![4.0, 5.0], vec![5.0, 4.0]]).unwrap();
    let curve = empirical_moment(&[shifted], &reference, 4).unwrap();
    assert!(curve.mean.iter().all(|v| (v - 625.0).abs() < 1e-9));

    assert!(empirical_moment(std::slice::from_ref(&reference), &reference, 3).is_err());
    assert!(empirical_moment(&[], &reference, 2).is_err());
    let other = PathSample::from_states(0.0, 0.2, &[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
    assert!(matches!(
        empirical_moment(&[other], &reference, 2),
        Err(Error::GridMismatch(_))
    ));
}

fn constants(k_upper: f64, k_convex: f64) -> DissipativityConstants {
    DissipativityConstants {
        k_upper,
        k_upper_raw: k_upper,
        k_convex,
        eta: k_convex / 4.0,
        r0: 1.0,
        r1: 2.0,
        sup_boundary_drift: 1.0,
        sampling_box: BoxRegion::symmetric(4.0, 1),
        n_samples: 10,
    }
}

fn curve(times: &[f64], mean: &[f64]) -> MomentCurve {
    MomentCurve {
        order: 2,
        times: times.to_vec(),
        mean: mean.to_vec(),
        stderr: vec![0.0; times.len()],
        n_paths: 100,
    }
}

#[test]
fn moment_bound_examples() {
    let eps = 0.2;
    // bound ε t d at K = 0
    let c = constants(0.0, 1.0);
    let ok = moment_bound_check(&c, &curve(&[0.0, 0.5, 1.0], &[0.0, 0.09, 0.1]), eps, 1, false, 0.0).unwrap();
    assert!(ok.passed());
    assert!((ok.worst_curve_ratio - 0.9).abs() < 1e-12);
    assert!(ok.uniform_bound.is_none());

    let bad = moment_bound_check(&c, &curve(&[0.0, 0.5], &[0.0, 0.2]), eps, 1, false, 0.5).unwrap();
    assert_eq!(bad.violations.len(), 1);
    assert_eq!(bad.violations[0].bound_kind, "curve");

    // uniform bound ε d / (2 K) = 0.1 caps the late-time curve
    let uni = moment_bound_check(&c, &curve(&[2.0, 4.0], &[0.105, 0.2]), eps, 1, true, 0.0).unwrap();
    assert_eq!(uni.uniform_bound, Some(0.1));
    assert_eq!(uni.violations.len(), 2);
    assert!(uni.violations.iter().all(|v| v.bound_kind == "uniform"));
    let lax = moment_bound_check(&c, &curve(&[2.0, 4.0], &[0.105, 0.2]), eps, 1, true, 1.0).unwrap();
    assert!(lax.passed());

    let mut fourth = curve(&[0.0], &[0.0]);
    fourth.order = 4;
    assert!(moment_bound_check(&c, &fourth, eps, 1, false, 0.0).is_err());
}

fn ou_field(horizon: f64) -> Arc<DriftField> {
    let m = ou();
    Arc::new(
        DriftField::tabulate(
            &m,
            Axis::new(0.0, horizon, 201).unwrap(),
            vec![Axis::new(-3.0, 4.0, 141).unwrap()],
            |t, x, out| out[0] = x[0] - (-t).exp(),
            |t| vec![(-t).exp()],
        )
        .unwrap(),
    )
}

#[test]
fn frozen_ou_reaches_its_variance_plateau() {
    let m = ou();
    let eps = 0.1;
    let horizon = 2.0;
    let mode = SimulationMode::Frozen {
        field: ou_field(horizon),
        offset: 0.0,
    };
    let dt = 1e-3;
    let paths = simulate_ensemble(&m, &mode, &[1.0], eps, horizon, &NoisePlan::new(5, dt), 4000, 100).unwrap();
    let mean_path = PathSample::from_states(
        0.0,
        paths[0].dt,
        &(0..paths[0].len())
            .map(|k| vec![(-paths[0].time(k)).exp()])
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let c = empirical_moment(&paths, &mean_path, 2).unwrap();
    for k in 1..c.times.len() {
        let t = c.times[k];
        // the error of Euler at rate 2 is O(dt), well below the sampling noise
        let exact = eps / 4.0 * (1.0 - (-4.0 * t).exp());
        assert!(
            (c.mean[k] - exact).abs() <= 4.0 * c.stderr[k] + 5e-3 * exact,
            "t = {t}: {} vs {exact}",
            c.mean[k]
        );
    }
}

#[test]
fn particles_and_frozen_ensemble_agree() {
    let m = ou();
    let eps = 0.2;
    let horizon = 1.0;
    let n = 2000;
    let dt = 2e-3;
    let particles = simulate_recorded(
        &m,
        &SimulationMode::Particle { n },
        &[1.0],
        eps,
        horizon,
        &NoisePlan::new(9, dt),
        0,
        500,
    )
    .unwrap();
    let mode = SimulationMode::Frozen {
        field: ou_field(horizon),
        offset: 0.0,
    };
    let frozen = simulate_ensemble(&m, &mode, &[1.0], eps, horizon, &NoisePlan::new(10, dt), n, 500).unwrap();
    let stats = |paths: &[PathSample]| {
        let v: Vec<f64> = paths.iter().map(|p| p.final_state()[0]).collect();
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64;
        (mu, var)
    };
    let (mp, vp) = stats(&particles);
    let (mf, vf) = stats(&frozen);
    let var = eps / 4.0 * (1.0 - (-4.0f64).exp());
    let se = (2.0 * var / n as f64).sqrt();
    assert!((mp - mf).abs() < 4.0 * se, "{mp} vs {mf}");
    assert!((mp - (-1.0f64).exp()).abs() < 4.0 * (var / n as f64).sqrt() + 1e-3);
    assert!((vp / vf - 1.0).abs() < 0.15, "{vp} vs {vf}");
}
