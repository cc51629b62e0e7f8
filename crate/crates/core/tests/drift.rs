use selfstab_core::drift::*;
use selfstab_core::flow::FlowCache;
use selfstab_core::model::{BoxRegion, ModelSpec};
use selfstab_core::scenarios;
use selfstab_core::sde::{simulate_recorded, NoisePlan, SimulationMode};
use selfstab_core::Error;

fn ou() -> ModelSpec {
    scenarios::ornstein_uhlenbeck().unwrap()
}

fn exact_ou_field(model: &ModelSpec, horizon: f64, lo: f64, hi: f64, n: usize) -> DriftField {
    DriftField::tabulate(
        model,
        Axis::new(0.0, horizon, 21).unwrap(),
        vec![Axis::new(lo, hi, n).unwrap()],
        |t, x, out| out[0] = x[0] - (-t).exp(),
        |t| vec![(-t).exp()],
    )
    .unwrap()
}

#[test]
fn evaluation_on_nodes_off_grid_and_out_of_range() {
    let m = ou();
    let f = exact_ou_field(&m, 1.0, -2.0, 3.0, 51);
    let node = f.node(17);
    let k = 7;
    let t = f.times().node(k);
    assert_eq!(f.drift_eval(t, &node).unwrap(), f.value_at(k, 17).to_vec());
    let far = f.drift_eval(0.37, &[25.0]).unwrap()[0];
    let mean = 0.6 * (-0.35f64).exp() + 0.4 * (-0.4f64).exp();
    assert!((far - (25.0 - mean)).abs() < 1e-12);
    assert!(matches!(f.drift_eval(2.0, &[0.0]), Err(Error::OutOfRange { .. })));
}

#[test]
fn lambda_norms() {
    let m = ou();
    let times = Axis::new(0.0, 1.0, 3).unwrap();
    let axis = Axis::new(-3.0, 3.0, 61).unwrap();
    let tab = |f: fn(&[f64]) -> f64| {
        DriftField::tabulate(&m, times, vec![axis], move |_, x, out| out[0] = f(x), |_| vec![0.0]).unwrap()
    };
    assert_eq!(tab(|_| 0.0).lambda_norm(), 0.0);
    assert!((tab(|_| -1.75).lambda_norm() - 1.75).abs() < 1e-15);
    // |x| / (1 + x²) peaks at x = ±1
    assert!((tab(|x| x[0]).lambda_norm() - 0.5).abs() < 1e-15);
}

#[test]
fn gamma_at_zero_noise_reproduces_the_limit_drift() {
    let s = scenarios::ellipse().unwrap();
    let x0 = [0.7, -1.2];
    let flow = FlowCache::new(&s.model, &x0, 1.0, 1e-3).unwrap();
    let axes = vec![Axis::new(-1.0, 2.0, 13).unwrap(), Axis::new(-3.0, 1.0, 13).unwrap()];
    let b0 = initial_drift(&s.model, &flow, Axis::new(0.0, 1.0, 201).unwrap(), axes).unwrap();
    for dt in [2e-3, 1e-3, 5e-4] {
        let out = gamma_apply(&s.model, &b0, &x0, 0.0, 2, 3, dt).unwrap();
        let gap = out.field.lambda_distance(&b0).unwrap();
        assert!(gap < 6.0 * dt, "dt = {dt}: {gap}");
        for snap in &out.snapshots {
            assert_eq!(snap.particle(0), snap.particle(1));
        }
        // the field is Φ of the distance to the single trajectory
        let k = 5;
        let snap = &out.snapshots[k];
        let node = out.field.node(40);
        let z: Vec<f64> = node.iter().zip(snap.particle(0)).map(|(a, b)| a - b).collect();
        let want = s.model.interaction_force(&z);
        for (a, b) in out.field.value_at(k, 40).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gamma_of_the_exact_ou_drift() {
    let m = ou();
    let flow = FlowCache::new(&m, &[1.0], 2.0, 1e-3).unwrap();
    let b = initial_drift(
        &m,
        &flow,
        Axis::new(0.0, 2.0, 41).unwrap(),
        vec![Axis::new(-2.0, 3.0, 41).unwrap()],
    )
    .unwrap();
    let big_m = 4000;
    let out = gamma_apply(&m, &b, &[1.0], 0.1, big_m, 11, 1e-3).unwrap();
    let times = out.field.times();
    let mut err: f64 = 0.0;
    for k in 0..times.n {
        for node in 0..out.field.n_nodes() {
            let x = out.field.node(node)[0];
            err = err.max((out.field.value_at(k, node)[0] - (x - (-times.node(k)).exp())).abs());
        }
    }
    assert!(err <= 5.0 / (big_m as f64).sqrt(), "max error {err}");
}

fn small_opts(eps: f64) -> PicardOptions {
    PicardOptions {
        epsilon: eps,
        horizon: 1.0,
        grid: GridSpec {
            n_times: 21,
            nodes_per_axis: 31,
            region: None,
        },
        ensemble_size: 2000,
        dt: 1e-3,
        tol: 1e-3,
        ..PicardOptions::default()
    }
}

#[test]
fn zero_noise_converges_immediately() {
    let m = ou();
    let sol = solve_self_consistent_drift(&m, &[1.0], &small_opts(0.0)).unwrap();
    assert!(sol.log.len() <= 2, "{:?}", sol.log);
    let flow = FlowCache::new(&m, &[1.0], 1.0, 1e-3).unwrap();
    let f = &sol.field;
    for k in 0..f.times().n {
        let t = f.times().node(k);
        for node in 0..f.n_nodes() {
            let x = f.node(node);
            let want = limit_drift(&m, &flow, t, &x).unwrap()[0];
            assert!((f.value_at(k, node)[0] - want).abs() < 5e-3);
        }
    }
}

#[test]
fn no_interaction_gives_the_zero_drift() {
    let m = ModelSpec::gradient(1, "0.5*x1^2", "0*u", 1).unwrap();
    let sol = solve_self_consistent_drift(&m, &[1.0], &small_opts(0.1)).unwrap();
    assert_eq!(sol.log.len(), 1);
    assert_eq!(sol.field.lambda_norm(), 0.0);
}

#[test]
fn limit_drift_values() {
    let s = scenarios::ellipse().unwrap();
    let flow = FlowCache::new(&s.model, &[0.0, 0.0], 2.0, 1e-2).unwrap();
    for t in [0.0, 0.5, 2.0] {
        let x = [0.3, -1.1];
        assert_eq!(
            limit_drift(&s.model, &flow, t, &x).unwrap(),
            s.model.interaction_force(&x)
        );
    }
    let flow = FlowCache::new(&s.model, &[0.8, 0.4], 2.0, 1e-3).unwrap();
    let psi = flow.at(1.3).unwrap();
    assert!(limit_drift(&s.model, &flow, 1.3, &psi)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));

    let m = ModelSpec::gradient(1, "0.5*x1^2", "2.5*u", 1).unwrap();
    let flow = FlowCache::new(&m, &[1.0], 2.0, 1e-3).unwrap();
    let v = limit_drift(&m, &flow, 1.0, &[0.0]).unwrap()[0];
    assert!((v + 2.5 * (-1f64).exp()).abs() < 1e-10);
}

#[test]
fn lambda_norm_is_stable_under_box_doubling() {
    let m = ou();
    let base = small_opts(0.1);
    let sol = solve_self_consistent_drift(&m, &[1.0], &base).unwrap();
    let r = sol.field.region();
    let c: Vec<f64> = r.lo.iter().zip(&r.hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let doubled = BoxRegion {
        lo: r.lo.iter().zip(&c).map(|(a, m)| m - 2.0 * (m - a)).collect(),
        hi: r.hi.iter().zip(&c).map(|(b, m)| m + 2.0 * (b - m)).collect(),
    };
    let mut opts = base.clone();
    opts.grid.region = Some(doubled);
    opts.grid.nodes_per_axis = 2 * base.grid.nodes_per_axis - 1;
    let wide = solve_self_consistent_drift(&m, &[1.0], &opts).unwrap();
    let (a, b) = (sol.field.lambda_norm(), wide.field.lambda_norm());
    assert!(a.is_finite() && (b / a - 1.0).abs() <= 0.1, "{a} vs {b}");
}

#[test]
fn converged_field_matches_the_particle_system() {
    let m = ou();
    let big_m = 2000;
    let opts = PicardOptions {
        ensemble_size: big_m,
        ..small_opts(0.1)
    };
    let sol = solve_self_consistent_drift(&m, &[1.0], &opts).unwrap();
    let paths = simulate_recorded(
        &m,
        &SimulationMode::Particle { n: big_m },
        &[1.0],
        0.1,
        1.0,
        &NoisePlan::new(8, 1e-3),
        0,
        1000,
    )
    .unwrap();
    let snap = EnsembleSnapshot::new(1.0, 1, paths.iter().map(|p| p.final_state()[0]).collect());
    let f = &sol.field;
    let k = f.times().n - 1;
    let tol = 10.0 / (big_m as f64).sqrt() + 1e-2;
    for node in 0..f.n_nodes() {
        let x = f.node(node);
        let want = snap.empirical_drift(&m, &x)[0];
        assert!((f.value_at(k, node)[0] - want).abs() <= tol);
    }
}

#[test]
fn table_round_trip_preserves_evaluation() {
    let s = scenarios::ellipse().unwrap();
    let opts = PicardOptions {
        epsilon: 0.1,
        grid: GridSpec {
            n_times: 11,
            nodes_per_axis: 9,
            region: None,
        },
        ensemble_size: 200,
        dt: 1e-2,
        ..PicardOptions::default()
    };
    let sol = solve_self_consistent_drift(&s.model, &[0.5, 0.5], &opts).unwrap();
    let mut buf = Vec::new();
    sol.field.write_table(&mut buf).unwrap();
    let back = DriftField::read_table(buf.as_slice(), &s.model).unwrap();
    for (t, x) in [(0.0, [0.1, 0.2]), (0.33, [-0.7, 1.9]), (1.0, [4.0, -4.0])] {
        assert_eq!(back.drift_eval(t, &x).unwrap(), sol.field.drift_eval(t, &x).unwrap());
    }
}
