use selfstab_core::exitlab::*;
use selfstab_core::model::ModelSpec;
use selfstab_core::scenarios;
use selfstab_core::sde::{NoisePlan, SimulationMode};

fn brownian() -> ModelSpec {
    ModelSpec::gradient(1, "0*x1", "0*u", 1).unwrap()
}

#[test]
fn no_noise_means_no_exit() {
    let m = scenarios::ornstein_uhlenbeck().unwrap();
    let d = Domain::interval(-1.0, 1.0).unwrap();
    let run = run_exit_trials(
        &m,
        &SimulationMode::Classical,
        &d,
        &[0.2],
        0.0,
        1e-2,
        5,
        3.0,
        &NoisePlan::new(1, 1e-2),
    )
    .unwrap();
    assert_eq!(run.n_censored, 5);
    assert!(run.warning.is_some());
    let s = exit_statistics(&run.records, &d, 4, &[]).unwrap();
    assert!(s.mean.is_none() && s.median.is_none());
    assert!((s.restricted_mean - 3.0).abs() < 1e-9);
    assert!(s.histogram.is_empty());
    assert!(run.records.iter().all(|r| r.boundary_param.is_nan()));
}

#[test]
fn brownian_exit_from_an_interval() {
    let m = brownian();
    let d = Domain::interval(-1.0, 1.0).unwrap();
    let dt = 1e-3;
    let n = 2000;
    let run = run_exit_trials(
        &m,
        &SimulationMode::Classical,
        &d,
        &[0.5],
        1.0,
        dt,
        n,
        50.0,
        &NoisePlan::new(3, dt),
    )
    .unwrap();
    assert_eq!(run.n_censored, 0);
    let s = exit_statistics(&run.records, &d, 2, &[]).unwrap();
    // discrete monitoring shifts the walls outward by about 0.5826·√dt
    let a = 1.0 + 0.5826 * dt.sqrt();
    let want = a * a - 0.25;
    let se = s.mean_stderr.unwrap();
    assert!(
        (s.mean.unwrap() - want).abs() < 4.0 * se,
        "{} vs {want} ± {se}",
        s.mean.unwrap()
    );
    let right = run.records.iter().filter(|r| r.exit_point[0] > 0.0).count() as f64 / n as f64;
    let p = (a + 0.5) / (2.0 * a);
    assert!(
        (right - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(),
        "{right} vs {p}"
    );
    let total: usize = s.histogram.iter().map(|b| b.count).sum();
    assert_eq!(total, n);
}

#[test]
fn symmetric_well_exits_evenly() {
    let m = scenarios::ornstein_uhlenbeck().unwrap();
    let d = Domain::interval(-1.0, 1.0).unwrap();
    let n = 400;
    let run = run_exit_trials(
        &m,
        &SimulationMode::Classical,
        &d,
        &[0.0],
        0.4,
        1e-2,
        n,
        1e4,
        &NoisePlan::new(4, 1e-2),
    )
    .unwrap();
    let right = run.records.iter().filter(|r| r.exit_point[0] > 0.0).count() as f64;
    assert!(
        (right / n as f64 - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(),
        "{right}"
    );
}

#[test]
fn exit_points_lie_on_the_boundary() {
    let s = scenarios::ellipse().unwrap();
    let run = run_exit_trials(
        &s.model,
        &SimulationMode::Classical,
        &s.domain,
        &[0.0, 0.0],
        1.0,
        1e-2,
        100,
        1e4,
        &NoisePlan::new(5, 1e-2),
    )
    .unwrap();
    for r in &run.records {
        assert!(!r.censored);
        assert!(s.domain.level(&r.exit_point).abs() <= 1e-6);
        assert!(r.exit_time > 0.0);
        let back = s.domain.boundary_point(r.boundary_param).unwrap();
        assert!(back.iter().zip(&r.exit_point).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn ellipse_exits_gather_at_the_flat_ends() {
    let s = scenarios::ellipse().unwrap();
    let n = 200;
    let run = run_exit_trials(
        &s.model,
        &SimulationMode::Classical,
        &s.domain,
        &[0.0, 0.0],
        1.0,
        1e-2,
        n,
        1e4,
        &NoisePlan::new(6, 1e-2),
    )
    .unwrap();
    let hoods = [
        Neighborhood {
            name: "top".into(),
            center: vec![0.0, 2.0],
            radius: 1.0,
        },
        Neighborhood {
            name: "bottom".into(),
            center: vec![0.0, -2.0],
            radius: 1.0,
        },
    ];
    let summary = exit_statistics(&run.records, &s.domain, 8, &hoods).unwrap();
    let (top, bottom) = (&summary.neighborhoods[0], &summary.neighborhoods[1]);
    assert!(top.probability + bottom.probability >= 0.8, "{top:?} {bottom:?}");
    let diff = (top.probability - bottom.probability).abs();
    assert!(
        diff < 3.0 * (top.stderr.powi(2) + bottom.stderr.powi(2)).sqrt() + 1e-12,
        "{top:?} {bottom:?}"
    );
    assert_eq!(summary.histogram.len(), 8);
    assert_eq!(summary.histogram.iter().map(|b| b.count).sum::<usize>(), n);
}

#[test]
fn interaction_pushes_exits_to_the_far_side() {
    let s = scenarios::asymmetric_well().unwrap();
    let n = 100;
    let dt = 2e-2;
    let sides = |mode: &SimulationMode| -> Vec<bool> {
        let run = run_exit_trials(
            &s.model,
            mode,
            &s.domain,
            &[0.0],
            1.0,
            dt,
            n,
            1e4,
            &NoisePlan::new(7, dt),
        )
        .unwrap();
        assert_eq!(run.n_censored, 0);
        run.records.iter().map(|r| r.exit_point[0] > 0.0).collect()
    };
    let particles = sides(&SimulationMode::Particle { n: 100 });
    let classical = sides(&SimulationMode::Classical);
    let frac = |v: &[bool]| v.iter().filter(|b| **b).count() as f64 / n as f64;
    let (p, c) = (frac(&particles), frac(&classical));
    assert!(p >= c + 0.1, "particle {p} vs classical {c}");
}

#[test]
fn window_counts() {
    let rec = |t: f64, censored: bool| ExitRecord {
        trial: 0,
        seed: 0,
        exit_time: t,
        exit_point: vec![0.0],
        boundary_param: if censored { f64::NAN } else { 0.0 },
        censored,
    };
    // window (e^1, e^3) at Q̄ = 2, ε = 1, η = 1
    let records = [
        rec(1.0, false),
        rec(5.0, false),
        rec(10.0, false),
        rec(30.0, false),
        rec(10.0, true),
        rec(40.0, true),
    ];
    let w = window_fraction(&records, 2.0, 1.0, 1.0);
    assert_eq!((w.below, w.inside, w.above, w.undetermined), (1, 2, 2, 1));
    assert!((w.fraction_inside - 0.4).abs() < 1e-15);
}

#[test]
fn kramers_fit_recovers_an_exact_law() {
    let series: Vec<KramersPoint> = [0.2, 0.25, 0.4, 0.5]
        .iter()
        .map(|&e: &f64| KramersPoint {
            epsilon: e,
            mean_exit_time: 3.0 * (1.5 / e).exp(),
            stderr: 0.0,
            n_trials: 10,
            n_censored: 0,
        })
        .collect();
    let fit = kramers_fit(&series).unwrap();
    assert!((fit.q_estimate - 1.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!(!fit.weighted);
    assert!(kramers_fit(&series[..2]).is_err());
}

#[test]
fn start_outside_is_rejected() {
    let m = brownian();
    let d = Domain::interval(-1.0, 1.0).unwrap();
    assert!(run_exit_trials(
        &m,
        &SimulationMode::Classical,
        &d,
        &[2.0],
        1.0,
        1e-2,
        2,
        1.0,
        &NoisePlan::new(0, 1e-2)
    )
    .is_err());
}
