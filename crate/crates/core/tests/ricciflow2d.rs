use std::f64::consts::PI;

use orbiflow_core::ricciflow2d::*;

fn perturbed_football(n: usize, k: u32, amp: f64) -> RotProfile {
    RotProfile::from_fn(n, PI, [k, k], |s| s.sin() / k as f64 * (1.0 + amp * (2.0 * s).sin().powi(2))).unwrap()
}

#[test]
fn perturbed_football_rounds_out() {
    let mut st = Flow2State::new(perturbed_football(200, 3, 0.3)).unwrap();
    let params = Flow2Params::default();
    let first = st.summary();
    let mut worst_area: f64 = 0.0;
    let mut worst_gb: f64 = 0.0;
    st.run_until(&params, 6.0, 2000, |s| {
        let sm = s.summary();
        worst_area = worst_area.max((sm.area / first.area - 1.0).abs());
        worst_gb = worst_gb.max((sm.total_curvature - 2.0 * PI * 2.0 / 3.0).abs());
    })
    .unwrap();
    let last = st.summary();
    assert!(worst_area < 1e-6);
    assert!(worst_gb < 1e-4);
    assert!(last.sup_dev < 1e-4);
}

#[test]
fn teardrop_flows_to_the_shooting_soliton() {
    let params = Flow2Params { tol: 1e-5, ..Flow2Params::default() };
    let (p, _) = run_to_soliton(2, 200, &params, 40.0).unwrap();
    let oracle = soliton_shoot(2, (-10.0, 0.0), 2000).unwrap();
    assert!(profile_distance(&p, &oracle.profile) < 1e-3);
    // c and lambda both scale inversely with area; the oracle has lambda = 1.
    let (lambda, c, _) = soliton_residual(&p);
    assert!((c / lambda - oracle.c).abs() < 0.01 * oracle.c.abs(), "{} vs {}", c / lambda, oracle.c);
}

#[test]
fn smooth_seed_becomes_round() {
    let (p, res) = run_to_soliton(1, 200, &Flow2Params::default(), 40.0).unwrap();
    let (lambda, c, _) = soliton_residual(&p);
    assert!(res < 1e-3 && c.abs() < 1e-3);
    assert!((lambda - 1.0).abs() < 1e-3);
    let round = RotProfile::round(200, 1);
    assert!(profile_distance(&p, &round) < 1e-3);
}

#[test]
fn three_fold_teardrop_limit_has_monotone_curvature() {
    let (p, _) = run_to_soliton(3, 200, &Flow2Params::default(), 40.0).unwrap();
    let k = gauss_curvature(&p).unwrap();
    let inner = &k[1..200];
    let inc = inner.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let dec = inner.windows(2).all(|w| w[1] <= w[0] + 1e-6);
    assert!(inc || dec);
    let oracle = soliton_shoot(3, (-10.0, 0.0), 2000).unwrap();
    assert!(profile_distance(&p, &oracle.profile) < 1e-3);
}

#[test]
fn sequential_and_parallel_flows_agree() {
    let mut a = Flow2State::new(perturbed_football(120, 2, 0.2)).unwrap();
    let mut b = a.clone();
    let seq = Flow2Params::default();
    let par = Flow2Params { mode: ModeParam(orbiflow_core::par::Mode::Parallel), ..seq };
    a.run_until(&seq, 0.05, 0, |_| {}).unwrap();
    b.run_until(&par, 0.05, 0, |_| {}).unwrap();
    assert_eq!(a, b);
}
