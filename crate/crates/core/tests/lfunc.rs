use std::f64::consts::PI;

use orbiflow_core::lfunc::*;
use orbiflow_core::par::Mode;
use proptest::prelude::*;

/// Closed form on the shrinking models with one unit to the singular time:
/// with `a = 1`, `r^2 = c (1 + tau)`, `c = 2 (k - 1)`, the curvature part of
/// L is `k (s - atan s)` and the sphere angle grows like `2 v atan(s)`,
/// `s = sqrt(taubar)`.
fn exact_sphere_l(k: usize, flat: f64, angle: f64, taubar: f64) -> f64 {
    let s = taubar.sqrt();
    let c = 2.0 * (k as f64 - 1.0);
    let curvature = k as f64 * (s - s.atan());
    let kinetic = angle * angle * c / (2.0 * s.atan());
    (curvature + kinetic + flat * flat / (2.0 * s)) / (2.0 * s)
}

#[test]
fn straight_flat_path_length() {
    let flow = ModelFlow::flat(2, 1).unwrap();
    let v = [0.3, -0.4];
    let taubar: f64 = 0.7;
    // Deliberately uneven sampling in tau.
    let tau: Vec<f64> = (0..=37).map(|i| taubar * (i as f64 / 37.0).powf(1.7)).collect();
    let points = tau.iter().map(|t| v.iter().map(|c| 2.0 * t.sqrt() * c).collect()).collect();
    let l = l_functional(&flow, &LPath { tau, points }).unwrap();
    let d = 2.0 * taubar.sqrt() * 0.5;
    assert!((l - d * d / (2.0 * taubar.sqrt())).abs() < 1e-12, "{l}");
}

#[test]
fn constant_paths() {
    let flat = ModelFlow::flat(3, 1).unwrap();
    let tau: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
    let points = vec![vec![0.0; 3]; tau.len()];
    let path = LPath { tau: tau.clone(), points: points.clone() };
    assert_eq!(l_functional(&flat, &path).unwrap(), 0.0);
    // On the round model only the curvature term remains.
    let sphere = ModelFlow::sphere(3, 1).unwrap();
    let tau: Vec<f64> = (0..=400).map(|i| (i as f64 / 400.0).powi(2)).collect();
    let path = LPath { tau, points: vec![vec![0.0; 3]; 401] };
    let l = l_functional(&sphere, &path).unwrap();
    let exact = 3.0 * (1.0 - 1f64.atan());
    assert!((l - exact).abs() < 1e-9, "{l} {exact}");
    let g = l_geodesic_shoot(&sphere, &[0.0; 3], 1.0, &ShootSpec::default()).unwrap();
    assert!(g.path.points.iter().all(|p| p.iter().all(|c| *c == 0.0)));
    assert!((g.length - exact).abs() < 1e-9);
}

#[test]
fn short_time_length_at_basepoint() {
    // For small taubar, l(p) = R(t0) taubar / 3 to leading order.
    let sphere = ModelFlow::sphere(3, 1).unwrap();
    let r0 = sphere.scalar_curvature(0.0);
    for taubar in [1e-4, 1e-3] {
        let l = reduced_length(&sphere, &[0.0; 3], taubar, &ShootSpec::default()).unwrap();
        let lead = r0 * taubar / 3.0;
        assert!((l / lead - 1.0).abs() < taubar, "{l} {lead}");
    }
}

#[test]
fn flat_shoot_endpoint() {
    let flow = ModelFlow::flat(3, 1).unwrap();
    let v = [0.2, 0.1, -0.7];
    let g = l_geodesic_shoot(&flow, &v, 2.0, &ShootSpec { steps: 50 }).unwrap();
    let d = g.path.endpoint().iter().map(|x| x * x).sum::<f64>().sqrt();
    let speed = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((d - 2.0 * 2f64.sqrt() * speed).abs() < 1e-12);
    assert!((g.length - d * d / (2.0 * 2f64.sqrt())).abs() < 1e-12);
}

#[test]
fn sphere_shoot_converges() {
    let flow = ModelFlow::sphere(3, 1).unwrap();
    let v = [0.0, 0.6, 0.8];
    let coarse = l_geodesic_shoot(&flow, &v, 0.8, &ShootSpec { steps: 100 }).unwrap();
    let fine = l_geodesic_shoot(&flow, &v, 0.8, &ShootSpec { steps: 200 }).unwrap();
    let mut worst: f64 = 0.0;
    for (i, p) in coarse.path.points.iter().enumerate() {
        let q = &fine.path.points[2 * i];
        worst = worst.max(p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        // Stays on the great circle through the initial direction.
        assert!((p[1] * 0.8 - p[2] * 0.6).abs() < 1e-14);
    }
    assert!(worst < 1e-4, "{worst}");
    let angle = fine.path.endpoint().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((angle - 2.0 * 0.8f64.sqrt().atan()).abs() < 1e-9);
    let l = fine.length / (2.0 * 0.8f64.sqrt());
    assert!((l - exact_sphere_l(3, 0.0, angle, 0.8)).abs() < 1e-9);
}

#[test]
fn sampled_length_is_second_order() {
    let flow = ModelFlow::sphere(3, 1).unwrap();
    let v = [0.5, 0.0, 0.0];
    let exact = {
        let g = l_geodesic_shoot(&flow, &v, 1.0, &ShootSpec { steps: 2000 }).unwrap();
        g.length
    };
    let err = |steps| {
        let g = l_geodesic_shoot(&flow, &v, 1.0, &ShootSpec { steps }).unwrap();
        (l_functional(&flow, &g.path).unwrap() - exact).abs()
    };
    let (e1, e2) = (err(20), err(40));
    assert!(e1 / e2 > 3.5, "{e1} {e2}");
}

#[test]
fn flat_reduced_length_examples() {
    let flow = ModelFlow::flat(2, 3).unwrap();
    let l = reduced_length(&flow, &[2.0, 0.0], 1.0, &ShootSpec::default()).unwrap();
    assert!((l - 1.0).abs() < 1e-12);
    assert_eq!(reduced_length(&flow, &[0.0, 0.0], 1.0, &ShootSpec::default()).unwrap(), 0.0);
}

#[test]
fn sphere_reduced_length_matches_closed_form() {
    let sphere = ModelFlow::sphere(3, 1).unwrap();
    let cyl = ModelFlow::cylinder(3, 1).unwrap();
    for taubar in [0.01, 0.3, 1.0] {
        for angle in [0.0, 0.4, 2.5] {
            let l = reduced_length(&sphere, &[angle, 0.0, 0.0], taubar, &ShootSpec::default()).unwrap();
            assert!((l - exact_sphere_l(3, 0.0, angle, taubar)).abs() < 1e-8);
            let l = reduced_length(&cyl, &[0.7, 0.0, angle], taubar, &ShootSpec::default()).unwrap();
            assert!((l - exact_sphere_l(2, 0.7, angle, taubar)).abs() < 1e-8);
        }
    }
}

#[test]
fn gaussian_values() {
    for k in 1..=6 {
        let flow = ModelFlow::flat(2, k).unwrap();
        for taubar in [1e-3, 0.5, 1.0] {
            let v = reduced_volume(&flow, taubar, &QuadSpec::default(), Mode::Parallel).unwrap();
            assert!((v.value - 4.0 * PI / k as f64).abs() < 1e-6, "{k} {taubar} {}", v.value);
        }
    }
    let flow = ModelFlow::flat(3, 1).unwrap();
    let v = reduced_volume(&flow, 0.3, &QuadSpec::default(), Mode::Parallel).unwrap();
    assert!((v.value - (4.0 * PI).powf(1.5)).abs() < 1e-4, "{}", v.value);
    assert!(v.tail < 1e-12);
}

#[test]
fn short_time_sphere_volume() {
    for order in [1, 5] {
        let flow = ModelFlow::sphere(3, order).unwrap();
        let v = reduced_volume(&flow, 1e-3, &QuadSpec::default(), Mode::Parallel).unwrap();
        let gauss = (4.0 * PI).powf(1.5) / order as f64;
        assert!(v.value < gauss && v.value / gauss > 0.99, "{} {gauss}", v.value);
    }
}

#[test]
fn quotient_scaling() {
    for flow in [ModelFlow::sphere(3, 1).unwrap(), ModelFlow::cylinder(3, 1).unwrap(), ModelFlow::flat(3, 1).unwrap()] {
        let smooth = reduced_volume(&flow, 0.2, &QuadSpec::default(), Mode::Sequential).unwrap().value;
        for m in [2, 7, 60] {
            let mut q = flow;
            q.kind = match flow.kind {
                ModelKind::FlatQuotient { n, .. } => ModelKind::FlatQuotient { n, order: m },
                ModelKind::ShrinkingRoundQuotient { n, .. } => ModelKind::ShrinkingRoundQuotient { n, order: m },
                ModelKind::CylinderQuotient { n, .. } => ModelKind::CylinderQuotient { n, order: m },
            };
            let v = reduced_volume(&q, 0.2, &QuadSpec::default(), Mode::Sequential).unwrap().value;
            assert!((v * m as f64 / smooth - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn monotone_on_all_models() {
    let grid = log_grid(1e-3, 1.0, 12).unwrap();
    for flow in [ModelFlow::flat(3, 1).unwrap(), ModelFlow::sphere(3, 2).unwrap(), ModelFlow::cylinder(3, 3).unwrap()] {
        let curve = reduced_volume_curve(&flow, &grid, &QuadSpec::default(), 1e-5, Mode::Parallel).unwrap();
        assert!(curve.verdict.pass, "{:?} {:?}", flow.kind, curve.points);
    }
    let flow = ModelFlow::sphere(3, 1).unwrap();
    let curve = reduced_volume_curve(&flow, &[0.01, 0.1, 0.5], &QuadSpec::default(), 0.0, Mode::Parallel).unwrap();
    assert!(curve.points.windows(2).all(|w| w[1].1 < w[0].1));
}

#[test]
fn minimum_reduced_length() {
    let spec = (SearchSpec::default(), ShootSpec::default());
    let flat = min_reduced_length(&ModelFlow::flat(2, 1).unwrap(), 0.5, &spec.0, &spec.1, 1e-3).unwrap();
    assert_eq!(flat.l, 0.0);
    assert!(flat.q.iter().all(|c| *c == 0.0));
    for taubar in [1e-3, 0.1, 1.0] {
        let s = min_reduced_length(&ModelFlow::sphere(3, 1).unwrap(), taubar, &spec.0, &spec.1, 1e-3).unwrap();
        assert!(s.pass && s.l <= 1.5 + 1e-3);
        let c = min_reduced_length(&ModelFlow::cylinder(3, 1).unwrap(), taubar, &spec.0, &spec.1, 1e-3).unwrap();
        assert!(c.pass && c.l <= 1.5);
        // Minimizer on the axis through the basepoint.
        assert!(c.q[1].abs() < 1e-6 && c.q[2].abs() < 1e-6, "{:?}", c.q);
    }
}

#[test]
fn modes_agree() {
    let flow = ModelFlow::cylinder(3, 2).unwrap();
    let a = reduced_volume(&flow, 0.4, &QuadSpec::default(), Mode::Sequential).unwrap();
    let b = reduced_volume(&flow, 0.4, &QuadSpec::default(), Mode::Parallel).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_identity(x in -3.0f64..3.0, y in -3.0f64..3.0, taubar in 1e-3f64..2.0) {
        let flow = ModelFlow::flat(2, 1).unwrap();
        let l = reduced_length(&flow, &[x, y], taubar, &ShootSpec { steps: 20 }).unwrap();
        prop_assert!((l * 4.0 * taubar - (x * x + y * y)).abs() < 1e-6);
    }

    #[test]
    fn length_grows_with_distance(a in 0.0f64..1.5, b in 0.0f64..1.5, taubar in 1e-2f64..1.0) {
        let flow = ModelFlow::sphere(3, 1).unwrap();
        let la = reduced_length(&flow, &[a, 0.0, 0.0], taubar, &ShootSpec { steps: 40 }).unwrap();
        let lb = reduced_length(&flow, &[0.0, b, 0.0], taubar, &ShootSpec { steps: 40 }).unwrap();
        prop_assert_eq!(a < b, la < lb);
    }
}
