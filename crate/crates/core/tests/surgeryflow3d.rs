use std::f64::consts::SQRT_2;

use orbiflow_core::orb2::TwoOrbSig;
use orbiflow_core::par::Mode;
use orbiflow_core::surgeryflow3d::*;

fn sphere(cones: &[u32]) -> TwoOrbSig {
    TwoOrbSig::sphere(cones).unwrap()
}

fn no_surgery() -> Flow3Params {
    Flow3Params { neck_every: 0, ..Flow3Params::default() }
}

#[test]
fn round_sphere_shrinks_homothetically() {
    for cones in [vec![], vec![3, 3]] {
        let p = WarpProfile::round(sphere(&cones), 314, 1.0).unwrap();
        let r0 = curvatures(&p).unwrap().min_scalar();
        let mut st = FlowState::new(vec![p]).unwrap();
        let mut worst: f64 = 0.0;
        run_flow3(&mut st, &no_surgery(), 0.2, Mode::Sequential, |s, _| {
            let r = s.r_min();
            worst = worst.max((r * (1.0 - 4.0 * s.t) / r0 - 1.0).abs());
        })
        .unwrap();
        let s0 = st.sigma_samples[0].sigma;
        let drift = st.sigma_samples.iter().map(|x| (x.sigma / s0 - 1.0).abs()).fold(0.0, f64::max);
        eprintln!("homothety {worst:e} sigma {drift:e}");
        assert!(worst < 0.01);
        assert!(drift < 1e-4);
    }
}

#[test]
fn cylinder_scalar_curvature() {
    let p = WarpProfile::cylinder(sphere(&[]), 100, 4.0, SQRT_2).unwrap();
    let mut st = FlowState::new(vec![p]).unwrap();
    let mut worst: f64 = 0.0;
    run_flow3(&mut st, &no_surgery(), 0.5, Mode::Sequential, |s, _| {
        let c = curvatures(&s.components[0]).unwrap();
        let expect = 1.0 / (1.0 - s.t);
        worst = worst.max(c.scalar.iter().map(|r| (r / expect - 1.0).abs()).fold(0.0, f64::max));
    })
    .unwrap();
    assert!(worst < 0.01, "{worst}");
}

fn roundtrip_holds(before: &[WarpProfile], after: &FlowState, event: &SurgeryEvent) {
    let pre = describe(before).unwrap();
    let post = describe(&after.components).unwrap();
    let (rebuilt, records) = reconstruct_before(&post, event).unwrap();
    assert!(rebuilt.equivalent(&pre), "{rebuilt:?}\n{pre:?}");
    assert_eq!(records.len(), event.chain.len() - 1);
    assert!(post.edge_label_set().is_subset(&pre.edge_label_set()));
}

#[test]
fn dumbbell_neckpinch_and_surgery() {
    let seed = WarpProfile::dumbbell(sphere(&[]), 0.02, 0.3, 3.0).unwrap();
    let phi = PinchFn::calibrated(&[seed.clone()], 0.1);
    let mut st = FlowState::new(vec![seed]).unwrap();
    let params = Flow3Params::default();
    let mut pre_pinch = true;
    let mut post_pinch = true;
    let mut before: Option<FlowState> = None;
    let mut after: Option<FlowState> = None;
    let log = run_flow3(&mut st, &params, 0.04, Mode::Parallel, |s, log| {
        let ok = s.components.iter().all(|p| pinching_check(p, &phi).pass);
        if log.necks.is_empty() {
            pre_pinch &= ok;
            before = Some(s.clone());
        } else {
            post_pinch &= ok;
            if after.is_none() {
                after = Some(s.clone());
            }
        }
    })
    .unwrap();
    assert!(pre_pinch && post_pinch);
    assert_eq!(log.necks.len(), 1);
    assert!(log.extinct.is_empty());
    let (before, after) = (before.unwrap(), after.unwrap());
    let event = &after.events[0];
    assert_eq!(event.kept().len(), 2);
    assert_eq!(after.components.len(), 2);
    assert_eq!(st.components.len(), 2);
    for p in &after.components {
        assert_eq!(p.ends, [EndKind::Cap; 2]);
        assert!(pinching_check(p, &phi).pass);
    }
    // The two halves are mirror images.
    let (v0, v1) = (after.components[0].volume(), after.components[1].volume());
    assert!((v0 / v1 - 1.0).abs() < 1e-3, "{v0} {v1}");
    roundtrip_holds(&before.components, &after, event);
}

#[test]
fn quotient_neck_surgery_bookkeeping() {
    let k3 = sphere(&[3, 3]);
    let p = WarpProfile::dumbbell(k3, 0.01, 0.12, 3.0).unwrap();
    let neck = detect_neck(&p, 0.1, 0).expect("neck");
    assert!(neck.scale <= 0.1);
    let st = FlowState::new(vec![p.clone()]).unwrap();
    let params = SurgeryParams::default();
    let after = do_surgery(&st, &neck, &params).unwrap();
    let event = after.events.last().unwrap();
    assert_eq!(after.components.len(), 2);
    assert!(after.hold_until.iter().all(|&h| h > st.t));
    roundtrip_holds(&[p], &after, event);
    let labels = describe(&after.components).unwrap().edge_label_set();
    assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![3]);
}

#[test]
fn standard_cap_is_positive() {
    for k in [1, 2, 5] {
        let cross = if k == 1 { sphere(&[]) } else { sphere(&[k, k]) };
        let cap = standard_cap(cross, 0.01, 12.0).unwrap();
        let r = curvatures(&cap).unwrap().min_scalar();
        assert!(r >= 1.0, "{k} {r}");
    }
}

#[test]
fn modes_agree() {
    let seed = WarpProfile::dumbbell(sphere(&[2, 2]), 0.04, 0.4, 2.0).unwrap();
    let run = |mode| {
        let mut st = FlowState::new(vec![seed.clone()]).unwrap();
        run_flow3(&mut st, &Flow3Params::default(), 0.01, mode, |_, _| {}).unwrap();
        st
    };
    assert_eq!(run(Mode::Sequential), run(Mode::Parallel));
}

#[test]
fn cap_noncollapsing_weakens_with_group_order() {
    let mut last = f64::INFINITY;
    for k in [1, 2, 3, 5] {
        let cross = if k == 1 { sphere(&[]) } else { sphere(&[k, k]) };
        let cap = standard_cap(cross, 0.01, 12.0).unwrap();
        let v = kappa_check(&cap, 0.5, 0.01);
        let worst = v.worst_ratio.expect("admissible centers");
        assert!(v.pass, "{k} {worst}");
        assert!(worst < last, "{k}: {worst} vs {last}");
        last = worst;
    }
}
