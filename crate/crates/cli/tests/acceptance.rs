//! Acceptance suite: one PASS/FAIL line per criterion, with timings.
//! Runs without the libtest harness so the lines always print.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use orbiflow_cli::doc::{self, Body};
use orbiflow_core::graphdec::{compressible_boundary_split, normalize, verify_strong, Operation, Recognized};
use orbiflow_core::lfunc::{log_grid, min_reduced_length, reduced_volume, reduced_volume_curve, ModelFlow, QuadSpec, SearchSpec, ShootSpec};
use orbiflow_core::orb2::{GeometryClass, TwoOrbSig};
use orbiflow_core::orb3::{invert_surgery, validate_vertex, zero_surgery, ThreeOrbDesc};
use orbiflow_core::par::Mode;
use orbiflow_core::ricciflow2d::{profile_distance, run_to_soliton, soliton_shoot, Flow2Params, Flow2State, RotProfile};
use orbiflow_core::surgeryflow3d::{
    curvatures, describe, pinching_check, reconstruct_before, run_flow3, standard_cap, Flow3Params, FlowState, PinchFn,
    WarpProfile,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// Classification read off the published tables rather than from the sign
/// of the Euler characteristic.
fn table_class(genus: u32, cones: &[u32]) -> GeometryClass {
    if genus == 1 {
        return if cones.is_empty() { GeometryClass::Euclidean } else { GeometryClass::Hyperbolic };
    }
    if genus > 1 {
        return GeometryClass::Hyperbolic;
    }
    match cones {
        [_] => GeometryClass::Bad,
        [a, b] if a != b => GeometryClass::Bad,
        [] | [_, _] | [2, 2, _] | [2, 3, 3] | [2, 3, 4] | [2, 3, 5] => GeometryClass::Spherical,
        [2, 3, 6] | [2, 4, 4] | [3, 3, 3] | [2, 2, 2, 2] => GeometryClass::Euclidean,
        _ => GeometryClass::Hyperbolic,
    }
}

fn cone_lists(max_len: usize, max_order: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for c in &frontier {
            let lo = c.last().copied().unwrap_or(2);
            for k in lo..=max_order {
                let mut d: Vec<u32> = c.clone();
                d.push(k);
                next.push(d);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn classification_tables() -> Outcome {
    let mut checked = 0usize;
    let mut errors = Vec::new();
    let mut spherical_forms = BTreeSet::new();
    for (genus, max_len) in [(0u32, 4usize), (1, 2), (2, 1)] {
        for cones in cone_lists(max_len, 20) {
            let sig = TwoOrbSig::new(genus, cones.clone(), 0, None).expect("valid signature");
            let got = sig.classify_geometry().expect("closed");
            let want = table_class(genus, &cones);
            checked += 1;
            if got != want {
                errors.push(format!("{sig}: {got} vs {want}"));
            }
            if want == GeometryClass::Spherical {
                spherical_forms.insert(match cones.as_slice() {
                    [] => "S2",
                    [_, _] => "S2(k,k)",
                    [2, 2, _] => "S2(2,2,k)",
                    [2, 3, 3] => "S2(2,3,3)",
                    [2, 3, 4] => "S2(2,3,4)",
                    _ => "S2(2,3,5)",
                });
            }
        }
    }
    let pass = errors.is_empty() && spherical_forms.len() == 6;
    outcome(pass, format!("{checked} signatures, {} mismatches, {} spherical families {}", errors.len(), spherical_forms.len(), errors.first().map_or(String::new(), |e| format!("first: {e}"))))
}

fn vertex_condition() -> Outcome {
    let mut errors = 0;
    let mut checked = 0;
    for p in 2..=50u64 {
        for q in 2..=50u64 {
            for r in 2..=50u64 {
                let want = q * r + p * r + p * q > p * q * r;
                let got = validate_vertex(p as u32, q as u32, r as u32).expect("labels at least 2");
                checked += 1;
                errors += usize::from(got != want);
            }
        }
    }
    outcome(errors == 0, format!("{checked} triples, {errors} disagreements"))
}

fn case_matches(case: u8, rec: Option<Recognized>) -> bool {
    matches!(
        (case, rec),
        (1, None)
            | (2, Some(Recognized::Cyclic(_)))
            | (3, Some(Recognized::CyclicPair(_, _)))
            | (4, Some(Recognized::Dihedral(_)))
            | (5, Some(Recognized::DihedralPair(_, _)))
            | (6, Some(Recognized::Dihedral(_)))
    )
}

fn normalization_corpus() -> Outcome {
    let mut files: Vec<PathBuf> = fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "orb"))
        .collect();
    files.sort();
    let mut graphs = 0;
    let mut seen = BTreeSet::new();
    let mut problems = Vec::new();
    let mut case3 = None;
    for path in &files {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = fs::read_to_string(path).expect("readable");
        let g = match doc::parse(&text) {
            Ok(d) => match d.body {
                Body::Graph(g) => g,
                _ => continue,
            },
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        graphs += 1;
        if name.starts_with("compressible_split") {
            match compressible_boundary_split(&g, "S", 0) {
                Ok(s) if s.token.to_string() == "S1xD2(4)" => {
                    seen.insert("split".to_string());
                }
                Ok(s) => problems.push(format!("{name}: split token {}", s.token)),
                Err(e) => problems.push(format!("{name}: {e}")),
            }
            continue;
        }
        let r = match normalize(&g) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        if !verify_strong(&r.strong).map(|v| v.strong).unwrap_or(false) {
            problems.push(format!("{name}: output not strong"));
        }
        if let Err(e) = r.reconcile(g.gluings.len()) {
            problems.push(format!("{name}: {e}"));
        }
        for t in &r.trace {
            seen.insert(t.op.to_string());
            if let Operation::Terminal(c) = t.op {
                if !case_matches(c, t.recognized) {
                    problems.push(format!("{name}: case {c} recognized {:?}", t.recognized));
                }
            }
        }
        if name == "step5_case3" {
            case3 = r.recognized.first().map(|x| x.to_string());
        }
    }
    let all = [
        "merge", "dehn-merge", "step1", "step2", "step3", "step4", "step5-case1", "step5-case2", "step5-case3",
        "step5-case4", "step5-case5", "step5-case6", "split",
    ];
    let missing: Vec<&str> = all.iter().copied().filter(|op| !seen.contains(*op)).collect();
    let case3_ok = case3.as_deref() == Some("S3//(Z2×Z3)");
    let pass = graphs >= 25 && missing.is_empty() && problems.is_empty() && case3_ok;
    outcome(
        pass,
        format!(
            "{graphs} graph descriptions, branches missing {missing:?}, {} problems, step5_case3 -> {} {}",
            problems.len(),
            case3.unwrap_or_else(|| "none".into()),
            problems.first().cloned().unwrap_or_default()
        ),
    )
}

fn gaussian_values() -> Outcome {
    let quad = QuadSpec::default();
    let mut worst: f64 = 0.0;
    for k in 1..=6u32 {
        let v = reduced_volume(&ModelFlow::flat(2, k).unwrap(), 0.5, &quad, Mode::Parallel).unwrap();
        worst = worst.max((v.value - 4.0 * PI / k as f64).abs());
    }
    let v3 = reduced_volume(&ModelFlow::flat(3, 1).unwrap(), 0.5, &quad, Mode::Parallel).unwrap();
    let err3 = (v3.value - (4.0 * PI).powf(1.5)).abs();
    outcome(worst < 1e-6 && err3 < 1e-4, format!("planar quotients max error {worst:.1e}, flat 3-space error {err3:.1e}"))
}

fn monotonicity() -> Outcome {
    let grid = log_grid(1e-3, 1.0, 12).unwrap();
    let models = [ModelFlow::flat(3, 1).unwrap(), ModelFlow::sphere(3, 1).unwrap(), ModelFlow::cylinder(3, 1).unwrap()];
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, flow) in ["flat", "sphere", "cylinder"].iter().zip(&models) {
        let curve = reduced_volume_curve(flow, &grid, &QuadSpec::default(), 1e-5, Mode::Parallel).unwrap();
        let bound = flow.dim() as f64 / 2.0 + 1e-3;
        let mut worst_l: f64 = 0.0;
        for &tau in &grid {
            let m = min_reduced_length(flow, tau, &SearchSpec::default(), &ShootSpec::default(), 1e-3).unwrap();
            worst_l = worst_l.max(m.l);
        }
        pass &= curve.verdict.pass && worst_l <= bound;
        lines.push(format!("{name}: monotone={} max min-l={worst_l:.4}", curve.verdict.pass));
    }
    outcome(pass, lines.join(", "))
}

fn two_d_flow() -> Outcome {
    let k = 3u32;
    let seed = RotProfile::from_fn(200, PI, [k, k], |s| s.sin() / k as f64 * (1.0 + 0.3 * (2.0 * s).sin().powi(2))).unwrap();
    let mut st = Flow2State::new(seed).unwrap();
    let params = Flow2Params::default();
    let first = st.summary();
    let chi = 2.0 - 2.0 * (1.0 - 1.0 / k as f64);
    let (mut area_rate, mut gb): (f64, f64) = (0.0, 0.0);
    st.run_until(&params, 6.0, 500, |s| {
        let m = s.summary();
        if m.t > 0.0 {
            area_rate = area_rate.max((m.area / first.area - 1.0).abs() / m.t.max(1.0));
        }
        gb = gb.max((m.total_curvature - 2.0 * PI * chi).abs());
    })
    .unwrap();
    let sup = st.summary().sup_dev;
    let params = Flow2Params { tol: 1e-5, ..Flow2Params::default() };
    let (limit, _) = run_to_soliton(2, 200, &params, 40.0).unwrap();
    let oracle = soliton_shoot(2, (-10.0, 0.0), 2000).unwrap();
    let dist = profile_distance(&limit, &oracle.profile);
    outcome(
        area_rate < 1e-6 && gb < 1e-4 && sup < 1e-4 && dist < 1e-3,
        format!("area drift {area_rate:.1e}/unit time, total curvature error {gb:.1e}, sup|K-mean| {sup:.1e}, teardrop vs shooting {dist:.1e}"),
    )
}

struct Dumbbell {
    before: FlowState,
    after: FlowState,
    necks: usize,
    final_components: usize,
    pinch_pre: bool,
    pinch_post: bool,
}

fn dumbbell_run() -> Dumbbell {
    let seed = WarpProfile::dumbbell(TwoOrbSig::sphere(&[]).unwrap(), 0.02, 0.3, 3.0).unwrap();
    let phi = PinchFn::calibrated(&[seed.clone()], 0.1);
    let mut st = FlowState::new(vec![seed]).unwrap();
    let (mut before, mut after) = (None, None);
    let (mut pinch_pre, mut pinch_post) = (true, true);
    let log = run_flow3(&mut st, &Flow3Params::default(), 0.04, Mode::Parallel, |s, log| {
        let ok = s.components.iter().all(|p| pinching_check(p, &phi).pass);
        if log.necks.is_empty() {
            pinch_pre &= ok;
            before = Some(s.clone());
        } else {
            pinch_post &= ok;
            if after.is_none() {
                after = Some(s.clone());
            }
        }
    })
    .unwrap();
    Dumbbell {
        before: before.expect("flow ran"),
        after: after.expect("a neck was cut"),
        necks: log.necks.len(),
        final_components: st.components.len(),
        pinch_pre,
        pinch_post,
    }
}

fn three_d_flow(d: &Dumbbell) -> Outcome {
    let round = WarpProfile::round(TwoOrbSig::sphere(&[]).unwrap(), 314, 1.0).unwrap();
    let mut st = FlowState::new(vec![round]).unwrap();
    let quiet = Flow3Params { neck_every: 0, sigma_every: 10, ..Flow3Params::default() };
    run_flow3(&mut st, &quiet, 0.2, Mode::Parallel, |_, _| {}).unwrap();
    let s0 = st.sigma_samples[0].sigma;
    let drift = st.sigma_samples.iter().map(|x| (x.sigma / s0 - 1.0).abs()).fold(0.0, f64::max);
    let cap_min = [1u32, 2, 3]
        .iter()
        .map(|&k| {
            let cross = if k == 1 { TwoOrbSig::sphere(&[]) } else { TwoOrbSig::sphere(&[k, k]) }.unwrap();
            curvatures(&standard_cap(cross, 0.01, 12.0).unwrap()).unwrap().min_scalar()
        })
        .fold(f64::INFINITY, f64::min);
    let two = d.after.components.len() == 2 && d.final_components == 2;
    outcome(
        drift < 1e-4 && d.necks >= 1 && two && d.pinch_pre && d.pinch_post && cap_min >= 1.0,
        format!(
            "round sigma drift {drift:.1e}, necks cut {}, components after surgery {}, pinching pre={} post={}, cap min R {cap_min:.4}",
            d.necks,
            d.after.components.len(),
            d.pinch_pre,
            d.pinch_post
        ),
    )
}

fn bookkeeping(d: &Dumbbell) -> Outcome {
    let text = fs::read_to_string(corpus_dir().join("surgery_sites.orb")).unwrap();
    let Body::Orb3(orb) = doc::parse(&text).unwrap().body else {
        return outcome(false, "surgery_sites.orb is not an orb3 document");
    };
    let (joined, rec) = zero_surgery(&orb, "x", "y").unwrap();
    let inverse = invert_surgery(&joined, &rec).map(|o| o == orb).unwrap_or(false);
    let labels_ok = joined.edge_label_set().is_subset(&orb.edge_label_set());

    let event = &d.after.events[0];
    let pre: ThreeOrbDesc = describe(&d.before.components).unwrap();
    let post = describe(&d.after.components).unwrap();
    let (rebuilt, records) = reconstruct_before(&post, event).unwrap();
    let reconstructs = rebuilt.equivalent(&pre) && records.len() + 1 == event.chain.len();
    let monotone = post.edge_label_set().is_subset(&pre.edge_label_set());
    outcome(
        inverse && labels_ok && reconstructs && monotone,
        format!("zero-surgery inverse {inverse}, pre/post reconstruction {reconstructs}, edge labels monotone {}", labels_ok && monotone),
    )
}

fn report(n: usize, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let pass = o.pass && took <= limit;
    println!(
        "criterion {n}: {} [{:.2}s / {:.0}s] {}",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs_f64(),
        o.detail
    );
    pass
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        report(1, secs(1), classification_tables),
        report(2, secs(1), vertex_condition),
        report(3, secs(5), normalization_corpus),
        report(4, secs(10), gaussian_values),
        report(5, secs(60), monotonicity),
        report(6, secs(300), two_d_flow),
    ];
    let start = Instant::now();
    let d = dumbbell_run();
    let shared = start.elapsed();
    results.push(report(7, secs(300).saturating_sub(shared), || three_d_flow(&d)));
    results.push(report(8, secs(60), || bookkeeping(&d)));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
