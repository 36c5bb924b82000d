//! `flow2` and `flow3`: chunked runs with CSV output and resumable
//! snapshots.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use orbiflow_core::orb2::TwoOrbSig;
use orbiflow_core::ricciflow2d::{
    gauss_curvature, run_to_soliton, Flow2Params, Flow2State, ModeParam, RotProfile,
};
use orbiflow_core::surgeryflow3d::{
    curvatures, describe, reconstruct_before, run_flow3_while, Flow3Params, FlowState, SurgeryParams, WarpProfile,
};

use crate::{emit, mode, snapshot, write_file, CliError, Exit, OutDir};

#[derive(Debug, Clone, Args)]
pub struct SnapshotArgs {
    /// Stop at the first step reaching this time and write a snapshot.
    #[arg(long = "snapshot-at", requires = "snapshot")]
    pub snapshot_at: Option<f64>,
    /// Snapshot file to write.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Continue a run from a snapshot file.
    #[arg(long, conflicts_with = "snapshot_at")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Flow2Args {
    /// Teardrop seed with one cone point of this order.
    #[arg(long, conflicts_with = "football")]
    pub cone: Option<u32>,
    /// Perturbed football `S2(k,k)`.
    #[arg(long)]
    pub football: Option<u32>,
    /// Amplitude of the football perturbation.
    #[arg(long, default_value_t = 0.2)]
    pub amp: f64,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Output cadence in steps.
    #[arg(long, default_value_t = 500)]
    pub every: u64,
    /// Run the normalized flow from a teardrop until it settles on a soliton.
    #[arg(long = "to-soliton", requires = "cone")]
    pub to_soliton: bool,
    /// Largest accepted soliton residual.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub snap: SnapshotArgs,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Seed3 {
    Dumbbell,
    Round,
    Cylinder,
}

#[derive(Debug, Clone, Args)]
pub struct Flow3Args {
    #[arg(long = "cross-section", default_value = "S2")]
    pub cross_section: String,
    #[arg(long, value_enum, default_value = "dumbbell")]
    pub seed: Seed3,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    #[arg(long = "stop-time")]
    pub stop_time: Option<f64>,
    /// Initial grid spacing.
    #[arg(long, default_value_t = 0.02)]
    pub ds: f64,
    /// Output cadence in steps.
    #[arg(long, default_value_t = 200)]
    pub every: u64,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub snap: SnapshotArgs,
    #[command(flatten)]
    pub out: OutDir,
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::new(Exit::Numeric, e.to_string())
}

/// Crossing test for the snapshot time: fires once, on the step that first
/// reaches it.
fn crosses(at: Option<f64>, before: f64, after: f64) -> bool {
    at.is_some_and(|ts| before < ts && after >= ts)
}

fn snapshot_path(s: &SnapshotArgs) -> Result<&Path, CliError> {
    s.snapshot
        .as_deref()
        .ok_or_else(|| CliError::new(Exit::Parse, "--snapshot-at needs --snapshot <FILE>"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Flow2Run {
    seed: String,
    every: u64,
    state: Flow2State,
    last_recorded: Option<u64>,
    profile_csv: String,
    summary_csv: String,
}

impl Flow2Run {
    fn record(&mut self) -> Result<(), CliError> {
        let s = &self.state;
        let k = gauss_curvature(&s.profile).map_err(numeric)?;
        for ((x, p), kk) in s.profile.xi.iter().zip(&s.profile.phi).zip(&k) {
            let _ = writeln!(self.profile_csv, "{},{x},{p},{kk}", s.t);
        }
        let m = s.summary();
        let _ = writeln!(self.summary_csv, "{},{},{},{},{}", s.t, s.steps, m.area, m.total_curvature, m.sup_dev);
        self.last_recorded = Some(s.steps);
        Ok(())
    }
}

fn flow2_seed(args: &Flow2Args) -> Result<(String, RotProfile), CliError> {
    let bad = |e: orbiflow_core::ricciflow2d::Flow2Error| CliError::new(Exit::Parse, e.to_string());
    match (args.cone, args.football) {
        (Some(k), None) if k >= 1 => Ok((format!("teardrop S2({k})"), RotProfile::teardrop_seed(args.n, k))),
        (None, Some(k)) if k >= 1 => {
            let kf = k as f64;
            let amp = args.amp;
            let p = RotProfile::from_fn(args.n, PI, [k, k], |s| s.sin() / kf * (1.0 + amp * (2.0 * s).sin().powi(2)))
                .map_err(bad)?;
            Ok((format!("football S2({k},{k}) amp {amp}"), p))
        }
        _ => Err(CliError::new(Exit::Parse, "give exactly one of --cone <k> or --football <k> with k >= 1")),
    }
}

pub fn flow2(args: &Flow2Args, out: &mut dyn Write) -> Result<(), CliError> {
    let params = Flow2Params {
        mode: ModeParam(mode(args.sequential)),
        ..Flow2Params::default()
    };
    let dir = args.out.create()?.to_path_buf();
    if args.to_soliton {
        let k = args.cone.unwrap_or(1);
        let (profile, res) = run_to_soliton(k, args.n, &params, args.t_end.unwrap_or(20.0)).map_err(numeric)?;
        let k_nodes = gauss_curvature(&profile).map_err(numeric)?;
        let mut text = String::from("xi,phi,K\n");
        for ((x, p), kk) in profile.xi.iter().zip(&profile.phi).zip(&k_nodes) {
            let _ = writeln!(text, "{x},{p},{kk}");
        }
        write_file(&dir.join("flow2_soliton.csv"), &text)?;
        emit(out, format!("soliton residual: {res:e}"))?;
        if !(res < args.tol) {
            return Err(CliError::new(
                Exit::Numeric,
                format!("soliton residual {res:e} is not below the tolerance {:e}", args.tol),
            ));
        }
        return Ok(());
    }

    let mut run = match &args.snap.resume {
        Some(path) => {
            let run: Flow2Run = snapshot::load(path, "flow2")?;
            emit(out, format!("resumed {} at t = {} (step {})", run.seed, run.state.t, run.state.steps))?;
            run
        }
        None => {
            let (seed, profile) = flow2_seed(args)?;
            let state = Flow2State::new(profile).map_err(|e| CliError::new(Exit::Parse, e.to_string()))?;
            let mut run = Flow2Run {
                seed,
                every: args.every,
                state,
                last_recorded: None,
                profile_csv: "t,xi,phi,K\n".into(),
                summary_csv: "t,step,area,total_curvature,sup_dev\n".into(),
            };
            run.record()?;
            run
        }
    };
    let t_end = args.t_end.unwrap_or(1.0);
    while run.state.t < t_end - 1e-15 {
        let before = run.state.t;
        run.state.step(&params, t_end - run.state.t).map_err(numeric)?;
        if run.every > 0 && run.state.steps % run.every == 0 {
            run.record()?;
        }
        if crosses(args.snap.snapshot_at, before, run.state.t) {
            let path = snapshot_path(&args.snap)?;
            snapshot::save(path, "flow2", &run)?;
            emit(out, format!("snapshot at t = {} (step {}) written to {}", run.state.t, run.state.steps, path.display()))?;
            return Ok(());
        }
    }
    if run.last_recorded != Some(run.state.steps) {
        run.record()?;
    }
    write_file(&dir.join("flow2_profile.csv"), &run.profile_csv)?;
    write_file(&dir.join("flow2_summary.csv"), &run.summary_csv)?;
    let m = run.state.summary();
    emit(
        out,
        format!(
            "{}: t = {}, steps = {}, area = {}, total curvature / 2pi = {}, sup |K - mean| = {:e}",
            run.seed,
            m.t,
            run.state.steps,
            m.area,
            m.total_curvature / (2.0 * PI),
            m.sup_dev
        ),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Flow3Run {
    seed: String,
    every: u64,
    params: Flow3Params,
    state: FlowState,
    extinct: Vec<(f64, usize)>,
    last_recorded: Option<u64>,
    profile_csv: String,
}

impl Flow3Run {
    fn record(&mut self) -> Result<(), CliError> {
        let s = &self.state;
        for (i, p) in s.components.iter().enumerate() {
            let r = curvatures(p).map_err(numeric)?.scalar;
            for ((x, v), rr) in p.s.iter().zip(&p.psi).zip(&r) {
                let _ = writeln!(self.profile_csv, "{},{i},{x},{v},{rr}", s.t);
            }
        }
        self.last_recorded = Some(s.steps);
        Ok(())
    }
}

fn flow3_seed(args: &Flow3Args) -> Result<(String, WarpProfile), CliError> {
    let cross: TwoOrbSig = args
        .cross_section
        .parse()
        .map_err(|e| CliError::new(Exit::Parse, format!("cross-section `{}`: {e}", args.cross_section)))?;
    let bad = |e: orbiflow_core::surgeryflow3d::Flow3Error| CliError::new(Exit::Invariant, e.to_string());
    if !(args.ds > 0.0 && args.ds < 0.5) {
        return Err(CliError::new(Exit::Parse, format!("--ds must lie in (0, 0.5), got {}", args.ds)));
    }
    let cells = |length: f64| ((length / args.ds).ceil() as usize).max(8);
    let p = match args.seed {
        Seed3::Dumbbell => WarpProfile::dumbbell(cross.clone(), args.ds, 0.3, 3.0),
        Seed3::Round => WarpProfile::round(cross.clone(), cells(PI), 1.0),
        Seed3::Cylinder => WarpProfile::cylinder(cross.clone(), cells(4.0), 4.0, 1.0),
    }
    .map_err(bad)?;
    let name = match args.seed {
        Seed3::Dumbbell => "dumbbell",
        Seed3::Round => "round",
        Seed3::Cylinder => "cylinder",
    };
    Ok((format!("{name} over {cross}"), p))
}

fn events_text(run: &Flow3Run) -> String {
    let mut text = String::new();
    for e in &run.state.events {
        let cuts: Vec<String> = e.cuts.iter().map(|c| format!("{}", c.s)).collect();
        let _ = writeln!(
            text,
            "surgery t={} component={} cross-section={} neck-scale={} cuts=[{}] kept={:?} discarded={}",
            e.t,
            e.component,
            e.cross_section,
            e.neck.scale,
            cuts.join(", "),
            e.kept(),
            e.discarded.len()
        );
    }
    for (t, i) in &run.extinct {
        let _ = writeln!(text, "extinct t={t} component={i}");
    }
    text
}

pub fn flow3(args: &Flow3Args, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = args.out.create()?.to_path_buf();
    let mut run = match &args.snap.resume {
        Some(path) => {
            let run: Flow3Run = snapshot::load(path, "flow3")?;
            emit(out, format!("resumed {} at t = {} (step {})", run.seed, run.state.t, run.state.steps))?;
            run
        }
        None => {
            let (seed, profile) = flow3_seed(args)?;
            let params = Flow3Params {
                surgery: SurgeryParams {
                    delta: args.delta,
                    h: args.h,
                    ..SurgeryParams::default()
                },
                ..Flow3Params::default()
            };
            params.surgery.validate().map_err(|e| CliError::new(Exit::Parse, e.to_string()))?;
            let state = FlowState::new(vec![profile]).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
            let mut run = Flow3Run {
                seed,
                every: args.every,
                params,
                state,
                extinct: Vec::new(),
                last_recorded: None,
                profile_csv: "t,component,s,psi,R\n".into(),
            };
            run.record()?;
            run
        }
    };
    let stop = args.stop_time.unwrap_or(0.04);
    let every = run.every;
    let params = run.params;
    let mut pending: Option<Result<(), CliError>> = None;
    let mut stopped = false;
    let mut extinct = Vec::new();
    let mut state = run.state.clone();
    let mut prev_t = state.t;
    let log = run_flow3_while(&mut state, &params, stop, mode(args.sequential), |s, log| {
        extinct.clone_from(&log.extinct);
        if every > 0 && s.steps % every == 0 {
            run.state = s.clone();
            if let Err(e) = run.record() {
                pending = Some(Err(e));
                return false;
            }
        }
        let hit = crosses(args.snap.snapshot_at, prev_t, s.t);
        prev_t = s.t;
        if hit {
            stopped = true;
            return false;
        }
        true
    })
    .map_err(numeric)?;
    if let Some(Err(e)) = pending {
        return Err(e);
    }
    let _ = log;
    run.extinct.extend(extinct);
    run.state = state;
    if stopped {
        let path = snapshot_path(&args.snap)?;
        snapshot::save(path, "flow3", &run)?;
        emit(out, format!("snapshot at t = {} (step {}) written to {}", run.state.t, run.state.steps, path.display()))?;
        return Ok(());
    }
    if run.last_recorded != Some(run.state.steps) {
        run.record()?;
    }
    let mut sigma = String::from("t,r_min,volume,sigma\n");
    for m in &run.state.sigma_samples {
        let _ = writeln!(sigma, "{},{},{},{}", m.t, m.r_min, m.volume, m.sigma);
    }
    write_file(&dir.join("flow3_profile.csv"), &run.profile_csv)?;
    write_file(&dir.join("flow3_sigma.csv"), &sigma)?;
    write_file(&dir.join("flow3_events.txt"), &events_text(&run))?;
    let roundtrip = check_descriptions(&run)?;
    emit(
        out,
        format!(
            "{}: t = {}, steps = {}, components = {}, surgeries = {}, extinct = {}",
            run.seed,
            run.state.t,
            run.state.steps,
            run.state.components.len(),
            run.state.events.len(),
            run.extinct.len()
        ),
    )?;
    if let Some(d) = roundtrip {
        emit(out, format!("final description: {d}"))?;
    }
    Ok(())
}

/// Token list of the final description, after checking that it is a valid
/// orbifold description.
fn check_descriptions(run: &Flow3Run) -> Result<Option<String>, CliError> {
    if run.state.components.is_empty() {
        return Ok(None);
    }
    let d = describe(&run.state.components).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
    if let Some(last) = run.state.events.last() {
        reconstruct_before(&d, last).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
    }
    let tokens: Vec<String> = d.components.iter().map(|c| c.to_string()).collect();
    Ok(Some(tokens.join(" + ")))
}
