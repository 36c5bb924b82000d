//! `orbiflow` command-line front end.

pub mod doc;
pub mod snapshot;

mod flows;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use orbiflow_core::graphdec::{compressible_boundary_split, normalize, verify_strong, GraphOrb};
use orbiflow_core::lfunc::{self, ModelFlow, QuadSpec, SearchSpec, ShootSpec};
use orbiflow_core::orb2::GeometryClass;
use orbiflow_core::orb3::{discal_fill, is_good_spherical, vertex_link};
use orbiflow_core::par::Mode;

use doc::{Body, ErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Parse = 2,
    Invariant = 3,
    Numeric = 4,
    Io = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        CliError { exit, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<doc::DocError> for CliError {
    fn from(e: doc::DocError) -> Self {
        match e.kind {
            ErrorKind::Syntax => CliError::new(Exit::Parse, format!("parse error at {e}")),
            ErrorKind::Semantic => CliError::new(Exit::Invariant, format!("invalid description: {e}")),
        }
    }
}

impl From<snapshot::SnapshotError> for CliError {
    fn from(e: snapshot::SnapshotError) -> Self {
        match e {
            snapshot::SnapshotError::Io { .. } => CliError::new(Exit::Io, e.to_string()),
            _ => CliError::new(Exit::Parse, e.to_string()),
        }
    }
}

pub(crate) fn io_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(Exit::Io, format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "orbiflow", version, about = "Orbifold descriptions and model Ricci flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Geometry class and orbifold Euler characteristic of a 2-orbifold signature.
    Classify2 {
        /// Signature such as `S2(2,3,5)`, `T2`, `D2//D4`.
        signature: String,
    },
    /// Check a 3-orbifold description file.
    Validate3 { file: PathBuf },
    /// Normalize a graph-orbifold file to a strong decomposition.
    Decompose {
        file: PathBuf,
        /// Split off the solid-toric piece bounded by this free boundary,
        /// given as `<piece>.<index>`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Rotationally symmetric 2-d flow on a sphere with cone points.
    Flow2(flows::Flow2Args),
    /// Warped-product 3-d flow with surgery.
    Flow3(flows::Flow3Args),
    /// Reduced-volume curve on a model flow.
    Lvolume(LvolumeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutDir {
    /// Output directory (also settable through ORBIFLOW_OUT).
    #[arg(long = "out", env = "ORBIFLOW_OUT", default_value = "orbiflow-out")]
    pub dir: PathBuf,
}

impl OutDir {
    pub(crate) fn create(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_error(&self.dir, e))?;
        Ok(&self.dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    Flat,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Args)]
pub struct LvolumeArgs {
    #[arg(long, value_enum)]
    pub model: ModelName,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long = "group-order", default_value_t = 1)]
    pub group_order: u32,
    /// `a:b:steps`, log-spaced.
    #[arg(long = "tau-grid", default_value = "0.001:1:10")]
    pub tau_grid: String,
    /// Tolerance for monotonicity and the minimum-length bound.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub out: OutDir,
}

pub(crate) fn mode(sequential: bool) -> Mode {
    if sequential {
        Mode::Sequential
    } else {
        Mode::Parallel
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn emit(out: &mut dyn Write, text: impl fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::new(Exit::Io, format!("stdout: {e}")))
}

fn classify2(signature: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let sig = match doc::parse(signature)?.body {
        Body::Sig(s) => s,
        other => return Err(CliError::new(Exit::Parse, format!("expected a signature, got a {} document", other.kind()))),
    };
    let class = sig.geometry();
    emit(out, format!("{class}, chi_orb = {}", sig.orb_euler_char()))?;
    if class == GeometryClass::Euclidean {
        if let Ok(m) = sig.mapping_class_group() {
            emit(out, format!("mapping class group: {} (order {})", m.name, m.order))?;
        }
    }
    Ok(())
}

fn validate3(file: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let d = match doc::parse(&read(file)?)?.body {
        Body::Orb3(d) => d,
        other => return Err(CliError::new(Exit::Parse, format!("expected an orb3 document, got {}", other.kind()))),
    };
    emit(
        out,
        format!(
            "valid 3-orbifold: {} component(s), {} edge(s), {} vertex(es)",
            d.components.len(),
            d.graph.edges.len(),
            d.graph.vertices.len()
        ),
    )?;
    for (i, c) in d.components.iter().enumerate() {
        emit(out, format!("component {i}: {c}"))?;
    }
    for id in d.graph.vertices.keys() {
        let [p, q, r] = d.graph.vertex_labels(id).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
        let link = vertex_link(p, q, r).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
        emit(out, format!("vertex {id}: link {link}"))?;
    }
    let labels: Vec<String> = d.edge_label_multiset().iter().map(u32::to_string).collect();
    emit(out, format!("edge labels: {{{}}}", labels.join(", ")))?;
    for b in &d.boundary {
        if is_good_spherical(b) {
            let fill = discal_fill(b).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
            emit(out, format!("boundary {b}: discal fill {fill}"))?;
        } else {
            emit(out, format!("boundary {b}"))?;
        }
    }
    Ok(())
}

fn read_graph(file: &Path) -> Result<GraphOrb, CliError> {
    match doc::parse(&read(file)?)?.body {
        Body::Graph(g) => Ok(g),
        other => Err(CliError::new(Exit::Parse, format!("expected a graph document, got {}", other.kind()))),
    }
}

fn split(file: &Path, at: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let g = read_graph(file)?;
    let (piece, index) = at
        .rsplit_once('.')
        .and_then(|(p, i)| Some((p, i.parse::<usize>().ok()?)))
        .ok_or_else(|| CliError::new(Exit::Parse, format!("--split expects <piece>.<index>, got `{at}`")))?;
    let s = compressible_boundary_split(&g, piece, index)
        .map_err(|e| CliError::new(Exit::Invariant, format!("compressible split failed: {e}")))?;
    emit(out, format!("solid-toric piece: {} over {}", s.token, s.solid_toric.base))?;
    emit(out, format!("remaining strong pieces: {}", s.rest.strong.pieces.len()))?;
    for line in s.rest.strong.to_string().lines() {
        emit(out, format!("  {line}"))?;
    }
    for t in &s.rest.recognized {
        emit(out, format!("  recognized {t}"))?;
    }
    Ok(())
}

fn decompose(file: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let g = read_graph(file)?;
    let r = normalize(&g).map_err(|e| CliError::new(Exit::Invariant, format!("normalization failed: {e}")))?;
    emit(out, format!("strong pieces: {}", r.strong.pieces.len()))?;
    for line in r.strong.to_string().lines() {
        emit(out, format!("  {line}"))?;
    }
    emit(out, format!("surgeries: {}", r.surgeries.len()))?;
    for s in &r.surgeries {
        emit(out, format!("  {s}"))?;
    }
    emit(out, format!("recognized: {}", r.recognized.len()))?;
    for t in &r.recognized {
        emit(out, format!("  recognized {t}"))?;
    }
    emit(out, format!("trace: {}", r.trace.len()))?;
    for t in &r.trace {
        emit(out, format!("  {t}"))?;
    }
    let strong = verify_strong(&r.strong).map_err(|e| CliError::new(Exit::Invariant, e.to_string()))?;
    if !strong.strong {
        let why: Vec<String> = strong
            .violations
            .iter()
            .map(|v| format!("gluing {} breaks condition {}: {}", v.gluing, v.condition, v.reason))
            .collect();
        return Err(CliError::new(Exit::Invariant, format!("result is not a strong graph orbifold: {}", why.join("; "))));
    }
    emit(out, "verify_strong: pass")?;
    r.reconcile(g.gluings.len())
        .map_err(|e| CliError::new(Exit::Invariant, format!("gluing-count accounting does not reconcile: {e}")))?;
    emit(out, format!("gluing accounting: pass ({} -> {})", g.gluings.len(), r.strong.gluings.len()))
}

pub(crate) fn parse_grid(text: &str) -> Result<(f64, f64, usize), CliError> {
    let bad = || CliError::new(Exit::Parse, format!("grid must be a:b:steps, got `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a = parts[0].parse().map_err(|_| bad())?;
    let b = parts[1].parse().map_err(|_| bad())?;
    let n = parts[2].parse().map_err(|_| bad())?;
    Ok((a, b, n))
}

fn lvolume(args: &LvolumeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bad_model = |e: lfunc::LfuncError| CliError::new(Exit::Parse, e.to_string());
    let flow = match args.model {
        ModelName::Flat => ModelFlow::flat(args.n, args.group_order),
        ModelName::Sphere => ModelFlow::sphere(args.n, args.group_order),
        ModelName::Cylinder => ModelFlow::cylinder(args.n, args.group_order),
    }
    .map_err(bad_model)?;
    let (a, b, steps) = parse_grid(&args.tau_grid)?;
    let grid = lfunc::log_grid(a, b, steps).map_err(bad_model)?;
    let numeric = |e: lfunc::LfuncError| CliError::new(Exit::Numeric, e.to_string());
    let curve = lfunc::reduced_volume_curve(&flow, &grid, &QuadSpec::default(), args.tol, mode(args.sequential)).map_err(numeric)?;
    let dir = args.out.create()?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["tau", "reduced_volume", "tail"]).map_err(|e| io_error(dir, e))?;
    for ((tau, v), tail) in curve.points.iter().zip(&curve.tails) {
        csv.serialize((tau, v, tail)).map_err(|e| io_error(dir, e))?;
    }
    let bytes = csv.into_inner().map_err(|e| io_error(dir, e))?;
    let path = dir.join("lvolume.csv");
    fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
    emit(out, format!("reduced volume: {} samples written to {}", curve.points.len(), path.display()))?;
    let mut failures = Vec::new();
    match curve.verdict.violation {
        None => emit(out, format!("monotone (nonincreasing within {}): pass", args.tol))?,
        Some(i) => {
            emit(out, format!("monotone (nonincreasing within {}): FAIL at index {i}", args.tol))?;
            failures.push(format!(
                "reduced volume must be nonincreasing in tau; it rises from {} to {} between tau = {} and {}",
                curve.points[i].1,
                curve.points[i + 1].1,
                curve.points[i].0,
                curve.points[i + 1].0
            ));
        }
    }
    for &tau in &grid {
        let m = lfunc::min_reduced_length(&flow, tau, &SearchSpec::default(), &ShootSpec::default(), 1e-3).map_err(numeric)?;
        let verdict = if m.pass { "pass" } else { "FAIL" };
        emit(out, format!("min reduced length at tau={tau}: l={} <= n/2={}: {verdict}", m.l, m.bound))?;
        if !m.pass {
            failures.push(format!("some point must have reduced length at most n/2 at tau = {tau}, minimum is {}", m.l));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(Exit::Invariant, failures.join("; ")))
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Classify2 { signature } => classify2(signature, out),
        Command::Validate3 { file } => validate3(file, out),
        Command::Decompose { file, split: None } => decompose(file, out),
        Command::Decompose { file, split: Some(at) } => split(file, at, out),
        Command::Flow2(args) => flows::flow2(args, out),
        Command::Flow3(args) => flows::flow3(args, out),
        Command::Lvolume(args) => lvolume(args, out),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Errors go to `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Parse as i32 } else { Exit::Ok as i32 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => Exit::Ok as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit as i32
        }
    }
}
