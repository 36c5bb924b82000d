//! L-length, reduced length and reduced volume on homogeneous model flows.
//!
//! Every model is a product of a flat factor and (possibly) a shrinking round
//! sphere factor, so L-geodesics from the basepoint are straight in the
//! flat factor and run along great circles in the sphere factor. Paths are
//! written in a chart centered at the basepoint: Cartesian coordinates on
//! the flat factor and normal coordinates of the unit sphere on the sphere
//! factor. All integration is done in `sigma = sqrt(tau)`, where the
//! geodesic equation is regular at the basepoint.

use std::f64::consts::PI;

use thiserror::Error;

use crate::numeric::{composite_rule, golden_min};
use crate::par::{self, Mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LfuncError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("path leaves the chart (sphere angle {angle} > pi)")]
    ExitsChart { angle: f64 },
    #[error("point has dimension {got}, model has dimension {want}")]
    Dimension { got: usize, want: usize },
    #[error("shooting did not reach the target (miss {miss:e})")]
    Search { miss: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Static flat `R^n // Z_m`.
    FlatQuotient { n: usize, order: u32 },
    /// Shrinking round `S^n // Gamma`, `|Gamma| = order`.
    ShrinkingRoundQuotient { n: usize, order: u32 },
    /// Shrinking `S^(n-1) // Gamma x R`.
    CylinderQuotient { n: usize, order: u32 },
}

/// A model flow viewed backwards from time `t0`. For the shrinking models
/// the sphere factor of dimension `k` has radius squared
/// `2 (k - 1) (singular_time - t)`. The models are homogeneous, so the
/// basepoint is the chart origin without loss of generality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelFlow {
    pub kind: ModelKind,
    pub t0: f64,
    pub singular_time: f64,
}

impl ModelFlow {
    pub fn new(kind: ModelKind, t0: f64, singular_time: f64) -> Result<Self, LfuncError> {
        let (n, order) = match kind {
            ModelKind::FlatQuotient { n, order } => (n, order),
            ModelKind::ShrinkingRoundQuotient { n, order } => (n, order),
            ModelKind::CylinderQuotient { n, order } => {
                if n < 3 {
                    return Err(LfuncError::InvalidModel(format!(
                        "cylinder needs a sphere factor of dimension >= 2, got n = {n}"
                    )));
                }
                (n, order)
            }
        };
        if n == 0 || order == 0 {
            return Err(LfuncError::InvalidModel(format!("n = {n}, group order = {order}")));
        }
        if matches!(kind, ModelKind::ShrinkingRoundQuotient { n: 1, .. }) {
            return Err(LfuncError::InvalidModel("a round circle does not shrink".into()));
        }
        let shrinking = !matches!(kind, ModelKind::FlatQuotient { .. });
        if shrinking && !(singular_time > t0) {
            return Err(LfuncError::InvalidModel(format!(
                "singular time {singular_time} must be after t0 = {t0}"
            )));
        }
        Ok(ModelFlow { kind, t0, singular_time })
    }

    pub fn flat(n: usize, order: u32) -> Result<Self, LfuncError> {
        Self::new(ModelKind::FlatQuotient { n, order }, 0.0, f64::INFINITY)
    }

    /// Shrinking model whose singular time is one unit after `t0 = 0`.
    pub fn sphere(n: usize, order: u32) -> Result<Self, LfuncError> {
        Self::new(ModelKind::ShrinkingRoundQuotient { n, order }, 0.0, 1.0)
    }

    pub fn cylinder(n: usize, order: u32) -> Result<Self, LfuncError> {
        Self::new(ModelKind::CylinderQuotient { n, order }, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::FlatQuotient { n, .. }
            | ModelKind::ShrinkingRoundQuotient { n, .. }
            | ModelKind::CylinderQuotient { n, .. } => n,
        }
    }

    pub fn group_order(&self) -> u32 {
        match self.kind {
            ModelKind::FlatQuotient { order, .. }
            | ModelKind::ShrinkingRoundQuotient { order, .. }
            | ModelKind::CylinderQuotient { order, .. } => order,
        }
    }

    /// Number of flat chart coordinates; they come first.
    pub fn flat_dim(&self) -> usize {
        match self.kind {
            ModelKind::FlatQuotient { n, .. } => n,
            ModelKind::ShrinkingRoundQuotient { .. } => 0,
            ModelKind::CylinderQuotient { .. } => 1,
        }
    }

    pub fn sphere_dim(&self) -> usize {
        self.dim() - self.flat_dim()
    }

    fn time_left(&self, tau: f64) -> f64 {
        self.singular_time - self.t0 + tau
    }

    /// Radius of the sphere factor at `t0 - tau`.
    pub fn radius(&self, tau: f64) -> f64 {
        let k = self.sphere_dim();
        if k == 0 {
            return 0.0;
        }
        (2.0 * (k as f64 - 1.0) * self.time_left(tau)).sqrt()
    }

    pub fn scalar_curvature(&self, tau: f64) -> f64 {
        let k = self.sphere_dim();
        if k == 0 {
            0.0
        } else {
            k as f64 / (2.0 * self.time_left(tau))
        }
    }

    /// Ricci curvature on the sphere factor, as a multiple of the metric.
    fn ricci_sphere(&self, tau: f64) -> f64 {
        if self.sphere_dim() == 0 {
            0.0
        } else {
            0.5 / self.time_left(tau)
        }
    }

    fn split<'a>(&self, x: &'a [f64]) -> Result<(&'a [f64], &'a [f64]), LfuncError> {
        if x.len() != self.dim() {
            return Err(LfuncError::Dimension { got: x.len(), want: self.dim() });
        }
        Ok(x.split_at(self.flat_dim()))
    }

    /// `|w|^2` at chart point `x` in the metric at `t0 - tau`.
    pub fn norm_sq(&self, tau: f64, x: &[f64], w: &[f64]) -> Result<f64, LfuncError> {
        let (_, xs) = self.split(x)?;
        let (wa, ws) = self.split(w)?;
        let flat: f64 = wa.iter().map(|v| v * v).sum();
        if xs.is_empty() {
            return Ok(flat);
        }
        let rho = norm(xs);
        if rho > PI {
            return Err(LfuncError::ExitsChart { angle: rho });
        }
        let total: f64 = ws.iter().map(|v| v * v).sum();
        let sphere = if rho < 1e-12 {
            total
        } else {
            let radial = xs.iter().zip(ws).map(|(a, b)| a * b).sum::<f64>() / rho;
            let stretch = rho.sin() / rho;
            radial * radial + stretch * stretch * (total - radial * radial).max(0.0)
        };
        let r = self.radius(tau);
        Ok(flat + r * r * sphere)
    }

    /// Volume of a radially symmetric shell: `dvol = flat_shell * sphere_shell`
    /// in the two radial coordinates, at `t0 - tau`.
    fn shell(&self, tau: f64, flat_r: f64, angle: f64) -> f64 {
        let (a, k) = (self.flat_dim(), self.sphere_dim());
        let flat = match a {
            0 => 1.0,
            1 => 2.0,
            _ => unit_sphere_area(a - 1) * flat_r.powi(a as i32 - 1),
        };
        let sphere = if k == 0 {
            1.0
        } else {
            unit_sphere_area(k - 1) * self.radius(tau).powi(k as i32) * angle.sin().powi(k as i32 - 1)
        };
        flat * sphere
    }
}

/// Area of the unit `S^k`.
pub fn unit_sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * unit_sphere_area(k - 2),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A path from the basepoint, sampled at increasing `tau` starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LPath {
    pub tau: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl LPath {
    pub fn horizon(&self) -> f64 {
        self.tau.last().copied().unwrap_or(0.0)
    }

    pub fn endpoint(&self) -> &[f64] {
        self.points.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn validate(&self, dim: usize) -> Result<(), LfuncError> {
        if self.tau.len() < 3 || self.tau.len() != self.points.len() {
            return Err(LfuncError::InvalidPath(format!(
                "{} times for {} points (need >= 3)",
                self.tau.len(),
                self.points.len()
            )));
        }
        if self.tau[0] != 0.0 {
            return Err(LfuncError::InvalidPath("path must start at tau = 0".into()));
        }
        if self.tau.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LfuncError::InvalidPath("tau must increase strictly".into()));
        }
        if let Some(p) = self.points.iter().find(|p| p.len() != dim) {
            return Err(LfuncError::Dimension { got: p.len(), want: dim });
        }
        if self.points[0].iter().any(|v| *v != 0.0) {
            return Err(LfuncError::InvalidPath("path must start at the basepoint".into()));
        }
        Ok(())
    }
}

/// Three-point derivative on a nonuniform grid.
fn derivative(x: &[f64], y: &[f64], i: usize) -> f64 {
    let n = x.len();
    let (a, b, c) = if i == 0 {
        (0, 1, 2)
    } else if i == n - 1 {
        (n - 3, n - 2, n - 1)
    } else {
        (i - 1, i, i + 1)
    };
    let t = x[i];
    let la = (2.0 * t - x[b] - x[c]) / ((x[a] - x[b]) * (x[a] - x[c]));
    let lb = (2.0 * t - x[a] - x[c]) / ((x[b] - x[a]) * (x[b] - x[c]));
    let lc = (2.0 * t - x[a] - x[b]) / ((x[c] - x[a]) * (x[c] - x[b]));
    la * y[a] + lb * y[b] + lc * y[c]
}

/// Simpson's rule on a nonuniform grid; an odd final interval is closed
/// with the three-point rule through the last samples.
fn simpson(x: &[f64], f: &[f64]) -> f64 {
    let pair = |i: usize| {
        let (h0, h1) = (x[i + 1] - x[i], x[i + 2] - x[i + 1]);
        (h0 + h1) / 6.0 * ((2.0 - h1 / h0) * f[i] + (h0 + h1).powi(2) / (h0 * h1) * f[i + 1] + (2.0 - h0 / h1) * f[i + 2])
    };
    let n = x.len() - 1;
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 <= n {
        total += pair(i);
        i += 2;
    }
    if i < n {
        // Integral over the last interval of the parabola through the last three samples.
        let (h0, h1) = (x[n - 1] - x[n - 2], x[n] - x[n - 1]);
        total += -h1.powi(3) / (6.0 * h0 * (h0 + h1)) * f[n - 2]
            + h1 * (h1 + 3.0 * h0) / (6.0 * h0) * f[n - 1]
            + h1 * (2.0 * h1 + 3.0 * h0) / (6.0 * (h0 + h1)) * f[n];
    }
    total
}

/// L-length `int_0^taubar sqrt(tau) (R + |gamma'|^2) dtau` of a sampled
/// path, computed in `sigma = sqrt(tau)` where the integrand
/// `2 sigma^2 R + |d gamma / d sigma|^2 / 2` is bounded.
pub fn l_functional(flow: &ModelFlow, path: &LPath) -> Result<f64, LfuncError> {
    path.validate(flow.dim())?;
    let sigma: Vec<f64> = path.tau.iter().map(|t| t.sqrt()).collect();
    let dim = flow.dim();
    let columns: Vec<Vec<f64>> = (0..dim).map(|d| path.points.iter().map(|p| p[d]).collect()).collect();
    let mut f = Vec::with_capacity(sigma.len());
    for i in 0..sigma.len() {
        let w: Vec<f64> = columns.iter().map(|c| derivative(&sigma, c, i)).collect();
        let tau = path.tau[i];
        let speed = flow.norm_sq(tau, &path.points[i], &w)?;
        f.push(2.0 * sigma[i] * sigma[i] * flow.scalar_curvature(tau) + 0.5 * speed);
    }
    Ok(simpson(&sigma, &f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootSpec {
    /// Uniform steps in `sigma`.
    pub steps: usize,
}

impl Default for ShootSpec {
    fn default() -> Self {
        ShootSpec { steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    pub path: LPath,
    /// L-length accumulated along the integration.
    pub length: f64,
}

/// Radial state: flat distance, sphere angle, their sigma-derivatives and
/// the running L-length.
type Radial = [f64; 5];

fn radial_rhs(flow: &ModelFlow, sigma: f64, y: &Radial) -> Radial {
    let tau = sigma * sigma;
    let r = flow.radius(tau);
    // d/dsigma of the velocity: the flat part is free, the sphere part is
    // damped by 4 sigma Ric.
    let sphere_acc = -4.0 * sigma * flow.ricci_sphere(tau) * y[3];
    let dl = 2.0 * tau * flow.scalar_curvature(tau) + 0.5 * (y[2] * y[2] + r * r * y[3] * y[3]);
    [y[2], y[3], 0.0, sphere_acc, dl]
}

fn rk4(flow: &ModelFlow, sigma: f64, h: f64, y: &Radial) -> Radial {
    let add = |a: &Radial, k: &Radial, s: f64| -> Radial { std::array::from_fn(|i| a[i] + s * k[i]) };
    let k1 = radial_rhs(flow, sigma, y);
    let k2 = radial_rhs(flow, sigma + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = radial_rhs(flow, sigma + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = radial_rhs(flow, sigma + h, &add(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Integrates the radial system with initial speeds `(flat, sphere)`;
/// returns the endpoint state and optionally the samples.
fn shoot_radial(
    flow: &ModelFlow,
    speeds: (f64, f64),
    horizon: f64,
    spec: &ShootSpec,
    mut sample: impl FnMut(f64, &Radial),
) -> Result<Radial, LfuncError> {
    let end = horizon.sqrt();
    let h = end / spec.steps as f64;
    let mut y: Radial = [0.0, 0.0, 2.0 * speeds.0, 2.0 * speeds.1, 0.0];
    sample(0.0, &y);
    for i in 0..spec.steps {
        let sigma = i as f64 * h;
        y = rk4(flow, sigma, h, &y);
        if y[1] > PI + 1e-12 {
            return Err(LfuncError::ExitsChart { angle: y[1] });
        }
        sample(sigma + h, &y);
    }
    Ok(y)
}

fn unit(x: &[f64]) -> Vec<f64> {
    let r = norm(x);
    if r == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / r).collect()
    }
}

/// Solves the L-geodesic equation
/// `beta'' = 2 sigma^2 grad R - 4 sigma Ric(beta')`, `beta(sigma) = gamma(sigma^2)`,
/// from the basepoint with `lim sqrt(tau) gamma'(tau) = v` (chart vector).
pub fn l_geodesic_shoot(flow: &ModelFlow, v: &[f64], horizon: f64, spec: &ShootSpec) -> Result<Geodesic, LfuncError> {
    if !(horizon > 0.0) || spec.steps < 2 {
        return Err(LfuncError::InvalidPath(format!("horizon {horizon}, {} steps", spec.steps)));
    }
    let (va, vs) = flow.split(v)?;
    let (ua, us) = (unit(va), unit(vs));
    let mut tau = Vec::with_capacity(spec.steps + 1);
    let mut points = Vec::with_capacity(spec.steps + 1);
    let y = shoot_radial(flow, (norm(va), norm(vs)), horizon, spec, |sigma, y| {
        tau.push(sigma * sigma);
        points.push(ua.iter().map(|u| u * y[0]).chain(us.iter().map(|u| u * y[1])).collect());
    })?;
    Ok(Geodesic { path: LPath { tau, points }, length: y[4] })
}

/// Reduced length `l(q, taubar) = L(q, taubar) / (2 sqrt(taubar))`.
///
/// By symmetry the minimizing initial velocity is parallel to `q` in each
/// factor, and the endpoint depends monotonically on its size, so the
/// minimizer is found by shooting on the two speeds.
pub fn reduced_length(flow: &ModelFlow, q: &[f64], horizon: f64, spec: &ShootSpec) -> Result<f64, LfuncError> {
    let (qa, qs) = flow.split(q)?;
    let target = (norm(qa), norm(qs));
    if target.1 > PI {
        return Err(LfuncError::ExitsChart { angle: target.1 });
    }
    Ok(radial_length(flow, target, horizon, spec)? / (2.0 * horizon.sqrt()))
}

fn radial_length(flow: &ModelFlow, target: (f64, f64), horizon: f64, spec: &ShootSpec) -> Result<f64, LfuncError> {
    let sigma = horizon.sqrt();
    // The endpoint is linear in each speed, so the secant through the
    // origin converges at once; iterate for robustness.
    let mut speeds = (target.0 / (2.0 * sigma), target.1 / (2.0 * sigma));
    let tol = 1e-13;
    for _ in 0..20 {
        let y = shoot_radial(flow, speeds, horizon, spec, |_, _| {})?;
        let miss = (y[0] - target.0).abs().max((y[1] - target.1).abs());
        if miss <= tol * (1.0 + target.0.max(target.1)) {
            return Ok(y[4]);
        }
        if y[0] > 0.0 {
            speeds.0 *= target.0 / y[0];
        }
        if y[1] > 0.0 {
            speeds.1 *= target.1 / y[1];
        }
    }
    let y = shoot_radial(flow, speeds, horizon, spec, |_, _| {})?;
    Err(LfuncError::Search {
        miss: (y[0] - target.0).abs().max((y[1] - target.1).abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    pub panels: usize,
    pub order: usize,
    /// Radial domains are cut where the Gaussian bound on `exp(-l)` drops
    /// below `exp(-cutoff^2)`.
    pub cutoff: f64,
    pub shoot: ShootSpec,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { panels: 16, order: 10, cutoff: 7.0, shoot: ShootSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedVolume {
    pub value: f64,
    /// Upper estimate of the truncated part of the integral.
    pub tail: f64,
}

/// `taubar^(-n/2) int exp(-l(q, taubar)) dvol(q)` over the quotient: the
/// integral over the smooth model in its radial coordinates, divided by the
/// group order.
pub fn reduced_volume(flow: &ModelFlow, horizon: f64, quad: &QuadSpec, mode: Mode) -> Result<ReducedVolume, LfuncError> {
    if !(horizon > 0.0) {
        return Err(LfuncError::InvalidPath(format!("horizon {horizon}")));
    }
    let width = 2.0 * horizon.sqrt();
    let flat_max = quad.cutoff * width;
    let (mut sphere_max, mut sphere_cut) = (0.0, false);
    if flow.sphere_dim() > 0 {
        // The radius only grows with tau, so the angular Gaussian is at
        // least as narrow as width / r(0).
        let limit = quad.cutoff * width / flow.radius(0.0);
        sphere_max = limit.min(PI);
        sphere_cut = limit < PI;
    }
    let rule = |hi: f64| composite_rule(0.0, hi, quad.panels, quad.order);
    let (fx, fw) = if flow.flat_dim() > 0 { rule(flat_max) } else { (vec![0.0], vec![1.0]) };
    let (sx, sw) = if flow.sphere_dim() > 0 { rule(sphere_max) } else { (vec![0.0], vec![1.0]) };
    let cells = fx.len() * sx.len();
    let terms: Vec<Result<f64, LfuncError>> = par::map_range(mode, cells, |c| {
        let (i, j) = (c / sx.len(), c % sx.len());
        let l = radial_length(flow, (fx[i], sx[j]), horizon, &quad.shoot)? / width;
        Ok(fw[i] * sw[j] * (-l).exp() * flow.shell(horizon, fx[i], sx[j]))
    });
    let mut integral = 0.0;
    for t in terms {
        integral += t?;
    }
    let scale = horizon.powf(-(flow.dim() as f64) / 2.0) / flow.group_order() as f64;
    let value = integral * scale;
    let mut tail = 0.0;
    if flow.flat_dim() > 0 {
        tail += (-quad.cutoff * quad.cutoff).exp() * (1.0 + flow.flat_dim() as f64 / quad.cutoff);
    }
    if sphere_cut {
        tail += (-quad.cutoff * quad.cutoff).exp() * (1.0 + flow.sphere_dim() as f64 / quad.cutoff);
    }
    Ok(ReducedVolume { value, tail: tail * value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneVerdict {
    pub pass: bool,
    /// First index `i` with `V(i + 1) > V(i) + tol`.
    pub violation: Option<usize>,
}

pub fn check_monotone(values: &[(f64, f64)], tol: f64) -> Result<MonotoneVerdict, LfuncError> {
    if values.len() < 2 {
        return Err(LfuncError::TooFewSamples(values.len()));
    }
    let violation = values.windows(2).position(|w| w[1].1 > w[0].1 + tol);
    Ok(MonotoneVerdict { pass: violation.is_none(), violation })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVolumeCurve {
    pub points: Vec<(f64, f64)>,
    pub tails: Vec<f64>,
    pub verdict: MonotoneVerdict,
}

pub fn reduced_volume_curve(
    flow: &ModelFlow,
    horizons: &[f64],
    quad: &QuadSpec,
    tol: f64,
    mode: Mode,
) -> Result<ReducedVolumeCurve, LfuncError> {
    let mut points = Vec::with_capacity(horizons.len());
    let mut tails = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let v = reduced_volume(flow, h, quad, mode)?;
        points.push((h, v.value));
        tails.push(v.tail);
    }
    let verdict = check_monotone(&points, tol)?;
    Ok(ReducedVolumeCurve { points, tails, verdict })
}

/// `steps` horizons from `a` to `b`, log-spaced.
pub fn log_grid(a: f64, b: f64, steps: usize) -> Result<Vec<f64>, LfuncError> {
    if !(a > 0.0 && b > a) || steps < 2 {
        return Err(LfuncError::InvalidPath(format!("grid {a}:{b}:{steps}")));
    }
    let r = (b / a).ln() / (steps - 1) as f64;
    Ok((0..steps).map(|i| if i == steps - 1 { b } else { a * (r * i as f64).exp() }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpec {
    /// Coarse samples per radial coordinate before refinement.
    pub coarse: usize,
    pub tol: f64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec { coarse: 24, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinLength {
    /// Minimizing point in the chart.
    pub q: Vec<f64>,
    pub l: f64,
    /// `n / 2`.
    pub bound: f64,
    pub pass: bool,
}

/// Minimum of `l(., taubar)`: a coarse grid over the radial coordinates,
/// then golden-section refinement of each coordinate in turn. Ties go to
/// the point closer to the basepoint.
pub fn min_reduced_length(
    flow: &ModelFlow,
    horizon: f64,
    search: &SearchSpec,
    shoot: &ShootSpec,
    tol: f64,
) -> Result<MinLength, LfuncError> {
    let width = 2.0 * horizon.sqrt();
    let flat_max = if flow.flat_dim() > 0 { 4.0 * width } else { 0.0 };
    let sphere_max = if flow.sphere_dim() > 0 { PI } else { 0.0 };
    let eval = |a: f64, s: f64| radial_length(flow, (a, s), horizon, shoot).map(|x| x / width);
    let m = search.coarse.max(2);
    let grid = |hi: f64| -> Vec<f64> {
        if hi == 0.0 {
            vec![0.0]
        } else {
            (0..=m).map(|i| hi * i as f64 / m as f64).collect()
        }
    };
    let (ga, gs) = (grid(flat_max), grid(sphere_max));
    let mut best = (0.0, 0.0, f64::INFINITY);
    for &a in &ga {
        for &s in &gs {
            let l = eval(a, s)?;
            if l < best.2 {
                best = (a, s, l);
            }
        }
    }
    let step = |hi: f64| hi / m as f64;
    for _ in 0..3 {
        if flat_max > 0.0 {
            let (lo, hi) = ((best.0 - step(flat_max)).max(0.0), (best.0 + step(flat_max)).min(flat_max));
            let (a, l) = golden_min(|a| eval(a, best.1).unwrap_or(f64::INFINITY), lo, hi, search.tol);
            if l < best.2 {
                best = (a, best.1, l);
            }
        }
        if sphere_max > 0.0 {
            let (lo, hi) = ((best.1 - step(sphere_max)).max(0.0), (best.1 + step(sphere_max)).min(sphere_max));
            let (s, l) = golden_min(|s| eval(best.0, s).unwrap_or(f64::INFINITY), lo, hi, search.tol);
            if l < best.2 {
                best = (best.0, s, l);
            }
        }
    }
    let mut q = vec![0.0; flow.dim()];
    if flow.flat_dim() > 0 {
        q[0] = best.0;
    }
    if flow.sphere_dim() > 0 {
        q[flow.flat_dim()] = best.1;
    }
    let bound = flow.dim() as f64 / 2.0;
    Ok(MinLength { q, l: best.2, bound, pass: best.2 <= bound + tol })
}
