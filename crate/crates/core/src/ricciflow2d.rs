//! Ricci flow on rotationally symmetric 2-orbifolds `S2(k0,k1)`.
//!
//! A profile is the warped metric `ds^2 + phi(s)^2 dtheta^2` sampled at
//! nodes `s_0 < ... < s_N` with `phi = 0` at both tips. The flow moves the
//! nodes with the metric (each cell length evolves like the metric does) and
//! the two end cells are slaved to the cone condition `phi_1 / l = 1/k`, so
//! the discrete curvature sum telescopes to `2 pi chi` exactly. The grid is
//! resampled to uniform arc length on a schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{bisect, Pchip};
use crate::orb2::TwoOrbSig;
use crate::par::{self, Mode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Flow2Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    Unstable { dt: f64, bound: f64 },
    #[error("warp function reached zero at node {node} (t = {t}); extinction or neck")]
    Extinction { node: usize, t: f64 },
    #[error("shooting bracket [{0}, {1}] does not contain a solution")]
    Bracket(f64, f64),
    #[error("no convergence within the step budget (residual {0:e})")]
    NotConverged(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotProfile {
    /// Arc length from the first tip.
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
    /// Cone orders at the first and last tip (1 = smooth).
    pub cone: [u32; 2],
}

impl RotProfile {
    pub fn new(xi: Vec<f64>, phi: Vec<f64>, cone: [u32; 2]) -> Result<Self, Flow2Error> {
        let p = RotProfile { xi, phi, cone };
        p.validate()?;
        Ok(p)
    }

    /// Samples `phi` at `n` uniform cells over `[0, length]`.
    pub fn from_fn(n: usize, length: f64, cone: [u32; 2], phi: impl Fn(f64) -> f64) -> Result<Self, Flow2Error> {
        let xi: Vec<f64> = (0..=n).map(|i| length * i as f64 / n as f64).collect();
        let mut ph: Vec<f64> = xi.iter().map(|&s| phi(s)).collect();
        ph[0] = 0.0;
        ph[n] = 0.0;
        Self::new(xi, ph, cone)
    }

    /// Round sphere (or football `S2(k,k)`) of curvature one.
    pub fn round(n: usize, k: u32) -> Self {
        Self::from_fn(n, PI, [k, k], |s| s.sin() / k as f64).expect("valid")
    }

    /// Smooth pole at the first tip, cone of order `k` at the last, area 4 pi.
    pub fn teardrop_seed(n: usize, k: u32) -> Self {
        let kf = k as f64;
        let (a, b, e) = if k == 1 { (0.85, 0.0, 0.05) } else { ((1.0 + 1.0 / kf) / 2.0, (1.0 - 1.0 / kf) / 4.0, 0.0) };
        // Area 2 pi (L/pi)^2 * 2a (the sin 3x term integrates to 2e/3).
        let scale = (1.0 / (a + e / 3.0)).sqrt();
        let length = PI * scale;
        Self::from_fn(n, length, [1, k], |s| {
            let x = s / scale;
            scale * (a * x.sin() + b * (2.0 * x).sin() + e * (3.0 * x).sin())
        })
        .expect("valid")
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn cells(&self) -> Vec<f64> {
        self.xi.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn signature(&self) -> TwoOrbSig {
        let cones: Vec<u32> = self.cone.iter().copied().filter(|&k| k > 1).collect();
        TwoOrbSig::sphere(&cones).expect("orders at least 2")
    }

    pub fn chi(&self) -> f64 {
        let c = self.signature().orb_euler_char();
        *c.numer() as f64 / *c.denom() as f64
    }

    pub fn area(&self) -> f64 {
        2.0 * PI * crate::numeric::trapezoid(&self.xi, &self.phi)
    }

    pub fn validate(&self) -> Result<(), Flow2Error> {
        let n = self.xi.len();
        let bad = |m: String| Err(Flow2Error::InvalidProfile(m));
        if n < 5 || self.phi.len() != n {
            return bad(format!("need at least 5 matching samples, got {n}"));
        }
        if self.cone.iter().any(|&k| k == 0) {
            return bad("cone order must be at least 1".into());
        }
        if self.xi.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("arc length samples must increase strictly".into());
        }
        if self.phi[0].abs() > 1e-12 || self.phi[n - 1].abs() > 1e-12 {
            return bad("warp function must vanish at both tips".into());
        }
        if let Some(i) = (1..n - 1).find(|&i| !(self.phi[i] > 0.0)) {
            return bad(format!("warp function not positive at node {i}"));
        }
        for (end, k) in [(0usize, self.cone[0]), (1, self.cone[1])] {
            let (inner, cell) = if end == 0 {
                (self.phi[1], self.xi[1] - self.xi[0])
            } else {
                (self.phi[n - 2], self.xi[n - 1] - self.xi[n - 2])
            };
            if (inner / cell * k as f64 - 1.0).abs() > 0.05 {
                return bad(format!("tip {end} slope {} does not match cone order {k}", inner / cell));
            }
        }
        Ok(())
    }
}

/// Second difference quotient at interior node `i`.
fn node_curvature(xi: &[f64], phi: &[f64], i: usize) -> f64 {
    let lm = xi[i] - xi[i - 1];
    let lp = xi[i + 1] - xi[i];
    let dm = (phi[i] - phi[i - 1]) / lm;
    let dp = (phi[i + 1] - phi[i]) / lp;
    -(dp - dm) / (0.5 * (lm + lp)) / phi[i]
}

fn curvature_nodes(mode: Mode, xi: &[f64], phi: &[f64]) -> Vec<f64> {
    let n = xi.len() - 1;
    let mut k = vec![0.0; n + 1];
    let inner = par::map_range(mode, n - 1, |j| node_curvature(xi, phi, j + 1));
    k[1..n].copy_from_slice(&inner);
    k[0] = tip_fit(k[2], k[3], xi[1] - xi[0], xi[2] - xi[1], xi[3] - xi[2]);
    k[n] = tip_fit(k[n - 2], k[n - 3], xi[n] - xi[n - 1], xi[n - 1] - xi[n - 2], xi[n - 2] - xi[n - 3]);
    k
}

/// Tip curvature from an even fit `K = a + b s^2` through the second and
/// third nodes, which do not depend on the end cell.
pub(crate) fn tip_fit(k2: f64, k3: f64, first: f64, c1: f64, c2: f64) -> f64 {
    let s2 = first + c1;
    let s3 = s2 + c2;
    (k2 * s3 * s3 - k3 * s2 * s2) / (s3 * s3 - s2 * s2)
}

/// Gaussian curvature `-phi''/phi` at every node; tip values by quadratic
/// extrapolation.
pub fn gauss_curvature(p: &RotProfile) -> Result<Vec<f64>, Flow2Error> {
    p.validate()?;
    Ok(curvature_nodes(Mode::Sequential, &p.xi, &p.phi))
}

/// `integral K dA`. The interior sum telescopes to the end-cell slopes; each
/// tip adds the curvature of the half cell next to it.
pub fn gauss_bonnet(p: &RotProfile) -> Result<f64, Flow2Error> {
    p.validate()?;
    let k = curvature_nodes(Mode::Sequential, &p.xi, &p.phi);
    let n = p.xi.len() - 1;
    let mut sum = 0.0;
    for i in 1..n {
        let h = 0.5 * (p.xi[i + 1] - p.xi[i - 1]);
        sum += k[i] * p.phi[i] * h;
    }
    let l0 = p.xi[1] - p.xi[0];
    let l1 = p.xi[n] - p.xi[n - 1];
    sum += k[0] * l0 * p.phi[1] / 6.0 + k[n] * l1 * p.phi[n - 1] / 6.0;
    Ok(2.0 * PI * sum)
}

/// Same measure as [`gauss_bonnet`] in telescoped form, without validation.
/// On a flow profile it equals `2 pi chi` up to rounding.
pub fn discrete_total_curvature(p: &RotProfile) -> f64 {
    let n = p.xi.len() - 1;
    let k = curvature_nodes(Mode::Sequential, &p.xi, &p.phi);
    let l0 = p.xi[1] - p.xi[0];
    let l1 = p.xi[n] - p.xi[n - 1];
    let front = p.phi[1] / l0 + k[0] * l0 * p.phi[1] / 6.0;
    let back = p.phi[n - 1] / l1 + k[n] * l1 * p.phi[n - 1] / 6.0;
    2.0 * PI * (front + back)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    None,
    AreaPreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow2Params {
    /// Fixed time step; `None` picks `dt_factor * min cell^2` each step.
    pub dt: Option<f64>,
    pub dt_factor: f64,
    pub normalization: Normalization,
    pub regrid_every: usize,
    pub tol: f64,
    #[serde(skip)]
    pub mode: ModeParam,
}

/// Serde-free wrapper so parameters can be snapshotted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeParam(pub Mode);

impl Default for Flow2Params {
    fn default() -> Self {
        Flow2Params {
            dt: None,
            dt_factor: 0.2,
            normalization: Normalization::AreaPreserving,
            regrid_every: 200,
            tol: 1e-4,
            mode: ModeParam(Mode::Sequential),
        }
    }
}

/// Largest stable explicit step for the current grid.
pub fn stability_bound(p: &RotProfile) -> f64 {
    let m = p.cells().into_iter().fold(f64::INFINITY, f64::min);
    0.25 * m * m
}

/// Sets the two end cells so the tip slope is exactly `1/k`: the secant
/// slope plus the curvature of the half cell, `phi/l + K phi l / 6 = 1/k`.
fn slave_ends(phi: &[f64], cells: &mut [f64], cone: [u32; 2]) {
    let n = cells.len();
    let curv = |cells: &[f64], i: usize| {
        let (lm, lp) = (cells[i - 1], cells[i]);
        let dm = (phi[i] - phi[i - 1]) / lm;
        let dp = (phi[i + 1] - phi[i]) / lp;
        -(dp - dm) / (0.5 * (lm + lp)) / phi[i]
    };
    let solve = |inner: f64, k: f64, tip: f64| {
        let disc = 1.0 / (k * k) - 2.0 * tip * inner * inner / 3.0;
        if disc > 0.0 {
            2.0 * inner / (1.0 / k + disc.sqrt())
        } else {
            k * inner
        }
    };
    let (k0, k1) = (cone[0] as f64, cone[1] as f64);
    // The tip fit needs the end cell; iterate from the plain secant guess.
    cells[0] = k0 * phi[1];
    cells[n - 1] = k1 * phi[n - 1];
    for _ in 0..3 {
        let t0 = tip_fit(curv(cells, 2), curv(cells, 3), cells[0], cells[1], cells[2]);
        let t1 = tip_fit(curv(cells, n - 2), curv(cells, n - 3), cells[n - 1], cells[n - 2], cells[n - 3]);
        cells[0] = solve(phi[1], k0, t0);
        cells[n - 1] = solve(phi[n - 1], k1, t1);
    }
}

fn positions(cells: &[f64]) -> Vec<f64> {
    let mut xi = Vec::with_capacity(cells.len() + 1);
    let mut s = 0.0;
    xi.push(0.0);
    for c in cells {
        s += c;
        xi.push(s);
    }
    xi
}

fn area_of(cells: &[f64], phi: &[f64]) -> f64 {
    2.0 * PI * cells.iter().enumerate().map(|(i, l)| 0.5 * l * (phi[i] + phi[i + 1])).sum::<f64>()
}

/// Semi-discrete right-hand side: `(dphi, dcells)`.
fn rhs(mode: Mode, phi: &[f64], cells: &[f64], kbar: f64) -> (Vec<f64>, Vec<f64>) {
    let xi = positions(cells);
    let n = cells.len();
    let k = curvature_nodes(mode, &xi, phi);
    let mut dphi = vec![0.0; n + 1];
    for i in 1..n {
        dphi[i] = (kbar - k[i]) * phi[i];
    }
    let mut dcells = vec![0.0; n];
    for c in 1..n - 1 {
        dcells[c] = (kbar - 0.5 * (k[c] + k[c + 1])) * cells[c];
    }
    (dphi, dcells)
}

/// One explicit midpoint step.
pub fn flow_step(p: &RotProfile, params: &Flow2Params) -> Result<RotProfile, Flow2Error> {
    let bound = stability_bound(p);
    let dt = params.dt.unwrap_or(params.dt_factor * 4.0 * bound);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Flow2Error::Unstable { dt, bound });
    }
    step_with(p, dt, params)
}

fn step_with(p: &RotProfile, dt: f64, params: &Flow2Params) -> Result<RotProfile, Flow2Error> {
    let mode = params.mode.0;
    let chi = p.chi();
    let mut cells = p.cells();
    slave_ends(&p.phi, &mut cells, p.cone);
    let area0 = area_of(&cells, &p.phi);
    let kbar = |cells: &[f64], phi: &[f64]| match params.normalization {
        Normalization::None => 0.0,
        Normalization::AreaPreserving => 2.0 * PI * chi / area_of(cells, phi),
    };

    let (d1p, d1c) = rhs(mode, &p.phi, &cells, kbar(&cells, &p.phi));
    let mut mp: Vec<f64> = p.phi.iter().zip(&d1p).map(|(a, b)| a + 0.5 * dt * b).collect();
    let mut mc: Vec<f64> = cells.iter().zip(&d1c).map(|(a, b)| a + 0.5 * dt * b).collect();
    slave_ends(&mp, &mut mc, p.cone);
    check_positive(&mp, &mc)?;
    let (d2p, d2c) = rhs(mode, &mp, &mc, kbar(&mc, &mp));
    mp = p.phi.iter().zip(&d2p).map(|(a, b)| a + dt * b).collect();
    mc = cells.iter().zip(&d2c).map(|(a, b)| a + dt * b).collect();
    slave_ends(&mp, &mut mc, p.cone);
    check_positive(&mp, &mc)?;
    if params.normalization == Normalization::AreaPreserving {
        let s = (area0 / area_of(&mc, &mp)).sqrt();
        mp.iter_mut().for_each(|v| *v *= s);
        mc.iter_mut().for_each(|v| *v *= s);
    }
    Ok(RotProfile {
        xi: positions(&mc),
        phi: mp,
        cone: p.cone,
    })
}

fn check_positive(phi: &[f64], cells: &[f64]) -> Result<(), Flow2Error> {
    let n = phi.len() - 1;
    if let Some(i) = (1..n).find(|&i| !(phi[i] > 0.0)) {
        return Err(Flow2Error::Extinction { node: i, t: f64::NAN });
    }
    if let Some(i) = cells.iter().position(|&c| !(c > 0.0)) {
        return Err(Flow2Error::Extinction { node: i, t: f64::NAN });
    }
    Ok(())
}

/// Resamples interior nodes to uniform arc length with a monotone cubic and
/// re-slaves the end cells. Area is restored by scaling.
pub fn regrid(p: &RotProfile) -> RotProfile {
    let n = p.xi.len() - 1;
    let length = p.xi[n];
    let slopes = (1.0 / p.cone[0] as f64, -1.0 / p.cone[1] as f64);
    let interp = Pchip::smooth_extrema(&p.xi, &p.phi, Some(slopes));
    let h = length / n as f64;
    let mut phi = vec![0.0; n + 1];
    for (j, v) in phi.iter_mut().enumerate().take(n).skip(1) {
        *v = interp.eval(j as f64 * h);
    }
    let mut cells = vec![h; n];
    slave_ends(&phi, &mut cells, p.cone);
    let s = (p.area() / area_of(&cells, &phi)).sqrt();
    phi.iter_mut().for_each(|v| *v *= s);
    cells.iter_mut().for_each(|v| *v *= s);
    RotProfile {
        xi: positions(&cells),
        phi,
        cone: p.cone,
    }
}

/// Flow state with its clock, used by the runners and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow2State {
    pub profile: RotProfile,
    pub t: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow2Summary {
    pub t: f64,
    pub area: f64,
    pub total_curvature: f64,
    pub sup_dev: f64,
}

impl Flow2State {
    /// Starts a flow, slaving the end cells of `profile`.
    pub fn new(profile: RotProfile) -> Result<Self, Flow2Error> {
        profile.validate()?;
        let mut cells = profile.cells();
        slave_ends(&profile.phi, &mut cells, profile.cone);
        let start = RotProfile {
            xi: positions(&cells),
            phi: profile.phi.clone(),
            cone: profile.cone,
        };
        Ok(Flow2State {
            profile: start,
            t: 0.0,
            steps: 0,
        })
    }

    pub fn summary(&self) -> Flow2Summary {
        let p = &self.profile;
        let k = curvature_nodes(Mode::Sequential, &p.xi, &p.phi);
        let area = p.area();
        let kbar = 2.0 * PI * p.chi() / area;
        let n = k.len() - 1;
        let sup_dev = k[1..n].iter().map(|v| (v - kbar).abs()).fold(0.0, f64::max);
        Flow2Summary {
            t: self.t,
            area,
            total_curvature: discrete_total_curvature(p),
            sup_dev,
        }
    }

    /// Advances by one step of at most `max_dt`.
    pub fn step(&mut self, params: &Flow2Params, max_dt: f64) -> Result<(), Flow2Error> {
        let bound = stability_bound(&self.profile);
        let dt = params.dt.unwrap_or(params.dt_factor * 4.0 * bound).min(max_dt);
        if dt > bound * (1.0 + 1e-12) {
            return Err(Flow2Error::Unstable { dt, bound });
        }
        self.profile = step_with(&self.profile, dt, params).map_err(|e| match e {
            Flow2Error::Extinction { node, .. } => Flow2Error::Extinction { node, t: self.t },
            other => other,
        })?;
        self.t += dt;
        self.steps += 1;
        if params.regrid_every > 0 && self.steps % params.regrid_every as u64 == 0 {
            self.profile = regrid(&self.profile);
        }
        Ok(())
    }

    /// Runs to `t_end`, calling `observe` every `every` steps and at the end.
    pub fn run_until(
        &mut self,
        params: &Flow2Params,
        t_end: f64,
        every: u64,
        mut observe: impl FnMut(&Flow2State),
    ) -> Result<(), Flow2Error> {
        while self.t < t_end - 1e-15 {
            self.step(params, t_end - self.t)?;
            if every > 0 && self.steps % every == 0 {
                observe(self);
            }
        }
        observe(self);
        Ok(())
    }
}

/// Least-squares fit of `K = lambda - c phi'` over interior nodes; returns
/// `(lambda, c, sup residual)`. A shrinking soliton has zero residual, and
/// constant curvature is the case `c = 0`.
pub fn soliton_residual(p: &RotProfile) -> (f64, f64, f64) {
    let k = curvature_nodes(Mode::Sequential, &p.xi, &p.phi);
    let n = p.xi.len() - 1;
    let mut rows = Vec::with_capacity(n);
    for i in 1..n {
        let lm = p.xi[i] - p.xi[i - 1];
        let lp = p.xi[i + 1] - p.xi[i];
        let d = (lm * lm * (p.phi[i + 1] - p.phi[i]) + lp * lp * (p.phi[i] - p.phi[i - 1])) / (lm * lp * (lm + lp));
        rows.push((d, k[i]));
    }
    let m = rows.len() as f64;
    let (sd, sk) = rows.iter().fold((0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1));
    let (md, mk) = (sd / m, sk / m);
    let (mut sdd, mut sdk) = (0.0, 0.0);
    for (d, kk) in &rows {
        sdd += (d - md) * (d - md);
        sdk += (d - md) * (kk - mk);
    }
    let slope = if sdd > 1e-300 { sdk / sdd } else { 0.0 };
    let c = -slope;
    let lambda = mk + c * md;
    let res = rows.iter().map(|(d, kk)| (kk - lambda + c * d).abs()).fold(0.0, f64::max);
    (lambda, c, res)
}

/// Normalized flow from a teardrop seed until the soliton residual drops
/// below `params.tol` or stops improving.
pub fn run_to_soliton(k: u32, n: usize, params: &Flow2Params, max_time: f64) -> Result<(RotProfile, f64), Flow2Error> {
    let mut state = Flow2State::new(RotProfile::teardrop_seed(n, k))?;
    let mut params = *params;
    params.normalization = Normalization::AreaPreserving;
    let window = 0.25;
    let mut last = f64::INFINITY;
    while state.t < max_time {
        let target = state.t + window;
        state.run_until(&params, target, 0, |_| {})?;
        let (_, _, res) = soliton_residual(&state.profile);
        if res < params.tol || (res > 0.99 * last && res < 1e-2) {
            return Ok((regrid(&state.profile), res));
        }
        last = res;
    }
    let (_, _, res) = soliton_residual(&state.profile);
    Err(Flow2Error::NotConverged(res))
}

/// The shrinking soliton `phi'' = phi (c phi' - 1)` from a smooth pole.
#[derive(Debug, Clone, PartialEq)]
pub struct Soliton {
    pub c: f64,
    pub length: f64,
    pub profile: RotProfile,
}

struct Shot {
    s: Vec<f64>,
    y: Vec<[f64; 2]>,
    end_slope: f64,
    length: f64,
}

#[derive(Debug)]
enum Miss {
    /// Slope never turned negative: the profile opens up.
    NoTurn,
    /// Turned down, then back up before closing.
    Reopened,
}

fn shoot(c: f64, h: f64) -> Result<Shot, Miss> {
    let f = |y: [f64; 2]| [y[1], y[0] * (c * y[1] - 1.0)];
    let rk4 = |y: [f64; 2], h: f64| {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };
    let mut s = vec![0.0];
    let mut ys = vec![[0.0, 1.0]];
    let mut y = [0.0, 1.0];
    let mut t = 0.0;
    while t < 50.0 {
        let next = rk4(y, h);
        if next[0] <= 0.0 && t > 0.0 {
            // Secant iteration on the partial step that lands on phi = 0.
            let (mut lo, mut hi) = (0.0, h);
            let (mut flo, mut fhi) = (y[0], next[0]);
            let mut frac = h * flo / (flo - fhi);
            for _ in 0..60 {
                let v = rk4(y, frac)[0];
                if v.abs() < 1e-15 {
                    break;
                }
                if v > 0.0 {
                    lo = frac;
                    flo = v;
                } else {
                    hi = frac;
                    fhi = v;
                }
                frac = lo + (hi - lo) * flo / (flo - fhi);
            }
            let end = rk4(y, frac);
            t += frac;
            s.push(t);
            ys.push([0.0, end[1]]);
            return Ok(Shot {
                s,
                y: ys,
                end_slope: end[1],
                length: t,
            });
        }
        if next[1] > 0.0 && y[1] < 0.0 {
            return Err(Miss::Reopened);
        }
        if !next[0].is_finite() || next[0] > 1e6 {
            return Err(Miss::NoTurn);
        }
        y = next;
        t += h;
        s.push(t);
        ys.push(y);
    }
    Err(if y[1] > 0.0 { Miss::NoTurn } else { Miss::Reopened })
}

/// Shooting on `c` so that the far tip has slope `-1/k`. The returned
/// profile is sampled on `n` uniform cells with the soliton scale
/// `lambda = 1`.
pub fn soliton_shoot(k: u32, bracket: (f64, f64), n: usize) -> Result<Soliton, Flow2Error> {
    if k < 1 {
        return Err(Flow2Error::InvalidProfile("cone order must be at least 1".into()));
    }
    let h = 1e-3;
    let target = -1.0 / k as f64;
    // Too flat a far end reads as slope 0, too steep as slope -1.
    let miss = |c: f64| match shoot(c, h) {
        Ok(sh) => sh.end_slope - target,
        Err(Miss::Reopened) => -target,
        Err(Miss::NoTurn) => -1.0 - target,
    };
    let c = if k == 1 {
        0.0
    } else {
        bisect(miss, bracket.0, bracket.1, 1e-13).ok_or(Flow2Error::Bracket(bracket.0, bracket.1))?
    };
    let shot = shoot(c, h).map_err(|_| Flow2Error::Bracket(bracket.0, bracket.1))?;
    // Cubic Hermite resampling using the exact derivatives.
    let length = shot.length;
    let mut phi = vec![0.0; n + 1];
    let mut j = 0;
    for (i, v) in phi.iter_mut().enumerate().take(n).skip(1) {
        let t = length * i as f64 / n as f64;
        while shot.s[j + 1] < t {
            j += 1;
        }
        let (s0, s1) = (shot.s[j], shot.s[j + 1]);
        let (y0, y1) = (shot.y[j], shot.y[j + 1]);
        let hh = s1 - s0;
        let u = (t - s0) / hh;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        *v = h00 * y0[0] + h10 * hh * y0[1] + h01 * y1[0] + h11 * hh * y1[1];
    }
    let xi: Vec<f64> = (0..=n).map(|i| length * i as f64 / n as f64).collect();
    let profile = RotProfile { xi, phi, cone: [1, k] };
    Ok(Soliton { c, length, profile })
}

/// Scales `p` by `sqrt(area/area(p))`: `phi -> s phi(xi / s)`.
pub fn rescale_to_area(p: &RotProfile, area: f64) -> RotProfile {
    let s = (area / p.area()).sqrt();
    RotProfile {
        xi: p.xi.iter().map(|x| x * s).collect(),
        phi: p.phi.iter().map(|v| v * s).collect(),
        cone: p.cone,
    }
}

/// Sup over the nodes of `a` of `|phi_a - phi_b|`, both measured in arc
/// length from the first tip, after scaling `b` to the area of `a`.
pub fn profile_distance(a: &RotProfile, b: &RotProfile) -> f64 {
    let b = rescale_to_area(b, a.area());
    let slopes = (1.0 / b.cone[0] as f64, -1.0 / b.cone[1] as f64);
    let interp = Pchip::smooth_extrema(&b.xi, &b.phi, Some(slopes));
    let end = *b.xi.last().expect("nonempty");
    a.xi
        .iter()
        .zip(&a.phi)
        .map(|(x, v)| if *x > end { v.abs() } else { (interp.eval(*x) - v).abs() })
        .fold(0.0, f64::max)
}
