//! Rotationally symmetric Ricci flow on 3-orbifolds `ds^2 + psi(s)^2 g`,
//! where `g` is the unit round metric on a spherical quotient `S2//Gamma`,
//! with neck detection and standard-cap surgery.
//!
//! Sectional curvatures: `K_rad = -psi''/psi` on planes containing the axis,
//! `K_sph = (1 - psi'^2)/psi^2` on planes tangent to the cross-section, and
//! scalar curvature `R = 4 K_rad + 2 K_sph`. The flow is
//! `psi_t = -(K_rad + K_sph) psi` with cell lengths `l_t = -2 K_rad l`.
//!
//! Near a cap `1 - psi'^2` is evaluated as `integral 2 psi psi' K_rad ds`
//! from the tip rather than by differencing, which keeps `K_sph` well
//! conditioned where `psi` is small.

use std::f64::consts::{E, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{gauss_legendre, smoothstep, Pchip};
use crate::orb2::TwoOrbSig;
use crate::orb3::{self, DiscSite, Edge, EdgeEnd, SiteLocus, ThreeOrbDesc, Underlying};
use crate::par::{self, Mode};
use crate::ricciflow2d::tip_fit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Flow3Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("cross-section {0} is not a good spherical 2-orbifold")]
    CrossSection(String),
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    Unstable { dt: f64, bound: f64 },
    #[error("warp function reached zero inside component {component} at t = {t}")]
    Collapse { component: usize, t: f64 },
    #[error("neck too short for the blending window ({have} < {need} cells)")]
    NeckTooShort { have: usize, need: usize },
    #[error("neck scale {scale} exceeds the surgery scale {h}")]
    ScaleTooLarge { scale: f64, h: f64 },
    #[error("invalid surgery parameters: {0}")]
    Params(String),
    #[error("time step collapsed to {dt:e} at t = {t}")]
    StepCollapse { t: f64, dt: f64 },
    #[error("no component {0}")]
    NoComponent(usize),
    #[error("descriptions support S2 and S2(k,k) cross-sections only, got {0}")]
    Unsupported(String),
    #[error(transparent)]
    Orb3(#[from] orb3::Orb3Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndKind {
    /// `psi = 0` with unit slope: a smooth (orbifold) cap.
    Cap,
    /// Free end with zero slope.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpProfile {
    pub cross_section: TwoOrbSig,
    pub s: Vec<f64>,
    pub psi: Vec<f64>,
    pub ends: [EndKind; 2],
}

/// `|Gamma|` for a spherical cross-section: the area of `S2//Gamma` is
/// `4 pi / |Gamma|` and equals `2 pi chi`.
pub fn group_order(sig: &TwoOrbSig) -> Result<f64, Flow3Error> {
    if !sig.is_spherical() {
        return Err(Flow3Error::CrossSection(sig.to_string()));
    }
    let chi = sig.orb_euler_char();
    Ok(2.0 * *chi.denom() as f64 / *chi.numer() as f64)
}

impl WarpProfile {
    pub fn new(cross_section: TwoOrbSig, s: Vec<f64>, psi: Vec<f64>, ends: [EndKind; 2]) -> Result<Self, Flow3Error> {
        let p = WarpProfile {
            cross_section,
            s,
            psi,
            ends,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_fn(
        cross_section: TwoOrbSig,
        n: usize,
        length: f64,
        ends: [EndKind; 2],
        psi: impl Fn(f64) -> f64,
    ) -> Result<Self, Flow3Error> {
        let s: Vec<f64> = (0..=n).map(|i| length * i as f64 / n as f64).collect();
        let mut ps: Vec<f64> = s.iter().map(|&x| psi(x)).collect();
        if ends[0] == EndKind::Cap {
            ps[0] = 0.0;
        }
        if ends[1] == EndKind::Cap {
            ps[n] = 0.0;
        }
        Self::new(cross_section, s, ps, ends)
    }

    /// Round `S3//Gamma` of radius `radius`.
    pub fn round(cross_section: TwoOrbSig, n: usize, radius: f64) -> Result<Self, Flow3Error> {
        Self::from_fn(cross_section, n, PI * radius, [EndKind::Cap; 2], |s| radius * (s / radius).sin())
    }

    /// Cylinder `[0, length] x S2//Gamma` of warp `radius`.
    pub fn cylinder(cross_section: TwoOrbSig, n: usize, length: f64, radius: f64) -> Result<Self, Flow3Error> {
        Self::from_fn(cross_section, n, length, [EndKind::Boundary; 2], |_| radius)
    }

    /// Two unit bulbs joined by a tube of warp `tube` and length about
    /// `tube_length`, cell size about `ds`.
    pub fn dumbbell(cross_section: TwoOrbSig, ds: f64, tube: f64, tube_length: f64) -> Result<Self, Flow3Error> {
        let length = 2.0 * (PI - tube.asin()) + tube_length;
        let n = (length / ds).ceil() as usize;
        let p = 8.0;
        let bulb = |x: f64| if x < PI { x.sin().max(0.0) } else { 0.0 };
        Self::from_fn(cross_section, n, length, [EndKind::Cap; 2], |s| {
            let w = smoothstep((s - 0.5) / 1.0) * smoothstep((length - s - 0.5) / 1.0);
            let parts = bulb(s).powf(p) + bulb(length - s).powf(p) + (tube * w).powf(p);
            parts.powf(1.0 / p)
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn cells(&self) -> Vec<f64> {
        self.s.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn length(&self) -> f64 {
        self.s[self.s.len() - 1] - self.s[0]
    }

    /// `(4 pi / |Gamma|) integral psi^2 ds`.
    pub fn volume(&self) -> f64 {
        let g = group_order(&self.cross_section).unwrap_or(1.0);
        let sq: Vec<f64> = self.psi.iter().map(|v| v * v).collect();
        4.0 * PI / g * crate::numeric::trapezoid(&self.s, &sq)
    }

    pub fn validate(&self) -> Result<(), Flow3Error> {
        let n = self.s.len();
        let bad = |m: String| Err(Flow3Error::InvalidProfile(m));
        group_order(&self.cross_section)?;
        if n < 7 || self.psi.len() != n {
            return bad(format!("need at least 7 matching samples, got {n}"));
        }
        if self.s.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("arc length samples must increase strictly".into());
        }
        for (end, idx, inner) in [(0usize, 0usize, 1usize), (1, n - 1, n - 2)] {
            let kind = self.ends[end];
            let v = self.psi[idx];
            match kind {
                EndKind::Cap => {
                    if v.abs() > 1e-12 {
                        return bad(format!("cap end {end} must have psi = 0"));
                    }
                    let slope = self.psi[inner] / (self.s[inner] - self.s[idx]).abs();
                    if (slope - 1.0).abs() > 0.05 {
                        return bad(format!("cap end {end} slope {slope} is not 1"));
                    }
                }
                EndKind::Boundary => {
                    if !(v > 0.0) {
                        return bad(format!("boundary end {end} must have psi > 0"));
                    }
                }
            }
        }
        if let Some(i) = (1..n - 1).find(|&i| !(self.psi[i] > 0.0)) {
            return bad(format!("warp function not positive at node {i}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curvatures {
    pub radial: Vec<f64>,
    pub spherical: Vec<f64>,
    pub scalar: Vec<f64>,
}

impl Curvatures {
    /// Largest absolute sectional curvature.
    pub fn max_abs(&self) -> f64 {
        self.radial
            .iter()
            .chain(&self.spherical)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_scalar(&self) -> f64 {
        self.scalar.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Second difference at every node; free ends use a mirrored ghost and
/// caps get the even fit from the next two nodes.
fn radial_curvature(mode: Mode, cells: &[f64], psi: &[f64], ends: [EndKind; 2]) -> Vec<f64> {
    let n = cells.len();
    let node = |i: usize| {
        let (lm, lp) = (cells[i - 1], cells[i]);
        let dm = (psi[i] - psi[i - 1]) / lm;
        let dp = (psi[i + 1] - psi[i]) / lp;
        -(dp - dm) / (0.5 * (lm + lp)) / psi[i]
    };
    let mut k = vec![0.0; n + 1];
    let inner = par::map_range(mode, n - 1, |j| node(j + 1));
    k[1..n].copy_from_slice(&inner);
    k[0] = match ends[0] {
        EndKind::Cap => tip_fit(k[2], k[3], cells[0], cells[1], cells[2]),
        EndKind::Boundary => -2.0 * (psi[1] - psi[0]) / (cells[0] * cells[0]) / psi[0],
    };
    k[n] = match ends[1] {
        EndKind::Cap => tip_fit(k[n - 2], k[n - 3], cells[n - 1], cells[n - 2], cells[n - 3]),
        EndKind::Boundary => -2.0 * (psi[n - 1] - psi[n]) / (cells[n - 1] * cells[n - 1]) / psi[n],
    };
    k
}

fn spherical_curvature(cells: &[f64], psi: &[f64], ends: [EndKind; 2], radial: &[f64]) -> Vec<f64> {
    let n = cells.len();
    let direct = |i: usize| {
        let slope = if i == 0 || i == n {
            0.0
        } else {
            let (lm, lp) = (cells[i - 1], cells[i]);
            (lm * lm * (psi[i + 1] - psi[i]) + lp * lp * (psi[i] - psi[i - 1])) / (lm * lp * (lm + lp))
        };
        (1.0 - slope * slope) / (psi[i] * psi[i])
    };
    let mut out: Vec<f64> = (0..=n).map(direct).collect();
    // From a cap, 1 - psi'^2 accumulates K_rad d(psi^2). This is used on
    // the steep part next to the tip, where differencing loses accuracy.
    let steep = |j: usize| {
        let slope = (psi[j + 1] - psi[j]) / cells[j];
        slope * slope > 0.5
    };
    let mid = n / 2;
    let (left_stop, right_stop) = match ends {
        [EndKind::Cap, EndKind::Cap] => (mid, mid + 1),
        _ => (n, 0),
    };
    if ends[0] == EndKind::Cap {
        out[0] = radial[0];
        let mut q = 0.0;
        for i in 1..=left_stop {
            q += 0.5 * (radial[i - 1] + radial[i]) * (psi[i] * psi[i] - psi[i - 1] * psi[i - 1]);
            if !steep(i - 1) {
                break;
            }
            out[i] = q / (psi[i] * psi[i]);
        }
    }
    if ends[1] == EndKind::Cap {
        out[n] = radial[n];
        let mut q = 0.0;
        for i in (right_stop..n).rev() {
            q += 0.5 * (radial[i + 1] + radial[i]) * (psi[i] * psi[i] - psi[i + 1] * psi[i + 1]);
            if !steep(i) {
                break;
            }
            out[i] = q / (psi[i] * psi[i]);
        }
    }
    out
}

fn curvatures_raw(mode: Mode, cells: &[f64], psi: &[f64], ends: [EndKind; 2]) -> Curvatures {
    let radial = radial_curvature(mode, cells, psi, ends);
    let spherical = spherical_curvature(cells, psi, ends, &radial);
    let scalar = radial.iter().zip(&spherical).map(|(a, b)| 4.0 * a + 2.0 * b).collect();
    Curvatures {
        radial,
        spherical,
        scalar,
    }
}

pub fn curvatures(p: &WarpProfile) -> Result<Curvatures, Flow3Error> {
    p.validate()?;
    Ok(curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends))
}

/// Cap end cells satisfy `psi/l + K psi l / 6 = 1`: unit slope at the tip
/// after accounting for the curvature of the end cell.
fn slave_caps(psi: &[f64], cells: &mut [f64], ends: [EndKind; 2]) {
    let n = cells.len();
    let curv = |cells: &[f64], i: usize| {
        let (lm, lp) = (cells[i - 1], cells[i]);
        let dm = (psi[i] - psi[i - 1]) / lm;
        let dp = (psi[i + 1] - psi[i]) / lp;
        -(dp - dm) / (0.5 * (lm + lp)) / psi[i]
    };
    let solve = |inner: f64, tip: f64| {
        let disc = 1.0 - 2.0 * tip * inner * inner / 3.0;
        if disc > 0.0 {
            2.0 * inner / (1.0 + disc.sqrt())
        } else {
            inner
        }
    };
    if ends[0] == EndKind::Cap {
        cells[0] = psi[1];
    }
    if ends[1] == EndKind::Cap {
        cells[n - 1] = psi[n - 1];
    }
    for _ in 0..3 {
        if ends[0] == EndKind::Cap {
            let t = tip_fit(curv(cells, 2), curv(cells, 3), cells[0], cells[1], cells[2]);
            cells[0] = solve(psi[1], t);
        }
        if ends[1] == EndKind::Cap {
            let t = tip_fit(curv(cells, n - 2), curv(cells, n - 3), cells[n - 1], cells[n - 2], cells[n - 3]);
            cells[n - 1] = solve(psi[n - 1], t);
        }
    }
}

fn positions(start: f64, cells: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(cells.len() + 1);
    let mut x = start;
    s.push(x);
    for c in cells {
        x += c;
        s.push(x);
    }
    s
}

/// Largest stable step for a component: `0.25 ds^2 / (1 + max|Rm| ds^2)`.
pub fn stability_bound(p: &WarpProfile) -> f64 {
    let cells = p.cells();
    let ds = cells.iter().copied().fold(f64::INFINITY, f64::min);
    let rm = curvatures_raw(Mode::Sequential, &cells, &p.psi, p.ends).max_abs();
    0.25 * ds * ds / (1.0 + rm * ds * ds)
}

/// The adaptive step `factor * ds^2 / (1 + max|Rm| ds^2)` over all components.
pub fn suggested_dt(state: &FlowState, factor: f64) -> f64 {
    state
        .components
        .iter()
        .map(|p| stability_bound(p) * factor / 0.25)
        .fold(f64::INFINITY, f64::min)
}

fn rhs(mode: Mode, cells: &[f64], psi: &[f64], ends: [EndKind; 2]) -> (Vec<f64>, Vec<f64>) {
    let c = curvatures_raw(mode, cells, psi, ends);
    let n = cells.len();
    let mut dpsi: Vec<f64> = (0..=n).map(|i| -(c.radial[i] + c.spherical[i]) * psi[i]).collect();
    for (end, idx) in [(0usize, 0usize), (1, n)] {
        if ends[end] == EndKind::Cap {
            dpsi[idx] = 0.0;
        }
    }
    let dcells = (0..n)
        .map(|j| -(c.radial[j] + c.radial[j + 1]) * cells[j])
        .collect();
    (dpsi, dcells)
}

fn step_component(p: &WarpProfile, dt: f64, mode: Mode) -> Option<WarpProfile> {
    let mut cells = p.cells();
    slave_caps(&p.psi, &mut cells, p.ends);
    let (d1p, d1c) = rhs(mode, &cells, &p.psi, p.ends);
    let mp: Vec<f64> = p.psi.iter().zip(&d1p).map(|(a, b)| a + 0.5 * dt * b).collect();
    let mut mc: Vec<f64> = cells.iter().zip(&d1c).map(|(a, b)| a + 0.5 * dt * b).collect();
    if !admissible(&mp, &mc, p.ends) {
        return None;
    }
    slave_caps(&mp, &mut mc, p.ends);
    let (d2p, d2c) = rhs(mode, &mc, &mp, p.ends);
    let np: Vec<f64> = p.psi.iter().zip(&d2p).map(|(a, b)| a + dt * b).collect();
    let mut nc: Vec<f64> = cells.iter().zip(&d2c).map(|(a, b)| a + dt * b).collect();
    if !admissible(&np, &nc, p.ends) {
        return None;
    }
    slave_caps(&np, &mut nc, p.ends);
    Some(WarpProfile {
        cross_section: p.cross_section.clone(),
        s: positions(p.s[0], &nc),
        psi: np,
        ends: p.ends,
    })
}

fn admissible(psi: &[f64], cells: &[f64], ends: [EndKind; 2]) -> bool {
    let n = psi.len() - 1;
    let lo = usize::from(ends[0] == EndKind::Cap);
    let hi = if ends[1] == EndKind::Cap { n - 1 } else { n };
    psi[lo..=hi].iter().all(|v| *v > 0.0 && v.is_finite()) && cells.iter().all(|c| *c > 0.0)
}

/// Resamples to uniform arc length with a monotone cubic; caps re-slaved.
pub fn regrid(p: &WarpProfile, n: usize) -> WarpProfile {
    let slopes = (
        if p.ends[0] == EndKind::Cap { 1.0 } else { 0.0 },
        if p.ends[1] == EndKind::Cap { -1.0 } else { 0.0 },
    );
    let interp = Pchip::smooth_extrema(&p.s, &p.psi, Some(slopes));
    let (a, b) = (p.s[0], p.s[p.s.len() - 1]);
    let h = (b - a) / n as f64;
    let mut psi: Vec<f64> = (0..=n).map(|j| interp.eval(a + j as f64 * h)).collect();
    if p.ends[0] == EndKind::Cap {
        psi[0] = 0.0;
    }
    if p.ends[1] == EndKind::Cap {
        psi[n] = 0.0;
    }
    let mut cells = vec![h; n];
    slave_caps(&psi, &mut cells, p.ends);
    WarpProfile {
        cross_section: p.cross_section.clone(),
        s: positions(a, &cells),
        psi,
        ends: p.ends,
    }
}

/// `Phi(x) = x / ln(max(x, e)) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchFn {
    pub offset: f64,
}

impl PinchFn {
    pub fn new(offset: f64) -> Self {
        PinchFn { offset }
    }

    pub fn eval(&self, x: f64) -> f64 {
        x / x.max(E).ln() + self.offset
    }

    /// Smallest offset (plus `margin`) for which `profiles` pass.
    pub fn calibrated(profiles: &[WarpProfile], margin: f64) -> Self {
        let base = PinchFn { offset: 0.0 };
        let need = profiles
            .iter()
            .map(|p| -pinching_check(p, &base).worst_margin)
            .fold(0.0f64, f64::max);
        PinchFn { offset: need + margin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchVerdict {
    pub pass: bool,
    /// `min(sectional + Phi(R))` over samples and both plane types.
    pub worst_margin: f64,
    pub at: f64,
}

pub fn pinching_check(p: &WarpProfile, phi: &PinchFn) -> PinchVerdict {
    let c = curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends);
    let mut worst = f64::INFINITY;
    let mut at = p.s[0];
    for i in 0..p.s.len() {
        let m = c.radial[i].min(c.spherical[i]) + phi.eval(c.scalar[i]);
        if m < worst {
            worst = m;
            at = p.s[i];
        }
    }
    PinchVerdict {
        pass: worst >= 0.0,
        worst_margin: worst,
        at,
    }
}

/// Volume of the slab `|s - center| < r`.
pub fn ball_volume(p: &WarpProfile, center: f64, r: f64) -> f64 {
    let g = group_order(&p.cross_section).unwrap_or(1.0);
    let (lo, hi) = (center - r, center + r);
    let interp = Pchip::smooth_extrema(&p.s, &p.psi, None);
    let a = lo.max(p.s[0]);
    let b = hi.min(p.s[p.s.len() - 1]);
    if b <= a {
        return 0.0;
    }
    let rule = crate::numeric::composite_rule(a, b, 64, 6);
    let (xs, ws) = rule;
    4.0 * PI / g * xs.iter().zip(&ws).map(|(x, w)| w * interp.eval(*x).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaVerdict {
    /// False only when an admissible center fails.
    pub pass: bool,
    pub admissible: usize,
    /// Smallest `vol / r^3` over admissible centers.
    pub worst_ratio: Option<f64>,
    pub failures: Vec<f64>,
}

impl KappaVerdict {
    pub fn note(&self) -> &'static str {
        if self.admissible == 0 {
            "no admissible centers"
        } else if self.pass {
            "noncollapsed"
        } else {
            "collapsed"
        }
    }
}

/// Relative slack on the curvature hypothesis so that discretization noise
/// does not exclude centers where `|Rm| = r^-2` holds exactly.
pub const HYPOTHESIS_SLACK: f64 = 1e-3;

/// Tests `vol(B(x, r)) >= kappa r^3` at every sample `x` whose ball has
/// `|Rm| <= r^-2`.
pub fn kappa_check(p: &WarpProfile, r: f64, kappa: f64) -> KappaVerdict {
    let c = curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends);
    let bound = (1.0 + HYPOTHESIS_SLACK) / (r * r);
    let mut admissible = 0;
    let mut worst: Option<f64> = None;
    let mut failures = Vec::new();
    for &x in &p.s {
        let ok = p
            .s
            .iter()
            .enumerate()
            .filter(|(_, y)| (*y - x).abs() <= r)
            .all(|(j, _)| c.radial[j].abs() <= bound && c.spherical[j].abs() <= bound);
        if !ok {
            continue;
        }
        admissible += 1;
        let ratio = ball_volume(p, x, r) / (r * r * r);
        worst = Some(worst.map_or(ratio, |w: f64| w.min(ratio)));
        if ratio < kappa {
            failures.push(x);
        }
    }
    KappaVerdict {
        pass: failures.is_empty(),
        admissible,
        worst_ratio: worst,
        failures,
    }
}

/// Bound on isotropy orders in a `kappa`-noncollapsed `n`-orbifold:
/// `floor(n integral_0^1 sinh^(n-1) / kappa)`.
pub fn isotropy_bound(kappa: f64, n: u32) -> Result<u64, Flow3Error> {
    if !(kappa > 0.0) {
        return Err(Flow3Error::Params(format!("kappa must be positive, got {kappa}")));
    }
    if !(2..=3).contains(&n) {
        return Err(Flow3Error::Params(format!("dimension must be 2 or 3, got {n}")));
    }
    let (xs, ws) = gauss_legendre(16);
    let integral: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(x, w)| 0.5 * w * (0.5 * (x + 1.0)).sinh().powi(n as i32 - 1))
        .sum();
    Ok((n as f64 * integral / kappa).floor() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neck {
    pub component: usize,
    /// Node index and arc length of the center.
    pub center: usize,
    pub center_s: f64,
    /// `R(center)^(-1/2)`.
    pub scale: f64,
    pub extent: (f64, f64),
    pub nodes: (usize, usize),
}

/// Interval of nodes where the profile, rescaled
/// by the local scalar curvature, is `eps`-close in C2 to the cylinder of
/// scalar curvature one, and whose rescaled length exceeds `2/eps`.
/// Among qualifying intervals the most curved one is returned.
pub fn detect_neck(p: &WarpProfile, eps: f64, component: usize) -> Option<Neck> {
    let cells = p.cells();
    let c = curvatures_raw(Mode::Sequential, &cells, &p.psi, p.ends);
    let n = cells.len();
    let close = |i: usize| {
        if i == 0 || i == n || c.scalar[i] <= 0.0 {
            return false;
        }
        let rho = 1.0 / c.scalar[i].sqrt();
        let (lm, lp) = (cells[i - 1], cells[i]);
        let slope = (lm * lm * (p.psi[i + 1] - p.psi[i]) + lp * lp * (p.psi[i] - p.psi[i - 1])) / (lm * lp * (lm + lp));
        let second = -c.radial[i] * p.psi[i];
        (p.psi[i] / rho - SQRT_2).abs() < eps && slope.abs() < eps && (second * rho).abs() < eps
    };
    let flags: Vec<bool> = (0..=n).map(close).collect();
    let mut best: Option<Neck> = None;
    let mut i = 0;
    while i <= n {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i <= n && flags[i] {
            i += 1;
        }
        let end = i - 1;
        let scaled: f64 = (start..end)
            .map(|j| cells[j] * 0.5 * (c.scalar[j].sqrt() + c.scalar[j + 1].sqrt()))
            .sum();
        if scaled <= 2.0 / eps {
            continue;
        }
        // Along a nearly uniform tube the minimum is decided by rounding, so
        // it is sought in the middle half only.
        let quarter = (end - start) / 4;
        let center = (start + quarter..=end - quarter)
            .min_by(|&a, &b| p.psi[a].total_cmp(&p.psi[b]))
            .expect("nonempty");
        let neck = Neck {
            component,
            center,
            center_s: p.s[center],
            scale: 1.0 / c.scalar[center].sqrt(),
            extent: (p.s[start], p.s[end]),
            nodes: (start, end),
        };
        if best.map_or(true, |b| neck.scale < b.scale) {
            best = Some(neck);
        }
    }
    best
}

/// The cap `psi = sqrt2 tanh(s / sqrt2)`: unit round tip, asymptotic to the
/// cylinder of scalar curvature one, with `R = 1 + 5 sech^2(s/sqrt2) >= 1`
/// and both sectional curvatures nonnegative.
pub fn standard_cap_psi(s: f64) -> f64 {
    SQRT_2 * (s / SQRT_2).tanh()
}

/// Standard cap profile over `[0, length]` with about `ds` spacing.
pub fn standard_cap(cross_section: TwoOrbSig, ds: f64, length: f64) -> Result<WarpProfile, Flow3Error> {
    let n = (length / ds).ceil() as usize;
    let mut p = WarpProfile::from_fn(cross_section, n, length, [EndKind::Cap, EndKind::Boundary], standard_cap_psi)?;
    let mut cells = p.cells();
    slave_caps(&p.psi, &mut cells, p.ends);
    p.s = positions(0.0, &cells);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeryParams {
    /// Neck closeness.
    pub delta: f64,
    /// Surgery scale: necks with `R^(-1/2) <= h` are cut.
    pub h: f64,
    /// A new cap is left alone for `theta * h^2` of flow time.
    pub theta: f64,
    /// Cap length past the seam, in units of the neck scale.
    pub a_ext: f64,
    /// Blending window in grid cells.
    pub blend_cells: usize,
}

impl Default for SurgeryParams {
    fn default() -> Self {
        SurgeryParams {
            delta: 0.1,
            h: 0.1,
            theta: 0.1,
            a_ext: 8.0,
            blend_cells: 10,
        }
    }
}

impl SurgeryParams {
    pub fn validate(&self) -> Result<(), Flow3Error> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Flow3Error::Params(format!("delta must lie in (0, 1/2), got {}", self.delta)));
        }
        if !(self.h > 0.0 && self.a_ext > 0.0 && self.theta >= 0.0) || self.blend_cells < 2 {
            return Err(Flow3Error::Params("h, a_ext must be positive and theta nonnegative".into()));
        }
        Ok(())
    }

    /// `h < delta^2 r` for the canonical-neighbourhood scale `r`.
    pub fn admissible_for(&self, r: f64) -> bool {
        self.h < self.delta * self.delta * r
    }
}

/// Where a piece produced by a surgery went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Piece {
    /// Index in the post-surgery component list.
    Kept(usize),
    /// Index into [`SurgeryEvent::discarded`].
    Discarded(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub s: f64,
    /// `R^(-1/2)` at the seam; the cap is scaled by it.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryEvent {
    pub t: f64,
    pub component: usize,
    pub cross_section: TwoOrbSig,
    pub neck: Neck,
    pub cuts: Vec<Cut>,
    /// Pieces in order along the axis; piece `i` and `i + 1` meet at cut `i`.
    pub chain: Vec<Piece>,
    pub discarded: Vec<WarpProfile>,
}

impl SurgeryEvent {
    pub fn kept(&self) -> Vec<usize> {
        self.chain
            .iter()
            .filter_map(|p| match p {
                Piece::Kept(i) => Some(*i),
                Piece::Discarded(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSample {
    pub t: f64,
    pub r_min: f64,
    pub volume: f64,
    pub sigma: f64,
}

/// `R_min V^(2/3)`.
pub fn sigma_value(r_min: f64, volume: f64) -> f64 {
    r_min * volume.powf(2.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub components: Vec<WarpProfile>,
    pub t: f64,
    pub events: Vec<SurgeryEvent>,
    pub sigma_samples: Vec<SigmaSample>,
    /// Earliest time each component may be cut again.
    pub hold_until: Vec<f64>,
    /// Steps taken so far; drives the regrid, neck and sigma cadence.
    #[serde(default)]
    pub steps: u64,
}

impl FlowState {
    pub fn new(components: Vec<WarpProfile>) -> Result<Self, Flow3Error> {
        let mut out = Vec::with_capacity(components.len());
        for p in components {
            p.validate()?;
            let mut cells = p.cells();
            slave_caps(&p.psi, &mut cells, p.ends);
            out.push(WarpProfile {
                s: positions(p.s[0], &cells),
                ..p
            });
        }
        let hold = vec![0.0; out.len()];
        Ok(FlowState {
            components: out,
            t: 0.0,
            events: Vec::new(),
            sigma_samples: Vec::new(),
            hold_until: hold,
            steps: 0,
        })
    }

    pub fn volume(&self) -> f64 {
        self.components.iter().map(WarpProfile::volume).sum()
    }

    pub fn r_min(&self) -> f64 {
        self.components
            .iter()
            .map(|p| curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends).min_scalar())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupCandidate {
    pub component: usize,
    pub s: f64,
    pub scalar: f64,
}

/// One explicit midpoint step of every component. Nodes whose scalar
/// curvature exceeds `threshold` are reported.
pub fn flow_step3(
    state: &FlowState,
    dt: f64,
    threshold: f64,
    mode: Mode,
) -> Result<(FlowState, Vec<BlowupCandidate>), Flow3Error> {
    for p in &state.components {
        let bound = stability_bound(p);
        if dt > bound * (1.0 + 1e-12) {
            return Err(Flow3Error::Unstable { dt, bound });
        }
    }
    let stepped = par::map(mode, &state.components, |p| step_component(p, dt, Mode::Sequential));
    let mut comps = Vec::with_capacity(stepped.len());
    for (i, p) in stepped.into_iter().enumerate() {
        comps.push(p.ok_or(Flow3Error::Collapse { component: i, t: state.t })?);
    }
    let mut alerts = Vec::new();
    for (i, p) in comps.iter().enumerate() {
        let c = curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends);
        for (j, r) in c.scalar.iter().enumerate() {
            if *r > threshold {
                alerts.push(BlowupCandidate {
                    component: i,
                    s: p.s[j],
                    scalar: *r,
                });
            }
        }
    }
    Ok((
        FlowState {
            components: comps,
            t: state.t + dt,
            events: state.events.clone(),
            sigma_samples: state.sigma_samples.clone(),
            hold_until: state.hold_until.clone(),
            steps: state.steps,
        },
        alerts,
    ))
}

/// Appends `(t, R_min, V, R_min V^(2/3))` with `R_min` the minimum over
/// components and `V` the total volume.
pub fn sigma_track(state: &mut FlowState) -> SigmaSample {
    let r_min = state.r_min();
    let volume = state.volume();
    let sample = SigmaSample {
        t: state.t,
        r_min,
        volume,
        sigma: sigma_value(r_min, volume),
    };
    state.sigma_samples.push(sample);
    sample
}

/// With `R_min <= 0` the quantity `R_min V^(2/3)` cannot decrease; returns
/// the times where a sample dropped by more than `tol` (relative).
pub fn sigma_violations(samples: &[SigmaSample], tol: f64) -> Vec<f64> {
    samples
        .windows(2)
        .filter(|w| w[0].r_min <= 0.0 && w[1].r_min <= 0.0)
        .filter(|w| w[1].sigma < w[0].sigma - tol * w[0].sigma.abs().max(1e-300))
        .map(|w| w[1].t)
        .collect()
}

/// The part of a profile between two arc-length positions. An end given as
/// `Some(scale)` is a new cap: a standard cap scaled by `scale` whose
/// cylindrical end is blended into the profile over `window` just inside
/// the seam. An end given as `None` keeps the original end.
fn piece_between(
    p: &WarpProfile,
    interp: &Pchip,
    (sa, sb): (f64, f64),
    caps: [Option<f64>; 2],
    grid: f64,
    window: f64,
    a_ext: f64,
) -> Result<WarpProfile, Flow3Error> {
    let lo = caps[0].map_or(sa, |l| sa - a_ext * l);
    let hi = caps[1].map_or(sb, |l| sb + a_ext * l);
    let finest = caps.iter().flatten().fold(grid, |m, l| m.min(l / 20.0));
    let n = ((hi - lo) / finest).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let eval = |x: f64| {
        let mut v = interp.eval(x);
        if let Some(l) = caps[0] {
            let cap = l * standard_cap_psi((x - lo) / l);
            if x <= sa {
                return cap;
            }
            if x < sa + window {
                let w = smoothstep((x - sa) / window);
                v = (1.0 - w) * cap + w * v;
            }
        }
        if let Some(l) = caps[1] {
            let cap = l * standard_cap_psi((hi - x) / l);
            if x >= sb {
                return cap;
            }
            if x > sb - window {
                let w = smoothstep((sb - x) / window);
                v = (1.0 - w) * cap + w * v;
            }
        }
        v
    };
    let mut psi: Vec<f64> = (0..=n).map(|j| eval(lo + j as f64 * h)).collect();
    let ends = [
        if caps[0].is_some() { EndKind::Cap } else { p.ends[0] },
        if caps[1].is_some() { EndKind::Cap } else { p.ends[1] },
    ];
    if ends[0] == EndKind::Cap {
        psi[0] = 0.0;
    }
    if ends[1] == EndKind::Cap {
        psi[n] = 0.0;
    }
    let mut cells = vec![h; n];
    slave_caps(&psi, &mut cells, ends);
    WarpProfile::new(p.cross_section.clone(), positions(0.0, &cells), psi, ends)
}

/// Surgery at a neck of scale at most `h`. Walking in from each end of the
/// neck, the cut is placed at the first cross-section where `R >= h^-2`
/// (leaving room for the blending window); the stretch between the two
/// cuts is capped off on both sides. A piece is kept when it meets
/// `{R <= h^-2}` and discarded otherwise, so the high-curvature middle of a
/// pinching tube is thrown away. When the cuts would meet, a single cut is
/// made at the neck center.
pub fn do_surgery(state: &FlowState, neck: &Neck, params: &SurgeryParams) -> Result<FlowState, Flow3Error> {
    params.validate()?;
    if neck.scale > params.h {
        return Err(Flow3Error::ScaleTooLarge { scale: neck.scale, h: params.h });
    }
    let p = state
        .components
        .get(neck.component)
        .ok_or(Flow3Error::NoComponent(neck.component))?;
    let cells = p.cells();
    let grid = cells.iter().sum::<f64>() / cells.len() as f64;
    let need = params.blend_cells;
    let (a, b, c) = (neck.nodes.0, neck.nodes.1, neck.center);
    let have = (c - a).min(b - c);
    if have < need {
        return Err(Flow3Error::NeckTooShort { have, need });
    }
    let curv = curvatures_raw(Mode::Sequential, &cells, &p.psi, p.ends);
    let limit = 1.0 / (params.h * params.h);
    let cut_l = (a + need..=c).find(|&i| curv.scalar[i] >= limit).unwrap_or(c);
    let cut_r = (c..=b - need).rev().find(|&i| curv.scalar[i] >= limit).unwrap_or(c);
    let cut_nodes: Vec<usize> = if cut_r > cut_l && cut_r - cut_l >= 2 * need {
        vec![cut_l, cut_r]
    } else {
        vec![c]
    };
    let cuts: Vec<Cut> = cut_nodes
        .iter()
        .map(|&i| Cut {
            s: p.s[i],
            scale: 1.0 / curv.scalar[i].sqrt(),
        })
        .collect();

    let slopes = (
        if p.ends[0] == EndKind::Cap { 1.0 } else { 0.0 },
        if p.ends[1] == EndKind::Cap { -1.0 } else { 0.0 },
    );
    let interp = Pchip::smooth_extrema(&p.s, &p.psi, Some(slopes));
    let window = need as f64 * grid;
    let mut bounds = vec![(0usize, None)];
    for (k, &i) in cut_nodes.iter().enumerate() {
        bounds.push((i, Some(cuts[k].scale)));
    }
    bounds.push((p.s.len() - 1, None));
    let mut pieces = Vec::new();
    for w in bounds.windows(2) {
        let ((i0, cap0), (i1, cap1)) = (w[0], w[1]);
        let piece = piece_between(p, &interp, (p.s[i0], p.s[i1]), [cap0, cap1], grid, window, params.a_ext)?;
        let meets_thick = (i0..=i1).any(|i| curv.scalar[i] <= limit);
        pieces.push((piece, meets_thick));
    }

    let mut components = Vec::with_capacity(state.components.len() + pieces.len());
    let mut hold = Vec::with_capacity(components.capacity());
    let mut chain = Vec::new();
    let mut discarded = Vec::new();
    let until = state.t + params.theta * params.h * params.h;
    for (i, comp) in state.components.iter().enumerate() {
        if i != neck.component {
            components.push(comp.clone());
            hold.push(state.hold_until[i]);
            continue;
        }
        for (piece, keep) in pieces.drain(..) {
            if keep {
                chain.push(Piece::Kept(components.len()));
                components.push(piece);
                hold.push(until);
            } else {
                chain.push(Piece::Discarded(discarded.len()));
                discarded.push(piece);
            }
        }
    }
    let mut events = state.events.clone();
    events.push(SurgeryEvent {
        t: state.t,
        component: neck.component,
        cross_section: p.cross_section.clone(),
        neck: *neck,
        cuts,
        chain,
        discarded,
    });
    Ok(FlowState {
        components,
        t: state.t,
        events,
        sigma_samples: state.sigma_samples.clone(),
        hold_until: hold,
        steps: state.steps,
    })
}

/// Singular label of the supported cross-sections: 1 for `S2`, `k` for
/// `S2(k,k)`.
fn cross_label(sig: &TwoOrbSig) -> Result<u32, Flow3Error> {
    match sig.cone_orders() {
        [] if sig.is_closed() && sig.base_genus() == 0 && sig.reflector().is_none() => Ok(1),
        [a, b] if a == b && sig.base_genus() == 0 && sig.reflector().is_none() => Ok(*a),
        _ => Err(Flow3Error::Unsupported(sig.to_string())),
    }
}

/// Appends one component: cap-cap pieces are `S3//Z_k` with one singular
/// circle, cap-free pieces are `S2 x I` with two arcs, one-cap pieces are
/// discal with one arc.
fn append_description(d: &mut ThreeOrbDesc, p: &WarpProfile, tag: &str) -> Result<usize, Flow3Error> {
    let k = cross_label(&p.cross_section)?;
    let c = d.components.len();
    let token = match p.ends {
        [EndKind::Cap, EndKind::Cap] => "S3",
        [EndKind::Boundary, EndKind::Boundary] => "S2xI",
        _ => "D3",
    };
    d.components.push(Underlying::named(token)?);
    for e in p.ends {
        if e == EndKind::Boundary {
            d.boundary.push(p.cross_section.clone());
        }
    }
    if k > 1 {
        let arc = Some((EdgeEnd::Boundary, EdgeEnd::Boundary));
        match p.ends {
            [EndKind::Cap, EndKind::Cap] => d.add_edge(tag, Edge { label: k, ends: None, component: c })?,
            [EndKind::Boundary, EndKind::Boundary] => {
                for side in ["a", "b"] {
                    d.add_edge(&format!("{tag}{side}"), Edge { label: k, ends: arc.clone(), component: c })?;
                }
            }
            _ => d.add_edge(tag, Edge { label: k, ends: arc, component: c })?,
        }
    }
    Ok(c)
}

pub fn describe(components: &[WarpProfile]) -> Result<ThreeOrbDesc, Flow3Error> {
    let mut d = ThreeOrbDesc::new(Underlying::named("S3")?);
    d.components.clear();
    for (c, p) in components.iter().enumerate() {
        append_description(&mut d, p, &format!("c{c}"))?;
    }
    Ok(d)
}

/// Rebuilds the description before `event` from the description `post`
/// after it: discarded pieces are restored and consecutive pieces are
/// joined by 0-surgery along the cross-section, left to right.
pub fn reconstruct_before(
    post: &ThreeOrbDesc,
    event: &SurgeryEvent,
) -> Result<(ThreeOrbDesc, Vec<orb3::SurgeryRecord>), Flow3Error> {
    let mut d = post.clone();
    let mut comp: Vec<usize> = Vec::with_capacity(event.chain.len());
    for (j, piece) in event.chain.iter().enumerate() {
        comp.push(match piece {
            Piece::Kept(i) => *i,
            Piece::Discarded(i) => {
                let p = event.discarded.get(*i).ok_or(Flow3Error::NoComponent(*i))?;
                append_description(&mut d, p, &format!("x{}-{j}", event.component))?
            }
        });
    }
    let k = cross_label(&event.cross_section)?;
    let mut records = Vec::new();
    for j in 0..event.chain.len().saturating_sub(1) {
        let ids = (format!("seam{j}-l"), format!("seam{j}-r"));
        for (id, c) in [(&ids.0, comp[j]), (&ids.1, comp[j + 1])] {
            let locus = if k > 1 {
                let edge = d
                    .graph
                    .edges
                    .iter()
                    .find(|(_, e)| e.component == c)
                    .map(|(name, _)| name.clone())
                    .ok_or(Flow3Error::NoComponent(c))?;
                SiteLocus::Edge(edge)
            } else {
                SiteLocus::Smooth
            };
            d.add_site(
                id,
                DiscSite {
                    sig: event.cross_section.clone(),
                    locus,
                    component: c,
                },
            )?;
        }
        let (next, rec) = orb3::zero_surgery(&d, &ids.0, &ids.1)?;
        let (lo, hi) = (comp[j].min(comp[j + 1]), comp[j].max(comp[j + 1]));
        for x in comp.iter_mut() {
            if *x == hi {
                *x = lo;
            } else if *x > hi {
                *x -= 1;
            }
        }
        d = next;
        records.push(rec);
    }
    Ok((d, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow3Params {
    pub dt_factor: f64,
    pub regrid_every: u64,
    pub sigma_every: u64,
    pub neck_every: u64,
    pub surgery: SurgeryParams,
    /// Components whose minimal scalar curvature passes this are extinct
    /// and dropped.
    pub extinction: f64,
}

impl Default for Flow3Params {
    fn default() -> Self {
        Flow3Params {
            dt_factor: 0.1,
            regrid_every: 100,
            sigma_every: 20,
            neck_every: 10,
            surgery: SurgeryParams::default(),
            extinction: 1e4,
        }
    }
}

/// What happened during [`run_flow3`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flow3Log {
    pub steps: u64,
    pub necks: Vec<Neck>,
    pub extinct: Vec<(f64, usize)>,
}

/// Flows to `stop_time`, performing surgery on every detected neck of scale
/// at most `h`. `observe` sees the state after every step.
pub fn run_flow3(
    state: &mut FlowState,
    params: &Flow3Params,
    stop_time: f64,
    mode: Mode,
    mut observe: impl FnMut(&FlowState, &Flow3Log),
) -> Result<Flow3Log, Flow3Error> {
    run_flow3_while(state, params, stop_time, mode, |s, log| {
        observe(s, log);
        true
    })
}

/// As [`run_flow3`], but stops after any step where `observe` returns
/// false. Resuming from the stopped state continues the exact same step
/// sequence. The closing sigma sample is only taken on reaching
/// `stop_time`.
pub fn run_flow3_while(
    state: &mut FlowState,
    params: &Flow3Params,
    stop_time: f64,
    mode: Mode,
    mut observe: impl FnMut(&FlowState, &Flow3Log) -> bool,
) -> Result<Flow3Log, Flow3Error> {
    params.surgery.validate()?;
    let mut log = Flow3Log::default();
    let threshold = 1.0 / (params.surgery.h * params.surgery.h);
    if state.sigma_samples.is_empty() {
        sigma_track(state);
    }
    while state.t < stop_time - 1e-15 && !state.components.is_empty() {
        let dt = suggested_dt(state, params.dt_factor).min(stop_time - state.t);
        if dt < 1e-14 * stop_time.max(1.0) && state.t < stop_time - 1e-12 {
            return Err(Flow3Error::StepCollapse { t: state.t, dt });
        }
        let (next, _) = flow_step3(state, dt, threshold, mode)?;
        *state = next;
        state.steps += 1;
        log.steps += 1;
        let step = state.steps;
        if params.regrid_every > 0 && step % params.regrid_every == 0 {
            for p in state.components.iter_mut() {
                *p = regrid(p, p.len() - 1);
            }
        }
        // Drop extinct components.
        let mut i = 0;
        while i < state.components.len() {
            let p = &state.components[i];
            let c = curvatures_raw(Mode::Sequential, &p.cells(), &p.psi, p.ends);
            if c.scalar.iter().all(|r| *r > params.extinction) {
                log.extinct.push((state.t, i));
                state.components.remove(i);
                state.hold_until.remove(i);
            } else {
                i += 1;
            }
        }
        if params.neck_every > 0 && step % params.neck_every == 0 {
            let found: Vec<Neck> = (0..state.components.len())
                .filter(|&i| state.t >= state.hold_until[i])
                .filter_map(|i| detect_neck(&state.components[i], params.surgery.delta, i))
                .filter(|n| n.scale <= params.surgery.h)
                .collect();
            // Highest index first so earlier indices stay valid.
            for neck in found.into_iter().rev() {
                *state = do_surgery(state, &neck, &params.surgery)?;
                log.necks.push(neck);
            }
        }
        if params.sigma_every > 0 && step % params.sigma_every == 0 {
            sigma_track(state);
        }
        if !observe(state, &log) {
            return Ok(log);
        }
    }
    sigma_track(state);
    Ok(log)
}
