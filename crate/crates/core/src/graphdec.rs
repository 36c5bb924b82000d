//! Weak graph orbifolds and their normalization to strong ones.
//!
//! A graph orbifold is a collection of Seifert pieces glued along Euclidean
//! boundary components (`T2` or the pillowcase `S2(2,2,2,2)`). The
//! normalization first merges gluings whose fibrations are isotopic, then
//! removes compressible gluings next to solid-toric pieces, either by a Dehn
//! filling merge or by a spherical 0-surgery cut, until no gluing is
//! eligible. Everything is decided symbolically on base orbifolds and slope
//! data; no geometric incompressibility test is attempted.
//!
//! Base orbifolds are stored as a surface (genus, cone points) with a list of
//! boundary circles. A circle is either free (all orbifold boundary, giving
//! a `T2` end) or mixed: a cyclic word of intervals (each an orbifold
//! boundary arc giving a pillowcase end) and corner reflectors, with a
//! reflector arc between consecutive entries. A mixed circle with no entries
//! is a closed reflector circle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orb2::{Reflector, TwoOrbSig};
use crate::orb3::{SolidToricToken, SurgeryDirection, SurgeryRecord};

/// Stable identifier of a boundary component, unchanged by operations that
/// do not touch it.
pub type Uid = u32;

/// Fiber class on a boundary torus, a primitive integer vector up to sign.
pub type Slope = (i64, i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("bad base orbifold `{0}`")]
    BadBase(String),
    #[error("unknown piece `{0}`")]
    UnknownPiece(String),
    #[error("duplicate piece `{0}`")]
    DuplicatePiece(String),
    #[error("piece `{0}` has no boundary {1}")]
    UnknownBoundary(String, usize),
    #[error("boundary {0} appears in more than one gluing")]
    BoundaryReused(String),
    #[error("boundary {0} is tagged {1} but its base gives {2}")]
    TagMismatch(String, BoundaryTag, BoundaryTag),
    #[error("gluing {0}: boundary tags differ")]
    GluingTagMismatch(usize),
    #[error("slope {0}/{1} is not primitive")]
    SlopeNotPrimitive(i64, i64),
    #[error("boundary {0} has no slope")]
    MissingSlope(String),
    #[error("gluing {0}: isotopic flag disagrees with the slopes")]
    IsotopyMismatch(usize),
    #[error("gluing {0}: a solid-toric side requires meridian_fiber")]
    MissingMeridian(usize),
    #[error("gluing {0}: meridian_fiber=false requires u")]
    MissingU(usize),
    #[error("gluing {0}: u is only allowed for a non-isotopic gluing whose meridian is not a fiber")]
    UnexpectedU(usize),
    #[error("gluing {0}: meridian data given but neither side is solid-toric")]
    UnexpectedMeridian(usize),
    #[error("gluing {0}: u must be at least 1")]
    ZeroU(usize),
    #[error("gluing {0}: isotopic fibrations cannot have the meridian as a fiber")]
    IsotopicMeridianFiber(usize),
    #[error("gluing {0} is not a free boundary")]
    NotFree(String),
    #[error("unknown gluing {0}")]
    UnknownGluing(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("base {0} is not a terminal shape")]
    NotTerminal(String),
    #[error("no compressibility certificate: {0}")]
    NoCertificate(String),
    #[error("normalization did not terminate within its budget")]
    NotTerminating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    T2,
    Pillowcase,
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryTag::T2 => "T2",
            BoundaryTag::Pillowcase => "S2222",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Item {
    Interval(Uid),
    Corner(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Circle {
    Free(Uid),
    Mixed(Vec<Item>),
}

/// Where a boundary component sits in a base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Locus {
    Free(usize),
    Interval(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Base {
    pub genus: u32,
    /// Sorted cone orders; these are the exceptional fibers.
    pub cones: Vec<u32>,
    pub circles: Vec<Circle>,
}

impl Base {
    pub fn euler_char(&self) -> Rational64 {
        let one = Rational64::from_integer(1);
        let half = Rational64::new(1, 2);
        let mut chi = Rational64::from_integer(2 - 2 * self.genus as i64 - self.circles.len() as i64);
        for &k in &self.cones {
            chi -= one - Rational64::new(1, k as i64);
        }
        for c in &self.circles {
            if let Circle::Mixed(items) = c {
                for it in items {
                    chi -= match *it {
                        Item::Interval(_) => half,
                        Item::Corner(m) => half * (one - Rational64::new(1, m as i64)),
                    };
                }
            }
        }
        chi
    }

    /// Boundary components in index order: circle by circle, intervals in
    /// word order.
    pub fn boundaries(&self) -> Vec<(Uid, BoundaryTag)> {
        let mut out = Vec::new();
        for c in &self.circles {
            match c {
                Circle::Free(u) => out.push((*u, BoundaryTag::T2)),
                Circle::Mixed(items) => {
                    for it in items {
                        if let Item::Interval(u) = it {
                            out.push((*u, BoundaryTag::Pillowcase));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn locate(&self, uid: Uid) -> Option<Locus> {
        for (ci, c) in self.circles.iter().enumerate() {
            match c {
                Circle::Free(u) if *u == uid => return Some(Locus::Free(ci)),
                Circle::Mixed(items) => {
                    if let Some(j) = items.iter().position(|it| *it == Item::Interval(uid)) {
                        return Some(Locus::Interval(ci, j));
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// Order `r` of a solid-toric base `D2`, `D2(r)`, `D2//Z2`, `D2//D_r`.
    pub fn solid_toric_order(&self) -> Option<u32> {
        if self.genus != 0 || self.circles.len() != 1 {
            return None;
        }
        match &self.circles[0] {
            Circle::Free(_) => match self.cones.as_slice() {
                [] => Some(1),
                [r] => Some(*r),
                _ => None,
            },
            Circle::Mixed(items) if self.cones.is_empty() => match items.as_slice() {
                [Item::Interval(_)] => Some(1),
                [Item::Interval(_), Item::Corner(r)] | [Item::Corner(r), Item::Interval(_)] => Some(*r),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn solid_toric_token(&self) -> Option<SolidToricToken> {
        let r = self.solid_toric_order()?;
        Some(match (&self.circles[0], r) {
            (Circle::Free(_), 1) => SolidToricToken::SolidTorus,
            (Circle::Free(_), r) => SolidToricToken::SolidTorusCore(r),
            (Circle::Mixed(_), 1) => SolidToricToken::TwistedSolidTorus,
            (Circle::Mixed(_), r) => SolidToricToken::TwistedSolidTorusCore(r),
        })
    }

    fn sorted(mut self) -> Self {
        self.cones.sort_unstable();
        self
    }

    /// Parses `<signature>[+[<word>]...]` assigning fresh uids, where each
    /// bracketed word adds a mixed circle of `I` (interval) and `c<m>`
    /// (corner) entries. `D2//Z2` and `D2//D<s>` are shorthands for
    /// `S2+[I]` and `S2+[I,c<s>]`.
    pub fn parse(text: &str, next_uid: &mut Uid) -> Result<Base, GraphError> {
        let bad = || GraphError::BadBase(text.to_string());
        let mut parts = text.split('+');
        let head = parts.next().ok_or_else(bad)?;
        let sig: TwoOrbSig = head.parse().map_err(|_| bad())?;
        let mut fresh = || {
            let u = *next_uid;
            *next_uid += 1;
            u
        };
        let mut circles = Vec::new();
        let free = sig.boundary_circles() - u32::from(sig.reflector().is_some());
        for _ in 0..free {
            circles.push(Circle::Free(fresh()));
        }
        match sig.reflector() {
            Some(Reflector::Z2) => circles.push(Circle::Mixed(vec![Item::Interval(fresh())])),
            Some(Reflector::Dihedral(s)) => {
                circles.push(Circle::Mixed(vec![Item::Interval(fresh()), Item::Corner(s)]))
            }
            None => {}
        }
        for word in parts {
            let inner = word
                .strip_prefix('[')
                .and_then(|w| w.strip_suffix(']'))
                .ok_or_else(bad)?;
            let mut items = Vec::new();
            for tok in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                if tok == "I" {
                    items.push(Item::Interval(fresh()));
                } else {
                    let m: u32 = tok
                        .strip_prefix('c')
                        .and_then(|m| m.parse().ok())
                        .ok_or_else(bad)?;
                    if m < 2 {
                        return Err(bad());
                    }
                    items.push(Item::Corner(m));
                }
            }
            circles.push(Circle::Mixed(items));
        }
        Ok(Base {
            genus: sig.base_genus(),
            cones: sig.cone_orders().to_vec(),
            circles,
        }
        .sorted())
    }

    /// Surface part without cone points, in the syntax accepted by
    /// [`Base::parse`].
    pub fn shape_text(&self) -> String {
        let free = self.circles.iter().filter(|c| matches!(c, Circle::Free(_))).count() as u32;
        let mut s = TwoOrbSig::new(self.genus, Vec::new(), free, None)
            .expect("no cones")
            .to_string();
        for c in &self.circles {
            if let Circle::Mixed(items) = c {
                let words: Vec<String> = items
                    .iter()
                    .map(|it| match it {
                        Item::Interval(_) => "I".to_string(),
                        Item::Corner(m) => format!("c{m}"),
                    })
                    .collect();
                s.push_str(&format!("+[{}]", words.join(",")));
            }
        }
        s
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.shape_text())?;
        if !self.cones.is_empty() {
            let c: Vec<String> = self.cones.iter().map(u32::to_string).collect();
            write!(f, " fibers {}", c.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeifertPiece {
    pub id: String,
    pub base: Base,
    pub slopes: BTreeMap<Uid, Slope>,
    /// Meridian slope, known for solid-toric pieces.
    pub meridian: Option<Slope>,
}

impl SeifertPiece {
    pub fn exceptional_fibers(&self) -> &[u32] {
        &self.base.cones
    }

    pub fn is_solid_toric(&self) -> bool {
        self.base.solid_toric_order().is_some()
    }

    pub fn boundaries(&self) -> Vec<(Uid, BoundaryTag)> {
        self.base.boundaries()
    }

    fn slope(&self, uid: Uid) -> Slope {
        self.slopes[&uid]
    }

    /// Meridian used for solid-toric bookkeeping: the stored one, or the
    /// canonical section slope meeting the fiber once.
    fn meridian_or_canonical(&self) -> Slope {
        self.meridian.unwrap_or_else(|| {
            let (uid, _) = self.boundaries()[0];
            complement(self.slope(uid))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gluing {
    pub id: usize,
    pub ends: (Uid, Uid),
    pub fibrations_isotopic: bool,
    pub intersection_u: Option<u32>,
    pub meridian_is_fiber: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphOrb {
    pub pieces: Vec<SeifertPiece>,
    pub gluings: Vec<Gluing>,
    next_uid: Uid,
    next_gluing: usize,
    next_name: usize,
}

pub fn det(a: Slope, b: Slope) -> i64 {
    a.0 * b.1 - a.1 * b.0
}

pub fn same_slope(a: Slope, b: Slope) -> bool {
    a == b || a == (-b.0, -b.1)
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a.abs(), a.signum(), 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// A slope `l` with `det(s, l) = 1`.
pub fn complement(s: Slope) -> Slope {
    let (g, p, q) = ext_gcd(s.0, s.1);
    debug_assert_eq!(g, 1);
    // s.0 * p + s.1 * q = 1, so det(s, (-q, p)) = 1.
    (-q, p)
}

fn primitive(s: Slope) -> bool {
    ext_gcd(s.0, s.1).0 == 1
}

impl GraphOrb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn piece(&self, id: &str) -> Option<&SeifertPiece> {
        self.pieces.iter().find(|p| p.id == id)
    }

    pub fn owner(&self, uid: Uid) -> Option<usize> {
        self.pieces.iter().position(|p| p.base.locate(uid).is_some())
    }

    pub fn gluing_at(&self, uid: Uid) -> Option<usize> {
        self.gluings.iter().position(|g| g.ends.0 == uid || g.ends.1 == uid)
    }

    pub fn gluing_index(&self, id: usize) -> Result<usize, GraphError> {
        self.gluings
            .iter()
            .position(|g| g.id == id)
            .ok_or(GraphError::UnknownGluing(id))
    }

    /// `piece.index` name of a boundary.
    pub fn boundary_name(&self, uid: Uid) -> String {
        match self.owner(uid) {
            Some(pi) => {
                let p = &self.pieces[pi];
                let i = p.boundaries().iter().position(|(u, _)| *u == uid).unwrap_or(0);
                format!("{}.{}", p.id, i)
            }
            None => format!("?{uid}"),
        }
    }

    pub fn resolve(&self, piece: &str, index: usize) -> Result<Uid, GraphError> {
        let p = self
            .piece(piece)
            .ok_or_else(|| GraphError::UnknownPiece(piece.to_string()))?;
        p.boundaries()
            .get(index)
            .map(|(u, _)| *u)
            .ok_or_else(|| GraphError::UnknownBoundary(piece.to_string(), index))
    }

    pub fn add_piece(&mut self, id: &str, base_text: &str, fibers: &[u32]) -> Result<(), GraphError> {
        if self.piece(id).is_some() {
            return Err(GraphError::DuplicatePiece(id.to_string()));
        }
        let mut base = Base::parse(base_text, &mut self.next_uid)?;
        if fibers.iter().any(|&k| k < 2) {
            return Err(GraphError::BadBase(base_text.to_string()));
        }
        base.cones.extend_from_slice(fibers);
        base.cones.sort_unstable();
        self.pieces.push(SeifertPiece {
            id: id.to_string(),
            base,
            slopes: BTreeMap::new(),
            meridian: None,
        });
        Ok(())
    }

    pub fn set_slope(&mut self, piece: &str, index: usize, tag: BoundaryTag, slope: Slope) -> Result<(), GraphError> {
        if !primitive(slope) {
            return Err(GraphError::SlopeNotPrimitive(slope.0, slope.1));
        }
        let uid = self.resolve(piece, index)?;
        let pi = self.owner(uid).expect("resolved");
        let actual = self.pieces[pi]
            .boundaries()
            .into_iter()
            .find(|(u, _)| *u == uid)
            .map(|(_, t)| t)
            .expect("resolved");
        if actual != tag {
            return Err(GraphError::TagMismatch(format!("{piece}.{index}"), tag, actual));
        }
        self.pieces[pi].slopes.insert(uid, slope);
        Ok(())
    }

    pub fn glue(
        &mut self,
        a: (&str, usize),
        b: (&str, usize),
        isotopic: bool,
        u: Option<u32>,
        meridian_fiber: Option<bool>,
    ) -> Result<usize, GraphError> {
        let ua = self.resolve(a.0, a.1)?;
        let ub = self.resolve(b.0, b.1)?;
        for (uid, name) in [(ua, a), (ub, b)] {
            if self.gluing_at(uid).is_some() {
                return Err(GraphError::BoundaryReused(format!("{}.{}", name.0, name.1)));
            }
        }
        if ua == ub {
            return Err(GraphError::BoundaryReused(format!("{}.{}", a.0, a.1)));
        }
        let id = self.next_gluing;
        self.next_gluing += 1;
        self.gluings.push(Gluing {
            id,
            ends: (ua, ub),
            fibrations_isotopic: isotopic,
            intersection_u: u,
            meridian_is_fiber: meridian_fiber,
        });
        Ok(id)
    }

    fn tag_of(&self, uid: Uid) -> BoundaryTag {
        let p = &self.pieces[self.owner(uid).expect("known uid")];
        p.boundaries().into_iter().find(|(u, _)| *u == uid).expect("known").1
    }

    fn slope_of(&self, uid: Uid) -> Slope {
        self.pieces[self.owner(uid).expect("known uid")].slope(uid)
    }

    /// Solid-toric side of a gluing as `(U' end, U end)`: the second end
    /// when both sides are solid-toric.
    fn solid_side(&self, g: &Gluing) -> Option<(Uid, Uid)> {
        let (a, b) = g.ends;
        let st = |u: Uid| self.pieces[self.owner(u).expect("known")].is_solid_toric();
        if st(b) {
            Some((b, a))
        } else if st(a) {
            Some((a, b))
        } else {
            None
        }
    }

    /// Well-formedness: tags, slopes, and the gluing data rules.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut ids = BTreeSet::new();
        for p in &self.pieces {
            if !ids.insert(p.id.as_str()) {
                return Err(GraphError::DuplicatePiece(p.id.clone()));
            }
            for (uid, _) in p.boundaries() {
                match p.slopes.get(&uid) {
                    None => return Err(GraphError::MissingSlope(self.boundary_name(uid))),
                    Some(s) if !primitive(*s) => return Err(GraphError::SlopeNotPrimitive(s.0, s.1)),
                    _ => {}
                }
            }
        }
        let mut seen = BTreeSet::new();
        for g in &self.gluings {
            for u in [g.ends.0, g.ends.1] {
                if self.owner(u).is_none() {
                    return Err(GraphError::UnknownGluing(g.id));
                }
                if !seen.insert(u) {
                    return Err(GraphError::BoundaryReused(self.boundary_name(u)));
                }
            }
            if self.tag_of(g.ends.0) != self.tag_of(g.ends.1) {
                return Err(GraphError::GluingTagMismatch(g.id));
            }
            let iso = same_slope(self.slope_of(g.ends.0), self.slope_of(g.ends.1));
            if iso != g.fibrations_isotopic {
                return Err(GraphError::IsotopyMismatch(g.id));
            }
            if g.intersection_u == Some(0) {
                return Err(GraphError::ZeroU(g.id));
            }
            match self.solid_side(g) {
                None => {
                    if g.intersection_u.is_some() {
                        return Err(GraphError::UnexpectedU(g.id));
                    }
                    if g.meridian_is_fiber == Some(true) {
                        return Err(GraphError::UnexpectedMeridian(g.id));
                    }
                }
                Some(_) if g.fibrations_isotopic => {
                    if g.meridian_is_fiber == Some(true) {
                        return Err(GraphError::IsotopicMeridianFiber(g.id));
                    }
                    if g.intersection_u.is_some() {
                        return Err(GraphError::UnexpectedU(g.id));
                    }
                }
                Some(_) => match (g.meridian_is_fiber, g.intersection_u) {
                    (None, _) => return Err(GraphError::MissingMeridian(g.id)),
                    (Some(true), Some(_)) => return Err(GraphError::UnexpectedU(g.id)),
                    (Some(false), None) => return Err(GraphError::MissingU(g.id)),
                    _ => {}
                },
            }
        }
        Ok(())
    }

    /// Validates and turns the meridian data on gluings into meridian
    /// slopes on the solid-toric pieces.
    pub fn prepare(&mut self) -> Result<(), GraphError> {
        self.validate()?;
        for gi in 0..self.gluings.len() {
            let g = self.gluings[gi].clone();
            if g.fibrations_isotopic {
                continue;
            }
            if let Some((up, uu)) = self.solid_side(&g) {
                let pi = self.owner(up).expect("known");
                if self.pieces[pi].meridian.is_some() {
                    continue;
                }
                let s = self.slope_of(uu);
                let mu = if g.meridian_is_fiber == Some(true) {
                    s
                } else {
                    let u = g.intersection_u.expect("validated") as i64;
                    let l = complement(s);
                    (u * l.0 + s.0, u * l.1 + s.1)
                };
                self.pieces[pi].meridian = Some(mu);
            }
        }
        if self.next_uid == 0 {
            self.next_uid = self
                .pieces
                .iter()
                .flat_map(|p| p.boundaries())
                .map(|(u, _)| u + 1)
                .max()
                .unwrap_or(0);
        }
        self.sync();
        Ok(())
    }

    /// Recomputes isotopy and meridian data on every gluing from the
    /// current slopes and meridians.
    fn sync(&mut self) {
        for gi in 0..self.gluings.len() {
            let mut g = self.gluings[gi].clone();
            g.fibrations_isotopic = same_slope(self.slope_of(g.ends.0), self.slope_of(g.ends.1));
            match self.solid_side(&g) {
                None => {
                    g.meridian_is_fiber = None;
                    g.intersection_u = None;
                }
                Some(_) if g.fibrations_isotopic => {
                    g.meridian_is_fiber = Some(false);
                    g.intersection_u = None;
                }
                Some((up, uu)) => {
                    let mu = self.pieces[self.owner(up).expect("known")].meridian_or_canonical();
                    let s = self.slope_of(uu);
                    if same_slope(mu, s) {
                        g.meridian_is_fiber = Some(true);
                        g.intersection_u = None;
                    } else {
                        g.meridian_is_fiber = Some(false);
                        g.intersection_u = Some(det(mu, s).unsigned_abs() as u32);
                    }
                }
            }
            self.gluings[gi] = g;
        }
    }

    fn fresh_uid(&mut self) -> Uid {
        let u = self.next_uid;
        self.next_uid += 1;
        u
    }

    fn fresh_name(&mut self, parent: &str, tag: &str) -> String {
        loop {
            self.next_name += 1;
            let name = format!("{parent}/{tag}{}", self.next_name);
            if self.piece(&name).is_none() {
                return name;
            }
        }
    }

    fn push_gluing(&mut self, a: Uid, b: Uid) {
        let id = self.next_gluing;
        self.next_gluing += 1;
        self.gluings.push(Gluing {
            id,
            ends: (a, b),
            fibrations_isotopic: false,
            intersection_u: None,
            meridian_is_fiber: None,
        });
    }

    /// Free boundaries as `(uid, name)`.
    pub fn free_boundaries(&self) -> Vec<(Uid, String)> {
        self.pieces
            .iter()
            .flat_map(|p| p.boundaries())
            .filter(|(u, _)| self.gluing_at(*u).is_none())
            .map(|(u, _)| (u, self.boundary_name(u)))
            .collect()
    }

    /// Piece indices grouped by connected component, in piece order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.pieces.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            p[i] = r;
            r
        }
        for g in &self.gluings {
            let a = self.owner(g.ends.0).expect("known");
            let b = self.owner(g.ends.1).expect("known");
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Sub-graph on the given pieces (gluings among them only).
    pub fn restrict(&self, pieces: &[usize]) -> GraphOrb {
        let keep: Vec<SeifertPiece> = pieces.iter().map(|&i| self.pieces[i].clone()).collect();
        let uids: BTreeSet<Uid> = keep.iter().flat_map(|p| p.boundaries()).map(|(u, _)| u).collect();
        GraphOrb {
            pieces: keep,
            gluings: self
                .gluings
                .iter()
                .filter(|g| uids.contains(&g.ends.0) && uids.contains(&g.ends.1))
                .cloned()
                .collect(),
            next_uid: self.next_uid,
            next_gluing: self.next_gluing,
            next_name: self.next_name,
        }
    }

    pub fn total_boundaries(&self) -> usize {
        self.pieces.iter().map(|p| p.boundaries().len()).sum()
    }
}

impl fmt::Display for GraphOrb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.pieces {
            let fibers: Vec<String> = p.base.cones.iter().map(u32::to_string).collect();
            write!(f, "piece {} base {}", p.id, p.base.shape_text())?;
            if fibers.is_empty() {
                writeln!(f)?;
            } else {
                writeln!(f, " fibers {}", fibers.join(" "))?;
            }
            for (i, (uid, tag)) in p.boundaries().into_iter().enumerate() {
                let s = p.slopes.get(&uid).copied().unwrap_or((0, 0));
                writeln!(f, "bdry {}.{} {} slope {}/{}", p.id, i, tag, s.0, s.1)?;
            }
        }
        for g in &self.gluings {
            write!(
                f,
                "glue {} {} isotopic={}",
                self.boundary_name(g.ends.0),
                self.boundary_name(g.ends.1),
                g.fibrations_isotopic
            )?;
            if let Some(u) = g.intersection_u {
                write!(f, " u={u}")?;
            }
            if let Some(m) = g.meridian_is_fiber {
                write!(f, " meridian_fiber={m}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn split_ref(s: &str, line: usize) -> Result<(&str, usize), GraphError> {
    let (p, i) = s.rsplit_once('.').ok_or_else(|| GraphError::Parse {
        line,
        reason: format!("expected <piece>.<index>, got `{s}`"),
    })?;
    let i = i.parse().map_err(|_| GraphError::Parse {
        line,
        reason: format!("bad boundary index in `{s}`"),
    })?;
    Ok((p, i))
}

fn parse_bool(v: &str, line: usize) -> Result<bool, GraphError> {
    v.parse().map_err(|_| GraphError::Parse {
        line,
        reason: format!("expected true/false, got `{v}`"),
    })
}

impl FromStr for GraphOrb {
    type Err = GraphError;

    /// Line format: `piece <id> base <base> [fibers <k>...]`,
    /// `bdry <piece>.<i> <T2|S2222> slope <a>/<b>`,
    /// `glue <p>.<i> <q>.<j> isotopic=<bool> [u=<n>] [meridian_fiber=<bool>]`.
    /// `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut g = GraphOrb::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let tok: Vec<&str> = body.split_whitespace().collect();
            let perr = |reason: &str| GraphError::Parse {
                line,
                reason: reason.to_string(),
            };
            match tok[0] {
                "piece" => {
                    if tok.len() < 4 || tok[2] != "base" {
                        return Err(perr("expected `piece <id> base <sig> [fibers <k...>]`"));
                    }
                    let fibers = match tok.get(4) {
                        None => Vec::new(),
                        Some(&"fibers") => tok[5..]
                            .iter()
                            .map(|k| k.parse::<u32>().map_err(|_| perr("bad fiber order")))
                            .collect::<Result<Vec<_>, _>>()?,
                        Some(_) => return Err(perr("expected `fibers`")),
                    };
                    g.add_piece(tok[1], tok[3], &fibers)?;
                }
                "bdry" => {
                    if tok.len() != 5 || tok[3] != "slope" {
                        return Err(perr("expected `bdry <piece>.<i> <T2|S2222> slope <a>/<b>`"));
                    }
                    let (p, i) = split_ref(tok[1], line)?;
                    let tag = match tok[2] {
                        "T2" => BoundaryTag::T2,
                        "S2222" | "S2(2,2,2,2)" => BoundaryTag::Pillowcase,
                        _ => return Err(perr("boundary tag must be T2 or S2222")),
                    };
                    let (a, b) = tok[4].split_once('/').ok_or_else(|| perr("slope must be a/b"))?;
                    let a: i64 = a.parse().map_err(|_| perr("bad slope"))?;
                    let b: i64 = b.parse().map_err(|_| perr("bad slope"))?;
                    g.set_slope(p, i, tag, (a, b))?;
                }
                "glue" => {
                    if tok.len() < 4 {
                        return Err(perr("expected `glue <p>.<i> <q>.<j> isotopic=<bool> ...`"));
                    }
                    let a = split_ref(tok[1], line)?;
                    let b = split_ref(tok[2], line)?;
                    let (mut iso, mut u, mut mf) = (None, None, None);
                    for kv in &tok[3..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| perr("expected key=value"))?;
                        match k {
                            "isotopic" => iso = Some(parse_bool(v, line)?),
                            "u" => u = Some(v.parse::<u32>().map_err(|_| perr("bad u"))?),
                            "meridian_fiber" => mf = Some(parse_bool(v, line)?),
                            _ => return Err(perr(&format!("unknown key `{k}`"))),
                        }
                    }
                    let iso = iso.ok_or_else(|| perr("missing isotopic="))?;
                    g.glue(a, b, iso, u, mf)?;
                }
                other => return Err(perr(&format!("unknown directive `{other}`"))),
            }
        }
        g.prepare()?;
        Ok(g)
    }
}

/// Spherical quotients recognized when a component is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Recognized {
    /// `S3//Z_r`
    Cyclic(u32),
    /// `S3//(Z_r x Z_s)`
    CyclicPair(u32, u32),
    /// `S3//D_r`
    Dihedral(u32),
    /// `(S3//(Z_r x Z_s))//Z2`
    DihedralPair(u32, u32),
}

fn cyclic_text(factors: &[u32]) -> Option<String> {
    let f: Vec<String> = factors.iter().filter(|&&k| k > 1).map(|k| format!("Z{k}")).collect();
    match f.len() {
        0 => None,
        1 => Some(f[0].clone()),
        _ => Some(format!("({})", f.join("×"))),
    }
}

impl fmt::Display for Recognized {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Recognized::Cyclic(r) => match cyclic_text(&[r]) {
                Some(g) => write!(f, "S3//{g}"),
                None => f.write_str("S3"),
            },
            Recognized::CyclicPair(r, s) => match cyclic_text(&[r, s]) {
                Some(g) => write!(f, "S3//{g}"),
                None => f.write_str("S3"),
            },
            // D_1 is the group of order two.
            Recognized::Dihedral(1) => f.write_str("S3//Z2"),
            Recognized::Dihedral(r) => write!(f, "S3//D{r}"),
            Recognized::DihedralPair(r, s) => match cyclic_text(&[r, s]) {
                Some(g) => write!(f, "(S3//{g})//Z2"),
                None => f.write_str("S3//Z2"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    /// Merge across a gluing with isotopic fibrations.
    Merge,
    /// Dehn filling merge of a solid-toric neighbour.
    DehnMerge,
    Step1,
    Step2,
    Step3,
    Step4,
    /// Terminal base shape, case 1..=6.
    Terminal(u8),
}

impl Operation {
    /// Change in the number of gluings this operation must produce.
    pub fn gluing_delta(self) -> i64 {
        match self {
            Operation::Merge | Operation::DehnMerge | Operation::Terminal(_) => -1,
            Operation::Step1 | Operation::Step2 | Operation::Step3 => 1,
            Operation::Step4 => 0,
        }
    }

    /// Number of surgery records this operation emits.
    pub fn surgeries(self) -> usize {
        match self {
            Operation::Step1 | Operation::Step2 | Operation::Step3 | Operation::Step4 | Operation::Terminal(6) => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Merge => f.write_str("merge"),
            Operation::DehnMerge => f.write_str("dehn-merge"),
            Operation::Step1 => f.write_str("step1"),
            Operation::Step2 => f.write_str("step2"),
            Operation::Step3 => f.write_str("step3"),
            Operation::Step4 => f.write_str("step4"),
            Operation::Terminal(c) => write!(f, "step5-case{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub op: Operation,
    pub gluing: usize,
    pub pieces: (usize, usize),
    pub gluings: (usize, usize),
    pub surgeries: usize,
    pub recognized: Option<Recognized>,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on gluing {}: pieces {}->{}, gluings {}->{}",
            self.op, self.gluing, self.pieces.0, self.pieces.1, self.gluings.0, self.gluings.1
        )?;
        if let Some(r) = self.recognized {
            write!(f, ", recognized {r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationResult {
    pub strong: GraphOrb,
    pub surgeries: Vec<SurgeryRecord>,
    pub recognized: Vec<Recognized>,
    pub trace: Vec<TraceEntry>,
}

impl NormalizationResult {
    /// Checks each trace entry against the expected gluing delta and
    /// surgery count, and that the entries chain from `initial_gluings` to
    /// the final gluing count.
    pub fn reconcile(&self, initial_gluings: usize) -> Result<(), String> {
        let mut count = initial_gluings;
        let mut surgeries = 0;
        for (i, t) in self.trace.iter().enumerate() {
            if t.gluings.0 != count {
                return Err(format!("entry {i}: starts at {} gluings, expected {count}", t.gluings.0));
            }
            let delta = t.gluings.1 as i64 - t.gluings.0 as i64;
            if delta != t.op.gluing_delta() {
                return Err(format!("entry {i} ({}): gluing delta {delta}, expected {}", t.op, t.op.gluing_delta()));
            }
            if t.surgeries != t.op.surgeries() {
                return Err(format!("entry {i} ({}): emitted {} surgeries", t.op, t.surgeries));
            }
            surgeries += t.surgeries;
            count = t.gluings.1;
        }
        if count != self.strong.gluings.len() {
            return Err(format!("trace ends at {count} gluings, result has {}", self.strong.gluings.len()));
        }
        if surgeries != self.surgeries.len() {
            return Err(format!("trace emits {surgeries} surgeries, result has {}", self.surgeries.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub gluing: usize,
    /// 2: isotopic fibrations; 3: compressible (solid-toric neighbour).
    pub condition: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrongReport {
    pub strong: bool,
    pub violations: Vec<Violation>,
}

/// Strongness by certificate: no gluing with isotopic fibrations and no
/// gluing next to a solid-toric piece.
pub fn verify_strong(g: &GraphOrb) -> Result<StrongReport, GraphError> {
    g.validate()?;
    let mut violations = Vec::new();
    for gl in &g.gluings {
        if gl.fibrations_isotopic {
            violations.push(Violation {
                gluing: gl.id,
                condition: 2,
                reason: "fibrations on the two sides are isotopic".into(),
            });
        }
        if let Some((up, _)) = g.solid_side(gl) {
            let p = &g.pieces[g.owner(up).expect("known")];
            violations.push(Violation {
                gluing: gl.id,
                condition: 3,
                reason: format!("piece {} over {} is solid-toric, so the gluing is compressible", p.id, p.base),
            });
        }
    }
    Ok(StrongReport {
        strong: violations.is_empty(),
        violations,
    })
}

fn count(g: &GraphOrb) -> (usize, usize) {
    (g.pieces.len(), g.gluings.len())
}

fn spherical(cones: &[u32]) -> TwoOrbSig {
    let c: Vec<u32> = cones.iter().copied().filter(|&k| k > 1).collect();
    TwoOrbSig::sphere(&c).expect("orders at least 2")
}

/// Merges the two sides of a gluing with isotopic fibrations.
pub fn op1_merge(g: &GraphOrb, gluing: usize) -> Result<GraphOrb, GraphError> {
    let mut out = g.clone();
    out.merge(out.gluing_index(gluing)?)?;
    Ok(out)
}

/// Absorbs a solid-toric neighbour whose meridian is not a fiber.
pub fn op2_dehn_merge(g: &GraphOrb, gluing: usize) -> Result<GraphOrb, GraphError> {
    let mut out = g.clone();
    out.dehn_merge(out.gluing_index(gluing)?)?;
    Ok(out)
}

/// Step 5 recognition on a bare base: `r` is the order of the solid-toric
/// neighbour and `glued` the boundary where it is attached.
pub fn step5_recognize(base: &Base, glued: Uid, r: u32) -> Result<Step5Outcome, GraphError> {
    let not_terminal = || GraphError::NotTerminal(base.to_string());
    let loc = base.locate(glued).ok_or_else(not_terminal)?;
    if base.genus != 0 {
        return Err(not_terminal());
    }
    match loc {
        Locus::Free(ci) => {
            let others: Vec<&Circle> = base
                .circles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ci)
                .map(|(_, c)| c)
                .collect();
            match (base.cones.as_slice(), others.as_slice()) {
                ([], []) => Ok(Step5Outcome::Removed(1, Recognized::Cyclic(r))),
                ([s], []) => Ok(Step5Outcome::Removed(3, Recognized::CyclicPair(r, *s))),
                ([], [Circle::Free(_)]) => Ok(Step5Outcome::Absorbed(1)),
                _ => Err(not_terminal()),
            }
        }
        Locus::Interval(ci, j) => {
            if !base.cones.is_empty() {
                return Err(not_terminal());
            }
            let Circle::Mixed(items) = &base.circles[ci] else {
                unreachable!()
            };
            let rest: Vec<Item> = rotate_out(items, j);
            let others: Vec<&Circle> = base
                .circles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ci)
                .map(|(_, c)| c)
                .collect();
            match (rest.as_slice(), others.as_slice()) {
                ([], []) => Ok(Step5Outcome::Removed(4, Recognized::Dihedral(r))),
                ([Item::Corner(s)], []) => Ok(Step5Outcome::Removed(5, Recognized::DihedralPair(r, *s))),
                ([Item::Interval(_)], []) => Ok(Step5Outcome::Absorbed(1)),
                ([], [Circle::Free(_)]) => Ok(Step5Outcome::Replaced(6, Recognized::Dihedral(r))),
                _ => Err(not_terminal()),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step5Outcome {
    /// Component removed and recognized (cases 2-5; the `u8` is the case).
    Removed(u8, Recognized),
    /// Case 1: the neighbour absorbs the piece and stays solid-toric.
    Absorbed(u8),
    /// Case 6: replaced by a solid torus plus a recognized summand.
    Replaced(u8, Recognized),
}

// Fixes the case number for the disc shapes; the free-circle disc is case 2.
impl Step5Outcome {
    pub fn case(&self) -> u8 {
        match *self {
            Step5Outcome::Removed(1, _) => 2,
            Step5Outcome::Removed(c, _) | Step5Outcome::Absorbed(c) | Step5Outcome::Replaced(c, _) => c,
        }
    }
}

/// Items of a mixed circle after `j`, in cyclic order, without `j`.
fn rotate_out(items: &[Item], j: usize) -> Vec<Item> {
    let n = items.len();
    (1..n).map(|k| items[(j + k) % n]).collect()
}

impl GraphOrb {
    fn merge(&mut self, gi: usize) -> Result<(), GraphError> {
        let gl = self.gluings[gi].clone();
        if !gl.fibrations_isotopic {
            return Err(GraphError::Precondition(format!("gluing {} does not have isotopic fibrations", gl.id)));
        }
        let (a, b) = gl.ends;
        let pa = self.owner(a).expect("known");
        let pb = self.owner(b).expect("known");
        if pa != pb {
            let (lo, hi) = (pa.min(pb), pa.max(pb));
            let q = self.pieces.remove(hi);
            let p = self.pieces.remove(lo);
            let (ua, ub) = if pa == lo { (a, b) } else { (b, a) };
            let mut circles = Vec::new();
            match (p.base.locate(ua).expect("known"), q.base.locate(ub).expect("known")) {
                (Locus::Free(ci), Locus::Free(cj)) => {
                    circles.extend(p.base.circles.iter().enumerate().filter(|(i, _)| *i != ci).map(|(_, c)| c.clone()));
                    circles.extend(q.base.circles.iter().enumerate().filter(|(i, _)| *i != cj).map(|(_, c)| c.clone()));
                }
                (Locus::Interval(ci, i), Locus::Interval(cj, j)) => {
                    let (Circle::Mixed(x), Circle::Mixed(y)) = (&p.base.circles[ci], &q.base.circles[cj]) else {
                        unreachable!()
                    };
                    let mut word = rotate_out(x, i);
                    word.extend(rotate_out(y, j));
                    circles.extend(p.base.circles.iter().enumerate().filter(|(k, _)| *k != ci).map(|(_, c)| c.clone()));
                    circles.push(Circle::Mixed(word));
                    circles.extend(q.base.circles.iter().enumerate().filter(|(k, _)| *k != cj).map(|(_, c)| c.clone()));
                }
                _ => return Err(GraphError::GluingTagMismatch(gl.id)),
            }
            let mut slopes = p.slopes.clone();
            slopes.extend(q.slopes.iter().map(|(k, v)| (*k, *v)));
            slopes.remove(&ua);
            slopes.remove(&ub);
            let mut cones = p.base.cones.clone();
            cones.extend_from_slice(&q.base.cones);
            let merged = SeifertPiece {
                id: p.id.clone(),
                base: Base {
                    genus: p.base.genus + q.base.genus,
                    cones,
                    circles,
                }
                .sorted(),
                slopes,
                meridian: None,
            };
            self.pieces.insert(lo, merged);
        } else {
            let p = &mut self.pieces[pa];
            match (p.base.locate(a).expect("known"), p.base.locate(b).expect("known")) {
                (Locus::Free(ci), Locus::Free(cj)) => {
                    let (lo, hi) = (ci.min(cj), ci.max(cj));
                    p.base.circles.remove(hi);
                    p.base.circles.remove(lo);
                    p.base.genus += 1;
                }
                (Locus::Interval(ci, i), Locus::Interval(cj, j)) if ci == cj => {
                    let Circle::Mixed(x) = p.base.circles.remove(ci) else { unreachable!() };
                    let n = x.len();
                    let rot: Vec<Item> = (0..n).map(|k| x[(i + k) % n]).collect();
                    let jj = (j + n - i) % n;
                    p.base.circles.push(Circle::Mixed(rot[1..jj].to_vec()));
                    p.base.circles.push(Circle::Mixed(rot[jj + 1..].to_vec()));
                }
                (Locus::Interval(ci, i), Locus::Interval(cj, j)) => {
                    let (Circle::Mixed(x), Circle::Mixed(y)) = (&p.base.circles[ci], &p.base.circles[cj]) else {
                        unreachable!()
                    };
                    let mut word = rotate_out(x, i);
                    word.extend(rotate_out(y, j));
                    let (lo, hi) = (ci.min(cj), ci.max(cj));
                    p.base.circles.remove(hi);
                    p.base.circles.remove(lo);
                    p.base.circles.push(Circle::Mixed(word));
                    p.base.genus += 1;
                }
                _ => return Err(GraphError::GluingTagMismatch(gl.id)),
            }
            p.slopes.remove(&a);
            p.slopes.remove(&b);
            p.meridian = None;
        }
        self.gluings.remove(gi);
        self.sync();
        Ok(())
    }

    fn dehn_merge(&mut self, gi: usize) -> Result<(), GraphError> {
        let gl = self.gluings[gi].clone();
        let (up, uu) = self
            .solid_side(&gl)
            .ok_or_else(|| GraphError::Precondition(format!("gluing {} has no solid-toric side", gl.id)))?;
        if gl.fibrations_isotopic {
            return Err(GraphError::Precondition(format!("gluing {} has isotopic fibrations", gl.id)));
        }
        if gl.meridian_is_fiber != Some(false) {
            return Err(GraphError::Precondition(format!(
                "gluing {}: the meridian is a fiber, a cut step applies instead",
                gl.id
            )));
        }
        let u = gl.intersection_u.ok_or(GraphError::MissingU(gl.id))?;
        let ipp = self.owner(up).expect("known");
        let r = self.pieces[ipp].base.solid_toric_order().expect("solid-toric");
        self.pieces.remove(ipp);
        self.gluings.remove(gi);
        let iu = self.owner(uu).expect("known");
        let p = &mut self.pieces[iu];
        let order = u * r;
        match p.base.locate(uu).expect("known") {
            Locus::Free(ci) => {
                p.base.circles.remove(ci);
                if order > 1 {
                    p.base.cones.push(order);
                    p.base.cones.sort_unstable();
                }
            }
            Locus::Interval(ci, j) => {
                let Circle::Mixed(items) = &mut p.base.circles[ci] else { unreachable!() };
                if order > 1 {
                    items[j] = Item::Corner(order);
                } else {
                    items.remove(j);
                }
            }
        }
        p.slopes.remove(&uu);
        p.meridian = None;
        self.sync();
        Ok(())
    }

    /// Solid-toric cap glued to boundary `at` with the meridian equal to the
    /// fiber there. Returns the cap's boundary uid.
    fn attach_cap(&mut self, parent: &str, at: Uid, twisted: bool, r: u32, fiber: Slope) {
        let c = self.fresh_uid();
        let circle = if twisted {
            let mut items = vec![Item::Interval(c)];
            if r > 1 {
                items.push(Item::Corner(r));
            }
            Circle::Mixed(items)
        } else {
            Circle::Free(c)
        };
        let cones = if r > 1 && !twisted { vec![r] } else { Vec::new() };
        let name = self.fresh_name(parent, "cap");
        self.pieces.push(SeifertPiece {
            id: name,
            base: Base {
                genus: 0,
                cones,
                circles: vec![circle],
            },
            slopes: BTreeMap::from([(c, complement(fiber))]),
            meridian: Some(fiber),
        });
        self.push_gluing(at, c);
    }

    fn second_operation(&mut self, gi: usize) -> Result<(Operation, Vec<SurgeryRecord>, Option<Recognized>), GraphError> {
        let gl = self.gluings[gi].clone();
        if gl.meridian_is_fiber == Some(false) {
            self.dehn_merge(gi)?;
            return Ok((Operation::DehnMerge, Vec::new(), None));
        }
        let (up, rr) = self
            .solid_side(&gl)
            .ok_or_else(|| GraphError::Precondition(format!("gluing {} has no solid-toric side", gl.id)))?;
        let ipp = self.owner(up).expect("known");
        let r = self.pieces[ipp].base.solid_toric_order().expect("solid-toric");
        let iu = self.owner(rr).expect("known");
        let u_piece = self.pieces[iu].clone();
        let base = &u_piece.base;
        let fiber = u_piece.slope(rr);
        let sites = (format!("g{}.a", gl.id), format!("g{}.b", gl.id));
        let split = |gamma: TwoOrbSig| vec![SurgeryRecord::new(gamma, sites.clone(), SurgeryDirection::Split)];

        if let Ok(outcome) = step5_recognize(base, rr, r) {
            let case = outcome.case();
            return match outcome {
                Step5Outcome::Removed(_, rec) => {
                    let (a, b) = (ipp.max(iu), ipp.min(iu));
                    self.pieces.remove(a);
                    self.pieces.remove(b);
                    self.gluings.remove(gi);
                    self.sync();
                    Ok((Operation::Terminal(case), Vec::new(), Some(rec)))
                }
                Step5Outcome::Absorbed(_) | Step5Outcome::Replaced(..) => {
                    // The remaining boundary of U becomes the boundary of a
                    // solid-toric piece whose meridian is U's fiber there.
                    let (other, _) = base.boundaries().into_iter().find(|(u, _)| *u != rr).expect("two ends");
                    let mu = u_piece.slope(other);
                    let replaced = matches!(outcome, Step5Outcome::Replaced(..));
                    let twisted = !replaced && matches!(base.locate(other), Some(Locus::Interval(..)));
                    let circle = if twisted {
                        let mut items = vec![Item::Interval(other)];
                        if r > 1 {
                            items.push(Item::Corner(r));
                        }
                        Circle::Mixed(items)
                    } else {
                        Circle::Free(other)
                    };
                    let cones = if r > 1 && !twisted { vec![r] } else { Vec::new() };
                    let mut l = complement(mu);
                    if let Some(go) = self.gluing_at(other) {
                        let e = self.gluings[go].ends;
                        let far = if e.0 == other { e.1 } else { e.0 };
                        if same_slope(l, self.slope_of(far)) {
                            l = (l.0 + mu.0, l.1 + mu.1);
                        }
                    }
                    self.pieces[iu] = SeifertPiece {
                        id: u_piece.id.clone(),
                        base: Base {
                            genus: 0,
                            cones,
                            circles: vec![circle],
                        },
                        slopes: BTreeMap::from([(other, l)]),
                        meridian: Some(mu),
                    };
                    self.pieces.remove(ipp);
                    self.gluings.remove(gi);
                    self.sync();
                    match outcome {
                        Step5Outcome::Replaced(_, rec) => Ok((Operation::Terminal(case), split(spherical(&[r, r])), Some(rec))),
                        _ => Ok((Operation::Terminal(case), Vec::new(), None)),
                    }
                }
            };
        }

        let loc = base.locate(rr).expect("known");
        let pid = u_piece.id.clone();
        match loc {
            Locus::Free(ci) => {
                let others: Vec<Circle> = base
                    .circles
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != ci)
                    .map(|(_, c)| c.clone())
                    .collect();
                let features = base.genus as usize + base.cones.len() + others.len();
                if features >= 2 {
                    // Step 1: the first feature goes to one side.
                    let (mut b1, mut b2) = (
                        Base { genus: 0, cones: vec![], circles: vec![] },
                        Base { genus: base.genus, cones: base.cones.clone(), circles: vec![] },
                    );
                    let mut rest = others.clone();
                    if !rest.is_empty() {
                        b1.circles.push(rest.remove(0));
                    } else if !b2.cones.is_empty() {
                        b1.cones.push(b2.cones.remove(0));
                    } else {
                        b1.genus = 1;
                        b2.genus -= 1;
                    }
                    let (r1, r2) = (self.fresh_uid(), self.fresh_uid());
                    b1.circles.insert(0, Circle::Free(r1));
                    b2.circles.insert(0, Circle::Free(r2));
                    b2.circles.extend(rest);
                    self.replace_split(iu, ipp, gi, &u_piece, [(b1, r1, false), (b2, r2, false)], r, fiber);
                    return Ok((Operation::Step1, split(spherical(&[r, r])), None));
                }
                if base.genus == 1 {
                    // Step 2: cut through the handle.
                    let (r1, r2) = (self.fresh_uid(), self.fresh_uid());
                    let mut p = u_piece.clone();
                    p.base.genus = 0;
                    p.base.circles = vec![Circle::Free(r1), Circle::Free(r2)];
                    p.slopes = BTreeMap::from([(r1, fiber), (r2, fiber)]);
                    p.meridian = None;
                    self.pieces[iu] = p;
                    self.pieces.remove(ipp);
                    self.gluings.remove(gi);
                    self.attach_cap(&pid, r1, false, r, fiber);
                    self.attach_cap(&pid, r2, false, r, fiber);
                    self.sync();
                    return Ok((Operation::Step2, split(spherical(&[r, r])), None));
                }
                if let [Circle::Mixed(items)] = others.as_slice() {
                    // Step 4: R becomes an interval on the reflector circle.
                    let rn = self.fresh_uid();
                    let mut items = items.clone();
                    items.push(Item::Interval(rn));
                    let mut p = u_piece.clone();
                    p.base.circles = vec![Circle::Mixed(items)];
                    p.slopes.remove(&rr);
                    p.slopes.insert(rn, fiber);
                    p.meridian = None;
                    self.pieces[iu] = p;
                    self.pieces.remove(ipp);
                    self.gluings.remove(gi);
                    self.attach_cap(&pid, rn, true, r, fiber);
                    self.sync();
                    return Ok((Operation::Step4, split(spherical(&[2, 2, r])), None));
                }
                Err(GraphError::NotTerminal(base.to_string()))
            }
            Locus::Interval(ci, j) => {
                let Circle::Mixed(items) = &base.circles[ci] else { unreachable!() };
                let interior = base.genus as usize + base.cones.len() + base.circles.len() - 1;
                if interior >= 1 {
                    // Step 1 with R an interval: all interior features move
                    // to a side bounded by a free circle.
                    let (r1, r2) = (self.fresh_uid(), self.fresh_uid());
                    let mut c1: Vec<Circle> = vec![Circle::Free(r1)];
                    c1.extend(base.circles.iter().enumerate().filter(|(i, _)| *i != ci).map(|(_, c)| c.clone()));
                    let b1 = Base { genus: base.genus, cones: base.cones.clone(), circles: c1 };
                    let mut word = items.clone();
                    word[j] = Item::Interval(r2);
                    let b2 = Base { genus: 0, cones: vec![], circles: vec![Circle::Mixed(word)] };
                    self.replace_split(iu, ipp, gi, &u_piece, [(b1, r1, false), (b2, r2, true)], r, fiber);
                    return Ok((Operation::Step1, split(spherical(&[r, r])), None));
                }
                let rest = rotate_out(items, j);
                if rest.len() >= 2 {
                    // Step 3: arc from R to the reflector between the first
                    // and second remaining entries.
                    let (r1, r2) = (self.fresh_uid(), self.fresh_uid());
                    let b1 = Base {
                        genus: 0,
                        cones: vec![],
                        circles: vec![Circle::Mixed(vec![Item::Interval(r1), rest[0]])],
                    };
                    let mut w2 = vec![Item::Interval(r2)];
                    w2.extend_from_slice(&rest[1..]);
                    let b2 = Base { genus: 0, cones: vec![], circles: vec![Circle::Mixed(w2)] };
                    self.replace_split(iu, ipp, gi, &u_piece, [(b1, r1, true), (b2, r2, true)], r, fiber);
                    return Ok((Operation::Step3, split(spherical(&[2, 2, r])), None));
                }
                Err(GraphError::NotTerminal(base.to_string()))
            }
        }
    }

    /// Replaces U by two pieces over the given bases, each capped at its new
    /// boundary; U' and the old gluing disappear.
    #[allow(clippy::too_many_arguments)]
    fn replace_split(
        &mut self,
        iu: usize,
        ipp: usize,
        gi: usize,
        u_piece: &SeifertPiece,
        sides: [(Base, Uid, bool); 2],
        r: u32,
        fiber: Slope,
    ) {
        let mut new_pieces = Vec::new();
        for (k, (b, at, _)) in sides.iter().enumerate() {
            let mut slopes: BTreeMap<Uid, Slope> = b
                .boundaries()
                .into_iter()
                .filter_map(|(u, _)| u_piece.slopes.get(&u).map(|s| (u, *s)))
                .collect();
            slopes.insert(*at, fiber);
            let id = if k == 0 {
                u_piece.id.clone()
            } else {
                self.fresh_name(&u_piece.id, "part")
            };
            new_pieces.push(SeifertPiece {
                id,
                base: b.clone().sorted(),
                slopes,
                meridian: None,
            });
        }
        let second = new_pieces.pop().expect("two sides");
        self.pieces[iu] = new_pieces.pop().expect("two sides");
        self.pieces.remove(ipp);
        self.pieces.push(second);
        self.gluings.remove(gi);
        for (_, at, twisted) in sides {
            self.attach_cap(&u_piece.id, at, twisted, r, fiber);
        }
        self.sync();
    }
}

/// Runs the first operation to exhaustion, then the second, repeating
/// until no gluing is eligible. Ties go to the lowest gluing id.
pub fn normalize(g: &GraphOrb) -> Result<NormalizationResult, GraphError> {
    let mut work = g.clone();
    work.prepare()?;
    let budget = 1000 + 200 * (work.pieces.len() + work.gluings.len() + work.total_boundaries())
        + 50 * work.pieces.iter().map(|p| p.base.genus as usize + p.base.cones.len()).sum::<usize>();
    let mut trace = Vec::new();
    let mut surgeries = Vec::new();
    let mut recognized = Vec::new();
    for _ in 0..budget {
        let before = count(&work);
        let (op, gid, recs, rec) = if let Some(gi) = work.gluings.iter().position(|g| g.fibrations_isotopic) {
            let id = work.gluings[gi].id;
            work.merge(gi)?;
            (Operation::Merge, id, Vec::new(), None)
        } else if let Some(gi) = work.gluings.iter().position(|gl| work.solid_side(gl).is_some()) {
            let id = work.gluings[gi].id;
            let (op, recs, rec) = work.second_operation(gi)?;
            (op, id, recs, rec)
        } else {
            return Ok(NormalizationResult {
                strong: work,
                surgeries,
                recognized,
                trace,
            });
        };
        let after = count(&work);
        trace.push(TraceEntry {
            op,
            gluing: gid,
            pieces: (before.0, after.0),
            gluings: (before.1, after.1),
            surgeries: recs.len(),
            recognized: rec,
        });
        surgeries.extend(recs);
        recognized.extend(rec);
    }
    Err(GraphError::NotTerminating)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressibleSplit {
    /// The solid-toric piece bounded by the chosen boundary.
    pub solid_toric: SeifertPiece,
    pub token: SolidToricToken,
    /// Normalization of the component, with the solid-toric piece removed
    /// from its strong part.
    pub rest: NormalizationResult,
}

/// For a free boundary `c` of a component that compresses: normalizes that
/// component and returns the solid-toric piece bounded by `c`.
pub fn compressible_boundary_split(g: &GraphOrb, piece: &str, index: usize) -> Result<CompressibleSplit, GraphError> {
    let mut work = g.clone();
    work.prepare()?;
    let c = work.resolve(piece, index)?;
    if work.gluing_at(c).is_some() {
        return Err(GraphError::NotFree(format!("{piece}.{index}")));
    }
    let owner = work.owner(c).expect("resolved");
    let comp = work
        .components()
        .into_iter()
        .find(|comp| comp.contains(&owner))
        .expect("every piece is in a component");
    let sub = work.restrict(&comp);
    let mut result = normalize(&sub)?;
    let pi = result
        .strong
        .owner(c)
        .ok_or_else(|| GraphError::NoCertificate(format!("{piece}.{index} vanished during normalization")))?;
    let p = result.strong.pieces[pi].clone();
    let token = p.base.solid_toric_token().ok_or_else(|| {
        GraphError::NoCertificate(format!("piece over {} bounded by {piece}.{index} is not solid-toric", p.base))
    })?;
    result.strong.pieces.remove(pi);
    Ok(CompressibleSplit {
        solid_toric: p,
        token,
        rest: result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> GraphOrb {
        s.parse().unwrap_or_else(|e| panic!("{e}\n{s}"))
    }

    fn tokens(r: &NormalizationResult) -> Vec<String> {
        r.recognized.iter().map(|t| t.to_string()).collect()
    }

    fn check(g: &GraphOrb) -> NormalizationResult {
        let r = normalize(g).unwrap();
        assert!(verify_strong(&r.strong).unwrap().strong, "{}", r.strong);
        r.reconcile(g.gluings.len()).unwrap();
        r
    }

    #[test]
    fn base_parsing_and_euler_characteristic() {
        let mut n = 0;
        let b = Base::parse("D2//Z2", &mut n).unwrap();
        assert_eq!(b.euler_char(), Rational64::new(1, 2));
        assert_eq!(b.solid_toric_order(), Some(1));
        let b = Base::parse("D2//D3", &mut n).unwrap();
        assert_eq!(b.euler_char(), Rational64::new(1, 6));
        assert_eq!(b.solid_toric_order(), Some(3));
        let b = Base::parse("D2(5)", &mut n).unwrap();
        assert_eq!(b.solid_toric_token(), Some(SolidToricToken::SolidTorusCore(5)));
        let b = Base::parse("A2", &mut n).unwrap();
        assert_eq!(b.euler_char(), Rational64::from_integer(0));
        assert_eq!(b.solid_toric_order(), None);
        let b = Base::parse("D2+[I]", &mut n).unwrap();
        assert_eq!(b.boundaries().len(), 2);
        assert_eq!(b.boundaries()[1].1, BoundaryTag::Pillowcase);
        assert_eq!(b.shape_text(), "D2+[I]");
        assert!(Base::parse("D2+[c1]", &mut n).is_err());
        assert!(Base::parse("D2+I", &mut n).is_err());
    }

    #[test]
    fn slope_helpers() {
        for s in [(1, 0), (0, 1), (2, 3), (-5, 7), (4, -9)] {
            assert_eq!(det(s, complement(s)), 1);
        }
        assert!(same_slope((2, -3), (-2, 3)));
        assert!(!same_slope((2, 3), (3, 2)));
    }

    const HYPERBOLIC_PAIR: &str = "
piece A base D2 fibers 2 3
piece B base D2 fibers 2 5
bdry A.0 T2 slope 1/0
bdry B.0 T2 slope 0/1
glue A.0 B.0 isotopic=false
";

    #[test]
    fn verify_strong_examples() {
        let g = parse(HYPERBOLIC_PAIR);
        assert!(verify_strong(&g).unwrap().strong);
        let iso = parse(&HYPERBOLIC_PAIR.replace("0/1", "-1/0").replace("isotopic=false", "isotopic=true"));
        let rep = verify_strong(&iso).unwrap();
        assert!(!rep.strong);
        assert_eq!(rep.violations[0].condition, 2);
        let disc = parse(
            "piece A base D2\npiece B base D2 fibers 2 3\nbdry A.0 T2 slope 1/0\nbdry B.0 T2 slope 0/1\n\
             glue A.0 B.0 isotopic=false meridian_fiber=true",
        );
        let rep = verify_strong(&disc).unwrap();
        assert!(!rep.strong);
        assert_eq!(rep.violations[0].condition, 3);
    }

    #[test]
    fn constructor_rules() {
        let bad_iso = HYPERBOLIC_PAIR.replace("isotopic=false", "isotopic=true");
        assert!(matches!(bad_iso.parse::<GraphOrb>(), Err(GraphError::IsotopyMismatch(_))));
        let missing_mf = "piece A base D2\npiece B base A2\nbdry A.0 T2 slope 1/0\nbdry B.0 T2 slope 0/1\n\
                          bdry B.1 T2 slope 0/1\nglue A.0 B.0 isotopic=false";
        assert!(matches!(missing_mf.parse::<GraphOrb>(), Err(GraphError::MissingMeridian(_))));
        let missing_u = format!("{missing_mf} meridian_fiber=false");
        assert!(matches!(missing_u.parse::<GraphOrb>(), Err(GraphError::MissingU(_))));
        let extra_u = format!("{missing_mf} meridian_fiber=true u=2");
        assert!(matches!(extra_u.parse::<GraphOrb>(), Err(GraphError::UnexpectedU(_))));
        let stray_u = HYPERBOLIC_PAIR.replace("isotopic=false", "isotopic=false u=2");
        assert!(matches!(stray_u.parse::<GraphOrb>(), Err(GraphError::UnexpectedU(_))));
        let tag = "piece A base D2\nbdry A.0 S2222 slope 1/0";
        assert!(matches!(tag.parse::<GraphOrb>(), Err(GraphError::TagMismatch(..))));
        let slope = "piece A base D2\nbdry A.0 T2 slope 2/4";
        assert!(matches!(slope.parse::<GraphOrb>(), Err(GraphError::SlopeNotPrimitive(2, 4))));
        assert!(matches!("piece A base D2".parse::<GraphOrb>(), Err(GraphError::MissingSlope(_))));
        let zero = format!("{missing_mf} meridian_fiber=false u=0");
        assert!(matches!(zero.parse::<GraphOrb>(), Err(GraphError::ZeroU(_))));
    }

    #[test]
    fn merge_two_annuli() {
        let g = parse(
            "piece A base A2\npiece B base A2\nbdry A.0 T2 slope 1/0\nbdry A.1 T2 slope 1/0\n\
             bdry B.0 T2 slope 1/0\nbdry B.1 T2 slope 2/1\nglue A.1 B.0 isotopic=true",
        );
        let m = op1_merge(&g, 0).unwrap();
        assert_eq!(m.pieces.len(), 1);
        assert_eq!(m.gluings.len(), 0);
        assert_eq!(m.pieces[0].base.shape_text(), "A2");
        assert_eq!(m.total_boundaries(), g.total_boundaries() - 2);
        assert!(matches!(op1_merge(&parse(HYPERBOLIC_PAIR), 0), Err(GraphError::Precondition(_))));
    }

    #[test]
    fn self_gluing_annulus_closes_to_torus_base() {
        // Identifying the two ends of S1 x I gives a torus.
        let g = parse("piece A base A2 fibers 2\nbdry A.0 T2 slope 1/0\nbdry A.1 T2 slope 1/0\nglue A.0 A.1 isotopic=true");
        let m = op1_merge(&g, 0).unwrap();
        assert_eq!(m.pieces[0].base.genus, 1);
        assert!(m.pieces[0].base.circles.is_empty());
        assert_eq!(m.pieces[0].base.cones, vec![2]);
    }

    #[test]
    fn pillowcase_merges_join_reflector_words() {
        let g = parse(
            "piece A base D2//D3\npiece B base S2+[I,c2,I]\nbdry A.0 S2222 slope 1/0\n\
             bdry B.0 S2222 slope 1/0\nbdry B.1 S2222 slope 0/1\nglue A.0 B.0 isotopic=true",
        );
        let chi = g.pieces[0].base.euler_char() + g.pieces[1].base.euler_char();
        let m = op1_merge(&g, 0).unwrap();
        assert_eq!(m.pieces[0].base.euler_char(), chi);
        assert_eq!(m.pieces[0].base.shape_text(), "S2+[c3,c2,I]");
    }

    #[test]
    fn dehn_merge_examples() {
        let g = parse(
            "piece U base A2\npiece V base D2\nbdry U.0 T2 slope 1/0\nbdry U.1 T2 slope 0/1\n\
             bdry V.0 T2 slope 0/1\nglue U.0 V.0 isotopic=false u=3 meridian_fiber=false",
        );
        let m = op2_dehn_merge(&g, 0).unwrap();
        assert_eq!(m.pieces.len(), 1);
        assert_eq!(m.pieces[0].base.cones, vec![3]);
        assert_eq!(m.pieces[0].base.shape_text(), "D2");
        let g1 = parse(
            "piece U base A2\npiece V base D2\nbdry U.0 T2 slope 1/0\nbdry U.1 T2 slope 0/1\n\
             bdry V.0 T2 slope 0/1\nglue U.0 V.0 isotopic=false u=1 meridian_fiber=false",
        );
        assert!(op2_dehn_merge(&g1, 0).unwrap().pieces[0].base.cones.is_empty());
        let gm = parse(
            "piece U base A2\npiece V base D2\nbdry U.0 T2 slope 1/0\nbdry U.1 T2 slope 0/1\n\
             bdry V.0 T2 slope 0/1\nglue U.0 V.0 isotopic=false meridian_fiber=true",
        );
        assert!(matches!(op2_dehn_merge(&gm, 0), Err(GraphError::Precondition(_))));
    }

    #[test]
    fn meridian_data_survives_preparation() {
        let g = parse(
            "piece U base A2\npiece V base D2\nbdry U.0 T2 slope 2/1\nbdry U.1 T2 slope 0/1\n\
             bdry V.0 T2 slope 0/1\nglue U.0 V.0 isotopic=false u=5 meridian_fiber=false",
        );
        assert_eq!(g.gluings[0].intersection_u, Some(5));
        assert_eq!(g.gluings[0].meridian_is_fiber, Some(false));
    }

    #[test]
    fn step5_table() {
        let mut n = 0;
        let d2 = Base::parse("D2", &mut n).unwrap();
        let r = |b: &Base, rr: u32| step5_recognize(b, b.boundaries()[0].0, rr).unwrap();
        assert_eq!(r(&d2, 5), Step5Outcome::Removed(1, Recognized::Cyclic(5)));
        assert_eq!(r(&d2, 5).case(), 2);
        let d23 = Base::parse("D2(3)", &mut n).unwrap();
        assert_eq!(r(&d23, 2), Step5Outcome::Removed(3, Recognized::CyclicPair(2, 3)));
        let dz2 = Base::parse("D2//Z2", &mut n).unwrap();
        assert_eq!(r(&dz2, 4), Step5Outcome::Removed(4, Recognized::Dihedral(4)));
        let dd = Base::parse("D2//D3", &mut n).unwrap();
        assert_eq!(r(&dd, 2), Step5Outcome::Removed(5, Recognized::DihedralPair(2, 3)));
        let ann = Base::parse("A2", &mut n).unwrap();
        assert_eq!(r(&ann, 2), Step5Outcome::Absorbed(1));
        let mixed = Base::parse("D2+[I]", &mut n).unwrap();
        let at = mixed.boundaries()[1].0;
        assert_eq!(step5_recognize(&mixed, at, 3).unwrap(), Step5Outcome::Replaced(6, Recognized::Dihedral(3)));
        let big = Base::parse("A2(2)", &mut n).unwrap();
        assert!(matches!(step5_recognize(&big, big.boundaries()[0].0, 2), Err(GraphError::NotTerminal(_))));
    }

    #[test]
    fn recognized_token_text() {
        assert_eq!(Recognized::Cyclic(5).to_string(), "S3//Z5");
        assert_eq!(Recognized::Cyclic(1).to_string(), "S3");
        assert_eq!(Recognized::CyclicPair(2, 3).to_string(), "S3//(Z2×Z3)");
        assert_eq!(Recognized::CyclicPair(1, 3).to_string(), "S3//Z3");
        assert_eq!(Recognized::Dihedral(4).to_string(), "S3//D4");
        assert_eq!(Recognized::DihedralPair(2, 3).to_string(), "(S3//(Z2×Z3))//Z2");
    }

    #[test]
    fn already_strong_is_a_fixpoint() {
        let g = parse(HYPERBOLIC_PAIR);
        let r = check(&g);
        assert!(r.trace.is_empty() && r.surgeries.is_empty() && r.recognized.is_empty());
        assert_eq!(r.strong, g);
    }

    #[test]
    fn disc_with_fiber_meridian_is_a_lens_quotient() {
        let g = parse(
            "piece U base D2\npiece V base D2(5)\nbdry U.0 T2 slope 1/0\nbdry V.0 T2 slope 0/1\n\
             glue U.0 V.0 isotopic=false meridian_fiber=true",
        );
        let r = check(&g);
        assert_eq!(tokens(&r), vec!["S3//Z5"]);
        assert!(r.strong.pieces.is_empty());
    }

    #[test]
    fn isotopic_chain_collapses_to_one_piece() {
        // Three pieces glued in a line, all fibrations matching: merging by
        // hand gives D2(2) u A2 u D2(3) = S2(2,3) over a single piece.
        let g = parse(
            "piece A base D2 fibers 2\npiece B base A2\npiece C base D2 fibers 3\n\
             bdry A.0 T2 slope 1/0\nbdry B.0 T2 slope 1/0\nbdry B.1 T2 slope -1/0\nbdry C.0 T2 slope 1/0\n\
             glue A.0 B.0 isotopic=true\nglue B.1 C.0 isotopic=true",
        );
        let r = check(&g);
        assert_eq!(r.strong.pieces.len(), 1);
        assert!(r.strong.gluings.is_empty());
        assert_eq!(r.strong.pieces[0].base.cones, vec![2, 3]);
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn step1_on_twice_punctured_torus() {
        let g = parse(
            "piece U base F1-2\npiece S base D2 fibers 3\npiece H base D2 fibers 2 3\n\
             bdry U.0 T2 slope 1/0\nbdry U.1 T2 slope 1/1\nbdry S.0 T2 slope 0/1\nbdry H.0 T2 slope 0/1\n\
             glue U.0 S.0 isotopic=false meridian_fiber=true\nglue U.1 H.0 isotopic=false",
        );
        let r = check(&g);
        assert_eq!(r.trace[0].op, Operation::Step1);
        assert_eq!(r.trace[0].gluings, (2, 3));
        assert_eq!(r.surgeries[0].gamma, "S2(3,3)".parse().unwrap());
    }

    #[test]
    fn step2_handle_cut() {
        let g = parse(
            "piece U base F1-1\npiece S base D2 fibers 2\nbdry U.0 T2 slope 1/0\nbdry S.0 T2 slope 0/1\n\
             glue U.0 S.0 isotopic=false meridian_fiber=true",
        );
        let r = check(&g);
        assert_eq!(r.trace[0].op, Operation::Step2);
        assert_eq!(r.trace[0].gluings, (1, 2));
        assert_eq!(r.surgeries.len(), 1);
    }

    #[test]
    fn step3_reflector_split() {
        let g = parse(
            "piece U base S2+[I,c2,c3]\npiece S base D2//Z2\nbdry U.0 S2222 slope 1/0\n\
             bdry S.0 S2222 slope 0/1\nglue U.0 S.0 isotopic=false meridian_fiber=true",
        );
        let r = check(&g);
        assert_eq!(r.trace[0].op, Operation::Step3);
        assert_eq!(r.surgeries[0].gamma, "S2(2,2)".parse().unwrap());
        let mut t = tokens(&r);
        t.sort();
        assert_eq!(t, vec!["(S3//Z2)//Z2", "(S3//Z3)//Z2"]);
    }

    #[test]
    fn step4_and_case6() {
        let g = parse(
            "piece U base D2+[c2]\npiece S base D2 fibers 2\nbdry U.0 T2 slope 1/0\nbdry S.0 T2 slope 0/1\n\
             glue U.0 S.0 isotopic=false meridian_fiber=true",
        );
        let r = check(&g);
        assert_eq!(r.trace[0].op, Operation::Step4);
        assert_eq!(r.trace[0].gluings, (1, 1));
        let c6 = parse(
            "piece U base D2+[I]\npiece S base D2//D3\npiece V base D2 fibers 2 3\n\
             bdry U.0 T2 slope 1/0\nbdry U.1 S2222 slope 1/0\nbdry S.0 S2222 slope 0/1\nbdry V.0 T2 slope 2/1\n\
             glue U.1 S.0 isotopic=false meridian_fiber=true\nglue U.0 V.0 isotopic=false",
        );
        let r = check(&c6);
        assert_eq!(r.trace[0].op, Operation::Terminal(6));
        assert_eq!(r.recognized[0].to_string(), "S3//D3");
        assert_eq!(r.surgeries[0].gamma, "S2(3,3)".parse().unwrap());
    }

    #[test]
    fn normalization_is_idempotent() {
        let g = parse(
            "piece U base F1-2\npiece S base D2 fibers 3\npiece H base D2 fibers 2 3\n\
             bdry U.0 T2 slope 1/0\nbdry U.1 T2 slope 1/1\nbdry S.0 T2 slope 0/1\nbdry H.0 T2 slope 0/1\n\
             glue U.0 S.0 isotopic=false meridian_fiber=true\nglue U.1 H.0 isotopic=false",
        );
        let r = check(&g);
        let again = normalize(&r.strong).unwrap();
        assert!(again.trace.is_empty());
        assert_eq!(again.strong, r.strong);
    }

    #[test]
    fn compressible_split_examples() {
        let g = parse("piece S base D2 fibers 4\nbdry S.0 T2 slope 1/0");
        let s = compressible_boundary_split(&g, "S", 0).unwrap();
        assert_eq!(s.token, SolidToricToken::SolidTorusCore(4));
        let h = parse("piece H base D2 fibers 2 3\nbdry H.0 T2 slope 1/0");
        assert!(matches!(compressible_boundary_split(&h, "H", 0), Err(GraphError::NoCertificate(_))));
        let two = parse(
            "piece S base D2 fibers 4\nbdry S.0 T2 slope 1/0\npiece A base D2 fibers 2 3\npiece B base D2 fibers 2 5\n\
             bdry A.0 T2 slope 1/0\nbdry B.0 T2 slope 0/1\nglue A.0 B.0 isotopic=false",
        );
        let s = compressible_boundary_split(&two, "S", 0).unwrap();
        assert!(s.rest.strong.pieces.is_empty());
    }

    #[test]
    fn text_round_trip() {
        let g = parse(
            "piece U base D2+[I]\npiece S base D2//D3\npiece V base D2 fibers 2 3\n\
             bdry U.0 T2 slope 1/0\nbdry U.1 S2222 slope 1/0\nbdry S.0 S2222 slope 0/1\nbdry V.0 T2 slope 2/1\n\
             glue U.1 S.0 isotopic=false meridian_fiber=true\nglue U.0 V.0 isotopic=false",
        );
        let again = parse(&g.to_string());
        assert_eq!(again.to_string(), g.to_string());
    }

    /// Random well-formed graph orbifold driven by a seed.
    pub(crate) fn random_graph(seed: u64, max_pieces: usize) -> GraphOrb {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = |n: usize| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as usize) % n
        };
        const SHAPES: &[&str] = &[
            "D2", "A2", "F1-1", "F1-2", "D2//Z2", "D2//D3", "S2+[I,I]", "D2+[I]", "S2+[I,c2,c3]", "D2+[c2]",
            "A2+[I]", "F0-3", "S2+[I,c2]",
        ];
        const SLOPES: &[Slope] = &[(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (3, 2)];
        let mut g = GraphOrb::new();
        let n = 1 + next(max_pieces);
        for i in 0..n {
            let shape = SHAPES[next(SHAPES.len())];
            let fibers: Vec<u32> = (0..next(3)).map(|_| [2, 3, 5][next(3)]).collect();
            g.add_piece(&format!("P{i}"), shape, &fibers).unwrap();
            let bs = g.pieces[i].boundaries();
            for (k, (_, tag)) in bs.iter().enumerate() {
                g.set_slope(&format!("P{i}"), k, *tag, SLOPES[next(SLOPES.len())]).unwrap();
            }
        }
        let mut ends: Vec<(String, usize, BoundaryTag)> = g
            .pieces
            .iter()
            .flat_map(|p| p.boundaries().into_iter().enumerate().map(|(k, (_, t))| (p.id.clone(), k, t)).collect::<Vec<_>>())
            .collect();
        while ends.len() >= 2 {
            let a = ends.remove(next(ends.len()));
            let Some(j) = ends.iter().position(|e| e.2 == a.2) else { continue };
            if next(4) == 0 {
                continue;
            }
            let b = ends.remove(j);
            let ua = g.resolve(&a.0, a.1).unwrap();
            let ub = g.resolve(&b.0, b.1).unwrap();
            let iso = same_slope(g.slope_of(ua), g.slope_of(ub));
            let solid = g.pieces[g.owner(ua).unwrap()].is_solid_toric() || g.pieces[g.owner(ub).unwrap()].is_solid_toric();
            let (u, mf) = match (solid, iso) {
                (false, _) => (None, None),
                (true, true) => (None, Some(false)),
                (true, false) => {
                    if next(2) == 0 {
                        (None, Some(true))
                    } else {
                        (Some(1 + next(4) as u32), Some(false))
                    }
                }
            };
            g.glue((&a.0, a.1), (&b.0, b.1), iso, u, mf).unwrap();
        }
        g.prepare().unwrap();
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]
        #[test]
        fn normalization_properties(seed in any::<u64>()) {
            let g = random_graph(seed, 8);
            let r = normalize(&g).unwrap();
            prop_assert!(verify_strong(&r.strong).unwrap().strong);
            prop_assert_eq!(r.reconcile(g.gluings.len()), Ok(()));
            let again = normalize(&r.strong).unwrap();
            prop_assert!(again.trace.is_empty());
            prop_assert_eq!(&again.strong, &r.strong);
            for t in &r.trace {
                if matches!(t.op, Operation::Merge | Operation::DehnMerge) {
                    prop_assert_eq!(t.gluings.1 + 1, t.gluings.0);
                }
            }
        }

        #[test]
        fn text_format_round_trips(seed in any::<u64>()) {
            let g = random_graph(seed, 6);
            let text = g.to_string();
            let back: GraphOrb = text.parse().unwrap();
            prop_assert_eq!(back.to_string(), text);
        }

        #[test]
        fn euler_characteristic_is_additive_under_merge(seed in any::<u64>()) {
            let g = random_graph(seed, 6);
            if let Some(gl) = g.gluings.iter().find(|gl| gl.fibrations_isotopic) {
                let total = |h: &GraphOrb| h.pieces.iter().map(|p| p.base.euler_char()).sum::<Rational64>();
                let m = op1_merge(&g, gl.id).unwrap();
                prop_assert_eq!(total(&m), total(&g));
            }
        }
    }

    #[test]
    fn random_graphs_reach_every_operation() {
        let mut seen = BTreeSet::new();
        for seed in 0..3000u64 {
            let g = random_graph(seed, 8);
            for t in normalize(&g).unwrap().trace {
                seen.insert(t.op.to_string());
            }
        }
        let all = [
            "merge", "dehn-merge", "step1", "step2", "step3", "step4", "step5-case1", "step5-case2", "step5-case3",
            "step5-case4", "step5-case5", "step5-case6",
        ];
        for op in all {
            assert!(seen.contains(op), "{op} never fired: {seen:?}");
        }
    }
}
