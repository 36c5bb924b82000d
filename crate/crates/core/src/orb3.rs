//! Orientable 3-orbifolds described combinatorially: an underlying-space
//! token per connected component plus a labelled trivalent singular graph.
//!
//! Descriptions are compared as descriptions. Edges, vertices and disc sites
//! live in ordered maps keyed by id, so two descriptions built in different
//! orders compare equal. Diffeomorphism testing is not attempted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orb2::{GeometryClass, TwoOrbSig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Orb3Error {
    #[error("edge label {0} is below 2")]
    LabelTooSmall(u32),
    #[error("vertex labels ({0},{1},{2}) violate 1/p + 1/q + 1/r > 1 (vertex link must be spherical)")]
    VertexCondition(u32, u32, u32),
    #[error("vertex `{0}` must have exactly three incident edge ends, found {1}")]
    VertexDegree(String, usize),
    #[error("vertex `{vertex}` lists edge `{edge}` which does not end there")]
    VertexEdgeMismatch { vertex: String, edge: String },
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown disc site `{0}`")]
    UnknownSite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("component index {0} out of range")]
    BadComponent(usize),
    #[error("boundary signature {0} is not closed and orientable")]
    BadBoundary(TwoOrbSig),
    #[error("{0} is not an orientable spherical 2-orbifold")]
    NotSpherical(TwoOrbSig),
    #[error("disc site `{site}` has signature {sig} but its locus requires {expected}")]
    SiteSignature {
        site: String,
        sig: TwoOrbSig,
        expected: TwoOrbSig,
    },
    #[error("surgery sites have different boundary signatures: {0} vs {1}")]
    MismatchedSites(TwoOrbSig, TwoOrbSig),
    #[error("surgery sites `{0}` and `{1}` overlap")]
    OverlappingSites(String, String),
    #[error("unknown underlying-space token `{0}`")]
    UnknownToken(String),
    #[error("surgery record does not carry the data needed to invert it")]
    NotInvertible,
    #[error("description does not match the surgery record: {0}")]
    RecordMismatch(String),
}

/// Checks the vertex condition `1/p + 1/q + 1/r > 1` exactly.
pub fn validate_vertex(p: u32, q: u32, r: u32) -> Result<bool, Orb3Error> {
    for k in [p, q, r] {
        if k < 2 {
            return Err(Orb3Error::LabelTooSmall(k));
        }
    }
    let sum = Rational64::new(1, p as i64) + Rational64::new(1, q as i64) + Rational64::new(1, r as i64);
    Ok(sum > Rational64::from_integer(1))
}

/// The spherical link `S2(p,q,r)` of a vertex.
pub fn vertex_link(p: u32, q: u32, r: u32) -> Result<TwoOrbSig, Orb3Error> {
    if !validate_vertex(p, q, r)? {
        return Err(Orb3Error::VertexCondition(p, q, r));
    }
    Ok(TwoOrbSig::sphere(&[p, q, r]).expect("labels checked"))
}

/// `D3//Gamma`, the discal 3-orbifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiscalToken {
    D3,
    D3kk(u32),
    D3_22k(u32),
    D3_233,
    D3_234,
    D3_235,
}

impl DiscalToken {
    pub fn boundary(&self) -> TwoOrbSig {
        let cones: Vec<u32> = match *self {
            DiscalToken::D3 => vec![],
            DiscalToken::D3kk(k) => vec![k, k],
            DiscalToken::D3_22k(k) => vec![2, 2, k],
            DiscalToken::D3_233 => vec![2, 3, 3],
            DiscalToken::D3_234 => vec![2, 3, 4],
            DiscalToken::D3_235 => vec![2, 3, 5],
        };
        TwoOrbSig::sphere(&cones).expect("discal boundaries are valid signatures")
    }

    /// Labels on the singular locus (a segment for `D3(k,k)`, a tripod for
    /// the turnover cases).
    pub fn singular_labels(&self) -> Vec<u32> {
        match *self {
            DiscalToken::D3 => vec![],
            DiscalToken::D3kk(k) => vec![k],
            _ => self.boundary().cone_orders().to_vec(),
        }
    }
}

impl fmt::Display for DiscalToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DiscalToken::D3 => f.write_str("D3"),
            DiscalToken::D3kk(k) => write!(f, "D3({k},{k})"),
            DiscalToken::D3_22k(k) => write!(f, "D3(2,2,{k})"),
            DiscalToken::D3_233 => f.write_str("D3(2,3,3)"),
            DiscalToken::D3_234 => f.write_str("D3(2,3,4)"),
            DiscalToken::D3_235 => f.write_str("D3(2,3,5)"),
        }
    }
}

/// The unique discal 3-orbifold bounded by a spherical signature.
pub fn discal_fill(sig: &TwoOrbSig) -> Result<DiscalToken, Orb3Error> {
    if !sig.is_spherical() {
        return Err(Orb3Error::NotSpherical(sig.clone()));
    }
    Ok(match sig.cone_orders() {
        [] => DiscalToken::D3,
        [a, _] => DiscalToken::D3kk(*a),
        [2, 3, 3] => DiscalToken::D3_233,
        [2, 3, 4] => DiscalToken::D3_234,
        [2, 3, 5] => DiscalToken::D3_235,
        [2, 2, k] => DiscalToken::D3_22k(*k),
        _ => unreachable!("is_spherical covers the list"),
    })
}

/// Solid-toric 3-orbifolds `S1xD2`, `S1xD2(k)`, `S1xZ2D2`, `S1xZ2D2(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolidToricToken {
    SolidTorus,
    SolidTorusCore(u32),
    TwistedSolidTorus,
    TwistedSolidTorusCore(u32),
}

impl SolidToricToken {
    /// Boundary is `T2` for the untwisted kinds, the pillowcase otherwise.
    pub fn boundary(&self) -> TwoOrbSig {
        match self {
            SolidToricToken::SolidTorus | SolidToricToken::SolidTorusCore(_) => TwoOrbSig::torus(),
            _ => TwoOrbSig::sphere(&[2, 2, 2, 2]).expect("pillowcase"),
        }
    }
}

impl fmt::Display for SolidToricToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolidToricToken::SolidTorus => f.write_str("S1xD2"),
            SolidToricToken::SolidTorusCore(k) => write!(f, "S1xD2({k})"),
            SolidToricToken::TwistedSolidTorus => f.write_str("S1xZ2D2"),
            SolidToricToken::TwistedSolidTorusCore(k) => write!(f, "S1xZ2D2({k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeEnd {
    Vertex(String),
    /// The edge meets the boundary of the orbifold.
    Boundary,
}

impl fmt::Display for EdgeEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeEnd::Vertex(v) => f.write_str(v),
            EdgeEnd::Boundary => f.write_str("bdry"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub label: u32,
    /// `None` for a closed singular circle.
    pub ends: Option<(EdgeEnd, EdgeEnd)>,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    /// Incident edge ids; a loop based at this vertex appears twice.
    pub edges: [String; 3],
    pub component: usize,
}

/// Labelled trivalent singular graph. Loops and multi-edges are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SingularGraph {
    pub edges: BTreeMap<String, Edge>,
    pub vertices: BTreeMap<String, Vertex>,
    /// Free text, never interpreted.
    pub embedding_note: String,
}

impl SingularGraph {
    pub fn label_of(&self, edge: &str) -> Result<u32, Orb3Error> {
        self.edges
            .get(edge)
            .map(|e| e.label)
            .ok_or_else(|| Orb3Error::UnknownEdge(edge.to_string()))
    }

    pub fn vertex_labels(&self, vertex: &str) -> Result<[u32; 3], Orb3Error> {
        let v = self
            .vertices
            .get(vertex)
            .ok_or_else(|| Orb3Error::UnknownVertex(vertex.to_string()))?;
        Ok([
            self.label_of(&v.edges[0])?,
            self.label_of(&v.edges[1])?,
            self.label_of(&v.edges[2])?,
        ])
    }

    /// Labels, degrees, vertex incidence and the vertex condition.
    pub fn validate(&self) -> Result<(), Orb3Error> {
        let mut incidence: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, e) in &self.edges {
            if e.label < 2 {
                return Err(Orb3Error::LabelTooSmall(e.label));
            }
            if let Some((a, b)) = &e.ends {
                for end in [a, b] {
                    if let EdgeEnd::Vertex(v) = end {
                        if !self.vertices.contains_key(v) {
                            return Err(Orb3Error::UnknownVertex(v.clone()));
                        }
                        incidence.entry(v.as_str()).or_default().push(id.as_str());
                    }
                }
            }
        }
        for (vid, v) in &self.vertices {
            let mut listed: Vec<&str> = v.edges.iter().map(String::as_str).collect();
            for e in &listed {
                if !self.edges.contains_key(*e) {
                    return Err(Orb3Error::UnknownEdge(e.to_string()));
                }
            }
            let mut actual = incidence.remove(vid.as_str()).unwrap_or_default();
            if actual.len() != 3 {
                return Err(Orb3Error::VertexDegree(vid.clone(), actual.len()));
            }
            listed.sort_unstable();
            actual.sort_unstable();
            if listed != actual {
                let edge = listed
                    .iter()
                    .find(|e| !actual.contains(e))
                    .unwrap_or(&listed[0])
                    .to_string();
                return Err(Orb3Error::VertexEdgeMismatch {
                    vertex: vid.clone(),
                    edge,
                });
            }
            let [p, q, r] = self.vertex_labels(vid)?;
            if !validate_vertex(p, q, r)? {
                return Err(Orb3Error::VertexCondition(p, q, r));
            }
        }
        Ok(())
    }
}

/// Underlying-space token of one connected component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Underlying {
    Named(String),
    /// 0-surgery joining two components along `along`.
    Sum {
        left: Box<Underlying>,
        right: Box<Underlying>,
        along: TwoOrbSig,
    },
    /// 0-surgery with both sites in one component.
    SelfSum {
        base: Box<Underlying>,
        along: TwoOrbSig,
    },
}

const NAMED_TOKENS: &[&str] = &[
    "S3", "S1xS2", "T3", "RP3", "D3", "S1xD2", "S1xZ2D2", "S1xI", "T2xI", "S2xI", "P2xS1",
];

impl Underlying {
    /// Named token from the closed vocabulary: the manifolds above, lens
    /// spaces `L(p,q)`, discal/solid-toric tokens and `S3//...` quotients.
    pub fn named(token: &str) -> Result<Self, Orb3Error> {
        let ok = NAMED_TOKENS.contains(&token)
            || token.starts_with("L(")
            || token.starts_with("S3//")
            || token.starts_with("(S3//")
            || token.starts_with("D3(")
            || token.starts_with("S1xD2(")
            || token.starts_with("S1xZ2D2(");
        if ok && !token.is_empty() {
            Ok(Underlying::Named(token.to_string()))
        } else {
            Err(Orb3Error::UnknownToken(token.to_string()))
        }
    }

    /// Applies `X # S3 = X` until nothing changes. Used by
    /// [`ThreeOrbDesc::equivalent`].
    pub fn simplified(&self) -> Underlying {
        match self {
            Underlying::Named(_) => self.clone(),
            Underlying::Sum { left, right, along } => {
                let l = left.simplified();
                let r = right.simplified();
                let is_s3 = |u: &Underlying| matches!(u, Underlying::Named(n) if n == "S3");
                if is_s3(&l) {
                    r
                } else if is_s3(&r) {
                    l
                } else {
                    Underlying::Sum {
                        left: Box::new(l),
                        right: Box::new(r),
                        along: along.clone(),
                    }
                }
            }
            Underlying::SelfSum { base, along } => Underlying::SelfSum {
                base: Box::new(base.simplified()),
                along: along.clone(),
            },
        }
    }
}

impl fmt::Display for Underlying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Underlying::Named(n) => f.write_str(n),
            Underlying::Sum { left, right, along } => write!(f, "[{left}]#{{{along}}}[{right}]"),
            Underlying::SelfSum { base, along } => write!(f, "[{base}]#{{{along}}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteLocus {
    Smooth,
    Edge(String),
    Vertex(String),
}

/// An embedded discal suborbifold, identified by id rather than position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscSite {
    pub sig: TwoOrbSig,
    pub locus: SiteLocus,
    pub component: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurgeryDirection {
    /// Cut along `I x S2//Gamma` and cap with two discal pieces.
    Split,
    /// Remove two discal pieces and glue in the tube.
    Join,
}

/// Everything needed to undo a [`zero_surgery`] exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryUndo {
    pub sites: [(String, DiscSite); 2],
    pub removed_edges: Vec<(String, Edge)>,
    pub removed_vertices: Vec<(String, Vertex)>,
    pub added_edges: Vec<String>,
    /// Component indices of the two sites before the surgery.
    pub components: (usize, usize),
    /// Tokens of the affected components before the surgery.
    pub tokens: (Underlying, Option<Underlying>),
    /// Ids of edges/vertices/sites that lived in the second component.
    pub moved: Vec<String>,
    /// Original incidence lists of surviving vertices that were rewritten.
    pub vertex_slots: Vec<(String, [String; 3])>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryRecord {
    /// The spherical cross-section `S2//Gamma`.
    pub gamma: TwoOrbSig,
    pub site_ids: (String, String),
    pub direction: SurgeryDirection,
    pub undo: Option<Box<SurgeryUndo>>,
}

impl SurgeryRecord {
    pub fn new(gamma: TwoOrbSig, site_ids: (String, String), direction: SurgeryDirection) -> Self {
        SurgeryRecord {
            gamma,
            site_ids,
            direction,
            undo: None,
        }
    }
}

impl fmt::Display for SurgeryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            SurgeryDirection::Split => "split",
            SurgeryDirection::Join => "join",
        };
        write!(f, "0-surgery {dir} along {} at {} {}", self.gamma, self.site_ids.0, self.site_ids.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreeOrbDesc {
    /// One token per connected component.
    pub components: Vec<Underlying>,
    pub graph: SingularGraph,
    pub boundary: Vec<TwoOrbSig>,
    pub sites: BTreeMap<String, DiscSite>,
}

impl ThreeOrbDesc {
    /// Empty graph on a single component.
    pub fn new(token: Underlying) -> Self {
        ThreeOrbDesc {
            components: vec![token],
            graph: SingularGraph::default(),
            boundary: Vec::new(),
            sites: BTreeMap::new(),
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn add_edge(&mut self, id: &str, edge: Edge) -> Result<(), Orb3Error> {
        if self.graph.edges.contains_key(id) || self.graph.vertices.contains_key(id) {
            return Err(Orb3Error::DuplicateId(id.to_string()));
        }
        self.graph.edges.insert(id.to_string(), edge);
        Ok(())
    }

    pub fn add_vertex(&mut self, id: &str, vertex: Vertex) -> Result<(), Orb3Error> {
        if self.graph.edges.contains_key(id) || self.graph.vertices.contains_key(id) {
            return Err(Orb3Error::DuplicateId(id.to_string()));
        }
        self.graph.vertices.insert(id.to_string(), vertex);
        Ok(())
    }

    pub fn add_site(&mut self, id: &str, site: DiscSite) -> Result<(), Orb3Error> {
        if self.sites.contains_key(id) {
            return Err(Orb3Error::DuplicateId(id.to_string()));
        }
        self.sites.insert(id.to_string(), site);
        Ok(())
    }

    /// Checked constructor entry point: every invariant of the description.
    pub fn validate(&self) -> Result<(), Orb3Error> {
        self.graph.validate()?;
        let n = self.components.len();
        for e in self.graph.edges.values() {
            if e.component >= n {
                return Err(Orb3Error::BadComponent(e.component));
            }
        }
        for v in self.graph.vertices.values() {
            if v.component >= n {
                return Err(Orb3Error::BadComponent(v.component));
            }
        }
        for b in &self.boundary {
            if !b.is_closed() || b.reflector().is_some() {
                return Err(Orb3Error::BadBoundary(b.clone()));
            }
        }
        for (id, s) in &self.sites {
            if s.component >= n {
                return Err(Orb3Error::BadComponent(s.component));
            }
            let expected = self.locus_signature(&s.locus)?;
            if expected != s.sig {
                return Err(Orb3Error::SiteSignature {
                    site: id.clone(),
                    sig: s.sig.clone(),
                    expected,
                });
            }
        }
        Ok(())
    }

    fn locus_signature(&self, locus: &SiteLocus) -> Result<TwoOrbSig, Orb3Error> {
        Ok(match locus {
            SiteLocus::Smooth => TwoOrbSig::sphere(&[]).expect("S2"),
            SiteLocus::Edge(e) => {
                let k = self.graph.label_of(e)?;
                TwoOrbSig::sphere(&[k, k]).expect("label >= 2")
            }
            SiteLocus::Vertex(v) => {
                let [p, q, r] = self.graph.vertex_labels(v)?;
                vertex_link(p, q, r)?
            }
        })
    }

    /// Multiset of all edge labels, sorted.
    pub fn edge_label_multiset(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.graph.edges.values().map(|e| e.label).collect();
        v.sort_unstable();
        v
    }

    /// Distinct edge labels.
    pub fn edge_label_set(&self) -> BTreeSet<u32> {
        self.graph.edges.values().map(|e| e.label).collect()
    }

    /// Coarse invariant used to compare descriptions up to renaming of
    /// edges and `S3` summands: per component the simplified token, the
    /// sorted labels of closed circles, and the sorted labels of arcs with
    /// their end kinds.
    pub fn equivalence_key(&self) -> Vec<(String, Vec<u32>, Vec<(u32, usize, usize)>, usize)> {
        let mut out: Vec<_> = self
            .components
            .iter()
            .enumerate()
            .map(|(c, tok)| {
                let mut loops = Vec::new();
                let mut arcs = Vec::new();
                for e in self.graph.edges.values().filter(|e| e.component == c) {
                    match &e.ends {
                        None => loops.push(e.label),
                        Some((a, b)) => {
                            let kind = |x: &EdgeEnd| usize::from(matches!(x, EdgeEnd::Boundary));
                            let (ka, kb) = (kind(a), kind(b));
                            arcs.push((e.label, ka.min(kb), ka.max(kb)));
                        }
                    }
                }
                loops.sort_unstable();
                arcs.sort_unstable();
                let nv = self.graph.vertices.values().filter(|v| v.component == c).count();
                (tok.simplified().to_string(), loops, arcs, nv)
            })
            .collect();
        out.sort();
        out
    }

    /// Equality up to edge renaming and trivial `S3` summands.
    pub fn equivalent(&self, other: &ThreeOrbDesc) -> bool {
        self.equivalence_key() == other.equivalence_key()
    }
}

/// Free-function form of [`ThreeOrbDesc::edge_label_multiset`].
pub fn edge_label_multiset(orb: &ThreeOrbDesc) -> Vec<u32> {
    orb.edge_label_multiset()
}

/// Segment end while stitching edges through a surgery tube.
#[derive(Debug, Clone, PartialEq)]
enum StitchEnd {
    Fixed(EdgeEnd),
    Port(usize),
}

#[derive(Debug, Clone)]
struct Segment {
    source: String,
    label: u32,
    ends: [StitchEnd; 2],
}

/// Performs 0-surgery along the disc sites `d1`, `d2`: both discal pieces
/// are removed and `I x (S2//Gamma)` is glued in, joining the singular
/// strands through the tube.
pub fn zero_surgery(
    orb: &ThreeOrbDesc,
    d1: &str,
    d2: &str,
) -> Result<(ThreeOrbDesc, SurgeryRecord), Orb3Error> {
    orb.validate()?;
    if d1 == d2 {
        return Err(Orb3Error::OverlappingSites(d1.to_string(), d2.to_string()));
    }
    let s1 = orb
        .sites
        .get(d1)
        .ok_or_else(|| Orb3Error::UnknownSite(d1.to_string()))?
        .clone();
    let s2 = orb
        .sites
        .get(d2)
        .ok_or_else(|| Orb3Error::UnknownSite(d2.to_string()))?
        .clone();
    if s1.sig != s2.sig {
        return Err(Orb3Error::MismatchedSites(s1.sig, s2.sig));
    }
    if s1.locus != SiteLocus::Smooth && s1.locus == s2.locus {
        return Err(Orb3Error::OverlappingSites(d1.to_string(), d2.to_string()));
    }

    let mut out = orb.clone();
    out.sites.remove(d1);
    out.sites.remove(d2);

    // Cut the singular strands at the two sites into segments whose cut
    // ends are numbered ports; ports of site 1 pair with ports of site 2.
    let mut segments: Vec<Segment> = Vec::new();
    let mut removed_edges: Vec<(String, Edge)> = Vec::new();
    let mut removed_vertices: Vec<(String, Vertex)> = Vec::new();
    let mut ports: [Vec<(u32, usize)>; 2] = [Vec::new(), Vec::new()];
    let mut next_port = 0usize;
    let mut new_port = |side: usize, label: u32, ports: &mut [Vec<(u32, usize)>; 2]| {
        let p = next_port;
        next_port += 1;
        ports[side].push((label, p));
        p
    };

    match (&s1.locus, &s2.locus) {
        (SiteLocus::Smooth, SiteLocus::Smooth) => {}
        (SiteLocus::Edge(e1), SiteLocus::Edge(e2)) => {
            for (side, eid) in [(0usize, e1), (1usize, e2)] {
                let e = out.graph.edges.remove(eid).expect("validated");
                removed_edges.push((eid.clone(), e.clone()));
                match &e.ends {
                    Some((a, b)) => {
                        let pin = new_port(side, e.label, &mut ports);
                        let pout = new_port(side, e.label, &mut ports);
                        segments.push(Segment {
                            source: eid.clone(),
                            label: e.label,
                            ends: [StitchEnd::Fixed(a.clone()), StitchEnd::Port(pin)],
                        });
                        segments.push(Segment {
                            source: eid.clone(),
                            label: e.label,
                            ends: [StitchEnd::Port(pout), StitchEnd::Fixed(b.clone())],
                        });
                    }
                    None => {
                        let pin = new_port(side, e.label, &mut ports);
                        let pout = new_port(side, e.label, &mut ports);
                        segments.push(Segment {
                            source: eid.clone(),
                            label: e.label,
                            ends: [StitchEnd::Port(pout), StitchEnd::Port(pin)],
                        });
                    }
                }
            }
        }
        (SiteLocus::Vertex(v1), SiteLocus::Vertex(v2)) => {
            let cut: BTreeSet<&String> = [v1, v2].into_iter().collect();
            let side_of = |v: &String| usize::from(v == v2);
            let mut touched: BTreeSet<String> = BTreeSet::new();
            for v in [v1, v2] {
                let vert = out.graph.vertices.get(v).expect("validated");
                for e in &vert.edges {
                    touched.insert(e.clone());
                }
            }
            // Ports are created in the order the vertex lists its edges so
            // that equal labels pair deterministically.
            let mut port_for: BTreeMap<(String, String, usize), usize> = BTreeMap::new();
            for v in [v1, v2] {
                let vert = out.graph.vertices.get(v).expect("validated").clone();
                let mut seen: BTreeMap<&String, usize> = BTreeMap::new();
                for e in &vert.edges {
                    let occ = seen.entry(e).or_insert(0);
                    let label = out.graph.edges[e].label;
                    let p = new_port(side_of(v), label, &mut ports);
                    port_for.insert((v.clone(), e.clone(), *occ), p);
                    *occ += 1;
                }
            }
            for eid in &touched {
                let e = out.graph.edges.remove(eid).expect("validated");
                removed_edges.push((eid.clone(), e.clone()));
                let (a, b) = e.ends.clone().expect("edges at a vertex have ends");
                let mut occ: BTreeMap<String, usize> = BTreeMap::new();
                let mut convert = |end: &EdgeEnd| match end {
                    EdgeEnd::Vertex(v) if cut.contains(v) => {
                        let o = occ.entry(v.clone()).or_insert(0);
                        let p = port_for[&(v.clone(), eid.clone(), *o)];
                        *o += 1;
                        StitchEnd::Port(p)
                    }
                    other => StitchEnd::Fixed(other.clone()),
                };
                let ea = convert(&a);
                let eb = convert(&b);
                segments.push(Segment {
                    source: eid.clone(),
                    label: e.label,
                    ends: [ea, eb],
                });
            }
            for v in [v1, v2] {
                let vert = out.graph.vertices.remove(v).expect("validated");
                removed_vertices.push((v.clone(), vert));
            }
        }
        _ => unreachable!("equal signatures imply equal locus kinds"),
    }

    // Pair ports across the tube by label, in creation order.
    let mut pair: BTreeMap<usize, usize> = BTreeMap::new();
    {
        let mut rest: Vec<(u32, usize)> = ports[1].clone();
        for (label, p) in &ports[0] {
            let idx = rest
                .iter()
                .position(|(l, _)| l == label)
                .expect("equal signatures give equal label multisets");
            let (_, q) = rest.remove(idx);
            pair.insert(*p, q);
            pair.insert(q, *p);
        }
    }

    // Trace chains of segments through paired ports.
    let port_owner: BTreeMap<usize, (usize, usize)> = segments
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.ends.iter().enumerate().filter_map(move |(j, e)| match e {
                StitchEnd::Port(p) => Some((*p, (i, j))),
                StitchEnd::Fixed(_) => None,
            })
        })
        .collect();
    let mut used = vec![false; segments.len()];
    let mut chains: Vec<(Vec<String>, u32, Option<(EdgeEnd, EdgeEnd)>)> = Vec::new();
    let walk = |start: usize, entry: usize, used: &mut Vec<bool>| {
        let mut names = Vec::new();
        let (mut seg, mut at) = (start, entry);
        loop {
            used[seg] = true;
            names.push(segments[seg].source.clone());
            let exit = 1 - at;
            match &segments[seg].ends[exit] {
                StitchEnd::Fixed(end) => return (names, Some(end.clone())),
                StitchEnd::Port(p) => {
                    let q = pair[p];
                    let (ns, ne) = port_owner[&q];
                    if used[ns] {
                        return (names, None);
                    }
                    seg = ns;
                    at = ne;
                }
            }
        }
    };
    for i in 0..segments.len() {
        if used[i] {
            continue;
        }
        for j in 0..2 {
            if let StitchEnd::Fixed(start) = &segments[i].ends[j] {
                let start = start.clone();
                let (names, end) = walk(i, j, &mut used);
                let end = end.expect("open chains end on a fixed end");
                chains.push((names, segments[i].label, Some((start, end))));
                break;
            }
        }
    }
    for i in 0..segments.len() {
        if !used[i] {
            let (names, _) = walk(i, 0, &mut used);
            chains.push((names, segments[i].label, None));
        }
    }

    // Component bookkeeping.
    let (c1, c2) = (s1.component, s2.component);
    let (lo, hi) = (c1.min(c2), c1.max(c2));
    let mut moved = Vec::new();
    let tokens;
    if c1 != c2 {
        let left = out.components[c1].clone();
        let right = out.components[c2].clone();
        tokens = (left.clone(), Some(right.clone()));
        out.components[lo] = Underlying::Sum {
            left: Box::new(left),
            right: Box::new(right),
            along: s1.sig.clone(),
        };
        out.components.remove(hi);
        let remap = |c: usize| {
            if c == hi {
                lo
            } else if c > hi {
                c - 1
            } else {
                c
            }
        };
        for (id, e) in out.graph.edges.iter_mut() {
            if e.component == hi {
                moved.push(id.clone());
            }
            e.component = remap(e.component);
        }
        for (id, v) in out.graph.vertices.iter_mut() {
            if v.component == hi {
                moved.push(id.clone());
            }
            v.component = remap(v.component);
        }
        for (id, s) in out.sites.iter_mut() {
            if s.component == hi {
                moved.push(id.clone());
            }
            s.component = remap(s.component);
        }
    } else {
        let base = out.components[c1].clone();
        tokens = (base.clone(), None);
        out.components[c1] = Underlying::SelfSum {
            base: Box::new(base),
            along: s1.sig.clone(),
        };
    }
    let new_component = lo;

    let removed_ids: BTreeSet<String> = removed_edges.iter().map(|(id, _)| id.clone()).collect();
    let mut added_edges = Vec::new();
    // (vertex, original edge, replacement edge) for each surviving end.
    let mut end_map: Vec<(String, String, String)> = Vec::new();
    for (names, label, ends) in chains {
        let base = names.join("+");
        let mut id = base.clone();
        let mut n = 1;
        while out.graph.edges.contains_key(&id) || out.graph.vertices.contains_key(&id) {
            n += 1;
            id = format!("{base}#{n}");
        }
        if let Some((a, b)) = &ends {
            if let EdgeEnd::Vertex(v) = a {
                end_map.push((v.clone(), names[0].clone(), id.clone()));
            }
            if let EdgeEnd::Vertex(v) = b {
                end_map.push((v.clone(), names[names.len() - 1].clone(), id.clone()));
            }
        }
        out.graph.edges.insert(
            id.clone(),
            Edge {
                label,
                ends,
                component: new_component,
            },
        );
        added_edges.push(id);
    }
    let mut vertex_slots = Vec::new();
    for (vid, v) in out.graph.vertices.iter_mut() {
        if !v.edges.iter().any(|e| removed_ids.contains(e)) {
            continue;
        }
        vertex_slots.push((vid.clone(), v.edges.clone()));
        for slot in v.edges.iter_mut() {
            if let Some(pos) = end_map.iter().position(|(w, old, _)| w == vid && old == slot) {
                *slot = end_map.remove(pos).2;
            }
        }
    }

    out.validate()?;
    let record = SurgeryRecord {
        gamma: s1.sig.clone(),
        site_ids: (d1.to_string(), d2.to_string()),
        direction: SurgeryDirection::Join,
        undo: Some(Box::new(SurgeryUndo {
            sites: [(d1.to_string(), s1), (d2.to_string(), s2)],
            removed_edges,
            removed_vertices,
            added_edges,
            components: (c1, c2),
            tokens,
            moved,
            vertex_slots,
        })),
    };
    Ok((out, record))
}

/// Undoes a [`zero_surgery`]: cuts along the tube `I x S2//Gamma` and caps
/// both sides with discal pieces, restoring the original description.
pub fn invert_surgery(orb: &ThreeOrbDesc, record: &SurgeryRecord) -> Result<ThreeOrbDesc, Orb3Error> {
    let undo = record.undo.as_ref().ok_or(Orb3Error::NotInvertible)?;
    let mut out = orb.clone();
    let (c1, c2) = undo.components;
    let (lo, hi) = (c1.min(c2), c1.max(c2));

    for id in &undo.added_edges {
        if out.graph.edges.remove(id).is_none() {
            return Err(Orb3Error::RecordMismatch(format!("edge `{id}` missing")));
        }
    }
    for (vid, slots) in &undo.vertex_slots {
        let v = out
            .graph
            .vertices
            .get_mut(vid)
            .ok_or_else(|| Orb3Error::RecordMismatch(format!("vertex `{vid}` missing")))?;
        v.edges = slots.clone();
    }

    if c1 != c2 {
        let (left, right) = match &undo.tokens {
            (l, Some(r)) => (l.clone(), r.clone()),
            _ => return Err(Orb3Error::RecordMismatch("missing token".into())),
        };
        let remap_back = |c: usize| if c >= hi { c + 1 } else { c };
        for e in out.graph.edges.values_mut() {
            e.component = remap_back(e.component);
        }
        for v in out.graph.vertices.values_mut() {
            v.component = remap_back(v.component);
        }
        for s in out.sites.values_mut() {
            s.component = remap_back(s.component);
        }
        for id in &undo.moved {
            if let Some(e) = out.graph.edges.get_mut(id) {
                e.component = hi;
            } else if let Some(v) = out.graph.vertices.get_mut(id) {
                v.component = hi;
            } else if let Some(s) = out.sites.get_mut(id) {
                s.component = hi;
            }
        }
        let (tok_lo, tok_hi) = if c1 == lo { (left, right) } else { (right, left) };
        out.components[lo] = tok_lo;
        out.components.insert(hi, tok_hi);
    } else {
        out.components[c1] = undo.tokens.0.clone();
    }

    for (id, e) in &undo.removed_edges {
        out.graph.edges.insert(id.clone(), e.clone());
    }
    for (id, v) in &undo.removed_vertices {
        out.graph.vertices.insert(id.clone(), v.clone());
    }
    for (id, s) in &undo.sites {
        out.sites.insert(id.clone(), s.clone());
    }
    out.validate()?;
    Ok(out)
}

/// Whether a spherical signature names a vertex link or a smooth/edge site.
pub fn is_good_spherical(sig: &TwoOrbSig) -> bool {
    sig.is_closed() && sig.geometry() == GeometryClass::Spherical
}
