//! Compact orientable 2-orbifolds: signatures, orbifold Euler characteristic
//! and the spherical / Euclidean / hyperbolic / bad taxonomy.
//!
//! All arithmetic in this module is exact. The Euclidean case is the
//! codimension-one condition `chi_orb == 0`, so no floating point is used.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Orb2Error {
    #[error("cone order {0} is below 2")]
    ConeOrderTooSmall(u32),
    #[error("reflector data requires at least one boundary circle")]
    ReflectorWithoutBoundary,
    #[error("D2//D_k requires k > 1, got {0}")]
    DihedralOrderTooSmall(u32),
    #[error("reflector signatures are quotients of the disc; genus, cones and extra boundary are not allowed")]
    ReflectorShape,
    #[error("classification is only defined for closed signatures, got {0}")]
    NotClosed(TwoOrbSig),
    #[error("{0} is not a closed orientable Euclidean 2-orbifold")]
    NotEuclidean(TwoOrbSig),
    #[error("cannot parse signature `{text}`: {reason}")]
    Parse { text: String, reason: String },
}

/// Reflector data for the two bounded non-orientable-base cases that show up
/// as boundary pieces: `D2//Z2` (one reflector arc) and `D2//D_k` (a corner
/// reflector of order `k` between two reflector arcs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reflector {
    Z2,
    Dihedral(u32),
}

/// Signature `S(k_1, ..., k_r)` of a compact orientable 2-orbifold.
///
/// Cone orders are kept sorted so that structural equality is signature
/// equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TwoOrbSig {
    base_genus: u32,
    cone_orders: Vec<u32>,
    boundary_circles: u32,
    reflector: Option<Reflector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeometryClass {
    Bad,
    Spherical,
    Euclidean,
    Hyperbolic,
    /// Bounded quotient of the disc: `D2(k)`, `D2//Z2`, `D2//D_k`, and the
    /// nonsingular disc itself.
    Discal,
    /// Any other bounded signature.
    Other,
}

impl fmt::Display for GeometryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GeometryClass::Bad => "Bad",
            GeometryClass::Spherical => "Spherical",
            GeometryClass::Euclidean => "Euclidean",
            GeometryClass::Hyperbolic => "Hyperbolic",
            GeometryClass::Discal => "Discal",
            GeometryClass::Other => "Other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupOrder {
    Finite(u64),
    Infinite,
}

impl fmt::Display for GroupOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupOrder::Finite(n) => write!(f, "{n}"),
            GroupOrder::Infinite => f.write_str("infinite"),
        }
    }
}

/// Orientation-preserving mapping class group of a closed Euclidean
/// 2-orbifold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCGDescription {
    pub name: String,
    pub order: GroupOrder,
    pub generators_note: String,
}

impl TwoOrbSig {
    pub fn new(
        base_genus: u32,
        mut cone_orders: Vec<u32>,
        boundary_circles: u32,
        reflector: Option<Reflector>,
    ) -> Result<Self, Orb2Error> {
        if let Some(&k) = cone_orders.iter().find(|&&k| k < 2) {
            return Err(Orb2Error::ConeOrderTooSmall(k));
        }
        if let Some(r) = reflector {
            if boundary_circles == 0 {
                return Err(Orb2Error::ReflectorWithoutBoundary);
            }
            if base_genus != 0 || !cone_orders.is_empty() || boundary_circles != 1 {
                return Err(Orb2Error::ReflectorShape);
            }
            if let Reflector::Dihedral(k) = r {
                if k < 2 {
                    return Err(Orb2Error::DihedralOrderTooSmall(k));
                }
            }
        }
        cone_orders.sort_unstable();
        Ok(TwoOrbSig {
            base_genus,
            cone_orders,
            boundary_circles,
            reflector,
        })
    }

    /// Closed sphere with the given cone points.
    pub fn sphere(cones: &[u32]) -> Result<Self, Orb2Error> {
        Self::new(0, cones.to_vec(), 0, None)
    }

    pub fn torus() -> Self {
        TwoOrbSig {
            base_genus: 1,
            cone_orders: Vec::new(),
            boundary_circles: 0,
            reflector: None,
        }
    }

    /// Disc with cone points, `D2(k_1, ..., k_r)`.
    pub fn disc(cones: &[u32]) -> Result<Self, Orb2Error> {
        Self::new(0, cones.to_vec(), 1, None)
    }

    pub fn base_genus(&self) -> u32 {
        self.base_genus
    }

    pub fn cone_orders(&self) -> &[u32] {
        &self.cone_orders
    }

    pub fn boundary_circles(&self) -> u32 {
        self.boundary_circles
    }

    pub fn reflector(&self) -> Option<Reflector> {
        self.reflector
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_circles == 0
    }

    /// Number of cone points.
    pub fn cone_count(&self) -> usize {
        self.cone_orders.len()
    }

    /// Orbifold Euler characteristic, `chi(|S|) - sum (1 - 1/k_i)`, with the
    /// reflector cases counted as the disc quotient they are.
    pub fn orb_euler_char(&self) -> Rational64 {
        match self.reflector {
            Some(Reflector::Z2) => Rational64::new(1, 2),
            Some(Reflector::Dihedral(k)) => Rational64::new(1, 2 * i64::from(k)),
            None => {
                let top = 2 - 2 * i64::from(self.base_genus) - i64::from(self.boundary_circles);
                self.cone_orders
                    .iter()
                    .fold(Rational64::from_integer(top), |acc, &k| {
                        acc - (Rational64::from_integer(1) - Rational64::new(1, i64::from(k)))
                    })
            }
        }
    }

    fn is_bad_closed(&self) -> bool {
        self.is_closed()
            && self.base_genus == 0
            && match self.cone_orders.as_slice() {
                [_] => true,
                [a, b] => a != b,
                _ => false,
            }
    }

    /// Membership in the finite list of orientable spherical signatures
    /// `S2, S2(k,k), S2(2,2,k), S2(2,3,3), S2(2,3,4), S2(2,3,5)`.
    pub fn is_spherical(&self) -> bool {
        self.is_closed()
            && self.base_genus == 0
            && match self.cone_orders.as_slice() {
                [] => true,
                [a, b] => a == b,
                [2, 2, _] => true,
                [2, 3, 3] | [2, 3, 4] | [2, 3, 5] => true,
                _ => false,
            }
    }

    /// The four-way verdict for closed signatures, `Discal`/`Other` for
    /// bounded ones.
    pub fn classify_geometry(&self) -> Result<GeometryClass, Orb2Error> {
        if !self.is_closed() {
            return Err(Orb2Error::NotClosed(self.clone()));
        }
        if self.is_bad_closed() {
            return Ok(GeometryClass::Bad);
        }
        let chi = self.orb_euler_char();
        let zero = Rational64::from_integer(0);
        Ok(if chi > zero {
            GeometryClass::Spherical
        } else if chi == zero {
            GeometryClass::Euclidean
        } else {
            GeometryClass::Hyperbolic
        })
    }

    /// Like [`classify_geometry`](Self::classify_geometry) but total: bounded
    /// signatures come back as `Discal` or `Other`.
    pub fn geometry(&self) -> GeometryClass {
        if self.is_closed() {
            return self
                .classify_geometry()
                .expect("closed signatures always classify");
        }
        let discal = self.reflector.is_some()
            || (self.base_genus == 0 && self.boundary_circles == 1 && self.cone_orders.len() <= 1);
        if discal {
            GeometryClass::Discal
        } else {
            GeometryClass::Other
        }
    }

    /// Mapping class group of a closed orientable Euclidean signature.
    pub fn mapping_class_group(&self) -> Result<MCGDescription, Orb2Error> {
        if !self.is_closed() || self.classify_geometry()? != GeometryClass::Euclidean {
            return Err(Orb2Error::NotEuclidean(self.clone()));
        }
        let d = |name: &str, order: GroupOrder, note: &str| MCGDescription {
            name: name.to_string(),
            order,
            generators_note: note.to_string(),
        };
        let out = match (self.base_genus, self.cone_orders.as_slice()) {
            (1, []) => d(
                "SL(2,Z)",
                GroupOrder::Infinite,
                "linear actions on T2 = R2/Z2",
            ),
            (0, [2, 3, 6]) => d(
                "trivial",
                GroupOrder::Finite(1),
                "label-preserving permutations of three cone points of distinct orders",
            ),
            (0, [2, 4, 4]) => d(
                "Z2",
                GroupOrder::Finite(2),
                "flip about the order-2 point swapping the two right triangles",
            ),
            (0, [3, 3, 3]) => d(
                "S3",
                GroupOrder::Finite(6),
                "rotations and flips of two glued equilateral triangles",
            ),
            (0, [2, 2, 2, 2]) => d(
                "PSL(2,Z) x| (Z/2 x Z/2)",
                GroupOrder::Infinite,
                "SL(2,Z) acting linearly on T2 plus half-rotations of the S1 factors",
            ),
            _ => return Err(Orb2Error::NotEuclidean(self.clone())),
        };
        Ok(out)
    }
}

/// Free-function form of [`TwoOrbSig::orb_euler_char`].
pub fn orb_euler_char(sig: &TwoOrbSig) -> Rational64 {
    sig.orb_euler_char()
}

/// Free-function form of [`TwoOrbSig::classify_geometry`].
pub fn classify_geometry(sig: &TwoOrbSig) -> Result<GeometryClass, Orb2Error> {
    sig.classify_geometry()
}

/// Free-function form of [`TwoOrbSig::mapping_class_group`].
pub fn mapping_class_group(sig: &TwoOrbSig) -> Result<MCGDescription, Orb2Error> {
    sig.mapping_class_group()
}

/// Prints `S2(2,3,5)`, `T2`, `F2(3)`, `D2(3)`, `A2`, `F1-2`, `D2//Z2`, `D2//D4`.
impl fmt::Display for TwoOrbSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reflector {
            Some(Reflector::Z2) => return f.write_str("D2//Z2"),
            Some(Reflector::Dihedral(k)) => return write!(f, "D2//D{k}"),
            None => {}
        }
        match (self.base_genus, self.boundary_circles) {
            (0, 0) => f.write_str("S2")?,
            (1, 0) => f.write_str("T2")?,
            (g, 0) => write!(f, "F{g}")?,
            (0, 1) => f.write_str("D2")?,
            (0, 2) => f.write_str("A2")?,
            (g, b) => write!(f, "F{g}-{b}")?,
        }
        if !self.cone_orders.is_empty() {
            let parts: Vec<String> = self.cone_orders.iter().map(|k| k.to_string()).collect();
            write!(f, "({})", parts.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for TwoOrbSig {
    type Err = Orb2Error;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| Orb2Error::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let s = text.trim();
        if let Some(rest) = s.strip_prefix("D2//") {
            if rest == "Z2" {
                return TwoOrbSig::new(0, Vec::new(), 1, Some(Reflector::Z2));
            }
            let k = rest
                .strip_prefix('D')
                .and_then(|k| k.parse::<u32>().ok())
                .ok_or_else(|| err("expected D2//Z2 or D2//D<k>"))?;
            return TwoOrbSig::new(0, Vec::new(), 1, Some(Reflector::Dihedral(k)));
        }
        let (head, cones) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| err("unterminated cone list"))?;
                let cones = inner
                    .split(',')
                    .map(|c| c.trim().parse::<u32>().map_err(|_| err("bad cone order")))
                    .collect::<Result<Vec<_>, _>>()?;
                (&s[..i], cones)
            }
            None => (s, Vec::new()),
        };
        let (genus, bdry) = match head {
            "S2" => (0, 0),
            "T2" => (1, 0),
            "D2" => (0, 1),
            "A2" => (0, 2),
            _ => {
                let body = head
                    .strip_prefix('F')
                    .ok_or_else(|| err("unknown surface token"))?;
                let (g, b) = match body.split_once('-') {
                    Some((g, b)) => (g, b),
                    None => (body, "0"),
                };
                let g = g.parse::<u32>().map_err(|_| err("bad genus"))?;
                let b = b.parse::<u32>().map_err(|_| err("bad boundary count"))?;
                (g, b)
            }
        };
        TwoOrbSig::new(genus, cones, bdry, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(s: &str) -> TwoOrbSig {
        s.parse().unwrap()
    }

    fn q(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn euler_characteristic_examples() {
        // 2 - (1/2 + 2/3 + 4/5) evaluated by hand: 60/30 - 59/30
        assert_eq!(sig("S2(2,3,5)").orb_euler_char(), q(1, 30));
        assert_eq!(sig("S2").orb_euler_char(), q(2, 1));
        assert_eq!(sig("S2(2,2,2,2)").orb_euler_char(), q(0, 1));
        // 2 - (1/2 + 2/3 + 6/7) = 84/42 - 85/42
        assert_eq!(sig("S2(2,3,7)").orb_euler_char(), q(-1, 42));
        assert_eq!(sig("D2//Z2").orb_euler_char(), q(1, 2));
        assert_eq!(sig("D2//D3").orb_euler_char(), q(1, 6));
        assert_eq!(sig("D2(3)").orb_euler_char(), q(1, 3));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(sig("S2(2,3,5)").classify_geometry().unwrap(), GeometryClass::Spherical);
        assert_eq!(sig("S2(2,3)").classify_geometry().unwrap(), GeometryClass::Bad);
        assert_eq!(sig("S2(3,3,3)").classify_geometry().unwrap(), GeometryClass::Euclidean);
        assert_eq!(sig("S2(2,3,7)").classify_geometry().unwrap(), GeometryClass::Hyperbolic);
        assert_eq!(sig("S2(7)").classify_geometry().unwrap(), GeometryClass::Bad);
        assert_eq!(sig("T2").classify_geometry().unwrap(), GeometryClass::Euclidean);
        assert_eq!(sig("F2").classify_geometry().unwrap(), GeometryClass::Hyperbolic);
    }

    #[test]
    fn bounded_signatures_are_rejected_by_classifier() {
        for s in ["D2(3)", "D2(2,2)", "D2//Z2", "D2//D4", "A2"] {
            assert!(matches!(
                sig(s).classify_geometry(),
                Err(Orb2Error::NotClosed(_))
            ));
        }
        assert_eq!(sig("D2(3)").geometry(), GeometryClass::Discal);
        assert_eq!(sig("D2//D4").geometry(), GeometryClass::Discal);
        assert_eq!(sig("D2(2,2)").geometry(), GeometryClass::Other);
        assert_eq!(sig("A2").geometry(), GeometryClass::Other);
    }

    #[test]
    fn mapping_class_groups() {
        let m = sig("S2(2,3,6)").mapping_class_group().unwrap();
        assert_eq!(m.order, GroupOrder::Finite(1));
        assert_eq!(m.name, "trivial");
        assert_eq!(sig("S2(2,4,4)").mapping_class_group().unwrap().order, GroupOrder::Finite(2));
        assert_eq!(sig("S2(3,3,3)").mapping_class_group().unwrap().name, "S3");
        assert_eq!(sig("S2(3,3,3)").mapping_class_group().unwrap().order, GroupOrder::Finite(6));
        let p = sig("S2(2,2,2,2)").mapping_class_group().unwrap();
        assert_eq!(p.order, GroupOrder::Infinite);
        assert!(p.name.starts_with("PSL(2,Z)"));
        assert_eq!(sig("T2").mapping_class_group().unwrap().order, GroupOrder::Infinite);
        assert!(sig("S2(2,3,7)").mapping_class_group().is_err());
        assert!(sig("S2(2,3,5)").mapping_class_group().is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert_eq!(TwoOrbSig::sphere(&[1, 3]), Err(Orb2Error::ConeOrderTooSmall(1)));
        assert_eq!(
            TwoOrbSig::new(0, vec![], 0, Some(Reflector::Z2)),
            Err(Orb2Error::ReflectorWithoutBoundary)
        );
        assert!("D2//D1".parse::<TwoOrbSig>().is_err());
        assert!("Q2".parse::<TwoOrbSig>().is_err());
        assert_eq!(sig("S2(5,2,3)"), sig("S2(2,3,5)"));
    }

    #[test]
    fn display_round_trip_on_named_forms() {
        for s in [
            "S2", "T2", "F3(2,7)", "D2", "D2(3)", "A2(2,2)", "F1-2", "D2//Z2", "D2//D4",
            "S2(2,2,2,2)",
        ] {
            assert_eq!(sig(s).to_string(), s);
        }
    }

    #[test]
    fn equal_cone_footballs_are_spherical() {
        for k in 2..=100 {
            let s = TwoOrbSig::sphere(&[k, k]).unwrap();
            assert_eq!(s.classify_geometry().unwrap(), GeometryClass::Spherical);
        }
    }

    proptest! {
        #[test]
        fn euler_char_strictly_decreasing_in_each_cone(
            cones in prop::collection::vec(2u32..40, 1..5),
            idx in 0usize..5,
            genus in 0u32..3,
        ) {
            let i = idx % cones.len();
            let a = TwoOrbSig::new(genus, cones.clone(), 0, None).unwrap();
            let mut bumped = cones.clone();
            bumped[i] += 1;
            let b = TwoOrbSig::new(genus, bumped, 0, None).unwrap();
            prop_assert!(b.orb_euler_char() < a.orb_euler_char());
        }

        #[test]
        fn adding_a_cone_point_subtracts_its_deficit(
            cones in prop::collection::vec(2u32..40, 0..5),
            k in 2u32..60,
            genus in 0u32..3,
        ) {
            let a = TwoOrbSig::new(genus, cones.clone(), 0, None).unwrap();
            let mut more = cones.clone();
            more.push(k);
            let b = TwoOrbSig::new(genus, more, 0, None).unwrap();
            let deficit = Rational64::from_integer(1) - Rational64::new(1, i64::from(k));
            prop_assert_eq!(a.orb_euler_char() - b.orb_euler_char(), deficit);
        }

        #[test]
        fn sign_of_chi_decides_good_geometry(
            cones in prop::collection::vec(2u32..30, 0..5),
            genus in 0u32..3,
        ) {
            let s = TwoOrbSig::new(genus, cones, 0, None).unwrap();
            let class = s.classify_geometry().unwrap();
            if class != GeometryClass::Bad {
                let chi = s.orb_euler_char();
                let zero = Rational64::from_integer(0);
                let expected = if chi > zero {
                    GeometryClass::Spherical
                } else if chi == zero {
                    GeometryClass::Euclidean
                } else {
                    GeometryClass::Hyperbolic
                };
                prop_assert_eq!(class, expected);
                // the positive-chi good signatures are exactly the finite list
                prop_assert_eq!(class == GeometryClass::Spherical, s.is_spherical());
            }
        }

        #[test]
        fn parse_print_round_trip(
            cones in prop::collection::vec(2u32..30, 0..4),
            genus in 0u32..3,
            bdry in 0u32..3,
        ) {
            let s = TwoOrbSig::new(genus, cones, bdry, None).unwrap();
            let back: TwoOrbSig = s.to_string().parse().unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
