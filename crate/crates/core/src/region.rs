//! Half-open axis-aligned boxes in `[0,1)^k`, finite disjoint unions of them,
//! and exact counting of embedded group images inside a region.

use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, Embedding, UnitPoint};
use crate::error::{Error, Result};
use crate::fp_linalg::FpMatrix;
use crate::group_enum::Domain;

pub type Endpoint = Ratio<u64>;

/// Exact area and membership, shared by single boxes and unions.
pub trait Region {
    fn k(&self) -> usize;
    fn area(&self) -> BigRational;
    fn contains(&self, x: &UnitPoint) -> Result<bool>;
}

/// `[lo_1, hi_1) x ... x [lo_k, hi_k)` with rational endpoints in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AxisBox {
    lo: Vec<Endpoint>,
    hi: Vec<Endpoint>,
}

impl AxisBox {
    pub fn new(lo: Vec<Endpoint>, hi: Vec<Endpoint>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidRegion("box dimension must be at least 1".into()));
        }
        let one = Endpoint::one();
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l <= h && *h <= one) {
                return Err(Error::InvalidRegion(format!(
                    "coordinate {i}: need 0 <= lo <= hi <= 1, got [{l}, {h})"
                )));
            }
        }
        Ok(AxisBox { lo, hi })
    }

    /// Builds a box from `(numerator, denominator)` pairs.
    pub fn from_fractions(lo: &[(u64, u64)], hi: &[(u64, u64)]) -> Result<Self> {
        let conv = |v: &[(u64, u64)]| -> Result<Vec<Endpoint>> {
            v.iter()
                .map(|&(a, b)| {
                    if b == 0 {
                        Err(Error::InvalidRegion("zero denominator".into()))
                    } else {
                        Ok(Endpoint::new(a, b))
                    }
                })
                .collect()
        };
        AxisBox::new(conv(lo)?, conv(hi)?)
    }

    pub fn unit(k: usize) -> Self {
        AxisBox {
            lo: vec![Endpoint::zero(); k],
            hi: vec![Endpoint::one(); k],
        }
    }

    /// `[0, 1/2)^m x [0, 1)^(k - m)`.
    pub fn lower_half_prefix(k: usize, m: usize) -> Self {
        let mut b = AxisBox::unit(k);
        for h in b.hi.iter_mut().take(m) {
            *h = Endpoint::new(1, 2);
        }
        b
    }

    pub fn lo(&self) -> &[Endpoint] {
        &self.lo
    }

    pub fn hi(&self) -> &[Endpoint] {
        &self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l == h)
    }

    /// Half-open boxes meet iff every coordinate interval meets.
    pub fn overlaps(&self, other: &AxisBox) -> bool {
        self.k() == other.k()
            && (0..self.k()).all(|i| self.lo[i].max(other.lo[i]) < self.hi[i].min(other.hi[i]))
    }

    pub fn is_within(&self, other: &AxisBox) -> bool {
        self.is_empty()
            || (self.k() == other.k()
                && (0..self.k()).all(|i| other.lo[i] <= self.lo[i] && self.hi[i] <= other.hi[i]))
    }

    /// Integer numerator ranges `[lo, hi)` equivalent to membership for points
    /// with denominator `p`: `x/p >= a/b <=> x >= ceil(a p / b)`, and likewise
    /// for the strict upper bound.
    pub fn numerator_bounds(&self, p: u64) -> IntBox {
        let ceil = |r: &Endpoint| -> u64 {
            let num = *r.numer() as u128 * p as u128;
            let den = *r.denom() as u128;
            num.div_ceil(den) as u64
        };
        IntBox {
            lo: self.lo.iter().map(ceil).collect(),
            hi: self.hi.iter().map(ceil).collect(),
        }
    }
}

impl Region for AxisBox {
    fn k(&self) -> usize {
        self.lo.len()
    }

    fn area(&self) -> BigRational {
        self.lo.iter().zip(&self.hi).fold(BigRational::one(), |acc, (l, h)| {
            let side = h - l;
            acc * BigRational::new(BigInt::from(*side.numer()), BigInt::from(*side.denom()))
        })
    }

    fn contains(&self, x: &UnitPoint) -> Result<bool> {
        if x.k() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: x.k(),
            });
        }
        let q = x.denominator() as u128;
        Ok(x.numerators().iter().enumerate().all(|(i, &v)| {
            let v = v as u128;
            let (l, h) = (&self.lo[i], &self.hi[i]);
            v * *l.denom() as u128 >= *l.numer() as u128 * q
                && v * (*h.denom() as u128) < *h.numer() as u128 * q
        }))
    }
}

/// Box membership pre-resolved to integer numerator ranges for one denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntBox {
    pub lo: Vec<u64>,
    pub hi: Vec<u64>,
}

impl IntBox {
    #[inline]
    pub fn contains(&self, x: &[u32]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((&l, &h), &v)| l <= v as u64 && (v as u64) < h)
    }
}

/// A finite union of pairwise disjoint boxes of a common dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionUnion {
    k: usize,
    boxes: Vec<AxisBox>,
}

impl RegionUnion {
    pub fn new(k: usize, boxes: Vec<AxisBox>) -> Result<Self> {
        for b in &boxes {
            if b.k() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: b.k(),
                });
            }
        }
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if boxes[i].overlaps(&boxes[j]) {
                    return Err(Error::InvalidRegion(format!("boxes {i} and {j} overlap")));
                }
            }
        }
        Ok(RegionUnion { k, boxes })
    }

    pub fn empty(k: usize) -> Self {
        RegionUnion { k, boxes: Vec::new() }
    }

    pub fn full(k: usize) -> Self {
        RegionUnion {
            k,
            boxes: vec![AxisBox::unit(k)],
        }
    }

    pub fn single(b: AxisBox) -> Self {
        RegionUnion {
            k: b.k(),
            boxes: vec![b],
        }
    }

    pub fn boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    /// Every box of `self` lies inside some box of `other`.
    pub fn is_within(&self, other: &RegionUnion) -> bool {
        self.boxes
            .iter()
            .all(|b| other.boxes.iter().any(|o| b.is_within(o)))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: RegionFile = serde_json::from_str(s).map_err(|e| Error::Json {
            path: "<region>".into(),
            source: e,
        })?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let file: RegionFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        file.try_into()
    }

    pub fn to_file(&self) -> RegionFile {
        RegionFile {
            k: self.k,
            boxes: self.boxes.iter().map(BoxFile::from).collect(),
        }
    }
}

impl Region for RegionUnion {
    fn k(&self) -> usize {
        self.k
    }

    fn area(&self) -> BigRational {
        self.boxes
            .iter()
            .fold(BigRational::zero(), |acc, b| acc + b.area())
    }

    fn contains(&self, x: &UnitPoint) -> Result<bool> {
        if x.k() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: x.k(),
            });
        }
        for b in &self.boxes {
            if b.contains(x)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// An endpoint on disk: `[num, den]`, each an integer or a decimal string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntOrString {
    Int(u64),
    Str(String),
}

impl IntOrString {
    fn value(&self) -> Result<u64> {
        match self {
            IntOrString::Int(v) => Ok(*v),
            IntOrString::Str(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidRegion(format!("'{s}' is not a nonnegative integer"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxFile {
    pub lo: Vec<[IntOrString; 2]>,
    pub hi: Vec<[IntOrString; 2]>,
}

/// On-disk region: `{"k": K, "boxes": [{"lo": [[num, den], ...], "hi": [...]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFile {
    pub k: usize,
    pub boxes: Vec<BoxFile>,
}

impl From<&AxisBox> for BoxFile {
    fn from(b: &AxisBox) -> Self {
        let conv = |v: &[Endpoint]| {
            v.iter()
                .map(|r| [IntOrString::Int(*r.numer()), IntOrString::Int(*r.denom())])
                .collect()
        };
        BoxFile {
            lo: conv(&b.lo),
            hi: conv(&b.hi),
        }
    }
}

impl TryFrom<&BoxFile> for AxisBox {
    type Error = Error;
    fn try_from(f: &BoxFile) -> Result<Self> {
        let conv = |v: &[[IntOrString; 2]]| -> Result<Vec<(u64, u64)>> {
            v.iter().map(|[a, b]| Ok((a.value()?, b.value()?))).collect()
        };
        AxisBox::from_fractions(&conv(&f.lo)?, &conv(&f.hi)?)
    }
}

impl TryFrom<RegionFile> for RegionUnion {
    type Error = Error;
    fn try_from(f: RegionFile) -> Result<Self> {
        let boxes = f
            .boxes
            .iter()
            .map(AxisBox::try_from)
            .collect::<Result<Vec<_>>>()?;
        RegionUnion::new(f.k, boxes)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Per-box member counts of the embedded image, in one enumeration pass.
pub fn count_boxes(domain: &Domain, embedder: &Embedder, boxes: &[AxisBox]) -> Result<Vec<u64>> {
    let k = embedder.dim();
    for b in boxes {
        check_dim(k, b.k())?;
    }
    let bounds: Vec<IntBox> = boxes
        .iter()
        .map(|b| b.numerator_bounds(domain.p().get()))
        .collect();
    Ok(domain.par_fold(
        || vec![0u64; bounds.len()],
        |acc, a| {
            let mut buf = [0u32; 32];
            embedder.write(a, &mut buf[..k]);
            for (c, b) in acc.iter_mut().zip(&bounds) {
                if b.contains(&buf[..k]) {
                    *c += 1;
                }
            }
        },
        |mut x, y| {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
            x
        },
    ))
}

/// Number of group members whose embedded image lies in `region`.
pub fn count_image(
    domain: &Domain,
    embedding: Embedding,
    region: &RegionUnion,
    aux: Option<&FpMatrix>,
) -> Result<u64> {
    let embedder = Embedder::new(embedding, domain.kind(), domain.n(), aux)?;
    if let Some(c) = aux {
        if c.modulus() != domain.p() {
            return Err(Error::ModulusMismatch {
                left: domain.p().get(),
                right: c.modulus().get(),
            });
        }
    }
    let k = embedder.dim();
    check_dim(k, region.k())?;
    let bounds: Vec<IntBox> = region
        .boxes()
        .iter()
        .map(|b| b.numerator_bounds(domain.p().get()))
        .collect();
    Ok(domain.par_fold(
        || 0u64,
        |acc, a| {
            let mut buf = [0u32; 32];
            embedder.write(a, &mut buf[..k]);
            if bounds.iter().any(|b| b.contains(&buf[..k])) {
                *acc += 1;
            }
        },
        |a, b| a + b,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{classical_f_n, g_p};
    use crate::fp_linalg::Prime;
    use crate::group_enum::GroupKind;
    use proptest::prelude::*;

    fn half() -> Endpoint {
        Endpoint::new(1, 2)
    }

    fn ratio(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn areas() {
        assert_eq!(AxisBox::unit(5).area(), ratio(1, 1));
        assert_eq!(RegionUnion::empty(3).area(), ratio(0, 1));
        assert_eq!(AxisBox::lower_half_prefix(8, 8).area(), ratio(1, 256));
        let u = RegionUnion::new(
            2,
            vec![
                AxisBox::from_fractions(&[(0, 1), (0, 1)], &[(1, 2), (1, 3)]).unwrap(),
                AxisBox::from_fractions(&[(1, 2), (0, 1)], &[(1, 1), (1, 1)]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(u.area(), ratio(1, 6) + ratio(1, 2));
    }

    #[test]
    fn validation() {
        assert!(AxisBox::from_fractions(&[(1, 2)], &[(1, 3)]).is_err());
        assert!(AxisBox::from_fractions(&[(0, 1)], &[(3, 2)]).is_err());
        assert!(AxisBox::from_fractions(&[(0, 0)], &[(1, 1)]).is_err());
        let a = AxisBox::from_fractions(&[(0, 1)], &[(1, 2)]).unwrap();
        let b = AxisBox::from_fractions(&[(1, 3)], &[(1, 1)]).unwrap();
        let c = AxisBox::from_fractions(&[(1, 2)], &[(1, 1)]).unwrap();
        assert!(matches!(
            RegionUnion::new(1, vec![a.clone(), b]),
            Err(Error::InvalidRegion(_))
        ));
        assert!(RegionUnion::new(1, vec![a.clone(), c]).is_ok());
        assert!(matches!(
            RegionUnion::new(2, vec![a]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn membership() {
        let full = AxisBox::unit(2);
        assert!(full.contains(&classical_f_n(4, 5).unwrap()).unwrap());
        let b = AxisBox::new(vec![Endpoint::zero(), half()], vec![half(), Endpoint::one()]).unwrap();
        assert!(b.contains(&classical_f_n(2, 5).unwrap()).unwrap());
        // x_1 = 1/2 sits on the open upper face.
        let edge = AxisBox::new(vec![Endpoint::zero(); 2], vec![half(), Endpoint::one()]).unwrap();
        let pt = UnitPoint::new(4, vec![2, 1]).unwrap();
        assert!(!edge.contains(&pt).unwrap());
        let pt = UnitPoint::new(4, vec![1, 2]).unwrap();
        assert!(edge.contains(&pt).unwrap());
        assert!(matches!(
            edge.contains(&UnitPoint::new(4, vec![1]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn count_image_examples() {
        let pr = Prime::new(3).unwrap();
        let d = Domain::new(GroupKind::GeneralLinear, 2, pr).unwrap();
        let full = count_image(&d, Embedding::G, &RegionUnion::full(8), None).unwrap();
        assert_eq!(full, 48);
        assert_eq!(count_image(&d, Embedding::G, &RegionUnion::empty(8), None).unwrap(), 0);
        // Oracle: filter all 48 members through the rational membership test.
        let r = RegionUnion::single(AxisBox::lower_half_prefix(8, 8));
        let brute = d.iter().filter(|a| r.contains(&g_p(a).unwrap()).unwrap()).count();
        let got = count_image(&d, Embedding::G, &r, None).unwrap();
        assert_eq!(got, brute as u64);
        assert_eq!(got, 2);
        assert!(matches!(
            count_image(&d, Embedding::G, &RegionUnion::full(4), None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            count_image(&d, Embedding::S, &RegionUnion::full(4), None),
            Err(Error::MembershipViolation(_))
        ));
    }

    #[test]
    fn region_file_forms() {
        let text = r#"{"k":2,"boxes":[{"lo":[["0","1"],[1,2]],"hi":[[1,2],["1","1"]]}]}"#;
        let r = RegionUnion::from_json_str(text).unwrap();
        assert_eq!(r.area(), ratio(1, 4));
        let out = serde_json::to_string(&r.to_file()).unwrap();
        assert_eq!(out, r#"{"k":2,"boxes":[{"lo":[[0,1],[1,2]],"hi":[[1,2],[1,1]]}]}"#);
        assert!(RegionUnion::from_json_str(r#"{"k":1,"boxes":[{"lo":[["x","1"]],"hi":[[1,1]]}]}"#).is_err());
    }

    fn endpoint_pair() -> impl Strategy<Value = ((u64, u64), (u64, u64))> {
        (1u64..13, 1u64..13).prop_flat_map(|(d1, d2)| {
            (0..=d1, 0..=d2).prop_filter_map("ordered", move |(a, b)| {
                let l = Endpoint::new(a, d1);
                let h = Endpoint::new(b, d2);
                (l <= h).then_some(((a, d1), (b, d2)))
            })
        })
    }

    proptest! {
        #[test]
        fn integer_bounds_match_rational_membership(
            ends in proptest::collection::vec(endpoint_pair(), 3),
            p in prop::sample::select(vec![2u64, 3, 5, 7, 11, 13, 31]),
            xs in proptest::collection::vec(0u64..1000, 3),
        ) {
            let lo: Vec<(u64, u64)> = ends.iter().map(|e| e.0).collect();
            let hi: Vec<(u64, u64)> = ends.iter().map(|e| e.1).collect();
            let b = AxisBox::from_fractions(&lo, &hi).unwrap();
            let nums: Vec<u64> = xs.iter().map(|x| x % p).collect();
            let pt = UnitPoint::new(p, nums.clone()).unwrap();
            let ib = b.numerator_bounds(p);
            let packed: Vec<u32> = nums.iter().map(|&v| v as u32).collect();
            prop_assert_eq!(ib.contains(&packed), b.contains(&pt).unwrap());
        }

        #[test]
        fn counts_are_monotone_and_additive(
            cut in 1u64..7, p in prop::sample::select(vec![5u64, 7])
        ) {
            let pr = Prime::new(p).unwrap();
            let d = Domain::new(GroupKind::GeneralLinear, 2, pr).unwrap();
            let left = AxisBox::from_fractions(&[(0, 1); 4], &[(cut, 7), (1, 1), (1, 1), (1, 1)]).unwrap();
            let right = AxisBox::from_fractions(&[(cut, 7), (0, 1), (0, 1), (0, 1)], &[(1, 1); 4]).unwrap();
            let inner = AxisBox::from_fractions(&[(0, 1); 4], &[(cut, 7), (1, 2), (1, 1), (1, 1)]).unwrap();
            let c = |r: &RegionUnion| count_image(&d, Embedding::H, r, None).unwrap();
            let whole = RegionUnion::new(4, vec![left.clone(), right.clone()]).unwrap();
            prop_assert_eq!(
                c(&whole),
                c(&RegionUnion::single(left.clone())) + c(&RegionUnion::single(right))
            );
            prop_assert_eq!(c(&whole), d.order());
            let small = RegionUnion::single(inner);
            let big = RegionUnion::single(left);
            prop_assert!(small.is_within(&big));
            prop_assert!(c(&small) <= c(&big));
        }
    }
}
