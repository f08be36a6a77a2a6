//! Fractional-part embeddings of matrices (and of units mod n) into unit cubes.
//!
//! Coordinates are kept as integer numerators over a common denominator, so
//! region tests downstream are exact.
//!
//! The `g` layout follows the displayed `n x 2n` array of fractions, flattened
//! row-major: row `i` contributes `a_i1/p, ..., a_in/p, b_i1/p, ..., b_in/p`
//! where `B = A^{-1}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp_linalg::{inv_mod, FpMatrix};
use crate::group_enum::GroupKind;

/// A point of `[0,1)^k` whose coordinates are `numerators[i] / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PointRepr", into = "PointRepr")]
pub struct UnitPoint {
    denominator: u64,
    numerators: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    k: usize,
    p: u64,
    numerators: Vec<u64>,
}

impl TryFrom<PointRepr> for UnitPoint {
    type Error = Error;
    fn try_from(r: PointRepr) -> Result<Self> {
        if r.k != r.numerators.len() {
            return Err(Error::DimensionMismatch {
                expected: r.k,
                found: r.numerators.len(),
            });
        }
        UnitPoint::new(r.p, r.numerators)
    }
}

impl From<UnitPoint> for PointRepr {
    fn from(u: UnitPoint) -> Self {
        PointRepr {
            k: u.numerators.len(),
            p: u.denominator,
            numerators: u.numerators,
        }
    }
}

impl UnitPoint {
    pub fn new(denominator: u64, numerators: Vec<u64>) -> Result<Self> {
        if denominator == 0 || numerators.iter().any(|&v| v >= denominator) {
            return Err(Error::InvalidInput(format!(
                "point numerators must lie in [0, {denominator})"
            )));
        }
        Ok(UnitPoint {
            denominator,
            numerators,
        })
    }

    pub fn k(&self) -> usize {
        self.numerators.len()
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn numerators(&self) -> &[u64] {
        &self.numerators
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.numerators[i] as f64 / self.denominator as f64
    }
}

/// Selector for the matrix embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embedding {
    /// `A -> (A, A^{-1})`, dimension `2n^2`.
    #[serde(rename = "g")]
    G,
    /// `A -> A` on GL_n, dimension `n^2`.
    #[serde(rename = "h")]
    H,
    /// `A -> A` on SL_n, dimension `n^2`.
    #[serde(rename = "s")]
    S,
    /// `A -> (A, C A^{-1})` for a fixed invertible `C`, dimension `2n^2`.
    #[serde(rename = "gt")]
    Gt,
}

impl Embedding {
    pub fn tag(self) -> &'static str {
        match self {
            Embedding::G => "g",
            Embedding::H => "h",
            Embedding::S => "s",
            Embedding::Gt => "gt",
        }
    }

    pub fn dim(self, n: usize) -> usize {
        match self {
            Embedding::G | Embedding::Gt => 2 * n * n,
            Embedding::H | Embedding::S => n * n,
        }
    }

    /// The group a scan over this embedding naturally runs on.
    pub fn default_kind(self) -> GroupKind {
        match self {
            Embedding::S => GroupKind::SpecialLinear,
            _ => GroupKind::GeneralLinear,
        }
    }

    pub fn check_kind(self, kind: GroupKind) -> Result<()> {
        let ok = match self {
            Embedding::S => kind == GroupKind::SpecialLinear,
            _ => matches!(kind, GroupKind::GeneralLinear | GroupKind::SpecialLinear),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MembershipViolation(format!(
                "embedding '{}' is not defined on group '{}'",
                self.tag(),
                kind
            )))
        }
    }
}

impl fmt::Display for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Embedding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" => Ok(Embedding::G),
            "h" => Ok(Embedding::H),
            "s" => Ok(Embedding::S),
            "gt" => Ok(Embedding::Gt),
            other => Err(Error::InvalidInput(format!(
                "unknown embedding '{other}', expected one of g|h|s|gt"
            ))),
        }
    }
}

/// Validated embedding of a fixed group, writing numerators into a buffer.
#[derive(Debug, Clone)]
pub struct Embedder {
    embedding: Embedding,
    kind: GroupKind,
    aux: Option<FpMatrix>,
    n: usize,
}

impl Embedder {
    pub fn new(
        embedding: Embedding,
        kind: GroupKind,
        n: usize,
        aux: Option<&FpMatrix>,
    ) -> Result<Self> {
        embedding.check_kind(kind)?;
        match (embedding, aux) {
            (Embedding::Gt, None) => {
                return Err(Error::InvalidInput(
                    "embedding 'gt' requires an auxiliary matrix C".into(),
                ))
            }
            (Embedding::Gt, Some(c)) => {
                if c.n() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: c.n(),
                    });
                }
                if c.det_value() == 0 {
                    return Err(Error::Singular);
                }
            }
            (_, Some(_)) => {
                return Err(Error::InvalidInput(format!(
                    "embedding '{}' takes no auxiliary matrix",
                    embedding.tag()
                )))
            }
            (_, None) => {}
        }
        Ok(Embedder {
            embedding,
            kind,
            aux: aux.copied(),
            n,
        })
    }

    pub fn embedding(&self) -> Embedding {
        self.embedding
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn aux(&self) -> Option<&FpMatrix> {
        self.aux.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.embedding.dim(self.n)
    }

    /// Writes the numerators of the image of a group member into `out`.
    ///
    /// `a` must belong to the embedder's group.
    #[inline]
    pub fn write(&self, a: &FpMatrix, out: &mut [u32]) {
        let n = self.n;
        match self.embedding {
            Embedding::H | Embedding::S => out[..n * n].copy_from_slice(a.entries()),
            Embedding::G | Embedding::Gt => {
                let inv = a.inverse().expect("group member is invertible");
                let b = match &self.aux {
                    Some(c) => c.mul_unchecked(&inv),
                    None => inv,
                };
                for i in 0..n {
                    out[2 * n * i..2 * n * i + n].copy_from_slice(&a.entries()[n * i..n * i + n]);
                    out[2 * n * i + n..2 * n * (i + 1)]
                        .copy_from_slice(&b.entries()[n * i..n * i + n]);
                }
            }
        }
    }

    pub fn point(&self, a: &FpMatrix) -> UnitPoint {
        let mut buf = vec![0u32; self.dim()];
        self.write(a, &mut buf);
        UnitPoint {
            denominator: a.modulus().get(),
            numerators: buf.into_iter().map(u64::from).collect(),
        }
    }
}

fn interleave(a: &FpMatrix, b: &FpMatrix) -> UnitPoint {
    let n = a.n();
    let mut numerators = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        numerators.extend((0..n).map(|j| a.get(i, j) as u64));
        numerators.extend((0..n).map(|j| b.get(i, j) as u64));
    }
    UnitPoint {
        denominator: a.modulus().get(),
        numerators,
    }
}

fn flat(a: &FpMatrix) -> UnitPoint {
    UnitPoint {
        denominator: a.modulus().get(),
        numerators: a.entries().iter().map(|&v| v as u64).collect(),
    }
}

/// `(A, A^{-1})` in the row-major `n x 2n` layout.
pub fn g_p(a: &FpMatrix) -> Result<UnitPoint> {
    let b = a.inverse()?;
    Ok(interleave(a, &b))
}

pub fn h_p(a: &FpMatrix) -> Result<UnitPoint> {
    if a.det_value() == 0 {
        return Err(Error::MembershipViolation("h_p requires an invertible matrix".into()));
    }
    Ok(flat(a))
}

pub fn s_p(a: &FpMatrix) -> Result<UnitPoint> {
    if a.det_value() != 1 {
        return Err(Error::MembershipViolation("s_p requires a determinant-one matrix".into()));
    }
    Ok(flat(a))
}

/// `(A, B)` with `BA = C`, i.e. `B = C A^{-1}`.
pub fn tilde_g_p(a: &FpMatrix, c: &FpMatrix) -> Result<UnitPoint> {
    if c.det_value() == 0 {
        return Err(Error::Singular);
    }
    let b = c.mul(&a.inverse()?)?;
    Ok(interleave(a, &b))
}

/// `({x/n}, {x^{-1}/n})` for a unit `x` modulo `n >= 2`.
pub fn classical_f_n(x: i64, n: u64) -> Result<UnitPoint> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("modulus {n} must be at least 2")));
    }
    let r = x.rem_euclid(n as i64) as u64;
    let inv = inv_mod(r, n).ok_or(Error::NotAUnit(x, n))?;
    Ok(UnitPoint {
        denominator: n,
        numerators: vec![r, inv],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp_linalg::Prime;
    use crate::group_enum::Domain;
    use std::collections::HashSet;

    fn p(v: u64) -> Prime {
        Prime::new(v).unwrap()
    }

    fn mat(pv: u64, rows: &[[i64; 2]]) -> FpMatrix {
        FpMatrix::from_rows(p(pv), rows).unwrap()
    }

    #[test]
    fn g_p_examples() {
        let i = FpMatrix::identity(2, p(5)).unwrap();
        assert_eq!(g_p(&i).unwrap().numerators(), &[1, 0, 1, 0, 0, 1, 0, 1]);
        let a = mat(5, &[[1, 1], [0, 1]]);
        assert_eq!(g_p(&a).unwrap().numerators(), &[1, 1, 1, 4, 0, 1, 0, 1]);
        assert!(matches!(g_p(&mat(5, &[[1, 2], [2, 4]])), Err(Error::Singular)));
    }

    #[test]
    fn g_p_on_sl2_uses_adjugate() {
        let d = Domain::new(GroupKind::SpecialLinear, 2, p(7)).unwrap();
        for a in d.iter() {
            let (aa, b, c, dd) = (a.get(0, 0) as u64, a.get(0, 1) as u64, a.get(1, 0) as u64, a.get(1, 1) as u64);
            let x = g_p(&a).unwrap();
            let q = x.numerators();
            assert_eq!((q[2], q[3], q[6], q[7]), (dd, (7 - b) % 7, (7 - c) % 7, aa));
        }
    }

    #[test]
    fn h_and_s_examples() {
        let i = FpMatrix::identity(2, p(3)).unwrap();
        assert_eq!(h_p(&i).unwrap().numerators(), &[1, 0, 0, 1]);
        let a = mat(7, &[[1, 1], [0, 1]]);
        assert_eq!(s_p(&a).unwrap().numerators(), &[1, 1, 0, 1]);
        let d = Domain::new(GroupKind::SpecialLinear, 2, p(5)).unwrap();
        for a in d.iter() {
            assert_eq!(h_p(&a).unwrap(), s_p(&a).unwrap());
        }
        assert!(matches!(s_p(&mat(7, &[[2, 0], [0, 1]])), Err(Error::MembershipViolation(_))));
        assert!(matches!(h_p(&mat(7, &[[0, 0], [0, 1]])), Err(Error::MembershipViolation(_))));
    }

    #[test]
    fn tilde_g_examples() {
        let d = Domain::new(GroupKind::GeneralLinear, 2, p(5)).unwrap();
        let i = FpMatrix::identity(2, p(5)).unwrap();
        for a in d.iter().take(100) {
            assert_eq!(tilde_g_p(&a, &i).unwrap(), g_p(&a).unwrap());
        }
        let c = mat(5, &[[2, 0], [0, 3]]);
        assert_eq!(tilde_g_p(&i, &c).unwrap().numerators(), &[1, 0, 2, 0, 0, 1, 0, 3]);
        // n = 1 reduces to the modular hyperbola x * y = c.
        let pr = p(11);
        let c1 = FpMatrix::from_flat(1, pr, &[3]).unwrap();
        for x in 1..11 {
            let a = FpMatrix::from_flat(1, pr, &[x]).unwrap();
            let pt = tilde_g_p(&a, &c1).unwrap();
            let y = pt.numerators()[1] as i64;
            assert_eq!((x * y) % 11, 3);
        }
        assert!(matches!(tilde_g_p(&i, &mat(5, &[[1, 1], [1, 1]])), Err(Error::Singular)));
    }

    #[test]
    fn classical_examples() {
        for n in 2..20 {
            assert_eq!(classical_f_n(1, n).unwrap().numerators(), &[1 % n, 1 % n]);
        }
        assert_eq!(classical_f_n(2, 5).unwrap().numerators(), &[2, 3]);
        assert_eq!(classical_f_n(3, 7).unwrap().numerators(), &[3, 5]);
        assert!(matches!(classical_f_n(4, 10), Err(Error::NotAUnit(4, 10))));
    }

    #[test]
    fn embeddings_are_injective() {
        for kind in [GroupKind::GeneralLinear, GroupKind::SpecialLinear] {
            let d = Domain::new(kind, 2, p(5)).unwrap();
            for emb in [Embedding::G, Embedding::H] {
                let e = Embedder::new(emb, kind, 2, None).unwrap();
                let image: HashSet<UnitPoint> = d.iter().map(|a| e.point(&a)).collect();
                assert_eq!(image.len() as u64, d.order());
                for pt in &image {
                    assert!(pt.numerators().iter().all(|&v| v < 5));
                }
            }
        }
        let units: HashSet<UnitPoint> = (1..30).filter_map(|x| classical_f_n(x, 30).ok()).collect();
        assert_eq!(units.len(), 8);
    }

    #[test]
    fn embedder_matches_free_functions() {
        let c = mat(7, &[[1, 2], [3, 5]]);
        let d = Domain::new(GroupKind::GeneralLinear, 2, p(7)).unwrap();
        let eg = Embedder::new(Embedding::G, d.kind(), 2, None).unwrap();
        let et = Embedder::new(Embedding::Gt, d.kind(), 2, Some(&c)).unwrap();
        let eh = Embedder::new(Embedding::H, d.kind(), 2, None).unwrap();
        for a in d.iter() {
            let g = g_p(&a).unwrap();
            let t = tilde_g_p(&a, &c).unwrap();
            assert_eq!(eg.point(&a), g);
            assert_eq!(et.point(&a), t);
            assert_eq!(eh.point(&a), h_p(&a).unwrap());
            assert_eq!(g.numerators()[..2], t.numerators()[..2]);
            assert_eq!(g.numerators()[4..6], t.numerators()[4..6]);
        }
    }

    #[test]
    fn embedder_validation() {
        let c = mat(7, &[[1, 2], [3, 5]]);
        assert!(Embedder::new(Embedding::S, GroupKind::GeneralLinear, 2, None).is_err());
        assert!(Embedder::new(Embedding::G, GroupKind::Singular, 2, None).is_err());
        assert!(Embedder::new(Embedding::Gt, GroupKind::GeneralLinear, 2, None).is_err());
        assert!(Embedder::new(Embedding::G, GroupKind::GeneralLinear, 2, Some(&c)).is_err());
        let sing = mat(7, &[[1, 1], [1, 1]]);
        assert!(matches!(
            Embedder::new(Embedding::Gt, GroupKind::GeneralLinear, 2, Some(&sing)),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn point_json() {
        let pt = classical_f_n(2, 5).unwrap();
        let s = serde_json::to_string(&pt).unwrap();
        assert_eq!(s, r#"{"k":2,"p":5,"numerators":[2,3]}"#);
        assert_eq!(serde_json::from_str::<UnitPoint>(&s).unwrap(), pt);
        assert!(serde_json::from_str::<UnitPoint>(r#"{"k":2,"p":5,"numerators":[2,5]}"#).is_err());
    }
}
