//! Character sums over matrix groups, accumulated as exact integer histograms.
//!
//! Every sum here has the shape `sum_X e_p(L(X))` for an F_p-valued form `L`.
//! We count how often each residue `z` occurs as `L(X)` and only evaluate
//! `sum_z counts[z] e_p(z)` at the very end, so identities between sums can be
//! checked as integer equalities.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp_linalg::{FpMatrix, Prime, Residue};
use crate::group_enum::{Domain, GroupKind, DESK_SCALE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl ComplexValue {
    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn scale(&self, s: f64) -> ComplexValue {
        ComplexValue {
            re: self.re * s,
            im: self.im * s,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// `cos` and `sin` of `2 pi z / p` for every residue `z`.
#[derive(Debug, Clone)]
pub struct PhaseTable {
    p: u64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PhaseTable {
    pub fn new(p: u64) -> Self {
        let (cos, sin) = (0..p)
            .map(|z| {
                let t = TAU * z as f64 / p as f64;
                (t.cos(), t.sin())
            })
            .unzip();
        PhaseTable { p, cos, sin }
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }
}

/// `counts[z]` = number of domain elements whose linear form equals `z` mod p.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FreqVector {
    p: u64,
    counts: Vec<u64>,
}

impl FreqVector {
    pub fn new(p: u64, counts: Vec<u64>) -> Result<Self> {
        if p == 0 || counts.len() as u64 != p {
            return Err(Error::DimensionMismatch {
                expected: p as usize,
                found: counts.len(),
            });
        }
        Ok(FreqVector { p, counts })
    }

    pub fn zeros(p: u64) -> Self {
        FreqVector {
            p,
            counts: vec![0; p as usize],
        }
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    #[inline]
    pub fn bump(&mut self, z: u64) {
        self.counts[z as usize] += 1;
    }

    pub fn merge(mut self, other: FreqVector) -> FreqVector {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    /// All mass sits at residue 0.
    pub fn is_concentrated_at_zero(&self) -> bool {
        self.counts[1..].iter().all(|&c| c == 0)
    }

    /// The histogram of `c * L` given the histogram of `L`.
    pub fn scaled_by(&self, c: u64) -> FreqVector {
        let mut out = FreqVector::zeros(self.p);
        for (z, &n) in self.counts.iter().enumerate() {
            out.counts[(z as u64 * (c % self.p) % self.p) as usize] += n;
        }
        out
    }

    pub fn to_complex(&self) -> ComplexValue {
        self.to_complex_with(&PhaseTable::new(self.p))
    }

    /// `sum_z counts[z] e_p(z)`, summed in index order.
    pub fn to_complex_with(&self, table: &PhaseTable) -> ComplexValue {
        assert_eq!(table.p, self.p, "phase table for a different modulus");
        let (mut re, mut im) = (Compensated::default(), Compensated::default());
        for (z, &n) in self.counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            re.add(n as f64 * table.cos[z]);
            im.add(n as f64 * table.sin[z]);
        }
        ComplexValue {
            re: re.value(),
            im: im.value(),
        }
    }
}

pub fn freq_to_complex(c: &FreqVector) -> ComplexValue {
    c.to_complex()
}

fn same_shape(a: &FpMatrix, b: &FpMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    if a.modulus() != b.modulus() {
        return Err(Error::ModulusMismatch {
            left: a.modulus().get(),
            right: b.modulus().get(),
        });
    }
    Ok(())
}

/// Histogram of `U . X` over the members of `kind`.
pub fn s_freq(kind: GroupKind, u: &FpMatrix) -> Result<FreqVector> {
    let domain = Domain::new(kind, u.n(), u.modulus())?;
    s_freq_in(&domain, u)
}

pub fn s_freq_in(domain: &Domain, u: &FpMatrix) -> Result<FreqVector> {
    check_domain(domain, u)?;
    let p = domain.p().get();
    Ok(domain.par_fold(
        || FreqVector::zeros(p),
        |acc, x| acc.bump(u.dot_unchecked(x)),
        FreqVector::merge,
    ))
}

/// Histogram of `U . X + V . (M X^{-1})` over GL_n.
pub fn k_gl(u: &FpMatrix, v: &FpMatrix, m: &FpMatrix) -> Result<FreqVector> {
    same_shape(u, v)?;
    same_shape(u, m)?;
    if m.det_value() == 0 {
        return Err(Error::Singular);
    }
    let domain = Domain::new(GroupKind::GeneralLinear, u.n(), u.modulus())?;
    // V . (M Y) = (M^T V) . Y
    let v_eff = m.transpose().mul_unchecked(v);
    Ok(pair_freq(&domain, u, &v_eff))
}

/// Histogram of `U . X + V . X^{-1}` over SL_n.
pub fn k_sl(u: &FpMatrix, v: &FpMatrix) -> Result<FreqVector> {
    same_shape(u, v)?;
    let domain = Domain::new(GroupKind::SpecialLinear, u.n(), u.modulus())?;
    Ok(pair_freq(&domain, u, v))
}

fn check_domain(domain: &Domain, u: &FpMatrix) -> Result<()> {
    if u.n() != domain.n() {
        return Err(Error::DimensionMismatch {
            expected: domain.n(),
            found: u.n(),
        });
    }
    if u.modulus() != domain.p() {
        return Err(Error::ModulusMismatch {
            left: domain.p().get(),
            right: u.modulus().get(),
        });
    }
    Ok(())
}

/// Histogram of `U . X + V . X^{-1}` over an invertible `domain`.
pub(crate) fn pair_freq(domain: &Domain, u: &FpMatrix, v: &FpMatrix) -> FreqVector {
    let p = domain.p().get();
    let v_zero = v.is_zero();
    domain.par_fold(
        || FreqVector::zeros(p),
        |acc, x| {
            let mut z = u.dot_unchecked(x);
            if !v_zero {
                let inv = x.inverse().expect("group member is invertible");
                z = (z + v.dot_unchecked(&inv)) % p;
            }
            acc.bump(z)
        },
        FreqVector::merge,
    )
}

/// The members of a group (and their inverses, when invertible) held in
/// memory, for experiments that evaluate many sums over one group.
#[derive(Debug, Clone)]
pub struct GroupTable {
    domain: Domain,
    members: Vec<FpMatrix>,
    inverses: Vec<FpMatrix>,
}

impl GroupTable {
    pub fn build(domain: Domain) -> Self {
        let members = domain.par_map_reduce(
            Vec::new,
            |it| it.collect::<Vec<_>>(),
            |mut a, b| {
                a.extend(b);
                a
            },
        );
        let inverses = match domain.kind() {
            GroupKind::GeneralLinear | GroupKind::SpecialLinear => members
                .par_iter()
                .map(|x| x.inverse().expect("group member is invertible"))
                .collect(),
            _ => Vec::new(),
        };
        GroupTable {
            domain,
            members,
            inverses,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn members(&self) -> &[FpMatrix] {
        &self.members
    }

    pub fn s_freq(&self, u: &FpMatrix) -> FreqVector {
        let p = self.domain.p().get();
        self.members
            .par_chunks(4096)
            .fold(
                || FreqVector::zeros(p),
                |mut acc, xs| {
                    for x in xs {
                        acc.bump(u.dot_unchecked(x));
                    }
                    acc
                },
            )
            .reduce(|| FreqVector::zeros(p), FreqVector::merge)
    }

    /// `U . X + V . (M X^{-1})` over the (invertible) members.
    pub fn k_freq(&self, u: &FpMatrix, v: &FpMatrix, m: &FpMatrix) -> Result<FreqVector> {
        if self.inverses.is_empty() && !self.members.is_empty() {
            return Err(Error::MembershipViolation(
                "inverse sums need an invertible group".into(),
            ));
        }
        same_shape(u, v)?;
        same_shape(u, m)?;
        let p = self.domain.p().get();
        let v_eff = m.transpose().mul_unchecked(v);
        Ok(self
            .members
            .par_chunks(4096)
            .zip(self.inverses.par_chunks(4096))
            .fold(
                || FreqVector::zeros(p),
                |mut acc, (xs, ys)| {
                    for (x, y) in xs.iter().zip(ys) {
                        acc.bump((u.dot_unchecked(x) + v_eff.dot_unchecked(y)) % p);
                    }
                    acc
                },
            )
            .reduce(|| FreqVector::zeros(p), FreqVector::merge))
    }
}

/// Histogram of `sum_i lambda_i a_i` over tuples with `lambda_1 ... lambda_n = 1`.
pub fn hyper_freq(a: &[Residue]) -> Result<FreqVector> {
    let first = a
        .first()
        .ok_or_else(|| Error::InvalidInput("hyper-Kloosterman sum needs n >= 1".into()))?;
    let p: Prime = first.modulus();
    if let Some(r) = a.iter().find(|r| r.modulus() != p) {
        return Err(Error::ModulusMismatch {
            left: p.get(),
            right: r.modulus().get(),
        });
    }
    let q = p.get();
    let n = a.len();
    let terms = ((q - 1) as u128).saturating_pow((n - 1) as u32);
    if terms > DESK_SCALE_LIMIT as u128 {
        return Err(Error::DeskScaleExceeded {
            size: terms,
            limit: DESK_SCALE_LIMIT,
        });
    }
    let coeffs: Vec<u64> = a.iter().map(|r| r.value()).collect();
    let mut freq = FreqVector::zeros(q);
    let mut lambdas = vec![1u64; n - 1];
    loop {
        let mut prod = 1u64;
        let mut z = 0u64;
        for (l, c) in lambdas.iter().zip(&coeffs) {
            prod = prod * l % q;
            z = (z + l * c) % q;
        }
        let last = p.inv(prod).expect("product of units is a unit");
        z = (z + last * coeffs[n - 1]) % q;
        freq.bump(z);
        // odometer over (F_p^*)^(n-1)
        let mut k = lambdas.len();
        loop {
            if k == 0 {
                return Ok(freq);
            }
            k -= 1;
            lambdas[k] += 1;
            if lambdas[k] < q {
                break;
            }
            lambdas[k] = 1;
        }
    }
}

pub fn hyper_kloosterman(a: &[Residue]) -> Result<ComplexValue> {
    Ok(hyper_freq(a)?.to_complex())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: u64) -> Prime {
        Prime::new(v).unwrap()
    }

    fn e11(n: usize, pr: Prime) -> FpMatrix {
        let mut flat = vec![0i64; n * n];
        flat[0] = 1;
        FpMatrix::from_flat(n, pr, &flat).unwrap()
    }

    /// Direct trigonometric sum with no histogram, for cross-checks.
    fn direct_sum(zs: impl Iterator<Item = u64>, q: u64) -> (f64, f64) {
        zs.fold((0.0, 0.0), |(re, im), z| {
            let t = TAU * z as f64 / q as f64;
            (re + t.cos(), im + t.sin())
        })
    }

    #[test]
    fn freq_to_complex_examples() {
        let uniform = FreqVector::new(7, vec![9; 7]).unwrap();
        assert!(uniform.to_complex().abs() < 1e-9 * 63.0);
        let delta = FreqVector::new(5, vec![1, 0, 0, 0, 0]).unwrap();
        let c = delta.to_complex();
        assert_eq!((c.re, c.im), (1.0, 0.0));
        // 2 + e(1/5) + e(4/5) = 2 + 2 cos(2 pi / 5), value from mpmath at 30 digits.
        let c = FreqVector::new(5, vec![2, 1, 0, 0, 1]).unwrap().to_complex();
        assert!((c.re - 2.618_033_988_749_895).abs() < 1e-12);
        assert!(c.im.abs() < 1e-12);
        assert!(FreqVector::new(5, vec![1, 2]).is_err());
    }

    #[test]
    fn character_choice() {
        // c = -1 is complex conjugation, so the magnitude survives for any histogram.
        let f = FreqVector::new(7, vec![3, 0, 5, 1, 0, 2, 8]).unwrap();
        let base = f.to_complex();
        let conj = f.scaled_by(6).to_complex();
        assert!((conj.re - base.re).abs() < 1e-9 && (conj.im + base.im).abs() < 1e-9);
        for c in 1..7 {
            assert_eq!(f.scaled_by(c).total(), f.total());
        }
        // Over GL_n, X -> cX is a bijection, so every nonprincipal character
        // gives the same S(GL_n, U).
        let pr = p(7);
        let u = FpMatrix::from_rows(pr, &[[1i64, 3], [0, 5]]).unwrap();
        let s = s_freq(GroupKind::GeneralLinear, &u).unwrap();
        for c in 1..7 {
            assert_eq!(s.scaled_by(c), s);
        }
    }

    #[test]
    fn s_freq_examples() {
        for kind in GroupKind::ALL {
            let pr = p(3);
            let z = FpMatrix::zero(2, pr).unwrap();
            let f = s_freq(kind, &z).unwrap();
            let order = Domain::new(kind, 2, pr).unwrap().order();
            assert_eq!(f.counts()[0], order);
            assert!(f.is_concentrated_at_zero());
            assert!((f.to_complex().re - order as f64).abs() < 1e-9);
        }
        let u = FpMatrix::from_rows(p(5), &[[1i64, 2], [0, 3]]).unwrap();
        let f = s_freq(GroupKind::FullMatrixSet, &u).unwrap();
        assert_eq!(f.counts(), &[125; 5]);
        assert!(f.to_complex().abs() < 1e-9 * 625.0);
        let one = FpMatrix::from_flat(1, p(5), &[1]).unwrap();
        let f = s_freq(GroupKind::GeneralLinear, &one).unwrap();
        assert_eq!(f.counts(), &[0, 1, 1, 1, 1]);
        assert!((f.to_complex().re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_gl_examples() {
        let pr = p(3);
        let z = FpMatrix::zero(2, pr).unwrap();
        let i = FpMatrix::identity(2, pr).unwrap();
        let f = k_gl(&z, &z, &i).unwrap();
        assert_eq!(f.total(), 48);
        assert!(f.is_concentrated_at_zero());
        assert_eq!(k_gl(&e11(2, pr), &z, &i).unwrap(), s_freq(GroupKind::GeneralLinear, &e11(2, pr)).unwrap());
        // K(1,1;5) = sum over x in 1..5 of e((x + 1/x)/5): residues 2, 0, 0, 3.
        let q = p(5);
        let one = FpMatrix::from_flat(1, q, &[1]).unwrap();
        let f = k_gl(&one, &one, &one).unwrap();
        assert_eq!(f.counts(), &[2, 0, 1, 1, 0]);
        assert!((f.to_complex().re - 0.381_966_011_250_105_1).abs() < 1e-12);
        let sing = FpMatrix::zero(2, pr).unwrap();
        assert!(matches!(k_gl(&i, &i, &sing), Err(Error::Singular)));
    }

    #[test]
    fn k_gl_matches_definition() {
        let pr = p(5);
        let u = FpMatrix::from_rows(pr, &[[1i64, 4], [2, 0]]).unwrap();
        let v = FpMatrix::from_rows(pr, &[[0i64, 3], [1, 1]]).unwrap();
        let m = FpMatrix::from_rows(pr, &[[2i64, 1], [1, 1]]).unwrap();
        let d = Domain::new(GroupKind::GeneralLinear, 2, pr).unwrap();
        let mut expected = FreqVector::zeros(5);
        for x in d.iter() {
            let mx = m.mul(&x.inverse().unwrap()).unwrap();
            expected.bump((u.dot(&x).unwrap() + v.dot(&mx).unwrap()).value());
        }
        assert_eq!(k_gl(&u, &v, &m).unwrap(), expected);
        let table = GroupTable::build(d);
        assert_eq!(table.k_freq(&u, &v, &m).unwrap(), expected);
    }

    #[test]
    fn k_sl_examples() {
        let pr = p(3);
        let z = FpMatrix::zero(2, pr).unwrap();
        let f = k_sl(&z, &z).unwrap();
        assert_eq!(f.counts()[0], 24);
        let u = e11(2, pr);
        assert_eq!(k_sl(&u, &z).unwrap(), s_freq(GroupKind::SpecialLinear, &u).unwrap());
        // Oracle: for X = (a b; c d) in SL_2, U.X + V.X^{-1} = a + d.
        let mut counts = [0u64; 3];
        for a in 0..3i64 {
            for b in 0..3i64 {
                for c in 0..3i64 {
                    for d in 0..3i64 {
                        if (a * d - b * c).rem_euclid(3) == 1 {
                            counts[((a + d) % 3) as usize] += 1;
                        }
                    }
                }
            }
        }
        let f = k_sl(&u, &u).unwrap();
        assert_eq!(f.counts(), &counts);
        assert_eq!(f.counts(), &[6, 9, 9]);
        assert!((f.to_complex().re - (6.0 - 9.0)).abs() < 1e-9);
    }

    #[test]
    fn hyper_examples() {
        let q = p(7);
        for a in 0..7 {
            let c = hyper_kloosterman(&[Residue::from_prime(a, q)]).unwrap();
            let t = TAU * a as f64 / 7.0;
            assert!((c.re - t.cos()).abs() < 1e-12 && (c.im - t.sin()).abs() < 1e-12);
        }
        for n in 1..=3 {
            let zeros = vec![Residue::from_prime(0, q); n];
            let f = hyper_freq(&zeros).unwrap();
            assert_eq!(f.counts()[0], 6u64.pow(n as u32 - 1));
        }
        let q = p(5);
        let c = hyper_kloosterman(&[Residue::from_prime(1, q), Residue::from_prime(1, q)]).unwrap();
        assert!((c.re - 0.381_966_011_250_105_1).abs() < 1e-12);
        assert!(hyper_kloosterman(&[]).is_err());
    }

    #[test]
    fn hyper_matches_direct_enumeration() {
        let q = 11u64;
        let pr = p(q);
        let a = [3i64, 5, 7];
        let mut zs = Vec::new();
        for l1 in 1..q {
            for l2 in 1..q {
                for l3 in 1..q {
                    if l1 * l2 * l3 % q == 1 {
                        zs.push((l1 * 3 + l2 * 5 + l3 * 7) % q);
                    }
                }
            }
        }
        let (re, im) = direct_sum(zs.into_iter(), q);
        let c = hyper_kloosterman(&a.map(|v| Residue::from_prime(v, pr))).unwrap();
        assert!((c.re - re).abs() < 1e-9 && (c.im - im).abs() < 1e-9);
    }

    #[test]
    fn cancellation_identity() {
        let pr = p(3);
        let d = Domain::new(GroupKind::FullMatrixSet, 2, pr).unwrap();
        for u in d.iter().filter(|u| !u.is_zero()) {
            let z = s_freq(GroupKind::Singular, &u).unwrap();
            let g = s_freq(GroupKind::GeneralLinear, &u).unwrap();
            for (a, b) in z.counts().iter().zip(g.counts()) {
                assert_eq!(a + b, 27);
            }
            let (cz, cg) = (z.to_complex(), g.to_complex());
            assert!((cz.re + cg.re).abs() < 1e-9 * 81.0 && (cz.im + cg.im).abs() < 1e-9 * 81.0);
        }
    }

    #[test]
    fn weil_bound_small_primes() {
        for q in [3u64, 5, 7, 11, 13] {
            let pr = p(q);
            let one = FpMatrix::from_flat(1, pr, &[1]).unwrap();
            for b in 1..q as i64 {
                let v = FpMatrix::from_flat(1, pr, &[b]).unwrap();
                let k = k_gl(&one, &v, &one).unwrap().to_complex();
                assert!(k.abs() <= 2.0 * (q as f64).sqrt() + 1e-9);
                assert!(k.im.abs() < 1e-9);
            }
        }
    }
}
