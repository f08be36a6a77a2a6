//! Arithmetic over the prime field F_p and over small square matrices.
//!
//! Every value is kept as a canonical residue in `[0, p)`. Products are formed
//! in 64 bits (or 128 bits for the scalar helpers) before a single reduction,
//! so no supported modulus can overflow.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 4;

const PRIME_LIMIT: u64 = 1 << 31;

/// Deterministic Miller-Rabin, exact for every 64-bit input.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &q in &SMALL {
        if n.is_multiple_of(q) {
            return n == q;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &SMALL {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `m` (any modulus, not only primes), if `gcd(a, m) = 1`.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (mut r0, mut r1) = (m as i128, (a % m) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if r0 != 1 {
        return None;
    }
    Some(t0.rem_euclid(m as i128) as u64)
}

/// A prime modulus `p < 2^31`, verified at construction.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Prime(u32);

impl Prime {
    pub fn new(p: u64) -> Result<Self> {
        if p >= PRIME_LIMIT {
            return Err(Error::ModulusTooLarge(p));
        }
        if !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        Ok(Prime(p as u32))
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0 as u64
    }

    #[inline]
    pub fn reduce(self, v: i64) -> u32 {
        v.rem_euclid(self.0 as i64) as u32
    }

    /// Multiplicative inverse of a nonzero residue.
    #[inline]
    pub fn inv(self, v: u64) -> Option<u64> {
        if v.is_multiple_of(self.get()) {
            None
        } else {
            inv_mod(v, self.get())
        }
    }
}

impl TryFrom<u64> for Prime {
    type Error = Error;
    fn try_from(p: u64) -> Result<Self> {
        Prime::new(p)
    }
}

impl From<Prime> for u64 {
    fn from(p: Prime) -> u64 {
        p.get()
    }
}

impl fmt::Debug for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An element of F_p.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Residue {
    value: u32,
    modulus: Prime,
}

impl Residue {
    /// Reduces `value` into `[0, p)`; fails when `modulus` is not a supported prime.
    pub fn new(value: i64, modulus: u64) -> Result<Self> {
        let p = Prime::new(modulus)?;
        Ok(Self::from_prime(value, p))
    }

    pub fn from_prime(value: i64, modulus: Prime) -> Self {
        Residue {
            value: modulus.reduce(value),
            modulus,
        }
    }

    pub(crate) fn from_canonical(value: u64, modulus: Prime) -> Self {
        debug_assert!(value < modulus.get());
        Residue {
            value: value as u32,
            modulus,
        }
    }

    pub fn value(self) -> u64 {
        self.value as u64
    }

    pub fn modulus(self) -> Prime {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn inv(self) -> Option<Residue> {
        self.modulus
            .inv(self.value())
            .map(|v| Residue::from_canonical(v, self.modulus))
    }

    pub fn pow(self, exp: u64) -> Residue {
        Residue::from_canonical(pow_mod(self.value(), exp, self.modulus.get()), self.modulus)
    }

    fn check(self, rhs: Residue) {
        assert_eq!(self.modulus, rhs.modulus, "residues with different moduli");
    }
}

impl Add for Residue {
    type Output = Residue;
    fn add(self, rhs: Residue) -> Residue {
        self.check(rhs);
        let p = self.modulus.get();
        Residue::from_canonical((self.value() + rhs.value()) % p, self.modulus)
    }
}

impl Sub for Residue {
    type Output = Residue;
    fn sub(self, rhs: Residue) -> Residue {
        self.check(rhs);
        let p = self.modulus.get();
        Residue::from_canonical((self.value() + p - rhs.value()) % p, self.modulus)
    }
}

impl Mul for Residue {
    type Output = Residue;
    fn mul(self, rhs: Residue) -> Residue {
        self.check(rhs);
        let p = self.modulus.get();
        Residue::from_canonical(self.value() * rhs.value() % p, self.modulus)
    }
}

impl Neg for Residue {
    type Output = Residue;
    fn neg(self) -> Residue {
        let p = self.modulus.get();
        Residue::from_canonical((p - self.value()) % p, self.modulus)
    }
}

impl fmt::Debug for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus)
    }
}

/// An `n x n` matrix over F_p, `1 <= n <= 4`, stored row-major.
///
/// Entries past `n * n` are always zero, so derived equality and hashing are
/// sound.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpMatrix {
    n: u8,
    p: Prime,
    entries: [u32; MAX_DIM * MAX_DIM],
}

impl FpMatrix {
    pub fn zero(n: usize, p: Prime) -> Result<Self> {
        check_dim(n)?;
        Ok(FpMatrix {
            n: n as u8,
            p,
            entries: [0; MAX_DIM * MAX_DIM],
        })
    }

    pub fn identity(n: usize, p: Prime) -> Result<Self> {
        let mut m = Self::zero(n, p)?;
        for i in 0..n {
            m.entries[i * n + i] = 1 % p.get() as u32;
        }
        Ok(m)
    }

    /// Builds a matrix from integer rows, reducing every entry mod p.
    pub fn from_rows<R: AsRef<[i64]>>(p: Prime, rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zero(n, p)?;
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m.entries[i * n + j] = p.reduce(v);
            }
        }
        Ok(m)
    }

    /// Builds a matrix from `n * n` row-major integers, reducing mod p.
    pub fn from_flat(n: usize, p: Prime, flat: &[i64]) -> Result<Self> {
        let mut m = Self::zero(n, p)?;
        if flat.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: flat.len(),
            });
        }
        for (slot, &v) in m.entries.iter_mut().zip(flat) {
            *slot = p.reduce(v);
        }
        Ok(m)
    }

    /// Caller guarantees `n` is in range and every entry is canonical.
    #[inline]
    pub(crate) fn from_canonical(n: usize, p: Prime, flat: &[u32]) -> Self {
        let mut entries = [0; MAX_DIM * MAX_DIM];
        entries[..n * n].copy_from_slice(&flat[..n * n]);
        FpMatrix {
            n: n as u8,
            p,
            entries,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn modulus(&self) -> Prime {
        self.p
    }

    /// Row-major entries, length `n * n`.
    #[inline]
    pub fn entries(&self) -> &[u32] {
        &self.entries[..self.n() * self.n()]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries[i * self.n() + j]
    }

    pub fn entry(&self, i: usize, j: usize) -> Residue {
        Residue::from_canonical(self.get(i, j) as u64, self.p)
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j) as u64).collect())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0)
    }

    pub fn transpose(&self) -> FpMatrix {
        let n = self.n();
        let mut t = *self;
        for i in 0..n {
            for j in 0..n {
                t.entries[j * n + i] = self.entries[i * n + j];
            }
        }
        t
    }

    pub fn add(&self, other: &FpMatrix) -> Result<FpMatrix> {
        self.compatible(other)?;
        let p = self.p.get();
        let mut out = *self;
        for (o, &b) in out.entries.iter_mut().zip(other.entries.iter()) {
            *o = ((*o as u64 + b as u64) % p) as u32;
        }
        Ok(out)
    }

    pub fn scale(&self, c: u64) -> FpMatrix {
        let p = self.p.get();
        let c = c % p;
        let mut out = *self;
        for o in out.entries.iter_mut() {
            *o = (*o as u64 * c % p) as u32;
        }
        out
    }

    pub fn mul(&self, other: &FpMatrix) -> Result<FpMatrix> {
        self.compatible(other)?;
        Ok(self.mul_unchecked(other))
    }

    #[inline]
    pub(crate) fn mul_unchecked(&self, other: &FpMatrix) -> FpMatrix {
        let n = self.n();
        let p = self.p.get();
        let mut out = FpMatrix {
            n: self.n,
            p: self.p,
            entries: [0; MAX_DIM * MAX_DIM],
        };
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0u64;
                for k in 0..n {
                    acc += self.entries[i * n + k] as u64 * other.entries[k * n + j] as u64 % p;
                }
                out.entries[i * n + j] = (acc % p) as u32;
            }
        }
        out
    }

    /// Entrywise bilinear form `sum_ij u_ij x_ij` as a raw residue.
    #[inline]
    pub(crate) fn dot_unchecked(&self, other: &FpMatrix) -> u64 {
        let p = self.p.get();
        let mut acc = 0u64;
        for (&a, &b) in self.entries().iter().zip(other.entries()) {
            acc += a as u64 * b as u64 % p;
        }
        acc % p
    }

    pub fn dot(&self, other: &FpMatrix) -> Result<Residue> {
        self.compatible(other)?;
        Ok(Residue::from_canonical(self.dot_unchecked(other), self.p))
    }

    /// Determinant as a raw residue in `[0, p)`.
    #[inline]
    pub fn det_value(&self) -> u64 {
        let p = self.p.get();
        let e = |k: usize| self.entries[k] as u64;
        match self.n {
            1 => e(0),
            2 => (e(0) * e(3) % p + p - e(1) * e(2) % p) % p,
            3 => {
                let m = |a: u64, b: u64, c: u64| a * b % p * c % p;
                let pos = m(e(0), e(4), e(8)) + m(e(1), e(5), e(6)) + m(e(2), e(3), e(7));
                let neg = m(e(2), e(4), e(6)) + m(e(0), e(5), e(7)) + m(e(1), e(3), e(8));
                (pos % p + p - neg % p) % p
            }
            _ => det_by_elimination(self),
        }
    }

    pub fn det(&self) -> Residue {
        Residue::from_canonical(self.det_value(), self.p)
    }

    pub fn inverse(&self) -> Result<FpMatrix> {
        let n = self.n();
        let p = self.p.get();
        match n {
            1 => {
                let inv = self.p.inv(self.entries[0] as u64).ok_or(Error::Singular)?;
                let mut out = *self;
                out.entries[0] = inv as u32;
                Ok(out)
            }
            2 => {
                let d = self.det_value();
                let dinv = self.p.inv(d).ok_or(Error::Singular)?;
                let e = |k: usize| self.entries[k] as u64;
                let mut out = *self;
                out.entries[0] = (e(3) * dinv % p) as u32;
                out.entries[1] = ((p - e(1)) % p * dinv % p) as u32;
                out.entries[2] = ((p - e(2)) % p * dinv % p) as u32;
                out.entries[3] = (e(0) * dinv % p) as u32;
                Ok(out)
            }
            _ => inverse_by_elimination(self),
        }
    }

    fn compatible(&self, other: &FpMatrix) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: other.n(),
            });
        }
        if self.p != other.p {
            return Err(Error::ModulusMismatch {
                left: self.p.get(),
                right: other.p.get(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for FpMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FpMatrix(p={}, {:?})", self.p, self.rows())
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DIM {
        Err(Error::UnsupportedDimension(n))
    } else {
        Ok(())
    }
}

fn as_grid(a: &FpMatrix) -> Vec<Vec<u64>> {
    a.rows()
}

fn det_by_elimination(a: &FpMatrix) -> u64 {
    let n = a.n();
    let p = a.p.get();
    let mut m = as_grid(a);
    let mut det = 1u64;
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| m[r][col] != 0) else {
            return 0;
        };
        if pivot != col {
            m.swap(pivot, col);
            det = (p - det) % p;
        }
        det = det * m[col][col] % p;
        let inv = inv_mod(m[col][col], p).expect("nonzero pivot");
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest.iter_mut() {
            let factor = row[col] * inv % p;
            if factor == 0 {
                continue;
            }
            for (x, &y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x = (*x + p - factor * y % p) % p;
            }
        }
    }
    det
}

fn inverse_by_elimination(a: &FpMatrix) -> Result<FpMatrix> {
    let n = a.n();
    let p = a.p.get();
    let mut m = as_grid(a);
    let mut inv: Vec<Vec<u64>> = (0..n)
        .map(|i| (0..n).map(|j| u64::from(i == j)).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| m[r][col] != 0).ok_or(Error::Singular)?;
        m.swap(pivot, col);
        inv.swap(pivot, col);
        let s = inv_mod(m[col][col], p).expect("nonzero pivot");
        for c in 0..n {
            m[col][c] = m[col][c] * s % p;
            inv[col][c] = inv[col][c] * s % p;
        }
        for r in 0..n {
            if r == col || m[r][col] == 0 {
                continue;
            }
            let f = m[r][col];
            for c in 0..n {
                m[r][c] = (m[r][c] + p - f * m[col][c] % p) % p;
                inv[r][c] = (inv[r][c] + p - f * inv[col][c] % p) % p;
            }
        }
    }
    let flat: Vec<u32> = inv.into_iter().flatten().map(|v| v as u32).collect();
    Ok(FpMatrix::from_canonical(n, a.p, &flat))
}

pub fn mat_mul(a: &FpMatrix, b: &FpMatrix) -> Result<FpMatrix> {
    a.mul(b)
}

pub fn det(a: &FpMatrix) -> Residue {
    a.det()
}

pub fn inverse(a: &FpMatrix) -> Result<FpMatrix> {
    a.inverse()
}

pub fn entrywise_dot(u: &FpMatrix, x: &FpMatrix) -> Result<Residue> {
    u.dot(x)
}

/// On-disk matrix form: `{"n": N, "p": P, "entries": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixFile {
    pub n: usize,
    pub p: u64,
    pub entries: Vec<Vec<i64>>,
}

impl TryFrom<MatrixFile> for FpMatrix {
    type Error = Error;
    fn try_from(f: MatrixFile) -> Result<Self> {
        let p = Prime::new(f.p)?;
        if f.entries.len() != f.n {
            return Err(Error::DimensionMismatch {
                expected: f.n,
                found: f.entries.len(),
            });
        }
        FpMatrix::from_rows(p, &f.entries)
    }
}

impl From<&FpMatrix> for MatrixFile {
    fn from(m: &FpMatrix) -> Self {
        MatrixFile {
            n: m.n(),
            p: m.modulus().get(),
            entries: m
                .rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v as i64).collect())
                .collect(),
        }
    }
}

impl Serialize for FpMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FpMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = MatrixFile::deserialize(d)?;
        FpMatrix::try_from(f).map_err(serde::de::Error::custom)
    }
}
