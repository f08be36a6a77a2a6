//! Chunked enumeration of M_n(F_p), GL_n(F_p), SL_n(F_p) and the singular set.
//!
//! Elements are visited in the lexicographic order of their `n^2` entries,
//! i.e. the matrix with row-major entries `(e_0, ..., e_{n^2-1})` has index
//! `sum_k e_k p^(n^2 - 1 - k)`. A chunk is a half-open range of such indices;
//! membership is a determinant filter, so disjoint chunks partition every kind.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp_linalg::{FpMatrix, Prime, MAX_DIM};

/// Default refusal threshold on `p^(n^2)`.
pub const DESK_SCALE_LIMIT: u64 = 1 << 40;

const TARGET_CHUNK: u64 = 1 << 14;
const MAX_CHUNKS: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    #[serde(rename = "m")]
    FullMatrixSet,
    #[serde(rename = "gl")]
    GeneralLinear,
    #[serde(rename = "sl")]
    SpecialLinear,
    #[serde(rename = "z")]
    Singular,
}

impl GroupKind {
    pub const ALL: [GroupKind; 4] = [
        GroupKind::FullMatrixSet,
        GroupKind::GeneralLinear,
        GroupKind::SpecialLinear,
        GroupKind::Singular,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            GroupKind::FullMatrixSet => "m",
            GroupKind::GeneralLinear => "gl",
            GroupKind::SpecialLinear => "sl",
            GroupKind::Singular => "z",
        }
    }

    /// Membership predicate in terms of the determinant residue.
    #[inline]
    pub fn admits_det(self, det: u64) -> bool {
        match self {
            GroupKind::FullMatrixSet => true,
            GroupKind::GeneralLinear => det != 0,
            GroupKind::SpecialLinear => det == 1,
            GroupKind::Singular => det == 0,
        }
    }

    pub fn contains(self, a: &FpMatrix) -> bool {
        self.admits_det(a.det_value())
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GroupKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(GroupKind::FullMatrixSet),
            "gl" => Ok(GroupKind::GeneralLinear),
            "sl" => Ok(GroupKind::SpecialLinear),
            "z" => Ok(GroupKind::Singular),
            other => Err(Error::InvalidInput(format!(
                "unknown group '{other}', expected one of m|gl|sl|z"
            ))),
        }
    }
}

/// `p^(n^2)`, the size of the index space.
pub fn space_size(n: usize, p: Prime) -> Result<u64> {
    let mut acc: u64 = 1;
    for _ in 0..n * n {
        acc = acc.checked_mul(p.get()).ok_or(Error::Overflow("p^(n^2)"))?;
    }
    Ok(acc)
}

/// Exact cardinality from the classical product formulas.
pub fn order(kind: GroupKind, n: usize, p: Prime) -> Result<u64> {
    if n == 0 {
        return Err(Error::UnsupportedDimension(0));
    }
    let q = p.get() as u128;
    let pn = q.checked_pow(n as u32).ok_or(Error::Overflow("group order"))?;
    let full = q
        .checked_pow((n * n) as u32)
        .ok_or(Error::Overflow("group order"))?;
    let mut gl: u128 = 1;
    let mut pk: u128 = 1;
    for _ in 0..n {
        gl = gl.checked_mul(pn - pk).ok_or(Error::Overflow("group order"))?;
        pk *= q;
    }
    let value = match kind {
        GroupKind::FullMatrixSet => full,
        GroupKind::GeneralLinear => gl,
        GroupKind::SpecialLinear => gl / (q - 1),
        GroupKind::Singular => full - gl,
    };
    u64::try_from(value).map_err(|_| Error::Overflow("group order"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumChunk {
    pub start_index: u64,
    pub end_index: u64,
}

impl EnumChunk {
    pub fn new(start_index: u64, end_index: u64) -> Self {
        EnumChunk {
            start_index,
            end_index,
        }
    }

    pub fn len(&self) -> u64 {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated enumeration target: group kind, dimension and prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain {
    kind: GroupKind,
    n: usize,
    p: Prime,
    space: u64,
}

impl Domain {
    /// Refuses `p^(n^2) > 2^40`.
    pub fn new(kind: GroupKind, n: usize, p: Prime) -> Result<Self> {
        Self::with_override(kind, n, p, false)
    }

    pub fn with_override(kind: GroupKind, n: usize, p: Prime, allow_large: bool) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::UnsupportedDimension(n));
        }
        let space = match space_size(n, p) {
            Ok(s) => s,
            Err(_) => {
                return Err(Error::DeskScaleExceeded {
                    size: (p.get() as u128).saturating_pow((n * n) as u32),
                    limit: if allow_large { u64::MAX } else { DESK_SCALE_LIMIT },
                })
            }
        };
        if space > DESK_SCALE_LIMIT && !allow_large {
            return Err(Error::DeskScaleExceeded {
                size: space as u128,
                limit: DESK_SCALE_LIMIT,
            });
        }
        Ok(Domain { kind, n, p, space })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> Prime {
        self.p
    }

    pub fn space_size(&self) -> u64 {
        self.space
    }

    pub fn order(&self) -> u64 {
        order(self.kind, self.n, self.p).expect("order fits whenever the index space does")
    }

    pub fn with_kind(&self, kind: GroupKind) -> Domain {
        Domain { kind, ..*self }
    }

    pub fn full_chunk(&self) -> EnumChunk {
        EnumChunk::new(0, self.space)
    }

    /// Splits the index space into `count` near-equal contiguous chunks.
    pub fn split(&self, count: u64) -> Vec<EnumChunk> {
        let count = count.clamp(1, self.space.max(1));
        let base = self.space / count;
        let extra = self.space % count;
        let mut start = 0;
        (0..count)
            .map(|i| {
                let len = base + u64::from(i < extra);
                let c = EnumChunk::new(start, start + len);
                start += len;
                c
            })
            .collect()
    }

    /// Work partition used by the parallel drivers; independent of thread count.
    pub fn work_chunks(&self) -> Vec<EnumChunk> {
        self.split((self.space / TARGET_CHUNK).clamp(1, MAX_CHUNKS))
    }

    pub fn iter(&self) -> GroupIter {
        GroupIter::new(self, self.full_chunk())
    }

    pub fn members(&self) -> Vec<FpMatrix> {
        self.iter().collect()
    }

    /// Runs `map` over every work chunk in parallel and merges the results.
    ///
    /// Callers must supply an associative, commutative `merge` (integer sums)
    /// for results to be independent of the worker count.
    pub fn par_map_reduce<T, ID, M, R>(&self, identity: ID, map: M, merge: R) -> T
    where
        T: Send,
        ID: Fn() -> T + Sync + Send,
        M: Fn(GroupIter) -> T + Sync + Send,
        R: Fn(T, T) -> T + Sync + Send,
    {
        self.work_chunks()
            .into_par_iter()
            .map(|c| map(GroupIter::new(self, c)))
            .reduce(&identity, merge)
    }

    /// Folds every member into per-worker accumulators, then merges them.
    pub fn par_fold<T, ID, F, R>(&self, identity: ID, fold: F, merge: R) -> T
    where
        T: Send,
        ID: Fn() -> T + Sync + Send,
        F: Fn(&mut T, &FpMatrix) + Sync + Send,
        R: Fn(T, T) -> T + Sync + Send,
    {
        self.work_chunks()
            .into_par_iter()
            .fold(&identity, |mut acc, c| {
                for m in GroupIter::new(self, c) {
                    fold(&mut acc, &m);
                }
                acc
            })
            .reduce(&identity, merge)
    }

    /// Number of members, counted by streaming.
    pub fn count_members(&self) -> u64 {
        self.par_map_reduce(|| 0u64, |it| it.count() as u64, |a, b| a + b)
    }
}

/// Yields each member of `domain` whose index lies in `chunk`.
pub fn enumerate(domain: &Domain, chunk: EnumChunk) -> Result<GroupIter> {
    if chunk.start_index > chunk.end_index || chunk.end_index > domain.space {
        return Err(Error::InvalidInput(format!(
            "chunk [{}, {}) outside [0, {}]",
            chunk.start_index, chunk.end_index, domain.space
        )));
    }
    Ok(GroupIter::new(domain, chunk))
}

/// Odometer over the entries of M_n(F_p), filtered by group membership.
#[derive(Debug, Clone)]
pub struct GroupIter {
    kind: GroupKind,
    n: usize,
    p: Prime,
    digits: [u32; MAX_DIM * MAX_DIM],
    index: u64,
    end: u64,
}

impl GroupIter {
    fn new(domain: &Domain, chunk: EnumChunk) -> Self {
        let n = domain.n;
        let p = domain.p.get();
        let mut digits = [0u32; MAX_DIM * MAX_DIM];
        let mut rest = chunk.start_index;
        for k in (0..n * n).rev() {
            digits[k] = (rest % p) as u32;
            rest /= p;
        }
        GroupIter {
            kind: domain.kind,
            n,
            p: domain.p,
            digits,
            index: chunk.start_index,
            end: chunk.end_index,
        }
    }

    #[inline]
    fn advance(&mut self) {
        let p = self.p.get() as u32;
        for k in (0..self.n * self.n).rev() {
            self.digits[k] += 1;
            if self.digits[k] < p {
                return;
            }
            self.digits[k] = 0;
        }
    }
}

impl Iterator for GroupIter {
    type Item = FpMatrix;

    #[inline]
    fn next(&mut self) -> Option<FpMatrix> {
        while self.index < self.end {
            let m = FpMatrix::from_canonical(self.n, self.p, &self.digits);
            self.index += 1;
            self.advance();
            if self.kind.admits_det(m.det_value()) {
                return Some(m);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn p(v: u64) -> Prime {
        Prime::new(v).unwrap()
    }

    /// Counts by nested loops over all entries with an independent determinant.
    fn brute_counts(n: usize, pv: u64) -> [u64; 4] {
        let total = pv.pow((n * n) as u32);
        let mut counts = [0u64; 4];
        for idx in 0..total {
            let mut rest = idx;
            let mut e = vec![0i64; n * n];
            for k in (0..n * n).rev() {
                e[k] = (rest % pv) as i64;
                rest /= pv;
            }
            let d = match n {
                1 => e[0],
                2 => e[0] * e[3] - e[1] * e[2],
                3 => {
                    e[0] * (e[4] * e[8] - e[5] * e[7]) - e[1] * (e[3] * e[8] - e[5] * e[6])
                        + e[2] * (e[3] * e[7] - e[4] * e[6])
                }
                _ => unreachable!(),
            }
            .rem_euclid(pv as i64);
            counts[0] += 1;
            if d != 0 {
                counts[1] += 1;
            } else {
                counts[3] += 1;
            }
            if d == 1 {
                counts[2] += 1;
            }
        }
        counts
    }

    #[test]
    fn order_examples() {
        for &pv in &[2u64, 3, 5, 7, 31] {
            assert_eq!(order(GroupKind::GeneralLinear, 1, p(pv)).unwrap(), pv - 1);
        }
        assert_eq!(order(GroupKind::GeneralLinear, 2, p(3)).unwrap(), 48);
        assert_eq!(order(GroupKind::SpecialLinear, 2, p(3)).unwrap(), 24);
        assert_eq!(order(GroupKind::Singular, 2, p(3)).unwrap(), 33);
        assert_eq!(order(GroupKind::SpecialLinear, 3, p(3)).unwrap(), 5616);
        assert!(matches!(
            order(GroupKind::FullMatrixSet, 4, p(65_537)),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn order_matches_brute_force() {
        for &(n, pv) in &[(1usize, 7u64), (2, 3), (2, 5), (3, 3)] {
            let counts = brute_counts(n, pv);
            for (kind, expected) in GroupKind::ALL.iter().zip(counts) {
                assert_eq!(order(*kind, n, p(pv)).unwrap(), expected, "{kind} n={n} p={pv}");
            }
        }
    }

    #[test]
    fn enumerate_gl1() {
        let d = Domain::new(GroupKind::GeneralLinear, 1, p(7)).unwrap();
        let got: Vec<u32> = d.iter().map(|m| m.get(0, 0)).collect();
        assert_eq!(got, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn enumerate_sl2_count() {
        let d = Domain::new(GroupKind::SpecialLinear, 2, p(5)).unwrap();
        assert_eq!(d.iter().count(), 120);
        assert_eq!(d.count_members(), 120);
    }

    #[test]
    fn streamed_counts_match_order_on_desk_grid() {
        let mut grid: Vec<(usize, u64)> = Vec::new();
        for pv in (2..=31).filter(|&v| crate::fp_linalg::is_prime(v)) {
            grid.push((1, pv));
            grid.push((2, pv));
        }
        grid.extend([(3, 2), (3, 3), (3, 5), (3, 7)]);
        for (n, pv) in grid {
            for kind in GroupKind::ALL {
                let d = Domain::new(kind, n, p(pv)).unwrap();
                assert_eq!(d.count_members(), d.order(), "{kind} n={n} p={pv}");
            }
        }
    }

    #[test]
    fn members_satisfy_predicate() {
        for kind in GroupKind::ALL {
            let d = Domain::new(kind, 2, p(5)).unwrap();
            for m in d.iter() {
                let det = m.det_value();
                match kind {
                    GroupKind::FullMatrixSet => {}
                    GroupKind::GeneralLinear => assert_ne!(det, 0),
                    GroupKind::SpecialLinear => assert_eq!(det, 1),
                    GroupKind::Singular => assert_eq!(det, 0),
                }
            }
        }
    }

    #[test]
    fn chunks_partition() {
        for kind in GroupKind::ALL {
            let d = Domain::new(kind, 2, p(7)).unwrap();
            let full: Vec<FpMatrix> = d.iter().collect();
            let half = d.space_size() / 2;
            let a: Vec<FpMatrix> = enumerate(&d, EnumChunk::new(0, half)).unwrap().collect();
            let b: Vec<FpMatrix> = enumerate(&d, EnumChunk::new(half, d.space_size()))
                .unwrap()
                .collect();
            let sa: HashSet<_> = a.iter().collect();
            assert!(b.iter().all(|m| !sa.contains(m)));
            let mut joined = a.clone();
            joined.extend(b);
            assert_eq!(joined, full);
            for pieces in [1, 3, 17, 2401] {
                let total: usize = d
                    .split(pieces)
                    .into_iter()
                    .map(|c| enumerate(&d, c).unwrap().count())
                    .sum();
                assert_eq!(total as u64, d.order());
            }
        }
    }

    #[test]
    fn lexicographic_order() {
        let d = Domain::new(GroupKind::FullMatrixSet, 2, p(3)).unwrap();
        let all: Vec<Vec<u32>> = d.iter().map(|m| m.entries().to_vec()).collect();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        assert_eq!(all[5], vec![0, 0, 1, 2]);
    }

    #[test]
    fn bad_chunk_and_desk_scale() {
        let d = Domain::new(GroupKind::FullMatrixSet, 2, p(3)).unwrap();
        assert!(enumerate(&d, EnumChunk::new(0, 82)).is_err());
        assert!(enumerate(&d, EnumChunk::new(5, 4)).is_err());
        assert!(matches!(
            Domain::new(GroupKind::GeneralLinear, 3, p(31)),
            Err(Error::DeskScaleExceeded { .. })
        ));
        assert!(Domain::with_override(GroupKind::GeneralLinear, 3, p(31), true).is_ok());
        assert!(matches!(
            Domain::with_override(GroupKind::GeneralLinear, 4, p(65_537), true),
            Err(Error::DeskScaleExceeded { .. })
        ));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let d = Domain::new(GroupKind::SpecialLinear, 3, p(3)).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| d.par_fold(|| 0u64, |acc, m| *acc += m.entries()[4] as u64, |a, b| a + b))
        };
        assert_eq!(run(1), run(4));
    }
}
