//! Erdős-Turán-Koksma upper bounds for embedded group images, computed from
//! exact exponential sums, and exact per-box empirical errors.
//!
//! For a point `x` with numerators `a_i` over `p`, `e(h . x) = e_p(sum h_i a_i)`,
//! so every exponential sum over an image is a character sum over the group.
//! Single frequencies go through [`exp_sum_over_image`], which reduces `h` to
//! the matrices `U` (and `V`) of the corresponding Kloosterman-type sum. The
//! full ETK sweep over `0 < |h|_inf <= H` instead uses one batched enumeration
//! pass, see [`image_magnitudes`].

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charsum::{pair_freq, s_freq_in, ComplexValue, FreqVector, PhaseTable};
use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::fp_linalg::FpMatrix;
use crate::group_enum::{enumerate, Domain};
use crate::region::{count_boxes, AxisBox, Region};

/// An integer frequency vector `h` in `Z^k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HVector(pub Vec<i64>);

impl HVector {
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn norm_inf(&self) -> u64 {
        self.0.iter().map(|h| h.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&h| h == 0)
    }

    pub fn negated(&self) -> HVector {
        HVector(self.0.iter().map(|h| -h).collect())
    }

    pub fn scaled(&self, c: i64) -> HVector {
        HVector(self.0.iter().map(|h| h * c).collect())
    }

    pub fn r(&self) -> Result<u64> {
        r_of_h(self)
    }
}

/// `r(h) = prod_i max(1, |h_i|)`.
pub fn r_of_h(h: &HVector) -> Result<u64> {
    h.0.iter().try_fold(1u64, |acc, &v| {
        acc.checked_mul(v.unsigned_abs().max(1))
            .ok_or(Error::Overflow("r(h)"))
    })
}

/// `H = floor(p^(1/(2(2n^2+1))))`, computed with integer arithmetic.
pub fn default_h(n: usize, p: u64) -> u64 {
    let e = (2 * (2 * n * n + 1)) as u32;
    let mut h = 1u64;
    while (h as u128 + 1)
        .checked_pow(e)
        .is_some_and(|v| v <= p as u128)
    {
        h += 1;
    }
    h
}

fn check_aux(domain: &Domain, aux: Option<&FpMatrix>) -> Result<()> {
    if let Some(c) = aux {
        if c.modulus() != domain.p() {
            return Err(Error::ModulusMismatch {
                left: domain.p().get(),
                right: c.modulus().get(),
            });
        }
    }
    Ok(())
}

/// `(1/N) sum over the image of e(h . x)`.
///
/// `g` over GL_n reduces to `K(GL_n, U, V, I)`, `gt` to `K(GL_n, U, V, C)`,
/// `g` over SL_n to `K(SL_n, U, V)`, and `h`/`s` to `S(kind, U)`, where `U`
/// and `V` are the two coordinate blocks of `h` reduced mod p.
pub fn exp_sum_over_image(
    h: &HVector,
    domain: &Domain,
    embedding: Embedding,
    aux: Option<&FpMatrix>,
) -> Result<ComplexValue> {
    let embedder = Embedder::new(embedding, domain.kind(), domain.n(), aux)?;
    check_aux(domain, aux)?;
    if h.k() != embedder.dim() {
        return Err(Error::DimensionMismatch {
            expected: embedder.dim(),
            found: h.k(),
        });
    }
    let n = domain.n();
    let p = domain.p();
    let block = |offset: usize| -> Result<FpMatrix> {
        let flat: Vec<i64> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                match embedding {
                    Embedding::G | Embedding::Gt => h.0[2 * n * i + offset + j],
                    Embedding::H | Embedding::S => h.0[n * i + j],
                }
            })
            .collect();
        FpMatrix::from_flat(n, p, &flat)
    };
    let freq = match embedding {
        Embedding::H | Embedding::S => s_freq_in(domain, &block(0)?)?,
        Embedding::G | Embedding::Gt => {
            let u = block(0)?;
            let v = block(n)?;
            let v_eff = match aux {
                // V . (C X^{-1}) = (C^T V) . X^{-1}
                Some(c) => c.transpose().mul(&v)?,
                None => v,
            };
            pair_freq(domain, &u, &v_eff)
        }
    };
    Ok(freq.to_complex().scale(1.0 / domain.order() as f64))
}

/// Histogram of `h . numerators` over the image, straight from the embedding.
pub fn image_freq(domain: &Domain, embedder: &Embedder, h: &HVector) -> Result<FreqVector> {
    let k = embedder.dim();
    if h.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: h.k(),
        });
    }
    let p = domain.p();
    let coeffs: Vec<u64> = h.0.iter().map(|&v| p.reduce(v) as u64).collect();
    let q = p.get();
    Ok(domain.par_fold(
        || FreqVector::zeros(q),
        |acc, a| {
            let mut buf = [0u32; 32];
            embedder.write(a, &mut buf[..k]);
            let z = buf[..k]
                .iter()
                .zip(&coeffs)
                .fold(0u64, |s, (&x, &c)| (s + x as u64 * c) % q);
            acc.bump(z);
        },
        FreqVector::merge,
    ))
}

/// Resource caps for the frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtkLimits {
    /// Maximum number of nonzero `h` with `|h|_inf <= H`.
    pub max_vectors: u64,
    /// Histogram memory per pass; larger sweeps are split into several passes.
    pub max_bank_bytes: u64,
}

impl Default for EtkLimits {
    fn default() -> Self {
        EtkLimits {
            max_vectors: 500_000,
            max_bank_bytes: 512 << 20,
        }
    }
}

fn vector_count(k: usize, h_max: u64) -> u128 {
    (2 * h_max as u128 + 1).saturating_pow(k as u32) - 1
}

fn check_cap(k: usize, h_max: u64, limits: &EtkLimits) -> Result<u64> {
    if h_max == 0 {
        return Err(Error::InvalidInput("H must be a positive integer".into()));
    }
    let count = vector_count(k, h_max);
    if count > limits.max_vectors as u128 {
        return Err(Error::CombinatorialBlowup {
            count,
            cap: limits.max_vectors,
        });
    }
    Ok(count as u64)
}

/// Maps a lexicographic index over `[-H, H]^k` (first coordinate most
/// significant) to its vector.
pub fn h_from_index(index: u64, k: usize, h_max: u64) -> HVector {
    let base = 2 * h_max + 1;
    let mut rest = index;
    let mut out = vec![0i64; k];
    for slot in out.iter_mut().rev() {
        *slot = (rest % base) as i64 - h_max as i64;
        rest /= base;
    }
    HVector(out)
}

pub fn h_index(h: &HVector, h_max: u64) -> u64 {
    let base = 2 * h_max + 1;
    h.0.iter()
        .fold(0u64, |acc, &v| acc * base + (v + h_max as i64) as u64)
}

/// `|(1/N) sum_x e(h . x)|` for every `h` in `[-H, H]^k`, indexed
/// lexicographically. The entry of `h = 0` is 1.
#[derive(Debug, Clone)]
pub struct MagnitudeBank {
    pub k: usize,
    pub h_max: u64,
    pub n_points: u64,
    pub magnitudes: Vec<f64>,
}

impl MagnitudeBank {
    pub fn get(&self, h: &HVector) -> f64 {
        self.magnitudes[h_index(h, self.h_max) as usize]
    }
}

const BLOCK: usize = 1024;

/// One enumeration pass per histogram bank.
///
/// Indices below the centre `(total - 1) / 2` are exactly one of each pair
/// `{h, -h}`; the partner's histogram is the mirror image, so its magnitude is
/// identical and only the lower half is accumulated. Each index splits as
/// `(i_A, i_B)` over the first `k/2` and last `k - k/2` coordinates; per block
/// of points the partial forms of every `i_A` and `i_B` are tabulated once,
/// leaving a single add and increment per (frequency, point).
pub fn image_magnitudes(
    domain: &Domain,
    embedding: Embedding,
    aux: Option<&FpMatrix>,
    h_max: u64,
    limits: &EtkLimits,
) -> Result<MagnitudeBank> {
    let embedder = Embedder::new(embedding, domain.kind(), domain.n(), aux)?;
    check_aux(domain, aux)?;
    let k = embedder.dim();
    check_cap(k, h_max, limits)?;
    let q = domain.p().get();
    let base = 2 * h_max + 1;
    let total = base.pow(k as u32);
    let center = (total - 1) / 2;
    let ka = k / 2;
    let kb = k - ka;
    let count_b = base.pow(kb as u32);
    let coeffs = |len: usize| -> Vec<Vec<u32>> {
        (0..base.pow(len as u32))
            .map(|i| {
                h_from_index(i, len, h_max)
                    .0
                    .iter()
                    .map(|&v| domain.p().reduce(v))
                    .collect()
            })
            .collect()
    };
    let coeff_a = coeffs(ka);
    let coeff_b = coeffs(kb);

    let row_bytes = q * 8;
    let per_pass = (limits.max_bank_bytes / row_bytes).max(1);
    let table = PhaseTable::new(q);
    let n_points = domain.order();
    let mut magnitudes = vec![0.0f64; total as usize];
    magnitudes[center as usize] = 1.0;

    let mut lo = 0;
    while lo < center {
        let hi = (lo + per_pass).min(center);
        let bank = sweep_pass(domain, &embedder, &coeff_a, &coeff_b, count_b, lo, hi, ka, kb);
        let rows: Vec<f64> = bank
            .par_chunks(q as usize)
            .map(|row| {
                let f = FreqVector::new(q, row.to_vec()).expect("row has p entries");
                f.to_complex_with(&table).abs() / n_points as f64
            })
            .collect();
        for (offset, m) in rows.into_iter().enumerate() {
            let f = lo + offset as u64;
            magnitudes[f as usize] = m;
            magnitudes[(total - 1 - f) as usize] = m;
        }
        lo = hi;
    }
    Ok(MagnitudeBank {
        k,
        h_max,
        n_points,
        magnitudes,
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_pass(
    domain: &Domain,
    embedder: &Embedder,
    coeff_a: &[Vec<u32>],
    coeff_b: &[Vec<u32>],
    count_b: u64,
    lo: u64,
    hi: u64,
    ka: usize,
    kb: usize,
) -> Vec<u64> {
    let q = domain.p().get();
    let width = q as usize;
    let rows = (hi - lo) as usize;
    let k = ka + kb;
    let a_first = (lo / count_b) as usize;
    let a_last = ((hi - 1) / count_b) as usize;
    let flush = |bank: &mut [u64], pts: &[u32], len: usize| {
        let tabulate = |coeff: &[Vec<u32>], range: std::ops::Range<usize>, off: usize| {
            let mut t = vec![0u32; range.len() * len];
            for (r, idx) in range.enumerate() {
                let c = &coeff[idx];
                for s in 0..len {
                    let x = &pts[s * k + off..s * k + off + c.len()];
                    let z = x
                        .iter()
                        .zip(c)
                        .fold(0u64, |acc, (&xi, &ci)| acc + xi as u64 * ci as u64);
                    t[r * len + s] = (z % q) as u32;
                }
            }
            t
        };
        let za = tabulate(coeff_a, a_first..a_last + 1, 0);
        let zb = tabulate(coeff_b, 0..coeff_b.len(), ka);
        for f in lo..hi {
            let ia = (f / count_b) as usize - a_first;
            let ib = (f % count_b) as usize;
            let ra = &za[ia * len..(ia + 1) * len];
            let rb = &zb[ib * len..(ib + 1) * len];
            let row = &mut bank[(f - lo) as usize * width..(f - lo + 1) as usize * width];
            for (&x, &y) in ra.iter().zip(rb) {
                let mut z = x + y;
                if z >= q as u32 {
                    z -= q as u32;
                }
                row[z as usize] += 1;
            }
        }
    };
    domain
        .work_chunks()
        .into_par_iter()
        .fold(
            || vec![0u64; rows * width],
            |mut bank, chunk| {
                let mut pts = vec![0u32; BLOCK * k];
                let mut len = 0;
                for a in enumerate(domain, chunk).expect("work chunk is in range") {
                    embedder.write(&a, &mut pts[len * k..(len + 1) * k]);
                    len += 1;
                    if len == BLOCK {
                        flush(&mut bank, &pts, len);
                        len = 0;
                    }
                }
                if len > 0 {
                    flush(&mut bank, &pts, len);
                }
                bank
            },
        )
        .reduce(
            || vec![0u64; rows * width],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Right-hand side of the ETK inequality for one point set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtkReport {
    pub k: usize,
    pub n_points: u64,
    pub h_max: u64,
    pub vector_count: u64,
    pub max_magnitude: f64,
    pub weighted_sum: f64,
    pub bound: f64,
    /// Magnitudes in lexicographic order of `h`, zero vector skipped.
    #[serde(skip)]
    pub magnitudes: Vec<f64>,
}

/// `(3/2)^k (2/(H+1) + sum_{0 < |h|_inf <= H} magnitude(h) / r(h))`.
///
/// `magnitude` is queried once per nonzero `h`, in lexicographic order.
pub fn etk_bound<F>(
    h_max: u64,
    k: usize,
    n_points: u64,
    mut magnitude: F,
    limits: &EtkLimits,
) -> Result<EtkReport>
where
    F: FnMut(&HVector) -> f64,
{
    let count = check_cap(k, h_max, limits)?;
    let total = count + 1;
    let center = count / 2;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut magnitudes = Vec::with_capacity(count as usize);
    let mut max_magnitude = 0.0f64;
    for idx in 0..total {
        if idx == center {
            continue;
        }
        let h = h_from_index(idx, k, h_max);
        let m = magnitude(&h);
        let term = m / r_of_h(&h)? as f64;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
        max_magnitude = max_magnitude.max(m);
        magnitudes.push(m);
    }
    let weighted_sum = sum + comp;
    let bound = 1.5f64.powi(k as i32) * (2.0 / (h_max as f64 + 1.0) + weighted_sum);
    Ok(EtkReport {
        k,
        n_points,
        h_max,
        vector_count: count,
        max_magnitude,
        weighted_sum,
        bound,
        magnitudes,
    })
}

/// ETK bound for an embedded group image, via one batched sweep.
pub fn etk_for_image(
    domain: &Domain,
    embedding: Embedding,
    aux: Option<&FpMatrix>,
    h_max: u64,
    limits: &EtkLimits,
) -> Result<EtkReport> {
    let bank = image_magnitudes(domain, embedding, aux, h_max, limits)?;
    etk_bound(h_max, bank.k, bank.n_points, |h| bank.get(h), limits)
}

/// Exact `|count/N - area|` for one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxError {
    pub index: usize,
    pub count: u64,
    pub n_points: u64,
    /// Exact area as `num/den`.
    pub area: String,
    /// Exact error as `num/den`.
    pub error: String,
    pub error_value: f64,
}

pub fn ratio_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn ratio_f64(r: &BigRational) -> f64 {
    // Scale into i64 range for a faithful conversion of small rationals.
    r.to_f64().unwrap_or_else(|| {
        let scale = BigInt::from(1u64 << 53);
        (r * BigRational::from_integer(scale.clone()))
            .round()
            .to_integer()
            .to_f64()
            .unwrap_or(f64::NAN)
            / (1u64 << 53) as f64
    })
}

pub fn empirical_box_error(
    domain: &Domain,
    embedding: Embedding,
    aux: Option<&FpMatrix>,
    boxes: &[AxisBox],
) -> Result<Vec<BoxError>> {
    let embedder = Embedder::new(embedding, domain.kind(), domain.n(), aux)?;
    check_aux(domain, aux)?;
    let counts = count_boxes(domain, &embedder, boxes)?;
    let n_points = domain.order();
    Ok(boxes
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(index, (b, count))| {
            let area = b.area();
            let frac = BigRational::new(BigInt::from(count), BigInt::from(n_points));
            let err = (frac - &area).abs();
            BoxError {
                index,
                count,
                n_points,
                area: ratio_string(&area),
                error: ratio_string(&err),
                error_value: ratio_f64(&err),
            }
        })
        .collect())
}

/// A fixed family of boxes in `[0,1)^k`: the full cube, `[0,1/2)^k`, an empty
/// box, then random boxes with endpoints on the grid `j/12`.
pub fn preset_boxes(k: usize, count: usize, seed: u64) -> Vec<AxisBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        AxisBox::unit(k),
        AxisBox::lower_half_prefix(k, k),
        AxisBox::from_fractions(&vec![(1, 3); k], &vec![(1, 3); k]).expect("valid"),
    ];
    while out.len() < count {
        let mut lo = Vec::with_capacity(k);
        let mut hi = Vec::with_capacity(k);
        for _ in 0..k {
            let a = rng.gen_range(0..=6u64);
            let b = rng.gen_range(a + 6..=12u64);
            lo.push((a, 12));
            hi.push((b, 12));
        }
        out.push(AxisBox::from_fractions(&lo, &hi).expect("ordered endpoints"));
    }
    out.truncate(count);
    out
}
