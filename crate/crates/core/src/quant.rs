//! Scalar quantizers, dither generation, and the packed two-bit batch.
//!
//! Three quantizers appear here: the multi-bit uniform quantizer
//! [`q_uniform`] that snaps to cell midpoints, the four-level [`q_2bit`]
//! quantizer with outputs `{±λ/2, ±3λ/2}`, and the one-bit [`sign_q`]. The
//! two-bit quantizer agrees with the uniform one whenever the pre-dither
//! signal magnitude stays below the scale, which is what lets a two-bit
//! code stand in for the full uniform quantizer on bounded data.
//!
//! Dither widths are explicit configuration, never inferred: the uniform
//! quantizer pairs with `U[-λ/2, λ/2]` draws (triangular dither is the sum
//! of two of those), while the sign quantizer pairs with the wider
//! `U[-λ, λ]`.

use rand::Rng;
use thiserror::Error;

use crate::sampling::SampleBatch;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("input must be finite, got {0}")]
    NonFinite(f64),
    #[error("quantizer scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("shrink factor must lie in (0, 1], got {0}")]
    BadShrink(f64),
    #[error("column {col} has zero scale but nonzero entries")]
    DegenerateColumn { col: usize },
    #[error("expected {expected} scales, got {actual}")]
    ScaleCount { expected: usize, actual: usize },
    #[error("byte stream too short: {count} codes need {needed} bytes, got {got}")]
    BadLength {
        count: usize,
        needed: usize,
        got: usize,
    },
    #[error("dither draws have length {actual}, expected {expected}")]
    DitherCount { expected: usize, actual: usize },
}

/// Code assigned to entries of an all-zero column (decodes to `+λ/2`,
/// which is `0` at zero scale).
pub const ZERO_COLUMN_CODE: u8 = 2;

/// Dither distributions, each with an explicit positive scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DitherKind {
    /// No dither; every draw is zero.
    None,
    /// `U[-λ/2, λ/2]`, the width paired with the uniform quantizer.
    Uniform { scale: f64 },
    /// `U[-λ, λ]`, the wider dither paired with the sign quantizer.
    UniformWide { scale: f64 },
    /// Sum of two independent `U[-λ/2, λ/2]` draws; takes values in `[-λ, λ]`.
    Triangular { scale: f64 },
}

/// Uniform quantizer with resolution `lambda`: maps `a` to the midpoint of
/// its cell, `λ·(⌊a/λ⌋ + 1/2)`. The result is always within `λ/2` of `a`.
pub fn q_uniform(a: f64, lambda: f64) -> Result<f64, QuantError> {
    check_scale(lambda)?;
    if !a.is_finite() {
        return Err(QuantError::NonFinite(a));
    }
    Ok(q_uniform_raw(a, lambda))
}

#[inline]
pub(crate) fn q_uniform_raw(a: f64, lambda: f64) -> f64 {
    lambda * ((a / lambda).floor() + 0.5)
}

/// Four-level quantizer: `-3λ/2` for `a < -λ`, `-λ/2` for `-λ ≤ a < 0`,
/// `+λ/2` for `0 ≤ a < λ`, `+3λ/2` for `a ≥ λ`.
pub fn q_2bit(a: f64, lambda: f64) -> Result<f64, QuantError> {
    check_scale(lambda)?;
    if !a.is_finite() {
        return Err(QuantError::NonFinite(a));
    }
    Ok(decode_level(two_bit_code(a, lambda), lambda))
}

/// The cell index of `a` under the four-level quantizer, as a code in
/// `0..=3` ordered from the most negative level upward.
#[inline]
pub fn two_bit_code(a: f64, lambda: f64) -> u8 {
    if a < -lambda {
        0
    } else if a < 0.0 {
        1
    } else if a < lambda {
        2
    } else {
        3
    }
}

/// Reconstruction level of a two-bit code: `(2k - 3)·λ/2`.
#[inline]
pub fn decode_level(code: u8, lambda: f64) -> f64 {
    (2.0 * f64::from(code) - 3.0) * 0.5 * lambda
}

/// One-bit quantizer: `+1` for `a ≥ 0`, `-1` otherwise. Zero maps to `+1`;
/// the tie has measure zero under dithering and a fixed convention keeps
/// runs reproducible.
#[inline]
pub fn sign_q(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn check_scale(lambda: f64) -> Result<(), QuantError> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(QuantError::BadScale(lambda))
    }
}

/// `U[-h, h)` draw.
#[inline]
pub(crate) fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * half_width
}

/// Unit triangular draw: sum of two independent `U[-1/2, 1/2)`.
#[inline]
pub(crate) fn triangular_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.random::<f64>() - 0.5) + (rng.random::<f64>() - 0.5)
}

/// Triangular draw at scale `lambda`: sum of two independent
/// `U[-λ/2, λ/2)`.
#[inline]
pub(crate) fn triangular_scaled<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    uniform_sym(rng, 0.5 * lambda) + uniform_sym(rng, 0.5 * lambda)
}

/// Draws an `n × d` dither matrix in row-major order. Triangular entries
/// consume two uniforms each, first summand first; `None` consumes nothing.
pub fn draw_dither<R: Rng + ?Sized>(kind: DitherKind, n: usize, d: usize, rng: &mut R) -> Vec<f64> {
    match kind {
        DitherKind::None => vec![0.0; n * d],
        DitherKind::Uniform { scale } => {
            assert!(scale > 0.0, "dither scale must be positive");
            (0..n * d).map(|_| uniform_sym(rng, 0.5 * scale)).collect()
        }
        DitherKind::UniformWide { scale } => {
            assert!(scale > 0.0, "dither scale must be positive");
            (0..n * d).map(|_| uniform_sym(rng, scale)).collect()
        }
        DitherKind::Triangular { scale } => {
            assert!(scale > 0.0, "dither scale must be positive");
            (0..n * d).map(|_| triangular_scaled(rng, scale)).collect()
        }
    }
}

/// Packs two-bit codes four to a byte, first code in the least-significant
/// bit pair.
pub fn pack(codes: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0u8; codes.len().div_ceil(4)];
    for (t, &code) in codes.iter().enumerate() {
        assert!(code < 4, "two-bit code out of range: {code}");
        bytes[t / 4] |= code << (2 * (t % 4));
    }
    bytes
}

/// Inverse of [`pack`]: recovers `count` codes from the byte stream.
pub fn unpack(bytes: &[u8], count: usize) -> Result<Vec<u8>, QuantError> {
    let needed = count.div_ceil(4);
    if bytes.len() < needed {
        return Err(QuantError::BadLength {
            count,
            needed,
            got: bytes.len(),
        });
    }
    Ok((0..count)
        .map(|t| (bytes[t / 4] >> (2 * (t % 4))) & 0b11)
        .collect())
}

/// A batch quantized to two bits per entry: packed codes plus the
/// per-column scale vector and the common shrink factor.
///
/// The reconstruction level of code `k` in column `j` is
/// `(2k - 3)/2 · s·λ_j`. Columns with zero scale always hold
/// [`ZERO_COLUMN_CODE`] and decode to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBatch {
    n: usize,
    d: usize,
    packed: Vec<u8>,
    scales: Vec<f64>,
    shrink: f64,
}

impl QuantizedBatch {
    /// Assembles a batch from already-packed codes; used by the file codec.
    pub fn from_parts(
        n: usize,
        d: usize,
        packed: Vec<u8>,
        scales: Vec<f64>,
        shrink: f64,
    ) -> Result<Self, QuantError> {
        if scales.len() != d {
            return Err(QuantError::ScaleCount {
                expected: d,
                actual: scales.len(),
            });
        }
        if !(shrink > 0.0 && shrink <= 1.0) {
            return Err(QuantError::BadShrink(shrink));
        }
        for &s in &scales {
            if !(s.is_finite() && s >= 0.0) {
                return Err(QuantError::BadScale(s));
            }
        }
        let needed = (n * d).div_ceil(4);
        if packed.len() < needed {
            return Err(QuantError::BadLength {
                count: n * d,
                needed,
                got: packed.len(),
            });
        }
        Ok(QuantizedBatch {
            n,
            d,
            packed,
            scales,
            shrink,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shrink(&self) -> f64 {
        self.shrink
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.packed
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u8 {
        let t = i * self.d + j;
        (self.packed[t / 4] >> (2 * (t % 4))) & 0b11
    }

    /// Scale actually applied to column `j`, shrink included.
    #[inline]
    pub fn effective_scale(&self, j: usize) -> f64 {
        self.shrink * self.scales[j]
    }

    /// Reconstructed value of entry `(i, j)`.
    #[inline]
    pub fn decoded(&self, i: usize, j: usize) -> f64 {
        decode_level(self.code(i, j), self.effective_scale(j))
    }
}

/// Quantizes every entry of `x` to two bits with per-column scales and a
/// common shrink factor, drawing one unit triangular dither per entry in
/// row-major order (two uniforms per entry, consumed even for zero-scale
/// columns so the stream position never depends on the data).
///
/// Codes are computed on the scale-normalized argument
/// `x_ij/(s·λ_j) + τ_ij`, so jointly rescaling the data and the scales
/// leaves every code unchanged.
pub fn quantize_batch<R: Rng + ?Sized>(
    x: &SampleBatch,
    scales: &[f64],
    shrink: f64,
    rng: &mut R,
) -> Result<QuantizedBatch, QuantError> {
    let (n, d) = (x.n(), x.d());
    if scales.len() != d {
        return Err(QuantError::ScaleCount {
            expected: d,
            actual: scales.len(),
        });
    }
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(QuantError::BadShrink(shrink));
    }
    for (j, &s) in scales.iter().enumerate() {
        if !(s.is_finite() && s >= 0.0) {
            return Err(QuantError::BadScale(s));
        }
        if s == 0.0 && (0..n).any(|i| x.get(i, j) != 0.0) {
            return Err(QuantError::DegenerateColumn { col: j });
        }
    }
    let mut codes = Vec::with_capacity(n * d);
    for i in 0..n {
        for (j, &scale) in scales.iter().enumerate() {
            let tau = triangular_unit(rng);
            let lam = shrink * scale;
            let code = if lam == 0.0 {
                ZERO_COLUMN_CODE
            } else {
                two_bit_code(x.get(i, j) / lam + tau, 1.0)
            };
            codes.push(code);
        }
    }
    Ok(QuantizedBatch {
        n,
        d,
        packed: pack(&codes),
        scales: scales.to_vec(),
        shrink,
    })
}

/// Checks that quantizing `x + Λτ` at scales `Λ` and quantizing the
/// normalized `Λ⁻¹x + τ` at unit scale produce the same code at every
/// entry, skipping entries whose normalized argument lies within `1e-9` of
/// a cell boundary (where the division can legitimately flip the cell).
///
/// `tau` holds unit triangular draws in row-major order; all scales must be
/// strictly positive.
pub fn rescale_identity_check(
    x: &SampleBatch,
    scales: &[f64],
    tau: &[f64],
) -> Result<bool, QuantError> {
    let (n, d) = (x.n(), x.d());
    if scales.len() != d {
        return Err(QuantError::ScaleCount {
            expected: d,
            actual: scales.len(),
        });
    }
    if tau.len() != n * d {
        return Err(QuantError::DitherCount {
            expected: n * d,
            actual: tau.len(),
        });
    }
    for &s in scales {
        check_scale(s)?;
    }
    for i in 0..n {
        for (j, &lam) in scales.iter().enumerate() {
            let t = tau[i * d + j];
            let a = x.get(i, j);
            let y = a / lam + t;
            let boundary_dist = y.abs().min((y - 1.0).abs()).min((y + 1.0).abs());
            if boundary_dist < 1e-9 {
                continue;
            }
            if two_bit_code(a + lam * t, lam) != two_bit_code(y, 1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
