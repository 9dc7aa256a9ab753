//! Seeded multivariate Gaussian sampling and the per-coordinate statistics
//! feeding the estimators.
//!
//! Randomness is organized as explicit streams: a [`SeedSpec`] names one
//! cell of an experiment (base seed, grid point, repetition) and derives a
//! counter-based generator for it, so results never depend on thread
//! scheduling. Within a cell, [`fork_stream`] splits off independent child
//! streams; child `k` depends only on the parent state and `k`, so
//! appending more forks never changes earlier ones.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{LinalgError, Mat, SymMatrix};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("sample batch is empty")]
    EmptyBatch,
    #[error("sample entries must be finite")]
    NonFinite,
    #[error("row {row} has length {len}, expected {expected}")]
    RaggedRow {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("expected {expected} values, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// An `n × d` batch of raw samples, one sample per row. All entries are
/// finite (checked at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SampleError> {
        let n = rows.len();
        if n == 0 {
            return Err(SampleError::EmptyBatch);
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(SampleError::ZeroDim);
        }
        let mut values = Vec::with_capacity(n * d);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(SampleError::RaggedRow {
                    row,
                    len: r.len(),
                    expected: d,
                });
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(n, d, values)
    }

    /// Builds a batch from row-major values; `n == 0` is allowed here so
    /// that empty batches can be constructed to exercise error paths.
    pub fn from_vec(n: usize, d: usize, values: Vec<f64>) -> Result<Self, SampleError> {
        if d == 0 {
            return Err(SampleError::ZeroDim);
        }
        if values.len() != n * d {
            return Err(SampleError::BadLength {
                expected: n * d,
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SampleError::NonFinite);
        }
        Ok(SampleBatch { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entrywise scaling; scale factors must keep entries finite.
    pub fn scaled(&self, c: f64) -> Result<SampleBatch, SampleError> {
        SampleBatch::from_vec(self.n, self.d, self.values.iter().map(|v| c * v).collect())
    }
}

/// Names one cell of an experiment. The derived stream is a pure function
/// of all three fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    pub base_seed: u64,
    pub grid_index: u64,
    pub rep_index: u64,
}

impl SeedSpec {
    pub fn new(base_seed: u64, grid_index: u64, rep_index: u64) -> Self {
        SeedSpec {
            base_seed,
            grid_index,
            rep_index,
        }
    }

    /// Derives the deterministic random stream for this cell.
    pub fn stream(&self) -> ChaCha8Rng {
        derive_stream(self)
    }

    /// A 64-bit identifier of the derived stream, recorded alongside each
    /// result row so any single repetition can be reproduced.
    pub fn stream_id(&self) -> u64 {
        seed_words(self)[0]
    }
}

/// One step of the splitmix64 output function over `state + value`, with
/// the usual golden-ratio increment.
fn absorb(state: u64, value: u64) -> u64 {
    let mut z = state
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(value);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seed_words(spec: &SeedSpec) -> [u64; 4] {
    let mixed = absorb(absorb(spec.base_seed, spec.grid_index), spec.rep_index);
    [
        absorb(mixed, 0),
        absorb(mixed, 1),
        absorb(mixed, 2),
        absorb(mixed, 3),
    ]
}

/// Hashes the seed fields into a 256-bit key for a counter-based
/// generator. Distinct `(grid_index, rep_index)` pairs get statistically
/// independent streams; identical inputs always yield identical streams.
pub fn derive_stream(spec: &SeedSpec) -> ChaCha8Rng {
    let words = seed_words(spec);
    let mut seed = [0u8; 32];
    for (chunk, word) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Splits an independent child stream off `parent` by drawing a fresh
/// 256-bit seed from it.
pub fn fork_stream(parent: &mut ChaCha8Rng) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    parent.fill_bytes(&mut seed);
    ChaCha8Rng::from_seed(seed)
}

/// Draws `n` i.i.d. rows from the zero-mean Gaussian with covariance
/// `sigma`, as `L·g` with `g` standard normal and `L` the PSD factor of
/// `sigma`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    n: usize,
    sigma: &SymMatrix,
    rng: &mut R,
) -> Result<SampleBatch, SampleError> {
    let factor = sigma.sampling_factor()?;
    Ok(sample_gaussian_with_factor(n, &factor, rng))
}

/// Same as [`sample_gaussian`] with a precomputed factor (`Σ = L·Lᵀ`).
/// The `d` standard normals of each row are drawn in coordinate order, row
/// by row, so equal streams give bit-identical batches.
pub fn sample_gaussian_with_factor<R: Rng + ?Sized>(
    n: usize,
    factor: &Mat,
    rng: &mut R,
) -> SampleBatch {
    let d = factor.rows;
    let mut values = Vec::with_capacity(n * d);
    let mut g = vec![0.0; d];
    for _ in 0..n {
        for gj in g.iter_mut() {
            *gj = rng.sample(StandardNormal);
        }
        values.extend_from_slice(&factor.matvec(&g));
    }
    SampleBatch {
        n,
        d,
        values,
    }
}

/// Per-column maximum absolute value — the tightest per-coordinate dither
/// scales that still cover every sample in the batch.
pub fn column_max_abs(x: &SampleBatch) -> Result<Vec<f64>, SampleError> {
    if x.n() == 0 {
        return Err(SampleError::EmptyBatch);
    }
    let mut maxima = vec![0.0_f64; x.d()];
    for i in 0..x.n() {
        for (j, m) in maxima.iter_mut().enumerate() {
            *m = m.max(x.get(i, j).abs());
        }
    }
    Ok(maxima)
}
