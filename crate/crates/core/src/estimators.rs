//! The covariance estimators, each a pure function of a sample batch plus
//! (where dithered) an explicit random stream.
//!
//! All estimators return exactly symmetric matrices: products are
//! accumulated on the upper triangle only and mirrored. None of them
//! projects onto the PSD cone — they are compared raw, and a projection
//! would change every error figure. [`psd_clip`] exists as an optional
//! post-processing step for callers that need a PSD matrix downstream.
//!
//! Dither consumption orders are part of the reproducibility contract:
//!
//! * sign estimators draw, per sample, the first dither vector coordinate
//!   by coordinate and then the second;
//! * triangular-dither estimators draw one dither per entry in row-major
//!   order, each dither being two uniforms (first summand first).

use rand::Rng;
use thiserror::Error;

use crate::linalg::SymMatrix;
use crate::quant::{
    self, decode_level, q_uniform_raw, quantize_batch, two_bit_code, triangular_scaled,
    uniform_sym, QuantError, QuantizedBatch,
};
use crate::sampling::{column_max_abs, SampleBatch, SampleError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("sample batch is empty")]
    EmptyBatch,
    #[error("dither scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("scale constant must be positive and finite, got {0}")]
    BadConstant(f64),
    #[error("shrink factor must lie in (0, 1], got {0}")]
    BadShrink(f64),
    #[error("extra sample has length {actual}, expected {expected}")]
    ExtraSampleLength { expected: usize, actual: usize },
    #[error("extra sample entries must be finite")]
    NonFinite,
    #[error("estimator requires the extra sample that seeds its running scale")]
    MissingExtraSample,
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Sample covariance `(1/n) Σ xᵢxᵢᵀ`.
pub fn sample_cov(x: &SampleBatch) -> Result<SymMatrix, EstimatorError> {
    let n = nonempty(x)?;
    let inv_n = 1.0 / n as f64;
    Ok(SymMatrix::from_upper(x.d(), |j, k| {
        (0..x.n()).map(|i| x.get(i, j) * x.get(i, k)).sum::<f64>() * inv_n
    }))
}

/// Sign-quantizer estimator at a fixed dither scale: each sample is
/// quantized twice as `λ·sign(xᵢ + τ)` with independent `U[-λ, λ]` dithers,
/// and the two quantizations are cross-multiplied and symmetrized.
pub fn est_na<R: Rng + ?Sized>(
    x: &SampleBatch,
    lambda: f64,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(EstimatorError::BadScale(lambda));
    }
    let n = nonempty(x)?;
    let d = x.d();
    let mut acc = vec![0.0; d * d];
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    for i in 0..x.n() {
        for (j, s) in s1.iter_mut().enumerate() {
            *s = quant::sign_q(x.get(i, j) + uniform_sym(rng, lambda));
        }
        for (j, s) in s2.iter_mut().enumerate() {
            *s = quant::sign_q(x.get(i, j) + uniform_sym(rng, lambda));
        }
        accumulate_cross(&mut acc, &s1, &s2, d);
    }
    let scale = lambda * lambda / (2.0 * n as f64);
    Ok(SymMatrix::from_upper(d, |j, k| acc[j * d + k] * scale))
}

/// Sign-quantizer estimator with a running data-driven scale: sample `i`
/// uses `λᵢ = C·λᵢ₀·√(ln i)` where `λᵢ₀` averages the sup-norms of the
/// extra sample `x0` and all earlier samples. `λ₁` is always zero (ln 1 =
/// 0), so the first term contributes nothing; its dithers are still drawn
/// to keep the stream position fixed.
pub fn est_adaptive_na<R: Rng + ?Sized>(
    x: &SampleBatch,
    x0: &[f64],
    c: f64,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(EstimatorError::BadConstant(c));
    }
    let n = nonempty(x)?;
    let d = x.d();
    if x0.len() != d {
        return Err(EstimatorError::ExtraSampleLength {
            expected: d,
            actual: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }

    let mut acc = vec![0.0; d * d];
    let mut q1 = vec![0.0; d];
    let mut q2 = vec![0.0; d];
    let mut sup_sum = sup_norm(x0);
    for i in 0..x.n() {
        let ordinal = (i + 1) as f64;
        let lambda_i0 = sup_sum / ordinal;
        let lambda_i = c * lambda_i0 * ordinal.ln().sqrt();
        for (j, q) in q1.iter_mut().enumerate() {
            let tau = uniform_sym(rng, 1.0);
            *q = lambda_i * quant::sign_q(x.get(i, j) + lambda_i * tau);
        }
        for (j, q) in q2.iter_mut().enumerate() {
            let tau = uniform_sym(rng, 1.0);
            *q = lambda_i * quant::sign_q(x.get(i, j) + lambda_i * tau);
        }
        accumulate_cross(&mut acc, &q1, &q2, d);
        sup_sum += sup_norm(x.row(i));
    }
    let scale = 1.0 / (2.0 * n as f64);
    Ok(SymMatrix::from_upper(d, |j, k| acc[j * d + k] * scale))
}

/// Multi-bit estimator: uniform quantization of `xᵢ + τᵢ` with triangular
/// dither at scale `λ`, debiased by the dither second moment `λ²/4` on the
/// diagonal.
pub fn est_mb<R: Rng + ?Sized>(
    x: &SampleBatch,
    lambda: f64,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    est_quantized_common(x, lambda, rng, q_uniform_raw)
}

/// Two-bit estimator: same construction as [`est_mb`] with the four-level
/// quantizer. When `λ` covers every entry magnitude and the dither stream
/// is shared, the two estimators coincide exactly.
pub fn est_tb<R: Rng + ?Sized>(
    x: &SampleBatch,
    lambda: f64,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    est_quantized_common(x, lambda, rng, |arg, lam| {
        decode_level(two_bit_code(arg, lam), lam)
    })
}

fn est_quantized_common<R: Rng + ?Sized>(
    x: &SampleBatch,
    lambda: f64,
    rng: &mut R,
    quantizer: impl Fn(f64, f64) -> f64,
) -> Result<SymMatrix, EstimatorError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(EstimatorError::BadScale(lambda));
    }
    let n = nonempty(x)?;
    let d = x.d();
    let mut acc = vec![0.0; d * d];
    let mut q = vec![0.0; d];
    for i in 0..x.n() {
        for (j, qj) in q.iter_mut().enumerate() {
            let tau = triangular_scaled(rng, lambda);
            *qj = quantizer(x.get(i, j) + tau, lambda);
        }
        accumulate_outer(&mut acc, &q, d);
    }
    let inv_n = 1.0 / n as f64;
    let correction = lambda * lambda * 0.25;
    Ok(SymMatrix::from_upper(d, |j, k| {
        let mean = acc[j * d + k] * inv_n;
        if j == k {
            mean - correction
        } else {
            mean
        }
    }))
}

/// The parameter-free estimator: two-bit quantization with per-coordinate
/// scales `Λ = diag(column maxima)` shrunk by `s`, debiased by `(sΛ)²/4`.
/// Implemented as quantization to a [`QuantizedBatch`] followed by
/// [`estimate_from_quantized`], so the estimate is a pure function of the
/// stored codes, scales, and shrink factor.
pub fn est_pf<R: Rng + ?Sized>(
    x: &SampleBatch,
    shrink: f64,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    nonempty(x)?;
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(EstimatorError::BadShrink(shrink));
    }
    let scales = column_max_abs(x)?;
    let batch = quantize_batch(x, &scales, shrink, rng)?;
    estimate_from_quantized(&batch)
}

/// Reconstructs the covariance estimate from a packed two-bit batch:
/// `(1/n) Σ ẋᵢẋᵢᵀ - (sΛ)²/4` with `ẋ` the decoded levels. Columns stored
/// with zero scale decode to zero and contribute nothing, including to the
/// correction.
pub fn estimate_from_quantized(batch: &QuantizedBatch) -> Result<SymMatrix, EstimatorError> {
    if batch.n() == 0 {
        return Err(EstimatorError::EmptyBatch);
    }
    let (n, d) = (batch.n(), batch.d());
    let mut acc = vec![0.0; d * d];
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = batch.decoded(i, j);
        }
        accumulate_outer(&mut acc, &row, d);
    }
    let inv_n = 1.0 / n as f64;
    Ok(SymMatrix::from_upper(d, |j, k| {
        let mean = acc[j * d + k] * inv_n;
        if j == k {
            let lam = batch.effective_scale(j);
            mean - lam * lam * 0.25
        } else {
            mean
        }
    }))
}

/// Sign-quantizer analogue of the parameter-free construction: two
/// independent `U[-1, 1]` dithers per sample, both rescaled per coordinate
/// by the column maxima.
pub fn est_adaptive_sign<R: Rng + ?Sized>(
    x: &SampleBatch,
    rng: &mut R,
) -> Result<SymMatrix, EstimatorError> {
    let n = nonempty(x)?;
    let d = x.d();
    let scales = column_max_abs(x)?;
    let mut acc = vec![0.0; d * d];
    let mut q1 = vec![0.0; d];
    let mut q2 = vec![0.0; d];
    for i in 0..x.n() {
        for (j, q) in q1.iter_mut().enumerate() {
            let tau = uniform_sym(rng, 1.0);
            *q = scales[j] * quant::sign_q(x.get(i, j) + scales[j] * tau);
        }
        for (j, q) in q2.iter_mut().enumerate() {
            let tau = uniform_sym(rng, 1.0);
            *q = scales[j] * quant::sign_q(x.get(i, j) + scales[j] * tau);
        }
        accumulate_cross(&mut acc, &q1, &q2, d);
    }
    let scale = 1.0 / (2.0 * n as f64);
    Ok(SymMatrix::from_upper(d, |j, k| acc[j * d + k] * scale))
}

/// Clips negative eigenvalues to zero. Never applied inside the estimators
/// or the experiment harness; provided for downstream consumers that need
/// a PSD matrix.
pub fn psd_clip(m: &SymMatrix) -> Result<SymMatrix, EstimatorError> {
    let eig = m.sym_eigen().map_err(SampleError::from)?;
    let d = m.dim();
    let mut clipped = SymMatrix::zeros(d);
    for (k, &value) in eig.values.iter().enumerate() {
        let v = value.max(0.0);
        if v == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in i..d {
                let add = v * eig.vectors.get(i, k) * eig.vectors.get(j, k);
                clipped.set_sym(i, j, clipped.get(i, j) + add);
            }
        }
    }
    Ok(clipped)
}

fn nonempty(x: &SampleBatch) -> Result<usize, EstimatorError> {
    if x.n() == 0 {
        Err(EstimatorError::EmptyBatch)
    } else {
        Ok(x.n())
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Adds `q qᵀ` to the upper triangle of `acc`.
#[inline]
fn accumulate_outer(acc: &mut [f64], q: &[f64], d: usize) {
    for j in 0..d {
        for k in j..d {
            acc[j * d + k] += q[j] * q[k];
        }
    }
}

/// Adds `(a bᵀ + b aᵀ)` to the upper triangle of `acc`.
#[inline]
fn accumulate_cross(acc: &mut [f64], a: &[f64], b: &[f64], d: usize) {
    for j in 0..d {
        for k in j..d {
            acc[j * d + k] += a[j] * b[k] + b[j] * a[k];
        }
    }
}

/// Names one estimator together with its parameters. The `tag` strings
/// (`sample`, `na`, `adaptive_na`, `mb`, `tb`, `pf`, `adaptive_sign`) are
/// the values written to the `estimator` column of result CSVs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorSpec {
    Sample,
    Na { scale: ScaleRule },
    AdaptiveNa { c: f64 },
    Mb { scale: ScaleRule },
    Tb { scale: ScaleRule },
    Pf { shrink: f64 },
    AdaptiveSign,
}

/// How a fixed-scale estimator obtains its dither scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// Fixed scale λ.
    Lambda(f64),
    /// `λ = C·√(ln n)`, resolved against the batch size when evaluated.
    CSqrtLogN(f64),
}

impl ScaleRule {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            ScaleRule::Lambda(lambda) => lambda,
            ScaleRule::CSqrtLogN(c) => c * (n as f64).ln().sqrt(),
        }
    }

    fn param(&self) -> (&'static str, f64) {
        match *self {
            ScaleRule::Lambda(lambda) => ("lambda", lambda),
            ScaleRule::CSqrtLogN(c) => ("C", c),
        }
    }
}

impl EstimatorSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorSpec::Sample => "sample",
            EstimatorSpec::Na { .. } => "na",
            EstimatorSpec::AdaptiveNa { .. } => "adaptive_na",
            EstimatorSpec::Mb { .. } => "mb",
            EstimatorSpec::Tb { .. } => "tb",
            EstimatorSpec::Pf { .. } => "pf",
            EstimatorSpec::AdaptiveSign => "adaptive_sign",
        }
    }

    /// Parameter column for CSV output: `("", None)` when the estimator
    /// takes no parameter.
    pub fn param(&self) -> (&'static str, Option<f64>) {
        match self {
            EstimatorSpec::Sample | EstimatorSpec::AdaptiveSign => ("", None),
            EstimatorSpec::Na { scale } | EstimatorSpec::Mb { scale } | EstimatorSpec::Tb { scale } => {
                let (name, value) = scale.param();
                (name, Some(value))
            }
            EstimatorSpec::AdaptiveNa { c } => ("C", Some(*c)),
            EstimatorSpec::Pf { shrink } => ("s", Some(*shrink)),
        }
    }

    /// Replaces the scale constant for estimators swept over `C`; the
    /// others pass through unchanged.
    pub fn with_c(&self, c: f64) -> EstimatorSpec {
        match *self {
            EstimatorSpec::Na { .. } => EstimatorSpec::Na {
                scale: ScaleRule::CSqrtLogN(c),
            },
            EstimatorSpec::Mb { .. } => EstimatorSpec::Mb {
                scale: ScaleRule::CSqrtLogN(c),
            },
            EstimatorSpec::Tb { .. } => EstimatorSpec::Tb {
                scale: ScaleRule::CSqrtLogN(c),
            },
            EstimatorSpec::AdaptiveNa { .. } => EstimatorSpec::AdaptiveNa { c },
            other => other,
        }
    }

    /// Whether a sweep over the scale constant varies this estimator.
    pub fn sweeps_c(&self) -> bool {
        matches!(
            self,
            EstimatorSpec::Na { .. }
                | EstimatorSpec::Mb { .. }
                | EstimatorSpec::Tb { .. }
                | EstimatorSpec::AdaptiveNa { .. }
        )
    }

    /// Whether evaluation needs the extra sample for the running scale.
    pub fn needs_extra_sample(&self) -> bool {
        matches!(self, EstimatorSpec::AdaptiveNa { .. })
    }

    /// Evaluates the named estimator on `x`. `x0` is the extra sample
    /// consumed only by the running-scale sign estimator.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        x: &SampleBatch,
        x0: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<SymMatrix, EstimatorError> {
        match *self {
            EstimatorSpec::Sample => sample_cov(x),
            EstimatorSpec::Na { scale } => est_na(x, scale.resolve(x.n()), rng),
            EstimatorSpec::AdaptiveNa { c } => {
                let x0 = x0.ok_or(EstimatorError::MissingExtraSample)?;
                est_adaptive_na(x, x0, c, rng)
            }
            EstimatorSpec::Mb { scale } => est_mb(x, scale.resolve(x.n()), rng),
            EstimatorSpec::Tb { scale } => est_tb(x, scale.resolve(x.n()), rng),
            EstimatorSpec::Pf { shrink } => est_pf(x, shrink, rng),
            EstimatorSpec::AdaptiveSign => est_adaptive_sign(x, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{make_sigma, SigmaSpec};
    use crate::sampling::{sample_gaussian, SeedSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_exactly_symmetric(m: &SymMatrix) {
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    fn gaussian_batch(n: usize, sigma: &SigmaSpec, seed: u64) -> SampleBatch {
        let sigma = make_sigma(sigma).unwrap();
        let mut rng = SeedSpec::new(seed, 0, 0).stream();
        sample_gaussian(n, &sigma, &mut rng).unwrap()
    }

    #[test]
    fn sample_cov_examples() {
        let x = SampleBatch::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let m = sample_cov(&x).unwrap();
        assert_eq!(m.entries(), &[1.0, 2.0, 2.0, 4.0]);

        let x = SampleBatch::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = sample_cov(&x).unwrap();
        assert_eq!(m.entries(), &[0.5, 0.0, 0.0, 0.5]);

        let empty = SampleBatch::from_vec(0, 2, vec![]).unwrap();
        assert!(matches!(
            sample_cov(&empty),
            Err(EstimatorError::EmptyBatch)
        ));
    }

    #[test]
    fn sample_cov_concentrates() {
        let spec = SigmaSpec::new(1.0, 0.2, 1.0, 10);
        let x = gaussian_batch(100_000, &spec, 21);
        let sigma = make_sigma(&spec).unwrap();
        let err = sample_cov(&x)
            .unwrap()
            .sub(&sigma)
            .unwrap()
            .operator_norm()
            .unwrap();
        assert!(err <= 0.1, "operator norm error {err}");
    }

    /// Oracle for the sign estimator: recompute per-sample terms with the
    /// replayed dither stream, check the output matches and the bias
    /// against the truth is within 4 standard errors entrywise.
    #[test]
    fn est_na_unbiased_when_scale_covers_data() {
        let spec = SigmaSpec::new(1.0, 0.2, 1.0, 5);
        let n = 100_000;
        let x = gaussian_batch(n, &spec, 22);
        let sigma = make_sigma(&spec).unwrap();
        let lambda = column_max_abs(&x)
            .unwrap()
            .into_iter()
            .fold(0.0_f64, f64::max);

        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let est = est_na(&x, lambda, &mut rng).unwrap();
        assert_exactly_symmetric(&est);

        // independent recomputation, tracking per-sample term variance
        let d = x.d();
        let mut replay = ChaCha8Rng::seed_from_u64(1234);
        let mut sum = vec![0.0; d * d];
        let mut sum_sq = vec![0.0; d * d];
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        for i in 0..n {
            for (j, s) in s1.iter_mut().enumerate() {
                *s = sign_q_ref(x.get(i, j) + uniform_sym(&mut replay, lambda));
            }
            for (j, s) in s2.iter_mut().enumerate() {
                *s = sign_q_ref(x.get(i, j) + uniform_sym(&mut replay, lambda));
            }
            for j in 0..d {
                for k in 0..d {
                    let term = lambda * lambda * 0.5 * (s1[j] * s2[k] + s2[j] * s1[k]);
                    sum[j * d + k] += term;
                    sum_sq[j * d + k] += term * term;
                }
            }
        }
        let nf = n as f64;
        for j in 0..d {
            for k in 0..d {
                let mean = sum[j * d + k] / nf;
                assert!((mean - est.get(j, k)).abs() <= 1e-9 * lambda * lambda);
                let sd = (sum_sq[j * d + k] / nf - mean * mean).sqrt();
                let se = sd / nf.sqrt();
                assert!(
                    (mean - sigma.get(j, k)).abs() <= 4.0 * se,
                    "({j},{k}): bias {} vs 4·SE {}",
                    mean - sigma.get(j, k),
                    4.0 * se
                );
            }
        }
    }

    fn sign_q_ref(a: f64) -> f64 {
        if a >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    #[test]
    fn est_na_zero_data_centers_on_zero() {
        let n = 2000;
        let x = SampleBatch::from_vec(n, 2, vec![0.0; n * 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let est = est_na(&x, 1.0, &mut rng).unwrap();
        // each factor is an independent symmetric coin; SE of the mean of
        // ±1 products over n samples is 1/√n (diagonal combines two
        // correlated terms, still O(1/√n))
        let se = 1.0 / (n as f64).sqrt();
        for j in 0..2 {
            for k in 0..2 {
                assert!(est.get(j, k).abs() <= 5.0 * se, "({j},{k}): {}", est.get(j, k));
            }
        }
    }

    #[test]
    fn est_adaptive_na_first_term_vanishes() {
        let x = SampleBatch::from_rows(vec![vec![3.0, -1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = est_adaptive_na(&x, &[1.0, 2.0], 0.5, &mut rng).unwrap();
        // single sample: λ₁ = C·λ₁₀·√(ln 1) = 0, so the whole estimate is 0
        assert!(est.entries().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn est_adaptive_na_matches_scalar_recomputation() {
        // constant samples make every λᵢ computable in closed form
        let n = 50;
        let d = 3;
        let row = vec![1.0, -0.5, 0.25];
        let x = SampleBatch::from_rows(vec![row.clone(); n]).unwrap();
        let x0 = vec![0.5, -1.0, 0.0];
        let c = 1.0;

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = est_adaptive_na(&x, &x0, c, &mut rng).unwrap();
        assert_exactly_symmetric(&est);

        let mut replay = ChaCha8Rng::seed_from_u64(4);
        let mut acc = vec![0.0; d * d];
        let mut sup_sum: f64 = 1.0; // ‖x0‖∞
        for i in 0..n {
            let ordinal = (i + 1) as f64;
            let lambda_i = c * (sup_sum / ordinal) * ordinal.ln().sqrt();
            let mut q1 = vec![0.0; d];
            let mut q2 = vec![0.0; d];
            for (j, q) in q1.iter_mut().enumerate() {
                let tau = uniform_sym(&mut replay, 1.0);
                *q = lambda_i * sign_q_ref(row[j] + lambda_i * tau);
            }
            for (j, q) in q2.iter_mut().enumerate() {
                let tau = uniform_sym(&mut replay, 1.0);
                *q = lambda_i * sign_q_ref(row[j] + lambda_i * tau);
            }
            for j in 0..d {
                for k in 0..d {
                    acc[j * d + k] += q1[j] * q2[k] + q2[j] * q1[k];
                }
            }
            sup_sum += 1.0; // ‖row‖∞
        }
        for j in 0..d {
            for k in 0..d {
                assert_eq!(est.get(j, k), acc[j * d + k] / (2.0 * n as f64));
            }
        }
    }

    #[test]
    fn est_mb_small_scale_approaches_sample_cov() {
        let spec = SigmaSpec::new(1.0, 0.2, 1.0, 4);
        let x = gaussian_batch(500, &spec, 24);
        let lambda = 1e-6 * column_max_abs(&x).unwrap().iter().fold(0.0_f64, |a, &b| a.max(b));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = est_mb(&x, lambda, &mut rng).unwrap();
        let reference = sample_cov(&x).unwrap();
        let max_x = column_max_abs(&x).unwrap().iter().fold(0.0_f64, |a, &b| a.max(b));
        // noise per entry is bounded by 3λ/2, so cross terms stay O(λ·max|x|)
        let bound = 3.0 * lambda * max_x + 3.0 * lambda * lambda;
        for j in 0..x.d() {
            for k in 0..x.d() {
                assert!((est.get(j, k) - reference.get(j, k)).abs() <= bound);
            }
        }
    }

    #[test]
    fn est_mb_zero_data_unbiased() {
        let n = 100_000;
        let x = SampleBatch::from_vec(n, 2, vec![0.0; 2 * n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let est = est_mb(&x, 1.0, &mut rng).unwrap();
        // ξ has variance 1/4 per coordinate, so diagonal terms have sd
        // ~ E[ξ⁴]^½; 4·SE with a generous constant
        let se = 1.0 / (n as f64).sqrt();
        for j in 0..2 {
            for k in 0..2 {
                assert!(est.get(j, k).abs() <= 4.0 * se, "({j},{k}): {}", est.get(j, k));
            }
        }
    }

    #[test]
    fn tb_equals_mb_when_scale_covers_data() {
        let spec = SigmaSpec::new(1.0, 0.5, 4.0, 6);
        for trial in 0..20 {
            let x = gaussian_batch(200, &spec, 100 + trial);
            let lambda = column_max_abs(&x).unwrap().iter().fold(0.0_f64, |a, &b| a.max(b));
            let mut rng_tb = ChaCha8Rng::seed_from_u64(trial);
            let mut rng_mb = ChaCha8Rng::seed_from_u64(trial);
            let tb = est_tb(&x, lambda, &mut rng_tb).unwrap();
            let mb = est_mb(&x, lambda, &mut rng_mb).unwrap();
            assert_eq!(tb.entries(), mb.entries());
        }
    }

    #[test]
    fn tb_can_differ_from_mb_when_scale_clips() {
        let x = SampleBatch::from_vec(4, 1, vec![10.0, -10.0, 10.0, -10.0]).unwrap();
        let lambda = 0.5;
        let mut rng_tb = ChaCha8Rng::seed_from_u64(7);
        let mut rng_mb = ChaCha8Rng::seed_from_u64(7);
        let tb = est_tb(&x, lambda, &mut rng_tb).unwrap();
        let mb = est_mb(&x, lambda, &mut rng_mb).unwrap();
        assert_ne!(tb.entries(), mb.entries());
    }

    #[test]
    fn est_pf_zero_column_gives_zero_row() {
        let x = SampleBatch::from_rows(vec![
            vec![1.0, 0.0, -0.5],
            vec![-2.0, 0.0, 0.25],
            vec![0.5, 0.0, 1.5],
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = est_pf(&x, 1.0, &mut rng).unwrap();
        for j in 0..3 {
            assert_eq!(est.get(1, j), 0.0);
            assert_eq!(est.get(j, 1), 0.0);
        }
    }

    #[test]
    fn est_pf_matches_quantize_then_estimate() {
        let spec = SigmaSpec::new(1.0, 0.2, 25.0, 5);
        let x = gaussian_batch(100, &spec, 25);
        let mut rng_direct = ChaCha8Rng::seed_from_u64(9);
        let direct = est_pf(&x, 0.5, &mut rng_direct).unwrap();

        let scales = column_max_abs(&x).unwrap();
        let mut rng_pipeline = ChaCha8Rng::seed_from_u64(9);
        let batch = quantize_batch(&x, &scales, 0.5, &mut rng_pipeline).unwrap();
        let pipeline = estimate_from_quantized(&batch).unwrap();
        assert_eq!(direct.entries(), pipeline.entries());
    }

    #[test]
    fn est_pf_scale_equivariant() {
        let spec = SigmaSpec::new(1.0, 0.2, 10.0, 4);
        let x = gaussian_batch(64, &spec, 26);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = est_pf(&x, 0.7, &mut rng).unwrap();

        // powers of two rescale exactly, bit for bit
        for c in [2.0_f64, 0.5, 1024.0, 2.0_f64.powi(-10)] {
            let scaled_x = x.scaled(c).unwrap();
            let mut rng_c = ChaCha8Rng::seed_from_u64(10);
            let scaled = est_pf(&scaled_x, 0.7, &mut rng_c).unwrap();
            let expect = base.scaled(c * c);
            assert_eq!(scaled.entries(), expect.entries(), "c = {c}");
        }

        // a general factor agrees to rounding error
        let c = 3.7;
        let scaled_x = x.scaled(c).unwrap();
        let mut rng_c = ChaCha8Rng::seed_from_u64(10);
        let scaled = est_pf(&scaled_x, 0.7, &mut rng_c).unwrap();
        let norm = base.max_abs_entry() * c * c;
        for j in 0..x.d() {
            for k in 0..x.d() {
                assert!((scaled.get(j, k) - c * c * base.get(j, k)).abs() <= 1e-12 * norm);
            }
        }
    }

    #[test]
    fn est_adaptive_sign_zero_column_gives_zero_row() {
        let x = SampleBatch::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = est_adaptive_sign(&x, &mut rng).unwrap();
        assert_eq!(est.get(0, 1), 0.0);
        assert_eq!(est.get(1, 1), 0.0);
    }

    #[test]
    fn estimators_are_deterministic_and_symmetric() {
        let spec = SigmaSpec::new(1.0, 0.2, 10.0, 5);
        let x = gaussian_batch(200, &spec, 27);
        let x0 = vec![0.3, -0.6, 1.0, 0.0, 2.0];
        let specs = [
            EstimatorSpec::Sample,
            EstimatorSpec::Na {
                scale: ScaleRule::CSqrtLogN(0.7),
            },
            EstimatorSpec::AdaptiveNa { c: 0.35 },
            EstimatorSpec::Mb {
                scale: ScaleRule::Lambda(2.0),
            },
            EstimatorSpec::Tb {
                scale: ScaleRule::Lambda(2.0),
            },
            EstimatorSpec::Pf { shrink: 0.5 },
            EstimatorSpec::AdaptiveSign,
        ];
        for spec in specs {
            let mut rng1 = ChaCha8Rng::seed_from_u64(12);
            let mut rng2 = ChaCha8Rng::seed_from_u64(12);
            let a = spec.evaluate(&x, Some(&x0), &mut rng1).unwrap();
            let b = spec.evaluate(&x, Some(&x0), &mut rng2).unwrap();
            assert_eq!(a.entries(), b.entries(), "{}", spec.tag());
            assert_exactly_symmetric(&a);
        }
    }

    #[test]
    fn conditional_unbiasedness_over_dither_draws() {
        // fixed X, average over dither repetitions: the dithered estimators
        // all center on the sample covariance
        let spec = SigmaSpec::new(1.0, 0.2, 1.0, 5);
        let x = gaussian_batch(50, &spec, 28);
        let reference = sample_cov(&x).unwrap();
        let lambda = column_max_abs(&x).unwrap().iter().fold(0.0_f64, |a, &b| a.max(b));
        let reps = 2000;

        type Runner<'a> = Box<dyn Fn(&mut ChaCha8Rng) -> SymMatrix + 'a>;
        let runners: Vec<(&str, Runner)> = vec![
            ("pf", Box::new(|rng: &mut ChaCha8Rng| est_pf(&x, 1.0, rng).unwrap())),
            ("mb", Box::new(|rng: &mut ChaCha8Rng| est_mb(&x, lambda, rng).unwrap())),
            // the multi-bit estimator stays centered even when the scale
            // does not cover the data
            ("mb(2)", Box::new(|rng: &mut ChaCha8Rng| est_mb(&x, 2.0, rng).unwrap())),
            ("na", Box::new(|rng: &mut ChaCha8Rng| est_na(&x, lambda, rng).unwrap())),
            (
                "adaptive_sign",
                Box::new(|rng: &mut ChaCha8Rng| est_adaptive_sign(&x, rng).unwrap()),
            ),
        ];

        let d = x.d();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (name, run) in runners {
            let mut sum = vec![0.0; d * d];
            let mut sum_sq = vec![0.0; d * d];
            for _ in 0..reps {
                let est = run(&mut rng);
                for j in 0..d {
                    for k in 0..d {
                        let v = est.get(j, k);
                        sum[j * d + k] += v;
                        sum_sq[j * d + k] += v * v;
                    }
                }
            }
            let rf = reps as f64;
            for j in 0..d {
                for k in 0..d {
                    let mean = sum[j * d + k] / rf;
                    let sd = (sum_sq[j * d + k] / rf - mean * mean).max(0.0).sqrt();
                    let se = sd / rf.sqrt();
                    let bias = (mean - reference.get(j, k)).abs();
                    assert!(
                        bias <= 5.0 * se,
                        "{name} ({j},{k}): bias {bias} vs 5·SE {}",
                        5.0 * se
                    );
                }
            }
        }
    }

    #[test]
    fn spec_validation_errors() {
        let x = SampleBatch::from_rows(vec![vec![1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        assert!(matches!(
            est_na(&x, 0.0, &mut rng),
            Err(EstimatorError::BadScale(_))
        ));
        assert!(matches!(
            est_pf(&x, 0.0, &mut rng),
            Err(EstimatorError::BadShrink(_))
        ));
        assert!(matches!(
            est_pf(&x, 1.5, &mut rng),
            Err(EstimatorError::BadShrink(_))
        ));
        assert!(matches!(
            est_adaptive_na(&x, &[1.0, 2.0], 1.0, &mut rng),
            Err(EstimatorError::ExtraSampleLength { .. })
        ));
        assert!(matches!(
            est_adaptive_na(&x, &[f64::NAN], 1.0, &mut rng),
            Err(EstimatorError::NonFinite)
        ));
        let spec = EstimatorSpec::AdaptiveNa { c: 1.0 };
        assert!(matches!(
            spec.evaluate(&x, None, &mut rng),
            Err(EstimatorError::MissingExtraSample)
        ));
    }

    #[test]
    fn psd_clip_removes_negative_eigenvalues() {
        let m = SymMatrix::from_entries(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let clipped = psd_clip(&m).unwrap();
        let eig = clipped.sym_eigen().unwrap();
        assert!(eig.values.iter().all(|&v| v >= -1e-12));
        assert!((eig.values[0] - 3.0).abs() < 1e-9);
    }
}
