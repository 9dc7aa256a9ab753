//! Randomized self-checks of the quantization noise model, reusable from
//! tests and exposed through the CLI `verify` subcommand.
//!
//! The checks cover: agreement of the two-bit and uniform quantizers on
//! dithered signals bounded by the scale; the moment properties of the
//! quantization noise under triangular dither (hard bound `3λ/2`, zero
//! mean, second moment `λ²/4`, cross-coordinate uncorrelatedness); and the
//! equivalence of quantizing at a scale versus quantizing scale-normalized
//! data at unit scale.

use rand::Rng;

use crate::quant::{self, rescale_identity_check};
use crate::sampling::SampleBatch;

/// Outcome of one check, with the measured statistics in human- and
/// machine-readable `key=value` form.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs every check with `trials` randomized draws each (the rescale check
/// interprets `trials` as a total entry count).
pub fn run_all<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> VerifyReport {
    let mut checks = vec![check_quantizer_equivalence(trials, rng)];
    checks.extend(check_noise_moments(trials, rng));
    checks.push(check_cross_independence(trials, rng));
    checks.push(check_rescale_identity(trials, rng));
    VerifyReport { checks }
}

/// `q_2bit(a + τ, λ) == q_uniform(a + τ, λ)` must hold verbatim whenever
/// `|a| < λ` and `τ` is a triangular dither at scale `λ`.
pub fn check_quantizer_equivalence<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> CheckResult {
    let mut violations = 0usize;
    for _ in 0..trials {
        let lambda = rng.random_range(0.1..10.0);
        let a = loop {
            let u: f64 = rng.random_range(-1.0..1.0);
            if u.abs() < 1.0 {
                break u * lambda;
            }
        };
        let arg = a + crate::quant::triangular_scaled(rng, lambda);
        let uniform = quant::q_uniform(arg, lambda).expect("finite by construction");
        let two_bit = quant::q_2bit(arg, lambda).expect("finite by construction");
        if uniform != two_bit {
            violations += 1;
        }
    }
    CheckResult {
        name: "two_bit_matches_uniform".into(),
        pass: violations == 0,
        details: format!("violations={violations} trials={trials}"),
    }
}

/// Noise moments of the dithered uniform quantizer at λ = 1 for a grid of
/// fixed inputs: `|ξ| ≤ 3/2` always, `|mean ξ| ≤ 4·sd/√N`, and
/// `|mean ξ² − 1/4| ≤ 4·sd/√N`.
pub fn check_noise_moments<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Vec<CheckResult> {
    let lambda = 1.0;
    [0.0, 0.3, -0.3, 0.9, -0.9, 2.7, -2.7]
        .iter()
        .map(|&a| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut sum_4 = 0.0;
            let mut max_abs: f64 = 0.0;
            for _ in 0..trials {
                let tau = crate::quant::triangular_scaled(rng, lambda);
                let xi = quant::q_uniform(a + tau, lambda).expect("finite") - a;
                max_abs = max_abs.max(xi.abs());
                sum += xi;
                sum_sq += xi * xi;
                sum_4 += xi * xi * xi * xi;
            }
            let nf = trials as f64;
            let mean = sum / nf;
            let m2 = sum_sq / nf;
            let sd = (m2 - mean * mean).max(0.0).sqrt();
            let sd2 = (sum_4 / nf - m2 * m2).max(0.0).sqrt();
            let mean_tol = 4.0 * sd / nf.sqrt();
            let m2_tol = 4.0 * sd2 / nf.sqrt();
            let bound_ok = max_abs <= 1.5 * lambda;
            let mean_ok = mean.abs() <= mean_tol;
            let m2_ok = (m2 - lambda * lambda / 4.0).abs() <= m2_tol;
            CheckResult {
                name: format!("noise_moments[a={a}]"),
                pass: bound_ok && mean_ok && m2_ok,
                details: format!(
                    "max_abs={max_abs:.6} bound={} mean={mean:+.3e} mean_tol={mean_tol:.3e} \
                     m2_minus_quarter={:+.3e} m2_tol={m2_tol:.3e}",
                    1.5 * lambda,
                    m2 - 0.25,
                ),
            }
        })
        .collect()
}

/// Quantization noises of distinct coordinates are uncorrelated:
/// `|mean ξ₁ξ₂| ≤ 4·sd/√N` for a fixed 2-vector input.
pub fn check_cross_independence<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> CheckResult {
    let (a1, a2) = (0.3, -0.7);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let xi1 = quant::q_uniform(a1 + crate::quant::triangular_scaled(rng, 1.0), 1.0)
            .expect("finite")
            - a1;
        let xi2 = quant::q_uniform(a2 + crate::quant::triangular_scaled(rng, 1.0), 1.0)
            .expect("finite")
            - a2;
        sum += xi1 * xi2;
        sum_sq += (xi1 * xi2) * (xi1 * xi2);
    }
    let nf = trials as f64;
    let mean = sum / nf;
    let sd = (sum_sq / nf - mean * mean).max(0.0).sqrt();
    let tol = 4.0 * sd / nf.sqrt();
    CheckResult {
        name: "noise_cross_independence".into(),
        pass: mean.abs() <= tol,
        details: format!("mean_product={mean:+.3e} tol={tol:.3e}"),
    }
}

/// Quantize-then-scale versus scale-then-quantize: identical codes on
/// every entry away from cell boundaries, over random batches with
/// per-column scales in `[0.1, 10]`.
pub fn check_rescale_identity<R: Rng + ?Sized>(entries: usize, rng: &mut R) -> CheckResult {
    let d = 8;
    let batches = 10;
    let n = (entries / (d * batches)).max(1);
    let mut all_agree = true;
    for _ in 0..batches {
        let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..10.0)).collect();
        let values: Vec<f64> = (0..n * d)
            .map(|t| {
                let j = t % d;
                rng.random_range(-3.0 * scales[j]..3.0 * scales[j])
            })
            .collect();
        let x = SampleBatch::from_vec(n, d, values).expect("finite by construction");
        let tau: Vec<f64> = (0..n * d)
            .map(|_| crate::quant::triangular_unit(rng))
            .collect();
        if !rescale_identity_check(&x, &scales, &tau).expect("valid inputs") {
            all_agree = false;
        }
    }
    CheckResult {
        name: "rescale_identity".into(),
        pass: all_agree,
        details: format!("batches={batches} entries_per_batch={}", n * d),
    }
}
