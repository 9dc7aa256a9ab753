//! Monte Carlo sweep harness: error-vs-scale-constant, error-vs-n, and
//! error-vs-d studies over the structured covariance family, with paired
//! repetitions and CSV output.
//!
//! Determinism contract: repetition `r` at grid point `g` derives its
//! random stream from `(base_seed, g, r)` alone. Within a repetition the
//! stream is forked once for sampling and then once per estimator in list
//! order, so every estimator sees the identical sample batch (paired
//! comparison), each estimator owns an independent dither stream, and
//! appending estimators to the list never changes existing results. Grid
//! cells are embarrassingly parallel; output is identical for any worker
//! count.

use std::io::{self, Write};

use thiserror::Error;

use crate::estimators::{EstimatorError, EstimatorSpec};
use crate::linalg::{LinalgError, Mat, SigmaSpec, SymMatrix};
use crate::sampling::{sample_gaussian_with_factor, SampleError, SeedSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("no records to aggregate")]
    Empty,
    #[error("no aggregate rows match estimator {0}")]
    NoMatch(String),
    #[error("rate fit needs at least {min_points} n-values spanning a {min_span}x range")]
    InsufficientGrid { min_points: usize, min_span: f64 },
    #[error("estimator {0} appears with multiple parameter values; pass one explicitly")]
    Ambiguous(String),
    #[error("log-log fit needs strictly positive mean errors")]
    NonPositiveMean,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Declarative description of one sweep.
///
/// Exactly one axis may vary: several `n_values` (n-sweep), several
/// `d_values` (d-sweep), or a `c_grid` (scale-constant sweep, with single
/// `n` and `d`). `sigma.dim` must equal the first `d` value; d-sweeps
/// re-materialize the matrix at each grid dimension.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sigma: SigmaSpec,
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub c_grid: Option<Vec<f64>>,
    pub base_seed: u64,
}

/// The default grid for scale-constant sweeps: 0.05 to 2.0 in steps of
/// 0.05.
pub fn default_c_grid() -> Vec<f64> {
    (1..=40).map(|k| k as f64 * 0.05).collect()
}

/// Default repetition count for the shipped studies.
pub const DEFAULT_REPS: usize = 50;

/// One repetition of one estimator at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub grid_index: usize,
    pub n: usize,
    pub d: usize,
    /// Estimator with its resolved parameters (scale-constant sweeps
    /// substitute the grid value here).
    pub estimator: EstimatorSpec,
    pub rep: usize,
    /// Operator norm of `estimate − Σ`.
    pub op_error: f64,
    /// Frobenius norm of `estimate − Σ`; informational only.
    pub fro_error: f64,
    /// Stream identifier of this repetition, for reproducing single cells.
    pub seed: u64,
}

/// Mean and standard deviation of the operator-norm error over the
/// repetitions at one (grid point, estimator) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub grid_index: usize,
    pub n: usize,
    pub d: usize,
    pub estimator: EstimatorSpec,
    pub mean_op_error: f64,
    pub sd_op_error: f64,
    pub count: usize,
}

struct GridPoint {
    index: usize,
    n: usize,
    d: usize,
    c: Option<f64>,
    sigma: SymMatrix,
    factor: Mat,
}

fn validate(spec: &ExperimentSpec) -> Result<(), ExperimentError> {
    let bad = |msg: &str| Err(ExperimentError::InvalidSpec(msg.to_string()));
    if spec.reps == 0 {
        return bad("reps must be at least 1");
    }
    if spec.estimators.is_empty() {
        return bad("estimator list must be non-empty");
    }
    if spec.n_values.is_empty() || spec.d_values.is_empty() {
        return bad("n and d grids must be non-empty");
    }
    if spec.n_values.contains(&0) {
        return bad("every n must be at least 1");
    }
    if spec.d_values.contains(&0) {
        return bad("every d must be at least 1");
    }
    let n_sweep = spec.n_values.len() > 1;
    let d_sweep = spec.d_values.len() > 1;
    let c_sweep = spec.c_grid.is_some();
    if (n_sweep && d_sweep) || (c_sweep && (n_sweep || d_sweep)) {
        return bad("only one of the n, d, and C axes may vary");
    }
    if let Some(cs) = &spec.c_grid {
        if cs.is_empty() {
            return bad("C grid must be non-empty");
        }
        if !cs.iter().all(|c| c.is_finite() && *c > 0.0) {
            return bad("C grid values must be positive");
        }
    }
    if spec.sigma.dim != spec.d_values[0] {
        return bad("sigma dimension must match the first d value");
    }
    Ok(())
}

fn build_points(spec: &ExperimentSpec) -> Result<Vec<GridPoint>, ExperimentError> {
    validate(spec)?;
    let mut points = Vec::new();
    let mut push = |index: usize, n: usize, d: usize, c: Option<f64>| -> Result<(), ExperimentError> {
        let sigma = spec.sigma.with_dim(d).materialize()?;
        let factor = sigma.sampling_factor()?;
        points.push(GridPoint {
            index,
            n,
            d,
            c,
            sigma,
            factor,
        });
        Ok(())
    };
    if let Some(cs) = &spec.c_grid {
        for (index, &c) in cs.iter().enumerate() {
            push(index, spec.n_values[0], spec.d_values[0], Some(c))?;
        }
    } else if spec.d_values.len() > 1 {
        for (index, &d) in spec.d_values.iter().enumerate() {
            push(index, spec.n_values[0], d, None)?;
        }
    } else {
        for (index, &n) in spec.n_values.iter().enumerate() {
            push(index, n, spec.d_values[0], None)?;
        }
    }
    Ok(points)
}

fn run_cell(
    spec: &ExperimentSpec,
    point: &GridPoint,
    rep: usize,
) -> Result<Vec<RunRecord>, ExperimentError> {
    let seed_spec = SeedSpec::new(spec.base_seed, point.index as u64, rep as u64);
    let mut rep_stream = seed_spec.stream();
    let mut sample_stream = crate::sampling::fork_stream(&mut rep_stream);
    let x = sample_gaussian_with_factor(point.n, &point.factor, &mut sample_stream);
    // the extra sample seeding running-scale estimators is always drawn so
    // the estimator list never influences the batch
    let extra = sample_gaussian_with_factor(1, &point.factor, &mut sample_stream);
    let x0 = extra.row(0);

    let mut records = Vec::with_capacity(spec.estimators.len());
    for est in &spec.estimators {
        let mut dither_stream = crate::sampling::fork_stream(&mut rep_stream);
        let resolved = match point.c {
            Some(c) => est.with_c(c),
            None => *est,
        };
        let estimate = resolved.evaluate(&x, Some(x0), &mut dither_stream)?;
        let diff = estimate.sub(&point.sigma)?;
        records.push(RunRecord {
            grid_index: point.index,
            n: point.n,
            d: point.d,
            estimator: resolved,
            rep,
            op_error: diff.operator_norm()?,
            fro_error: diff.frobenius_norm(),
            seed: seed_spec.stream_id(),
        });
    }
    Ok(records)
}

/// Runs every (grid point × repetition) cell sequentially, in grid-major
/// order. Output is identical to [`run_grid`].
pub fn run_grid_sequential(spec: &ExperimentSpec) -> Result<Vec<RunRecord>, ExperimentError> {
    let points = build_points(spec)?;
    let mut records = Vec::new();
    for point in &points {
        for rep in 0..spec.reps {
            records.extend(run_cell(spec, point, rep)?);
        }
    }
    Ok(records)
}

/// Runs the sweep with cells distributed over the current rayon pool.
/// Record order and content are identical to [`run_grid_sequential`] for
/// any worker count.
#[cfg(feature = "parallel")]
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<RunRecord>, ExperimentError> {
    use rayon::prelude::*;
    let points = build_points(spec)?;
    let cells: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.reps).map(move |r| (p, r)))
        .collect();
    let nested = cells
        .par_iter()
        .map(|&(p, r)| run_cell(spec, &points[p], r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<RunRecord>, ExperimentError> {
    run_grid_sequential(spec)
}

/// Per-(grid point, estimator) mean and sample standard deviation of the
/// operator-norm error, in first-occurrence order.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<AggregateStats>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::Empty);
    }
    struct Group {
        grid_index: usize,
        n: usize,
        d: usize,
        estimator: EstimatorSpec,
        errors: Vec<f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for rec in records {
        match groups
            .iter_mut()
            .find(|g| g.grid_index == rec.grid_index && g.estimator == rec.estimator)
        {
            Some(g) => g.errors.push(rec.op_error),
            None => groups.push(Group {
                grid_index: rec.grid_index,
                n: rec.n,
                d: rec.d,
                estimator: rec.estimator,
                errors: vec![rec.op_error],
            }),
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| {
            let count = g.errors.len();
            let mean = g.errors.iter().sum::<f64>() / count as f64;
            let sd = if count > 1 {
                (g.errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / (count - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            AggregateStats {
                grid_index: g.grid_index,
                n: g.n,
                d: g.d,
                estimator: g.estimator,
                mean_op_error: mean,
                sd_op_error: sd,
                count,
            }
        })
        .collect())
}

/// The grid argmin of the mean error for a C-swept estimator, with ties
/// broken toward smaller C. Returns `(C*, minimum mean error)`.
pub fn best_c(stats: &[AggregateStats], tag: &str) -> Result<(f64, f64), ExperimentError> {
    let mut best: Option<(f64, f64)> = None;
    for s in stats.iter().filter(|s| s.estimator.tag() == tag) {
        let ("C", Some(c)) = s.estimator.param() else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bc, bm)) => {
                s.mean_op_error < bm || (s.mean_op_error == bm && c < bc)
            }
        };
        if better {
            best = Some((c, s.mean_op_error));
        }
    }
    best.ok_or_else(|| ExperimentError::NoMatch(tag.to_string()))
}

/// Least-squares slope of `ln(mean error)` against `ln(n)` for one
/// estimator over an n-sweep. Requires at least four distinct `n` spanning
/// a 4x range. `param_value` selects among parameter variants of the same
/// tag; it may be omitted when only one variant is present.
pub fn rate_slope(
    stats: &[AggregateStats],
    tag: &str,
    param_value: Option<f64>,
) -> Result<f64, ExperimentError> {
    let selected: Vec<&AggregateStats> = stats
        .iter()
        .filter(|s| {
            s.estimator.tag() == tag
                && match param_value {
                    Some(p) => s.estimator.param().1 == Some(p),
                    None => true,
                }
        })
        .collect();
    if selected.is_empty() {
        return Err(ExperimentError::NoMatch(tag.to_string()));
    }
    let first_param = selected[0].estimator.param().1;
    if selected.iter().any(|s| s.estimator.param().1 != first_param) {
        return Err(ExperimentError::Ambiguous(tag.to_string()));
    }

    let mut ns: Vec<usize> = selected.iter().map(|s| s.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let span_ok = ns.len() >= 4
        && (*ns.last().unwrap() as f64) / (ns[0] as f64) >= 4.0;
    if !span_ok {
        return Err(ExperimentError::InsufficientGrid {
            min_points: 4,
            min_span: 4.0,
        });
    }
    if selected.iter().any(|s| s.mean_op_error <= 0.0) {
        return Err(ExperimentError::NonPositiveMean);
    }

    let points: Vec<(f64, f64)> = selected
        .iter()
        .map(|s| ((s.n as f64).ln(), s.mean_op_error.ln()))
        .collect();
    let count = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / count;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    Ok(sxy / sxx)
}

fn fmt_param(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one CSV row per record. Schema:
/// `n,d,sigma_a,sigma_b,sigma_c,estimator,param_name,param_value,rep,op_error,fro_error,seed`.
pub fn write_records_csv<W: Write>(
    mut w: W,
    sigma: &SigmaSpec,
    records: &[RunRecord],
) -> io::Result<()> {
    writeln!(
        w,
        "n,d,sigma_a,sigma_b,sigma_c,estimator,param_name,param_value,rep,op_error,fro_error,seed"
    )?;
    for r in records {
        let (pname, pvalue) = r.estimator.param();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.d,
            sigma.a,
            sigma.b,
            sigma.c,
            r.estimator.tag(),
            pname,
            fmt_param(pvalue),
            r.rep,
            r.op_error,
            r.fro_error,
            r.seed
        )?;
    }
    Ok(())
}

/// Writes one CSV row per aggregate. Schema:
/// `n,d,estimator,param_value,mean_op_error,sd_op_error,reps`.
pub fn write_aggregates_csv<W: Write>(mut w: W, stats: &[AggregateStats]) -> io::Result<()> {
    writeln!(w, "n,d,estimator,param_value,mean_op_error,sd_op_error,reps")?;
    for s in stats {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.n,
            s.d,
            s.estimator.tag(),
            fmt_param(s.estimator.param().1),
            s.mean_op_error,
            s.sd_op_error,
            s.count
        )?;
    }
    Ok(())
}

pub fn records_csv_string(sigma: &SigmaSpec, records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_records_csv(&mut buf, sigma, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn aggregates_csv_string(stats: &[AggregateStats]) -> String {
    let mut buf = Vec::new();
    write_aggregates_csv(&mut buf, stats).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}
