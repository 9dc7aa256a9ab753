//! Command-line interface for two-bit dithered covariance estimation:
//! single-shot estimation, the packed-batch codec, sweep studies, and the
//! randomized quantization self-checks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bitcov::codec::{self, CodecError};
use bitcov::estimators::{estimate_from_quantized, EstimatorError, EstimatorSpec, ScaleRule};
use bitcov::experiments::{
    aggregate, best_c, run_grid, run_grid_sequential, write_aggregates_csv, write_records_csv,
    ExperimentError, ExperimentSpec, DEFAULT_REPS,
};
use bitcov::linalg::{LinalgError, SigmaSpec, SymMatrix};
use bitcov::quant::{quantize_batch, QuantError};
use bitcov::sampling::{column_max_abs, SampleBatch, SampleError, SeedSpec};
use bitcov::verify;

/// Default seed, fixed so published commands are copy-paste deterministic.
const DEFAULT_SEED: u64 = 20240601;

const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_VERIFY: u8 = 5;
const EXIT_IO: u8 = 6;
const EXIT_DOMAIN: u8 = 7;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Parse(String),
    Format(String),
    VerifyFailed,
    Io(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Format(_) => EXIT_FORMAT,
            CliError::VerifyFailed => EXIT_VERIFY,
            CliError::Io(_) => EXIT_IO,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("usage error: {m}"),
            CliError::Parse(m) => format!("parse error: {m}"),
            CliError::Format(m) => format!("format error: {m}"),
            CliError::VerifyFailed => "verification failed".to_string(),
            CliError::Io(m) => format!("io error: {m}"),
            CliError::Domain(m) => format!("input error: {m}"),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::EmptyBatch => CliError::Domain(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::EmptyBatch => CliError::Domain(e.to_string()),
            EstimatorError::BadScale(_)
            | EstimatorError::BadConstant(_)
            | EstimatorError::BadShrink(_)
            | EstimatorError::MissingExtraSample => CliError::Usage(e.to_string()),
            EstimatorError::Quant(q) => q.into(),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<QuantError> for CliError {
    fn from(e: QuantError) -> Self {
        match e {
            QuantError::BadShrink(_) | QuantError::BadScale(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            ExperimentError::Linalg(LinalgError::NotPsd { .. }) => CliError::Domain(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bitcov",
    version,
    about = "Covariance estimation from two-bit dithered quantization",
    long_about = "Estimates covariance matrices from samples quantized to two bits per \
                  entry, exposes the packed-batch codec, and reproduces the error-vs-C, \
                  error-vs-n, and error-vs-d sweep studies. All commands are deterministic \
                  given --seed."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate a covariance matrix from a CSV of samples (rows = samples).
    Estimate(EstimateArgs),
    /// Quantize samples into a packed two-bit batch file.
    Quantize(QuantizeArgs),
    /// Reconstruct the covariance estimate from a packed batch file.
    DequantizeEstimate(DequantizeArgs),
    /// Sweep the scale constant C at fixed (n, d).
    SweepC(SweepArgs),
    /// Sweep the sample count n at fixed d.
    SweepN(SweepArgs),
    /// Sweep the dimension d at fixed n.
    SweepD(SweepArgs),
    /// Run the randomized quantization self-checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV of samples, no header, one sample per row.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV for the d x d estimate (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// One of: sample, na, adaptive-na, mb, tb, pf, adaptive-sign.
    /// na/mb/tb take exactly one of --lambda/--c; adaptive-na takes --c and
    /// uses the first input row to seed its running scale; pf takes
    /// --shrink and needs no scale at all.
    #[arg(long)]
    estimator: String,
    /// Fixed dither scale for na/mb/tb.
    #[arg(long)]
    lambda: Option<f64>,
    /// Scale constant: na/mb/tb use lambda = C*sqrt(ln n); adaptive-na uses
    /// it as the running-scale multiplier.
    #[arg(long)]
    c: Option<f64>,
    /// Shrink factor in (0, 1] for pf (default 1).
    #[arg(long)]
    shrink: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Reference covariance CSV; when given, the operator-norm error of the
    /// estimate is printed.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Input CSV of samples, no header, one sample per row.
    #[arg(long)]
    input: PathBuf,
    /// Output path for the packed batch file.
    #[arg(long)]
    output: PathBuf,
    /// Shrink factor in (0, 1] applied to the per-column scales.
    #[arg(long, default_value_t = 1.0)]
    shrink: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct DequantizeArgs {
    /// Packed batch file produced by `quantize`.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV for the d x d estimate (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Covariance family parameters as `a,b,c`: diagonal [c, a, ..., a],
    /// off-diagonal b.
    #[arg(long)]
    sigma: String,
    /// Sample count: a single value, or `start:step:stop` for sweep-n.
    #[arg(long)]
    n: String,
    /// Dimension: a single value, or `start:step:stop` for sweep-d.
    #[arg(long)]
    d: String,
    /// C grid as `start:step:stop` (sweep-c only).
    #[arg(long, default_value = "0.05:0.05:2.0")]
    c_grid: String,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output prefix; writes `<out>.records.csv` and `<out>.aggregate.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Comma list of estimators, e.g.
    /// `sample,na:C=0.7,tb:lambda=1.2,pf:s=0.5,adaptive-na:C=0.35,adaptive-sign`.
    /// sweep-c default: `sample,na,adaptive-na,tb` (bare C-swept tags take
    /// the grid value). sweep-n/sweep-d default:
    /// `sample,na:C=0.7,tb:C=0.65,pf:s=1,pf:s=0.9,pf:s=0.7,pf:s=0.5`.
    #[arg(long)]
    estimators: Option<String>,
    /// Worker thread count for grid cells; output is identical for any
    /// value. Falls back to the BITCOV_WORKERS environment variable, then
    /// to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Randomized draws per check.
    #[arg(long, default_value_t = 1_000_000)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Estimate(args) => cmd_estimate(args),
        Cmd::Quantize(args) => cmd_quantize(args),
        Cmd::DequantizeEstimate(args) => cmd_dequantize_estimate(args),
        Cmd::SweepC(args) => cmd_sweep(args, SweepAxis::C),
        Cmd::SweepN(args) => cmd_sweep(args, SweepAxis::N),
        Cmd::SweepD(args) => cmd_sweep(args, SweepAxis::D),
        Cmd::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("bitcov: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

// ---------------------------------------------------------------------------
// matrix CSV I/O
// ---------------------------------------------------------------------------

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line
            .split(',')
            .map(|field| field.trim().parse::<f64>())
            .collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(CliError::Parse(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(rows)
}

fn read_batch_csv(path: &Path) -> Result<SampleBatch, CliError> {
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(CliError::Domain(format!("{}: no samples", path.display())));
    }
    Ok(SampleBatch::from_rows(rows)?)
}

fn read_matrix_csv(path: &Path) -> Result<SymMatrix, CliError> {
    let rows = read_rows(path)?;
    let dim = rows.len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::Parse(format!(
            "{}: expected a square matrix",
            path.display()
        )));
    }
    let entries: Vec<f64> = rows.into_iter().flatten().collect();
    SymMatrix::from_entries(dim, entries)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn matrix_to_csv(m: &SymMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.dim() {
        let row: Vec<String> = (0..m.dim()).map(|j| m.get(i, j).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            fs::write(p, content).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let reject = |flag: &str, tag: &str| -> CliError {
        CliError::Usage(format!("--{flag} does not apply to estimator {tag}"))
    };
    let scale_rule = |args: &EstimateArgs, tag: &str| -> Result<ScaleRule, CliError> {
        match (args.lambda, args.c) {
            (Some(l), None) => Ok(ScaleRule::Lambda(l)),
            (None, Some(c)) => Ok(ScaleRule::CSqrtLogN(c)),
            (None, None) => Err(CliError::Usage(format!(
                "estimator {tag} needs --lambda or --c"
            ))),
            (Some(_), Some(_)) => Err(CliError::Usage(format!(
                "estimator {tag} takes only one of --lambda/--c"
            ))),
        }
    };

    let tag = args.estimator.as_str();
    let spec = match tag {
        "sample" | "adaptive-sign" => {
            if args.lambda.is_some() {
                return Err(reject("lambda", tag));
            }
            if args.c.is_some() {
                return Err(reject("c", tag));
            }
            if args.shrink.is_some() {
                return Err(reject("shrink", tag));
            }
            if tag == "sample" {
                EstimatorSpec::Sample
            } else {
                EstimatorSpec::AdaptiveSign
            }
        }
        "na" | "mb" | "tb" => {
            if args.shrink.is_some() {
                return Err(reject("shrink", tag));
            }
            let scale = scale_rule(&args, tag)?;
            match tag {
                "na" => EstimatorSpec::Na { scale },
                "mb" => EstimatorSpec::Mb { scale },
                _ => EstimatorSpec::Tb { scale },
            }
        }
        "adaptive-na" => {
            if args.lambda.is_some() {
                return Err(reject("lambda", tag));
            }
            if args.shrink.is_some() {
                return Err(reject("shrink", tag));
            }
            let c = args
                .c
                .ok_or_else(|| CliError::Usage("estimator adaptive-na needs --c".into()))?;
            EstimatorSpec::AdaptiveNa { c }
        }
        "pf" => {
            if args.lambda.is_some() {
                return Err(reject("lambda", tag));
            }
            if args.c.is_some() {
                return Err(reject("c", tag));
            }
            EstimatorSpec::Pf {
                shrink: args.shrink.unwrap_or(1.0),
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown estimator {other}; expected sample, na, adaptive-na, mb, tb, pf, or adaptive-sign"
            )))
        }
    };

    let full = read_batch_csv(&args.input)?;
    // the running-scale estimator consumes the first row as its extra sample
    let (batch, extra): (SampleBatch, Option<Vec<f64>>) = if spec.needs_extra_sample() {
        if full.n() < 2 {
            return Err(CliError::Domain(
                "adaptive-na needs at least two rows (the first seeds its running scale)".into(),
            ));
        }
        let x0 = full.row(0).to_vec();
        let rest: Vec<Vec<f64>> = (1..full.n()).map(|i| full.row(i).to_vec()).collect();
        (SampleBatch::from_rows(rest)?, Some(x0))
    } else {
        (full, None)
    };

    let mut rng = SeedSpec::new(args.seed, 0, 0).stream();
    let estimate = spec.evaluate(&batch, extra.as_deref(), &mut rng)?;
    write_output(args.output.as_deref(), &matrix_to_csv(&estimate))?;

    if let Some(truth_path) = &args.truth {
        let truth = read_matrix_csv(truth_path)?;
        let diff = estimate
            .sub(&truth)
            .map_err(|e| CliError::Domain(e.to_string()))?;
        let err = diff
            .operator_norm()
            .map_err(|e| CliError::Domain(e.to_string()))?;
        let line = format!("op_error={err}");
        if args.output.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// quantize / dequantize-estimate
// ---------------------------------------------------------------------------

fn cmd_quantize(args: QuantizeArgs) -> Result<(), CliError> {
    let batch = read_batch_csv(&args.input)?;
    let scales = column_max_abs(&batch)?;
    let mut rng = SeedSpec::new(args.seed, 0, 0).stream();
    let quantized = quantize_batch(&batch, &scales, args.shrink, &mut rng)?;
    let bytes = codec::to_bytes(&quantized);
    fs::write(&args.output, bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.output.display())))?;
    eprintln!(
        "wrote {} ({} samples x {} dims, {} bytes)",
        args.output.display(),
        quantized.n(),
        quantized.d(),
        codec::file_size(quantized.n(), quantized.d())
    );
    Ok(())
}

fn cmd_dequantize_estimate(args: DequantizeArgs) -> Result<(), CliError> {
    let bytes = fs::read(&args.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.input.display())))?;
    let quantized = codec::from_bytes(&bytes)?;
    let estimate = estimate_from_quantized(&quantized)?;
    write_output(args.output.as_deref(), &matrix_to_csv(&estimate))
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

enum SweepAxis {
    C,
    N,
    D,
}

fn parse_sigma(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("--sigma expects a,b,c, got {s}")));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse::<f64>()
            .map_err(|e| CliError::Usage(format!("--sigma component {p}: {e}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn parse_usize_grid(s: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    let parse_one = |p: &str| -> Result<usize, CliError> {
        p.trim()
            .parse::<usize>()
            .map_err(|e| CliError::Usage(format!("--{flag} value {p}: {e}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => Ok(vec![parse_one(parts[0])?]),
        3 => {
            let (start, step, stop) =
                (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
            if step == 0 {
                return Err(CliError::Usage(format!("--{flag} step must be positive")));
            }
            if stop < start {
                return Err(CliError::Usage(format!("--{flag} stop below start")));
            }
            Ok((start..=stop).step_by(step).collect())
        }
        _ => Err(CliError::Usage(format!(
            "--{flag} expects a value or start:step:stop, got {s}"
        ))),
    }
}

fn parse_c_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parse_one = |p: &str| -> Result<f64, CliError> {
        p.trim()
            .parse::<f64>()
            .map_err(|e| CliError::Usage(format!("--c-grid value {p}: {e}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "--c-grid expects start:step:stop, got {s}"
        )));
    }
    let (start, step, stop) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(CliError::Usage(
            "--c-grid needs 0 < start <= stop, step > 0".into(),
        ));
    }
    let mut grid = Vec::new();
    let mut k = 0usize;
    loop {
        let value = start + k as f64 * step;
        if value > stop + 1e-9 * step {
            break;
        }
        grid.push(value);
        k += 1;
    }
    Ok(grid)
}

/// Parses one estimator item: `tag` or `tag:key=value`. Bare C-swept tags
/// are only valid when the grid supplies C.
fn parse_estimator(item: &str, c_swept: bool) -> Result<EstimatorSpec, CliError> {
    let usage = CliError::Usage;
    let (tag, param) = match item.split_once(':') {
        Some((t, p)) => (t.trim(), Some(p.trim())),
        None => (item.trim(), None),
    };
    fn parse_kv(p: &str) -> Result<(&str, f64), CliError> {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("estimator parameter {p} expects key=value")))?;
        let value = v
            .trim()
            .parse::<f64>()
            .map_err(|e| CliError::Usage(format!("estimator parameter {p}: {e}")))?;
        Ok((k.trim(), value))
    }
    match tag {
        "sample" | "adaptive-sign" => {
            if param.is_some() {
                return Err(usage(format!("estimator {tag} takes no parameter")));
            }
            Ok(if tag == "sample" {
                EstimatorSpec::Sample
            } else {
                EstimatorSpec::AdaptiveSign
            })
        }
        "na" | "mb" | "tb" => {
            let scale = match param {
                Some(p) => match parse_kv(p)? {
                    ("lambda", v) => ScaleRule::Lambda(v),
                    ("C", v) => ScaleRule::CSqrtLogN(v),
                    (k, _) => return Err(usage(format!("estimator {tag}: unknown key {k}"))),
                },
                None if c_swept => ScaleRule::CSqrtLogN(1.0), // replaced by the grid value
                None => {
                    return Err(usage(format!(
                        "estimator {tag} needs lambda= or C= outside sweep-c"
                    )))
                }
            };
            Ok(match tag {
                "na" => EstimatorSpec::Na { scale },
                "mb" => EstimatorSpec::Mb { scale },
                _ => EstimatorSpec::Tb { scale },
            })
        }
        "adaptive-na" => match param {
            Some(p) => match parse_kv(p)? {
                ("C", v) => Ok(EstimatorSpec::AdaptiveNa { c: v }),
                (k, _) => Err(usage(format!("estimator adaptive-na: unknown key {k}"))),
            },
            None if c_swept => Ok(EstimatorSpec::AdaptiveNa { c: 1.0 }),
            None => Err(usage(
                "estimator adaptive-na needs C= outside sweep-c".into(),
            )),
        },
        "pf" => match param {
            Some(p) => match parse_kv(p)? {
                ("s", v) => Ok(EstimatorSpec::Pf { shrink: v }),
                (k, _) => Err(usage(format!("estimator pf: unknown key {k}"))),
            },
            None => Ok(EstimatorSpec::Pf { shrink: 1.0 }),
        },
        other => Err(usage(format!("unknown estimator {other}"))),
    }
}

fn parse_estimators(list: &str, c_swept: bool) -> Result<Vec<EstimatorSpec>, CliError> {
    let specs: Result<Vec<EstimatorSpec>, CliError> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| parse_estimator(item, c_swept))
        .collect();
    let specs = specs?;
    if specs.is_empty() {
        return Err(CliError::Usage("estimator list is empty".into()));
    }
    Ok(specs)
}

fn cmd_sweep(args: SweepArgs, axis: SweepAxis) -> Result<(), CliError> {
    let (a, b, c_diag) = parse_sigma(&args.sigma)?;
    let n_values = parse_usize_grid(&args.n, "n")?;
    let d_values = parse_usize_grid(&args.d, "d")?;
    let c_swept = matches!(axis, SweepAxis::C);

    match axis {
        SweepAxis::C => {
            if n_values.len() != 1 || d_values.len() != 1 {
                return Err(CliError::Usage("sweep-c needs single --n and --d".into()));
            }
        }
        SweepAxis::N => {
            if d_values.len() != 1 {
                return Err(CliError::Usage("sweep-n needs a single --d".into()));
            }
        }
        SweepAxis::D => {
            if n_values.len() != 1 {
                return Err(CliError::Usage("sweep-d needs a single --n".into()));
            }
        }
    }

    let default_list = if c_swept {
        "sample,na,adaptive-na,tb"
    } else {
        "sample,na:C=0.7,tb:C=0.65,pf:s=1,pf:s=0.9,pf:s=0.7,pf:s=0.5"
    };
    let estimators =
        parse_estimators(args.estimators.as_deref().unwrap_or(default_list), c_swept)?;

    let sigma = SigmaSpec::new(a, b, c_diag, d_values[0]);
    let spec = ExperimentSpec {
        sigma,
        n_values,
        d_values,
        reps: args.reps,
        estimators,
        c_grid: if c_swept {
            Some(parse_c_grid(&args.c_grid)?)
        } else {
            None
        },
        base_seed: args.seed,
    };

    let workers = args.workers.or_else(|| {
        std::env::var("BITCOV_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    let records = match workers {
        Some(1) => run_grid_sequential(&spec)?,
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Usage(format!("--workers {k}: {e}")))?;
            pool.install(|| run_grid(&spec))?
        }
        None => run_grid(&spec)?,
    };
    let stats = aggregate(&records)?;

    let records_path = args.out.with_extension("records.csv");
    let aggregate_path = args.out.with_extension("aggregate.csv");
    let mut records_buf = Vec::new();
    write_records_csv(&mut records_buf, &spec.sigma, &records)
        .map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&records_path, &records_buf)
        .map_err(|e| CliError::Io(format!("{}: {e}", records_path.display())))?;
    let mut agg_buf = Vec::new();
    write_aggregates_csv(&mut agg_buf, &stats).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&aggregate_path, &agg_buf)
        .map_err(|e| CliError::Io(format!("{}: {e}", aggregate_path.display())))?;
    eprintln!(
        "wrote {} ({} records) and {} ({} rows)",
        records_path.display(),
        records.len(),
        aggregate_path.display(),
        stats.len()
    );

    if c_swept {
        let mut seen = Vec::new();
        for est in &spec.estimators {
            if est.sweeps_c() && !seen.contains(&est.tag()) {
                seen.push(est.tag());
                let (c_star, min_err) = best_c(&stats, est.tag())?;
                println!(
                    "best C for {}: {c_star} (mean op error {min_err})",
                    est.tag()
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let mut rng = SeedSpec::new(args.seed, 0, 0).stream();
    let report = verify::run_all(args.trials, &mut rng);
    let mut stdout = std::io::stdout().lock();
    for check in &report.checks {
        let status = if check.pass { "PASS" } else { "FAIL" };
        writeln!(stdout, "{status} {}: {}", check.name, check.details)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    drop(stdout);
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}
