use std::path::{Path, PathBuf};

use quantlab::blockquant::{
    dequantize, qtensor_read, qtensor_write, quantize, reconstruction_error, tensor_read,
    tensor_write, ErrorMetric, Tensor,
};
use quantlab::codebook::{
    af4_code_with, balanced_code_for, balanced_code_with_endpoints_for, code_read, code_write,
    expected_l1_with, nf4_code, Af4Options, Code16, Nf4Variant,
};
use quantlab::distributions::{absmax_median, ScaledMaxDistribution};
use quantlab::montecarlo::{
    estimate_cdf, estimate_l1, sample_blocks, usage_estimates, CsvRow, McConfig, SampleMode,
    CSV_HEADER,
};
use quantlab::quadrature::QuadratureSettings;

use super::{
    Cli, CliError, CodeCommand, CodeGenArgs, Command, DequantizeArgs, DistArgs, DistQuery, KindArg,
    McCommand, McSampleArgs, QuantizeArgs, ReportKind, ValidateArgs, VariantArg,
};

type Result<T> = std::result::Result<T, CliError>;

macro_rules! emit {
    ($out:expr, $($arg:tt)*) => {{
        use std::fmt::Write as _;
        let _ = writeln!($out, $($arg)*);
    }};
}

struct Context {
    csv: bool,
    settings: QuadratureSettings,
}

impl Context {
    fn dist(&self, block_size: usize) -> Result<ScaledMaxDistribution> {
        Ok(ScaledMaxDistribution::with_settings(
            block_size,
            self.settings,
        )?)
    }
}

pub(crate) fn run(cli: Cli, out: &mut String) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let mut settings = QuadratureSettings::default();
    if let Some(tol) = cli.quad_tol {
        settings.abs_tol = tol;
        settings.validate()?;
    }
    let ctx = Context {
        csv: cli.csv,
        settings,
    };
    match cli.command {
        Command::Code(CodeCommand::Gen(args)) => code_gen(&ctx, out, args),
        Command::Quantize(args) => quantize_cmd(&ctx, out, args),
        Command::Dequantize(args) => dequantize_cmd(&ctx, out, args),
        Command::Dist(args) => dist_cmd(&ctx, out, args),
        Command::Validate(args) => validate_cmd(&ctx, out, args),
        Command::Mc(McCommand::Sample(args)) => mc_sample(out, args),
    }
}

fn code_gen(ctx: &Context, out: &mut String, args: CodeGenArgs) -> Result<()> {
    let b = args.block_size;
    let code = match args.kind {
        KindArg::Nf4 => nf4_code(match args.variant {
            VariantArg::QuantileOfAverage => Nf4Variant::QuantileOfAverage,
            VariantArg::AverageOfQuantile => Nf4Variant::AverageOfQuantile,
        }),
        KindArg::Af4 => {
            let mut opts = Af4Options::default();
            opts.settings.abs_tol = opts.settings.abs_tol.min(ctx.settings.abs_tol);
            af4_code_with(b, &opts)?
        }
        KindArg::Balanced | KindArg::BalancedEndpoints => {
            if b < 9 {
                return Err(CliError::Usage(format!(
                    "block size must be ≥ 9 for balanced codes, got {b}"
                )));
            }
            let dist = ctx.dist(b)?;
            if args.kind == KindArg::Balanced {
                balanced_code_for(&dist)?
            } else {
                balanced_code_with_endpoints_for(&dist)?
            }
        }
    };
    code_write(&code, &args.out)?;
    if ctx.csv {
        emit!(out, "index,value");
        for (j, v) in code.values().iter().enumerate() {
            emit!(out, "{},{v}", j + 1);
        }
    } else {
        match code.block_size() {
            Some(b) => emit!(out, "{} code, block size {b}", code.kind()),
            None => emit!(out, "{} code", code.kind()),
        }
        for (j, v) in code.values().iter().enumerate() {
            emit!(out, "  q{:<2} {v:+.17}", j + 1);
        }
    }
    Ok(())
}

fn print_errors(
    ctx: &Context,
    out: &mut String,
    original: &Tensor,
    reconstructed: &Tensor,
) -> Result<()> {
    let metrics = [
        ("mean_abs", ErrorMetric::MeanAbs),
        ("mean_sq", ErrorMetric::MeanSq),
        ("max_abs", ErrorMetric::MaxAbs),
    ];
    if ctx.csv {
        emit!(out, "metric,value");
    }
    for (name, m) in metrics {
        let v = reconstruction_error(original, reconstructed, m)?;
        if ctx.csv {
            emit!(out, "{name},{v}");
        } else {
            emit!(out, "{name:<9} {v:.10e}");
        }
    }
    Ok(())
}

fn quantize_cmd(ctx: &Context, out: &mut String, args: QuantizeArgs) -> Result<()> {
    let tensor = tensor_read(&args.input)?;
    let code = code_read(&args.code)?;
    let axis = match args.axis {
        Some(a) => a,
        None => tensor
            .dims()
            .len()
            .checked_sub(1)
            .ok_or_else(|| CliError::Usage("cannot block a 0-dimensional tensor".into()))?,
    };
    let qt = quantize(&tensor, &code, args.block_size, axis)?;
    qtensor_write(&qt, &args.output)?;
    if args.report {
        print_errors(ctx, out, &tensor, &dequantize(&qt)?)?;
    }
    Ok(())
}

fn dequantize_cmd(ctx: &Context, out: &mut String, args: DequantizeArgs) -> Result<()> {
    let qt = qtensor_read(&args.input)?;
    let restored = dequantize(&qt)?;
    tensor_write(&restored, &args.output)?;
    if args.report {
        let reference = args
            .reference
            .as_ref()
            .ok_or_else(|| CliError::Usage("--report needs --reference for dequantize".into()))?;
        print_errors(ctx, out, &tensor_read(reference)?, &restored)?;
    }
    Ok(())
}

fn dist_cmd(ctx: &Context, out: &mut String, args: DistArgs) -> Result<()> {
    let b = args.block_size;
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("{flag} is required for this query")))
    };
    let (name, arg, value) = match args.query {
        DistQuery::Cdf => {
            let x = need(args.x, "--x")?;
            ("cdf", Some(x), ctx.dist(b)?.cdf(x))
        }
        DistQuery::ApproxCdf => {
            let x = need(args.x, "--x")?;
            ("approx_cdf", Some(x), ctx.dist(b)?.approx_cdf(x))
        }
        DistQuery::Quantile => {
            let p = need(args.p, "--p")?;
            ("quantile", Some(p), ctx.dist(b)?.quantile(p)?)
        }
        DistQuery::AbsmaxMedian => ("absmax_median", None, absmax_median(b)?),
    };
    if ctx.csv {
        emit!(out, "query,B,arg,value");
        let arg = arg.map_or_else(String::new, |a| a.to_string());
        emit!(out, "{name},{b},{arg},{value}");
    } else {
        emit!(out, "{value}");
    }
    Ok(())
}

fn code_label(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn load_codes(paths: &[PathBuf], report: &str) -> Result<Vec<(String, Code16)>> {
    if paths.is_empty() {
        return Err(CliError::Usage(format!("the {report} report needs --code")));
    }
    paths
        .iter()
        .map(|p| Ok((code_label(p), code_read(p)?)))
        .collect()
}

fn validate_cmd(ctx: &Context, out: &mut String, args: ValidateArgs) -> Result<()> {
    let b = args.block_size;
    let cfg = McConfig::new(args.seed, b, args.n)?;
    let dist = ctx.dist(b)?;
    let mut rows = Vec::new();
    match args.report {
        ReportKind::Usage => {
            let codes = load_codes(&args.code, "usage")?;
            let tag = codes.len() > 1;
            for (label, code) in &codes {
                let est = usage_estimates(code, b, args.n, args.seed)?;
                let analytic = code.usage_probabilities(&dist);
                for (j, (e, &a)) in est.into_iter().zip(&analytic).enumerate() {
                    let name = format!("usage_q{}", j + 1);
                    rows.push(CsvRow::new(
                        if tag { format!("{name}@{label}") } else { name },
                        b,
                        e,
                        Some(a),
                    ));
                }
            }
        }
        ReportKind::Cdf => {
            let xs: Vec<f64> = (0..=32).map(|k| -1.0 + k as f64 / 16.0).collect();
            let est = estimate_cdf(&cfg, &xs, SampleMode::IndependentOnly)?;
            for (&x, e) in xs.iter().zip(est) {
                rows.push(CsvRow::new(format!("cdf({x})"), b, e, Some(dist.cdf(x))));
            }
        }
        ReportKind::L1 => {
            let codes = load_codes(&args.code, "l1")?;
            let tag = codes.len() > 1;
            for (label, code) in &codes {
                let e = estimate_l1(code, &cfg)?;
                let a = expected_l1_with(code, &dist)?;
                let name = if tag {
                    format!("l1@{label}")
                } else {
                    "l1".into()
                };
                rows.push(CsvRow::new(name, b, e, Some(a)));
            }
        }
    }
    emit!(out, "{CSV_HEADER}");
    for row in &rows {
        emit!(out, "{}", row.to_csv());
    }
    if args.assert {
        let bad: Vec<&str> = rows
            .iter()
            .filter(|r| r.exceeds(4.0))
            .map(|r| r.quantity.as_str())
            .collect();
        if !bad.is_empty() {
            return Err(CliError::Assertion(format!(
                "{} estimate(s) more than 4 standard errors from analytic: {}",
                bad.len(),
                bad.join(" ")
            )));
        }
    }
    Ok(())
}

fn mc_sample(out: &mut String, args: McSampleArgs) -> Result<()> {
    let cfg = McConfig::new(args.seed, args.block_size, args.n)?;
    let batch = sample_blocks(&cfg)?;
    match &args.output {
        Some(path) => {
            let data = batch.values.iter().map(|&v| v as f32).collect();
            let t = Tensor::new(vec![cfg.num_blocks, cfg.block_size], data)?;
            tensor_write(&t, path)?;
        }
        None => {
            for k in 0..batch.num_blocks() {
                let line: Vec<String> = batch.block(k).iter().map(|v| v.to_string()).collect();
                emit!(out, "{}", line.join(","));
            }
        }
    }
    Ok(())
}
