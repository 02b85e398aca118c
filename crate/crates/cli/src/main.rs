use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use ldcap_core::exact1d::{
    exact_decay_rate, multiplier_decay_rate, shooting_decay_rate, Exact1dProblem, ShootingOptions,
};
use ldcap_core::geometry::BoundingBox;
use ldcap_core::io::export;
use ldcap_core::io::native::ZeroFlowPolicy;
use ldcap_core::io::{apply_imax_rule, parse_matpower, parse_native, ConversionParams, Network};
use ldcap_core::montecarlo::{fit_decay_slope, overload_probability, McConfig, McKind};
use ldcap_core::region::{risk_partition, Slice2D, SliceSpec};
use ldcap_core::{CapacityRegion, DecayRateReport, Error, RegionKind};
use log::{info, warn};

#[derive(Parser)]
#[command(
    name = "ldcap",
    version,
    about = "Overload decay rates and capacity regions for DC grids with Ornstein-Uhlenbeck injections"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print more diagnostics on standard error (-v, -vv).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-line rates and the current, lower-bound and Taylor decay rates.
    Rates(RatesArgs),
    /// Capacity region bounds, 2-D slices and risk partitions.
    Region(RegionArgs),
    /// Exact temperature decay rate of a single line with one OU injection.
    Exact1d(ExactArgs),
    /// Monte Carlo overload probabilities and their decay slope.
    Mc(McArgs),
    /// Convert a MATPOWER case into a native network document.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write to a file instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Analysis {
    /// Noise level ε (defaults to the document's value).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Time horizon T.
    #[arg(long = "horizon", visible_alias = "T")]
    horizon: Option<f64>,
    /// Replace every line's thermal constant.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct RatesArgs {
    /// Native JSON network document.
    input: PathBuf,
    #[command(flatten)]
    analysis: Analysis,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct RegionArgs {
    /// Native JSON network document.
    input: PathBuf,
    /// deterministic, current, lb, taylor, or all.
    #[arg(long, default_value = "current")]
    kind: String,
    /// Target overload probability.
    #[arg(long)]
    p: Option<f64>,
    /// Thermal constant for the Taylor region.
    #[arg(long)]
    tau0: Option<f64>,
    #[command(flatten)]
    analysis: Analysis,
    /// Restrict to the plane of two node injections (means for stochastic nodes), given by id as `u,v`.
    #[arg(long, value_parser = parse_pair)]
    slice: Option<(u64, u64)>,
    /// Slice window `u_min,u_max,v_min,v_max`.
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true, default_value = "-3,3,-3,3")]
    bbox: BoundingBox,
    /// Also write the risk partition of the slice to this file.
    #[arg(long, value_name = "PATH", requires = "slice")]
    partition: Option<PathBuf>,
    /// Cells per side of the partition grid.
    #[arg(long, default_value_t = 400)]
    resolution: usize,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Auto,
    Shooting,
    Multiplier,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarFormat {
    Text,
    Json,
}

#[derive(Args)]
struct ExactArgs {
    /// Mean injection, equal to the normalized current at the operating point.
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    vol: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long = "horizon", visible_alias = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    #[arg(long, value_enum, default_value_t = ScalarFormat::Text)]
    format: ScalarFormat,
}

#[derive(Args)]
struct McArgs {
    /// Native JSON network document.
    input: PathBuf,
    #[arg(long, default_value = "current")]
    kind: McKind,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// Replicates per noise level.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Overload level for |Y| or Θ.
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long = "horizon", visible_alias = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroFlow {
    Error,
    Unmonitored,
}

#[derive(Args)]
struct ConvertArgs {
    /// MATPOWER case file.
    input: PathBuf,
    /// Ratings are K times the base-case flow magnitude.
    #[arg(long = "k", visible_alias = "K")]
    k: f64,
    /// Bus ids that become OU injections.
    #[arg(long, value_delimiter = ',', required = true)]
    stochastic: Vec<u64>,
    /// Deterministic bus ids available for slicing.
    #[arg(long, value_delimiter = ',')]
    controllable: Vec<u64>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    vol: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// What to do with lines that carry no base flow.
    #[arg(long, value_enum, default_value_t = ZeroFlow::Error)]
    zero_flow: ZeroFlow,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long = "horizon", visible_alias = "T")]
    horizon: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_numbers(s: &str, count: usize) -> std::result::Result<Vec<f64>, String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != count {
        return Err(format!(
            "expected {count} comma-separated numbers, got {}",
            values.len()
        ));
    }
    Ok(values)
}

fn parse_pair(s: &str) -> std::result::Result<(u64, u64), String> {
    let ids: Vec<u64> = s
        .split(',')
        .map(|v| v.trim().parse::<u64>().map_err(|e| format!("'{v}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match ids[..] {
        [u, v] if u != v => Ok((u, v)),
        _ => Err("expected two distinct node ids as u,v".into()),
    }
}

fn parse_bbox(s: &str) -> std::result::Result<BoundingBox, String> {
    let v = parse_numbers(s, 4)?;
    BoundingBox::new(v[0], v[1], v[2], v[3])
        .ok_or_else(|| "bounding box needs min < max on both axes".into())
}

fn parse_kinds(s: &str) -> Result<Vec<RegionKind>> {
    if s == "all" {
        return Ok(RegionKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<RegionKind>().map_err(Into::into))
        .collect()
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_network(path: &Path, analysis: Option<&Analysis>) -> Result<Network> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let net = parse_native(&text)?.build()?;
    info!(
        "{}: {} nodes, {} lines, {} stochastic",
        path.display(),
        net.node_ids.len(),
        net.flow.line_count(),
        net.stochastic_count()
    );
    match analysis.and_then(|a| a.tau).filter(|&t| t > 0.0) {
        Some(tau) => Ok(net.with_tau(tau)?),
        None => Ok(net),
    }
}

fn rates(args: &RatesArgs) -> Result<()> {
    let net = load_network(&args.input, Some(&args.analysis))?;
    let eps = args.analysis.epsilon.unwrap_or(net.epsilon());
    let horizon = args.analysis.horizon.unwrap_or(net.horizon());
    let ctx = net.context(eps, horizon)?;
    // a zero thermal constant only switches off the Taylor correction
    let tau0 = args.analysis.tau.or(net.tau0());
    let report = DecayRateReport::compute(&ctx, tau0)?;
    if !report.excluded.is_empty() {
        warn!(
            "{} lines do not depend on the stochastic injections",
            report.excluded.len()
        );
    }
    let labels = net.labels();
    let text = match args.out.format {
        Format::Json => export::report_json(&report, &labels),
        Format::Csv => export::report_csv(&report, &labels),
    };
    emit(args.out.output.as_deref(), &text)
}

fn region(args: &RegionArgs) -> Result<()> {
    let kinds = parse_kinds(&args.kind)?;
    let net = load_network(&args.input, Some(&args.analysis))?;
    let eps = args.analysis.epsilon.unwrap_or(net.epsilon());
    let horizon = args.analysis.horizon.unwrap_or(net.horizon());
    let p = args.p.unwrap_or(net.p());
    let tau0 = args.tau0.or(net.tau0());
    let ctx = net.context(eps, horizon)?;
    let regions = kinds
        .iter()
        .map(|&kind| CapacityRegion::build(&ctx, kind, eps, p, tau0))
        .collect::<ldcap_core::Result<Vec<_>>>()?;
    let labels = net.labels();

    let Some((u, v)) = args.slice else {
        let text = match (args.out.format, &regions[..]) {
            (Format::Json, [one]) => export::region_json(one, &labels),
            (Format::Csv, [one]) => export::region_csv(one, &labels),
            (Format::Json, many) => export::regions_json(many, &labels),
            (Format::Csv, many) => export::regions_csv(many, &labels),
        };
        return emit(args.out.output.as_deref(), &text);
    };

    let free = (net.internal_node(u)?, net.internal_node(v)?);
    for (id, idx) in [(u, free.0), (v, free.1)] {
        if idx == 0 {
            bail!(Error::InvalidParameter(format!(
                "slice node {id} is the slack bus"
            )));
        }
        let controllable = net.document.controllable.as_ref();
        if idx > net.stochastic_count() && controllable.is_some_and(|list| !list.contains(&id)) {
            warn!("slice node {id} is not listed as controllable");
        }
    }
    let spec = SliceSpec {
        free,
        fixed: net.injections(),
        bbox: args.bbox,
    };
    let slices = regions
        .iter()
        .map(|r| Slice2D::new(r, &net.flow, &spec))
        .collect::<ldcap_core::Result<Vec<_>>>()?;
    let text = match (args.out.format, &slices[..]) {
        (Format::Json, [one]) => export::slice_json(one, &labels),
        (Format::Csv, [one]) => export::slice_csv(one),
        (Format::Json, many) => export::slices_json(many, &labels),
        (Format::Csv, many) => export::slices_csv(many),
    };
    emit(args.out.output.as_deref(), &text)?;

    if let Some(path) = &args.partition {
        let partition = risk_partition(&ctx, &spec, args.resolution)?;
        info!("partition has {} regions", partition.regions.len());
        let text = match args.out.format {
            Format::Json => export::partition_json(&partition, &labels),
            Format::Csv => export::partition_csv(&partition, &labels),
        };
        emit(Some(path), &text)?;
    }
    Ok(())
}

fn exact1d(args: &ExactArgs) -> Result<()> {
    let problem = Exact1dProblem::new(args.mu, args.gamma, args.vol, args.tau, args.horizon)?;
    let opts = ShootingOptions::default();
    let rate = match args.method {
        Method::Auto => exact_decay_rate(&problem, &opts)?,
        Method::Shooting => shooting_decay_rate(&problem, &opts)?,
        Method::Multiplier => multiplier_decay_rate(&problem, &opts)?,
    };
    info!("solved with the {} route", rate.method.as_str());
    match args.format {
        ScalarFormat::Text => println!("{}", rate.rate),
        ScalarFormat::Json => print!("{}", export::exact_json(&rate, problem.current_rate())),
    }
    Ok(())
}

fn monte_carlo(args: &McArgs) -> Result<()> {
    let mut net = load_network(&args.input, None)?;
    if let Some(tau) = args.tau {
        net = net.with_tau(tau)?;
    }
    let horizon = args.horizon.unwrap_or(net.horizon());
    let ctx = net.context(net.epsilon(), horizon)?;
    let cfg = McConfig {
        kind: args.kind,
        replicates: args.n,
        steps: args.steps,
        seed: args.seed,
        level: args.level,
        epsilons: args.eps.clone(),
        threads: None,
    };
    let estimates = args
        .eps
        .iter()
        .map(|&eps| overload_probability(&ctx, &cfg, eps))
        .collect::<ldcap_core::Result<Vec<_>>>()?;
    let positive: Vec<_> = estimates
        .iter()
        .filter(|e| e.epsilon > 0.0)
        .cloned()
        .collect();
    let fit = if positive.len() >= 2 {
        match fit_decay_slope(positive) {
            Ok(fit) => Some(fit),
            Err(e) => {
                warn!("no decay slope: {e}");
                None
            }
        }
    } else {
        None
    };
    let text = match args.out.format {
        Format::Json => {
            export::mc_json(&args.kind.to_string(), args.seed, &estimates, fit.as_ref())
        }
        Format::Csv => export::mc_csv(&estimates),
    };
    emit(args.out.output.as_deref(), &text)
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let case = parse_matpower(&text)?;
    let mut params = ConversionParams {
        gamma: args.gamma,
        vol: args.vol,
        tau: args.tau,
        zero_flow: match args.zero_flow {
            ZeroFlow::Error => ZeroFlowPolicy::Error,
            ZeroFlow::Unmonitored => ZeroFlowPolicy::Unmonitored,
        },
        ..Default::default()
    };
    params.defaults.epsilon = args.epsilon;
    params.defaults.p = args.p;
    params.defaults.horizon = args.horizon;
    let doc = apply_imax_rule(&case, args.k, &args.stochastic, &args.controllable, &params)?;
    doc.build()?;
    emit(args.output.as_deref(), &doc.to_json())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_empty_result() => 3,
        Some(e) if e.is_numerical() => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Rates(a) => rates(a),
        Command::Region(a) => region(a),
        Command::Exact1d(a) => exact1d(a),
        Command::Mc(a) => monte_carlo(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
