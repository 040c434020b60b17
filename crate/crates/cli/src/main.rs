use clap::{Args, Parser, Subcommand, ValueEnum};
use rfscope::erf::{estimate_erf, ErfLocation, Tensor4, WeightInit};
use rfscope::ir::{count_params, parse_network, serialize_network, ParseError};
use rfscope::presets::{Preset, PresetCatalog};
use rfscope::rf::{context_of_rf, network_rf, network_rf_state, rf_trace, SpectrogramContext};
use rfscope::transforms::{
    convert_tail_filters, edit_pooling, solve_target_rf, sweep, ConvertAxes, SolveStrategy,
    SweepStrategy, TransformError,
};
use rfscope::{Axis2, NetworkSpec};
use rfscope_cli::io::{write_grid_csv, write_grid_pgm};
use rfscope_cli::seeded_inputs;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rfscope",
    version,
    about = "Receptive-field analysis and rewriting for spectrogram CNNs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct NetSource {
    /// Architecture description file.
    #[arg(value_name = "ARCH", required_unless_present = "preset", conflicts_with = "preset")]
    arch: Option<PathBuf>,
    /// Built-in preset (rn_base, rn1, rn2, rn3, dn1).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct ContextArgs {
    /// Spectrogram frames per second.
    #[arg(long, default_value_t = 43.0)]
    fps: f64,
    /// Number of mel frequency bins.
    #[arg(long = "mel-bins", default_value_t = 256)]
    mel_bins: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    #[value(name = "truncate")]
    Truncate,
    #[value(name = "convert_both")]
    ConvertBoth,
    #[value(name = "convert_time")]
    ConvertTime,
    #[value(name = "convert_freq")]
    ConvertFreq,
    #[value(name = "pooling")]
    Pooling,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the receptive field of an architecture.
    Rf {
        #[command(flatten)]
        net: NetSource,
        #[command(flatten)]
        ctx: ContextArgs,
    },
    /// Print the per-layer trace of cumulative stride and RF.
    Trace {
        #[command(flatten)]
        net: NetSource,
        /// Emit machine-readable CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Rewrite an architecture and write the canonical result.
    Transform {
        #[command(flatten)]
        net: NetSource,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Target RF (e.g. 135x135, or the name of an RF preset).
        #[arg(long, conflicts_with = "count")]
        target: Option<String>,
        /// Number of tail filters to convert (convert strategies only).
        #[arg(long)]
        count: Option<usize>,
        /// Insert a 2x2/s2 max pool after this layer index (pooling strategy;
        /// repeatable).
        #[arg(long = "insert-after")]
        insert_after: Vec<usize>,
        /// Remove the pool at this layer index (pooling strategy; repeatable).
        #[arg(long)]
        remove: Vec<usize>,
        /// Output file for the transformed architecture (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate a sweep of systematically edited architectures as CSV.
    Sweep {
        #[command(flatten)]
        net: NetSource,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[command(flatten)]
        ctx: ContextArgs,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the effective receptive field; writes a CSV grid and a PGM
    /// heatmap.
    Erf {
        #[command(flatten)]
        net: NetSource,
        /// Seed for reproducible random weights (all-ones when omitted).
        #[arg(long, conflicts_with = "all_ones")]
        seed: Option<u64>,
        /// Scale of seeded uniform weights.
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Use all-ones weights (the default).
        #[arg(long = "all-ones")]
        all_ones: bool,
        /// Input spectrogram size, freq x time.
        #[arg(long, default_value = "256x431")]
        input: String,
        /// Number of input samples averaged.
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Output pixel to seed, freq x time (defaults to the center).
        #[arg(long)]
        location: Option<String>,
        /// Prefix for the .csv/.pgm outputs (default: erf_<network>).
        #[arg(long = "out-prefix")]
        out_prefix: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Transform(String),
    #[error("all-zero gradient: the estimated ERF is degenerate")]
    DegenerateErf,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Transform(_) => 3,
            CliError::DegenerateErf => 4,
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        match e {
            ParseError::Syntax { .. } => CliError::Input(e.to_string()),
            ParseError::Semantic { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<rfscope::AnalysisError> for CliError {
    fn from(e: rfscope::AnalysisError) -> Self {
        match e {
            rfscope::AnalysisError::InvalidNetwork(_) => CliError::Validation(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::InvalidNetwork(_) => CliError::Validation(e.to_string()),
            _ => CliError::Transform(e.to_string()),
        }
    }
}

impl From<rfscope::erf::ErfError> for CliError {
    fn from(e: rfscope::erf::ErfError) -> Self {
        match e {
            rfscope::erf::ErfError::InvalidNetwork(_) => CliError::Validation(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn load_network(src: &NetSource) -> Result<NetworkSpec, CliError> {
    if let Some(name) = &src.preset {
        let catalog = PresetCatalog::standard();
        return match catalog.get(name) {
            Some(Preset::Network(build)) => Ok(build()),
            Some(Preset::RfTarget(rf)) => Err(CliError::Input(format!(
                "preset {name:?} names the RF target {rf}, not a network"
            ))),
            None => {
                let names: Vec<_> = catalog.names().collect();
                Err(CliError::Input(format!(
                    "unknown preset {name:?}; available: {}",
                    names.join(", ")
                )))
            }
        };
    }
    let path = src.arch.as_ref().expect("clap enforces arch xor preset");
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_network(&text)?)
}

fn parse_axis(s: &str, what: &str) -> Result<Axis2, CliError> {
    s.parse::<Axis2>()
        .map_err(|e| CliError::Input(format!("bad {what}: {e}")))
}

/// Accepts `135x135` or the name of an RF-target preset.
fn resolve_target(s: &str) -> Result<Axis2, CliError> {
    if let Ok(rf) = s.parse::<Axis2>() {
        return Ok(rf);
    }
    match PresetCatalog::standard().get(s) {
        Some(Preset::RfTarget(rf)) => Ok(rf),
        _ => Err(CliError::Input(format!(
            "bad target {s:?}: expected <freq>x<time> or an RF preset name"
        ))),
    }
}

fn write_or_print(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_rf(net: &NetSource, ctx: &ContextArgs) -> Result<(), CliError> {
    let net = load_network(net)?;
    let state = network_rf_state(&net)?;
    let sctx = SpectrogramContext { frames_per_second: ctx.fps, mel_bins: ctx.mel_bins };
    let (seconds, coverage) = context_of_rf(state.rf, &sctx);
    let params = count_params(&net).total;
    println!("network {}", net.name);
    println!("RF {}", state.rf);
    println!("cumulative stride {}", state.cum_stride);
    println!(
        "context {:.2} s, {:.1}% of {} mel bins at {} fps",
        seconds,
        coverage * 100.0,
        ctx.mel_bins,
        ctx.fps
    );
    println!("params {params}");
    Ok(())
}

fn cmd_trace(net: &NetSource, csv: bool) -> Result<(), CliError> {
    let net = load_network(net)?;
    let trace = rf_trace(&net)?;
    if csv {
        println!("index,layer,s_f,s_t,rf_f,rf_t");
        for (i, step) in trace.steps.iter().enumerate() {
            let s = step.state;
            println!(
                "{},{},{},{},{},{}",
                i + 1,
                step.description,
                s.cum_stride.freq,
                s.cum_stride.time,
                s.rf.freq,
                s.rf.time
            );
        }
    } else {
        println!("{:>5}  {:<18}{:>5}{:>5}{:>6}{:>6}", "index", "layer", "s_f", "s_t", "rf_f", "rf_t");
        for (i, step) in trace.steps.iter().enumerate() {
            let s = step.state;
            println!(
                "{:>5}  {:<18}{:>5}{:>5}{:>6}{:>6}",
                i + 1,
                step.description,
                s.cum_stride.freq,
                s.cum_stride.time,
                s.rf.freq,
                s.rf.time
            );
        }
        println!(
            "final RF {}, cumulative stride {}",
            trace.final_state.rf, trace.final_state.cum_stride
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_transform(
    src: &NetSource,
    strategy: StrategyArg,
    target: &Option<String>,
    count: Option<usize>,
    insert_after: &[usize],
    remove: &[usize],
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let net = load_network(src)?;
    let before_rf = network_rf(&net)?;
    let before_params = count_params(&net).total;

    let result = match strategy {
        StrategyArg::Truncate => {
            let target = target.as_deref().ok_or_else(|| {
                CliError::Transform("strategy truncate requires --target".into())
            })?;
            solve_target_rf(&net, resolve_target(target)?, SolveStrategy::Truncate)?
        }
        StrategyArg::ConvertBoth | StrategyArg::ConvertTime | StrategyArg::ConvertFreq => {
            let (solve, axes) = match strategy {
                StrategyArg::ConvertBoth => (SolveStrategy::ConvertBoth, ConvertAxes::Both),
                StrategyArg::ConvertTime => (SolveStrategy::ConvertTime, ConvertAxes::Time),
                StrategyArg::ConvertFreq => (SolveStrategy::ConvertFreq, ConvertAxes::Freq),
                _ => unreachable!(),
            };
            match (target, count) {
                (Some(t), None) => solve_target_rf(&net, resolve_target(t)?, solve)?,
                (None, Some(c)) => convert_tail_filters(&net, c, axes)?,
                _ => {
                    return Err(CliError::Transform(
                        "convert strategies require exactly one of --target or --count".into(),
                    ))
                }
            }
        }
        StrategyArg::Pooling => {
            if target.is_some() || count.is_some() {
                return Err(CliError::Transform(
                    "strategy pooling takes --insert-after/--remove, not --target/--count".into(),
                ));
            }
            edit_pooling(&net, insert_after, remove)?
        }
    };

    let after_rf = network_rf(&result)?;
    let after_params = count_params(&result).total;
    eprintln!("before RF {before_rf} params {before_params}");
    eprintln!("after  RF {after_rf} params {after_params}");
    write_or_print(out, &serialize_network(&result))?;
    if let Some(path) = out {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(
    src: &NetSource,
    strategy: StrategyArg,
    ctx: &ContextArgs,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let net = load_network(src)?;
    let strategy = match strategy {
        StrategyArg::ConvertBoth => SweepStrategy::ConvertBoth,
        StrategyArg::ConvertTime => SweepStrategy::ConvertTime,
        StrategyArg::ConvertFreq => SweepStrategy::ConvertFreq,
        StrategyArg::Pooling => SweepStrategy::Pooling,
        StrategyArg::Truncate => {
            return Err(CliError::Transform(
                "sweep strategies are convert_both, convert_time, convert_freq, pooling".into(),
            ))
        }
    };
    let points = sweep(&net, strategy)?;
    let sctx = SpectrogramContext { frames_per_second: ctx.fps, mel_bins: ctx.mel_bins };
    let mut csv = String::from("label,count,rf_f,rf_t,params,seconds,mel_coverage\n");
    for (i, p) in points.iter().enumerate() {
        let (seconds, coverage) = context_of_rf(p.rf, &sctx);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.label, i, p.rf.freq, p.rf.time, p.params, seconds, coverage
        ));
    }
    write_or_print(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn cmd_erf(
    src: &NetSource,
    seed: Option<u64>,
    scale: f64,
    input: &str,
    batch: usize,
    location: &Option<String>,
    out_prefix: &Option<String>,
) -> Result<(), CliError> {
    let net = load_network(src)?;
    let size = parse_axis(input, "--input")?;
    let dims = [batch, net.input_channels as usize, size.freq as usize, size.time as usize];

    let (weights, inputs) = match seed {
        Some(seed) => (
            WeightInit::Seeded { seed, scale },
            // Input stream is drawn independently of the weight stream.
            seeded_inputs(seed.wrapping_add(1), dims),
        ),
        None => (WeightInit::AllOnes, Tensor4::filled(dims, 1.0)),
    };

    let loc = match location {
        Some(s) => {
            let at = parse_axis(s, "--location")?;
            ErfLocation::At(at.freq as usize, at.time as usize)
        }
        None => ErfLocation::Center,
    };

    let map = estimate_erf(&net, &weights, &inputs, loc)?;
    if map.degenerate {
        return Err(CliError::DegenerateErf);
    }

    let analytic = network_rf(&net)?;
    let ok = map.support_box.fits_within(analytic);
    println!("output map {}x{}", map.grid.freq, map.grid.time);
    println!("peak at {}x{}", map.peak_location.0, map.peak_location.1);
    println!(
        "support {} within analytic RF {}: {}",
        map.support_box,
        analytic,
        if ok { "ok" } else { "VIOLATION" }
    );
    assert!(ok, "ERF support exceeded the analytic RF; this is a bug");

    let prefix = out_prefix.clone().unwrap_or_else(|| format!("erf_{}", net.name));
    let csv_path = PathBuf::from(format!("{prefix}.csv"));
    let pgm_path = PathBuf::from(format!("{prefix}.pgm"));
    write_csv_pgm(&csv_path, &pgm_path, &map.grid)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", pgm_path.display());
    Ok(())
}

fn write_csv_pgm(csv: &Path, pgm: &Path, grid: &rfscope::erf::Grid2) -> Result<(), CliError> {
    write_grid_csv(csv, grid)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", csv.display())))?;
    write_grid_pgm(pgm, grid)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", pgm.display())))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Rf { net, ctx } => cmd_rf(net, ctx),
        Cmd::Trace { net, csv } => cmd_trace(net, *csv),
        Cmd::Transform { net, strategy, target, count, insert_after, remove, out } => {
            cmd_transform(net, *strategy, target, *count, insert_after, remove, out)
        }
        Cmd::Sweep { net, strategy, ctx, out } => cmd_sweep(net, *strategy, ctx, out),
        Cmd::Erf { net, seed, scale, all_ones: _, input, batch, location, out_prefix } => {
            cmd_erf(net, *seed, *scale, input, *batch, location, out_prefix)
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe (e.g. `| head`) closes early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
