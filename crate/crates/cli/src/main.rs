//! `xnorsim` command-line harness.

mod config;
mod emit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use xnorsim::cascade::{self, CascadeKind, CascadePolicy, DistSpec, SweepRow};
use xnorsim::costmodel::{self, CostParams, DesignOptions};
use xnorsim::crossbar::{CrossbarConfig, ReferenceSpec};
use xnorsim::dataflow::{self, TransactionLog};
use xnorsim::netio::{self, Dataset, NetworkSpec, WeightContainer};
use xnorsim::verify::{self, Fault, VerifyOptions};

use config::{CostConfig, FileConfig, InferConfig, LossSweepConfig};
use emit::Header;

#[derive(Parser)]
#[command(name = "xnorsim", version, about = "XNOR BNN crossbar simulator and analysis toolkit")]
struct Cli {
    /// Experiment config file (TOML); command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exhaustive self-check suite.
    Verify(VerifyArgs),
    /// Accuracy-loss tables for the cascading functions.
    LossSweep(SweepArgs),
    /// Classify a dataset with the golden and crossbar models.
    Infer(InferArgs),
    /// Energy/latency of the proposed design against the baseline.
    Cost(CostArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    MainRefOffByOne,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest vector size enumerated exhaustively.
    #[arg(long, default_value_t = 12)]
    nu_max: usize,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

/// Flags shared by commands that map layers onto crossbars.
#[derive(Args, Clone, Default)]
struct MappingArgs {
    /// Cascading function: and, or, f1, f2.
    #[arg(long)]
    policy: Option<String>,
    /// Number of SA references (odd).
    #[arg(long)]
    refs: Option<usize>,
    /// Distance between neighbouring references; a comma list for loss-sweep.
    #[arg(long, value_delimiter = ',')]
    ref_distance: Vec<usize>,
    /// Crossbar geometry, ROWSxCOLS.
    #[arg(long)]
    crossbar: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    mapping: MappingArgs,
    /// Experiments to run: exact, distance, refcount.
    #[arg(long, value_delimiter = ',')]
    experiment: Vec<String>,
    /// Monte-Carlo samples per row.
    #[arg(long)]
    samples: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    mapping: MappingArgs,
    /// Preset name or topology string.
    #[arg(long)]
    network: Option<String>,
    #[arg(long, conflicts_with = "random_weights")]
    weights: Option<PathBuf>,
    /// Use seeded random weights.
    #[arg(long)]
    random_weights: bool,
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Number of seeded synthetic samples when no dataset is given.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Use at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    mapping: MappingArgs,
    /// Preset names or topology strings; all presets when omitted.
    #[arg(long)]
    network: Vec<String>,
    /// Cost parameter file (required); every key must be present.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Evaluate two windows per read in convolution layers.
    #[arg(long)]
    parallel_window: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Verify(a) => cmd_verify(&a, cli.out.as_deref()),
        Command::LossSweep(a) => {
            let cfg = file.loss_sweep.resolve(&a.mapping, &a.experiment, a.samples, seed)?;
            cmd_loss_sweep(&cfg, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Infer(a) => {
            let cfg = file.infer.resolve(&a, seed)?;
            cmd_infer(&cfg, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Cost(a) => {
            let cfg = file.cost.resolve(&a)?;
            cmd_cost(&cfg, cli.out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
    }
}

fn cmd_verify(a: &VerifyArgs, out: Option<&Path>) -> Result<ExitCode> {
    let opts = VerifyOptions {
        nu_max: a.nu_max,
        fault: a.inject_fault.map(|_| Fault::MainReferenceOffByOne),
    };
    let report = verify::run(&opts)?;
    print!("{report}");
    if let Some(path) = out {
        #[derive(Serialize)]
        struct Doc<'a> {
            header: Header,
            report: &'a verify::VerifyReport,
        }
        let header = Header::new("verify", &config::hash_of(&opts_toml(&opts)), None);
        emit::write_json(Some(path), &Doc { header, report: &report })?;
    }
    if report.passed() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failed; reproduce with: {}", report.reproduce);
        Ok(ExitCode::FAILURE)
    }
}

fn opts_toml(o: &VerifyOptions) -> String {
    let fault = o.fault.map_or("none".to_string(), |f| f.to_string());
    format!("[verify]\nnu_max = {}\nfault = \"{fault}\"\n", o.nu_max)
}

fn cmd_loss_sweep(cfg: &LossSweepConfig, out: Option<&Path>) -> Result<()> {
    let dist = DistSpec::new(cfg.mean, cfg.sigma)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for exp in &cfg.experiments {
        match exp.as_str() {
            "exact" => {
                for &nu in &cfg.exact_nu {
                    for p in [CascadePolicy::and(), CascadePolicy::or()] {
                        let r = cascade::enumerate_loss(nu, &p)?;
                        rows.push(SweepRow::from_exact(&p, nu, &r));
                    }
                }
            }
            "distance" => {
                for &kind in &cfg.policies {
                    let p = CascadePolicy::new(kind, ReferenceSpec::new(cfg.ref_count, 1)?)?;
                    push_sweep(&mut rows, &p, cfg, dist)?;
                }
            }
            "refcount" => {
                for &count in &cfg.ref_counts {
                    if count == 1 {
                        for p in [CascadePolicy::and(), CascadePolicy::or()] {
                            let e = cascade::monte_carlo_loss(&p, cfg.nu, cfg.segment, dist, cfg.samples, cfg.seed)?;
                            rows.push(SweepRow::from_estimate(&p, cfg.nu, cfg.segment, &e));
                        }
                        continue;
                    }
                    for &kind in &cfg.policies {
                        let p = CascadePolicy::new(kind, ReferenceSpec::new(count, 1)?)?;
                        push_sweep(&mut rows, &p, cfg, dist)?;
                    }
                }
            }
            other => bail!("unknown experiment {other:?} (exact, distance, refcount)"),
        }
    }
    let header = Header::new("loss-sweep", &cfg.hash(), Some(cfg.seed));
    let mut buf = Vec::new();
    cascade::write_sweep_csv(&mut buf, &rows)?;
    emit::write_csv(out, &header, &buf)
}

fn push_sweep(rows: &mut Vec<SweepRow>, p: &CascadePolicy, cfg: &LossSweepConfig, dist: DistSpec) -> Result<()> {
    let t = cascade::sweep_reference_distance(p, cfg.nu, cfg.segment, &cfg.x_grid, dist, cfg.samples, cfg.seed)?;
    for (x, why) in &t.rejected {
        eprintln!(
            "skipping {} refs={} x={x} (nu={}, segment={}): {why}",
            p.kind, p.refs.count, cfg.nu, cfg.segment
        );
    }
    rows.extend(t.rows);
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_infer(cfg: &InferConfig, out: Option<&Path>) -> Result<()> {
    let net = NetworkSpec::resolve(&cfg.network)?;
    let weights = match &cfg.weights {
        Some(p) => WeightContainer::load(p)?,
        None => WeightContainer::random(&net, cfg.seed),
    };
    let data = match (&cfg.images, &cfg.labels) {
        (Some(i), Some(l)) => Dataset::load(i, l)?,
        _ => Dataset::synthetic(cfg.synthetic, net.input.h, net.input.w, cfg.seed.wrapping_add(1)),
    };
    let data = match cfg.limit {
        Some(n) => data.truncated(n),
        None => data,
    };
    let policy = cfg.policy()?;
    let crossbar: CrossbarConfig = cfg.crossbar.parse()?;
    let cmp = netio::compare_backends(&net, &weights, &data, crossbar, policy)
        .with_context(|| format!("inference on {}", net.topology()))?;
    #[derive(Serialize)]
    struct Doc<'a> {
        header: Header,
        network: String,
        samples: usize,
        crossbar: String,
        policy: CascadePolicy,
        result: &'a netio::AccuracyComparison,
    }
    let header = Header::new("infer", &cfg.hash(), Some(cfg.seed));
    let doc = Doc {
        header: header.clone(),
        network: net.topology(),
        samples: data.len(),
        crossbar: crossbar.to_string(),
        policy,
        result: &cmp,
    };
    emit::write_json(out, &doc)?;
    if let Some(path) = out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "name", "fan_in", "splits", "bits", "mismatches", "fraction"])?;
        for l in &cmp.layers {
            w.write_record([
                l.layer.to_string(),
                l.name.clone(),
                l.fan_in.to_string(),
                l.splits.to_string(),
                l.bits.to_string(),
                l.mismatches.to_string(),
                format!("{:.8}", l.fraction),
            ])?;
        }
        emit::write_csv(Some(&sidecar(path, ".layers.csv")), &header, &w.into_inner()?)?;
    }
    Ok(())
}

fn cmd_cost(cfg: &CostConfig, out: Option<&Path>) -> Result<()> {
    let params: CostParams<f64> =
        CostParams::from_path(&cfg.params).with_context(|| format!("cost parameters {}", cfg.params.display()))?;
    let opts = DesignOptions {
        crossbar: cfg.crossbar.parse()?,
        refs: ReferenceSpec::new(cfg.refs, cfg.ref_distance)?,
        parallel_window: cfg.parallel_window,
    };
    #[derive(Serialize)]
    struct NetDoc {
        name: String,
        proposed: costmodel::CostReport<f64>,
        baseline: costmodel::CostReport<f64>,
        comparison: costmodel::Comparison<f64>,
    }
    let mut docs = Vec::new();
    let mut transactions: Vec<(String, TransactionLog)> = Vec::new();
    for name in &cfg.networks {
        let net = NetworkSpec::resolve(name)?;
        let proposed = costmodel::estimate_proposed(&net, &params, &opts).with_context(|| format!("network {name}"))?;
        let baseline = costmodel::estimate_baseline(&net, &params, &opts).with_context(|| format!("network {name}"))?;
        let comparison = costmodel::compare(&proposed, &baseline)?;
        for (i, l) in net.layers.iter().enumerate() {
            if let Some(shape) = l.conv_shape() {
                let bits = if net.weight_layers().next().map(|(f, _)| f) == Some(i) { 8 } else { 1 };
                let log = dataflow::predicted_log_with_bus(&shape, opts.parallel_window, bits, params.bus_width_bits as usize)?;
                transactions.push((format!("{name}/{i}:{l}"), log));
            }
        }
        docs.push(NetDoc {
            name: name.clone(),
            proposed,
            baseline,
            comparison,
        });
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        header: Header,
        note: &'static str,
        params: &'a CostParams<f64>,
        options: DesignOptions,
        networks: &'a [NetDoc],
    }
    let header = Header::new("cost", &cfg.hash(&params), None);
    let doc = Doc {
        header: header.clone(),
        note: "Device energies are placeholder parameters; ratios and breakdown structure are meaningful, absolute values are not.",
        params: &params,
        options: opts,
        networks: &docs,
    };
    emit::write_json(out, &doc)?;
    if let Some(path) = out {
        let mut buf = Vec::new();
        let reports: Vec<&costmodel::CostReport<f64>> = docs.iter().flat_map(|d| [&d.proposed, &d.baseline]).collect();
        costmodel::write_report_csv(&mut buf, &reports)?;
        emit::write_csv(Some(&sidecar(path, ".layers.csv")), &header, &buf)?;
        let mut buf = Vec::new();
        dataflow::write_transaction_csv(&mut buf, &transactions)?;
        emit::write_csv(Some(&sidecar(path, ".transactions.csv")), &header, &buf)?;
    }
    Ok(())
}

/// Policy from a flag or config value.
fn parse_policy(s: &str) -> Result<CascadeKind> {
    Ok(s.parse::<CascadeKind>()?)
}
