//! Command-line front end for the moeplan toolkit.
//!
//! Every subcommand reads ordinary JSON/CSV inputs, computes, and emits a
//! human table (default) or machine JSON/CSV (`--format`). Outputs are
//! deterministic for identical inputs. Exit codes are stable for
//! scripting: 0 success, 2 input error, 3 "no feasible plan".

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use moeplan::bench::{self, BenchProfile};
use moeplan::estimator::{self, EstimatorOptions};
use moeplan::memory::{self, MemOptions, MemoryBreakdown};
use moeplan::model::{load_model_zoo, ModelArch, ParallelPlan, PlatformSpec, TrainingRun};
use moeplan::netsim::{self, Overlap, Placement};
use moeplan::planner::{self, PlannerOptions};
use moeplan::rebalance;

const EXIT_INPUT_ERROR: u8 = 2;
const EXIT_NO_FEASIBLE_PLAN: u8 = 3;

#[derive(Parser)]
#[command(
    name = "moeplan",
    about = "Planning, estimation, and simulation toolkit for MoE distributed training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct OutputArgs {
    /// Output format (csv applies to a2a-sim only)
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report to a file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the training-memory model for a model/run (all views)
    Mem {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Parallel plan as PPxEP (e.g. 2x4); adds the pipelined views
        #[arg(long)]
        plan: Option<String>,
        /// Platform JSON (adds framework overhead to totals)
        #[arg(long)]
        platform: Option<String>,
        #[arg(long)]
        flash_attention: bool,
        #[arg(long)]
        activation_checkpointing: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Enumerate feasible (PP, EP) plans over a node range
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        platform: String,
        /// Node counts to search, e.g. 4 or 1..8 or 1,2,4,8
        #[arg(long, default_value = "1..8")]
        nodes: String,
        /// Benchmark profile directory; enables MFU ranking
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Require EP to fit inside one node instead of one switch group
        #[arg(long)]
        strict_node_locality: bool,
        #[arg(long)]
        flash_attention: bool,
        #[arg(long)]
        activation_checkpointing: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Estimate step time and MFU for one plan
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        platform: String,
        #[arg(long)]
        profile: PathBuf,
        /// Parallel plan as PPxEP
        #[arg(long)]
        plan: String,
        #[arg(long)]
        activation_checkpointing: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulate flat vs hierarchical all-to-all over a sweep grid
    A2aSim {
        /// Platform JSON path or the literal "frontier-like"
        #[arg(long, default_value = "frontier-like")]
        platform: String,
        /// Node counts, e.g. 1..16 or 1,2,4,8,16
        #[arg(long, default_value = "1,2,4,8,16,32,64")]
        nodes: String,
        /// Per-pair message sizes in bytes, comma separated
        #[arg(long, default_value = "65536,1048576,4194304")]
        sizes: String,
        /// Which phase overlaps the intra-node phase
        #[arg(long, value_enum, default_value = "ii")]
        overlap: OverlapArg,
        #[arg(long, value_enum, default_value = "packed")]
        placement: PlacementArg,
        #[arg(long, default_value_t = 8)]
        groups_per_rack: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Emit the per-phase byte trace of one hierarchical all-to-all
    HaloTrace {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 8)]
        ranks_per_node: usize,
        #[arg(long, default_value_t = 4)]
        nics_per_node: usize,
        /// Bytes per buffer row (D * element width)
        #[arg(long)]
        row_bytes: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Replay a load trace through the migration scheduler
    Rebalance {
        /// Load trace CSV: step,layer,expert,tokens
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        model: PathBuf,
        /// Platform JSON (unused for cost when --bandwidth is given)
        #[arg(long)]
        platform: Option<String>,
        /// Expert-parallel group count for round-robin placement
        #[arg(long, default_value_t = 2)]
        groups: usize,
        /// Sidecar JSON array mapping expert id -> group (overrides the
        /// round-robin default)
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Layer to extract from the trace
        #[arg(long, default_value_t = 0)]
        layer: u64,
        /// Seconds per training step for the overhead fraction
        #[arg(long, default_value_t = 1.0)]
        step_time: f64,
        /// Migration bandwidth override in bytes/s (default 50e9)
        #[arg(long)]
        bandwidth: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// List the built-in zoo of published MoE configurations
    Zoo {
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write a deterministic synthetic benchmark profile
    SynthProfile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "frontier-like")]
        platform: String,
        /// Directory to write attention.csv, gemm.csv, a2a.csv into
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OverlapArg {
    Ii,
    Iii,
    None,
}

impl From<OverlapArg> for Overlap {
    fn from(v: OverlapArg) -> Self {
        match v {
            OverlapArg::Ii => Overlap::WithPhase2,
            OverlapArg::Iii => Overlap::WithPhase3,
            OverlapArg::None => Overlap::Sequential,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlacementArg {
    Packed,
    Scattered,
}

impl From<PlacementArg> for Placement {
    fn from(v: PlacementArg) -> Self {
        match v {
            PlacementArg::Packed => Placement::Packed,
            PlacementArg::Scattered => Placement::Scattered,
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT_ERROR,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

// ─── Input loading ────────────────────────────────────────────────────────────

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("cannot parse {what} {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelArch, CliError> {
    let arch: ModelArch = load_json(path, "model")?;
    arch.validate()
        .map_err(|e| CliError::input(format!("invalid model {}: {e}", path.display())))?;
    Ok(arch)
}

fn load_run(path: &Path) -> Result<TrainingRun, CliError> {
    let run: TrainingRun = load_json(path, "run")?;
    run.validate()
        .map_err(|e| CliError::input(format!("invalid run {}: {e}", path.display())))?;
    Ok(run)
}

fn load_platform(spec: &str) -> Result<PlatformSpec, CliError> {
    if spec == "frontier-like" {
        return Ok(PlatformSpec::frontier_like());
    }
    let platform: PlatformSpec = load_json(Path::new(spec), "platform")?;
    platform
        .validate()
        .map_err(|e| CliError::input(format!("invalid platform {spec}: {e}")))?;
    Ok(platform)
}

fn load_bench_profile(dir: &Path) -> Result<BenchProfile, CliError> {
    bench::load_profile(dir).map_err(|e| CliError::input(format!("profile: {e}")))
}

fn parse_plan(spec: &str, arch: &ModelArch, gpus_per_node: Option<u64>) -> Result<ParallelPlan, CliError> {
    let (pp, ep) = spec
        .split_once('x')
        .ok_or_else(|| CliError::input(format!("plan must be PPxEP, got {spec:?}")))?;
    let pp: u64 = pp
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("bad PP in plan {spec:?}")))?;
    let ep: u64 = ep
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("bad EP in plan {spec:?}")))?;
    if pp == 0 || ep == 0 {
        return Err(CliError::input("plan degrees must be positive"));
    }
    let num_nodes = match gpus_per_node {
        Some(g) if (pp * ep).is_multiple_of(g) => pp * ep / g,
        Some(g) => {
            return Err(CliError::input(format!(
                "plan {spec} needs {} GPUs, not a multiple of {g} GPUs/node",
                pp * ep
            )))
        }
        None => pp * ep,
    };
    Ok(ParallelPlan::new(pp, ep, num_nodes, arch.num_layers))
}

/// Accepts "4", "1..8" (inclusive), or comma-separated combinations.
fn parse_counts(spec: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((a, b)) = token.split_once("..") {
            let a: u64 = a
                .trim()
                .parse()
                .map_err(|_| CliError::input(format!("bad range start {token:?}")))?;
            let b: u64 = b
                .trim()
                .parse()
                .map_err(|_| CliError::input(format!("bad range end {token:?}")))?;
            if a == 0 || b < a {
                return Err(CliError::input(format!("bad range {token:?}")));
            }
            out.extend(a..=b);
        } else {
            let v: u64 = token
                .parse()
                .map_err(|_| CliError::input(format!("bad count {token:?}")))?;
            if v == 0 {
                return Err(CliError::input("counts must be positive"));
            }
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("empty count list"));
    }
    Ok(out)
}

fn emit(output: &OutputArgs, text: String) -> Result<(), CliError> {
    match &output.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::input(format!("serialization failed: {e}")))
}

fn group_digits(n: u128) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn gib(n: u128) -> f64 {
    n as f64 / (1u64 << 30) as f64
}

/// Four significant digits, for ratio reporting.
fn sig4(x: f64) -> String {
    if x == 0.0 {
        "0.000e0".to_string()
    } else {
        format!("{x:.3e}")
    }
}

// ─── Subcommand handlers ──────────────────────────────────────────────────────

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Mem {
            model,
            run,
            plan,
            platform,
            flash_attention,
            activation_checkpointing,
            output,
        } => cmd_mem(
            &model,
            &run,
            plan.as_deref(),
            platform.as_deref(),
            MemOptions {
                flash_attention,
                activation_checkpointing,
            },
            &output,
        ),
        Command::Plan {
            model,
            run,
            platform,
            nodes,
            profile,
            strict_node_locality,
            flash_attention,
            activation_checkpointing,
            output,
        } => cmd_plan(
            &model,
            &run,
            &platform,
            &nodes,
            profile.as_deref(),
            PlannerOptions {
                strict_node_locality,
                mem: MemOptions {
                    flash_attention,
                    activation_checkpointing,
                },
            },
            &output,
        ),
        Command::Estimate {
            model,
            run,
            platform,
            profile,
            plan,
            activation_checkpointing,
            output,
        } => cmd_estimate(
            &model,
            &run,
            &platform,
            &profile,
            &plan,
            EstimatorOptions {
                activation_checkpointing,
            },
            &output,
        ),
        Command::A2aSim {
            platform,
            nodes,
            sizes,
            overlap,
            placement,
            groups_per_rack,
            output,
        } => cmd_a2a_sim(
            &platform,
            &nodes,
            &sizes,
            overlap.into(),
            placement.into(),
            groups_per_rack,
            &output,
        ),
        Command::HaloTrace {
            nodes,
            ranks_per_node,
            nics_per_node,
            row_bytes,
            output,
        } => cmd_halo_trace(nodes, ranks_per_node, nics_per_node, row_bytes, &output),
        Command::Rebalance {
            trace,
            threshold,
            model,
            platform: _,
            groups,
            assignment,
            layer,
            step_time,
            bandwidth,
            output,
        } => cmd_rebalance(
            &trace,
            threshold,
            &model,
            groups,
            assignment.as_deref(),
            layer,
            step_time,
            bandwidth,
            &output,
        ),
        Command::Zoo { output } => cmd_zoo(&output),
        Command::SynthProfile {
            model,
            platform,
            out,
        } => cmd_synth_profile(&model, &platform, &out),
    }
}

#[derive(Serialize)]
struct MemReport {
    undivided: MemoryBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<ParallelPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edp: Option<MemoryBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gpipe: Option<MemoryBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ofob_stages: Option<Vec<MemoryBreakdown>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage_skew_bytes: Option<u128>,
}

fn cmd_mem(
    model: &Path,
    run: &Path,
    plan: Option<&str>,
    platform: Option<&str>,
    opts: MemOptions,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let arch = load_model(model)?;
    let run = load_run(run)?;
    let platform = platform.map(load_platform).transpose()?;
    let overhead = platform.as_ref().map_or(0, |p| p.framework_overhead_bytes);
    let mem_err = |e: memory::MemError| CliError::input(format!("memory model: {e}"));
    let finish = |m: MemoryBreakdown| m.with_framework_overhead(overhead).map_err(mem_err);

    let undivided = finish(memory::undivided_memory_with(&arch, &run, &opts).map_err(mem_err)?)?;
    let mut report = MemReport {
        undivided,
        plan: None,
        edp: None,
        gpipe: None,
        ofob_stages: None,
        stage_skew_bytes: None,
    };

    if let Some(spec) = plan {
        let plan = parse_plan(spec, &arch, platform.as_ref().map(|p| p.gpus_per_node))?;
        report.plan = Some(plan);
        report.edp = Some(finish(
            memory::edp_memory_with(&arch, &run, plan.ep, &opts).map_err(mem_err)?,
        )?);
        let mut gpipe = memory::gpipe_memory_with(&arch, &run, &plan, &opts).map_err(mem_err)?;
        gpipe.per_stage = None;
        report.gpipe = Some(finish(gpipe)?);
        let stages = (0..plan.pp)
            .map(|i| {
                memory::ofob_stage_memory_with(&arch, &run, &plan, i, &opts)
                    .map_err(mem_err)
                    .and_then(finish)
            })
            .collect::<Result<Vec<_>, _>>()?;
        report.ofob_stages = Some(stages);
        report.stage_skew_bytes =
            Some(memory::stage_memory_skew_with(&arch, &run, &plan, &opts).map_err(mem_err)?);
    }

    match output.format {
        Format::Json => emit(output, to_json(&report)?),
        _ => {
            let mut text = String::new();
            let row = |name: &str, m: &MemoryBreakdown| {
                format!(
                    "{name:<14} {:>22} B  ({:.3} GiB)\n",
                    group_digits(m.total_bytes),
                    gib(m.total_bytes)
                )
            };
            text.push_str(&row("undivided", &report.undivided));
            if let Some(m) = &report.edp {
                text.push_str(&row("edp", m));
            }
            if let Some(m) = &report.gpipe {
                text.push_str(&row("gpipe", m));
            }
            if let Some(stages) = &report.ofob_stages {
                text.push_str("1F1B per-stage peak:\n");
                text.push_str("  stage      total_bytes        params_bytes    activation_bytes\n");
                for (i, m) in stages.iter().enumerate() {
                    text.push_str(&format!(
                        "  {i:>5} {:>16} {:>19} {:>19}\n",
                        group_digits(m.total_bytes),
                        group_digits(m.attn_params_bytes + m.expert_params_bytes),
                        group_digits(m.attn_activation_bytes + m.expert_activation_bytes),
                    ));
                }
            }
            if let Some(skew) = report.stage_skew_bytes {
                text.push_str(&format!("stage skew     {:>22} B\n", group_digits(skew)));
            }
            emit(output, text)
        }
    }
}

#[derive(Serialize)]
struct PlanReport {
    verdicts: Vec<planner::PlanVerdict>,
    feasible_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_nodes: Option<u64>,
}

fn cmd_plan(
    model: &Path,
    run: &Path,
    platform: &str,
    nodes: &str,
    profile: Option<&Path>,
    opts: PlannerOptions,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let arch = load_model(model)?;
    let run = load_run(run)?;
    let platform = load_platform(platform)?;
    let profile = profile.map(load_bench_profile).transpose()?;
    let counts = parse_counts(nodes)?;

    let mut verdicts = Vec::new();
    for &n in &counts {
        verdicts.extend(planner::enumerate_plans(
            &arch,
            &run,
            &platform,
            n..=n,
            profile.as_ref(),
            &opts,
        ));
    }
    // enumerate per count, then re-sort globally with the same contract
    let mut all = planner::sort_verdicts(verdicts);

    let feasible_count = all.iter().filter(|v| v.feasible).count();
    let min_nodes = all
        .iter()
        .filter(|v| v.feasible)
        .map(|v| v.plan.num_nodes)
        .min();
    let report = PlanReport {
        verdicts: std::mem::take(&mut all),
        feasible_count,
        min_nodes,
    };

    let rendered = match output.format {
        Format::Json => to_json(&report)?,
        _ => {
            let mut text = String::new();
            text.push_str("nodes    PP    EP      feasible  peak_stage0_GiB   est_mfu  failed\n");
            for v in &report.verdicts {
                let peak = if v.peak_stage0_bytes == u128::MAX {
                    "-".to_string()
                } else {
                    format!("{:.3}", gib(v.peak_stage0_bytes))
                };
                let mfu = v
                    .estimated_mfu
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "-".to_string());
                text.push_str(&format!(
                    "{:>5} {:>5} {:>5} {:>13} {:>17} {:>9}  {}\n",
                    v.plan.num_nodes,
                    v.plan.pp,
                    v.plan.ep,
                    v.feasible,
                    peak,
                    mfu,
                    v.constraints.failures().join(",")
                ));
            }
            text.push_str(&match report.min_nodes {
                Some(n) => format!("min feasible nodes: {n}\n"),
                None => "no feasible plan in the searched range\n".to_string(),
            });
            text
        }
    };
    emit(output, rendered)?;
    if feasible_count == 0 {
        return Err(CliError {
            code: EXIT_NO_FEASIBLE_PLAN,
            message: "no feasible plan".to_string(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    plan: ParallelPlan,
    breakdown: estimator::StepTimeBreakdown,
}

fn cmd_estimate(
    model: &Path,
    run: &Path,
    platform: &str,
    profile: &Path,
    plan: &str,
    opts: EstimatorOptions,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let arch = load_model(model)?;
    let run = load_run(run)?;
    let platform = load_platform(platform)?;
    let profile = load_bench_profile(profile)?;
    let plan = parse_plan(plan, &arch, Some(platform.gpus_per_node))?;
    let breakdown = estimator::estimate_step_with(&arch, &run, &plan, &platform, &profile, &opts)
        .map_err(|e| CliError::input(format!("estimate: {e}")))?;
    let report = EstimateReport { plan, breakdown };

    match output.format {
        Format::Json => emit(output, to_json(&report)?),
        _ => {
            let b = &report.breakdown;
            let mut text = String::new();
            text.push_str(&format!(
                "plan PP={} EP={} on {} nodes\n",
                report.plan.pp, report.plan.ep, report.plan.num_nodes
            ));
            for (name, v) in [
                ("t_attention", b.t_attention),
                ("t_expert", b.t_expert),
                ("t_dispatch", b.t_dispatch),
                ("t_combine", b.t_combine),
                ("t_p2p", b.t_p2p),
                ("t_compute", b.t_compute),
                ("t_comm", b.t_comm),
                ("t_step", b.t_step),
            ] {
                text.push_str(&format!("{name:<12} {v:.6e} s\n"));
            }
            text.push_str(&format!(
                "bubble {:.4}  compute_fraction {:.4}  hardware_efficiency {:.4}\n",
                b.bubble_fraction, b.compute_fraction, b.hardware_efficiency
            ));
            // compute_fraction = 1 - bubble - t_comm/t_step, by construction
            let identity = 1.0 - b.bubble_fraction - b.t_comm / b.t_step;
            text.push_str(&format!(
                "identity check: compute_fraction = {:.9} vs 1 - b - comm/step = {identity:.9}\n",
                b.compute_fraction
            ));
            text.push_str(&format!("MFU {:.4}\n", b.mfu));
            emit(output, text)
        }
    }
}

fn cmd_a2a_sim(
    platform: &str,
    nodes: &str,
    sizes: &str,
    overlap: Overlap,
    placement: Placement,
    groups_per_rack: u64,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let platform = load_platform(platform)?;
    let node_counts = parse_counts(nodes)?;
    let size_list = parse_counts(sizes)?;
    let rows = netsim::sweep(
        &platform,
        placement,
        groups_per_rack,
        &node_counts,
        &size_list,
        overlap,
    )
    .map_err(|e| CliError::input(format!("simulation: {e}")))?;

    match output.format {
        Format::Json => emit(output, to_json(&rows)?),
        _ => emit(output, netsim::sweep_to_csv(&rows)),
    }
}

fn cmd_halo_trace(
    nodes: usize,
    ranks_per_node: usize,
    nics_per_node: usize,
    row_bytes: u64,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let groups = moeplan::halo::CommGroups::new(nodes, ranks_per_node, nics_per_node)
        .map_err(|e| CliError::input(format!("communicator: {e}")))?;
    let trace = moeplan::halo::trace_phases(&groups, row_bytes);
    match output.format {
        Format::Json => emit(output, to_json(&trace)?),
        _ => {
            let mut text = String::new();
            text.push_str(&format!(
                "{} nodes x {} ranks, {} B rows; phase1 || (phase2 -> phase3)\n",
                trace.num_nodes, trace.ranks_per_node, trace.row_bytes
            ));
            text.push_str("rank  node  nic   phase1_B   phase2_B   phase3_B\n");
            for r in &trace.per_rank {
                text.push_str(&format!(
                    "{:>4} {:>5} {:>4} {:>10} {:>10} {:>10}\n",
                    r.rank, r.node, r.nic, r.phase1_send_bytes, r.phase2_send_bytes,
                    r.phase3_send_bytes
                ));
            }
            emit(output, text)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_rebalance(
    trace: &Path,
    threshold: f64,
    model: &Path,
    groups: usize,
    assignment: Option<&Path>,
    layer: u64,
    step_time: f64,
    bandwidth: Option<f64>,
    output: &OutputArgs,
) -> Result<(), CliError> {
    if threshold <= 0.0 {
        return Err(CliError::input("threshold must be positive"));
    }
    if groups < 2 {
        return Err(CliError::input("need at least 2 groups"));
    }
    let arch = load_model(model)?;
    let assignment = match assignment {
        Some(path) => {
            // sidecar: JSON array, index = expert id, value = group
            let per_expert: Vec<usize> = load_json(path, "assignment")?;
            if per_expert.iter().any(|&g| g >= groups) {
                return Err(CliError::input(format!(
                    "assignment references a group >= {groups}"
                )));
            }
            per_expert
                .into_iter()
                .enumerate()
                .map(|(e, g)| (e as u64, g))
                .collect()
        }
        None => rebalance::round_robin_assignment(arch.num_experts, groups),
    };
    let states = rebalance::ingest_load_trace(trace, layer, &assignment, groups)
        .map_err(|e| CliError::input(format!("trace: {e}")))?;
    let schedule =
        rebalance::run_migration_schedule(&states, threshold, &arch, bandwidth, step_time)
            .map_err(|e| CliError::input(format!("rebalance: {e}")))?;

    match output.format {
        Format::Json => emit(output, to_json(&schedule)?),
        _ => {
            let mut text = String::new();
            text.push_str(&format!(
                "steps {}  threshold {}  migrations {}\n",
                schedule.num_steps,
                threshold,
                schedule.events.len()
            ));
            for e in &schedule.events {
                let r = &e.result;
                text.push_str(&format!(
                    "step {:>6}: {} swap(s), delta {} -> {}, latency {:.3} ms\n",
                    e.step,
                    r.swap_count,
                    r.initial_imbalance,
                    r.final_imbalance,
                    r.migration.as_ref().map_or(0.0, |m| m.latency_seconds) * 1e3
                ));
                for s in &r.swaps {
                    text.push_str(&format!(
                        "    expert {} (group {}) <-> expert {} (group {})\n",
                        s.expert_from_heavy, s.heavy_group, s.expert_from_light, s.light_group
                    ));
                }
            }
            text.push_str(&format!(
                "amortized overhead fraction: {}\n",
                sig4(schedule.overhead_fraction)
            ));
            emit(output, text)
        }
    }
}

fn cmd_zoo(output: &OutputArgs) -> Result<(), CliError> {
    let zoo = load_model_zoo();
    match output.format {
        Format::Json => emit(output, to_json(&zoo)?),
        _ => {
            let mut text = String::new();
            text.push_str(
                "id                 layers  hidden  ffn_moe  experts  shared  top_k  approx\n",
            );
            for e in &zoo.entries {
                match &e.arch {
                    Some(a) => text.push_str(&format!(
                        "{:<18} {:>6} {:>7} {:>8} {:>8} {:>7} {:>6} {:>7}\n",
                        e.id,
                        a.num_layers,
                        a.d_model,
                        a.ffn_dim_moe,
                        a.num_experts,
                        a.num_shared_experts,
                        a.top_k,
                        e.approximate
                    )),
                    None => text.push_str(&format!(
                        "{:<18} {:>6} {:>7} {:>8} {:>8} {:>7} {:>6} {:>7}\n",
                        e.id, "-", "-", "-", "-", "-", "-", e.approximate
                    )),
                }
            }
            emit(output, text)
        }
    }
}

fn cmd_synth_profile(model: &Path, platform: &str, out: &Path) -> Result<(), CliError> {
    let arch = load_model(model)?;
    let platform = load_platform(platform)?;
    let profile = bench::synthetic_profile(&arch, &platform);
    bench::save_profile(&profile, out)
        .map_err(|e| CliError::input(format!("cannot write profile: {e}")))?;
    println!(
        "wrote synthetic profile for hd{} / ffn{} to {}",
        arch.head_dim,
        arch.ffn_dim_moe,
        out.display()
    );
    Ok(())
}
