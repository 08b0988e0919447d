//! Step-time composition and MFU estimation under a 1F1B pipeline.
//!
//! One pipeline slot processes one microbatch through one stage:
//!
//! ```text
//! (attn -> dispatch -> expert -> combine) x layers_per_stage -> P2P
//! ```
//!
//! Compute costs come from measured throughput curves (forward plus a 2x
//! backward, the conventional 2:1 flop ratio); each MoE layer pays four
//! all-to-alls per microbatch (dispatch and combine, forward and
//! backward), priced at the larger of the analytic NIC lower bound and
//! the measured all-to-all bandwidth. The step runs M + PP - 1 slots
//! (pipeline fill and drain), which yields the bubble fraction
//! `(PP-1) / (M+PP-1)` and the identity
//!
//! ```text
//! compute_fraction = t_compute / t_step = 1 - bubble - t_comm / t_step
//! ```
//!
//! MFU is the two-factor product: hardware efficiency
//! `F_model / (peak * G * t_compute)` times the compute fraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{a2a_bandwidth, attention_flops, gemm_flops, BenchProfile, ProfileError};
use crate::comm;
use crate::model::{ModelArch, ParallelPlan, PlatformSpec, TrainingRun};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("benchmark lookup failed: {0}")]
    Profile(#[from] ProfileError),
    #[error("arithmetic overflow computing model flops")]
    Overflow,
}

impl From<comm::CommError> for EstimateError {
    fn from(_: comm::CommError) -> Self {
        EstimateError::Overflow
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Recompute activations in the backward pass: compute time grows by
    /// 4/3 (one extra forward).
    pub activation_checkpointing: bool,
}

/// Full-step timing decomposition, per GPU, in seconds, plus the derived
/// utilization figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTimeBreakdown {
    pub t_attention: f64,
    pub t_expert: f64,
    pub t_dispatch: f64,
    pub t_combine: f64,
    pub t_p2p: f64,
    pub t_compute: f64,
    pub t_comm: f64,
    pub t_step: f64,
    pub bubble_fraction: f64,
    pub compute_fraction: f64,
    pub hardware_efficiency: f64,
    pub mfu: f64,
}

/// Pipeline bubble fraction of a 1F1B schedule: (PP-1)/(M+PP-1) of the
/// step is fill and drain.
pub fn bubble_fraction(pp: u64, m: u64) -> f64 {
    (pp - 1) as f64 / (m + pp - 1) as f64
}

pub fn estimate_step(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    platform: &PlatformSpec,
    profile: &BenchProfile,
) -> Result<StepTimeBreakdown, EstimateError> {
    estimate_step_with(arch, run, plan, platform, profile, &EstimatorOptions::default())
}

pub fn estimate_step_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    platform: &PlatformSpec,
    profile: &BenchProfile,
    opts: &EstimatorOptions,
) -> Result<StepTimeBreakdown, EstimateError> {
    let d = arch.d_model as f64;
    let m_batches = run.num_microbatches;
    let ep = plan.ep;
    let l = plan.layers_per_stage as f64;
    let moe_frac = arch.num_moe_layers as f64 / arch.num_layers as f64;
    let dense_frac = 1.0 - moe_frac;

    // Tokens one GPU processes per microbatch: the microbatch splits
    // across the EP-wide expert-data-parallel stage.
    let tokens_per_gpu =
        run.global_batch as f64 * run.seq_len as f64 / (m_batches as f64 * ep as f64);

    // Forward compute per layer per microbatch per GPU, from measured
    // throughput. Attention: 2 flop/param/token over 4d^2 params.
    let attn_series = format!("hd{}", arch.head_dim);
    let attn_tput = attention_flops(profile, &attn_series, run.seq_len)?;
    let t_attn_layer = 8.0 * d * d * tokens_per_gpu / attn_tput;

    // Experts: (k + shared) FFNs of mats*d*f params per token; dense
    // layers run one FFN of width ffn_dim_dense. Both price at the
    // expert-GEMM curve, looked up at the per-expert GEMM size: each
    // expert gathers its share of the whole microbatch's assignments.
    let gemm_series = format!("ffn{}", arch.ffn_dim_moe);
    let microbatch_tokens = run.global_batch as f64 * run.seq_len as f64 / m_batches as f64;
    let tokens_per_expert = (microbatch_tokens * arch.top_k as f64 / arch.num_experts as f64)
        .round()
        .max(1.0) as u64;
    let gemm_tput = gemm_flops(profile, &gemm_series, tokens_per_expert)?;
    let mats = arch.mats_per_expert as f64;
    let active = (arch.top_k + arch.num_shared_experts) as f64;
    let t_moe_layer = 2.0 * active * mats * d * arch.ffn_dim_moe as f64 * tokens_per_gpu / gemm_tput;
    let t_dense_layer = 2.0 * mats * d * arch.ffn_dim_dense as f64 * tokens_per_gpu / gemm_tput;

    // Slot compute: forward + 2x backward over the stage's layers.
    let ckpt = if opts.activation_checkpointing { 4.0 / 3.0 } else { 1.0 };
    let slot_attention = 3.0 * l * t_attn_layer * ckpt;
    let slot_expert = 3.0 * l * (moe_frac * t_moe_layer + dense_frac * t_dense_layer) * ckpt;
    let slot_compute = slot_attention + slot_expert;

    // One one-way all-to-all per MoE layer per microbatch; never cheaper
    // than the NIC saturation bound.
    let t_a2a_one = if ep < 2 {
        0.0
    } else {
        let volume = comm::dispatch_volume(arch, run, ep)?;
        let per_pair_mb = volume.per_pair_bytes.div_ceil(m_batches as u128);
        let per_gpu_mb = per_pair_mb * (ep - 1) as u128;
        let bound_one_way = 2.0 * run.global_batch as f64 * run.seq_len as f64
            * arch.top_k as f64
            * d
            / (m_batches as f64 * ep as f64 * platform.nic_bandwidth);
        let bw = a2a_bandwidth(profile, ep, per_pair_mb.min(u64::MAX as u128) as u64)?;
        (per_gpu_mb as f64 / bw).max(bound_one_way)
    };
    // dispatch-type and combine-type each occur twice (forward + backward)
    let slot_dispatch = l * moe_frac * 2.0 * t_a2a_one;
    let slot_combine = slot_dispatch;

    // Stage-boundary P2P, forward and backward once per slot. Boundaries
    // cross nodes once a stage spans a full node.
    let slot_p2p = if plan.pp < 2 {
        0.0
    } else {
        let volume = comm::p2p_stage_volume(arch, run, ep)?;
        let (bandwidth, alpha) = if ep >= platform.gpus_per_node {
            (platform.nic_bandwidth, platform.per_message_latency[1])
        } else {
            (platform.intra_node_bandwidth, platform.per_message_latency[0])
        };
        2.0 * (alpha + volume.per_gpu_send_bytes as f64 / bandwidth)
    };

    let slot = slot_compute + slot_dispatch + slot_combine + slot_p2p;
    let slots = (m_batches + plan.pp - 1) as f64;
    let t_step = slots * slot;

    let m = m_batches as f64;
    let t_attention = m * slot_attention;
    let t_expert = m * slot_expert;
    let t_dispatch = m * slot_dispatch;
    let t_combine = m * slot_combine;
    let t_p2p = m * slot_p2p;
    let t_compute = t_attention + t_expert;
    let t_comm = t_dispatch + t_combine + t_p2p;

    let bubble = bubble_fraction(plan.pp, m_batches);
    let compute_fraction = if t_step > 0.0 { t_compute / t_step } else { 0.0 };

    let f_model = comm::flops_per_step(arch, run)? as f64;
    let world = plan.world_size() as f64;
    let hardware_efficiency = if t_compute > 0.0 {
        f_model / (profile.effective_peak_flops * world * t_compute)
    } else {
        0.0
    };
    let mfu = hardware_efficiency * compute_fraction;

    Ok(StepTimeBreakdown {
        t_attention,
        t_expert,
        t_dispatch,
        t_combine,
        t_p2p,
        t_compute,
        t_comm,
        t_step,
        bubble_fraction: bubble,
        compute_fraction,
        hardware_efficiency,
        mfu,
    })
}
