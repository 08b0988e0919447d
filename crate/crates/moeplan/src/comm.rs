//! Closed-form communication volumes and latency bounds: token
//! dispatch/combine all-to-all, inter-stage pipeline P2P, expert
//! migration cost, and the FLOPs-per-step model.
//!
//! Volumes assume balanced routing: each GPU in an EP group sends
//! `bsk/EP` tokens to every peer, so the directed per-pair message is
//! `bsk/EP * d * 2` bytes at fp16 and the dispatch total across the
//! group is `2(EP-1)bsk*d` bytes. Combine is the identical movement in
//! the reverse direction. Token counts that are non-integral under the
//! balanced-expectation model are kept as exact rationals and ceiled only
//! at the byte level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{add, ceil_div, mul, prod, Overflow};
use crate::model::{ModelArch, PlatformSpec, TrainingRun};

/// Average measured intra-node all-to-all bandwidth used for migration
/// latency when no explicit figure is supplied (decimal GB/s).
pub const DEFAULT_MIGRATION_BANDWIDTH: f64 = 50e9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommError {
    #[error("byte count overflows u128")]
    Overflow,
}

impl From<Overflow> for CommError {
    fn from(_: Overflow) -> Self {
        CommError::Overflow
    }
}

/// A balanced collective's volume, viewed per pair, per GPU, and in total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommVolume {
    /// Directed bytes from one GPU to one peer.
    pub per_pair_bytes: u128,
    /// Bytes one GPU sends in total.
    pub per_gpu_send_bytes: u128,
    /// Bytes moved across the whole group.
    pub total_bytes: u128,
    pub participants: u64,
    /// True when the operation moves no bytes off-GPU (EP = 1).
    pub local_only: bool,
}

/// Token dispatch all-to-all volume for one MoE layer, forward pass,
/// full batch. At `ep == 1` routing is local and the volume is zero.
pub fn dispatch_volume(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
) -> Result<CommVolume, CommError> {
    if ep < 2 {
        return Ok(CommVolume {
            per_pair_bytes: 0,
            per_gpu_send_bytes: 0,
            total_bytes: 0,
            participants: ep.max(1),
            local_only: true,
        });
    }
    // bsk/EP tokens of d elements at activation width, per directed pair.
    let num = prod(&[
        run.global_batch as u128,
        run.seq_len as u128,
        arch.top_k as u128,
        arch.d_model as u128,
        run.activation_bytes as u128,
    ])?;
    let per_pair = ceil_div(num, ep as u128);
    let per_gpu = mul(per_pair, (ep - 1) as u128)?;
    let total = mul(per_gpu, ep as u128)?;
    Ok(CommVolume {
        per_pair_bytes: per_pair,
        per_gpu_send_bytes: per_gpu,
        total_bytes: total,
        participants: ep,
        local_only: false,
    })
}

/// Combine moves the same bytes as dispatch, in the reverse direction.
pub fn combine_volume(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
) -> Result<CommVolume, CommError> {
    dispatch_volume(arch, run, ep)
}

/// Lower bound on dispatch + combine latency for one MoE layer's forward
/// pass: 4*b*s*k*d / (EP * B_NIC) seconds. Tight when every NIC is
/// uniformly saturated. Returns 0 for EP < 2 (no inter-GPU traffic).
pub fn a2a_latency_lower_bound(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
    platform: &PlatformSpec,
) -> f64 {
    if ep < 2 {
        return 0.0;
    }
    let numer = 4.0
        * run.global_batch as f64
        * run.seq_len as f64
        * arch.top_k as f64
        * arch.d_model as f64;
    numer / (ep as f64 * platform.nic_bandwidth)
}

/// Inter-stage boundary traffic per microbatch: each of the EP GPUs
/// holding a stage's last layer sends its microbatch slice of
/// activations, `2 * (b/M) * s * d` bytes, to its counterpart in the
/// next stage.
pub fn p2p_stage_volume(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
) -> Result<CommVolume, CommError> {
    let num = prod(&[
        run.activation_bytes as u128,
        run.global_batch as u128,
        run.seq_len as u128,
        arch.d_model as u128,
    ])?;
    let per_gpu = ceil_div(num, run.num_microbatches as u128);
    let total = mul(per_gpu, ep as u128)?;
    Ok(CommVolume {
        per_pair_bytes: per_gpu,
        per_gpu_send_bytes: per_gpu,
        total_bytes: total,
        participants: ep,
        local_only: false,
    })
}

/// Cost of physically moving experts between GPUs: parameters plus
/// optimizer state and gradients at `bytes_per_param` (16) for each of
/// the expert's `mats_per_expert` (3) weight matrices, i.e. 48*d*f bytes
/// per expert by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlanCost {
    pub bytes_per_gpu: u128,
    pub latency_seconds: f64,
    pub experts_moved: u64,
}

/// Migration cost for moving `experts_to_move_per_gpu` experts off one
/// GPU, at `bandwidth` bytes/s (defaults to
/// [`DEFAULT_MIGRATION_BANDWIDTH`] when `None`).
pub fn migration_cost(
    arch: &ModelArch,
    experts_to_move_per_gpu: u64,
    bandwidth: Option<f64>,
) -> Result<MigrationPlanCost, CommError> {
    let bytes_per_expert = prod(&[
        16,
        arch.mats_per_expert as u128,
        arch.d_model as u128,
        arch.ffn_dim_moe as u128,
    ])?;
    let bytes = mul(bytes_per_expert, experts_to_move_per_gpu as u128)?;
    let bw = bandwidth.unwrap_or(DEFAULT_MIGRATION_BANDWIDTH);
    Ok(MigrationPlanCost {
        bytes_per_gpu: bytes,
        latency_seconds: bytes as f64 / bw,
        experts_moved: experts_to_move_per_gpu,
    })
}

/// Worst case: a complete re-assignment moves all E/G experts hosted by
/// each of the `gpus` GPUs in the group.
pub fn worst_case_migration(
    arch: &ModelArch,
    gpus: u64,
    bandwidth: Option<f64>,
) -> Result<MigrationPlanCost, CommError> {
    migration_cost(arch, arch.num_experts / gpus.max(1), bandwidth)
}

/// One row of the worst-case migration reference table, reproduced under
/// its publication convention: the send size is `48*(E/G)*d*f` bytes
/// displayed in GiB rounded half-away-from-zero to two decimals, and the
/// latency column divides that *printed* figure by 50 GB/s (decimal), so
/// latency_ms = printed_size * 20.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationTableRow {
    pub model: String,
    pub experts_per_layer: u64,
    pub d_model: u64,
    pub ffn_dim: u64,
    pub send_bytes_per_gpu: u128,
    pub send_size_display: f64,
    pub latency_ms_display: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Builds a migration-table row for an expert group of `gpus` GPUs.
pub fn migration_table_row(
    model: &str,
    experts_per_layer: u64,
    d_model: u64,
    ffn_dim: u64,
    gpus: u64,
) -> MigrationTableRow {
    let bytes = 48u128 * (experts_per_layer / gpus) as u128 * d_model as u128 * ffn_dim as u128;
    let gib = round2(bytes as f64 / (1u64 << 30) as f64);
    MigrationTableRow {
        model: model.to_string(),
        experts_per_layer,
        d_model,
        ffn_dim,
        send_bytes_per_gpu: bytes,
        send_size_display: gib,
        latency_ms_display: round2(gib * 20.0),
    }
}

/// The reference worst-case migration table: one layer per node of 8
/// GPUs, full re-assignment.
pub fn migration_reference_table() -> Vec<MigrationTableRow> {
    [
        ("Switch-Base", 128, 768, 2048),
        ("Mixtral 8x7B", 8, 4096, 14336),
        ("Mixtral 8x22B", 8, 6144, 16384),
        ("Grok-1", 8, 6144, 32768),
        ("GLaM (1.2T)", 64, 8192, 32768),
        ("DeepSeek-V2", 160, 5120, 1536),
        ("DeepSeek-V3", 256, 7168, 2048),
    ]
    .into_iter()
    .map(|(m, e, d, f)| migration_table_row(m, e, d, f, 8))
    .collect()
}

/// Theoretical flops per optimizer step: 6 flop per active parameter per
/// token, over active parameters
/// `N = L_moe*(4d^2 + (k+Es)*3*d*f) + L_dense*(4d^2 + 3*d*f_dense)`
/// (embeddings and router excluded).
pub fn flops_per_step(arch: &ModelArch, run: &TrainingRun) -> Result<u128, CommError> {
    flops_per_step_with(arch, run, false)
}

/// `include_score_flops` adds the attention-score/value term
/// `12*b*s^2*d*L` for sensitivity analysis; the base model follows the
/// plain 6-flops-per-parameter-per-token rule.
pub fn flops_per_step_with(
    arch: &ModelArch,
    run: &TrainingRun,
    include_score_flops: bool,
) -> Result<u128, CommError> {
    let active = active_params(arch)?;
    let tokens = mul(run.global_batch as u128, run.seq_len as u128)?;
    let mut flops = prod(&[6, active, tokens])?;
    if include_score_flops {
        let score = prod(&[
            12,
            run.global_batch as u128,
            run.seq_len as u128,
            run.seq_len as u128,
            arch.d_model as u128,
            arch.num_layers as u128,
        ])?;
        flops = add(flops, score)?;
    }
    Ok(flops)
}

/// Parameters touched by every token.
pub fn active_params(arch: &ModelArch) -> Result<u128, CommError> {
    let d = arch.d_model as u128;
    let attn = prod(&[4, d, d])?;
    let moe_ffn = prod(&[
        (arch.top_k + arch.num_shared_experts) as u128,
        arch.mats_per_expert as u128,
        d,
        arch.ffn_dim_moe as u128,
    ])?;
    let dense_ffn = prod(&[arch.mats_per_expert as u128, d, arch.ffn_dim_dense as u128])?;
    let moe_layers = mul(arch.num_moe_layers as u128, add(attn, moe_ffn)?)?;
    let dense_layers = mul(arch.num_dense_layers() as u128, add(attn, dense_ffn)?)?;
    add(moe_layers, dense_layers).map_err(CommError::from)
}
