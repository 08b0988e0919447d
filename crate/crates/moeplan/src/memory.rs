//! Training-memory models in exact integer bytes.
//!
//! Four views of the same per-layer accounting, all per GPU:
//!
//! - [`undivided_memory`] — everything on one hypothetical GPU (the lower
//!   bound on total memory).
//! - [`edp_memory`] — expert-data parallelism: routed experts sharded
//!   over EP, attention (and shared experts) replicated.
//! - [`gpipe_memory`] — pipelined EDP with a GPipe schedule: L/PP layers
//!   per stage, all M microbatches' activations alive at peak.
//! - [`ofob_stage_memory`] — 1F1B schedule: stage i holds PP - i
//!   in-flight microbatches.
//!
//! Per-layer accounting (bytes):
//!
//! | component          | static               | activation                    |
//! |--------------------|----------------------|-------------------------------|
//! | attention          | 64 d^2               | 12bsd + 4Hbs^2                |
//! | routed experts     | 48 (E/EP) d f        | 2bs k (3f + d) / EP           |
//! | shared experts     | 48 E_s d f           | 2bs E_s (3f + d) / EP         |
//!
//! Dense (non-MoE) layers reuse the expert column with a single
//! always-active FFN of width `ffn_dim_dense`, replicated like attention
//! (no EP sharding, no dispatch).
//!
//! Arithmetic is exact: divisions by EP, M, and M*EP are evaluated as
//! exact rationals and ceiled to whole bytes at the per-layer /
//! per-microbatch term, *before* scaling by integer layer and in-flight
//! counts. Ceiling at the finest granularity is the conservative
//! direction for feasibility checks, and it makes the closed-form stage
//! skew equal the stage-0-minus-last-stage difference exactly, whether or
//! not M divides b.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{add, ceil_div, mul, prod, Overflow};
use crate::model::{ModelArch, ParallelPlan, TrainingRun};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("byte count overflows u128")]
    Overflow,
    #[error("ep = {ep} does not divide num_experts = {num_experts}")]
    EpDoesNotDivideExperts { ep: u64, num_experts: u64 },
    #[error("pp = {pp} does not divide num_layers = {num_layers}")]
    PpDoesNotDivideLayers { pp: u64, num_layers: u64 },
    #[error("stage {stage} out of range for pp = {pp}")]
    StageOutOfRange { stage: u64, pp: u64 },
    #[error("ep must be positive")]
    ZeroEp,
}

impl From<Overflow> for MemError {
    fn from(_: Overflow) -> Self {
        MemError::Overflow
    }
}

/// Model toggles that change the activation accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemOptions {
    /// Replace the 4Hbs^2 attention-score term with 2Hbs.
    pub flash_attention: bool,
    /// Drop attention activation terms entirely (they are recomputed in
    /// the backward pass instead of stored).
    pub activation_checkpointing: bool,
}

/// Per-GPU memory with the contributing terms separated. All fields are
/// exact bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub attn_params_bytes: u128,
    pub expert_params_bytes: u128,
    pub attn_activation_bytes: u128,
    pub expert_activation_bytes: u128,
    /// Added once per GPU when a platform is attached; zero otherwise.
    pub framework_overhead_bytes: u128,
    pub total_bytes: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_stage: Option<Vec<MemoryBreakdown>>,
}

impl MemoryBreakdown {
    fn from_parts(parts: Parts) -> Result<Self, MemError> {
        let total = add(
            add(parts.attn_params, parts.expert_params)?,
            add(parts.attn_act, parts.expert_act)?,
        )?;
        Ok(MemoryBreakdown {
            attn_params_bytes: parts.attn_params,
            expert_params_bytes: parts.expert_params,
            attn_activation_bytes: parts.attn_act,
            expert_activation_bytes: parts.expert_act,
            framework_overhead_bytes: 0,
            total_bytes: total,
            per_stage: None,
        })
    }

    /// Returns a copy with `overhead` bytes added to the total.
    pub fn with_framework_overhead(&self, overhead: u64) -> Result<Self, MemError> {
        let mut out = self.clone();
        out.framework_overhead_bytes = overhead as u128;
        out.total_bytes = add(out.total_bytes, overhead as u128)?;
        Ok(out)
    }
}

struct Parts {
    attn_params: u128,
    expert_params: u128,
    attn_act: u128,
    expert_act: u128,
}

/// How many microbatches' activations are alive at peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InFlight {
    /// The whole global batch (undivided / EDP / GPipe views).
    FullBatch,
    /// `count` microbatches of size b/M (the 1F1B view).
    Microbatches(u64),
}

/// Per-layer dimensions for one layer class (MoE or dense).
struct LayerDims {
    ffn_dim: u128,
    /// Experts sharded over EP (routed count; 0 for dense layers).
    sharded_experts: u128,
    /// Always-active replicated experts (shared experts, or the single
    /// dense FFN).
    replicated_experts: u128,
    /// Experts each token activates in this layer class.
    active_per_token: u128,
    /// Whether token activations shard over EP (dense layers keep all
    /// their tokens local).
    ep_shards_tokens: bool,
}

fn moe_dims(arch: &ModelArch) -> LayerDims {
    LayerDims {
        ffn_dim: arch.ffn_dim_moe as u128,
        sharded_experts: arch.num_experts as u128,
        replicated_experts: arch.num_shared_experts as u128,
        active_per_token: (arch.top_k + arch.num_shared_experts) as u128,
        ep_shards_tokens: true,
    }
}

fn dense_dims(arch: &ModelArch) -> LayerDims {
    LayerDims {
        ffn_dim: arch.ffn_dim_dense as u128,
        sharded_experts: 0,
        replicated_experts: 1,
        active_per_token: 1,
        ep_shards_tokens: false,
    }
}

/// Core per-GPU accounting over an explicit mix of layers.
///
/// `moe_layers` + `dense_layers` is the layer count held by this GPU;
/// `ep` is the expert-parallel degree; `in_flight` selects full-batch or
/// per-microbatch activations.
fn stage_parts(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
    moe_layers: u64,
    dense_layers: u64,
    in_flight: InFlight,
    opts: &MemOptions,
) -> Result<Parts, MemError> {
    if ep == 0 {
        return Err(MemError::ZeroEp);
    }
    if !arch.num_experts.is_multiple_of(ep) {
        return Err(MemError::EpDoesNotDivideExperts {
            ep,
            num_experts: arch.num_experts,
        });
    }
    let d = arch.d_model as u128;
    let h = arch.num_heads as u128;
    let b = run.global_batch as u128;
    let s = run.seq_len as u128;
    let m = run.num_microbatches as u128;
    let beta_p = run.bytes_per_param as u128;
    let beta_a = run.activation_bytes as u128;
    let n_mat = arch.mats_per_expert as u128;
    let ep = ep as u128;

    // (microbatch denominator, in-flight multiplier)
    let (mb_den, alive) = match in_flight {
        InFlight::FullBatch => (1u128, 1u128),
        InFlight::Microbatches(c) => (m, c as u128),
    };

    let attn_params_layer = prod(&[4, beta_p, d, d])?; // 64 d^2 at 16 B/param

    // Attention activations per microbatch slice, each term ceiled
    // separately: 12bsd and 4Hbs^2 (or 2Hbs with flash attention).
    let attn_act_layer = if opts.activation_checkpointing {
        0
    } else {
        let proj = ceil_div(prod(&[6, beta_a, b, s, d])?, mb_den);
        let score = if opts.flash_attention {
            ceil_div(prod(&[beta_a, h, b, s])?, mb_den)
        } else {
            ceil_div(prod(&[2, beta_a, h, b, s, s])?, mb_den)
        };
        add(proj, score)?
    };

    let mut attn_params: u128 = 0;
    let mut expert_params: u128 = 0;
    let mut attn_act: u128 = 0;
    let mut expert_act: u128 = 0;

    for (layers, dims) in [
        (moe_layers as u128, moe_dims(arch)),
        (dense_layers as u128, dense_dims(arch)),
    ] {
        if layers == 0 {
            continue;
        }
        let per_expert = prod(&[beta_p, n_mat, d, dims.ffn_dim])?; // 48 d f
        let hosted = dims.sharded_experts / ep + dims.replicated_experts;
        let expert_params_layer = mul(per_expert, hosted)?;

        // beta_a * b * s * active * (n_mat * f + d), sharded over EP when
        // tokens dispatch, then over M for the microbatch slice.
        let act_num = prod(&[
            beta_a,
            b,
            s,
            dims.active_per_token,
            add(mul(n_mat, dims.ffn_dim)?, d)?,
        ])?;
        let act_den = mul(mb_den, if dims.ep_shards_tokens { ep } else { 1 })?;
        let expert_act_layer = ceil_div(act_num, act_den);

        attn_params = add(attn_params, mul(layers, attn_params_layer)?)?;
        expert_params = add(expert_params, mul(layers, expert_params_layer)?)?;
        attn_act = add(attn_act, prod(&[layers, alive, attn_act_layer])?)?;
        expert_act = add(expert_act, prod(&[layers, alive, expert_act_layer])?)?;
    }

    Ok(Parts {
        attn_params,
        expert_params,
        attn_act,
        expert_act,
    })
}

/// Layer mix of pipeline stage `i` under the canonical layout: layers
/// `[i*l, (i+1)*l)` with MoE layers first. Returns (moe, dense) counts.
fn stage_layer_mix(arch: &ModelArch, plan: &ParallelPlan, stage: u64) -> (u64, u64) {
    let l = plan.layers_per_stage;
    let start = stage * l;
    let end = ((stage + 1) * l).min(arch.num_layers);
    let layers = end.saturating_sub(start);
    let moe = arch.num_moe_layers.saturating_sub(start).min(layers);
    (moe, layers - moe)
}

fn require_pp_divides(arch: &ModelArch, plan: &ParallelPlan) -> Result<(), MemError> {
    if !arch.num_layers.is_multiple_of(plan.pp) {
        return Err(MemError::PpDoesNotDivideLayers {
            pp: plan.pp,
            num_layers: arch.num_layers,
        });
    }
    Ok(())
}

/// Lower bound with no model parallelism: every parameter and the whole
/// batch's activations on one GPU.
pub fn undivided_memory(arch: &ModelArch, run: &TrainingRun) -> Result<MemoryBreakdown, MemError> {
    undivided_memory_with(arch, run, &MemOptions::default())
}

pub fn undivided_memory_with(
    arch: &ModelArch,
    run: &TrainingRun,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    let parts = stage_parts(
        arch,
        run,
        1,
        arch.num_moe_layers,
        arch.num_dense_layers(),
        InFlight::FullBatch,
        opts,
    )?;
    MemoryBreakdown::from_parts(parts)
}

/// Per-GPU bytes under expert-data parallelism of degree `ep`.
pub fn edp_memory(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
) -> Result<MemoryBreakdown, MemError> {
    edp_memory_with(arch, run, ep, &MemOptions::default())
}

pub fn edp_memory_with(
    arch: &ModelArch,
    run: &TrainingRun,
    ep: u64,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    let parts = stage_parts(
        arch,
        run,
        ep,
        arch.num_moe_layers,
        arch.num_dense_layers(),
        InFlight::FullBatch,
        opts,
    )?;
    MemoryBreakdown::from_parts(parts)
}

/// Per-GPU peak bytes under a GPipe schedule: L/PP layers per stage,
/// full-batch activations. Returns the worst stage, with every stage in
/// `per_stage`.
pub fn gpipe_memory(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
) -> Result<MemoryBreakdown, MemError> {
    gpipe_memory_with(arch, run, plan, &MemOptions::default())
}

pub fn gpipe_memory_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    require_pp_divides(arch, plan)?;
    let mut stages = Vec::with_capacity(plan.pp as usize);
    for i in 0..plan.pp {
        let (moe, dense) = stage_layer_mix(arch, plan, i);
        let parts = stage_parts(arch, run, plan.ep, moe, dense, InFlight::FullBatch, opts)?;
        stages.push(MemoryBreakdown::from_parts(parts)?);
    }
    let mut peak = stages
        .iter()
        .max_by_key(|b| b.total_bytes)
        .expect("pp >= 1")
        .clone();
    peak.per_stage = Some(stages);
    Ok(peak)
}

/// Per-GPU bytes for 1F1B stage `stage`: GPipe static terms plus
/// (PP - stage) in-flight microbatches of activations.
pub fn ofob_stage_memory(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    stage: u64,
) -> Result<MemoryBreakdown, MemError> {
    ofob_stage_memory_with(arch, run, plan, stage, &MemOptions::default())
}

pub fn ofob_stage_memory_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    stage: u64,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    require_pp_divides(arch, plan)?;
    if stage >= plan.pp {
        return Err(MemError::StageOutOfRange {
            stage,
            pp: plan.pp,
        });
    }
    if run.num_microbatches < plan.pp {
        log::warn!(
            "num_microbatches {} < pp {}; the 1F1B peak model assumes M >= PP",
            run.num_microbatches,
            plan.pp
        );
    }
    let (moe, dense) = stage_layer_mix(arch, plan, stage);
    let parts = stage_parts(
        arch,
        run,
        plan.ep,
        moe,
        dense,
        InFlight::Microbatches(plan.pp - stage),
        opts,
    )?;
    MemoryBreakdown::from_parts(parts)
}

/// All 1F1B stages, index 0 (peak) first. The returned breakdown is
/// stage 0 with `per_stage` populated.
pub fn ofob_memory(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
) -> Result<MemoryBreakdown, MemError> {
    ofob_memory_with(arch, run, plan, &MemOptions::default())
}

pub fn ofob_memory_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    let stages = (0..plan.pp)
        .map(|i| ofob_stage_memory_with(arch, run, plan, i, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut head = stages[0].clone();
    head.per_stage = Some(stages);
    Ok(head)
}

/// Worst-stage 1F1B peak for feasibility checks, tolerating PP that does
/// not divide L: the deepest stage holds ceil(L/PP) layers and PP
/// in-flight microbatches, which upper-bounds every stage.
pub fn peak_stage_memory(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    opts: &MemOptions,
) -> Result<MemoryBreakdown, MemError> {
    let l = arch.num_layers.div_ceil(plan.pp);
    let moe = arch.num_moe_layers.min(l);
    let parts = stage_parts(
        arch,
        run,
        plan.ep,
        moe,
        l - moe,
        InFlight::Microbatches(plan.pp),
        opts,
    )?;
    MemoryBreakdown::from_parts(parts)
}

/// Closed-form memory difference between the first and last 1F1B stage:
/// dM = (L/PP) * (PP - 1) * (one microbatch's per-layer activations).
///
/// Defined for all-MoE architectures (num_moe_layers == num_layers),
/// where it equals `ofob_stage_memory(.., 0) - ofob_stage_memory(.., PP-1)`
/// exactly.
pub fn stage_memory_skew(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
) -> Result<u128, MemError> {
    stage_memory_skew_with(arch, run, plan, &MemOptions::default())
}

pub fn stage_memory_skew_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    opts: &MemOptions,
) -> Result<u128, MemError> {
    require_pp_divides(arch, plan)?;
    // One microbatch's activations for a single MoE layer.
    let parts = stage_parts(arch, run, plan.ep, 1, 0, InFlight::Microbatches(1), opts)?;
    let act_per_layer = add(parts.attn_act, parts.expert_act)?;
    let l = (arch.num_layers / plan.pp) as u128;
    prod(&[l, (plan.pp - 1) as u128, act_per_layer]).map_err(MemError::from)
}
