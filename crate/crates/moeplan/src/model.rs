//! Domain value types: model architecture, training run, platform, and
//! parallel plan, plus the built-in zoo of published MoE configurations.
//!
//! All types here are immutable value objects with field-wise equality and
//! stable JSON field names. They carry the symbols every other module
//! consumes: hidden dimension `d`, layer count `L`, expert count `E`,
//! top-k routing `k`, microbatch count `M`, and so on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("num_heads * head_dim = {got} must equal d_model = {d_model}")]
    HeadDimMismatch { got: u64, d_model: u64 },
    #[error("top_k = {top_k} exceeds num_experts = {num_experts}")]
    TopKExceedsExperts { top_k: u64, num_experts: u64 },
    #[error("num_moe_layers = {num_moe_layers} exceeds num_layers = {num_layers}")]
    TooManyMoeLayers { num_moe_layers: u64, num_layers: u64 },
    #[error("pp * ep * outer_dp = {got} does not match num_nodes * gpus_per_node = {want}")]
    WorldSizeMismatch { got: u64, want: u64 },
}

fn default_mats_per_expert() -> u64 {
    3
}
fn default_bytes_per_param() -> u64 {
    16
}
fn default_activation_bytes() -> u64 {
    2
}
fn default_outer_dp() -> u64 {
    1
}
fn default_nodes_per_switch_group() -> u64 {
    4
}

/// A transformer MoE architecture.
///
/// `num_experts` counts *routed* experts per MoE layer; shared
/// (always-active) experts are tracked separately in
/// `num_shared_experts`. Dense (non-MoE) layers, when present, use
/// `ffn_dim_dense` with a single always-active FFN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Hidden dimension (d).
    pub d_model: u64,
    /// Total transformer layers (L).
    pub num_layers: u64,
    /// Number of MoE layers; the remaining `num_layers - num_moe_layers` are dense.
    pub num_moe_layers: u64,
    /// Attention heads (H).
    pub num_heads: u64,
    /// Per-head dimension; `num_heads * head_dim == d_model`.
    pub head_dim: u64,
    /// Routed experts per MoE layer (E).
    pub num_experts: u64,
    /// Shared, always-active experts per MoE layer (E_s).
    #[serde(default)]
    pub num_shared_experts: u64,
    /// Experts activated per token (k).
    pub top_k: u64,
    /// Expert FFN intermediate dimension.
    pub ffn_dim_moe: u64,
    /// Dense FFN intermediate dimension (used by non-MoE layers).
    pub ffn_dim_dense: u64,
    /// Weight matrices per expert; 3 for SwiGLU (up, gate, down).
    #[serde(default = "default_mats_per_expert")]
    pub mats_per_expert: u64,
}

impl ModelArch {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("d_model", self.d_model),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("num_experts", self.num_experts),
            ("top_k", self.top_k),
            ("ffn_dim_moe", self.ffn_dim_moe),
            ("ffn_dim_dense", self.ffn_dim_dense),
            ("mats_per_expert", self.mats_per_expert),
        ] {
            if v == 0 {
                return Err(ModelError::NonPositive { field });
            }
        }
        let got = self.num_heads * self.head_dim;
        if got != self.d_model {
            return Err(ModelError::HeadDimMismatch {
                got,
                d_model: self.d_model,
            });
        }
        if self.top_k > self.num_experts {
            return Err(ModelError::TopKExceedsExperts {
                top_k: self.top_k,
                num_experts: self.num_experts,
            });
        }
        if self.num_moe_layers > self.num_layers {
            return Err(ModelError::TooManyMoeLayers {
                num_moe_layers: self.num_moe_layers,
                num_layers: self.num_layers,
            });
        }
        Ok(())
    }

    /// Dense layer count: `num_layers - num_moe_layers`.
    pub fn num_dense_layers(&self) -> u64 {
        self.num_layers - self.num_moe_layers
    }

    /// Routed + shared experts per MoE layer.
    pub fn total_experts(&self) -> u64 {
        self.num_experts + self.num_shared_experts
    }
}

/// Training-run shape: sequence length, batch, microbatching, and byte
/// widths for parameters and activations.
///
/// `bytes_per_param` defaults to 16: fp16 weight + fp16 grad + fp32
/// master copy + fp32 Adam momentum and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    /// Sequence length in tokens (s).
    pub seq_len: u64,
    /// Global batch size in sequences (b).
    pub global_batch: u64,
    /// Microbatches per gradient step (M).
    pub num_microbatches: u64,
    /// Microbatch multiplier alpha, with M = alpha * PP when a plan is attached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microbatch_mult: Option<f64>,
    /// Bytes held on GPU per parameter.
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: u64,
    /// Bytes per activation element (half precision by default).
    #[serde(default = "default_activation_bytes")]
    pub activation_bytes: u64,
}

impl TrainingRun {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("seq_len", self.seq_len),
            ("global_batch", self.global_batch),
            ("num_microbatches", self.num_microbatches),
            ("bytes_per_param", self.bytes_per_param),
            ("activation_bytes", self.activation_bytes),
        ] {
            if v == 0 {
                return Err(ModelError::NonPositive { field });
            }
        }
        if !self.global_batch.is_multiple_of(self.num_microbatches) {
            // Fractional microbatches are legal in the expectation-based
            // model (terms are kept as exact rationals and ceiled at the
            // byte level), but worth flagging.
            log::warn!(
                "global_batch {} is not divisible by num_microbatches {}; \
                 per-microbatch terms will be ceiled",
                self.global_batch,
                self.num_microbatches
            );
        }
        Ok(())
    }

    /// Microbatch size b/M as an exact (numerator, denominator) pair.
    pub fn microbatch_exact(&self) -> (u64, u64) {
        (self.global_batch, self.num_microbatches)
    }
}

/// Hardware facts for one platform: node shape, memory budget, NIC and
/// fabric bandwidths, and per-message latencies.
///
/// Bandwidth granularity differs by field and matters to the simulator:
/// `nic_bandwidth` is per NIC, `intra_node_bandwidth` is per-GPU
/// injection onto the in-node fabric, and `intra_group_bandwidth` /
/// `inter_group_bandwidth` are aggregate capacities of one switch group's
/// internal switch and its global links respectively. The conventional
/// ordering intra >= nic >= inter-group is *not* enforced; values are
/// recorded as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub gpus_per_node: u64,
    /// Per-GPU HBM capacity in bytes (C_GPU).
    pub hbm_bytes: u64,
    /// Framework overhead (communication buffers etc.) in bytes, counted
    /// once per GPU. Zero unless measured.
    #[serde(default)]
    pub framework_overhead_bytes: u64,
    pub nics_per_node: u64,
    /// Bytes/second per NIC.
    pub nic_bandwidth: f64,
    /// Bytes/second per-GPU injection bandwidth inside a node.
    pub intra_node_bandwidth: f64,
    /// Bytes/second aggregate through one switch group's switch.
    pub intra_group_bandwidth: f64,
    /// Bytes/second aggregate across one switch group's global links.
    pub inter_group_bandwidth: f64,
    /// Per-message latency in seconds for [intra-node, intra-group, inter-group].
    pub per_message_latency: [f64; 3],
    /// Nodes sharing a single-hop switch (N_h).
    #[serde(default = "default_nodes_per_switch_group")]
    pub nodes_per_switch_group: u64,
    /// Peak per-GPU throughput in flop/s.
    pub peak_gpu_flops: f64,
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("gpus_per_node", self.gpus_per_node),
            ("hbm_bytes", self.hbm_bytes),
            ("nics_per_node", self.nics_per_node),
            ("nodes_per_switch_group", self.nodes_per_switch_group),
        ] {
            if v == 0 {
                return Err(ModelError::NonPositive { field });
            }
        }
        for (field, v) in [
            ("nic_bandwidth", self.nic_bandwidth),
            ("intra_node_bandwidth", self.intra_node_bandwidth),
            ("intra_group_bandwidth", self.intra_group_bandwidth),
            ("inter_group_bandwidth", self.inter_group_bandwidth),
            ("peak_gpu_flops", self.peak_gpu_flops),
        ] {
            // also rejects NaN
            if v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(ModelError::NonPositive { field });
            }
        }
        Ok(())
    }

    /// Documented preset loosely shaped like one node class of a large
    /// Dragonfly-interconnect HPC system: 8 GPUs and 4 NICs per node,
    /// 64 GiB HBM per GPU, 4 nodes per switch group. The bandwidth and
    /// latency figures are plausible defaults for experimentation, not
    /// measurements of any specific machine.
    pub fn frontier_like() -> Self {
        PlatformSpec {
            gpus_per_node: 8,
            hbm_bytes: 64 * (1 << 30),
            framework_overhead_bytes: 0,
            nics_per_node: 4,
            nic_bandwidth: 25e9,
            intra_node_bandwidth: 100e9,
            intra_group_bandwidth: 800e9,
            inter_group_bandwidth: 400e9,
            per_message_latency: [1e-6, 2e-6, 4e-6],
            nodes_per_switch_group: 4,
            peak_gpu_flops: 191.5e12,
        }
    }
}

/// A (PP, EP) assignment of the model onto GPUs.
///
/// `layers_per_stage` is `ceil(L / pp)`: the worst (deepest) stage. When
/// `pp` divides `L` every stage holds exactly that many layers and
/// `layers_per_stage * pp == num_layers` holds as a strict invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPlan {
    pub pp: u64,
    pub ep: u64,
    pub num_nodes: u64,
    pub layers_per_stage: u64,
    #[serde(default = "default_outer_dp")]
    pub outer_dp: u64,
}

impl ParallelPlan {
    pub fn new(pp: u64, ep: u64, num_nodes: u64, num_layers: u64) -> Self {
        ParallelPlan {
            pp,
            ep,
            num_nodes,
            layers_per_stage: num_layers.div_ceil(pp.max(1)),
            outer_dp: 1,
        }
    }

    pub fn world_size(&self) -> u64 {
        self.pp * self.ep
    }

    /// Checks pp * ep * outer_dp == num_nodes * gpus_per_node.
    pub fn validate_for(&self, platform: &PlatformSpec) -> Result<(), ModelError> {
        let got = self.pp * self.ep * self.outer_dp;
        let want = self.num_nodes * platform.gpus_per_node;
        if got != want {
            return Err(ModelError::WorldSizeMismatch { got, want });
        }
        Ok(())
    }
}

/// Canonical deterministic test instance: a 2-layer, 4-expert toy model
/// small enough to evaluate every formula by hand.
pub fn tiny_fixture() -> (ModelArch, TrainingRun) {
    let arch = ModelArch {
        d_model: 4,
        num_layers: 2,
        num_moe_layers: 2,
        num_heads: 2,
        head_dim: 2,
        num_experts: 4,
        num_shared_experts: 0,
        top_k: 1,
        ffn_dim_moe: 8,
        ffn_dim_dense: 8,
        mats_per_expert: 3,
    };
    let run = TrainingRun {
        seq_len: 2,
        global_batch: 1,
        num_microbatches: 2,
        microbatch_mult: None,
        bytes_per_param: 16,
        activation_bytes: 2,
    };
    (arch, run)
}

// ─── Model zoo ────────────────────────────────────────────────────────────────

/// One published MoE configuration. `arch` is `None` when too few fields
/// are disclosed to build a usable architecture; `approximate` marks
/// entries whose published figures are vendor estimates rather than
/// disclosed values. Approximate entries are never used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub id: String,
    pub display_name: String,
    pub arch: Option<ModelArch>,
    pub approximate: bool,
    /// Fields that the publisher did not disclose. Head counts are never
    /// published for these models; when absent the arch assumes the
    /// common head_dim = 128 (every zoo hidden size is divisible by 128).
    pub undisclosed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelZoo {
    pub entries: Vec<ZooEntry>,
}

impl ModelZoo {
    pub fn get(&self, id: &str) -> Option<&ZooEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries with a fully disclosed, non-approximate architecture.
    pub fn exact_entries(&self) -> impl Iterator<Item = &ZooEntry> {
        self.entries
            .iter()
            .filter(|e| !e.approximate && e.arch.is_some())
    }
}

fn zoo_arch(
    d_model: u64,
    num_layers: u64,
    num_experts: u64,
    num_shared: u64,
    top_k: u64,
    ffn_dim: u64,
) -> ModelArch {
    // head_dim = 128 convention; all zoo hidden sizes divide evenly.
    ModelArch {
        d_model,
        num_layers,
        num_moe_layers: num_layers,
        num_heads: d_model / 128,
        head_dim: 128,
        num_experts,
        num_shared_experts: num_shared,
        top_k,
        ffn_dim_moe: ffn_dim,
        ffn_dim_dense: ffn_dim,
        mats_per_expert: 3,
    }
}

fn entry(
    id: &str,
    display_name: &str,
    arch: Option<ModelArch>,
    approximate: bool,
    undisclosed: &[&str],
) -> ZooEntry {
    ZooEntry {
        id: id.to_string(),
        display_name: display_name.to_string(),
        arch,
        approximate,
        undisclosed: undisclosed.iter().map(|s| s.to_string()).collect(),
    }
}

/// Built-in zoo of published MoE model configurations.
///
/// Expert counts are stored as routed experts; shared experts are listed
/// separately, so e.g. DeepSeek-V3's published 257 experts appear as
/// 256 routed + 1 shared.
pub fn load_model_zoo() -> ModelZoo {
    let entries = vec![
        entry(
            "deepseek-v2",
            "DeepSeek-V2",
            Some(zoo_arch(5120, 60, 160, 2, 6, 1536)),
            false,
            &["num_heads"],
        ),
        entry(
            "deepseek-v3",
            "DeepSeek-V3",
            Some(zoo_arch(7168, 61, 256, 1, 8, 2048)),
            false,
            &["num_heads"],
        ),
        entry(
            "deepseek-v3.2",
            "DeepSeek-V3.2",
            Some(zoo_arch(7168, 61, 256, 1, 8, 2048)),
            false,
            &["num_heads"],
        ),
        entry(
            "mixtral-8x7b",
            "Mixtral 8x7B",
            Some(zoo_arch(4096, 32, 8, 0, 2, 14336)),
            false,
            &["num_heads"],
        ),
        entry(
            "mixtral-8x22b",
            "Mixtral 8x22B",
            Some(zoo_arch(6144, 56, 8, 0, 2, 16384)),
            false,
            &["num_heads"],
        ),
        entry(
            "qwen3-30b-a3b",
            "Qwen3-30B-A3B",
            Some(zoo_arch(2048, 48, 128, 0, 8, 768)),
            false,
            &["num_heads"],
        ),
        entry(
            "qwen3-235b-a22b",
            "Qwen3-235B-A22B",
            Some(zoo_arch(7168, 94, 128, 0, 8, 2048)),
            false,
            &["num_heads"],
        ),
        entry(
            "llama4-scout",
            "Llama 4 Scout",
            Some(zoo_arch(5120, 48, 16, 1, 1, 8192)),
            true, // layer count, hidden size, and FFN dim are estimates
            &["num_heads", "num_layers", "d_model", "ffn_dim_moe"],
        ),
        entry(
            "llama4-maverick",
            "Llama 4 Maverick",
            Some(zoo_arch(5120, 48, 128, 1, 1, 8192)),
            true,
            &["num_heads", "num_layers", "d_model", "ffn_dim_moe"],
        ),
        entry(
            // Dense-MoE hybrid; layer count and hidden size undisclosed,
            // so no usable architecture.
            "arctic",
            "Arctic",
            None,
            true,
            &["num_layers", "d_model", "num_heads"],
        ),
        entry(
            "kimi-k2",
            "Kimi K2",
            Some(zoo_arch(7168, 61, 384, 0, 8, 2048)),
            false,
            &["num_heads"],
        ),
    ];
    ModelZoo { entries }
}
