//! Bottleneck-link latency simulation of flat vs. hierarchical all-to-all
//! on a three-tier Dragonfly-style topology.
//!
//! The model is bandwidth-level, not packet-level: each link class gets
//! an alpha-beta cost `alpha_tier + bytes / B_tier` and the operation
//! finishes when the slowest link does. Link classes:
//!
//! - per-rank intra-node injection (`intra_node_bandwidth`, per GPU);
//! - per-node NIC egress (`nic_bandwidth`, per NIC). The flat algorithm
//!   lacks GPU-to-NIC affinity, so its node egress pays a contention
//!   factor of `gpus_per_node / nics_per_node`; the hierarchical
//!   algorithm drives each NIC with exactly its affinitized ranks'
//!   traffic;
//! - per-group switch (`intra_group_bandwidth`, aggregate) for
//!   inter-node traffic inside one switch group;
//! - per-group global links (`inter_group_bandwidth`, aggregate) for
//!   traffic leaving the group. Inter-rack pairs are classified
//!   separately but priced at the same global-link rate.
//!
//! The hierarchical times come straight from the phase byte counts of
//! [`crate::halo`]; overlap modes account for Phase 1 running beside
//! Phase 2 or Phase 3.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::halo::{phase1_send_bytes, phase2_send_bytes, phase3_send_bytes};
use crate::model::PlatformSpec;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetSimError {
    #[error("topology needs at least one node")]
    EmptyTopology,
    #[error("message size must be positive")]
    ZeroMessage,
}

/// Node-allocation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Fill each switch group (and rack) before opening the next; the
    /// allocation a locality-aware scheduler produces.
    Packed,
    /// One node per switch group, round-robin over racks; the worst case
    /// a topology-oblivious scheduler produces.
    Scattered,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Packed => "packed",
            Placement::Scattered => "scattered",
        })
    }
}

/// How two ranks relate in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    SameNode,
    SameGroup,
    SameRack,
    InterRack,
}

/// A concrete allocation of nodes onto the Dragonfly hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub num_nodes: u64,
    pub gpus_per_node: u64,
    pub nics_per_node: u64,
    pub nodes_per_group: u64,
    pub groups_per_rack: u64,
    pub intra_node_bandwidth: f64,
    pub nic_bandwidth: f64,
    pub intra_group_bandwidth: f64,
    pub inter_group_bandwidth: f64,
    pub per_message_latency: [f64; 3],
    pub placement: Placement,
    /// node -> (switch group, rack)
    pub node_location: Vec<(u64, u64)>,
}

impl Topology {
    pub fn new(
        platform: &PlatformSpec,
        num_nodes: u64,
        placement: Placement,
        groups_per_rack: u64,
    ) -> Result<Self, NetSimError> {
        if num_nodes == 0 {
            return Err(NetSimError::EmptyTopology);
        }
        let gpr = groups_per_rack.max(1);
        let node_location = (0..num_nodes)
            .map(|idx| {
                let group = match placement {
                    Placement::Packed => idx / platform.nodes_per_switch_group,
                    Placement::Scattered => idx,
                };
                (group, group / gpr)
            })
            .collect();
        Ok(Topology {
            num_nodes,
            gpus_per_node: platform.gpus_per_node,
            nics_per_node: platform.nics_per_node,
            nodes_per_group: platform.nodes_per_switch_group,
            groups_per_rack: gpr,
            intra_node_bandwidth: platform.intra_node_bandwidth,
            nic_bandwidth: platform.nic_bandwidth,
            intra_group_bandwidth: platform.intra_group_bandwidth,
            inter_group_bandwidth: platform.inter_group_bandwidth,
            per_message_latency: platform.per_message_latency,
            placement,
            node_location,
        })
    }

    pub fn world_size(&self) -> u64 {
        self.num_nodes * self.gpus_per_node
    }

    /// Deterministic tier classification of a rank pair.
    pub fn classify(&self, rank_a: u64, rank_b: u64) -> Tier {
        let node_a = rank_a / self.gpus_per_node;
        let node_b = rank_b / self.gpus_per_node;
        if node_a == node_b {
            return Tier::SameNode;
        }
        let (ga, ra) = self.node_location[node_a as usize];
        let (gb, rb) = self.node_location[node_b as usize];
        if ga == gb {
            Tier::SameGroup
        } else if ra == rb {
            Tier::SameRack
        } else {
            Tier::InterRack
        }
    }

    fn groups(&self) -> Vec<Vec<u64>> {
        let mut map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for (node, (group, _)) in self.node_location.iter().enumerate() {
            map.entry(*group).or_default().push(node as u64);
        }
        map.into_values().collect()
    }
}

fn link_time(alpha: f64, bytes: f64, bandwidth: f64) -> f64 {
    if bytes <= 0.0 {
        0.0
    } else {
        alpha + bytes / bandwidth
    }
}

/// One algorithm's cost decomposition: seconds per link class, with the
/// bottleneck named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTimes {
    pub times: BTreeMap<String, f64>,
    pub bottleneck: String,
    pub total: f64,
}

fn finish(times: BTreeMap<String, f64>) -> LinkTimes {
    let (bottleneck, total) = times
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap_or_default();
    LinkTimes {
        times,
        bottleneck,
        total,
    }
}

/// Flat all-to-all: every rank sends `message_bytes_per_pair` to each of
/// the other P-1 ranks directly.
pub fn simulate_flat_detailed(
    topo: &Topology,
    message_bytes_per_pair: u64,
) -> Result<LinkTimes, NetSimError> {
    if message_bytes_per_pair == 0 {
        return Err(NetSimError::ZeroMessage);
    }
    let m = message_bytes_per_pair as f64;
    let g = topo.gpus_per_node as f64;
    let p = topo.world_size() as f64;
    let [a_intra, a_group, a_global] = topo.per_message_latency;

    let mut times = BTreeMap::new();

    // per-rank intra-node injection: g-1 local peers
    times.insert(
        "intra_node".to_string(),
        link_time(a_intra, (g - 1.0) * m, topo.intra_node_bandwidth),
    );

    // per-node NIC egress, no affinity: every rank sends to all remote
    // ranks, funneled through the node's NICs with contention g/nics
    let remote_peers = p - g;
    let node_egress = g * remote_peers * m;
    let contention = g / topo.nics_per_node as f64;
    times.insert(
        "nic_egress".to_string(),
        link_time(
            a_group,
            node_egress * contention,
            topo.nics_per_node as f64 * topo.nic_bandwidth,
        ),
    );

    // per-group switch and global links
    let mut switch_max: f64 = 0.0;
    let mut global_max: f64 = 0.0;
    for group in topo.groups() {
        let in_group = group.len() as f64;
        let ranks_in_group = in_group * g;
        // inter-node pairs inside the group
        let same_group_peers = (in_group - 1.0) * g;
        let switch_bytes = ranks_in_group * same_group_peers * m;
        switch_max = switch_max.max(link_time(a_group, switch_bytes, topo.intra_group_bandwidth));
        // everything leaving the group
        let outside_peers = p - in_group * g;
        let global_bytes = ranks_in_group * outside_peers * m;
        global_max = global_max.max(link_time(a_global, global_bytes, topo.inter_group_bandwidth));
    }
    times.insert("group_switch".to_string(), switch_max);
    times.insert("global_link".to_string(), global_max);

    Ok(finish(times))
}

/// Flat all-to-all completion time in seconds.
pub fn simulate_flat(topo: &Topology, message_bytes_per_pair: u64) -> Result<f64, NetSimError> {
    Ok(simulate_flat_detailed(topo, message_bytes_per_pair)?.total)
}

/// Which phase runs beside the independent intra-node phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Phase 1 hides behind Phase 2: max(T1, T2) + T3.
    WithPhase2,
    /// Phase 1 hides behind Phase 3: T2 + max(T1, T3).
    WithPhase3,
    /// No overlap: T1 + T2 + T3.
    Sequential,
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overlap::WithPhase2 => "ii",
            Overlap::WithPhase3 => "iii",
            Overlap::Sequential => "none",
        })
    }
}

/// Simulation outcome for one (topology, message size) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub t_flat: f64,
    pub t_halo_overlap_ii: f64,
    pub t_halo_overlap_iii: f64,
    pub t_halo_sequential: f64,
    /// The requested overlap mode's total.
    pub t_halo: f64,
    pub overlap_mode: Overlap,
    pub t_phase1: f64,
    pub t_phase2: f64,
    pub t_phase3: f64,
    /// speedup = t_flat / t_halo for the requested mode.
    pub speedup: f64,
    /// Per link class: that class's time relative to the binding one
    /// (1.0 marks the bottleneck), across the hierarchical phases.
    pub link_utilization: BTreeMap<String, f64>,
    pub flat_bottleneck: String,
}

/// Hierarchical all-to-all under the given overlap mode, with the flat
/// baseline computed on the same topology.
pub fn simulate_halo(
    topo: &Topology,
    message_bytes_per_pair: u64,
    overlap: Overlap,
) -> Result<SimResult, NetSimError> {
    if message_bytes_per_pair == 0 {
        return Err(NetSimError::ZeroMessage);
    }
    let m = message_bytes_per_pair;
    let g = topo.gpus_per_node;
    let [a_intra, a_group, a_global] = topo.per_message_latency;

    // Phase 1: per-rank intra-node exchange of local rows.
    let p1_bytes = phase1_send_bytes(g, m) as f64;
    let t_phase1 = link_time(a_intra, p1_bytes, topo.intra_node_bandwidth);

    // Phase 2: per-NIC egress with affinity, plus shared switch/global links.
    let p2_rank_bytes = phase2_send_bytes(topo.num_nodes, g, m);
    let mut times = BTreeMap::new();
    if p2_rank_bytes > 0 {
        let nics = topo.nics_per_node.min(g);
        let max_ranks_per_nic = g.div_ceil(nics);
        times.insert(
            "nic_egress".to_string(),
            link_time(
                a_group,
                (max_ranks_per_nic * p2_rank_bytes) as f64,
                topo.nic_bandwidth,
            ),
        );
        let mut switch_max: f64 = 0.0;
        let mut global_max: f64 = 0.0;
        for group in topo.groups() {
            let in_group = group.len() as u64;
            // each rank forwards g rows of m bytes to every remote node
            let per_rank_same_group = (in_group - 1) * g * m;
            let per_rank_outside = (topo.num_nodes - in_group) * g * m;
            let ranks = in_group * g;
            switch_max = switch_max.max(link_time(
                a_group,
                (ranks * per_rank_same_group) as f64,
                topo.intra_group_bandwidth,
            ));
            global_max = global_max.max(link_time(
                a_global,
                (ranks * per_rank_outside) as f64,
                topo.inter_group_bandwidth,
            ));
        }
        times.insert("group_switch".to_string(), switch_max);
        times.insert("global_link".to_string(), global_max);
    }
    let phase2 = finish(times.clone());
    let t_phase2 = phase2.total;

    // Phase 3: per-rank intra-node scatter of the repacked remote rows.
    let p3_bytes = phase3_send_bytes(topo.num_nodes, g, m) as f64;
    let t_phase3 = link_time(a_intra, p3_bytes, topo.intra_node_bandwidth);

    times.insert(
        "intra_node".to_string(),
        t_phase1.max(t_phase3),
    );
    let util_base = finish(times);
    let link_utilization = if util_base.total > 0.0 {
        util_base
            .times
            .iter()
            .map(|(k, v)| (k.clone(), v / util_base.total))
            .collect()
    } else {
        BTreeMap::new()
    };

    let t_halo_overlap_ii = t_phase1.max(t_phase2) + t_phase3;
    let t_halo_overlap_iii = t_phase2 + t_phase1.max(t_phase3);
    let t_halo_sequential = t_phase1 + t_phase2 + t_phase3;
    let t_halo = match overlap {
        Overlap::WithPhase2 => t_halo_overlap_ii,
        Overlap::WithPhase3 => t_halo_overlap_iii,
        Overlap::Sequential => t_halo_sequential,
    };

    let flat = simulate_flat_detailed(topo, message_bytes_per_pair)?;
    Ok(SimResult {
        t_flat: flat.total,
        t_halo_overlap_ii,
        t_halo_overlap_iii,
        t_halo_sequential,
        t_halo,
        overlap_mode: overlap,
        t_phase1,
        t_phase2,
        t_phase3,
        speedup: flat.total / t_halo,
        link_utilization,
        flat_bottleneck: flat.bottleneck,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nodes: u64,
    pub message_bytes: u64,
    pub t_flat: f64,
    pub t_halo: f64,
    pub speedup: f64,
    pub overlap_mode: Overlap,
    pub placement: Placement,
}

/// Full grid of (node count, message size) simulations.
pub fn sweep(
    platform: &PlatformSpec,
    placement: Placement,
    groups_per_rack: u64,
    node_counts: &[u64],
    sizes: &[u64],
    overlap: Overlap,
) -> Result<Vec<SweepRow>, NetSimError> {
    let mut rows = Vec::with_capacity(node_counts.len() * sizes.len());
    for &nodes in node_counts {
        let topo = Topology::new(platform, nodes, placement, groups_per_rack)?;
        for &size in sizes {
            let sim = simulate_halo(&topo, size, overlap)?;
            rows.push(SweepRow {
                nodes,
                message_bytes: size,
                t_flat: sim.t_flat,
                t_halo: sim.t_halo,
                speedup: sim.speedup,
                overlap_mode: overlap,
                placement,
            });
        }
    }
    Ok(rows)
}

/// Renders a sweep as CSV with the stable column set.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("nodes,message_bytes,t_flat,t_halo,speedup,overlap_mode,placement\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.nodes, r.message_bytes, r.t_flat, r.t_halo, r.speedup, r.overlap_mode, r.placement
        ));
    }
    out
}
