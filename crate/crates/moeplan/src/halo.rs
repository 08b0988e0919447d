//! Functional single-process reference of the hierarchical three-phase
//! all-to-all, executed across simulated ranks.
//!
//! Ranks are laid out `num_nodes x R` (R local ranks per node); every
//! rank holds a send matrix of N = num_nodes * R rows, row r destined for
//! global rank r. The exchange runs in three phases:
//!
//! 1. **Intra-node**: each rank's R locally-destined rows move through an
//!    in-node all-to-all.
//! 2. **Inter-node**: all remote-destined rows are packed into one flat
//!    buffer and exchanged pairwise with the same-local-rank peer on each
//!    remote node (`peer = node * R + local_rank`), so each rank's
//!    traffic stays on its own NIC.
//! 3. **Intra-node redistribution**: the received remote rows are
//!    transposed and scattered to their final owners inside the node.
//!
//! Phase 1 is independent of phases 2-3 (which are ordered), so a runtime
//! may overlap it with either; this reference executes sequentially and
//! deterministically — timing questions live in [`crate::netsim`].
//!
//! Correctness contract (the global transpose law): after the exchange,
//! `recv[q][r] == send[r][q]` for all ranks q, r. [`flat_all_to_all`]
//! implements the law directly and serves as the oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HaloError {
    #[error("expected {expected} rank buffers, got {got}")]
    WrongRankCount { expected: usize, got: usize },
    #[error("rank {rank}: send matrix is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    ShapeMismatch {
        rank: usize,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("rank {rank}: declared position ({node}, {local}) does not match its index")]
    BadPosition {
        rank: usize,
        node: usize,
        local: usize,
    },
    #[error("communicator needs at least one node and one rank per node")]
    EmptyWorld,
}

/// Communicator layout: which ranks share a node and how local ranks map
/// to NICs (round-robin over `nics_per_node`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGroups {
    pub num_nodes: usize,
    pub ranks_per_node: usize,
    pub nics_per_node: usize,
}

impl CommGroups {
    pub fn new(num_nodes: usize, ranks_per_node: usize, nics_per_node: usize) -> Result<Self, HaloError> {
        if num_nodes == 0 || ranks_per_node == 0 || nics_per_node == 0 {
            return Err(HaloError::EmptyWorld);
        }
        Ok(CommGroups {
            num_nodes,
            ranks_per_node,
            nics_per_node,
        })
    }

    pub fn world_size(&self) -> usize {
        self.num_nodes * self.ranks_per_node
    }

    /// Global ranks of one node's internal communicator.
    pub fn internal_group(&self, node: usize) -> std::ops::Range<usize> {
        node * self.ranks_per_node..(node + 1) * self.ranks_per_node
    }

    /// NIC index a local rank injects through.
    pub fn nic_of(&self, local_rank: usize) -> usize {
        local_rank % self.nics_per_node
    }

    /// Phase-2 peer on node `n` for a given local rank.
    pub fn peer(&self, node: usize, local_rank: usize) -> usize {
        node * self.ranks_per_node + local_rank
    }
}

/// One simulated rank's send and receive state. Rows are plain vectors;
/// element values are caller-chosen (tests encode (source, row, column)
/// so any misrouting is visible).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankBuffer<T> {
    pub rank_id: usize,
    pub node_id: usize,
    pub local_rank: usize,
    pub send: Vec<Vec<T>>,
    pub recv: Vec<Vec<T>>,
}

/// Builds the full set of rank buffers for a `num_nodes x R` world with
/// `D`-wide rows, filling send row `row` of rank `rank` via `fill`.
pub fn make_buffers<T: Clone + Default>(
    groups: &CommGroups,
    row_width: usize,
    mut fill: impl FnMut(usize, usize, usize) -> T,
) -> Vec<RankBuffer<T>> {
    let n = groups.world_size();
    (0..n)
        .map(|rank| RankBuffer {
            rank_id: rank,
            node_id: rank / groups.ranks_per_node,
            local_rank: rank % groups.ranks_per_node,
            send: (0..n)
                .map(|row| (0..row_width).map(|col| fill(rank, row, col)).collect())
                .collect(),
            recv: vec![vec![T::default(); row_width]; n],
        })
        .collect()
}

fn validate<T>(buffers: &[RankBuffer<T>], groups: &CommGroups) -> Result<usize, HaloError> {
    let n = groups.world_size();
    if buffers.len() != n {
        return Err(HaloError::WrongRankCount {
            expected: n,
            got: buffers.len(),
        });
    }
    let cols = buffers[0].send.first().map_or(0, Vec::len);
    for (idx, buf) in buffers.iter().enumerate() {
        if buf.rank_id != idx
            || buf.node_id != idx / groups.ranks_per_node
            || buf.local_rank != idx % groups.ranks_per_node
        {
            return Err(HaloError::BadPosition {
                rank: idx,
                node: buf.node_id,
                local: buf.local_rank,
            });
        }
        if buf.send.len() != n || buf.send.iter().any(|row| row.len() != cols) {
            return Err(HaloError::ShapeMismatch {
                rank: idx,
                rows: buf.send.len(),
                cols: buf.send.iter().map(Vec::len).max().unwrap_or(0),
                want_rows: n,
                want_cols: cols,
            });
        }
    }
    Ok(cols)
}

/// The three-phase exchange. Returns the buffers with `recv` populated;
/// `send` is left untouched. A one-node world degenerates to Phase 1.
pub fn halo_all_to_all<T: Clone + Default>(
    buffers: &[RankBuffer<T>],
    groups: &CommGroups,
) -> Result<Vec<RankBuffer<T>>, HaloError> {
    let mut engine = HaloEngine::new(*groups);
    engine.run(buffers)
}

/// Reusable engine: scratch buffers are allocated on first use and kept
/// across calls, mirroring a persistent-buffer deployment. Results are
/// identical to fresh-buffer execution.
#[derive(Debug)]
pub struct HaloEngine<T> {
    groups: CommGroups,
    // phase-2 receive flats, one (M*R) x D matrix per rank
    f2r: Vec<Vec<Vec<T>>>,
    // phase-3 receive flats, one R x (M*D) matrix per rank
    f3r: Vec<Vec<Vec<T>>>,
}

impl<T: Clone + Default> HaloEngine<T> {
    pub fn new(groups: CommGroups) -> Self {
        HaloEngine {
            groups,
            f2r: Vec::new(),
            f3r: Vec::new(),
        }
    }

    pub fn run(&mut self, buffers: &[RankBuffer<T>]) -> Result<Vec<RankBuffer<T>>, HaloError> {
        let g = self.groups;
        let cols = validate(buffers, &g)?;
        let r = g.ranks_per_node;
        let remote = g.num_nodes - 1;

        // (re)shape persistent scratch
        let world = g.world_size();
        if self.f2r.len() != world
            || self.f2r.first().is_none_or(|m| {
                m.len() != remote * r || m.first().map_or(cols != 0, |row| row.len() != cols)
            })
        {
            self.f2r = vec![vec![vec![T::default(); cols]; remote * r]; world];
            self.f3r = vec![vec![vec![T::default(); remote * cols]; r]; world];
        }

        let mut out: Vec<RankBuffer<T>> = buffers.to_vec();

        // remote-node list of node m, in packing order
        let remotes = |m: usize| (0..g.num_nodes).filter(move |&n| n != m);

        // Phase 1: intra-node all-to-all of each rank's local R rows.
        // recv row (local_start + j) on rank (m, l) = send row
        // (local_start + l) of rank (m, j).
        for m in 0..g.num_nodes {
            let local_start = m * r;
            for l in 0..r {
                let me = local_start + l;
                for j in 0..r {
                    out[me].recv[local_start + j] =
                        buffers[local_start + j].send[local_start + l].clone();
                }
            }
        }

        // Phase 2: batched pairwise exchange with same-local-rank peers.
        // Rank (m, l) receives, at slot i, the R rows destined for node m
        // from peer (n_i, l).
        for m in 0..g.num_nodes {
            for l in 0..r {
                let me = m * r + l;
                for (i, n) in remotes(m).enumerate() {
                    let peer = g.peer(n, l);
                    for j in 0..r {
                        self.f2r[me][i * r + j] = buffers[peer].send[m * r + j].clone();
                    }
                }
            }
        }

        // Phase 3: transpose the phase-2 receive flat (M, R, D) -> (R, M*D)
        // and scatter rows to their in-node owners.
        for m in 0..g.num_nodes {
            for l in 0..r {
                let me = m * r + l;
                for j in 0..r {
                    // row j of (m, l)'s phase-3 send = its remote data for
                    // local rank j; lands on rank (m, j) at slot l.
                    let owner = m * r + j;
                    for i in 0..remote {
                        let src = &self.f2r[me][i * r + j];
                        self.f3r[owner][l][i * cols..(i + 1) * cols].clone_from_slice(src);
                    }
                }
            }
        }

        // Final assembly: local rows from Phase 1 are already in place;
        // unpack each remote node's slice from the phase-3 receive flat.
        for m in 0..g.num_nodes {
            for l in 0..r {
                let me = m * r + l;
                for jp in 0..r {
                    for (i, n) in remotes(m).enumerate() {
                        out[me].recv[n * r + jp]
                            .clone_from_slice(&self.f3r[me][jp][i * cols..(i + 1) * cols]);
                    }
                }
            }
        }

        Ok(out)
    }
}

/// Direct N^2 transpose: `recv[q][r] = send[r][q]`. The correctness
/// oracle and flat baseline.
#[allow(clippy::needless_range_loop)] // the law is stated in indices
pub fn flat_all_to_all<T: Clone + Default>(
    buffers: &[RankBuffer<T>],
) -> Result<Vec<RankBuffer<T>>, HaloError> {
    let n = buffers.len();
    if n == 0 {
        return Err(HaloError::EmptyWorld);
    }
    let cols = buffers[0].send.first().map_or(0, Vec::len);
    for (idx, buf) in buffers.iter().enumerate() {
        if buf.send.len() != n || buf.send.iter().any(|row| row.len() != cols) {
            return Err(HaloError::ShapeMismatch {
                rank: idx,
                rows: buf.send.len(),
                cols: buf.send.iter().map(Vec::len).max().unwrap_or(0),
                want_rows: n,
                want_cols: cols,
            });
        }
    }
    let mut out = buffers.to_vec();
    for q in 0..n {
        for r in 0..n {
            out[q].recv[r] = buffers[r].send[q].clone();
        }
    }
    Ok(out)
}

// ─── Phase byte accounting ────────────────────────────────────────────────────

/// Wire bytes one rank sends in Phase 1: its R local rows minus the row
/// that stays on the rank itself.
pub fn phase1_send_bytes(ranks_per_node: u64, row_bytes: u64) -> u64 {
    ranks_per_node.saturating_sub(1) * row_bytes
}

/// Wire bytes one rank sends in Phase 2: R rows to each remote node.
pub fn phase2_send_bytes(num_nodes: u64, ranks_per_node: u64, row_bytes: u64) -> u64 {
    num_nodes.saturating_sub(1) * ranks_per_node * row_bytes
}

/// Wire bytes one rank sends in Phase 3: the repacked (num_nodes-1)-wide
/// rows for its R-1 local peers.
pub fn phase3_send_bytes(num_nodes: u64, ranks_per_node: u64, row_bytes: u64) -> u64 {
    ranks_per_node.saturating_sub(1) * num_nodes.saturating_sub(1) * row_bytes
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPhaseBytes {
    pub rank: usize,
    pub node: usize,
    pub local_rank: usize,
    pub nic: usize,
    pub phase1_send_bytes: u64,
    pub phase2_send_bytes: u64,
    pub phase3_send_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NicPhaseBytes {
    pub node: usize,
    pub nic: usize,
    pub phase2_bytes: u64,
}

/// Per-phase, per-rank, per-NIC byte counts plus the phase dependency
/// structure. Consumed by the latency simulator and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub num_nodes: usize,
    pub ranks_per_node: usize,
    pub row_bytes: u64,
    pub per_rank: Vec<RankPhaseBytes>,
    pub per_nic: Vec<NicPhaseBytes>,
    /// Phases with no upstream dependency.
    pub independent: Vec<String>,
    /// Ordered chains: each inner list runs sequentially.
    pub ordered: Vec<Vec<String>>,
}

/// Byte-level trace of one exchange with `row_bytes = D * element_bytes`
/// wide rows.
pub fn trace_phases(groups: &CommGroups, row_bytes: u64) -> PhaseTrace {
    let n = groups.num_nodes as u64;
    let r = groups.ranks_per_node as u64;
    let per_rank: Vec<RankPhaseBytes> = (0..groups.world_size())
        .map(|rank| {
            let local = rank % groups.ranks_per_node;
            RankPhaseBytes {
                rank,
                node: rank / groups.ranks_per_node,
                local_rank: local,
                nic: groups.nic_of(local),
                phase1_send_bytes: phase1_send_bytes(r, row_bytes),
                phase2_send_bytes: phase2_send_bytes(n, r, row_bytes),
                phase3_send_bytes: phase3_send_bytes(n, r, row_bytes),
            }
        })
        .collect();
    let mut per_nic = Vec::new();
    for node in 0..groups.num_nodes {
        for nic in 0..groups.nics_per_node.min(groups.ranks_per_node) {
            let bytes = per_rank
                .iter()
                .filter(|p| p.node == node && p.nic == nic)
                .map(|p| p.phase2_send_bytes)
                .sum();
            per_nic.push(NicPhaseBytes {
                node,
                nic,
                phase2_bytes: bytes,
            });
        }
    }
    PhaseTrace {
        num_nodes: groups.num_nodes,
        ranks_per_node: groups.ranks_per_node,
        row_bytes,
        per_rank,
        per_nic,
        independent: vec!["phase1".into()],
        ordered: vec![vec!["phase2".into(), "phase3".into()]],
    }
}
