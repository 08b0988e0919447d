//! Exhaustive (PP, EP) plan enumeration under the five feasibility
//! constraints, ranked by estimated MFU.
//!
//! A plan is feasible when all of the following hold:
//!
//! 1. `PP * EP == n * g` — the factorization covers the allocation;
//! 2. `EP | E` — experts shard evenly;
//! 3. `PP <= L` — every stage holds at least one layer;
//! 4. `EP <= g * N_h` — the expert-parallel group stays inside the
//!    fast-interconnect domain (one node in strict mode);
//! 5. stage-0 1F1B peak memory (plus framework overhead) fits in HBM.
//!
//! Infeasibility is a result, not an error: every enumerated plan comes
//! back with its verdict. Output ordering is a contract: feasible plans
//! first (by estimated MFU descending when a profile is supplied, else by
//! stage-0 peak ascending; ties prefer smaller EP, then smaller PP), then
//! infeasible plans by (nodes, PP).

use serde::{Deserialize, Serialize};

use crate::bench::BenchProfile;
use crate::estimator::{estimate_step_with, EstimatorOptions};
use crate::memory::{peak_stage_memory, MemOptions};
use crate::model::{ModelArch, ParallelPlan, PlatformSpec, TrainingRun};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOptions {
    /// Require the expert-parallel group to fit in a single node
    /// (EP <= g) instead of a switch group (EP <= g * N_h).
    pub strict_node_locality: bool,
    pub mem: MemOptions,
}

/// Outcome of the five constraint checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintResults {
    pub gpu_count: bool,
    pub ep_divides_e: bool,
    pub pp_leq_l: bool,
    pub ep_locality: bool,
    pub memory_fit: bool,
}

impl ConstraintResults {
    pub fn all(&self) -> bool {
        self.gpu_count && self.ep_divides_e && self.pp_leq_l && self.ep_locality && self.memory_fit
    }

    /// Names of the failed constraints, for reporting.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (ok, name) in [
            (self.gpu_count, "gpu_count"),
            (self.ep_divides_e, "ep_divides_e"),
            (self.pp_leq_l, "pp_leq_l"),
            (self.ep_locality, "ep_locality"),
            (self.memory_fit, "memory_fit"),
        ] {
            if !ok {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVerdict {
    pub plan: ParallelPlan,
    pub constraints: ConstraintResults,
    /// Stage-0 1F1B peak plus framework overhead; u128::MAX when the
    /// memory model overflowed (reported as unfit).
    pub peak_stage0_bytes: u128,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_mfu: Option<f64>,
}

/// Evaluates the five constraints for one plan. Never fails: an
/// unevaluable memory model (overflow) reports as memory_fit = false.
pub fn check_plan(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    platform: &PlatformSpec,
) -> PlanVerdict {
    check_plan_with(arch, run, plan, platform, &PlannerOptions::default())
}

pub fn check_plan_with(
    arch: &ModelArch,
    run: &TrainingRun,
    plan: &ParallelPlan,
    platform: &PlatformSpec,
    opts: &PlannerOptions,
) -> PlanVerdict {
    let gpu_count =
        plan.pp * plan.ep * plan.outer_dp == plan.num_nodes * platform.gpus_per_node;
    let ep_divides_e = plan.ep != 0 && arch.num_experts.is_multiple_of(plan.ep);
    let pp_leq_l = plan.pp >= 1 && plan.pp <= arch.num_layers;
    let locality_cap = if opts.strict_node_locality {
        platform.gpus_per_node
    } else {
        platform.gpus_per_node * platform.nodes_per_switch_group
    };
    let ep_locality = plan.ep <= locality_cap;

    let (peak, memory_fit) = if ep_divides_e && plan.pp >= 1 {
        match peak_stage_memory(arch, run, plan, &opts.mem)
            .and_then(|m| m.with_framework_overhead(platform.framework_overhead_bytes))
        {
            Ok(m) => (m.total_bytes, m.total_bytes <= platform.hbm_bytes as u128),
            Err(_) => (u128::MAX, false),
        }
    } else {
        (u128::MAX, false)
    };

    let constraints = ConstraintResults {
        gpu_count,
        ep_divides_e,
        pp_leq_l,
        ep_locality,
        memory_fit,
    };
    PlanVerdict {
        feasible: constraints.all(),
        plan: *plan,
        constraints,
        peak_stage0_bytes: peak,
        estimated_mfu: None,
    }
}

/// All factor pairs (pp, ep) with pp * ep == world, ascending in pp.
fn factor_pairs(world: u64) -> Vec<(u64, u64)> {
    let mut pairs = Vec::new();
    let mut pp = 1;
    while pp * pp <= world {
        if world.is_multiple_of(pp) {
            pairs.push((pp, world / pp));
            if pp != world / pp {
                pairs.push((world / pp, pp));
            }
        }
        pp += 1;
    }
    pairs.sort_unstable();
    pairs
}

/// Enumerates every factorization of n * g over the node range, checks
/// each, and returns all verdicts in the contracted order. When a
/// profile is supplied, feasible plans carry an estimated MFU (None if
/// the estimator cannot price them) and rank by it.
pub fn enumerate_plans(
    arch: &ModelArch,
    run: &TrainingRun,
    platform: &PlatformSpec,
    node_range: std::ops::RangeInclusive<u64>,
    profile: Option<&BenchProfile>,
    opts: &PlannerOptions,
) -> Vec<PlanVerdict> {
    let mut verdicts = Vec::new();
    for n in node_range {
        if n == 0 {
            continue;
        }
        let world = n * platform.gpus_per_node;
        for (pp, ep) in factor_pairs(world) {
            let plan = ParallelPlan::new(pp, ep, n, arch.num_layers);
            let mut verdict = check_plan_with(arch, run, &plan, platform, opts);
            if verdict.feasible {
                if let Some(profile) = profile {
                    let est_opts = EstimatorOptions {
                        activation_checkpointing: opts.mem.activation_checkpointing,
                    };
                    match estimate_step_with(arch, run, &plan, platform, profile, &est_opts) {
                        Ok(est) => verdict.estimated_mfu = Some(est.mfu),
                        Err(e) => log::warn!(
                            "plan {}x{} on {n} nodes not estimable: {e}",
                            plan.pp,
                            plan.ep
                        ),
                    }
                }
            }
            verdicts.push(verdict);
        }
    }

    sort_verdicts(verdicts)
}

/// The contracted verdict ordering: feasible plans first (MFU descending
/// when priced, else stage-0 peak ascending; ties prefer smaller EP, then
/// smaller PP), then infeasible plans by (nodes, PP).
pub fn sort_verdicts(mut verdicts: Vec<PlanVerdict>) -> Vec<PlanVerdict> {
    verdicts.sort_by(|a, b| {
        use std::cmp::Ordering;
        match (a.feasible, b.feasible) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (false, false) => (a.plan.num_nodes, a.plan.pp).cmp(&(b.plan.num_nodes, b.plan.pp)),
            (true, true) => {
                let key = match (a.estimated_mfu, b.estimated_mfu) {
                    (Some(ma), Some(mb)) => mb.partial_cmp(&ma).unwrap_or(Ordering::Equal),
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => a.peak_stage0_bytes.cmp(&b.peak_stage0_bytes),
                };
                key.then_with(|| (a.plan.ep, a.plan.pp).cmp(&(b.plan.ep, b.plan.pp)))
                    .then_with(|| a.plan.num_nodes.cmp(&b.plan.num_nodes))
            }
        }
    });
    verdicts
}

/// Smallest node count in [1, max_nodes] with at least one feasible
/// plan.
pub fn min_nodes(
    arch: &ModelArch,
    run: &TrainingRun,
    platform: &PlatformSpec,
    max_nodes: u64,
    opts: &PlannerOptions,
) -> Option<u64> {
    (1..=max_nodes).find(|&n| {
        enumerate_plans(arch, run, platform, n..=n, None, opts)
            .iter()
            .any(|v| v.feasible)
    })
}
