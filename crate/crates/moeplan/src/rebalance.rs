//! Expert-load tracking and hill-climbing swap-based rebalancing.
//!
//! A layer's experts are partitioned into K groups (group k = the experts
//! hosted by GPU k of an expert-parallel group). The imbalance is
//! `delta = max_k s_k - min_k s_k` over the group load sums. Rebalancing
//! repeatedly swaps one expert of the heaviest group against one of the
//! lightest, taking the swap with the largest strict improvement, until
//! no swap improves or the iteration cap is hit.
//!
//! The search is greedy-local: it minimizes swaps well in practice but
//! carries no optimality proof. Ties break deterministically, lowest
//! index first, so results are reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{migration_cost, CommError, MigrationPlanCost};
use crate::model::ModelArch;

#[derive(Debug, Error)]
pub enum RebalanceError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("migration cost overflow")]
    Cost(#[from] CommError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("trace line {line}: unknown expert id {expert}")]
    UnknownExpert { line: u64, expert: u64 },
    #[error("trace line {line}: step {step} is earlier than {prev}")]
    NonMonotoneStep { line: u64, step: u64, prev: u64 },
}

/// One expert and its observed token load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertLoad {
    pub expert: u64,
    pub tokens: u64,
}

/// Per-step snapshot of a layer's expert loads, partitioned into groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadState {
    pub step: u64,
    pub groups: Vec<Vec<ExpertLoad>>,
}

impl LoadState {
    pub fn new(step: u64, groups: Vec<Vec<ExpertLoad>>) -> Self {
        LoadState { step, groups }
    }

    /// Convenience constructor from bare load values; experts are
    /// numbered group-major.
    pub fn from_loads(step: u64, loads: &[Vec<u64>]) -> Self {
        let mut next = 0;
        let groups = loads
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&tokens| {
                        let e = ExpertLoad {
                            expert: next,
                            tokens,
                        };
                        next += 1;
                        e
                    })
                    .collect()
            })
            .collect();
        LoadState { step, groups }
    }

    pub fn group_sums(&self) -> Vec<u64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|e| e.tokens).sum())
            .collect()
    }

    /// delta = max group sum - min group sum.
    pub fn imbalance(&self) -> u64 {
        let sums = self.group_sums();
        match (sums.iter().max(), sums.iter().min()) {
            (Some(max), Some(min)) => max - min,
            _ => 0,
        }
    }
}

/// True when the relative imbalance delta / mean(s_k) exceeds the
/// threshold. All-zero loads never trigger.
pub fn should_migrate(state: &LoadState, threshold: f64) -> bool {
    let sums = state.group_sums();
    if sums.is_empty() {
        return false;
    }
    let total: u64 = sums.iter().sum();
    if total == 0 {
        return false;
    }
    let mean = total as f64 / sums.len() as f64;
    state.imbalance() as f64 / mean > threshold
}

/// An accepted swap: the expert leaving the heavy group and the expert
/// leaving the light group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub heavy_group: usize,
    pub light_group: usize,
    pub expert_from_heavy: u64,
    pub expert_from_light: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceResult {
    pub new_groups: Vec<Vec<ExpertLoad>>,
    pub swap_count: u64,
    pub swaps: Vec<Swap>,
    pub initial_imbalance: u64,
    pub final_imbalance: u64,
    /// Imbalance after each accepted swap; strictly decreasing.
    pub delta_history: Vec<u64>,
    /// Filled by [`price_migration`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub migration: Option<MigrationPlanCost>,
}

/// Hill-climbing swap-based rebalancing.
///
/// Each iteration finds the heaviest group k+ and lightest k-, scans all
/// cross pairs (n1 in k+, n2 in k-), computes the post-swap imbalance
/// `delta' = |(s+ - n1 + n2) - (s- - n2 + n1)|`, and accepts the swap
/// with the largest improvement, requiring `delta' < delta`. Stops when
/// no swap improves or after `max_iters`.
pub fn rebalance(state: &LoadState, max_iters: u64) -> Result<RebalanceResult, RebalanceError> {
    if state.groups.len() < 2 {
        return Err(RebalanceError::TooFewGroups(state.groups.len()));
    }
    for (k, g) in state.groups.iter().enumerate() {
        if g.is_empty() {
            return Err(RebalanceError::EmptyGroup(k));
        }
    }

    let mut groups = state.groups.clone();
    let mut swaps = Vec::new();
    let mut delta_history = Vec::new();
    let initial_imbalance = state.imbalance();

    for _ in 0..max_iters {
        let sums: Vec<i128> = groups
            .iter()
            .map(|g| g.iter().map(|e| e.tokens as i128).sum())
            .collect();
        let k_plus = (0..sums.len()).max_by_key(|&k| (sums[k], std::cmp::Reverse(k))).unwrap();
        let k_minus = (0..sums.len()).min_by_key(|&k| (sums[k], k)).unwrap();
        let delta = sums[k_plus] - sums[k_minus];

        let mut best: Option<(usize, usize)> = None;
        let mut best_gain: i128 = 0;
        for (i, e1) in groups[k_plus].iter().enumerate() {
            for (j, e2) in groups[k_minus].iter().enumerate() {
                let n1 = e1.tokens as i128;
                let n2 = e2.tokens as i128;
                let delta_after = ((sums[k_plus] - n1 + n2) - (sums[k_minus] - n2 + n1)).abs();
                if delta_after < delta && delta - delta_after > best_gain {
                    best_gain = delta - delta_after;
                    best = Some((i, j));
                }
            }
        }

        match best {
            Some((i, j)) => {
                let from_heavy = groups[k_plus][i];
                let from_light = groups[k_minus][j];
                groups[k_plus][i] = from_light;
                groups[k_minus][j] = from_heavy;
                swaps.push(Swap {
                    heavy_group: k_plus,
                    light_group: k_minus,
                    expert_from_heavy: from_heavy.expert,
                    expert_from_light: from_light.expert,
                });
                let now = LoadState::new(state.step, groups.clone()).imbalance();
                delta_history.push(now);
            }
            None => break,
        }
    }

    let final_imbalance = LoadState::new(state.step, groups.clone()).imbalance();
    Ok(RebalanceResult {
        new_groups: groups,
        swap_count: swaps.len() as u64,
        swaps,
        initial_imbalance,
        final_imbalance,
        delta_history,
        migration: None,
    })
}

/// Prices the migration the result implies: every swap moves two
/// experts, and the layer's latency is bound by the GPU that ships the
/// most.
pub fn price_migration(
    result: &mut RebalanceResult,
    arch: &ModelArch,
    bandwidth: Option<f64>,
) -> Result<(), RebalanceError> {
    let mut out_per_group: BTreeMap<usize, u64> = BTreeMap::new();
    for s in &result.swaps {
        *out_per_group.entry(s.heavy_group).or_default() += 1;
        *out_per_group.entry(s.light_group).or_default() += 1;
    }
    let max_out = out_per_group.values().copied().max().unwrap_or(0);
    let mut cost = migration_cost(arch, max_out, bandwidth)?;
    cost.experts_moved = 2 * result.swap_count;
    result.migration = Some(cost);
    Ok(())
}

/// How experts map onto groups when a trace does not carry a placement:
/// expert e lives in group e % K.
pub fn round_robin_assignment(num_experts: u64, num_groups: usize) -> BTreeMap<u64, usize> {
    (0..num_experts)
        .map(|e| (e, (e % num_groups as u64) as usize))
        .collect()
}

/// Parses a load-trace CSV (`step,layer,expert,tokens`, header mandatory)
/// into per-step snapshots of one layer, grouped by `assignment`.
/// Steps must be non-decreasing; experts must appear in the assignment.
pub fn ingest_load_trace(
    path: &Path,
    layer: u64,
    assignment: &BTreeMap<u64, usize>,
    num_groups: usize,
) -> Result<Vec<LoadState>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_load_trace(&text, layer, assignment, num_groups)
}

pub fn parse_load_trace(
    text: &str,
    layer: u64,
    assignment: &BTreeMap<u64, usize>,
    num_groups: usize,
) -> Result<Vec<LoadState>, TraceError> {
    let mut states: Vec<LoadState> = Vec::new();
    let mut acc: BTreeMap<u64, u64> = BTreeMap::new(); // expert -> tokens
    let mut current_step: Option<u64> = None;
    let mut last_step: Option<u64> = None;

    let flush = |step: u64, acc: &mut BTreeMap<u64, u64>, states: &mut Vec<LoadState>| {
        let mut groups: Vec<Vec<ExpertLoad>> = vec![Vec::new(); num_groups];
        for (&expert, &group) in assignment {
            groups[group].push(ExpertLoad {
                expert,
                tokens: acc.get(&expert).copied().unwrap_or(0),
            });
        }
        states.push(LoadState { step, groups });
        acc.clear();
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx as u64 + 1;
        if idx == 0 {
            if line.trim() != "step,layer,expert,tokens" {
                return Err(TraceError::Malformed {
                    line: 1,
                    msg: format!("expected header step,layer,expert,tokens, got {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(TraceError::Malformed {
                line: lineno,
                msg: format!("expected 4 columns, got {}", fields.len()),
            });
        }
        let parse = |name: &str, raw: &str| -> Result<u64, TraceError> {
            raw.parse().map_err(|_| TraceError::Malformed {
                line: lineno,
                msg: format!("cannot parse {name} from {raw:?}"),
            })
        };
        let step = parse("step", fields[0])?;
        let row_layer = parse("layer", fields[1])?;
        let expert = parse("expert", fields[2])?;
        let tokens = parse("tokens", fields[3])?;

        if let Some(prev) = last_step {
            if step < prev {
                return Err(TraceError::NonMonotoneStep {
                    line: lineno,
                    step,
                    prev,
                });
            }
        }
        last_step = Some(step);
        if row_layer != layer {
            continue;
        }
        if !assignment.contains_key(&expert) {
            return Err(TraceError::UnknownExpert {
                line: lineno,
                expert,
            });
        }
        match current_step {
            Some(s) if s != step => {
                flush(s, &mut acc, &mut states);
                current_step = Some(step);
            }
            None => current_step = Some(step),
            _ => {}
        }
        *acc.entry(expert).or_default() += tokens;
    }
    if let Some(s) = current_step {
        flush(s, &mut acc, &mut states);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub step: u64,
    pub result: RebalanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationSchedule {
    pub num_steps: usize,
    pub threshold: f64,
    pub events: Vec<ScheduleEvent>,
    pub total_latency_seconds: f64,
    /// Total migration latency / (num_steps * step_time).
    pub overhead_fraction: f64,
}

/// Replays a trace against the migration scheduler: whenever a step's
/// imbalance crosses the threshold, the layer rebalances (starting from
/// the current, evolving placement) and pays the migration latency.
pub fn run_migration_schedule(
    states: &[LoadState],
    threshold: f64,
    arch: &ModelArch,
    bandwidth: Option<f64>,
    step_time: f64,
) -> Result<MigrationSchedule, RebalanceError> {
    let mut assignment: Option<BTreeMap<u64, usize>> = None;
    let mut total_latency = 0.0;
    let mut events = Vec::new();

    for state in states {
        // carry the evolving placement forward
        let placed = match &assignment {
            None => state.clone(),
            Some(map) => {
                let mut groups: Vec<Vec<ExpertLoad>> = vec![Vec::new(); state.groups.len()];
                for g in &state.groups {
                    for e in g {
                        groups[map[&e.expert]].push(*e);
                    }
                }
                LoadState::new(state.step, groups)
            }
        };
        if should_migrate(&placed, threshold) {
            let mut result = rebalance(&placed, 100)?;
            price_migration(&mut result, arch, bandwidth)?;
            if result.swap_count > 0 {
                total_latency += result.migration.as_ref().unwrap().latency_seconds;
                let mut map = BTreeMap::new();
                for (k, g) in result.new_groups.iter().enumerate() {
                    for e in g {
                        map.insert(e.expert, k);
                    }
                }
                assignment = Some(map);
                events.push(ScheduleEvent {
                    step: state.step,
                    result,
                });
            }
        }
    }

    let steps = states.len().max(1) as f64;
    Ok(MigrationSchedule {
        num_steps: states.len(),
        threshold,
        events,
        total_latency_seconds: total_latency,
        overhead_fraction: total_latency / (steps * step_time),
    })
}

/// Migration cost over a trace as a fraction of total training time.
pub fn amortized_overhead(
    states: &[LoadState],
    threshold: f64,
    arch: &ModelArch,
    bandwidth: Option<f64>,
    step_time: f64,
) -> Result<f64, RebalanceError> {
    run_migration_schedule(states, threshold, arch, bandwidth, step_time)
        .map(|s| s.overhead_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loads(groups: &[Vec<u64>]) -> LoadState {
        LoadState::from_loads(0, groups)
    }

    fn group_loads(r: &RebalanceResult) -> Vec<Vec<u64>> {
        r.new_groups
            .iter()
            .map(|g| g.iter().map(|e| e.tokens).collect())
            .collect()
    }

    #[test]
    fn single_swap_balances_4321() {
        // [[4,3],[2,1]]: swapping 4 and 2 takes delta from 4 to 0.
        let state = loads(&[vec![4, 3], vec![2, 1]]);
        let r = rebalance(&state, 100).unwrap();
        assert_eq!(r.swap_count, 1);
        assert_eq!(group_loads(&r), vec![vec![2, 3], vec![4, 1]]);
        assert_eq!(r.initial_imbalance, 4);
        assert_eq!(r.final_imbalance, 0);
        assert_eq!(r.swaps[0].expert_from_heavy, 0); // the 4
        assert_eq!(r.swaps[0].expert_from_light, 2); // the 2
    }

    #[test]
    fn balanced_input_swaps_nothing() {
        let state = loads(&[vec![2, 2], vec![2, 2]]);
        let r = rebalance(&state, 100).unwrap();
        assert_eq!(r.swap_count, 0);
        assert_eq!(group_loads(&r), vec![vec![2, 2], vec![2, 2]]);
    }

    #[test]
    fn no_improving_swap_stops_immediately() {
        // [[5,1],[2,2]]: delta = 2, every swap yields delta' = 4.
        let state = loads(&[vec![5, 1], vec![2, 2]]);
        let r = rebalance(&state, 100).unwrap();
        assert_eq!(r.swap_count, 0);
        assert_eq!(r.final_imbalance, 2);
    }

    #[test]
    fn delta_strictly_decreases_and_multiset_preserved() {
        let state = loads(&[vec![9, 7, 5], vec![1, 0, 2], vec![3, 3, 3]]);
        let r = rebalance(&state, 100).unwrap();
        let mut prev = r.initial_imbalance;
        for &d in &r.delta_history {
            assert!(d < prev, "delta did not strictly decrease: {prev} -> {d}");
            prev = d;
        }
        let mut before: Vec<u64> = state.groups.iter().flatten().map(|e| e.tokens).collect();
        let mut after: Vec<u64> = r.new_groups.iter().flatten().map(|e| e.tokens).collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);
        // expert ids preserved too
        let mut ids: Vec<u64> = r.new_groups.iter().flatten().map(|e| e.expert).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn empty_group_rejected() {
        let state = loads(&[vec![1], vec![]]);
        assert!(matches!(
            rebalance(&state, 100),
            Err(RebalanceError::EmptyGroup(1))
        ));
    }

    #[test]
    fn should_migrate_thresholds() {
        let balanced = loads(&[vec![2, 2], vec![2, 2]]);
        assert!(!should_migrate(&balanced, 0.001));

        // [[10],[0]]: delta/mean = 10/5 = 2 > 0.5
        let skewed = loads(&[vec![10], vec![0]]);
        assert!(should_migrate(&skewed, 0.5));
        assert!(!should_migrate(&skewed, 1e12));

        let zeros = loads(&[vec![0, 0], vec![0, 0]]);
        assert!(!should_migrate(&zeros, 0.5));
    }

    #[test]
    fn trace_round_robin_grouping() {
        // 4 experts, EP = 2, round-robin: groups [[e0, e2], [e1, e3]]
        let text = "step,layer,expert,tokens\n\
                    0,0,0,5\n0,0,1,3\n0,0,2,2\n0,0,3,1\n";
        let assign = round_robin_assignment(4, 2);
        let states = parse_load_trace(text, 0, &assign, 2).unwrap();
        assert_eq!(states.len(), 1);
        let g = &states[0].groups;
        assert_eq!(g[0], vec![
            ExpertLoad { expert: 0, tokens: 5 },
            ExpertLoad { expert: 2, tokens: 2 }
        ]);
        assert_eq!(g[1], vec![
            ExpertLoad { expert: 1, tokens: 3 },
            ExpertLoad { expert: 3, tokens: 1 }
        ]);
    }

    #[test]
    fn empty_trace_yields_empty_stream() {
        let assign = round_robin_assignment(4, 2);
        let states = parse_load_trace("step,layer,expert,tokens\n", 0, &assign, 2).unwrap();
        assert!(states.is_empty());
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        let assign = round_robin_assignment(2, 2);
        let err = parse_load_trace("step,layer,expert,tokens\n0,0,7,1\n", 0, &assign, 2)
            .unwrap_err();
        assert!(matches!(err, TraceError::UnknownExpert { line: 2, expert: 7 }));

        let err = parse_load_trace(
            "step,layer,expert,tokens\n5,0,0,1\n4,0,1,1\n",
            0,
            &assign,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, TraceError::NonMonotoneStep { line: 3, .. }));

        let err = parse_load_trace("step,layer,expert,tokens\n0,0,x,1\n", 0, &assign, 2)
            .unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 2, .. }));
    }

    #[test]
    fn skewed_trace_grows_imbalance_until_migration() {
        // one hot expert: delta grows step over step
        let mut text = String::from("step,layer,expert,tokens\n");
        for step in 0..5 {
            for e in 0..4 {
                let tokens = if e == 0 { 10 * (step + 1) } else { 2 };
                text.push_str(&format!("{step},0,{e},{tokens}\n"));
            }
        }
        let assign = round_robin_assignment(4, 2);
        let states = parse_load_trace(&text, 0, &assign, 2).unwrap();
        let deltas: Vec<u64> = states.iter().map(LoadState::imbalance).collect();
        for w in deltas.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn amortized_overhead_arithmetic() {
        let (arch, _) = crate::model::tiny_fixture();
        // no triggers -> zero overhead
        let quiet = vec![loads(&[vec![2, 2], vec![2, 2]]); 10];
        assert_eq!(amortized_overhead(&quiet, 0.5, &arch, None, 1.0).unwrap(), 0.0);

        // one trigger whose latency is 52.6 ms over 100 steps of 1 s
        let mut states = vec![loads(&[vec![2, 2], vec![2, 2]]); 100];
        states[0] = loads(&[vec![10, 2], vec![2, 0]]); // one improving swap
        let zoo = crate::model::load_model_zoo();
        let mixtral = zoo.get("mixtral-8x7b").unwrap().arch.clone().unwrap();
        // pick a bandwidth that makes one expert's move cost 52.6 ms
        let bw = 2_818_572_288.0 / 0.0526;
        let schedule = run_migration_schedule(&states, 0.5, &mixtral, Some(bw), 1.0).unwrap();
        assert_eq!(schedule.events.len(), 1);
        assert_eq!(schedule.events[0].result.swap_count, 1);
        assert!(
            (schedule.overhead_fraction - 5.26e-4).abs() < 1e-12,
            "{}",
            schedule.overhead_fraction
        );
    }

    #[test]
    fn overhead_monotone_in_threshold() {
        let (arch, _) = crate::model::tiny_fixture();
        let mut states = Vec::new();
        for step in 0..20 {
            states.push(LoadState::from_loads(
                step,
                &[vec![10 + step, 2], vec![2, 0]],
            ));
        }
        let mut prev = f64::MAX;
        for threshold in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let o = amortized_overhead(&states, threshold, &arch, None, 1.0).unwrap();
            assert!(o <= prev);
            prev = o;
        }
    }
}
