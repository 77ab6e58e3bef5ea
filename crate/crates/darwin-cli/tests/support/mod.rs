//! Shared test support: straight-line brute-force reimplementations of the
//! metric definitions and a synthetic trace generator. Everything here is
//! deliberately independent of the library's implementation paths: sets are
//! rebuilt from scratch at every depth, statistics run as plain loops.

use std::collections::HashSet;

use darwin::analysis::{MetricPoint, MetricSeries, MetricsReport, ReportParams};
use darwin::search::{ReplacementCycleRecord, Strategy};
use darwin::trace::{MutationCycleRecord, SearchTrace, TraceHeader};
use darwin::types::{InstructionId, SeedInstruction};
use darwin::SearchConfig;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

/// Ranked, deduplicated instruction ids of the top-k beams of one cycle.
pub fn bf_top_k_ids(record: &ReplacementCycleRecord, k: usize) -> Vec<InstructionId> {
    let mut ids = Vec::new();
    for position in 0..k.min(record.ranking.len()) {
        let beam = record.ranking[position];
        let id = record.beam_instruction_ids[beam];
        if !ids.iter().any(|existing| *existing == id) {
            ids.push(id);
        }
    }
    ids
}

pub fn bf_jaccard(a: &[InstructionId], b: &[InstructionId]) -> f64 {
    let set_a: HashSet<InstructionId> = a.iter().copied().collect();
    let set_b: HashSet<InstructionId> = b.iter().copied().collect();
    if set_a.is_empty() && set_b.is_empty() {
        return 1.0;
    }
    let mut intersection = 0usize;
    for id in &set_a {
        if set_b.contains(id) {
            intersection += 1;
        }
    }
    let union = set_a.len() + set_b.len() - intersection;
    intersection as f64 / union as f64
}

/// RBO by the definition: at every depth the prefix sets are rebuilt and
/// intersected from scratch.
pub fn bf_rbo(s: &[InstructionId], t: &[InstructionId], p: f64) -> f64 {
    let depth_max = s.len().min(t.len());
    if depth_max == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for d in 1..=depth_max {
        let prefix_s: HashSet<InstructionId> = s[..d].iter().copied().collect();
        let prefix_t: HashSet<InstructionId> = t[..d].iter().copied().collect();
        let overlap = prefix_s.intersection(&prefix_t).count();
        sum += p.powi(d as i32 - 1) * overlap as f64 / d as f64;
    }
    (1.0 - p) * sum
}

pub fn bf_smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let start = if i + 1 >= window { i + 1 - window } else { 0 };
        let mut sum = 0.0;
        for value in &values[start..=i] {
            sum += value;
        }
        out.push(sum / (i - start + 1) as f64);
    }
    out
}

fn bf_units(traces: &[SearchTrace]) -> Vec<&MutationCycleRecord> {
    let mut units = Vec::new();
    for trace in traces {
        for mc in &trace.mutation_cycles {
            units.push(mc);
        }
    }
    units
}

fn bf_pair_series(
    traces: &[SearchTrace],
    k: usize,
    window: usize,
    name: &str,
    stat: impl Fn(&[InstructionId], &[InstructionId]) -> f64,
) -> MetricSeries {
    let units: Vec<&MutationCycleRecord> = bf_units(traces)
        .into_iter()
        .filter(|unit| unit.cycles.len() >= 2)
        .collect();
    let pair_count = units
        .iter()
        .map(|unit| unit.cycles.len() - 1)
        .min()
        .unwrap_or(0);
    let mut raw = Vec::with_capacity(pair_count);
    for i in 0..pair_count {
        let mut sum = 0.0;
        for unit in &units {
            sum += stat(
                &bf_top_k_ids(&unit.cycles[i], k),
                &bf_top_k_ids(&unit.cycles[i + 1], k),
            );
        }
        raw.push(sum / units.len() as f64);
    }
    let smoothed = bf_smooth(&raw, window);
    MetricSeries {
        name: name.to_string(),
        values: smoothed
            .into_iter()
            .enumerate()
            .map(|(i, value)| MetricPoint {
                step: units
                    .first()
                    .map(|u| u.cycles[i].cycle_index)
                    .unwrap_or(i as u32 + 1),
                value,
            })
            .collect(),
        smoothing_window: window,
    }
}

pub fn bf_avg_jaccard_series(traces: &[SearchTrace], k: usize, window: usize) -> MetricSeries {
    bf_pair_series(traces, k, window, "avg_jaccard", |a, b| bf_jaccard(a, b))
}

pub fn bf_avg_rbo_series(
    traces: &[SearchTrace],
    k: usize,
    p: f64,
    window: usize,
) -> MetricSeries {
    bf_pair_series(traces, k, window, "avg_rbo", move |a, b| bf_rbo(a, b, p))
}

/// The winning instruction of a unit at depth k: most frequent across the
/// per-cycle top-k sets, ties to the earliest first-appearance cycle, then
/// the ascending id.
pub fn bf_winning_instruction(unit: &MutationCycleRecord, k: usize) -> Option<InstructionId> {
    let mut counted: Vec<(InstructionId, usize, u32)> = Vec::new();
    for record in &unit.cycles {
        for id in bf_top_k_ids(record, k) {
            match counted.iter_mut().find(|(existing, _, _)| *existing == id) {
                Some(entry) => entry.1 += 1,
                None => counted.push((id, 1, record.cycle_index)),
            }
        }
    }
    counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    counted.into_iter().next().map(|(id, _, _)| id)
}

pub fn bf_win_probability_series(
    traces: &[SearchTrace],
    k: usize,
    window: usize,
) -> MetricSeries {
    let units = bf_units(traces);
    let step_count = units.iter().map(|u| u.cycles.len()).max().unwrap_or(0);
    let mut raw = Vec::with_capacity(step_count);
    for i in 0..step_count {
        let mut hits = 0usize;
        let mut present = 0usize;
        for unit in &units {
            let Some(record) = unit.cycles.get(i) else {
                continue;
            };
            let Some(winner) = bf_winning_instruction(unit, k) else {
                continue;
            };
            present += 1;
            if bf_top_k_ids(record, k).iter().any(|id| *id == winner) {
                hits += 1;
            }
        }
        raw.push(if present == 0 {
            0.0
        } else {
            hits as f64 / present as f64
        });
    }
    let smoothed = bf_smooth(&raw, window);
    MetricSeries {
        name: "win_probability".to_string(),
        values: smoothed
            .into_iter()
            .enumerate()
            .map(|(i, value)| MetricPoint {
                step: i as u32 + 1,
                value,
            })
            .collect(),
        smoothing_window: window,
    }
}

/// Full brute-force report mirror of `analyze_traces` with all metrics.
pub fn bf_report(traces: &[SearchTrace], k: usize, p: f64, window: usize) -> MetricsReport {
    MetricsReport {
        schema_version: "1".to_string(),
        params: ReportParams {
            k,
            rbo_persistence: p,
            smoothing_window: window,
            traces: traces.len(),
        },
        series: vec![
            bf_avg_jaccard_series(traces, k, window),
            bf_avg_rbo_series(traces, k, p, window),
            bf_win_probability_series(traces, k, window),
        ],
    }
}

/// A synthetic trace with randomized rankings and instruction bindings,
/// built directly (never through the engine).
pub fn random_trace(rng: &mut StdRng) -> SearchTrace {
    let beams = rng.gen_range(2..=6usize);
    let config = SearchConfig {
        mutations_per_cycle: beams,
        beams_per_mutation: 1,
        top_k: beams,
        rng_seed: rng.gen(),
        ..SearchConfig::default()
    };
    let seed = SeedInstruction::new("synthetic").unwrap();
    let header = TraceHeader::new(Strategy::Darwin, &config, seed.instruction(), "synthetic");
    let mutation_cycles = (1..=rng.gen_range(1..=3u32))
        .map(|mc| {
            let instruction_pool: Vec<InstructionId> =
                (1..=beams as u64 + 2).map(InstructionId).collect();
            let cycles = (1..=rng.gen_range(1..=10u32))
                .map(|t| {
                    let mut ranking: Vec<usize> = (0..beams).collect();
                    ranking.shuffle(rng);
                    let beam_instruction_ids: Vec<InstructionId> = (0..beams)
                        .map(|_| instruction_pool[rng.gen_range(0..instruction_pool.len())])
                        .collect();
                    let mut rewards: Vec<f64> = (0..beams).map(|_| rng.gen_range(0.0..9.0)).collect();
                    rewards.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let rewards_by_beam: Vec<f64> = {
                        let mut by_beam = vec![0.0; beams];
                        for (position, &beam) in ranking.iter().enumerate() {
                            by_beam[beam] = rewards[position];
                        }
                        by_beam
                    };
                    let top_k_instruction_ids: Vec<InstructionId> = {
                        let mut ids = Vec::new();
                        for &beam in ranking.iter().take(config.top_k) {
                            let id = beam_instruction_ids[beam];
                            if !ids.contains(&id) {
                                ids.push(id);
                            }
                        }
                        ids
                    };
                    ReplacementCycleRecord {
                        mutation_cycle: mc,
                        cycle_index: t,
                        beam_instruction_ids,
                        rewards: rewards_by_beam,
                        ranking,
                        top_k_instruction_ids,
                        replacement_events: Vec::new(),
                        finished: vec![false; beams],
                    }
                })
                .collect();
            MutationCycleRecord {
                cycle: mc,
                candidate: seed.instruction().clone(),
                mutated: Vec::new(),
                degraded: false,
                cycles,
                winners: Vec::new(),
                candidate_reward: None,
                admitted: Vec::new(),
            }
        })
        .collect();
    SearchTrace {
        header,
        mutation_cycles,
        final_answer: None,
        final_reward: None,
        counters: None,
    }
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
