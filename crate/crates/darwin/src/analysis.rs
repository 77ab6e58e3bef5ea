//! Post-hoc beam-dynamics metrics over search traces: Jaccard similarity
//! and rank-biased overlap between consecutive top-k sets, the
//! winning-instruction probability, and trailing smoothing.
//!
//! The averaging unit is one (trace, mutation cycle) pair. Top-k sets are
//! reconstructed from each cycle's stored full ranking, so any k up to the
//! beam count can be analyzed from the same trace.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::trace::{MutationCycleRecord, SearchTrace};
use crate::types::InstructionId;

pub const REPORT_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no traces to analyze")]
    NoTraces,
    #[error("traces disagree on {field}; analyze runs of one configuration at a time")]
    ConfigMismatch { field: &'static str },
    #[error("k={k} exceeds the traced top_k={top_k}")]
    KTooLarge { k: usize, top_k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: u32,
    pub value: f64,
}

/// A smoothed series of per-replacement-step values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<MetricPoint>,
    pub smoothing_window: usize,
}

impl MetricSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,value\n");
        for point in &self.values {
            out.push_str(&format!("{},{}\n", point.step, point.value));
        }
        out
    }
}

/// |A ∩ B| / |A ∪ B|. Two empty sets count as maximally similar.
pub fn jaccard(a: &HashSet<InstructionId>, b: &HashSet<InstructionId>) -> f64 {
    if a.is_empty() && b.is_empty() {
        log::warn!("jaccard of two empty sets defined as 1.0");
        return 1.0;
    }
    let intersection = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    intersection / union
}

/// Rank-biased overlap of two duplicate-free ranked lists, truncated at
/// d = min(|S|, |T|) with no extrapolation: identical length-D lists score
/// 1 − p^D, and an empty list scores 0.
pub fn rbo(list_s: &[InstructionId], list_t: &[InstructionId], persistence: f64) -> f64 {
    assert!(
        persistence > 0.0 && persistence < 1.0,
        "persistence must lie in (0, 1)"
    );
    let depth = list_s.len().min(list_t.len());
    if depth == 0 {
        return 0.0;
    }
    let mut seen_s: HashSet<InstructionId> = HashSet::new();
    let mut seen_t: HashSet<InstructionId> = HashSet::new();
    let mut overlap = 0usize;
    let mut sum = 0.0;
    for d in 1..=depth {
        let x = list_s[d - 1];
        let y = list_t[d - 1];
        if x == y {
            overlap += 1;
        } else {
            if seen_t.contains(&x) {
                overlap += 1;
            }
            if seen_s.contains(&y) {
                overlap += 1;
            }
        }
        seen_s.insert(x);
        seen_t.insert(y);
        sum += persistence.powi(d as i32 - 1) * overlap as f64 / d as f64;
    }
    (1.0 - persistence) * sum
}

/// Trailing moving average; the first window−1 points average over the
/// available prefix.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let start = (i + 1).saturating_sub(window);
            let slice = &values[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// The ranked, deduplicated instructions of the top-k beams at one cycle,
/// rebuilt from the stored full ranking.
fn top_k_ids_at(
    record: &crate::search::ReplacementCycleRecord,
    k: usize,
) -> Vec<InstructionId> {
    let mut ids = Vec::new();
    for &beam in record.ranking.iter().take(k) {
        let id = record.beam_instruction_ids[beam];
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids
}

/// The most frequent instruction across one mutation cycle's stored top-k
/// records; ties by earliest appearance, then ascending id.
pub fn winning_instruction(
    trace: &SearchTrace,
    mutation_cycle_index: usize,
) -> Option<InstructionId> {
    let records = trace.cycle_top_k(mutation_cycle_index)?;
    crate::search::top_k_instructions(&records, 1).into_iter().next()
}

fn winning_instruction_at(unit: &MutationCycleRecord, k: usize) -> Option<InstructionId> {
    let records: Vec<crate::search::CycleTopK> = unit
        .cycles
        .iter()
        .map(|record| crate::search::CycleTopK {
            cycle_index: record.cycle_index,
            instruction_ids: top_k_ids_at(record, k),
        })
        .collect();
    crate::search::top_k_instructions(&records, 1).into_iter().next()
}

fn units(traces: &[SearchTrace]) -> Vec<&MutationCycleRecord> {
    traces
        .iter()
        .flat_map(|trace| trace.mutation_cycles.iter())
        .collect()
}

/// Mean over units of a per-step pair statistic between consecutive top-k
/// lists. Units with fewer than two cycles contribute nothing; steps are
/// truncated to the pairs present in every remaining unit.
fn consecutive_pair_series(
    traces: &[SearchTrace],
    k: usize,
    window: usize,
    name: &str,
    stat: impl Fn(&[InstructionId], &[InstructionId]) -> f64 + Sync,
) -> MetricSeries {
    let units: Vec<&MutationCycleRecord> = units(traces)
        .into_iter()
        .filter(|unit| unit.cycles.len() >= 2)
        .collect();
    let pair_count = units
        .iter()
        .map(|unit| unit.cycles.len() - 1)
        .min()
        .unwrap_or(0);
    // per-unit rows first (parallel), then a sequential mean so the
    // summation order is fixed
    let rows: Vec<Vec<f64>> = exec::map_ordered(&units, |unit| {
        (0..pair_count)
            .map(|i| {
                stat(
                    &top_k_ids_at(&unit.cycles[i], k),
                    &top_k_ids_at(&unit.cycles[i + 1], k),
                )
            })
            .collect()
    });
    let raw: Vec<f64> = (0..pair_count)
        .map(|i| rows.iter().map(|row| row[i]).sum::<f64>() / rows.len() as f64)
        .collect();
    let smoothed = smooth(&raw, window);
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

/// Average Jaccard similarity between consecutive top-k instruction sets,
/// smoothed with the traces' configured window.
pub fn avg_jaccard_series(traces: &[SearchTrace], k: usize) -> MetricSeries {
    avg_jaccard_series_windowed(traces, k, default_window(traces))
}

pub fn avg_jaccard_series_windowed(
    traces: &[SearchTrace],
    k: usize,
    window: usize,
) -> MetricSeries {
    consecutive_pair_series(traces, k, window, "avg_jaccard", |a, b| {
        let set_a: HashSet<InstructionId> = a.iter().copied().collect();
        let set_b: HashSet<InstructionId> = b.iter().copied().collect();
        jaccard(&set_a, &set_b)
    })
}

/// Average rank-biased overlap between consecutive ranked top-k lists.
pub fn avg_rbo_series(traces: &[SearchTrace], k: usize, persistence: f64) -> MetricSeries {
    avg_rbo_series_windowed(traces, k, persistence, default_window(traces))
}

pub fn avg_rbo_series_windowed(
    traces: &[SearchTrace],
    k: usize,
    persistence: f64,
    window: usize,
) -> MetricSeries {
    consecutive_pair_series(traces, k, window, "avg_rbo", move |a, b| {
        rbo(a, b, persistence)
    })
}

/// At each replacement step, the fraction of (trace, mutation-cycle) units
/// whose winning instruction sits in that step's top-k set. Units missing a
/// step (beams finished early) are excluded from that step's denominator.
pub fn win_probability_series(traces: &[SearchTrace], k: usize) -> MetricSeries {
    win_probability_series_windowed(traces, k, default_window(traces))
}

pub fn win_probability_series_windowed(
    traces: &[SearchTrace],
    k: usize,
    window: usize,
) -> MetricSeries {
    let units = units(traces);
    let step_count = units.iter().map(|unit| unit.cycles.len()).max().unwrap_or(0);
    let indicators: Vec<Vec<Option<bool>>> = exec::map_ordered(&units, |unit| {
        let winner = winning_instruction_at(unit, k);
        (0..step_count)
            .map(|i| {
                let record = unit.cycles.get(i)?;
                let winner = winner?;
                Some(top_k_ids_at(record, k).contains(&winner))
            })
            .collect()
    });
    let raw: Vec<f64> = (0..step_count)
        .map(|i| {
            let mut hits = 0usize;
            let mut present = 0usize;
            for row in &indicators {
                if let Some(hit) = row[i] {
                    present += 1;
                    hits += hit as usize;
                }
            }
            if present == 0 {
                0.0
            } else {
                hits as f64 / present as f64
            }
        })
        .collect();
    let smoothed = smooth(&raw, window);
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

fn default_window(traces: &[SearchTrace]) -> usize {
    traces
        .first()
        .map(|t| t.header.config.smoothing_window)
        .unwrap_or(5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub k: usize,
    pub rbo_persistence: f64,
    pub smoothing_window: usize,
    pub traces: usize,
}

/// The metrics report cmd_analyze writes as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub params: ReportParams,
    pub series: Vec<MetricSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Jaccard,
    Rbo,
    WinProbability,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jaccard, Metric::Rbo, Metric::WinProbability];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Jaccard => "jaccard",
            Metric::Rbo => "rbo",
            Metric::WinProbability => "win-prob",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|metric| metric.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Builds the report for a set of traces sharing one configuration
/// (rng_seed aside; averaging across seeds is the point).
pub fn analyze_traces(
    traces: &[SearchTrace],
    metrics: &[Metric],
    k: usize,
    persistence: f64,
    window: usize,
) -> Result<MetricsReport, AnalysisError> {
    let first = traces.first().ok_or(AnalysisError::NoTraces)?;
    let reference = config_key(&first.header.config);
    for trace in traces {
        if config_key(&trace.header.config) != reference {
            return Err(AnalysisError::ConfigMismatch { field: "config" });
        }
    }
    if k > first.header.config.top_k {
        return Err(AnalysisError::KTooLarge {
            k,
            top_k: first.header.config.top_k,
        });
    }
    let series = metrics
        .iter()
        .map(|metric| match metric {
            Metric::Jaccard => avg_jaccard_series_windowed(traces, k, window),
            Metric::Rbo => avg_rbo_series_windowed(traces, k, persistence, window),
            Metric::WinProbability => win_probability_series_windowed(traces, k, window),
        })
        .collect();
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        params: ReportParams {
            k,
            rbo_persistence: persistence,
            smoothing_window: window,
            traces: traces.len(),
        },
        series,
    })
}

fn config_key(config: &crate::config::SearchConfig) -> crate::config::SearchConfig {
    crate::config::SearchConfig {
        rng_seed: 0,
        ..config.clone()
    }
}
