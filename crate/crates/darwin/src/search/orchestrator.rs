//! The full search orchestrator: candidate sampling, mutation, replacement
//! search, top-k aggregation, archive update — plus the three reference
//! strategies it degenerates into.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::engine::{run_engine, EngineOutcome, EngineParams, ReplacementCycleRecord};
use super::{archive_sample, archive_update, best_of_n, top_k_instructions, SearchError};
use crate::backends::{mutate, score_batch, RunBackends};
use crate::config::SearchConfig;
use crate::rng::{self, labels};
use crate::trace::{TraceEvent, TraceRecorder, WinnerRecord};
use crate::types::{Archive, BeamState, IdGen, Instruction, InstructionId, SeedInstruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Mutation exploration plus reward-guided beam replacement.
    Darwin,
    /// N independent samples of the seed, argmax at the end.
    SampleBest,
    /// N copies of the seed with beam replacement.
    SampleReplace,
    /// Mutation cycles, each resolved by a single end-of-run scoring.
    MutateBest,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Darwin,
        Strategy::SampleBest,
        Strategy::SampleReplace,
        Strategy::MutateBest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Darwin => "darwin",
            Strategy::SampleBest => "sample-best",
            Strategy::SampleReplace => "sample-replace",
            Strategy::MutateBest => "mutate-best",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|strategy| strategy.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub answer: BeamState,
    pub final_reward: f64,
}

/// Runs the full mutation/replacement search and returns the best answer
/// with its complete trace.
pub fn darwin_run(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
) -> Result<(BeamState, crate::trace::SearchTrace), SearchError> {
    let header = crate::trace::TraceHeader::new(
        Strategy::Darwin,
        config,
        seed.instruction(),
        "in-process",
    );
    let mut recorder = TraceRecorder::in_memory(header);
    let outcome = darwin_run_with(backends, seed, config, &mut recorder)?;
    let trace = recorder
        .finish()
        .map_err(|e| SearchError::InvalidInput(e.to_string()))?;
    Ok((outcome.answer, trace))
}

/// [`darwin_run`] with a caller-owned recorder, so aborted runs leave their
/// partial trace behind.
pub fn darwin_run_with(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    recorder: &mut TraceRecorder,
) -> Result<RunOutcome, SearchError> {
    run_strategy(Strategy::Darwin, backends, seed, config, recorder)
}

/// Runs one strategy to completion, streaming events into `recorder`.
pub fn run_strategy(
    strategy: Strategy,
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    recorder: &mut TraceRecorder,
) -> Result<RunOutcome, SearchError> {
    config
        .validate()
        .map_err(|e| SearchError::InvalidInput(e.to_string()))?;
    match strategy {
        Strategy::SampleBest => run_sample_best(backends, seed, config, recorder),
        Strategy::SampleReplace => run_sample_replace(backends, seed, config, recorder),
        Strategy::MutateBest => run_mutation_cycles(backends, seed, config, recorder, false),
        Strategy::Darwin => run_mutation_cycles(backends, seed, config, recorder, true),
    }
}

fn seed_beams(seed: &SeedInstruction, count: usize) -> Vec<(Instruction, BeamState)> {
    (0..count)
        .map(|i| (seed.instruction().clone(), BeamState::empty(i, seed.id())))
        .collect()
}

fn run_sample_best(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    recorder: &mut TraceRecorder,
) -> Result<RunOutcome, SearchError> {
    recorder.record(TraceEvent::MutationCycleStart {
        cycle: 1,
        candidate: seed.instruction().clone(),
        mutated: Vec::new(),
        degraded: false,
    });
    let beams = super::sample_n(
        backends.generation(),
        seed.instruction(),
        config.beam_count(),
        config,
    )?;
    let (answer, rewards) = best_of_n(backends.reward(), seed, &beams)?;
    recorder.record(TraceEvent::ReplacementCycle {
        record: final_scoring_record(&beams, &rewards, config.beam_count()),
    });
    finish_simple_cycle(backends, recorder, answer, &rewards)
}

fn run_sample_replace(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    recorder: &mut TraceRecorder,
) -> Result<RunOutcome, SearchError> {
    recorder.record(TraceEvent::MutationCycleStart {
        cycle: 1,
        candidate: seed.instruction().clone(),
        mutated: Vec::new(),
        degraded: false,
    });
    let params = EngineParams {
        generation: backends.generation(),
        reward: backends.reward(),
        seed,
        config,
        mutation_cycle: 1,
        effective_k: config.top_k,
    };
    let outcome = run_engine(&params, seed_beams(seed, config.beam_count()), &mut |record| {
        recorder.record(TraceEvent::ReplacementCycle {
            record: record.clone(),
        });
    })?;
    let (index, _) = best_final_beam(&outcome.beams);
    let answer = outcome.beams[index].clone();
    let rewards: Vec<f64> = outcome
        .beams
        .iter()
        .map(|b| b.last_reward().unwrap_or(f64::NEG_INFINITY))
        .collect();
    finish_simple_cycle(backends, recorder, answer, &rewards)
}

fn finish_simple_cycle(
    backends: &RunBackends,
    recorder: &mut TraceRecorder,
    answer: BeamState,
    rewards: &[f64],
) -> Result<RunOutcome, SearchError> {
    let final_reward = rewards[answer.beam_index];
    recorder.record(TraceEvent::MutationCycleEnd {
        cycle: 1,
        winners: Vec::new(),
        candidate_reward: None,
        admitted: Vec::new(),
    });
    recorder.record(TraceEvent::RunEnd {
        final_answer: answer.clone(),
        final_reward,
        counters: backends.call_counts(),
    });
    Ok(RunOutcome {
        answer,
        final_reward,
    })
}

/// Shared body of darwin and mutate-best. `with_replacement` selects the
/// full engine; without it each cycle decodes to completion and is scored
/// once at the end.
fn run_mutation_cycles(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    recorder: &mut TraceRecorder,
    with_replacement: bool,
) -> Result<RunOutcome, SearchError> {
    let mut archive = Archive::new(seed);
    let mut ids = IdGen::new();
    let mut archive_rng = rng::seeded_rng(config.rng_seed, labels::ARCHIVE_SAMPLE);
    let mut best: Option<(f64, BeamState)> = None;

    for cycle in 1..=config.mutation_cycles {
        let cycle = cycle as u32;
        let candidate = archive_sample(&archive, &mut archive_rng).clone();
        let candidate_reward = archive
            .entry(candidate.id)
            .and_then(|entry| entry.reward_vs_seed);
        let mutation = mutate(
            backends.mutation(),
            &candidate,
            config.mutations_per_cycle,
            cycle,
            &mut ids,
        )?;
        recorder.record(TraceEvent::MutationCycleStart {
            cycle,
            candidate: candidate.clone(),
            mutated: mutation.instructions.clone(),
            degraded: mutation.degraded,
        });

        // n_b beams per mutated instruction, instruction-major order
        let guided: Vec<(Instruction, BeamState)> = mutation
            .instructions
            .iter()
            .flat_map(|instruction| {
                std::iter::repeat(instruction.clone()).take(config.beams_per_mutation)
            })
            .enumerate()
            .map(|(index, instruction)| {
                let id = instruction.id;
                (instruction, BeamState::empty(index, id))
            })
            .collect();

        let outcome = if with_replacement {
            let params = EngineParams {
                generation: backends.generation(),
                reward: backends.reward(),
                seed,
                config,
                mutation_cycle: cycle,
                effective_k: config.top_k,
            };
            run_engine(&params, guided, &mut |record| {
                recorder.record(TraceEvent::ReplacementCycle {
                    record: record.clone(),
                });
            })?
        } else {
            let outcome = decode_then_score_once(backends, seed, config, cycle, guided)?;
            recorder.record(TraceEvent::ReplacementCycle {
                record: outcome.cycles[0].clone(),
            });
            outcome
        };

        // Algorithm aggregation skips the first replacement cycle; fall
        // back to everything when the run was a single cycle.
        let aggregated = if outcome.cycles.len() >= 2 {
            &outcome.cycles[1..]
        } else {
            &outcome.cycles[..]
        };
        let top_k_records: Vec<_> = aggregated.iter().map(|c| c.top_k()).collect();
        let winner_ids = top_k_instructions(&top_k_records, config.top_k);
        let winners = winners_with_best_rewards(&winner_ids, &outcome);
        let admitted = archive_update(
            &mut archive,
            &candidate,
            &winners,
            candidate_reward.unwrap_or(f64::NEG_INFINITY),
            config.archive_top_p,
            config.archive_replace_candidate,
        );

        let (best_index, best_reward) = best_final_beam(&outcome.beams);
        if best.as_ref().map_or(true, |(reward, _)| best_reward > *reward) {
            best = Some((best_reward, outcome.beams[best_index].clone()));
        }

        recorder.record(TraceEvent::MutationCycleEnd {
            cycle,
            winners: winners
                .iter()
                .map(|(instruction, reward)| WinnerRecord {
                    instruction_id: instruction.id,
                    best_reward_vs_seed: *reward,
                })
                .collect(),
            candidate_reward,
            admitted,
        });
    }

    let (final_reward, answer) = best.expect("at least one mutation cycle ran");
    recorder.record(TraceEvent::RunEnd {
        final_answer: answer.clone(),
        final_reward,
        counters: backends.call_counts(),
    });
    Ok(RunOutcome {
        answer,
        final_reward,
    })
}

/// Decode every beam to completion, score the batch once, and report it as
/// a single scoring cycle.
fn decode_then_score_once(
    backends: &RunBackends,
    seed: &SeedInstruction,
    config: &SearchConfig,
    mutation_cycle: u32,
    guided: Vec<(Instruction, BeamState)>,
) -> Result<EngineOutcome, SearchError> {
    // The engine with k = beam count never replaces, but it would still
    // score every segment; decode in lockstep segments here instead so the
    // substream derivation matches the replacement engine exactly.
    let mut instructions: Vec<Instruction> = Vec::new();
    let mut beams = Vec::with_capacity(guided.len());
    for (index, (instruction, mut beam)) in guided.into_iter().enumerate() {
        if !instructions.iter().any(|i| i.id == instruction.id) {
            instructions.push(instruction.clone());
        }
        beam.beam_index = index;
        beam.instruction_id = instruction.id;
        beams.push(beam);
    }
    let text_by_id: HashMap<InstructionId, String> = instructions
        .iter()
        .map(|i| (i.id, i.text.clone()))
        .collect();
    for t in 1..=config.max_replacement_cycles() {
        super::engine::decode_segment(
            backends.generation(),
            &mut beams,
            &text_by_id,
            config,
            mutation_cycle,
            t,
        )?;
        if beams.iter().all(|b| b.finished) {
            break;
        }
    }
    for beam in &mut beams {
        if !beam.finished {
            beam.mark_finished();
        }
    }

    let texts: Vec<String> = beams.iter().map(|b| b.text()).collect();
    let rewards = score_batch(backends.reward(), seed, texts)?;
    for (beam, &reward) in beams.iter_mut().zip(&rewards) {
        beam.record_reward(1, reward);
    }
    let record = final_scoring_record_with(&beams, &rewards, beams.len(), mutation_cycle);
    Ok(EngineOutcome {
        beams,
        instructions,
        cycles: vec![record],
    })
}

/// A single-cycle record for strategies that score once at the end.
fn final_scoring_record(
    beams: &[BeamState],
    rewards: &[f64],
    k: usize,
) -> ReplacementCycleRecord {
    final_scoring_record_with(beams, rewards, k, 1)
}

fn final_scoring_record_with(
    beams: &[BeamState],
    rewards: &[f64],
    k: usize,
    mutation_cycle: u32,
) -> ReplacementCycleRecord {
    let ranked = super::rank_beams(rewards);
    let beam_instruction_ids: Vec<InstructionId> =
        beams.iter().map(|b| b.instruction_id).collect();
    let mut top_k_instruction_ids = Vec::new();
    for &beam in ranked.top_k(k) {
        let id = beam_instruction_ids[beam];
        if !top_k_instruction_ids.contains(&id) {
            top_k_instruction_ids.push(id);
        }
    }
    ReplacementCycleRecord {
        mutation_cycle,
        cycle_index: 1,
        beam_instruction_ids,
        rewards: rewards.to_vec(),
        ranking: ranked.ordering,
        top_k_instruction_ids,
        replacement_events: Vec::new(),
        finished: beams.iter().map(|b| b.finished).collect(),
    }
}

/// Best reward each winner achieved across all scored cycles, via the
/// per-beam instruction bindings recorded at scoring time.
fn winners_with_best_rewards(
    winner_ids: &[InstructionId],
    outcome: &EngineOutcome,
) -> Vec<(Instruction, f64)> {
    let mut best: HashMap<InstructionId, f64> = HashMap::new();
    for cycle in &outcome.cycles {
        for (beam, &reward) in cycle.beam_instruction_ids.iter().zip(&cycle.rewards) {
            best.entry(*beam)
                .and_modify(|current| *current = current.max(reward))
                .or_insert(reward);
        }
    }
    winner_ids
        .iter()
        .filter_map(|id| {
            let instruction = outcome.instructions.iter().find(|i| i.id == *id)?;
            Some((instruction.clone(), best.get(id).copied()?))
        })
        .collect()
}

/// The final answer of a beam set: argmax of the last recorded rewards,
/// ties to the lowest beam index.
fn best_final_beam(beams: &[BeamState]) -> (usize, f64) {
    let mut best_index = 0;
    let mut best_reward = f64::NEG_INFINITY;
    for (index, beam) in beams.iter().enumerate() {
        let reward = beam.last_reward().unwrap_or(f64::NEG_INFINITY);
        if reward > best_reward {
            best_reward = reward;
            best_index = index;
        }
    }
    (best_index, best_reward)
}
