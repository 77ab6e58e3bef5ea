//! The decode/score/replace engine shared by every strategy.
//!
//! Beams advance in m-token segments. After each segment every beam is
//! scored against the seed instruction (finished beams keep their final
//! text), ranked, recorded, and the non-top-k unfinished beams are
//! replaced. Generation substreams are derived functionally from
//! (seed, cycle, beam, segment), so consuming one stream never shifts
//! another and lookahead extensions cannot leak into the main decode.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{replacement_step, CycleTopK, ReplacementEvent, SearchError};
use crate::backends::{
    generate_batch, score_batch, GenerationBackend, GenerationRequest, RewardBackend,
};
use crate::config::SearchConfig;
use crate::rng::{self, labels};
use crate::types::{BeamState, Instruction, InstructionId, SeedInstruction};

/// Everything one replacement cycle produced, in scoring order. Rewards,
/// ranking, and instruction bindings are snapshots taken at scoring time,
/// before the replacement ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementCycleRecord {
    pub mutation_cycle: u32,
    /// Replacement cycle index t, starting at 1.
    pub cycle_index: u32,
    /// Guiding instruction of each beam at scoring time.
    pub beam_instruction_ids: Vec<InstructionId>,
    /// Reward of each beam, in beam order.
    pub rewards: Vec<f64>,
    /// Beam indices sorted by reward descending, ties by ascending index.
    pub ranking: Vec<usize>,
    /// Ranked, deduplicated instructions of the top-k beams.
    pub top_k_instruction_ids: Vec<InstructionId>,
    pub replacement_events: Vec<ReplacementEvent>,
    /// Finished flags at scoring time.
    pub finished: Vec<bool>,
}

impl ReplacementCycleRecord {
    pub fn top_k(&self) -> CycleTopK {
        CycleTopK {
            cycle_index: self.cycle_index,
            instruction_ids: self.top_k_instruction_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutcome {
    pub beams: Vec<BeamState>,
    /// The guiding instruction set, deduplicated by id.
    pub instructions: Vec<Instruction>,
    pub cycles: Vec<ReplacementCycleRecord>,
}

pub(crate) struct EngineParams<'a> {
    pub generation: &'a dyn GenerationBackend,
    pub reward: &'a dyn RewardBackend,
    pub seed: &'a SeedInstruction,
    pub config: &'a SearchConfig,
    pub mutation_cycle: u32,
    /// `config.top_k` for replacement runs; the beam count disables
    /// replacement entirely.
    pub effective_k: usize,
}

/// Alternates m-token decode segments with scoring and replacement until
/// every beam finishes or the token budget runs out. Each beam continues
/// under its own guiding instruction, which changes when a replacement
/// copies another beam's binding; scoring always uses the seed.
pub fn run_replacement_search(
    generation: &dyn GenerationBackend,
    reward: &dyn RewardBackend,
    seed: &SeedInstruction,
    guided: Vec<(Instruction, BeamState)>,
    config: &SearchConfig,
) -> Result<EngineOutcome, SearchError> {
    let params = EngineParams {
        generation,
        reward,
        seed,
        config,
        mutation_cycle: 1,
        effective_k: config.top_k,
    };
    run_engine(&params, guided, &mut |_| {})
}

pub(crate) fn run_engine(
    params: &EngineParams<'_>,
    guided: Vec<(Instruction, BeamState)>,
    on_cycle: &mut dyn FnMut(&ReplacementCycleRecord),
) -> Result<EngineOutcome, SearchError> {
    if guided.is_empty() {
        return Err(SearchError::InvalidInput("no beams to search".into()));
    }
    let config = params.config;
    assert!(
        params.effective_k >= 1 && params.effective_k <= guided.len(),
        "need 1 <= k <= beam count"
    );

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

    let seed_u = config.rng_seed;
    let mc = params.mutation_cycle;
    let mut replacement_rng = rng::substream_rng(seed_u, labels::REPLACEMENT, &[mc as u64]);
    let mut cycles = Vec::new();

    for t in 1..=config.max_replacement_cycles() {
        decode_segment(params.generation, &mut beams, &text_by_id, config, mc, t)?;

        // Scoring texts: finished beams keep their final text; with
        // lookahead, unfinished beams are previewed l tokens further and
        // the extension is discarded afterwards.
        let texts: Vec<String> = if config.lookahead > 0 {
            let targets: Vec<usize> = (0..beams.len()).filter(|&i| !beams[i].finished).collect();
            let requests: Vec<GenerationRequest> = targets
                .iter()
                .map(|&i| GenerationRequest {
                    instruction_text: text_by_id[&beams[i].instruction_id].clone(),
                    prefix_tokens: beams[i].tokens.clone(),
                    max_tokens: config.lookahead,
                    temperature: config.temperature,
                    sampling_top_k: config.sampling_top_k,
                    rng_substream: rng::derive_substream(
                        seed_u,
                        labels::LOOKAHEAD,
                        &[mc as u64, i as u64, t as u64],
                    ),
                })
                .collect();
            let extensions = if requests.is_empty() {
                Vec::new()
            } else {
                generate_batch(params.generation, &requests)?
            };
            let mut extended: Vec<String> = beams.iter().map(|b| b.text()).collect();
            for (&i, extension) in targets.iter().zip(&extensions) {
                extended[i].push_str(&extension.new_tokens.concat());
            }
            extended
        } else {
            beams.iter().map(|b| b.text()).collect()
        };

        let rewards = score_batch(params.reward, params.seed, texts)?;
        let cycle_index = t as u32;
        for (beam, &reward) in beams.iter_mut().zip(&rewards) {
            beam.record_reward(cycle_index, reward);
        }

        let beam_instruction_ids: Vec<InstructionId> =
            beams.iter().map(|b| b.instruction_id).collect();
        let finished: Vec<bool> = beams.iter().map(|b| b.finished).collect();
        let (ranked, events) =
            replacement_step(&mut beams, &rewards, params.effective_k, &mut replacement_rng);
        let top_k_instruction_ids =
            dedup_in_order(ranked.top_k(params.effective_k).iter().map(|&i| beam_instruction_ids[i]));

        let record = ReplacementCycleRecord {
            mutation_cycle: mc,
            cycle_index,
            beam_instruction_ids,
            rewards,
            ranking: ranked.ordering,
            top_k_instruction_ids,
            replacement_events: events,
            finished,
        };
        on_cycle(&record);
        cycles.push(record);

        if beams.iter().all(|b| b.finished) {
            break;
        }
    }

    // Beams still running at the budget boundary are capped.
    for beam in &mut beams {
        if !beam.finished {
            beam.mark_finished();
        }
    }

    Ok(EngineOutcome {
        beams,
        instructions,
        cycles,
    })
}

/// Explores `count` beams from the empty state under one instruction,
/// decoded to completion in m-token segments. No scoring, no replacement;
/// pair with `best_of_n` for the Best-of-N strategy.
pub fn sample_n(
    generation: &dyn GenerationBackend,
    instruction: &Instruction,
    count: usize,
    config: &SearchConfig,
) -> Result<Vec<BeamState>, SearchError> {
    if count == 0 {
        return Err(SearchError::InvalidInput("sample_n needs count >= 1".into()));
    }
    let mut beams: Vec<BeamState> = (0..count)
        .map(|i| BeamState::empty(i, instruction.id))
        .collect();
    let text_by_id = HashMap::from([(instruction.id, instruction.text.clone())]);
    for t in 1..=config.max_replacement_cycles() {
        decode_segment(generation, &mut beams, &text_by_id, config, 1, t)?;
        if beams.iter().all(|b| b.finished) {
            break;
        }
    }
    for beam in &mut beams {
        if !beam.finished {
            beam.mark_finished();
        }
    }
    Ok(beams)
}

/// Decodes one m-token segment for every unfinished beam. Segment `t` is
/// 1-based; the final segment shrinks to the remaining token budget.
pub(crate) fn decode_segment(
    generation: &dyn GenerationBackend,
    beams: &mut [BeamState],
    text_by_id: &HashMap<InstructionId, String>,
    config: &SearchConfig,
    mutation_cycle: u32,
    t: usize,
) -> Result<(), SearchError> {
    let m = config.replacement_period;
    let segment_len = m.min(config.max_new_tokens - (t - 1) * m);
    let targets: Vec<usize> = (0..beams.len()).filter(|&i| !beams[i].finished).collect();
    if targets.is_empty() {
        return Ok(());
    }
    let requests: Vec<GenerationRequest> = targets
        .iter()
        .map(|&i| GenerationRequest {
            instruction_text: text_by_id[&beams[i].instruction_id].clone(),
            prefix_tokens: beams[i].tokens.clone(),
            max_tokens: segment_len,
            temperature: config.temperature,
            sampling_top_k: config.sampling_top_k,
            rng_substream: rng::derive_substream(
                config.rng_seed,
                labels::GENERATION,
                &[mutation_cycle as u64, i as u64, t as u64],
            ),
        })
        .collect();
    let results = generate_batch(generation, &requests)?;
    for (&i, result) in targets.iter().zip(results) {
        beams[i].extend_tokens(result.new_tokens);
        if result.finished {
            beams[i].mark_finished();
        }
    }
    Ok(())
}

fn dedup_in_order(ids: impl Iterator<Item = InstructionId>) -> Vec<InstructionId> {
    let mut seen = Vec::new();
    for id in ids {
        if !seen.contains(&id) {
            seen.push(id);
        }
    }
    seen
}
