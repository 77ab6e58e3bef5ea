//! Search algorithms: sampling, ranking, reward-guided beam replacement,
//! archive maintenance, and the full mutation-cycle orchestrator.

mod engine;
mod orchestrator;

pub use engine::{run_replacement_search, sample_n, EngineOutcome, ReplacementCycleRecord};
pub use orchestrator::{darwin_run, darwin_run_with, run_strategy, RunOutcome, Strategy};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{score_batch, BackendError, RewardBackend};
use crate::types::{Archive, BeamState, Instruction, InstructionId, SeedInstruction};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Beams ordered by reward, highest first; ties by ascending beam index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedBeams {
    /// Beam indices, best first.
    pub ordering: Vec<usize>,
    /// Rewards aligned with `ordering` (non-increasing).
    pub rewards: Vec<f64>,
}

impl RankedBeams {
    pub fn top_k(&self, k: usize) -> &[usize] {
        &self.ordering[..k.min(self.ordering.len())]
    }
}

/// Ranks beams by reward descending with the fixed tie rule. Rewards must
/// be finite (guaranteed by `score_batch`).
pub fn rank_beams(rewards: &[f64]) -> RankedBeams {
    let mut ordering: Vec<usize> = (0..rewards.len()).collect();
    ordering.sort_by(|&a, &b| {
        rewards[b]
            .partial_cmp(&rewards[a])
            .expect("rewards are finite")
            .then(a.cmp(&b))
    });
    let sorted = ordering.iter().map(|&i| rewards[i]).collect();
    RankedBeams {
        ordering,
        rewards: sorted,
    }
}

/// The guiding instructions of the top-k beams at one replacement cycle,
/// ranked, first occurrence kept on duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTopK {
    pub cycle_index: u32,
    pub instruction_ids: Vec<InstructionId>,
}

/// Scores all beams once and returns the argmax beam (ties by lowest beam
/// index) together with the rewards in input order.
pub fn best_of_n(
    reward: &dyn RewardBackend,
    seed: &SeedInstruction,
    beams: &[BeamState],
) -> Result<(BeamState, Vec<f64>), SearchError> {
    if beams.is_empty() {
        return Err(SearchError::InvalidInput(
            "best_of_n over an empty beam set".into(),
        ));
    }
    let texts = beams.iter().map(|b| b.text()).collect();
    let rewards = score_batch(reward, seed, texts)?;
    let ranked = rank_beams(&rewards);
    Ok((beams[ranked.ordering[0]].clone(), rewards))
}

/// One replacement: `target` was overwritten with a copy of `source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementEvent {
    pub target: usize,
    pub source: usize,
}

/// Ranks all beams (finished included), then overwrites every beam that is
/// neither top-k nor finished with a deep copy of a source drawn uniformly
/// from the top-k. Finished beams may serve as sources but are never
/// targets.
pub fn replacement_step(
    beams: &mut [BeamState],
    rewards: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> (RankedBeams, Vec<ReplacementEvent>) {
    assert_eq!(beams.len(), rewards.len(), "one reward per beam");
    assert!(k >= 1 && k <= beams.len(), "need 1 <= k <= beam count");
    let ranked = rank_beams(rewards);
    let top_k = ranked.top_k(k).to_vec();
    let mut is_top_k = vec![false; beams.len()];
    for &i in &top_k {
        is_top_k[i] = true;
    }
    let mut events = Vec::new();
    for target in 0..beams.len() {
        if is_top_k[target] || beams[target].finished {
            continue;
        }
        let source = top_k[rng.gen_range(0..k)];
        let source_state = beams[source].clone();
        beams[target].overwrite_from(&source_state);
        events.push(ReplacementEvent { target, source });
    }
    (ranked, events)
}

/// Counts how often each instruction appears across the cycles' top-k sets
/// and returns the `k` most frequent; ties break by earliest first
/// appearance, then ascending id.
pub fn top_k_instructions(records: &[CycleTopK], k: usize) -> Vec<InstructionId> {
    let mut stats: HashMap<InstructionId, (usize, u32)> = HashMap::new();
    for record in records {
        for &id in &record.instruction_ids {
            let entry = stats.entry(id).or_insert((0, record.cycle_index));
            entry.0 += 1;
        }
    }
    let mut ranked: Vec<(InstructionId, usize, u32)> = stats
        .into_iter()
        .map(|(id, (count, first))| (id, count, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(id, _, _)| id).collect()
}

/// Uniform draw over the archive entries.
pub fn archive_sample<'a>(archive: &'a Archive, rng: &mut impl Rng) -> &'a Instruction {
    let index = rng.gen_range(0..archive.entries().len());
    &archive.entries()[index].instruction
}

/// Admits every winner whose reward strictly beats the candidate's, capped
/// at the `p_archive` highest. Admitted instructions are added; the
/// candidate is retained unless `replace_candidate` is set (the seed is
/// never removed). Returns the admitted ids.
pub fn archive_update(
    archive: &mut Archive,
    candidate: &Instruction,
    winners: &[(Instruction, f64)],
    candidate_reward: f64,
    p_archive: usize,
    replace_candidate: bool,
) -> Vec<InstructionId> {
    let mut beating: Vec<&(Instruction, f64)> = winners
        .iter()
        .filter(|(_, reward)| *reward > candidate_reward)
        .collect();
    beating.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("rewards are finite"));
    beating.truncate(p_archive);
    let mut admitted = Vec::new();
    for (instruction, reward) in beating {
        if archive.contains(instruction.id) {
            continue;
        }
        archive.admit(instruction.clone(), candidate.id, *reward);
        admitted.push(instruction.id);
    }
    if replace_candidate && !admitted.is_empty() {
        archive.remove(candidate.id);
    }
    admitted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::MockReward;
    use crate::rng::seeded_rng;
    use crate::types::{IdGen, SeedInstruction};

    fn beam(index: usize, tokens: &str, finished: bool) -> BeamState {
        let mut beam = BeamState::empty(index, InstructionId(index as u64 + 1));
        beam.extend_tokens(tokens.chars().map(String::from));
        if finished {
            beam.mark_finished();
        }
        beam
    }

    fn mutant(ids: &mut IdGen, text: &str) -> Instruction {
        Instruction::mutated(ids.next_id(), text, InstructionId(0), 1).unwrap()
    }

    #[test]
    fn ranking_breaks_ties_by_ascending_index() {
        let ranked = rank_beams(&[0.2, 0.9, 0.9, 0.1]);
        assert_eq!(ranked.ordering, [1, 2, 0, 3]);
        assert_eq!(ranked.rewards, [0.9, 0.9, 0.2, 0.1]);
    }

    #[test]
    fn best_of_n_tie_goes_to_lowest_index() {
        struct Fixed(Vec<f64>);
        impl RewardBackend for Fixed {
            fn score(
                &self,
                _: &crate::backends::RewardRequest,
            ) -> Result<crate::backends::RewardResult, BackendError> {
                Ok(crate::backends::RewardResult {
                    scores: self.0.clone(),
                })
            }
        }
        let beams: Vec<BeamState> = (0..4).map(|i| beam(i, "x", false)).collect();
        let seed = SeedInstruction::new("s").unwrap();
        let (winner, rewards) =
            best_of_n(&Fixed(vec![0.2, 0.9, 0.9, 0.1]), &seed, &beams).unwrap();
        assert_eq!(winner.beam_index, 1);
        assert_eq!(rewards, [0.2, 0.9, 0.9, 0.1]);

        let single = vec![beam(0, "y", true)];
        let (winner, _) = best_of_n(&Fixed(vec![5.0]), &seed, &single).unwrap();
        assert_eq!(winner.beam_index, 0);
    }

    #[test]
    fn best_of_n_matches_exhaustive_enumeration() {
        // vocab {A,B}, length 3: all 8 completions, count-A reward
        let reward = MockReward::count_token("A");
        let seed = SeedInstruction::new("s").unwrap();
        let beams: Vec<BeamState> = (0..8u32)
            .map(|bits| {
                let text: String = (0..3)
                    .map(|bit| if bits & (1 << bit) == 0 { 'A' } else { 'B' })
                    .collect();
                beam(bits as usize, &text, true)
            })
            .collect();
        let (winner, rewards) = best_of_n(&reward, &seed, &beams).unwrap();
        assert_eq!(winner.text(), "AAA");
        let brute_best = rewards
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(brute_best, 3.0);
    }

    #[test]
    fn replacement_with_k_equal_to_beam_count_is_identity() {
        let mut beams: Vec<BeamState> = (0..3).map(|i| beam(i, "ab", false)).collect();
        let before = beams.clone();
        let mut rng = seeded_rng(1, "test");
        let (_, events) = replacement_step(&mut beams, &[1.0, 2.0, 3.0], 3, &mut rng);
        assert!(events.is_empty());
        assert_eq!(beams, before);
    }

    #[test]
    fn replacement_with_k_one_forces_the_single_source() {
        let mut beams: Vec<BeamState> = vec![
            beam(0, "AA", false),
            beam(1, "BB", false),
            beam(2, "CC", false),
        ];
        let mut rng = seeded_rng(2, "test");
        let (_, events) = replacement_step(&mut beams, &[5.0, 1.0, 0.5], 1, &mut rng);
        assert_eq!(
            events,
            [
                ReplacementEvent { target: 1, source: 0 },
                ReplacementEvent { target: 2, source: 0 }
            ]
        );
        assert_eq!(beams[1].text(), "AA");
        assert_eq!(beams[2].text(), "AA");
        assert_eq!(beams[1].instruction_id, beams[0].instruction_id);
        assert_eq!(beams[1].copy_of, Some(0));
    }

    #[test]
    fn replacement_spares_finished_beams_and_draws_from_top_k() {
        // n=4, k=2, beam 3 finished with the lowest reward: only beam 2 is
        // replaced, with a seeded source draw from {0, 1}. Replaying the
        // same seeded stream tells which of the two outcomes must happen.
        let rewards = [3.0, 2.0, 1.0, 0.1];
        let expected_source = {
            let mut rng = seeded_rng(7, "replacement");
            [0usize, 1][rng.gen_range(0..2usize)]
        };
        let mut beams = vec![
            beam(0, "AA", false),
            beam(1, "AB", false),
            beam(2, "BB", false),
            beam(3, "B", true),
        ];
        let mut rng = seeded_rng(7, "replacement");
        let (_, events) = replacement_step(&mut beams, &rewards, 2, &mut rng);
        assert_eq!(
            events,
            [ReplacementEvent {
                target: 2,
                source: expected_source
            }]
        );
        assert_eq!(beams[3].text(), "B");
        assert!(beams[3].finished);
        assert_eq!(beams[2].text(), beams[expected_source].text());
    }

    #[test]
    fn finished_beams_can_serve_as_copy_sources() {
        let mut beams = vec![beam(0, "AAA", true), beam(1, "B", false)];
        let mut rng = seeded_rng(3, "test");
        let (_, events) = replacement_step(&mut beams, &[3.0, 0.0], 1, &mut rng);
        assert_eq!(events, [ReplacementEvent { target: 1, source: 0 }]);
        assert!(beams[1].finished, "copy of a finished beam is finished");
        assert_eq!(beams[1].text(), "AAA");
    }

    #[test]
    fn top_k_instructions_counts_and_breaks_ties() {
        let a = InstructionId(1);
        let b = InstructionId(2);
        let c = InstructionId(3);
        let records = vec![
            CycleTopK { cycle_index: 1, instruction_ids: vec![a, b] },
            CycleTopK { cycle_index: 2, instruction_ids: vec![a, c] },
            CycleTopK { cycle_index: 3, instruction_ids: vec![a, b] },
        ];
        assert_eq!(top_k_instructions(&records, 1), [a]);
        assert_eq!(top_k_instructions(&records, 3), [a, b, c]);

        let unanimous = vec![
            CycleTopK { cycle_index: 1, instruction_ids: vec![a] },
            CycleTopK { cycle_index: 2, instruction_ids: vec![a] },
        ];
        assert_eq!(top_k_instructions(&unanimous, 1), [a]);

        // A and B both appear twice; A first appears at cycle 1
        let tied = vec![
            CycleTopK { cycle_index: 1, instruction_ids: vec![a] },
            CycleTopK { cycle_index: 2, instruction_ids: vec![a, b] },
            CycleTopK { cycle_index: 3, instruction_ids: vec![b] },
        ];
        assert_eq!(top_k_instructions(&tied, 1), [a]);
    }

    #[test]
    fn archive_sample_is_uniform_and_replayable() {
        let seed = SeedInstruction::new("s").unwrap();
        let mut archive = Archive::new(&seed);
        assert_eq!(
            archive_sample(&archive, &mut seeded_rng(1, "archive-sample")).id,
            seed.id()
        );

        let mut ids = IdGen::new();
        for text in ["a", "b", "c"] {
            archive.admit(mutant(&mut ids, text), seed.id(), 1.0);
        }
        // replayable: the same stream picks the same entry
        let first = archive_sample(&archive, &mut seeded_rng(9, "archive-sample")).id;
        let second = archive_sample(&archive, &mut seeded_rng(9, "archive-sample")).id;
        assert_eq!(first, second);

        // 10k draws over 4 entries: every frequency within 5 sigma of 2500
        let mut rng = seeded_rng(4, "archive-sample");
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let id = archive_sample(&archive, &mut rng).id;
            counts[id.0 as usize] += 1;
        }
        let sigma = (10_000.0_f64 * 0.25 * 0.75).sqrt();
        for &count in &counts {
            assert!(
                (count as f64 - 2500.0).abs() < 5.0 * sigma,
                "count {count} outside 5 sigma"
            );
        }
    }

    #[test]
    fn archive_update_admits_beating_winners_up_to_the_cap() {
        let seed = SeedInstruction::new("s").unwrap();
        let mut ids = IdGen::new();
        let candidate = seed.instruction().clone();

        let mut archive = Archive::new(&seed);
        let winners: Vec<(Instruction, f64)> = [3.0, 2.5, 1.5]
            .iter()
            .enumerate()
            .map(|(i, &r)| (mutant(&mut ids, &format!("w{i}")), r))
            .collect();
        let admitted = archive_update(&mut archive, &candidate, &winners, 2.0, 3, false);
        assert_eq!(admitted, [winners[0].0.id, winners[1].0.id]);
        assert_eq!(archive.len(), 3);

        // nobody beats the candidate: unchanged
        let mut archive = Archive::new(&seed);
        let admitted = archive_update(&mut archive, &candidate, &winners, 10.0, 3, false);
        assert!(admitted.is_empty());
        assert_eq!(archive.len(), 1);

        // four beat it, cap at the 3 highest
        let mut archive = Archive::new(&seed);
        let winners: Vec<(Instruction, f64)> = [4.0, 3.0, 5.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| (mutant(&mut ids, &format!("v{i}")), r))
            .collect();
        let admitted = archive_update(&mut archive, &candidate, &winners, 1.0, 3, false);
        assert_eq!(
            admitted,
            [winners[2].0.id, winners[0].0.id, winners[1].0.id]
        );
        assert_eq!(archive.len(), 4);
    }

    #[test]
    fn archive_replace_candidate_spares_the_seed() {
        let seed = SeedInstruction::new("s").unwrap();
        let mut ids = IdGen::new();
        let mut archive = Archive::new(&seed);
        let winner = (mutant(&mut ids, "w"), 5.0);
        let admitted = archive_update(
            &mut archive,
            &seed.instruction().clone(),
            std::slice::from_ref(&winner),
            f64::NEG_INFINITY,
            3,
            true,
        );
        assert_eq!(admitted.len(), 1);
        assert!(archive.contains(seed.id()), "seed survives replacement");

        // a non-seed candidate does get dropped
        let candidate = archive.entry(winner.0.id).unwrap().instruction.clone();
        let next = (mutant(&mut ids, "x"), 9.0);
        archive_update(
            &mut archive,
            &candidate,
            std::slice::from_ref(&next),
            5.0,
            3,
            true,
        );
        assert!(!archive.contains(candidate.id));
        assert!(archive.contains(next.0.id));
    }
}
