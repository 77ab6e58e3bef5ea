//! Core domain types: instructions, beams, and the instruction archive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unit of generated output. Backends choose the granularity: single
/// characters for the in-process mocks, whole text segments for HTTP
/// backends. The engine never tokenizes text itself.
pub type Token = String;

/// Opaque instruction identifier, unique within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstructionId(pub u64);

impl std::fmt::Display for InstructionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "I{}", self.0)
    }
}

/// Allocates run-unique instruction ids. Id 0 is reserved for the seed, so
/// a fresh generator starts at 1.
#[derive(Debug, Clone)]
pub struct IdGen {
    next: u64,
}

impl Default for IdGen {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> InstructionId {
        let id = InstructionId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("instruction text must be non-empty")]
    EmptyInstruction,
    #[error("parent_id must be present exactly when origin_cycle > 0")]
    LineageMismatch,
}

/// A prompt with identity and mutation lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: InstructionId,
    pub text: String,
    pub parent_id: Option<InstructionId>,
    pub origin_cycle: u32,
}

impl Instruction {
    pub fn new(
        id: InstructionId,
        text: impl Into<String>,
        parent_id: Option<InstructionId>,
        origin_cycle: u32,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.is_empty() {
            return Err(DomainError::EmptyInstruction);
        }
        if parent_id.is_none() != (origin_cycle == 0) {
            return Err(DomainError::LineageMismatch);
        }
        Ok(Self {
            id,
            text,
            parent_id,
            origin_cycle,
        })
    }

    /// A cycle-0 instruction with no parent.
    pub fn seed(id: InstructionId, text: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(id, text, None, 0)
    }

    /// An instruction produced by mutating `parent` during `origin_cycle`.
    pub fn mutated(
        id: InstructionId,
        text: impl Into<String>,
        parent: InstructionId,
        origin_cycle: u32,
    ) -> Result<Self, DomainError> {
        Self::new(id, text, Some(parent), origin_cycle)
    }
}

/// The original user prompt. This is the only instruction the reward model
/// ever sees; the newtype keeps mutated instructions out of reward requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedInstruction(Instruction);

impl SeedInstruction {
    pub const ID: InstructionId = InstructionId(0);

    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        Ok(Self(Instruction::seed(Self::ID, text)?))
    }

    pub fn instruction(&self) -> &Instruction {
        &self.0
    }

    pub fn id(&self) -> InstructionId {
        self.0.id
    }

    pub fn text(&self) -> &str {
        &self.0.text
    }
}

/// One reward observation for a beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub cycle: u32,
    pub reward: f64,
}

/// A partially decoded response bound to a guiding instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub beam_index: usize,
    pub instruction_id: InstructionId,
    pub tokens: Vec<Token>,
    pub finished: bool,
    pub reward_history: Vec<RewardPoint>,
    /// Beam index of the most recent replacement source, if any.
    pub copy_of: Option<usize>,
}

impl BeamState {
    pub fn empty(beam_index: usize, instruction_id: InstructionId) -> Self {
        Self {
            beam_index,
            instruction_id,
            tokens: Vec::new(),
            finished: false,
            reward_history: Vec::new(),
            copy_of: None,
        }
    }

    /// Concatenated text of all tokens.
    pub fn text(&self) -> String {
        self.tokens.concat()
    }

    /// Appends a decoded segment. Finished beams never grow.
    pub fn extend_tokens(&mut self, new_tokens: impl IntoIterator<Item = Token>) {
        assert!(!self.finished, "extend_tokens on a finished beam");
        self.tokens.extend(new_tokens);
    }

    pub fn mark_finished(&mut self) {
        self.finished = true;
    }

    /// Records the reward observed at `cycle`; cycles must be strictly increasing.
    pub fn record_reward(&mut self, cycle: u32, reward: f64) {
        if let Some(last) = self.reward_history.last() {
            assert!(
                cycle > last.cycle,
                "reward history cycles must be strictly increasing"
            );
        }
        self.reward_history.push(RewardPoint { cycle, reward });
    }

    pub fn last_reward(&self) -> Option<f64> {
        self.reward_history.last().map(|p| p.reward)
    }

    /// Overwrites this beam with a deep copy of `source`, keeping our own
    /// index and recording where the copy came from.
    pub fn overwrite_from(&mut self, source: &BeamState) {
        self.instruction_id = source.instruction_id;
        self.tokens = source.tokens.clone();
        self.finished = source.finished;
        self.reward_history = source.reward_history.clone();
        self.copy_of = Some(source.beam_index);
    }
}

/// An archived instruction together with the reward that admitted it.
/// The seed enters unevaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub instruction: Instruction,
    pub reward_vs_seed: Option<f64>,
}

/// Admission record: which instruction entered, whose spot it contested,
/// and the reward that won it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub instruction_id: InstructionId,
    pub beat_candidate_id: InstructionId,
    pub reward_vs_seed: f64,
}

/// The evolving instruction set, seeded with the original prompt. Entries
/// keep insertion order so uniform sampling is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    entries: Vec<ArchiveEntry>,
    seed_id: InstructionId,
    admission_log: Vec<AdmissionRecord>,
}

impl Archive {
    pub fn new(seed: &SeedInstruction) -> Self {
        Self {
            entries: vec![ArchiveEntry {
                instruction: seed.instruction().clone(),
                reward_vs_seed: None,
            }],
            seed_id: seed.id(),
            admission_log: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the seed is always present
    }

    pub fn seed_id(&self) -> InstructionId {
        self.seed_id
    }

    pub fn admission_log(&self) -> &[AdmissionRecord] {
        &self.admission_log
    }

    pub fn contains(&self, id: InstructionId) -> bool {
        self.entries.iter().any(|e| e.instruction.id == id)
    }

    pub fn entry(&self, id: InstructionId) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.instruction.id == id)
    }

    pub(crate) fn admit(
        &mut self,
        instruction: Instruction,
        beat_candidate_id: InstructionId,
        reward_vs_seed: f64,
    ) {
        self.admission_log.push(AdmissionRecord {
            instruction_id: instruction.id,
            beat_candidate_id,
            reward_vs_seed,
        });
        self.entries.push(ArchiveEntry {
            instruction,
            reward_vs_seed: Some(reward_vs_seed),
        });
    }

    /// Removes an entry; the seed is never removed.
    pub(crate) fn remove(&mut self, id: InstructionId) {
        if id == self.seed_id {
            return;
        }
        self.entries.retain(|e| e.instruction.id != id);
    }
}
