//! Run traces: the streaming JSONL event log, its in-memory form, and
//! content hashing.
//!
//! A trace file starts with one header line (schema version, resolved
//! config, seed instruction) followed by one JSON object per event. Events
//! are flushed as they happen, so an aborted run still leaves a readable
//! partial trace. Nothing in the file depends on wall-clock time: two runs
//! with the same config, seed, and backends produce byte-identical traces.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::BackendCallCounts;
use crate::config::SearchConfig;
use crate::search::{ReplacementCycleRecord, Strategy};
use crate::types::{BeamState, Instruction, InstructionId};

pub const TRACE_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trace: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported trace schema version {found:?} (expected {expected:?})")]
    Schema { expected: String, found: String },
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: String,
    pub run_id: String,
    pub strategy: Strategy,
    pub config: SearchConfig,
    pub seed_instruction: Instruction,
    /// Human-readable backend identity ("mock:count-a", "http:<url>").
    pub backend: String,
}

impl TraceHeader {
    pub fn new(
        strategy: Strategy,
        config: &SearchConfig,
        seed_instruction: &Instruction,
        backend: &str,
    ) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION.to_string(),
            run_id: run_id(strategy, config, &seed_instruction.text, backend),
            strategy,
            config: config.clone(),
            seed_instruction: seed_instruction.clone(),
            backend: backend.to_string(),
        }
    }
}

/// Deterministic run identity: hash of strategy, config, prompt, backend.
pub fn run_id(strategy: Strategy, config: &SearchConfig, prompt: &str, backend: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(strategy.to_string().as_bytes());
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    hasher.update(prompt.as_bytes());
    hasher.update(backend.as_bytes());
    let digest = hasher.finalize();
    hex(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerRecord {
    pub instruction_id: InstructionId,
    pub best_reward_vs_seed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    MutationCycleStart {
        cycle: u32,
        candidate: Instruction,
        mutated: Vec<Instruction>,
        degraded: bool,
    },
    ReplacementCycle {
        record: ReplacementCycleRecord,
    },
    MutationCycleEnd {
        cycle: u32,
        winners: Vec<WinnerRecord>,
        candidate_reward: Option<f64>,
        admitted: Vec<InstructionId>,
    },
    RunEnd {
        final_answer: BeamState,
        final_reward: f64,
        counters: BackendCallCounts,
    },
}

/// Collects events in memory and, when a sink is attached, streams each
/// one as a JSONL line flushed immediately. Sink failures are latched and
/// surfaced by [`TraceRecorder::finish`].
pub struct TraceRecorder {
    header: TraceHeader,
    events: Vec<TraceEvent>,
    sink: Option<Box<dyn Write + Send>>,
    sink_error: Option<std::io::Error>,
}

impl TraceRecorder {
    pub fn in_memory(header: TraceHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
            sink: None,
            sink_error: None,
        }
    }

    pub fn with_sink(header: TraceHeader, sink: Box<dyn Write + Send>) -> Self {
        let mut recorder = Self {
            header,
            events: Vec::new(),
            sink: Some(sink),
            sink_error: None,
        };
        let line = serde_json::to_string(&recorder.header).expect("header serializes");
        recorder.write_line(line);
        recorder
    }

    fn write_line(&mut self, line: String) {
        if self.sink_error.is_some() {
            return;
        }
        if let Some(sink) = &mut self.sink {
            let result = writeln!(sink, "{line}").and_then(|_| sink.flush());
            if let Err(e) = result {
                self.sink_error = Some(e);
            }
        }
    }

    pub fn record(&mut self, event: TraceEvent) {
        let line = serde_json::to_string(&event).expect("event serializes");
        self.write_line(line);
        self.events.push(event);
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// The trace as recorded so far; usable after an aborted run.
    pub fn build_trace(&self) -> Result<SearchTrace, TraceError> {
        SearchTrace::from_events(self.header.clone(), &self.events)
    }

    /// Closes the recorder, surfacing any latched sink error.
    pub fn finish(mut self) -> Result<SearchTrace, TraceError> {
        if let Some(e) = self.sink_error.take() {
            return Err(TraceError::Io(e));
        }
        self.build_trace()
    }
}

/// One mutation cycle as reconstructed from events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationCycleRecord {
    pub cycle: u32,
    pub candidate: Instruction,
    pub mutated: Vec<Instruction>,
    pub degraded: bool,
    pub cycles: Vec<ReplacementCycleRecord>,
    pub winners: Vec<WinnerRecord>,
    pub candidate_reward: Option<f64>,
    pub admitted: Vec<InstructionId>,
}

/// The full event log of a run: the unit of persistence and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub header: TraceHeader,
    pub mutation_cycles: Vec<MutationCycleRecord>,
    /// Absent on aborted partial traces.
    pub final_answer: Option<BeamState>,
    pub final_reward: Option<f64>,
    pub counters: Option<BackendCallCounts>,
}

impl SearchTrace {
    pub fn from_events(header: TraceHeader, events: &[TraceEvent]) -> Result<Self, TraceError> {
        let mut trace = Self {
            header,
            mutation_cycles: Vec::new(),
            final_answer: None,
            final_reward: None,
            counters: None,
        };
        let mut open: Option<MutationCycleRecord> = None;
        for event in events {
            match event {
                TraceEvent::MutationCycleStart {
                    cycle,
                    candidate,
                    mutated,
                    degraded,
                } => {
                    if let Some(record) = open.take() {
                        trace.mutation_cycles.push(record);
                    }
                    open = Some(MutationCycleRecord {
                        cycle: *cycle,
                        candidate: candidate.clone(),
                        mutated: mutated.clone(),
                        degraded: *degraded,
                        cycles: Vec::new(),
                        winners: Vec::new(),
                        candidate_reward: None,
                        admitted: Vec::new(),
                    });
                }
                TraceEvent::ReplacementCycle { record } => {
                    let current = open.as_mut().ok_or_else(|| {
                        TraceError::Malformed("replacement cycle outside a mutation cycle".into())
                    })?;
                    current.cycles.push(record.clone());
                }
                TraceEvent::MutationCycleEnd {
                    cycle,
                    winners,
                    candidate_reward,
                    admitted,
                } => {
                    let mut current = open.take().ok_or_else(|| {
                        TraceError::Malformed("cycle end without a cycle start".into())
                    })?;
                    if current.cycle != *cycle {
                        return Err(TraceError::Malformed(format!(
                            "cycle end {cycle} does not match open cycle {}",
                            current.cycle
                        )));
                    }
                    current.winners = winners.clone();
                    current.candidate_reward = *candidate_reward;
                    current.admitted = admitted.clone();
                    trace.mutation_cycles.push(current);
                }
                TraceEvent::RunEnd {
                    final_answer,
                    final_reward,
                    counters,
                } => {
                    trace.final_answer = Some(final_answer.clone());
                    trace.final_reward = Some(*final_reward);
                    trace.counters = Some(*counters);
                }
            }
        }
        if let Some(record) = open.take() {
            trace.mutation_cycles.push(record);
        }
        Ok(trace)
    }

    /// Parses a JSONL trace: header line first, then events.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| TraceError::Malformed("empty trace file".into()))??;
        let header: TraceHeader = serde_json::from_str(&header_line)?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(TraceError::Schema {
                expected: TRACE_SCHEMA_VERSION.to_string(),
                found: header.schema_version,
            });
        }
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Self::from_events(header, &events)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    /// The top-k record sequence of one mutation cycle.
    pub fn cycle_top_k(&self, mutation_cycle_index: usize) -> Option<Vec<crate::search::CycleTopK>> {
        self.mutation_cycles
            .get(mutation_cycle_index)
            .map(|mc| mc.cycles.iter().map(|c| c.top_k()).collect())
    }
}

/// Content hash of trace bytes (hex sha256).
pub fn trace_hash_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
