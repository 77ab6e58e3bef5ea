//! Reward-guided tree search over LLM decoding.
//!
//! Responses are decoded as beams that advance in m-token segments. A
//! reward model scores every beam against the original instruction after
//! each segment; low-reward unfinished beams are overwritten with copies of
//! the top-k (exploitation), while an archive of LLM-rewritten instructions
//! steers fresh beams in new directions across mutation cycles
//! (exploration). Generation, reward, and mutation are pluggable backends:
//! deterministic in-process mocks, or HTTP clients for the completions and
//! scoring wire protocols.
//!
//! The `trace` module persists a full event log per run as JSONL, and
//! `analysis` computes beam-dynamics metrics (Jaccard, rank-biased overlap,
//! winning-instruction probability) over such traces.
//!
//! With the default `parallel` feature, batch fan-out runs on rayon;
//! without it, everything runs sequentially with identical results.

pub mod analysis;
pub mod backends;
pub mod config;
pub mod exec;
pub mod rng;
pub mod search;
pub mod trace;
pub mod types;

pub use config::{ConfigError, SearchConfig};
pub use search::{darwin_run, run_strategy, SearchError, Strategy};
pub use trace::{SearchTrace, TraceError};
pub use types::{Archive, BeamState, Instruction, InstructionId, SeedInstruction};
