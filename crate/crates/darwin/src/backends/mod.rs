//! Pluggable generation, reward, and mutation backends.
//!
//! Deterministic in-process mocks serve tests and offline runs, blocking
//! HTTP clients target real services, and [`server::serve_mock`] exposes
//! the same mocks over the wire protocols for end-to-end tests.

pub mod http;
pub mod mock;
pub mod server;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::types::{IdGen, Instruction, SeedInstruction, Token};

/// The one-shot rewriting prompt, shipped verbatim. `|exprompt|` marks the
/// candidate slot.
pub const MUTATOR_PROMPT_TEMPLATE: &str = include_str!("../../assets/mutator_prompt.txt");
pub const MUTATOR_PROMPT_SLOT: &str = "|exprompt|";

/// Substitutes the candidate into the mutator template.
pub fn render_mutator_prompt(candidate_text: &str) -> String {
    MUTATOR_PROMPT_TEMPLATE.replace(MUTATOR_PROMPT_SLOT, candidate_text)
}

/// Extracts the items of a numbered-list reply ("1. text", "2) text", ...).
/// Lines that do not start with a number are ignored.
pub fn parse_numbered_list(reply: &str) -> Vec<String> {
    reply
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits == 0 {
                return None;
            }
            let rest = &line[digits..];
            let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
            let text = rest.trim();
            (!text.is_empty()).then(|| text.to_string())
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transient transport failure; safe to retry. Carries the index of
    /// the failing request when it happened inside a batch.
    #[error("transport failure: {message}")]
    Transport {
        index: Option<usize>,
        message: String,
    },
    /// The reply violated the wire or batch contract; not retriable.
    #[error("protocol violation: {message}")]
    Protocol {
        index: Option<usize>,
        message: String,
    },
    #[error("mutation failed: {0}")]
    Mutation(String),
}

impl BackendError {
    pub fn transport(message: impl Into<String>) -> Self {
        Self::Transport {
            index: None,
            message: message.into(),
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::Protocol {
            index: None,
            message: message.into(),
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }

    pub fn request_index(&self) -> Option<usize> {
        match self {
            Self::Transport { index, .. } | Self::Protocol { index, .. } => *index,
            Self::Mutation(_) => None,
        }
    }

    fn with_index(self, i: usize) -> Self {
        match self {
            Self::Transport { message, .. } => Self::Transport {
                index: Some(i),
                message,
            },
            Self::Protocol { message, .. } => Self::Protocol {
                index: Some(i),
                message,
            },
            other => other,
        }
    }
}

/// One decoding segment: continue `prefix_tokens` under `instruction_text`
/// by up to `max_tokens` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub instruction_text: String,
    pub prefix_tokens: Vec<Token>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub sampling_top_k: usize,
    pub rng_substream: u64,
}

impl GenerationRequest {
    pub fn prefix_text(&self) -> String {
        self.prefix_tokens.concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub new_tokens: Vec<Token>,
    /// True when the backend emitted an end-of-sentence; the eos marker, if
    /// any, terminates `new_tokens`.
    pub finished: bool,
}

/// A scoring request. Constructed only from the run's seed instruction, so
/// mutated instructions can never reach the reward model.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRequest {
    instruction_text: String,
    response_texts: Vec<String>,
}

impl RewardRequest {
    pub fn for_seed(seed: &SeedInstruction, response_texts: Vec<String>) -> Self {
        Self {
            instruction_text: seed.text().to_string(),
            response_texts,
        }
    }

    pub fn instruction_text(&self) -> &str {
        &self.instruction_text
    }

    pub fn response_texts(&self) -> &[String] {
        &self.response_texts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardResult {
    pub scores: Vec<f64>,
}

pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

pub trait RewardBackend: Send + Sync {
    fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError>;
}

pub trait MutationBackend: Send + Sync {
    /// Produces up to `n` rewrites of `candidate_text`, best effort; the
    /// [`mutate`] wrapper handles padding and empty replies.
    fn mutate_text(&self, candidate_text: &str, n: usize) -> Result<Vec<String>, BackendError>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }
}

impl<B: RewardBackend + ?Sized> RewardBackend for &B {
    fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError> {
        (**self).score(request)
    }
}

/// Decodes a batch of segment requests. Requests may run concurrently;
/// results are merged positionally, never by completion order. Errors carry
/// the failing request index.
pub fn generate_batch(
    backend: &dyn GenerationBackend,
    requests: &[GenerationRequest],
) -> Result<Vec<GenerationResult>, BackendError> {
    if requests.is_empty() {
        return Err(BackendError::protocol("empty generation batch"));
    }
    exec::try_map_ordered(requests, |i, request| {
        let result = backend.generate(request).map_err(|e| e.with_index(i))?;
        if result.new_tokens.len() > request.max_tokens {
            return Err(BackendError::Protocol {
                index: Some(i),
                message: format!(
                    "backend returned {} tokens for a max_tokens={} request",
                    result.new_tokens.len(),
                    request.max_tokens
                ),
            });
        }
        Ok(result)
    })
}

/// Scores `responses` against the run's seed instruction. Scores come back
/// positionally aligned and must be finite; non-finite scores are protocol
/// errors, never clamped.
pub fn score_batch(
    backend: &dyn RewardBackend,
    seed: &SeedInstruction,
    responses: Vec<String>,
) -> Result<Vec<f64>, BackendError> {
    if responses.is_empty() {
        return Err(BackendError::protocol("empty reward batch"));
    }
    let expected = responses.len();
    let request = RewardRequest::for_seed(seed, responses);
    let result = backend.score(&request)?;
    if result.scores.len() != expected {
        return Err(BackendError::protocol(format!(
            "reward backend returned {} scores for {} responses",
            result.scores.len(),
            expected
        )));
    }
    for (i, score) in result.scores.iter().enumerate() {
        if !score.is_finite() {
            return Err(BackendError::Protocol {
                index: Some(i),
                message: format!("non-finite score {score} at index {i}"),
            });
        }
    }
    Ok(result.scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationOutcome {
    pub instructions: Vec<Instruction>,
    /// True when the reply was short and got padded with the candidate text.
    pub degraded: bool,
}

/// Mutates `candidate` into exactly `n` new instructions with the candidate
/// as parent. Replies with fewer than `n` items are padded with the
/// candidate text (degraded); empty replies are errors.
pub fn mutate(
    backend: &dyn MutationBackend,
    candidate: &Instruction,
    n: usize,
    origin_cycle: u32,
    ids: &mut IdGen,
) -> Result<MutationOutcome, BackendError> {
    if n == 0 {
        return Err(BackendError::Mutation("n must be at least 1".into()));
    }
    let mut texts = backend.mutate_text(&candidate.text, n)?;
    texts.retain(|t| !t.is_empty());
    if texts.is_empty() {
        return Err(BackendError::Mutation(format!(
            "no mutations produced for {}",
            candidate.id
        )));
    }
    texts.truncate(n);
    let degraded = texts.len() < n;
    if degraded {
        log::warn!(
            "mutation reply had {} of {} items for {}; padding with candidate text",
            texts.len(),
            n,
            candidate.id
        );
        while texts.len() < n {
            texts.push(candidate.text.clone());
        }
    }
    let instructions = texts
        .into_iter()
        .map(|text| Instruction::mutated(ids.next_id(), text, candidate.id, origin_cycle))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BackendError::Mutation(e.to_string()))?;
    Ok(MutationOutcome {
        instructions,
        degraded,
    })
}

/// Exact backend call counts, recorded into every trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendCallCounts {
    pub generation_calls: u64,
    pub generated_tokens: u64,
    pub reward_batches: u64,
    pub reward_items: u64,
}

/// Shared atomic counters behind [`Instrumented`] wrappers.
#[derive(Debug, Default)]
pub struct BackendCounters {
    generation_calls: AtomicU64,
    generated_tokens: AtomicU64,
    reward_batches: AtomicU64,
    reward_items: AtomicU64,
}

impl BackendCounters {
    pub fn snapshot(&self) -> BackendCallCounts {
        BackendCallCounts {
            generation_calls: self.generation_calls.load(Ordering::Relaxed),
            generated_tokens: self.generated_tokens.load(Ordering::Relaxed),
            reward_batches: self.reward_batches.load(Ordering::Relaxed),
            reward_items: self.reward_items.load(Ordering::Relaxed),
        }
    }
}

/// Counts every successful call of the wrapped backend.
pub struct Instrumented<B> {
    inner: B,
    counters: Arc<BackendCounters>,
}

impl<B> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Self::with_counters(inner, Arc::new(BackendCounters::default()))
    }

    pub fn with_counters(inner: B, counters: Arc<BackendCounters>) -> Self {
        Self { inner, counters }
    }

    pub fn counters(&self) -> Arc<BackendCounters> {
        Arc::clone(&self.counters)
    }

    pub fn snapshot(&self) -> BackendCallCounts {
        self.counters.snapshot()
    }
}

impl<B: GenerationBackend> GenerationBackend for Instrumented<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let result = self.inner.generate(request)?;
        self.counters.generation_calls.fetch_add(1, Ordering::Relaxed);
        self.counters
            .generated_tokens
            .fetch_add(result.new_tokens.len() as u64, Ordering::Relaxed);
        Ok(result)
    }
}

impl<B: RewardBackend> RewardBackend for Instrumented<B> {
    fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError> {
        let result = self.inner.score(request)?;
        self.counters.reward_batches.fetch_add(1, Ordering::Relaxed);
        self.counters
            .reward_items
            .fetch_add(result.scores.len() as u64, Ordering::Relaxed);
        Ok(result)
    }
}

/// The backend triple a run needs, instrumented with one shared counter set.
pub struct RunBackends {
    generation: Box<dyn GenerationBackend>,
    reward: Box<dyn RewardBackend>,
    mutation: Box<dyn MutationBackend>,
    counters: Arc<BackendCounters>,
}

impl RunBackends {
    pub fn new(
        generation: impl GenerationBackend + 'static,
        reward: impl RewardBackend + 'static,
        mutation: impl MutationBackend + 'static,
    ) -> Self {
        let counters = Arc::new(BackendCounters::default());
        Self {
            generation: Box::new(Instrumented::with_counters(
                generation,
                Arc::clone(&counters),
            )),
            reward: Box::new(Instrumented::with_counters(reward, Arc::clone(&counters))),
            mutation: Box::new(mutation),
            counters,
        }
    }

    pub fn generation(&self) -> &dyn GenerationBackend {
        self.generation.as_ref()
    }

    pub fn reward(&self) -> &dyn RewardBackend {
        self.reward.as_ref()
    }

    pub fn mutation(&self) -> &dyn MutationBackend {
        self.mutation.as_ref()
    }

    pub fn call_counts(&self) -> BackendCallCounts {
        self.counters.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockGenerator, MockReward};
    use proptest::prelude::*;

    fn request(instruction: &str, max_tokens: usize, substream: u64) -> GenerationRequest {
        GenerationRequest {
            instruction_text: instruction.to_string(),
            prefix_tokens: Vec::new(),
            max_tokens,
            temperature: 0.7,
            sampling_top_k: 40,
            rng_substream: substream,
        }
    }

    #[test]
    fn rendered_prompt_matches_golden_file() {
        let rendered = render_mutator_prompt("How to make a cake?");
        let golden = include_str!("../../tests/golden/mutator_prompt_cake.txt");
        assert_eq!(rendered, golden);
    }

    #[test]
    fn template_keeps_the_list_order_line() {
        assert!(MUTATOR_PROMPT_TEMPLATE
            .contains("Only give the mutated instruction in a list order."));
        assert_eq!(MUTATOR_PROMPT_TEMPLATE.matches(MUTATOR_PROMPT_SLOT).count(), 1);
    }

    #[test]
    fn numbered_list_parses_five_items() {
        assert_eq!(
            parse_numbered_list("1. A\n2. B\n3. C\n4. D\n5. E"),
            ["A", "B", "C", "D", "E"]
        );
    }

    #[test]
    fn numbered_list_skips_prose_and_blank_items() {
        assert_eq!(
            parse_numbered_list("Sure! Here you go:\n1) first\n2. \n3. third"),
            ["first", "third"]
        );
        assert!(parse_numbered_list("no numbers here").is_empty());
    }

    #[test]
    fn short_reply_pads_with_candidate_and_flags_degraded() {
        struct ThreeItems;
        impl MutationBackend for ThreeItems {
            fn mutate_text(&self, _: &str, _: usize) -> Result<Vec<String>, BackendError> {
                Ok(vec!["A".into(), "B".into(), "C".into()])
            }
        }
        let candidate = Instruction::seed(crate::types::InstructionId(0), "write a poem").unwrap();
        let mut ids = IdGen::new();
        let outcome = mutate(&ThreeItems, &candidate, 5, 1, &mut ids).unwrap();
        assert!(outcome.degraded);
        let texts: Vec<&str> = outcome.instructions.iter().map(|i| i.text.as_str()).collect();
        assert_eq!(texts, ["A", "B", "C", "write a poem", "write a poem"]);
        for (i, instruction) in outcome.instructions.iter().enumerate() {
            assert_eq!(instruction.parent_id, Some(candidate.id));
            assert_eq!(instruction.origin_cycle, 1);
            assert_eq!(instruction.id, crate::types::InstructionId(i as u64 + 1));
        }
    }

    #[test]
    fn empty_reply_is_a_mutation_error() {
        struct Nothing;
        impl MutationBackend for Nothing {
            fn mutate_text(&self, _: &str, _: usize) -> Result<Vec<String>, BackendError> {
                Ok(Vec::new())
            }
        }
        let candidate = Instruction::seed(crate::types::InstructionId(0), "x").unwrap();
        let err = mutate(&Nothing, &candidate, 2, 1, &mut IdGen::new()).unwrap_err();
        assert!(matches!(err, BackendError::Mutation(_)));
    }

    #[test]
    fn generate_batch_checks_token_caps_and_carries_index() {
        struct Overflows;
        impl GenerationBackend for Overflows {
            fn generate(&self, _: &GenerationRequest) -> Result<GenerationResult, BackendError> {
                Ok(GenerationResult {
                    new_tokens: vec!["A".into(), "A".into()],
                    finished: false,
                })
            }
        }
        let requests = vec![request("x", 2, 0), request("x", 1, 1)];
        let err = generate_batch(&Overflows, &requests).unwrap_err();
        assert_eq!(err.request_index(), Some(1));
    }

    #[test]
    fn score_batch_rejects_non_finite_scores() {
        struct NanScore;
        impl RewardBackend for NanScore {
            fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError> {
                Ok(RewardResult {
                    scores: vec![f64::NAN; request.response_texts().len()],
                })
            }
        }
        let seed = SeedInstruction::new("hi").unwrap();
        let err = score_batch(&NanScore, &seed, vec!["a".into()]).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { .. }));
    }

    #[test]
    fn instrumentation_counts_calls_tokens_and_items() {
        let generator = Instrumented::new(MockGenerator::marker_pattern('!', "A", "B"));
        let reward = Instrumented::with_counters(MockReward::count_token("A"), generator.counters());
        let requests: Vec<GenerationRequest> =
            (0..4).map(|i| request("go!", 3, i as u64)).collect();
        generate_batch(&generator, &requests).unwrap();
        let seed = SeedInstruction::new("go!").unwrap();
        score_batch(&reward, &seed, vec!["AAB".into(), "B".into()]).unwrap();
        let counts = generator.snapshot();
        assert_eq!(counts.generation_calls, 4);
        assert_eq!(counts.generated_tokens, 12);
        assert_eq!(counts.reward_batches, 1);
        assert_eq!(counts.reward_items, 2);
    }

    proptest! {
        // Batch results stay positionally aligned for arbitrary batch sizes.
        #[test]
        fn batch_results_align_positionally(lens in proptest::collection::vec(1usize..6, 1..24)) {
            struct EchoLen;
            impl GenerationBackend for EchoLen {
                fn generate(&self, r: &GenerationRequest) -> Result<GenerationResult, BackendError> {
                    Ok(GenerationResult {
                        new_tokens: vec!["x".to_string(); r.max_tokens],
                        finished: false,
                    })
                }
            }
            let requests: Vec<GenerationRequest> =
                lens.iter().map(|&n| request("p", n, n as u64)).collect();
            let results = generate_batch(&EchoLen, &requests).unwrap();
            for (request, result) in requests.iter().zip(&results) {
                prop_assert_eq!(result.new_tokens.len(), request.max_tokens);
            }
        }
    }
}
