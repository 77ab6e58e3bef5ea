//! Deterministic in-process backends.
//!
//! Every mock is a pure function of its request (plus the request's
//! `rng_substream`), so batches are reproducible across threads and
//! processes, and every rule is simple enough to serve as its own oracle.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{
    BackendError, GenerationBackend, GenerationRequest, GenerationResult, MutationBackend,
    RewardBackend, RewardRequest, RewardResult,
};
use crate::rng::derive_substream;
use crate::types::Token;

/// Frozen parameters of the prefix-monotone landscape. Chosen by an offline
/// simulation so that replacement-based exploitation beats Best-of-N by a
/// clear margin (≈ +2 target tokens over 200 paired seeds at n=5, m=10).
pub const PREFIX_MONOTONE_BASE_P: f64 = 0.20;
pub const PREFIX_MONOTONE_GAIN: f64 = 0.03;
pub const PREFIX_MONOTONE_MAX_P: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub enum MockGenerator {
    /// Emits `if_token` when the instruction contains `marker`, else
    /// `else_token`. Never finishes on its own.
    MarkerPattern {
        marker: char,
        if_token: Token,
        else_token: Token,
    },
    /// Per-token coin over a two-token vocabulary whose bias depends on a
    /// hash of the instruction text; draws come from a stream seeded by the
    /// request substream. Never finishes on its own.
    BiasedCoin { heads: Token, tails: Token },
    /// The probability of emitting `target` grows with the number of
    /// `target` tokens already present, so early luck compounds and
    /// exploitation pays off. Never finishes on its own.
    PrefixMonotone {
        target: Token,
        other: Token,
        base_p: f64,
        gain_per_hit: f64,
        max_p: f64,
    },
    /// Emits `token` until the beam holds `finish_len` tokens (plus a
    /// per-instruction jitter), then emits `eos` and finishes.
    EosAfter {
        token: Token,
        eos: Token,
        finish_len: usize,
        jitter: usize,
    },
}

impl MockGenerator {
    pub fn marker_pattern(marker: char, if_token: &str, else_token: &str) -> Self {
        Self::MarkerPattern {
            marker,
            if_token: if_token.to_string(),
            else_token: else_token.to_string(),
        }
    }

    pub fn biased_coin() -> Self {
        Self::BiasedCoin {
            heads: "A".to_string(),
            tails: "B".to_string(),
        }
    }

    pub fn prefix_monotone() -> Self {
        Self::PrefixMonotone {
            target: "A".to_string(),
            other: "B".to_string(),
            base_p: PREFIX_MONOTONE_BASE_P,
            gain_per_hit: PREFIX_MONOTONE_GAIN,
            max_p: PREFIX_MONOTONE_MAX_P,
        }
    }

    pub fn eos_after(token: &str, eos: &str, finish_len: usize, jitter: usize) -> Self {
        Self::EosAfter {
            token: token.to_string(),
            eos: eos.to_string(),
            finish_len,
            jitter,
        }
    }

    /// The deterministic generation rule, shared by the in-process backend
    /// and the mock HTTP server.
    pub fn generate_tokens(
        &self,
        instruction_text: &str,
        prefix_tokens: &[Token],
        max_tokens: usize,
        rng_substream: u64,
    ) -> (Vec<Token>, bool) {
        match self {
            Self::MarkerPattern {
                marker,
                if_token,
                else_token,
            } => {
                let token = if instruction_text.contains(*marker) {
                    if_token
                } else {
                    else_token
                };
                (vec![token.clone(); max_tokens], false)
            }
            Self::BiasedCoin { heads, tails } => {
                let instruction_hash = derive_substream(0, instruction_text, &[]);
                // bias in [0.2, 0.8), fixed per instruction text
                let heads_p = 0.2 + 0.6 * ((instruction_hash % 1000) as f64 / 1000.0);
                let mut rng =
                    ChaCha12Rng::seed_from_u64(rng_substream ^ instruction_hash.rotate_left(17));
                let tokens = (0..max_tokens)
                    .map(|_| {
                        if rng.gen::<f64>() < heads_p {
                            heads.clone()
                        } else {
                            tails.clone()
                        }
                    })
                    .collect();
                (tokens, false)
            }
            Self::PrefixMonotone {
                target,
                other,
                base_p,
                gain_per_hit,
                max_p,
            } => {
                let mut hits = prefix_tokens.iter().filter(|t| *t == target).count();
                let mut rng = ChaCha12Rng::seed_from_u64(rng_substream);
                let tokens = (0..max_tokens)
                    .map(|_| {
                        let p = (base_p + gain_per_hit * hits as f64).min(*max_p);
                        if rng.gen::<f64>() < p {
                            hits += 1;
                            target.clone()
                        } else {
                            other.clone()
                        }
                    })
                    .collect();
                (tokens, false)
            }
            Self::EosAfter {
                token,
                eos,
                finish_len,
                jitter,
            } => {
                let effective = finish_len
                    + (derive_substream(0, instruction_text, &[]) % (*jitter as u64 + 1)) as usize;
                let mut tokens = Vec::new();
                let mut len = prefix_tokens.len();
                for _ in 0..max_tokens {
                    if len >= effective {
                        tokens.push(eos.clone());
                        return (tokens, true);
                    }
                    tokens.push(token.clone());
                    len += 1;
                }
                (tokens, false)
            }
        }
    }
}

impl GenerationBackend for MockGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let (new_tokens, finished) = self.generate_tokens(
            &request.instruction_text,
            &request.prefix_tokens,
            request.max_tokens,
            request.rng_substream,
        );
        Ok(GenerationResult {
            new_tokens,
            finished,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockReward {
    /// Number of non-overlapping occurrences of `needle` in the response.
    CountToken { needle: String },
    /// Sum of weight · count(needle) over the table.
    WeightedSubstring { weights: Vec<(String, f64)> },
    /// Designated preference pair: `aligned` scores above `unaligned`.
    PreferencePair { aligned: String, unaligned: String },
}

impl MockReward {
    pub fn count_token(needle: &str) -> Self {
        assert!(!needle.is_empty(), "count needle must be non-empty");
        Self::CountToken {
            needle: needle.to_string(),
        }
    }

    pub fn weighted_substring(weights: &[(&str, f64)]) -> Self {
        Self::WeightedSubstring {
            weights: weights
                .iter()
                .map(|(s, w)| ((*s).to_string(), *w))
                .collect(),
        }
    }

    pub fn preference_pair(aligned: &str, unaligned: &str) -> Self {
        Self::PreferencePair {
            aligned: aligned.to_string(),
            unaligned: unaligned.to_string(),
        }
    }

    /// The deterministic scoring rule, shared with the mock HTTP server.
    pub fn score_text(&self, _instruction_text: &str, response: &str) -> f64 {
        match self {
            Self::CountToken { needle } => response.matches(needle.as_str()).count() as f64,
            Self::WeightedSubstring { weights } => weights
                .iter()
                .map(|(needle, weight)| response.matches(needle.as_str()).count() as f64 * weight)
                .sum(),
            Self::PreferencePair { aligned, unaligned } => {
                if response == aligned {
                    1.0
                } else if response == unaligned {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl RewardBackend for MockReward {
    fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError> {
        let scores = request
            .response_texts()
            .iter()
            .map(|response| self.score_text(request.instruction_text(), response))
            .collect();
        Ok(RewardResult { scores })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockMutator {
    /// n copies of the candidate text, ids aside.
    Identity,
    /// "text #1", "text #2", ...
    SuffixNumber,
    /// Appends `marker` to the candidate text.
    AppendMarker { marker: String },
}

impl MockMutator {
    pub fn append_marker(marker: &str) -> Self {
        Self::AppendMarker {
            marker: marker.to_string(),
        }
    }
}

impl MutationBackend for MockMutator {
    fn mutate_text(&self, candidate_text: &str, n: usize) -> Result<Vec<String>, BackendError> {
        let texts = match self {
            Self::Identity => vec![candidate_text.to_string(); n],
            Self::SuffixNumber => (1..=n)
                .map(|i| format!("{candidate_text} #{i}"))
                .collect(),
            Self::AppendMarker { marker } => vec![format!("{candidate_text}{marker}"); n],
        };
        Ok(texts)
    }
}

/// A named generator/reward/mutator bundle, selectable from the CLI and
/// servable over HTTP. Mock tokens are single characters so the wire
/// protocol (which transports plain text) can reconstruct them.
#[derive(Debug, Clone, PartialEq)]
pub struct MockFamily {
    pub name: &'static str,
    pub generator: MockGenerator,
    pub reward: MockReward,
    pub mutator: MockMutator,
}

impl MockFamily {
    pub const NAMES: [&'static str; 3] = ["count-a", "biased-coin", "prefix-monotone"];

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "count-a" => Some(Self {
                name: "count-a",
                generator: MockGenerator::marker_pattern('!', "A", "B"),
                reward: MockReward::count_token("A"),
                mutator: MockMutator::append_marker("!"),
            }),
            "biased-coin" => Some(Self {
                name: "biased-coin",
                generator: MockGenerator::biased_coin(),
                reward: MockReward::count_token("A"),
                mutator: MockMutator::SuffixNumber,
            }),
            "prefix-monotone" => Some(Self {
                name: "prefix-monotone",
                generator: MockGenerator::prefix_monotone(),
                reward: MockReward::count_token("A"),
                mutator: MockMutator::Identity,
            }),
            _ => None,
        }
    }
}
