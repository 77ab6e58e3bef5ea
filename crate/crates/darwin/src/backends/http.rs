//! Blocking HTTP clients for the generation and reward wire protocols.
//!
//! Generation targets a completions-style endpoint. Chat APIs resist
//! mid-response continuation, so the client joins the instruction and the
//! partial response into one prompt and asks the server to extend it; that
//! is what makes m-token segment decoding possible over the wire.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Deserialize;

use super::{
    parse_numbered_list, render_mutator_prompt, BackendError, GenerationBackend,
    GenerationRequest, GenerationResult, MutationBackend, RewardBackend, RewardRequest,
    RewardResult,
};
use crate::rng::derive_substream;

pub const COMPLETIONS_PATH: &str = "/v1/completions";
pub const SCORE_PATH: &str = "/v1/score";
pub const HEALTH_PATH: &str = "/health";

/// Separates the instruction from the partial response in a completion
/// prompt. Single-line instructions survive the round trip exactly.
pub const PROMPT_SEPARATOR: &str = "\n\n";

pub const GENERATION_URL_ENV: &str = "GENERATION_URL";
pub const REWARD_URL_ENV: &str = "REWARD_URL";
pub const API_KEY_ENV: &str = "API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_retries: 2,
            timeout: Duration::from_secs(120),
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new()
            .timeout(self.timeout)
            .build()
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

fn post_json<R: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    config: &HttpBackendConfig,
    path: &str,
    body: &serde_json::Value,
) -> Result<R, BackendError> {
    let url = config.endpoint(path);
    let mut last_transport = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(50 << attempt));
        }
        let mut request = agent.post(&url).set("content-type", "application/json");
        if let Some(key) = &config.api_key {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        match request.send_string(&body.to_string()) {
            Ok(response) => {
                let text = response.into_string().map_err(|e| {
                    BackendError::transport(format!("reading reply from {url}: {e}"))
                })?;
                return serde_json::from_str(&text).map_err(|e| {
                    BackendError::protocol(format!("malformed reply from {url}: {e}"))
                });
            }
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    last_transport = format!("{url} returned {code}: {detail}");
                    continue;
                }
                return Err(BackendError::protocol(format!(
                    "{url} returned {code}: {detail}"
                )));
            }
            Err(ureq::Error::Transport(e)) => {
                last_transport = format!("{url}: {e}");
                continue;
            }
        }
    }
    Err(BackendError::transport(format!(
        "giving up after {} attempts: {last_transport}",
        config.max_retries + 1
    )))
}

/// Pings a backend's health endpoint.
pub fn health_check(base_url: &str) -> Result<(), BackendError> {
    let config = HttpBackendConfig {
        timeout: Duration::from_secs(5),
        max_retries: 0,
        ..HttpBackendConfig::new(base_url)
    };
    config
        .agent()
        .get(&config.endpoint(HEALTH_PATH))
        .call()
        .map_err(|e| BackendError::transport(format!("health check failed: {e}")))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CompletionReply {
    text: String,
    finish_reason: String,
}

#[derive(Debug, Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

/// Client for `POST /v1/completions`. Reports each reply as one
/// text-segment token; budget accounting stays with the engine's segment
/// counter.
pub struct HttpGenerationBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpGenerationBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = config.agent();
        Self { config, agent }
    }

    fn complete(&self, prompt: String, max_tokens: usize, temperature: f64, top_k: usize, seed: u64)
        -> Result<CompletionReply, BackendError>
    {
        let body = serde_json::json!({
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
            "top_k": top_k,
            "seed": seed,
        });
        post_json(&self.agent, &self.config, COMPLETIONS_PATH, &body)
    }
}

impl GenerationBackend for HttpGenerationBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let prompt = format!(
            "{}{}{}",
            request.instruction_text,
            PROMPT_SEPARATOR,
            request.prefix_text()
        );
        let reply = self.complete(
            prompt,
            request.max_tokens,
            request.temperature,
            request.sampling_top_k,
            request.rng_substream,
        )?;
        let finished = match reply.finish_reason.as_str() {
            "stop" => true,
            "length" => false,
            other => {
                return Err(BackendError::protocol(format!(
                    "unknown finish_reason {other:?}"
                )))
            }
        };
        let new_tokens = if reply.text.is_empty() {
            Vec::new()
        } else {
            vec![reply.text]
        };
        Ok(GenerationResult {
            new_tokens,
            finished,
        })
    }
}

/// Client for `POST /v1/score`.
pub struct HttpRewardBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpRewardBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = config.agent();
        Self { config, agent }
    }
}

impl RewardBackend for HttpRewardBackend {
    fn score(&self, request: &RewardRequest) -> Result<RewardResult, BackendError> {
        let body = serde_json::json!({
            "instruction": request.instruction_text(),
            "responses": request.response_texts(),
        });
        let reply: ScoreReply = post_json(&self.agent, &self.config, SCORE_PATH, &body)?;
        if reply.scores.len() != request.response_texts().len() {
            return Err(BackendError::protocol(format!(
                "score reply had {} entries for {} responses",
                reply.scores.len(),
                request.response_texts().len()
            )));
        }
        if let Some(bad) = reply.scores.iter().find(|s| !s.is_finite()) {
            return Err(BackendError::protocol(format!(
                "remote service returned non-finite score {bad}"
            )));
        }
        Ok(RewardResult {
            scores: reply.scores,
        })
    }
}

/// Mutator backed by the same completions endpoint as generation: renders
/// the one-shot template and parses the numbered-list reply.
pub struct HttpMutationBackend {
    inner: HttpGenerationBackend,
    mutation_seed: u64,
    calls: AtomicU64,
    max_tokens: usize,
    temperature: f64,
    sampling_top_k: usize,
}

impl HttpMutationBackend {
    pub fn new(config: HttpBackendConfig, mutation_seed: u64) -> Self {
        Self {
            inner: HttpGenerationBackend::new(config),
            mutation_seed,
            calls: AtomicU64::new(0),
            max_tokens: 512,
            temperature: 0.7,
            sampling_top_k: 40,
        }
    }
}

impl MutationBackend for HttpMutationBackend {
    fn mutate_text(&self, candidate_text: &str, _n: usize) -> Result<Vec<String>, BackendError> {
        let call_index = self.calls.fetch_add(1, Ordering::Relaxed);
        let seed = derive_substream(self.mutation_seed, candidate_text, &[call_index]);
        let prompt = render_mutator_prompt(candidate_text);
        let reply = self.inner.complete(
            prompt,
            self.max_tokens,
            self.temperature,
            self.sampling_top_k,
            seed,
        )?;
        Ok(parse_numbered_list(&reply.text))
    }
}
