//! In-process mock server speaking the generation and reward wire
//! protocols, backed by a deterministic [`MockFamily`]. Exists so the HTTP
//! clients and the CLI can be exercised end to end without any model.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use tiny_http::{Method, Response, Server};

use super::http::{COMPLETIONS_PATH, HEALTH_PATH, PROMPT_SEPARATOR, SCORE_PATH};
use super::mock::MockFamily;
use super::BackendError;
use crate::types::Token;

/// A running mock server; shuts down when dropped.
pub struct MockServerHandle {
    port: u16,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl MockServerHandle {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the mock server on `port` (0 picks a free one).
pub fn serve_mock(port: u16, family: MockFamily) -> Result<MockServerHandle, BackendError> {
    let server = Server::http(("127.0.0.1", port))
        .map_err(|e| BackendError::transport(format!("cannot bind port {port}: {e}")))?;
    let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or(port);
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let join = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::Relaxed) {
            match server.recv_timeout(Duration::from_millis(25)) {
                Ok(Some(request)) => handle_request(request, &family),
                Ok(None) => {}
                Err(_) => break,
            }
        }
    });
    Ok(MockServerHandle {
        port,
        stop,
        join: Some(join),
    })
}

#[derive(Deserialize)]
struct CompletionBody {
    prompt: String,
    max_tokens: usize,
    #[serde(default)]
    #[allow(dead_code)]
    temperature: f64,
    #[serde(default)]
    #[allow(dead_code)]
    top_k: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct ScoreBody {
    instruction: String,
    responses: Vec<String>,
}

fn handle_request(mut request: tiny_http::Request, family: &MockFamily) {
    let method = request.method().clone();
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        respond(request, 400, r#"{"error":"unreadable body"}"#);
        return;
    }
    match (method, path.as_str()) {
        (Method::Get, HEALTH_PATH) => respond(request, 200, r#"{"status":"ok"}"#),
        (Method::Post, COMPLETIONS_PATH) => match serde_json::from_str::<CompletionBody>(&body) {
            Ok(body) => {
                let reply = completion_reply(family, &body);
                respond(request, 200, &reply.to_string());
            }
            Err(e) => respond(request, 400, &error_json(&e.to_string())),
        },
        (Method::Post, SCORE_PATH) => match serde_json::from_str::<ScoreBody>(&body) {
            Ok(body) => {
                let scores: Vec<f64> = body
                    .responses
                    .iter()
                    .map(|response| family.reward.score_text(&body.instruction, response))
                    .collect();
                respond(request, 200, &serde_json::json!({ "scores": scores }).to_string());
            }
            Err(e) => respond(request, 400, &error_json(&e.to_string())),
        },
        _ => respond(request, 404, &error_json("unknown endpoint")),
    }
}

fn completion_reply(family: &MockFamily, body: &CompletionBody) -> serde_json::Value {
    // A prompt that opens with the mutator template is a mutation request:
    // answer with a numbered list for the candidate on the final
    // "Original instruction:" line.
    let template_head = super::MUTATOR_PROMPT_TEMPLATE
        .lines()
        .next()
        .unwrap_or_default();
    if body.prompt.starts_with(template_head) {
        let candidate = body
            .prompt
            .rsplit_once("Original instruction: ")
            .map(|(_, tail)| tail.trim_end())
            .unwrap_or_default();
        let text: String = (1..=5)
            .map(|i| format!("{i}. {candidate} (variant {i})"))
            .collect::<Vec<_>>()
            .join("\n");
        return serde_json::json!({ "text": text, "finish_reason": "stop" });
    }

    let (instruction, prefix_text) = body
        .prompt
        .split_once(PROMPT_SEPARATOR)
        .unwrap_or((body.prompt.as_str(), ""));
    // mock tokens are single characters by convention
    let prefix_tokens: Vec<Token> = prefix_text.chars().map(String::from).collect();
    let (tokens, finished) =
        family
            .generator
            .generate_tokens(instruction, &prefix_tokens, body.max_tokens, body.seed);
    serde_json::json!({
        "text": tokens.concat(),
        "finish_reason": if finished { "stop" } else { "length" },
    })
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn respond(request: tiny_http::Request, status: u16, body: &str) {
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(
            tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                .expect("static header"),
        );
    let _ = request.respond(response);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(url: &str, body: &str) -> Result<(u16, String), ureq::Error> {
        match ureq::post(url).send_string(body) {
            Ok(reply) => Ok((reply.status(), reply.into_string().unwrap_or_default())),
            Err(ureq::Error::Status(code, reply)) => {
                Ok((code, reply.into_string().unwrap_or_default()))
            }
            Err(e) => Err(e),
        }
    }

    #[test]
    fn scores_health_and_bad_bodies_follow_the_protocol() {
        let handle = serve_mock(0, MockFamily::by_name("count-a").unwrap()).unwrap();
        let base = handle.base_url();

        let health = ureq::get(&format!("{base}{HEALTH_PATH}")).call().unwrap();
        assert_eq!(health.status(), 200);

        let (status, body) = post(
            &format!("{base}{SCORE_PATH}"),
            r#"{"instruction":"hi","responses":["A"]}"#,
        )
        .unwrap();
        assert_eq!(status, 200);
        assert_eq!(body, r#"{"scores":[1.0]}"#);

        let (status, _) = post(&format!("{base}{SCORE_PATH}"), "{not json").unwrap();
        assert_eq!(status, 400);
    }

    #[test]
    fn completions_split_instruction_from_prefix() {
        let handle = serve_mock(0, MockFamily::by_name("count-a").unwrap()).unwrap();
        let (status, body) = post(
            &format!("{}{COMPLETIONS_PATH}", handle.base_url()),
            r#"{"prompt":"go!\n\nBB","max_tokens":3,"temperature":0.7,"top_k":40,"seed":1}"#,
        )
        .unwrap();
        assert_eq!(status, 200);
        let value: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(value["text"], "AAA");
        assert_eq!(value["finish_reason"], "length");
    }

    #[test]
    fn mutator_prompts_get_numbered_list_replies() {
        let handle = serve_mock(0, MockFamily::by_name("count-a").unwrap()).unwrap();
        let prompt = crate::backends::render_mutator_prompt("tell me a joke");
        let body = serde_json::json!({
            "prompt": prompt, "max_tokens": 512, "temperature": 0.7, "top_k": 40, "seed": 3
        });
        let (status, reply) = post(
            &format!("{}{COMPLETIONS_PATH}", handle.base_url()),
            &body.to_string(),
        )
        .unwrap();
        assert_eq!(status, 200);
        let value: serde_json::Value = serde_json::from_str(&reply).unwrap();
        let items = crate::backends::parse_numbered_list(value["text"].as_str().unwrap());
        assert_eq!(items.len(), 5);
        assert!(items[0].contains("tell me a joke"));
        assert_eq!(value["finish_reason"], "stop");
    }

    #[test]
    fn busy_port_is_reported() {
        let first = serve_mock(0, MockFamily::by_name("count-a").unwrap()).unwrap();
        let second = serve_mock(first.port(), MockFamily::by_name("count-a").unwrap());
        assert!(matches!(second, Err(BackendError::Transport { .. })));
    }
}
