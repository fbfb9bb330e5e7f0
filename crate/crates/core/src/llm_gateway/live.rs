use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CallContext, ChatMessage, CompletionBackend, GatewayError, GenerationRequest, GenerationResult, Usage};

pub const ENDPOINT_ENV: &str = "REPAIR_FORGE_ENDPOINT";
pub const API_KEY_ENV: &str = "REPAIR_FORGE_API_KEY";
pub const MODEL_ENV: &str = "REPAIR_FORGE_MODEL";

const DEFAULT_MODEL: &str = "deepseek-coder-6.7b-instruct";

/// Retries transient failures (connection errors, timeouts, 429, 5xx)
/// with delays `base_delay * 2^i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    n: u32,
    stream: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ResponseUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ResponseUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Client for any `/chat/completions` endpoint speaking the OpenAI wire
/// format (vLLM, llama.cpp server, Ollama, hosted providers).
pub struct OpenAiCompatibleBackend {
    url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(GenerationResult),
    Transient(String),
    Fatal(GatewayError),
}

impl OpenAiCompatibleBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, model: impl Into<String>) -> Result<Self, GatewayError> {
        let base = endpoint.trim_end_matches('/');
        if base.is_empty() {
            return Err(GatewayError::NotConfigured("empty endpoint".into()));
        }
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| GatewayError::NotConfigured(e.to_string()))?;
        Ok(Self {
            url,
            api_key: api_key.filter(|k| !k.is_empty()),
            model: model.into(),
            retry: RetryPolicy::default(),
            client,
        })
    }

    /// Reads `REPAIR_FORGE_ENDPOINT`, `REPAIR_FORGE_API_KEY` and optionally
    /// `REPAIR_FORGE_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| GatewayError::NotConfigured(format!("{ENDPOINT_ENV} is not set")))?;
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| DEFAULT_MODEL.to_owned());
        Self::new(&endpoint, std::env::var(API_KEY_ENV).ok(), model)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Attempt {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = match req.send() {
            Ok(resp) => resp,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Transient(format!("HTTP {status}: {text}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::Provider {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::BadResponse(e.to_string())),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(GatewayError::BadResponse("response has no choices".into()));
        };
        Attempt::Done(GenerationResult {
            text: choice.message.content.unwrap_or_default(),
            usage: parsed.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl CompletionBackend for OpenAiCompatibleBackend {
    fn complete(&self, ctx: CallContext<'_>, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        request.validate()?;
        log::debug!(
            "task {} agent {} prompt:\n{}",
            ctx.task_id,
            ctx.role,
            request.rendered()
        );
        let body = ChatRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
            max_tokens: request.max_tokens,
            stop: &request.stop_sequences,
            n: 1,
            stream: false,
        };
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                let delay = self.retry.delay(attempt - 1);
                log::warn!("task {} agent {}: retrying in {delay:?} after: {last}", ctx.task_id, ctx.role);
                thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(result) => return Ok(result),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Transient(msg) => last = msg,
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.max_retries + 1,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{AgentRole, SamplingParams};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP/1.1 server answering each connection with the next
    /// canned (status, body) pair and recording request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen_srv = Arc::clone(&seen);
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen_srv.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7}
        })
        .to_string()
    }

    fn fast(backend: OpenAiCompatibleBackend) -> OpenAiCompatibleBackend {
        backend.with_retry(RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(5),
        })
    }

    fn request() -> GenerationRequest {
        GenerationRequest::new(
            vec![ChatMessage::system("sys"), ChatMessage::user("fix")],
            SamplingParams::for_role(AgentRole::Programmer),
        )
    }

    fn ctx() -> CallContext<'static> {
        CallContext {
            task_id: "t",
            role: AgentRole::Programmer,
        }
    }

    #[test]
    fn sends_sampling_parameters_and_returns_text_verbatim() {
        let (url, seen) = serve(vec![(200, ok_body("  ```ruby\nputs 1\n```  "))]);
        let backend = fast(OpenAiCompatibleBackend::new(&url, Some("k".into()), "m").unwrap());
        let result = backend.complete(ctx(), &request()).unwrap();
        assert_eq!(result.text, "  ```ruby\nputs 1\n```  ");
        assert_eq!(result.usage, Some(Usage { prompt_tokens: 11, completion_tokens: 7 }));
        let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["temperature"], 0.8);
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["n"], 1);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "fix");
    }

    #[test]
    fn retries_transient_failures() {
        let (url, seen) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("done")),
        ]);
        let backend = fast(OpenAiCompatibleBackend::new(&url, None, "m").unwrap());
        assert_eq!(backend.complete(ctx(), &request()).unwrap().text, "done");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let (url, seen) = serve((0..4).map(|_| (500, "{}".to_owned())).collect());
        let backend = fast(OpenAiCompatibleBackend::new(&url, None, "m").unwrap());
        let err = backend.complete(ctx(), &request()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 4, .. }), "{err}");
        assert_eq!(seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let backend = fast(OpenAiCompatibleBackend::new(&url, None, "m").unwrap());
        let err = backend.complete(ctx(), &request()).unwrap_err();
        assert!(matches!(err, GatewayError::Provider { status: 401, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn endpoint_normalisation() {
        let b = OpenAiCompatibleBackend::new("http://h/v1/", None, "m").unwrap();
        assert_eq!(b.url(), "http://h/v1/chat/completions");
        let b = OpenAiCompatibleBackend::new("http://h/v1/chat/completions", None, "m").unwrap();
        assert_eq!(b.url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(
            (0..3).map(|i| p.delay(i).as_secs()).collect::<Vec<_>>(),
            vec![1, 2, 4]
        );
    }
}
