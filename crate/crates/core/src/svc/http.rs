//! HTTP transport for the service routes.
//!
//! Requests are JSON POSTs against chat-completions-style endpoints:
//! `/v1/chat/completions` returning `{choices: [{message: {content}}]}`, and
//! the single-purpose routes `/v1/nli`, `/v1/embeddings`, `/v1/translate`.
//! Timeouts, connection failures, 429 and 5xx are transient (retryable);
//! other 4xx are permanent.

use std::time::Duration;

use serde::Deserialize;

use super::{NliScores, RawRequest, RawService, ServiceEndpoint, ServiceResponse, SvcError};

pub struct HttpService {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpService {
    pub fn new(endpoint: &ServiceEndpoint) -> Result<Self, SvcError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_s))
            .build()
            .map_err(|e| SvcError::Protocol(format!("http client build failed: {e}")))?;
        Ok(HttpService {
            base_url: endpoint.base_url.trim_end_matches('/').to_string(),
            api_key: endpoint.api_key.clone(),
            client,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageContent,
}

#[derive(Deserialize)]
struct MessageContent {
    content: String,
}

#[derive(Deserialize)]
struct NliResponse {
    entail: f64,
    neutral: f64,
    contradict: f64,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct TranslateResponse {
    text: String,
}

impl RawService for HttpService {
    fn call(&self, request: &RawRequest) -> Result<ServiceResponse, SvcError> {
        let url = format!("{}{}", self.base_url, request.route.path());
        let mut builder = self
            .client
            .post(&url)
            .header("content-type", "application/json")
            .body(request.body.clone());
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let response = builder
            .send()
            .map_err(|e| SvcError::Transient(format!("{url}: {e}")))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| SvcError::Transient(format!("{url}: reading body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(SvcError::Transient(format!("{url}: HTTP {status}")));
        }
        if status.is_client_error() {
            return Err(SvcError::Permanent(format!("{url}: HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(SvcError::Transient(format!("{url}: HTTP {status}")));
        }
        let parse = |e: serde_json::Error| {
            SvcError::Protocol(format!("{url}: bad response body: {e}"))
        };
        match request.route {
            super::Route::Chat => {
                let parsed: ChatResponse = serde_json::from_str(&body).map_err(parse)?;
                let content = parsed
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| SvcError::Protocol(format!("{url}: empty choices")))?;
                Ok(ServiceResponse::Text(content))
            }
            super::Route::Nli => {
                let parsed: NliResponse = serde_json::from_str(&body).map_err(parse)?;
                Ok(ServiceResponse::Nli(NliScores {
                    entail: parsed.entail,
                    neutral: parsed.neutral,
                    contradict: parsed.contradict,
                }))
            }
            super::Route::Embed => {
                let parsed: EmbedResponse = serde_json::from_str(&body).map_err(parse)?;
                Ok(ServiceResponse::Vectors(parsed.vectors))
            }
            super::Route::Translate => {
                let parsed: TranslateResponse = serde_json::from_str(&body).map_err(parse)?;
                Ok(ServiceResponse::Text(parsed.text))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptText;
    use crate::svc::{Client, GenParams, RetryPolicy, Route};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Minimal single-use HTTP server answering each connection from a queue
    /// of (status, body) responses.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 65536];
                let mut total = 0usize;
                loop {
                    let n = stream.read(&mut buf[total..]).unwrap();
                    total += n;
                    let text = String::from_utf8_lossy(&buf[..total]);
                    if let Some(header_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if total >= header_end + 4 + content_length {
                            seen.push(text[header_end + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-length: {}\r\ncontent-type: application/json\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}"), handle)
    }

    fn endpoint(base_url: &str, max_retries: u32) -> ServiceEndpoint {
        ServiceEndpoint {
            base_url: base_url.to_string(),
            model_name: "test-model".into(),
            timeout_s: 5.0,
            max_retries,
            max_inflight: 1,
            api_key: None,
        }
    }

    #[test]
    fn chat_request_round_trips() {
        let (url, server) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"content":"Question: q => Answer: a"}}]}"#.into(),
        )]);
        let ep = endpoint(&url, 0);
        let http = Arc::new(HttpService::new(&ep).unwrap());
        let client = Client::new(ep, http, RetryPolicy::immediate()).unwrap();
        let out = client
            .generate(&PromptText::user("hello".into()), &GenParams::default())
            .unwrap();
        assert_eq!(out, "Question: q => Answer: a");
        let bodies = server.join().unwrap();
        assert!(bodies[0].contains("\"model\":\"test-model\""));
        assert!(bodies[0].contains("\"content\":\"hello\""));
    }

    #[test]
    fn server_errors_retry_then_succeed() {
        let (url, server) = serve(vec![
            (500, "{}".into()),
            (503, "{}".into()),
            (200, r#"{"entail":0.6,"neutral":0.3,"contradict":0.1}"#.into()),
        ]);
        let ep = endpoint(&url, 5);
        let http = Arc::new(HttpService::new(&ep).unwrap());
        let client = Client::new(ep, http, RetryPolicy::immediate()).unwrap();
        let scores = client.nli("p", "h").unwrap();
        assert!((scores.entail - 0.6).abs() < 1e-12);
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 3);
        assert_eq!(bodies[0], bodies[1]);
        assert_eq!(bodies[1], bodies[2]);
    }

    #[test]
    fn client_errors_are_permanent() {
        let (url, server) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let ep = endpoint(&url, 5);
        let http = Arc::new(HttpService::new(&ep).unwrap());
        let client = Client::new(ep, http, RetryPolicy::immediate()).unwrap();
        let err = client.nli("p", "h").unwrap_err();
        assert!(matches!(err, SvcError::Permanent(_)), "got {err}");
        server.join().unwrap();
    }

    #[test]
    fn routes_map_to_paths() {
        assert_eq!(Route::Chat.path(), "/v1/chat/completions");
        assert_eq!(Route::Nli.path(), "/v1/nli");
        assert_eq!(Route::Embed.path(), "/v1/embeddings");
        assert_eq!(Route::Translate.path(), "/v1/translate");
    }
}
