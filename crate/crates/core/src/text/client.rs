use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// A text-completion backend. Implementations must be shareable across
/// threads: captions may be decomposed concurrently.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Closure-backed client, mostly for tests and offline tooling.
pub struct FnClient<F>(pub F);

impl<F> CompletionClient for FnClient<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String> {
        (self.0)(prompt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f32,
}

impl LlmSettings {
    pub const URL_VAR: &'static str = "LGTM_LLM_URL";
    pub const MODEL_VAR: &'static str = "LGTM_LLM_MODEL";
    pub const KEY_VAR: &'static str = "LGTM_LLM_KEY";

    /// Reads `LGTM_LLM_URL`, `LGTM_LLM_MODEL` and `LGTM_LLM_KEY`. Returns
    /// `None` when no URL is configured.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(Self::URL_VAR).ok().filter(|s| !s.is_empty())?;
        Some(Self {
            base_url,
            model: std::env::var(Self::MODEL_VAR).unwrap_or_else(|_| "gpt-3.5-turbo".into()),
            api_key: std::env::var(Self::KEY_VAR).ok().filter(|s| !s.is_empty()),
            timeout: Duration::from_secs(60),
            temperature: 0.0,
        })
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completion client speaking the common JSON wire format:
/// `POST {base}/chat/completions` with `{model, temperature, messages}`,
/// reply text at `choices[0].message.content`.
pub struct HttpCompletionClient {
    settings: LlmSettings,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    pub fn new(settings: LlmSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { settings, agent }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self
            .agent
            .post(self.settings.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| Error::Client(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("status {status}: {e}")))?;
        if !status.is_success() {
            return Err(Error::Client(format!("status {status}: {body}")));
        }
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Client(format!("no message content in reply: {body}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one request, returning what it received.
    fn one_shot_server(reply: &'static str) -> (String, std::thread::JoinHandle<(String, Value)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.to_lowercase().starts_with("content-length:") {
                    len = line[15..].trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            (head, serde_json::from_slice(&body).unwrap())
        });
        (url, handle)
    }

    #[test]
    fn wire_format() {
        let (url, server) = one_shot_server(
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"head\":\"nods\"}"}}]}"#,
        );
        let client = HttpCompletionClient::new(LlmSettings {
            base_url: url,
            model: "test-model".into(),
            api_key: Some("secret".into()),
            timeout: Duration::from_secs(10),
            temperature: 0.0,
        });
        let reply = client.complete("hello").unwrap();
        assert_eq!(reply, r#"{"head":"nods"}"#);
        let (head, body) = server.join().unwrap();
        assert!(head.starts_with("POST /v1/chat/completions"));
        assert!(head.to_lowercase().contains("authorization: bearer secret"));
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["content"], "hello");
    }

    #[test]
    fn unreachable_service_is_a_client_error() {
        let client = HttpCompletionClient::new(LlmSettings {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key: None,
            timeout: Duration::from_secs(2),
            temperature: 0.0,
        });
        assert!(matches!(client.complete("x"), Err(Error::Client(_))));
    }
}
