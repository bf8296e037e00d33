//! Completion endpoints: HTTP, plus the offline mock clients.

use std::path::PathBuf;
use std::time::Duration;

use attrag_core::generation::{ClientError, Completion, CompletionRequest, EchoClient, ScriptedClient};
use attrag_core::LlmClient;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::read_json;

pub const LLM_TOKEN_VAR: &str = "LLM_API_TOKEN";

/// POSTs `{model, prompt, max_tokens, temperature}` and reads
/// `{"text": ..., "finish_reason"?: ...}`.
pub struct HttpLlmClient {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpLlmClient {
            url: url.to_string(),
            token: std::env::var(LLM_TOKEN_VAR).ok().filter(|t| !t.is_empty()),
            agent,
        }
    }
}

fn classify(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(code) => ClientError::Other(format!("HTTP status {code}")),
        ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::Timeout(_) => ClientError::Unreachable(e.to_string()),
        other => ClientError::Other(other.to_string()),
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(request).map_err(classify)?;
        resp.body_mut()
            .read_json::<Completion>()
            .map_err(|e| ClientError::Other(format!("bad response body: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EndpointSpec {
    Echo,
    Script(PathBuf),
    Http(String),
}

impl std::str::FromStr for EndpointSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock:echo" => Ok(EndpointSpec::Echo),
            _ if s.starts_with("mock:script:") => Ok(EndpointSpec::Script(PathBuf::from(&s["mock:script:".len()..]))),
            _ if s.starts_with("http://") || s.starts_with("https://") => Ok(EndpointSpec::Http(s.to_string())),
            _ => Err(Error::Config(format!(
                "unknown llm endpoint {s:?} (expected mock:echo, mock:script:<file> or an http(s) URL)"
            ))),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Text(String),
    Completion(Completion),
}

impl EndpointSpec {
    /// A scripted endpoint replays a JSON array of responses; each entry is
    /// a string or a `{text, finish_reason}` object.
    pub fn open(&self) -> Result<Box<dyn LlmClient>> {
        Ok(match self {
            EndpointSpec::Echo => Box::new(EchoClient),
            EndpointSpec::Script(path) => {
                let entries: Vec<ScriptEntry> = read_json(path)?;
                Box::new(ScriptedClient::from_results(entries.into_iter().map(|e| {
                    Ok(match e {
                        ScriptEntry::Text(t) => Completion::text(t),
                        ScriptEntry::Completion(c) => c,
                    })
                })))
            }
            EndpointSpec::Http(url) => Box::new(HttpLlmClient::new(url)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("mock:echo".parse::<EndpointSpec>().unwrap(), EndpointSpec::Echo);
        assert_eq!(
            "mock:script:s.json".parse::<EndpointSpec>().unwrap(),
            EndpointSpec::Script("s.json".into())
        );
        assert!("ftp://x".parse::<EndpointSpec>().is_err());
    }

    #[test]
    fn unreachable_endpoint_is_reported_as_such() {
        // port 9 on localhost is closed in the test sandbox
        let client = HttpLlmClient::new("http://127.0.0.1:9/v1/complete");
        let req = CompletionRequest {
            model: "m".into(),
            prompt: "p".into(),
            max_tokens: 1,
            temperature: 0.0,
        };
        assert!(matches!(client.complete(&req), Err(ClientError::Unreachable(_))));
    }
}
