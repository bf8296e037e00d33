//! External relevance scorers reached over HTTP.

use std::time::Duration;

use attrag_core::evaluation::ExternalScorer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// POSTs `{"candidate": ..., "reference": ...}` and reads `{"score": ...}`.
pub struct HttpScorer {
    name: String,
    url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    candidate: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

impl HttpScorer {
    /// Parses `name=url`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, url) = spec
            .split_once('=')
            .filter(|(n, u)| !n.is_empty() && u.starts_with("http"))
            .ok_or_else(|| Error::Config(format!("external scorer must be name=url, got {spec:?}")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Ok(HttpScorer {
            name: name.to_string(),
            url: url.to_string(),
            agent,
        })
    }
}

impl ExternalScorer for HttpScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&ScoreRequest { candidate, reference })
            .map_err(|e| e.to_string())?;
        let body: ScoreResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(body.score)
    }
}
