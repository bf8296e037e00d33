//! Embedding providers: precomputed JSONL files, an HTTP endpoint, and the
//! offline hashing embedder.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use attrag_core::embedding::{sentence_key, EmbedInput, HashingEmbedder};
use attrag_core::{CaseStudy, EmbeddingError, EmbeddingProvider, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBED_TOKEN_VAR: &str = "EMBED_API_TOKEN";

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    vector: Vec<f64>,
}

/// Vectors loaded from JSONL lines `{"key": ..., "vector": [...]}`. Keys
/// are `case_id#sentence_id` for note sentences or the raw text for
/// anything else (queries, answers).
#[derive(Debug)]
pub struct FileEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vector>,
}

impl FileEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(Error::io(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Jsonl {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let v = Vector::new(rec.vector).map_err(|e| bad(e.to_string()))?;
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(bad(format!("dimension {} differs from {d}", v.dim())));
                }
                _ => {}
            }
            vectors.insert(rec.key, v);
        }
        let dim = dim.ok_or(Error::Embedding(EmbeddingError::Empty))?;
        Ok(FileEmbeddings { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_input(&self, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError> {
        if let EmbedInput::Sentence { case_id, sentence_id, .. } = input {
            if let Some(v) = self.vectors.get(&sentence_key(case_id, sentence_id)) {
                return Ok(v.clone());
            }
        }
        let text = input.text();
        self.vectors
            .get(text)
            .or_else(|| self.vectors.get(text.trim()))
            .cloned()
            .ok_or_else(|| EmbeddingError::MissingEmbedding(text.to_string()))
    }
}

/// Writes JSONL records for every note sentence (keyed by coordinates) and
/// every extra text (keyed by itself), in a stable order.
pub fn write_embeddings<'a>(
    path: &Path,
    provider: &dyn EmbeddingProvider,
    cases: &[CaseStudy],
    extra_texts: impl IntoIterator<Item = &'a str>,
) -> Result<usize> {
    let mut out = Vec::new();
    let mut push = |key: String, v: Vector| -> Result<()> {
        let line = serde_json::to_string(&Record {
            key,
            vector: v.values().to_vec(),
        })
        .map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
        Ok(())
    };
    let mut count = 0;
    for case in cases {
        for s in &case.sentences {
            let input = EmbedInput::Sentence {
                case_id: &case.case_id,
                sentence_id: s.id,
                text: &s.text,
            };
            push(sentence_key(&case.case_id, s.id), attrag_core::embedding::embed(provider, input)?)?;
            count += 1;
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for text in extra_texts {
        if text.trim().is_empty() || !seen.insert(text) {
            continue;
        }
        push(text.to_string(), attrag_core::embedding::embed(provider, EmbedInput::Text(text))?)?;
        count += 1;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut f = File::create(path).map_err(Error::io(path))?;
    f.write_all(&out).map_err(Error::io(path))?;
    Ok(count)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedding endpoint: POST `{"inputs": [...]}` returning
/// `{"vectors": [[...], ...]}`. Responses are cached per text.
pub struct HttpEmbeddings {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    dim: usize,
    cache: Mutex<HashMap<String, Vector>>,
}

impl HttpEmbeddings {
    /// Connects and learns the dimension from a probe request.
    pub fn connect(url: &str) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        let mut this = HttpEmbeddings {
            url: url.to_string(),
            token: std::env::var(EMBED_TOKEN_VAR).ok().filter(|t| !t.is_empty()),
            agent,
            dim: 0,
            cache: Mutex::new(HashMap::new()),
        };
        let probe = this.request(&["dimension probe"])?;
        this.dim = probe[0].dim();
        Ok(this)
    }

    fn request(&self, inputs: &[&str]) -> Result<Vec<Vector>, EmbeddingError> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(&EmbedRequest { inputs })
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
        if body.vectors.len() != inputs.len() {
            return Err(EmbeddingError::Unavailable(format!(
                "expected {} vectors, got {}",
                inputs.len(),
                body.vectors.len()
            )));
        }
        body.vectors.into_iter().map(Vector::new).collect()
    }
}

impl EmbeddingProvider for HttpEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_input(&self, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError> {
        let text = input.text();
        if let Some(v) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.request(&[text])?.remove(0);
        self.cache.lock().expect("cache lock").insert(text.to_string(), v.clone());
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProviderSpec {
    File(PathBuf),
    Http(String),
    Hash(usize),
}

impl std::str::FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(ProviderSpec::Http(s.to_string()));
        }
        if let Some(rest) = s.strip_prefix("http:") {
            return Ok(ProviderSpec::Http(rest.to_string()));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ProviderSpec::File(PathBuf::from(path)));
        }
        if let Some(dim) = s.strip_prefix("hash:") {
            let dim: usize = dim
                .parse()
                .ok()
                .filter(|d| *d > 0)
                .ok_or_else(|| Error::Config(format!("bad embedding dimension in {s:?}")))?;
            return Ok(ProviderSpec::Hash(dim));
        }
        Err(Error::Config(format!(
            "unknown embedding provider {s:?} (expected file:<path>, http(s)://<url> or hash:<dim>)"
        )))
    }
}

impl ProviderSpec {
    pub fn open(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderSpec::File(p) => Arc::new(FileEmbeddings::load(p)?),
            ProviderSpec::Http(url) => Arc::new(HttpEmbeddings::connect(url)?),
            ProviderSpec::Hash(dim) => Arc::new(HashingEmbedder::new(*dim)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!("hash:64".parse::<ProviderSpec>().unwrap(), ProviderSpec::Hash(64));
        assert_eq!(
            "file:emb.jsonl".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::File("emb.jsonl".into())
        );
        assert_eq!(
            "https://h/embed".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http("https://h/embed".into())
        );
        assert!("hash:0".parse::<ProviderSpec>().is_err());
        assert!("model-x".parse::<ProviderSpec>().is_err());
    }
}
