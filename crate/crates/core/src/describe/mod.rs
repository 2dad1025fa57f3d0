//! Prompt assembly and one-sentence activity descriptions from a pluggable
//! multimodal backend, with retries and an on-disk cache.

mod cache;
mod mock;
mod prompt;

use std::io::{self, BufRead, Write};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, JsonClient, RetryPolicy};
use crate::digest::sha256_parts;

pub use cache::{CacheEntry, DescriptionCache};
pub use mock::{mock_describe, MockDescribeBackend, ANOMALY_TAGS, NOMINAL_TAGS};
pub use prompt::{build_prompt, PromptBundle, SYSTEM_PROMPT};

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error("unit {unit_key}: backend unavailable after retries: {source}")]
    Transport {
        unit_key: String,
        #[source]
        source: BackendError,
    },
    #[error("unit {unit_key}: {source}")]
    Backend {
        unit_key: String,
        #[source]
        source: BackendError,
    },
    #[error("unit {0}: backend returned an empty description")]
    EmptyDescription(String),
    #[error("unknown behavior tag {0:?}")]
    UnknownBehavior(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub max_image_side: u32,
    pub batch_size: usize,
    pub deterministic: bool,
}

/// One description query: two PNG-encoded crops plus the prompts.
#[derive(Clone, Copy, Debug)]
pub struct DescribeRequest<'a> {
    /// `<video_id>/<unit_id>`; scripted backends key on it, real ones ignore it.
    pub unit_key: &'a str,
    pub image_t: &'a [u8],
    pub image_t2: &'a [u8],
    pub prompts: &'a PromptBundle,
    pub deterministic: bool,
}

pub trait DescribeBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescriptionRecord {
    pub unit_id: String,
    pub text: String,
    pub backend_id: String,
    pub prompt_hash: String,
    pub anchor_frame: u64,
}

#[derive(Serialize, Deserialize)]
struct DescriptionLine {
    unit: String,
    t: u64,
    text: String,
    backend: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    prompt_hash: String,
}

pub fn write_descriptions(mut w: impl Write, records: &[DescriptionRecord]) -> io::Result<()> {
    for r in records {
        let line = DescriptionLine {
            unit: r.unit_id.clone(),
            t: r.anchor_frame,
            text: r.text.clone(),
            backend: r.backend_id.clone(),
            prompt_hash: r.prompt_hash.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_descriptions(reader: impl BufRead) -> Result<Vec<DescriptionRecord>, DescribeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DescriptionLine = serde_json::from_str(&line).map_err(|e| DescribeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(DescriptionRecord {
            unit_id: rec.unit,
            text: rec.text,
            backend_id: rec.backend,
            prompt_hash: rec.prompt_hash,
            anchor_frame: rec.t,
        });
    }
    Ok(out)
}

/// Encoded crops of one unit together with its identity.
#[derive(Clone, Debug)]
pub struct DescribeJob {
    pub unit_key: String,
    pub unit_id: String,
    pub anchor_frame: u64,
    pub image_t: Vec<u8>,
    pub image_t2: Vec<u8>,
    pub prompts: PromptBundle,
}

impl DescribeJob {
    /// Hash of the unit's identity and crop bytes.
    pub fn content_hash(&self) -> String {
        sha256_parts([
            self.unit_key.as_bytes(),
            self.image_t.as_slice(),
            self.image_t2.as_slice(),
        ])
    }
}

/// Queries a backend with retries and caching.
pub struct Describer<'a> {
    backend: &'a dyn DescribeBackend,
    cache: Option<DescriptionCache>,
    retry: RetryPolicy,
    deterministic: bool,
}

impl<'a> Describer<'a> {
    pub fn new(backend: &'a dyn DescribeBackend) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            deterministic: true,
        }
    }

    pub fn with_cache(mut self, cache: DescriptionCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn cache_key(&self, job: &DescribeJob, prompt_hash: &str) -> String {
        sha256_parts([
            job.content_hash().as_bytes(),
            prompt_hash.as_bytes(),
            self.backend.backend_id().as_bytes(),
        ])
    }

    /// Returns the backend's text trimmed of surrounding whitespace.
    pub fn describe_unit(&self, job: &DescribeJob) -> Result<DescriptionRecord, DescribeError> {
        let prompt_hash = job.prompts.hash();
        let backend_id = self.backend.backend_id().to_string();
        let key = self.cache_key(job, &prompt_hash);
        let record = |text: String| DescriptionRecord {
            unit_id: job.unit_id.clone(),
            text,
            backend_id: backend_id.clone(),
            prompt_hash: prompt_hash.clone(),
            anchor_frame: job.anchor_frame,
        };
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if hit.backend == backend_id && !hit.text.is_empty() {
                return Ok(record(hit.text));
            }
        }
        let req = DescribeRequest {
            unit_key: &job.unit_key,
            image_t: &job.image_t,
            image_t2: &job.image_t2,
            prompts: &job.prompts,
            deterministic: self.deterministic,
        };
        let text = self
            .retry
            .run(|| self.backend.describe(&req))
            .map_err(|source| {
                let unit_key = job.unit_key.clone();
                if source.is_transient() {
                    DescribeError::Transport { unit_key, source }
                } else {
                    DescribeError::Backend { unit_key, source }
                }
            })?;
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(DescribeError::EmptyDescription(job.unit_key.clone()));
        }
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CacheEntry {
                    text: text.clone(),
                    backend: backend_id.clone(),
                },
            )?;
        }
        Ok(record(text))
    }

    /// Describes every job with at most `in_flight` concurrent requests.
    pub fn describe_all(&self, jobs: &[DescribeJob], in_flight: usize) -> Vec<Result<DescriptionRecord, DescribeError>> {
        crate::exec::bounded_map(jobs, in_flight, |job| self.describe_unit(job))
    }
}

#[derive(Serialize)]
struct HttpDescribeRequest<'a> {
    image_t: String,
    image_t2: String,
    system: &'a str,
    user: &'a str,
    deterministic: bool,
}

#[derive(Deserialize)]
struct HttpDescribeResponse {
    text: String,
}

/// Client for `POST /describe` on a description service.
#[derive(Clone, Debug)]
pub struct HttpDescribeBackend {
    client: JsonClient,
    id: String,
}

impl HttpDescribeBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let client = JsonClient::new(base_url, timeout);
        let id = format!("http:{}", client.base_url());
        Self { client, id }
    }

    pub fn with_client(client: JsonClient) -> Self {
        let id = format!("http:{}", client.base_url());
        Self { client, id }
    }
}

impl DescribeBackend for HttpDescribeBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_image_side: 4096,
            batch_size: 1,
            deterministic: true,
        }
    }

    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let body = HttpDescribeRequest {
            image_t: b64.encode(req.image_t),
            image_t2: b64.encode(req.image_t2),
            system: &req.prompts.system_prompt,
            user: &req.prompts.user_prompt,
            deterministic: req.deterministic,
        };
        let resp: HttpDescribeResponse = self.client.post("/describe", &body)?;
        Ok(resp.text)
    }
}
