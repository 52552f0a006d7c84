//! Transport to the remote VLM detector, with record/replay fixtures.
//!
//! Each exchange is keyed by a SHA-256 digest of the image bytes and the
//! prompt text. Fixtures live one per file, named `<digest>.txt`: a short
//! header, a `---` separator line, then the raw response text verbatim.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const FIXTURE_SEPARATOR: &str = "---\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("client configuration error: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("detector service returned HTTP {status}")]
    Service { status: u16 },
    #[error("no recorded exchange for request digest {0}")]
    FixtureMissing(String),
    #[error("fixture store error: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    #[serde(default)]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub mode: ClientMode,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_secs")]
    pub backoff_initial_secs: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff_secs() -> f64 {
    0.5
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            auth_token_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_retries(),
            mode: ClientMode::Replay,
            max_in_flight: default_in_flight(),
            backoff_initial_secs: default_backoff_secs(),
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.backoff_initial_secs >= 0.0) {
            return Err(ClientError::Config("backoff must be non-negative".into()));
        }
        if self.mode != ClientMode::Replay && self.endpoint_url.as_deref().unwrap_or("").is_empty()
        {
            return Err(ClientError::Config(format!(
                "{:?} mode needs an endpoint_url",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Delay before retry number `retry` (0-based): doubling from the
    /// initial backoff, capped at the timeout.
    pub fn backoff(&self, retry: u32) -> Duration {
        let secs = self.backoff_initial_secs * 2f64.powi(retry.min(30) as i32);
        Duration::from_secs_f64(secs.min(self.timeout_secs))
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Digest of the `(image, prompt)` pair; nothing else feeds it.
pub fn request_digest(image: &[u8], prompt: &str) -> String {
    let len = (image.len() as u64).to_le_bytes();
    sha256_hex(&[b"image\0", &len, image, b"prompt\0", prompt.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditExchange {
    pub request_digest: String,
    pub prompt_digest: String,
    pub response_text: String,
    pub timestamp: DateTime<Utc>,
}

impl AuditExchange {
    pub fn new(
        image: &[u8],
        prompt: &str,
        response_text: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            request_digest: request_digest(image, prompt),
            prompt_digest: sha256_hex(&[prompt.as_bytes()]),
            response_text: response_text.into(),
            timestamp,
        }
    }

    pub fn to_file_contents(&self) -> String {
        format!(
            "request_digest: {}\ntimestamp: {}\nprompt_sha256: {}\n{FIXTURE_SEPARATOR}{}",
            self.request_digest,
            self.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.prompt_digest,
            self.response_text
        )
    }

    pub fn parse(contents: &str) -> Result<Self, ClientError> {
        let (head, body) = contents
            .split_once(FIXTURE_SEPARATOR)
            .ok_or_else(|| ClientError::Fixture("missing `---` separator".into()))?;
        let mut fields = HashMap::new();
        for line in head.lines() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| ClientError::Fixture(format!("bad header line `{line}`")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(|s| s.to_string())
                .ok_or_else(|| ClientError::Fixture(format!("missing header `{k}`")))
        };
        let timestamp = DateTime::parse_from_rfc3339(&get("timestamp")?)
            .map_err(|e| ClientError::Fixture(format!("bad timestamp: {e}")))?
            .with_timezone(&Utc);
        Ok(Self {
            request_digest: get("request_digest")?,
            prompt_digest: get("prompt_sha256")?,
            response_text: body.to_string(),
            timestamp,
        })
    }
}

/// Directory of recorded exchanges. Loaded once; writes are serialized.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    loaded: HashMap<String, AuditExchange>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ClientError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(ClientError::Fixture(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        let mut loaded = HashMap::new();
        let entries = fs::read_dir(&dir).map_err(|e| ClientError::Fixture(e.to_string()))?;
        for entry in entries {
            let path = entry
                .map_err(|e| ClientError::Fixture(e.to_string()))?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let contents = fs::read_to_string(&path)
                .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
            let ex = AuditExchange::parse(&contents)
                .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
            loaded.insert(ex.request_digest.clone(), ex);
        }
        Ok(Self {
            dir,
            loaded,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.loaded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loaded.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&AuditExchange> {
        self.loaded.get(digest)
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.txt"))
    }

    /// Writes the exchange to `<digest>.txt`, replacing any previous file.
    pub fn record(&self, exchange: &AuditExchange) -> Result<PathBuf, ClientError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path_for(&exchange.request_digest);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, exchange.to_file_contents())
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One HTTP POST of a JSON body.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ClientError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, String> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
struct InFlight {
    max: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        Self {
            max,
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct AuditRequest<'a> {
    prompt: &'a str,
    image_b64: String,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub struct VlmClient {
    config: ClientConfig,
    store: Option<FixtureStore>,
    transport: Option<Box<dyn Transport>>,
    limiter: InFlight,
    sleep: fn(Duration),
}

impl std::fmt::Debug for VlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VlmClient")
            .field("config", &self.config)
            .field("store", &self.store.as_ref().map(|s| s.dir().to_path_buf()))
            .finish_non_exhaustive()
    }
}

impl VlmClient {
    /// Builds a client. Record and replay modes need a fixture directory.
    pub fn new(config: ClientConfig, fixtures: Option<&Path>) -> Result<Self, ClientError> {
        let transport: Option<Box<dyn Transport>> = match config.mode {
            ClientMode::Replay => None,
            _ => Some(Box::new(ReqwestTransport::new()?)),
        };
        Self::with_transport(config, fixtures, transport)
    }

    pub fn with_transport(
        config: ClientConfig,
        fixtures: Option<&Path>,
        transport: Option<Box<dyn Transport>>,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        let store = match (config.mode, fixtures) {
            (ClientMode::Live, None) => None,
            (_, Some(dir)) => Some(FixtureStore::open(dir)?),
            (mode, None) => {
                return Err(ClientError::Config(format!(
                    "{mode:?} mode needs a fixture directory"
                )))
            }
        };
        if config.mode != ClientMode::Replay && transport.is_none() {
            return Err(ClientError::Config("live transport missing".into()));
        }
        Ok(Self {
            limiter: InFlight::new(config.max_in_flight),
            config,
            store,
            transport,
            sleep: std::thread::sleep,
        })
    }

    /// Replaces the sleep used between retries.
    pub fn with_sleeper(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn store(&self) -> Option<&FixtureStore> {
        self.store.as_ref()
    }

    /// Sends one audit request and returns the raw response text.
    pub fn audit_image(&self, image: &[u8], prompt: &str) -> Result<String, ClientError> {
        if image.is_empty() {
            return Err(ClientError::Config("image is empty".into()));
        }
        match self.config.mode {
            ClientMode::Replay => {
                let digest = request_digest(image, prompt);
                self.store
                    .as_ref()
                    .and_then(|s| s.get(&digest))
                    .map(|ex| ex.response_text.clone())
                    .ok_or(ClientError::FixtureMissing(digest))
            }
            ClientMode::Live => self.send(image, prompt),
            ClientMode::Record => {
                let text = self.send(image, prompt)?;
                let ex = AuditExchange::new(image, prompt, text.clone(), Utc::now());
                self.store
                    .as_ref()
                    .expect("record mode always has a store")
                    .record(&ex)?;
                Ok(text)
            }
        }
    }

    fn bearer(&self) -> Result<Option<String>, ClientError> {
        match &self.config.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                ClientError::Config(format!("environment variable `{var}` is not set"))
            }),
        }
    }

    fn send(&self, image: &[u8], prompt: &str) -> Result<String, ClientError> {
        let transport = self.transport.as_ref().expect("live transport");
        let url = self
            .config
            .endpoint_url
            .as_deref()
            .expect("validated endpoint");
        let bearer = self.bearer()?;
        let body = serde_json::to_string(&AuditRequest {
            prompt,
            image_b64: base64::engine::general_purpose::STANDARD.encode(image),
        })
        .expect("request serializes");

        let _permit = self.limiter.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = ClientError::Transport {
            attempts: 0,
            message: "no attempt made".into(),
        };
        for attempt in 0..attempts {
            if attempt > 0 {
                (self.sleep)(self.config.backoff(attempt - 1));
            }
            match transport.post_json(url, bearer.as_deref(), &body, self.config.timeout()) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
                Ok(resp) if retryable(resp.status) => {
                    log::warn!(
                        "detector returned HTTP {} (attempt {})",
                        resp.status,
                        attempt + 1
                    );
                    last = ClientError::Service {
                        status: resp.status,
                    };
                }
                Ok(resp) => {
                    return Err(ClientError::Service {
                        status: resp.status,
                    })
                }
                Err(message) => {
                    log::warn!(
                        "detector transport failure (attempt {}): {message}",
                        attempt + 1
                    );
                    last = ClientError::Transport {
                        attempts: attempt + 1,
                        message,
                    };
                }
            }
        }
        Err(last)
    }
}
