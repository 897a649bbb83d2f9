//! HTTP client for a remote denoiser service.
//!
//! The service owns the latent space, so it runs the whole guided, masked
//! denoising loop; the client only ships the image, the regenerate mask and
//! the step budget. See `docs/protocol.md` for the wire format.

mod protocol;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use ureq::Agent;

use crate::inpaint::BackendInfo;

pub use protocol::{
    decode_request, encode_png_gray, encode_png_rgb, encode_response, png_dimensions, InpaintJob, InpaintResult,
};

pub const TOKEN_ENV: &str = "BGFORGE_REMOTE_TOKEN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("protocol error (HTTP {status}): {body}")]
    ProtocolError { status: u16, body: String },
    #[error("result is {found:?}, job asked for {expected:?}")]
    DimensionViolation { expected: (u32, u32), found: (u32, u32) },
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("image codec: {0}")]
    Image(String),
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub token: Option<String>,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }
}

struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight counter poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight counter poisoned");
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight counter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable across threads; connections are pooled per endpoint.
pub struct RemoteClient {
    agent: Agent,
    endpoint: String,
    options: RemoteOptions,
    in_flight: InFlight,
}

enum Attempt {
    Done(InpaintResult),
    Retry(RemoteError),
    Fatal(RemoteError),
}

impl RemoteClient {
    pub fn new(endpoint: &str, options: RemoteOptions) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            in_flight: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: options.max_in_flight.max(1),
            },
            options,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn healthcheck(&self) -> Result<BackendInfo, RemoteError> {
        let mut req = self.agent.get(format!("{}/v1/health", self.endpoint));
        if let Some(token) = &self.options.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.call().map_err(|e| RemoteError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| RemoteError::Unreachable(e.to_string()))?;
        if status != 200 {
            return Err(RemoteError::ProtocolError { status, body: String::from_utf8_lossy(&body).into_owned() });
        }
        protocol::decode_health(status, &body)
    }

    /// Sends a job, retrying transient failures (connection errors, timeouts,
    /// HTTP 429 and 5xx) with exponential backoff.
    pub fn submit(&self, job: &InpaintJob) -> Result<InpaintResult, RemoteError> {
        job.validate()?;
        let body = job.to_request_body();
        let key = job.job_hash();
        let _slot = self.in_flight.acquire();
        let mut delay = self.options.backoff;
        let mut last = RemoteError::Unreachable("no attempt made".into());
        for attempt in 0..=self.options.retries {
            if attempt > 0 {
                log::warn!("retrying job {} (attempt {}): {last}", &key[..12], attempt + 1);
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&body, &key) {
                Attempt::Done(result) => {
                    let found = png_dimensions(&result.image)?;
                    if found != (job.width, job.height) {
                        return Err(RemoteError::DimensionViolation { expected: (job.width, job.height), found });
                    }
                    return Ok(result);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => last = e,
            }
        }
        Err(match last {
            RemoteError::Timeout { .. } => RemoteError::Timeout { attempts: self.options.retries + 1 },
            other => other,
        })
    }

    fn attempt(&self, body: &[u8], key: &str) -> Attempt {
        let mut req = self
            .agent
            .post(format!("{}/v1/inpaint", self.endpoint))
            .header("Content-Type", "application/json")
            .header("Idempotency-Key", key);
        if let Some(token) = &self.options.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let started = Instant::now();
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(RemoteError::Timeout { attempts: 1 }),
            Err(e) => return Attempt::Retry(RemoteError::Unreachable(e.to_string())),
        };
        let status = resp.status().as_u16();
        let bytes = match resp.body_mut().with_config().limit(1 << 30).read_to_vec() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(RemoteError::Timeout { attempts: 1 }),
            Err(e) => return Attempt::Retry(RemoteError::Unreachable(e.to_string())),
        };
        log::debug!("POST /v1/inpaint -> {status} in {:?}", started.elapsed());
        match status {
            200 => match protocol::decode_response(status, &bytes) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry(RemoteError::ProtocolError {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
            _ => Attempt::Fatal(RemoteError::ProtocolError {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }
}

/// One-shot submission with default backoff and no in-flight sharing.
pub fn submit(job: &InpaintJob, endpoint: &str, timeout: Duration, retries: u32) -> Result<InpaintResult, RemoteError> {
    RemoteClient::new(endpoint, RemoteOptions { timeout, retries, ..Default::default() }).submit(job)
}

pub fn healthcheck(endpoint: &str, timeout: Duration) -> Result<BackendInfo, RemoteError> {
    RemoteClient::new(endpoint, RemoteOptions { timeout, retries: 0, ..Default::default() }).healthcheck()
}
