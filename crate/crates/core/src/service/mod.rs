//! Client side of the guidance service protocol: noise prediction, text
//! encoding and the health handshake over HTTP with JSON bodies. Tensors
//! travel as base64 little-endian f32 with an explicit shape.

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A dense f32 tensor on the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub data: String,
    pub shape: Vec<usize>,
}

impl WireTensor {
    pub fn encode(values: &[f32], shape: &[usize]) -> Result<Self, ServiceError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(ServiceError::Protocol(format!("shape {shape:?} holds {n} values, got {}", values.len())));
        }
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(Self { data: STANDARD.encode(bytes), shape: shape.to_vec() })
    }

    pub fn decode(&self) -> Result<Vec<f32>, ServiceError> {
        let bytes = STANDARD.decode(&self.data).map_err(|e| ServiceError::Protocol(format!("bad base64: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(ServiceError::Protocol(format!(
                "payload has {} bytes, shape {:?} needs {}",
                bytes.len(),
                self.shape,
                4 * n
            )));
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub prompt: String,
    pub view_descriptor: String,
    pub t: u32,
    pub x_t: WireTensor,
    pub cfg_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub epsilon: WireTensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncodeTextRequest {
    pub text: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncodeTextResponse {
    pub embedding: Vec<f32>,
}

/// `latent_hw` may be sent as a single edge length or as `[h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatentHw {
    Square(usize),
    Rect([usize; 2]),
}

impl LatentHw {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            LatentHw::Square(n) => (n, n),
            LatentHw::Rect([h, w]) => (h, w),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Health {
    pub ok: bool,
    pub model_id: String,
    pub latent_hw: LatentHw,
    #[serde(default)]
    pub d_h: Option<usize>,
}

/// Blocking client with a per-request timeout. Transport failures and 5xx
/// responses are retried with a short linear backoff; 4xx are not.
#[derive(Clone)]
pub struct ServiceClient {
    base: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
}

impl std::fmt::Debug for ServiceClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceClient").field("base", &self.base).field("retries", &self.retries).finish()
    }
}

impl ServiceClient {
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(config),
            retries,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<Health, ServiceError> {
        self.call(|| self.agent.get(format!("{}/v1/health", self.base)).call())
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f32>, ServiceError> {
        let req = EncodeTextRequest { text: text.to_string() };
        let resp: EncodeTextResponse =
            self.call(|| self.agent.post(format!("{}/v1/encode_text", self.base)).send_json(&req))?;
        Ok(resp.embedding)
    }

    pub fn predict_noise(&self, req: &PredictRequest) -> Result<Vec<f32>, ServiceError> {
        let resp: PredictResponse =
            self.call(|| self.agent.post(format!("{}/v1/predict_noise", self.base)).send_json(req))?;
        if resp.epsilon.shape != req.x_t.shape {
            return Err(ServiceError::Protocol(format!(
                "epsilon shape {:?} differs from x_t shape {:?}",
                resp.epsilon.shape, req.x_t.shape
            )));
        }
        resp.epsilon.decode()
    }

    fn call<T, F>(&self, send: F) -> Result<T, ServiceError>
    where
        T: serde::de::DeserializeOwned,
        F: Fn() -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let last_error = match send() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp
                            .body_mut()
                            .read_json::<T>()
                            .map_err(|e| ServiceError::Protocol(format!("malformed response: {e}")));
                    }
                    let body = resp.body_mut().read_to_string().unwrap_or_default();
                    if status < 500 {
                        return Err(ServiceError::Status { status, body });
                    }
                    ServiceError::Status { status, body }
                }
                Err(e) => ServiceError::Transport { attempts, message: e.to_string() },
            };
            if attempts > self.retries {
                return Err(match last_error {
                    ServiceError::Transport { message, .. } => ServiceError::Transport { attempts, message },
                    other => other,
                });
            }
            log::warn!("guidance service call failed (attempt {attempts}): {last_error}");
            thread::sleep(self.backoff * attempts);
        }
    }
}
