use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;

use super::protocol::{DenoiseRequest, DenoiseResponse, HealthResponse, DENOISE_PATH, HEALTH_PATH, SCHEMA};
use super::{Conditioning, DenoiseError, Denoiser};
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Client for a denoise server speaking [`SCHEMA`].
///
/// Connection failures and 5xx responses are retried with exponential
/// backoff; protocol violations fail immediately.
#[derive(Debug, Clone)]
pub struct RemoteDenoiser {
    base: String,
    client: Client,
    retry: RetryPolicy,
    guidance: Option<f64>,
}

impl RemoteDenoiser {
    pub fn new(endpoint: &str) -> Result<Self, DenoiseError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| DenoiseError::Connection(e.to_string()))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_owned(),
            client,
            retry: RetryPolicy::default(),
            guidance: None,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_guidance(mut self, guidance: Option<f64>) -> Self {
        self.guidance = guidance;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn with_retries<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, DenoiseError>,
    ) -> Result<T, DenoiseError> {
        let mut delay = self.retry.base_delay;
        let mut tries = 0;
        loop {
            match attempt() {
                Err(e) if tries < self.retry.retries && is_transient(&e) => {
                    log::warn!("denoise request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                other => return other,
            }
        }
    }

    /// Checks the server is up and speaks our protocol version.
    pub fn health(&self) -> Result<HealthResponse, DenoiseError> {
        let url = format!("{}{HEALTH_PATH}", self.base);
        let health: HealthResponse = self.with_retries(|| {
            let resp = self
                .client
                .post(&url)
                .send()
                .map_err(|e| DenoiseError::Connection(e.to_string()))?;
            let body = read_body(resp)?;
            serde_json::from_str(&body).map_err(|e| DenoiseError::Protocol(e.to_string()))
        })?;
        if health.schema != SCHEMA {
            return Err(DenoiseError::Version {
                expected: SCHEMA.to_owned(),
                got: health.schema,
            });
        }
        Ok(health)
    }
}

fn is_transient(e: &DenoiseError) -> bool {
    match e {
        DenoiseError::Connection(_) => true,
        DenoiseError::Http { status, .. } => *status >= 500,
        _ => false,
    }
}

fn read_body(resp: reqwest::blocking::Response) -> Result<String, DenoiseError> {
    let status = resp.status();
    let body = resp
        .text()
        .map_err(|e| DenoiseError::Connection(e.to_string()))?;
    if !status.is_success() {
        return Err(DenoiseError::Http {
            status: status.as_u16(),
            body,
        });
    }
    Ok(body)
}

impl Denoiser for RemoteDenoiser {
    fn predict(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        cond.check_against(z_t)?;
        let url = format!("{}{DENOISE_PATH}", self.base);
        let request = DenoiseRequest::new(z_t, t, cond, self.guidance);
        let body = self.with_retries(|| {
            let resp = self
                .client
                .post(&url)
                .json(&request)
                .send()
                .map_err(|e| DenoiseError::Connection(e.to_string()))?;
            read_body(resp)
        })?;
        let response: DenoiseResponse =
            serde_json::from_str(&body).map_err(|e| DenoiseError::Protocol(e.to_string()))?;
        response.into_latent(z_t.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_server_is_a_connection_error_after_retries() {
        // Port 9 (discard) on localhost is closed in the sandbox.
        let remote = RemoteDenoiser::new("http://127.0.0.1:9")
            .unwrap()
            .with_retry(RetryPolicy {
                retries: 2,
                base_delay: Duration::from_millis(1),
            });
        let z = Latent::zeros([1, 2, 2]);
        let err = remote
            .predict(&z, 1, &Conditioning::unconditional(2, 2))
            .unwrap_err();
        assert!(matches!(err, DenoiseError::Connection(_)), "{err}");
    }

    #[test]
    fn transient_classification() {
        assert!(is_transient(&DenoiseError::Connection(String::new())));
        assert!(is_transient(&DenoiseError::Http {
            status: 503,
            body: String::new()
        }));
        assert!(!is_transient(&DenoiseError::Http {
            status: 400,
            body: String::new()
        }));
        assert!(!is_transient(&DenoiseError::Protocol(String::new())));
    }
}
