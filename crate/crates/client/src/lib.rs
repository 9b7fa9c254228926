//! Typed async client for the mmhybrid service.

use std::time::Duration;

use mmhybrid_api::{
    ApiError, CsvKind, DecayRate, DecayRateRequest, Health, JobStatus, Maxwellian,
    MaxwellianRequest, Remainder, RemainderRequest, RunConfig, RunRecord, RunSubmitted, StencilRow,
};
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

pub use mmhybrid_api as api;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{status}: {error}")]
    Api { status: StatusCode, error: ApiError },
    /// Connection, protocol or decoding failure.
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response {status}: {body}")]
    Unexpected { status: StatusCode, body: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_owned(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(req: RequestBuilder) -> Result<reqwest::Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&body) {
            Ok(error) => ClientError::Api { status, error },
            Err(_) => ClientError::Unexpected { status, body },
        })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        Ok(Self::send(req).await?.json().await?)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::json(self.http.post(self.url(path)).json(body)).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::json(self.http.get(self.url(path))).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn submit(&self, config: &RunConfig) -> Result<RunSubmitted> {
        self.post("/runs", config).await
    }

    pub async fn status(&self, id: Uuid) -> Result<JobStatus> {
        self.get(&format!("/runs/{id}")).await
    }

    pub async fn list(&self) -> Result<Vec<JobStatus>> {
        self.get("/runs").await
    }

    pub async fn cancel(&self, id: Uuid) -> Result<JobStatus> {
        Self::json(self.http.delete(self.url(&format!("/runs/{id}")))).await
    }

    /// Polls until the job leaves the queued and running states. `on_poll`
    /// sees every intermediate status.
    pub async fn wait(&self, id: Uuid, mut on_poll: impl FnMut(&JobStatus)) -> Result<JobStatus> {
        let mut delay = Duration::from_millis(5);
        loop {
            let status = self.status(id).await?;
            if status.state.is_finished() {
                return Ok(status);
            }
            on_poll(&status);
            tokio::time::sleep(delay).await;
            delay = (delay * 2).min(Duration::from_millis(250));
        }
    }

    pub async fn record(&self, id: Uuid) -> Result<RunRecord> {
        self.get(&format!("/runs/{id}/record")).await
    }

    pub async fn csv(&self, id: Uuid, kind: CsvKind) -> Result<String> {
        let name = serde_json::to_value(kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let resp = Self::send(self.http.get(self.url(&format!("/runs/{id}/csv/{name}")))).await?;
        Ok(resp.text().await?)
    }

    pub async fn maxwellian(&self, nv: usize, v_star: f64) -> Result<Maxwellian> {
        self.post("/maxwellian", &MaxwellianRequest { nv, v_star })
            .await
    }

    pub async fn stencil(&self, order: usize) -> Result<StencilRow> {
        self.get(&format!("/stencil/{order}")).await
    }

    pub async fn remainder(&self, req: &RemainderRequest) -> Result<Remainder> {
        self.post("/remainder", req).await
    }

    pub async fn decay_rate(&self, req: &DecayRateRequest) -> Result<DecayRate> {
        self.post("/decay-rate", req).await
    }
}
