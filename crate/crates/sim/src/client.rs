//! Blocking client for the platform's HTTP API.

use std::collections::BTreeMap;
use std::time::Duration;

use feedlab_core::experiment::{ExperimentDraft, ExperimentStatus};
use feedlab_core::export::ExportFormat;
use feedlab_core::metrics::DiversityReport;
use feedlab_core::platform::{CreatedExperiment, EntitySetSummary, SurveyReceipt};
use feedlab_core::telemetry::{ClientEvent, IngestSummary, Session};
use feedlab_core::world::WorldAggregates;
use feedlab_core::SessionBootstrap;
use feedlab_server::ErrorBody;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Clone)]
pub struct ApiClient {
    base: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Interactions,
    Surveys,
    Diversity,
}

impl ExportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportKind::Interactions => "interactions",
            ExportKind::Surveys => "surveys",
            ExportKind::Diversity => "diversity",
        }
    }
}

impl std::str::FromStr for ExportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactions" => Ok(ExportKind::Interactions),
            "surveys" => Ok(ExportKind::Surveys),
            "diversity" => Ok(ExportKind::Diversity),
            other => Err(format!("unknown export kind `{other}`")),
        }
    }
}

fn format_str(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Jsonl => "jsonl",
    }
}

impl ApiClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            base: base_url.into().trim_end_matches('/').to_owned(),
            api_key,
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn finish(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> ClientResult<Vec<u8>> {
        let mut response = result.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_vec()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            return Ok(body);
        }
        match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(e) => Err(ClientError::Api {
                status,
                code: e.code,
                message: e.message,
            }),
            Err(_) => Err(ClientError::Api {
                status,
                code: "http_error".into(),
                message: String::from_utf8_lossy(&body).into_owned(),
            }),
        }
    }

    fn decode<T: DeserializeOwned>(body: &[u8]) -> ClientResult<T> {
        serde_json::from_slice(body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get_raw(&self, path: &str, admin: bool) -> ClientResult<Vec<u8>> {
        let mut req = self
            .agent
            .get(self.url(path))
            .header("accept", "application/json");
        if admin {
            if let Some(key) = &self.api_key {
                req = req.header("authorization", format!("Bearer {key}"));
            }
        }
        Self::finish(req.call())
    }

    fn get<T: DeserializeOwned>(&self, path: &str, admin: bool) -> ClientResult<T> {
        Self::decode(&self.get_raw(path, admin)?)
    }

    fn post_bytes(
        &self,
        path: &str,
        body: &[u8],
        content_type: &str,
        admin: bool,
    ) -> ClientResult<Vec<u8>> {
        let mut req = self
            .agent
            .post(self.url(path))
            .header("content-type", content_type);
        if admin {
            if let Some(key) = &self.api_key {
                req = req.header("authorization", format!("Bearer {key}"));
            }
        }
        Self::finish(req.send(body))
    }

    fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        admin: bool,
    ) -> ClientResult<T> {
        let bytes = serde_json::to_vec(body).expect("request serializes");
        Self::decode(&self.post_bytes(path, &bytes, "application/json", admin)?)
    }

    pub fn healthy(&self) -> bool {
        self.get_raw("/healthz", false).is_ok()
    }

    pub fn upload_entity_set(
        &self,
        set_id: &str,
        name: &str,
        csv: &[u8],
    ) -> ClientResult<EntitySetSummary> {
        let path = format!(
            "/api/entity-sets?set_id={}&name={}",
            encode(set_id),
            encode(name)
        );
        Self::decode(&self.post_bytes(&path, csv, "text/csv", true)?)
    }

    pub fn create_experiment(&self, draft: &ExperimentDraft) -> ClientResult<CreatedExperiment> {
        self.post("/api/experiments", draft, true)
    }

    pub fn set_status(&self, experiment_id: &str, status: ExperimentStatus) -> ClientResult<()> {
        let bytes = serde_json::to_vec(&json!({ "status": status })).expect("serializes");
        self.post_bytes(
            &format!("/api/experiments/{}/status", encode(experiment_id)),
            &bytes,
            "application/json",
            true,
        )
        .map(|_| ())
    }

    pub fn enter(&self, slug: &str, participant_id: &str) -> ClientResult<SessionBootstrap> {
        self.get(
            &format!("/f/{}?pid={}", encode(slug), encode(participant_id)),
            false,
        )
    }

    pub fn post_events(
        &self,
        session_id: &str,
        events: &[ClientEvent],
    ) -> ClientResult<IngestSummary> {
        self.post(
            &format!("/api/sessions/{}/events", encode(session_id)),
            &json!({ "session_id": session_id, "events": events }),
            false,
        )
    }

    pub fn submit_survey(
        &self,
        session_id: &str,
        responses: &BTreeMap<String, serde_json::Value>,
    ) -> ClientResult<SurveyReceipt> {
        self.post(
            &format!("/api/sessions/{}/survey", encode(session_id)),
            &json!({ "responses": responses }),
            false,
        )
    }

    pub fn session(&self, session_id: &str) -> ClientResult<Session> {
        self.get(&format!("/api/sessions/{}", encode(session_id)), true)
    }

    pub fn export(
        &self,
        experiment_id: &str,
        kind: ExportKind,
        format: ExportFormat,
    ) -> ClientResult<Vec<u8>> {
        self.get_raw(
            &format!(
                "/api/experiments/{}/export?kind={}&format={}",
                encode(experiment_id),
                kind.as_str(),
                format_str(format)
            ),
            true,
        )
    }

    pub fn dwell_by_position_csv(&self, experiment_id: &str) -> ClientResult<Vec<u8>> {
        self.get_raw(
            &format!(
                "/api/experiments/{}/dwell-by-position",
                encode(experiment_id)
            ),
            true,
        )
    }

    pub fn diversity(&self, experiment_id: &str) -> ClientResult<Vec<DiversityReport>> {
        self.get(
            &format!("/api/experiments/{}/diversity", encode(experiment_id)),
            true,
        )
    }

    pub fn worlds(&self, experiment_id: &str) -> ClientResult<Vec<WorldAggregates>> {
        self.get(
            &format!("/api/experiments/{}/worlds", encode(experiment_id)),
            true,
        )
    }
}

const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

fn encode(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}
