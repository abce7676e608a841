//! Analysis exports. CSV is RFC 4180 with LF line endings; JSONL uses the
//! same field names, one object per line.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::DiversityReport;
use crate::telemetry::SessionPhase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("no finalized sessions")]
    NoData,
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSONL at line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// One row per (session, displayed entity).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub experiment_id: String,
    pub participant_id: String,
    pub session_id: String,
    pub condition_index: usize,
    pub world_index: usize,
    pub entity_id: String,
    pub entity_set_id: String,
    pub position: usize,
    pub dwell_ms: u64,
    pub shared: bool,
    pub ever_shared: bool,
    pub liked: bool,
    pub ever_liked: bool,
    pub bookmarked: bool,
    pub ever_bookmarked: bool,
    pub shown_shares: Option<u64>,
    pub shown_likes: Option<u64>,
    pub intervention_seen_before: bool,
    pub session_started_at: DateTime<Utc>,
    pub session_phase_final: SessionPhase,
}

pub const INTERACTION_COLUMNS: [&str; 20] = [
    "experiment_id",
    "participant_id",
    "session_id",
    "condition_index",
    "world_index",
    "entity_id",
    "entity_set_id",
    "position",
    "dwell_ms",
    "shared",
    "ever_shared",
    "liked",
    "ever_liked",
    "bookmarked",
    "ever_bookmarked",
    "shown_shares",
    "shown_likes",
    "intervention_seen_before",
    "session_started_at",
    "session_phase_final",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub session_id: String,
    pub participant_id: String,
    pub question_id: String,
    pub response_value: String,
    pub responded_at: DateTime<Utc>,
}

pub const SURVEY_COLUMNS: [&str; 5] = [
    "session_id",
    "participant_id",
    "question_id",
    "response_value",
    "responded_at",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub condition_index: usize,
    pub world_index: usize,
    pub gini: f64,
    pub entropy_bits: f64,
    pub top_entity: String,
    pub cross_world_unpredictability: f64,
}

pub const DIVERSITY_COLUMNS: [&str; 6] = [
    "condition_index",
    "world_index",
    "gini",
    "entropy_bits",
    "top_entity",
    "cross_world_unpredictability",
];

pub fn diversity_rows(reports: &[DiversityReport]) -> Vec<DiversityRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_world.iter().map(move |w| DiversityRow {
                condition_index: r.condition_index,
                world_index: w.world_index,
                gini: w.gini,
                entropy_bits: w.entropy_bits,
                top_entity: w.top_entity.clone(),
                cross_world_unpredictability: r.cross_world_unpredictability,
            })
        })
        .collect()
}

/// Stable export order: session start, then session id, then position.
pub fn sort_interactions(records: &mut [InteractionRecord]) {
    records.sort_by(|a, b| {
        (a.session_started_at, &a.session_id, a.position).cmp(&(
            b.session_started_at,
            &b.session_id,
            b.position,
        ))
    });
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

/// Serializes rows; the CSV header is always written, even with no rows.
pub fn write_rows<T: Serialize>(rows: &[T], columns: &[&str], format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv_writer();
            w.write_record(columns).expect("write to Vec");
            for row in rows {
                w.serialize(row).expect("row serializes");
            }
            w.into_inner().expect("flush Vec")
        }
        ExportFormat::Jsonl => {
            let mut out = Vec::new();
            for row in rows {
                serde_json::to_writer(&mut out, row).expect("row serializes");
                out.push(b'\n');
            }
            out
        }
    }
}

pub fn parse_rows<T: DeserializeOwned>(
    raw: &[u8],
    format: ExportFormat,
) -> Result<Vec<T>, ExportError> {
    match format {
        ExportFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
            r.deserialize()
                .map(|row| row.map_err(ExportError::from))
                .collect()
        }
        ExportFormat::Jsonl => raw
            .split(|b| *b == b'\n')
            .enumerate()
            .filter(|(_, line)| !line.iter().all(u8::is_ascii_whitespace))
            .map(|(i, line)| {
                serde_json::from_slice(line).map_err(|source| ExportError::Json {
                    line: i + 1,
                    source,
                })
            })
            .collect(),
    }
}

pub fn write_interactions(records: &[InteractionRecord], format: ExportFormat) -> Vec<u8> {
    write_rows(records, &INTERACTION_COLUMNS, format)
}

pub fn parse_interactions(
    raw: &[u8],
    format: ExportFormat,
) -> Result<Vec<InteractionRecord>, ExportError> {
    parse_rows(raw, format)
}

pub fn write_surveys(records: &[SurveyRecord], format: ExportFormat) -> Vec<u8> {
    write_rows(records, &SURVEY_COLUMNS, format)
}

pub fn parse_surveys(raw: &[u8], format: ExportFormat) -> Result<Vec<SurveyRecord>, ExportError> {
    parse_rows(raw, format)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionDwell {
    pub position: usize,
    pub mean_dwell_ms: f64,
    pub n: u64,
}

/// Mean dwell per feed position across finalized sessions.
pub fn dwell_by_position(records: &[InteractionRecord]) -> Result<Vec<PositionDwell>, ExportError> {
    let mut sums: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.session_phase_final.is_final()) {
        let slot = sums.entry(r.position).or_default();
        slot.0 += r.dwell_ms;
        slot.1 += 1;
    }
    if sums.is_empty() {
        return Err(ExportError::NoData);
    }
    Ok(sums
        .into_iter()
        .map(|(position, (total, n))| PositionDwell {
            position,
            mean_dwell_ms: total as f64 / n as f64,
            n,
        })
        .collect())
}

pub fn write_dwell_by_position(series: &[PositionDwell]) -> Vec<u8> {
    write_rows(
        series,
        &["position", "mean_dwell_ms", "n"],
        ExportFormat::Csv,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRates {
    pub condition_index: usize,
    pub sessions: u64,
    pub impressions: u64,
    pub share_rate: f64,
    pub like_rate: f64,
}

/// Final-state share and like rates per condition over finalized sessions.
pub fn condition_rates(records: &[InteractionRecord]) -> Vec<ConditionRates> {
    #[derive(Default)]
    struct Acc {
        sessions: std::collections::BTreeSet<String>,
        impressions: u64,
        shares: u64,
        likes: u64,
    }
    let mut acc: BTreeMap<usize, Acc> = BTreeMap::new();
    for r in records.iter().filter(|r| r.session_phase_final.is_final()) {
        let a = acc.entry(r.condition_index).or_default();
        a.sessions.insert(r.session_id.clone());
        a.impressions += 1;
        a.shares += u64::from(r.shared);
        a.likes += u64::from(r.liked);
    }
    acc.into_iter()
        .map(|(condition_index, a)| ConditionRates {
            condition_index,
            sessions: a.sessions.len() as u64,
            impressions: a.impressions,
            share_rate: a.shares as f64 / a.impressions as f64,
            like_rate: a.likes as f64 / a.impressions as f64,
        })
        .collect()
}
