//! Entity set upload format.
//!
//! Header names are exact and order-insensitive:
//! `entity_id,headline,body,image_ref,source_label,tags,created_at`.
//! Only `entity_id` and `headline` are required. `tags` is `;`-separated and
//! `created_at` is RFC 3339 or empty.

use std::collections::HashSet;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::experiment::{Entity, EntitySet};

pub const COLUMNS: [&str; 7] = [
    "entity_id",
    "headline",
    "body",
    "image_ref",
    "source_label",
    "tags",
    "created_at",
];

#[derive(Debug, Error)]
pub enum EntityCsvError {
    #[error("file is empty or has no data rows")]
    EmptyFile,
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("duplicate entity_id `{0}`")]
    DuplicateEntityId(String),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub fn parse_entity_set_csv(
    raw: &[u8],
    set_id: &str,
    name: &str,
) -> Result<EntitySet, EntityCsvError> {
    let raw = raw.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(raw);
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Err(EntityCsvError::EmptyFile);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(raw);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let id_col = column("entity_id").ok_or(EntityCsvError::MissingColumn("entity_id"))?;
    let headline_col = column("headline").ok_or(EntityCsvError::MissingColumn("headline"))?;
    let body_col = column("body");
    let image_col = column("image_ref");
    let source_col = column("source_label");
    let tags_col = column("tags");
    let created_col = column("created_at");

    let mut entities = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // row numbers are 1-based and count the header
        let row = i + 2;
        let field = |col: Option<usize>| -> Option<String> {
            col.and_then(|c| record.get(c))
                .filter(|v| !v.is_empty())
                .map(str::to_owned)
        };
        let entity_id = field(Some(id_col)).ok_or_else(|| EntityCsvError::InvalidRow {
            row,
            reason: "empty entity_id".into(),
        })?;
        let headline = field(Some(headline_col)).ok_or_else(|| EntityCsvError::InvalidRow {
            row,
            reason: "empty headline".into(),
        })?;
        if !seen.insert(entity_id.clone()) {
            return Err(EntityCsvError::DuplicateEntityId(entity_id));
        }
        let tags = field(tags_col)
            .map(|t| {
                t.split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            })
            .unwrap_or_default();
        let created_at = match field(created_col) {
            None => None,
            Some(v) => Some(
                DateTime::parse_from_rfc3339(&v)
                    .map_err(|e| EntityCsvError::InvalidRow {
                        row,
                        reason: format!("created_at `{v}`: {e}"),
                    })?
                    .with_timezone(&Utc),
            ),
        };
        entities.push(Entity {
            entity_id,
            headline,
            body: field(body_col),
            image_ref: field(image_col),
            source_label: field(source_col),
            tags,
            created_at,
        });
    }
    if entities.is_empty() {
        return Err(EntityCsvError::EmptyFile);
    }
    Ok(EntitySet {
        set_id: set_id.to_owned(),
        name: name.to_owned(),
        entities,
    })
}

/// Writes all seven columns in canonical order.
pub fn write_entity_set_csv(set: &EntitySet) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(COLUMNS).expect("write to Vec");
    for e in &set.entities {
        let created = e
            .created_at
            .map(|t| t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
            .unwrap_or_default();
        writer
            .write_record([
                e.entity_id.as_str(),
                e.headline.as_str(),
                e.body.as_deref().unwrap_or(""),
                e.image_ref.as_deref().unwrap_or(""),
                e.source_label.as_deref().unwrap_or(""),
                &e.tags.join(";"),
                &created,
            ])
            .expect("write to Vec");
    }
    writer.into_inner().expect("flush Vec")
}
