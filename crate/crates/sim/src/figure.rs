//! Plot-ready series from an interaction export: one dwell-vs-position line
//! per session with engagement markers, and the mean across sessions.

use feedlab_core::export::{
    dwell_by_position, write_dwell_by_position, write_rows, ExportError, ExportFormat,
    InteractionRecord, PositionDwell,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub session_id: String,
    pub participant_id: String,
    pub condition_index: usize,
    pub position: usize,
    pub entity_id: String,
    pub dwell_ms: u64,
    pub shared: bool,
    /// Shared at some point but not at the end.
    pub unshared: bool,
    pub liked: bool,
    pub bookmarked: bool,
}

pub const SERIES_COLUMNS: [&str; 10] = [
    "session_id",
    "participant_id",
    "condition_index",
    "position",
    "entity_id",
    "dwell_ms",
    "shared",
    "unshared",
    "liked",
    "bookmarked",
];

#[derive(Clone, Debug, PartialEq)]
pub struct FigureData {
    pub series: Vec<SeriesPoint>,
    pub mean: Vec<PositionDwell>,
}

impl FigureData {
    pub fn series_csv(&self) -> Vec<u8> {
        write_rows(&self.series, &SERIES_COLUMNS, ExportFormat::Csv)
    }

    pub fn mean_csv(&self) -> Vec<u8> {
        write_dwell_by_position(&self.mean)
    }

    pub fn session_count(&self) -> usize {
        let mut ids: Vec<&str> = self.series.iter().map(|p| p.session_id.as_str()).collect();
        ids.dedup();
        ids.len()
    }
}

pub fn emit_figure_data(records: &[InteractionRecord]) -> Result<FigureData, ExportError> {
    let mean = dwell_by_position(records)?;
    let mut series: Vec<SeriesPoint> = records
        .iter()
        .filter(|r| r.session_phase_final.is_final())
        .map(|r| SeriesPoint {
            session_id: r.session_id.clone(),
            participant_id: r.participant_id.clone(),
            condition_index: r.condition_index,
            position: r.position,
            entity_id: r.entity_id.clone(),
            dwell_ms: r.dwell_ms,
            shared: r.shared,
            unshared: r.ever_shared && !r.shared,
            liked: r.liked,
            bookmarked: r.bookmarked,
        })
        .collect();
    series.sort_by(|a, b| (&a.session_id, a.position).cmp(&(&b.session_id, b.position)));
    Ok(FigureData { series, mean })
}
