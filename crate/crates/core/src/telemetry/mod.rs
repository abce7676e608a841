//! Participant event stream, dwell computation and the session state machine.

mod dwell;

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::feed::{DisplayFeed, FeedOrdering};

pub use dwell::{compute_dwell, DwellConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Visibility,
    Share,
    Unshare,
    Like,
    Unlike,
    Bookmark,
    Unbookmark,
    FeedOpened,
    FeedFinished,
}

impl EventKind {
    pub fn needs_entity(self) -> bool {
        !matches!(self, EventKind::FeedOpened | EventKind::FeedFinished)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientEvent {
    #[serde(rename = "type")]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    /// Client monotonic clock, milliseconds.
    pub client_ts_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewport_fraction: Option<f64>,
}

impl ClientEvent {
    pub fn visibility(entity_id: &str, ts: u64, visible: bool, fraction: f64) -> Self {
        Self {
            kind: EventKind::Visibility,
            entity_id: Some(entity_id.to_owned()),
            client_ts_ms: ts,
            visible: Some(visible),
            viewport_fraction: Some(fraction),
        }
    }

    pub fn engagement(kind: EventKind, entity_id: &str, ts: u64) -> Self {
        Self {
            kind,
            entity_id: Some(entity_id.to_owned()),
            client_ts_ms: ts,
            visible: None,
            viewport_fraction: None,
        }
    }

    pub fn session(kind: EventKind, ts: u64) -> Self {
        Self {
            kind,
            entity_id: None,
            client_ts_ms: ts,
            visible: None,
            viewport_fraction: None,
        }
    }

    /// Shape invariants for the event's type.
    pub fn check(&self) -> Result<(), &'static str> {
        if self.kind.needs_entity() && self.entity_id.as_deref().is_none_or(str::is_empty) {
            return Err("missing entity_id");
        }
        if self.kind == EventKind::Visibility {
            if self.visible.is_none() {
                return Err("visibility event without visible");
            }
            match self.viewport_fraction {
                Some(f) if (0.0..=1.0).contains(&f) => {}
                Some(_) => return Err("viewport_fraction outside [0, 1]"),
                None => return Err("visibility event without viewport_fraction"),
            }
        }
        Ok(())
    }

    fn dedup_key(&self) -> (EventKind, Option<&str>, u64) {
        (self.kind, self.entity_id.as_deref(), self.client_ts_ms)
    }
}

/// A stored event with its server receipt time, kept for ordering audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedEvent {
    #[serde(flatten)]
    pub event: ClientEvent,
    pub received_at: DateTime<Utc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Created,
    InFeed,
    InSurvey,
    Complete,
    Abandoned,
}

impl SessionPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionPhase::Created => "created",
            SessionPhase::InFeed => "in_feed",
            SessionPhase::InSurvey => "in_survey",
            SessionPhase::Complete => "complete",
            SessionPhase::Abandoned => "abandoned",
        }
    }

    /// Finalized sessions contribute to their world.
    pub fn is_final(self) -> bool {
        matches!(self, SessionPhase::Complete | SessionPhase::Abandoned)
    }

    pub fn feed_done(self) -> bool {
        matches!(
            self,
            SessionPhase::InSurvey | SessionPhase::Complete | SessionPhase::Abandoned
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub experiment_id: String,
    pub participant_id: String,
    pub assignment: Assignment,
    pub feed: DisplayFeed,
    pub ordering: FeedOrdering,
    pub phase: SessionPhase,
    pub events: Vec<RecordedEvent>,
    /// Client timestamp of feed_finished; truncates dwell.
    pub feed_finished_ts: Option<u64>,
    pub survey_responses: BTreeMap<String, serde_json::Value>,
    pub started_at: DateTime<Utc>,
    pub completed_at: Option<DateTime<Utc>>,
    pub last_activity_at: DateTime<Utc>,
}

impl Session {
    pub fn new(
        session_id: String,
        experiment_id: String,
        assignment: Assignment,
        feed: DisplayFeed,
        ordering: FeedOrdering,
        now: DateTime<Utc>,
    ) -> Self {
        Self {
            session_id,
            experiment_id,
            participant_id: assignment.participant_id.clone(),
            assignment,
            feed,
            ordering,
            phase: SessionPhase::Created,
            events: Vec::new(),
            feed_finished_ts: None,
            survey_responses: BTreeMap::new(),
            started_at: now,
            completed_at: None,
            last_activity_at: now,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TelemetryError {
    #[error("session is {phase:?}; {action} is not allowed")]
    PhaseViolation {
        phase: SessionPhase,
        action: &'static str,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

/// Reply to an event batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    /// Events appended plus exact duplicates of already stored events.
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Timestamp of a feed_finished event appended by this batch.
    #[serde(skip)]
    pub feed_finished: Option<u64>,
    /// Newly appended events, in order.
    #[serde(skip)]
    pub appended: Vec<ClientEvent>,
}

/// Checks a batch against the session and returns what would be appended,
/// without mutating anything.
pub fn plan_ingest(
    session: &Session,
    batch: &[ClientEvent],
) -> Result<IngestSummary, TelemetryError> {
    let mut summary = IngestSummary::default();
    if batch.is_empty() {
        return Ok(summary);
    }
    let stored: HashSet<_> = session.events.iter().map(|r| r.event.dedup_key()).collect();

    if session.phase != SessionPhase::InFeed {
        // retransmission of already stored events stays idempotent
        if batch.iter().all(|e| stored.contains(&e.dedup_key())) {
            summary.accepted = batch.len();
            return Ok(summary);
        }
        return Err(TelemetryError::PhaseViolation {
            phase: session.phase,
            action: "event ingestion",
        });
    }

    let feed_ids: HashSet<&str> = session
        .feed
        .entries
        .iter()
        .map(|e| e.entity_id.as_str())
        .collect();
    let mut last_ts: HashMap<Option<&str>, u64> = HashMap::new();
    for r in &session.events {
        let ts = last_ts.entry(r.event.entity_id.as_deref()).or_insert(0);
        *ts = (*ts).max(r.event.client_ts_ms);
    }
    let mut batch_keys = HashSet::new();

    for (index, event) in batch.iter().enumerate() {
        let reject = |reason: &str| Rejection {
            index,
            reason: reason.to_owned(),
        };
        if summary.feed_finished.is_some() {
            summary.rejected.push(reject("phase_violation"));
            continue;
        }
        if let Err(why) = event.check() {
            summary.rejected.push(reject(&format!("malformed: {why}")));
            continue;
        }
        if let Some(id) = event.entity_id.as_deref() {
            if !feed_ids.contains(id) {
                summary.rejected.push(reject("unknown_entity"));
                continue;
            }
        }
        let key = event.dedup_key();
        if stored.contains(&key) || batch_keys.contains(&key) {
            summary.accepted += 1;
            continue;
        }
        let entity_key = event.entity_id.as_deref();
        if last_ts
            .get(&entity_key)
            .is_some_and(|&t| event.client_ts_ms < t)
        {
            summary.rejected.push(reject("out_of_order"));
            continue;
        }
        last_ts.insert(entity_key, event.client_ts_ms);
        batch_keys.insert(key);
        summary.accepted += 1;
        summary.appended.push(event.clone());
        if event.kind == EventKind::FeedFinished {
            summary.feed_finished = Some(event.client_ts_ms);
        }
    }
    Ok(summary)
}

/// Appends accepted events. Exact duplicates (same type, entity and
/// timestamp) are acknowledged but stored once; events for entities outside
/// the feed, malformed events and events after feed_finished are rejected
/// individually.
pub fn ingest_events(
    session: &mut Session,
    batch: &[ClientEvent],
    received_at: DateTime<Utc>,
) -> Result<IngestSummary, TelemetryError> {
    let summary = plan_ingest(session, batch)?;
    append_events(session, &summary.appended, received_at);
    Ok(summary)
}

/// Unconditionally appends already validated events.
pub fn append_events(session: &mut Session, events: &[ClientEvent], received_at: DateTime<Utc>) {
    if events.is_empty() {
        return;
    }
    session.events.extend(events.iter().map(|e| RecordedEvent {
        event: e.clone(),
        received_at,
    }));
    session.last_activity_at = received_at;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementOutcome {
    pub entity_id: String,
    pub position: usize,
    pub shared: bool,
    pub ever_shared: bool,
    pub liked: bool,
    pub ever_liked: bool,
    pub bookmarked: bool,
    pub ever_bookmarked: bool,
    pub dwell_ms: u64,
}

#[derive(Default)]
struct Toggle {
    on: bool,
    ever: bool,
}

impl Toggle {
    fn set(&mut self, on: bool) {
        self.on = on;
        self.ever |= on;
    }
}

/// Final engagement state and dwell for every displayed entity, in feed order.
pub fn resolve_engagement(
    session: &Session,
    config: &DwellConfig,
) -> Result<Vec<EngagementOutcome>, TelemetryError> {
    if !session.phase.feed_done() {
        return Err(TelemetryError::PhaseViolation {
            phase: session.phase,
            action: "engagement resolution",
        });
    }
    let mut by_entity: HashMap<&str, Vec<&ClientEvent>> = HashMap::new();
    for r in &session.events {
        if let Some(id) = r.event.entity_id.as_deref() {
            by_entity.entry(id).or_default().push(&r.event);
        }
    }
    let outcomes = session
        .feed
        .entries
        .iter()
        .map(|entry| {
            let events = by_entity
                .get(entry.entity_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let (mut share, mut like, mut bookmark) =
                (Toggle::default(), Toggle::default(), Toggle::default());
            let mut visibility = Vec::new();
            for e in events {
                match e.kind {
                    EventKind::Share => share.set(true),
                    EventKind::Unshare => share.set(false),
                    EventKind::Like => like.set(true),
                    EventKind::Unlike => like.set(false),
                    EventKind::Bookmark => bookmark.set(true),
                    EventKind::Unbookmark => bookmark.set(false),
                    EventKind::Visibility => visibility.push((*e).clone()),
                    EventKind::FeedOpened | EventKind::FeedFinished => {}
                }
            }
            EngagementOutcome {
                entity_id: entry.entity_id.clone(),
                position: entry.position,
                shared: share.on,
                ever_shared: share.ever,
                liked: like.on,
                ever_liked: like.ever,
                bookmarked: bookmark.on,
                ever_bookmarked: bookmark.ever,
                dwell_ms: compute_dwell(&visibility, session.feed_finished_ts, config),
            }
        })
        .collect();
    Ok(outcomes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transition", rename_all = "snake_case")]
pub enum Transition {
    OpenFeed,
    FinishFeed {
        client_ts_ms: u64,
    },
    SubmitSurvey {
        responses: BTreeMap<String, serde_json::Value>,
    },
    Abandon,
}

impl Transition {
    fn name(&self) -> &'static str {
        match self {
            Transition::OpenFeed => "open_feed",
            Transition::FinishFeed { .. } => "finish_feed",
            Transition::SubmitSurvey { .. } => "submit_survey",
            Transition::Abandon => "abandon",
        }
    }
}

/// Moves the session forward: created → in_feed → in_survey → complete, or
/// in_feed → abandoned.
pub fn advance_session(
    session: &mut Session,
    transition: Transition,
    now: DateTime<Utc>,
) -> Result<(), TelemetryError> {
    use SessionPhase::*;
    let action = transition.name();
    match (session.phase, transition) {
        (Created, Transition::OpenFeed) => session.phase = InFeed,
        (InFeed, Transition::FinishFeed { client_ts_ms }) => {
            session.feed_finished_ts = Some(client_ts_ms);
            session.phase = InSurvey;
        }
        (InSurvey, Transition::SubmitSurvey { responses }) => {
            session.survey_responses = responses;
            session.phase = Complete;
            session.completed_at = Some(now);
        }
        (InFeed, Transition::Abandon) => {
            session.phase = Abandoned;
            session.completed_at = Some(now);
        }
        (phase, _) => return Err(TelemetryError::PhaseViolation { phase, action }),
    }
    session.last_activity_at = now;
    Ok(())
}
