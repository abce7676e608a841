//! Durable platform state and the operations the HTTP layer exposes.
//!
//! Every mutation is written to the journal before it is applied, and replay
//! goes through the same `apply` path, so a restarted platform is
//! indistinguishable from the one that crashed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assignment::{Assignment, AssignmentBook, AssignmentError};
use crate::entity_csv::{parse_entity_set_csv, EntityCsvError};
use crate::experiment::{
    validate_experiment, ConfigError, Entity, EntitySet, Experiment, ExperimentDraft,
    ExperimentStatus, Intervention, Skin, SurveyQuestion, ValidationContext,
};
use crate::export::{
    diversity_rows, dwell_by_position, sort_interactions, DiversityRow, ExportError,
    InteractionRecord, PositionDwell, SurveyRecord,
};
use crate::feed::{build_feed, FeedError, FeedRequest, RankerTransport};
use crate::journal::{Journal, JournalError, JournalRecord};
use crate::metrics::{diversity_report, DiversityReport, MetricError};
use crate::survey::{response_text, validate_responses, SurveyError};
use crate::telemetry::{
    advance_session, append_events, plan_ingest, resolve_engagement, ClientEvent, DwellConfig,
    IngestSummary, Session, SessionPhase, TelemetryError, Transition,
};
use crate::token::completion_token;
use crate::world::{WorldAggregates, WorldKey, WorldStore};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("no experiment with slug `{0}`")]
    UnknownSlug(String),
    #[error("no experiment `{0}`")]
    UnknownExperiment(String),
    #[error("no session `{0}`")]
    UnknownSession(String),
    #[error("experiment is closed")]
    ExperimentClosed,
    #[error("experiment is not live")]
    ExperimentNotLive,
    #[error("participant id must be 1 to 256 characters")]
    InvalidParticipant,
    #[error("entity set `{0}` already exists")]
    DuplicateEntitySet(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    EntityCsv(#[from] EntityCsvError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

impl PlatformError {
    /// Stable machine-readable code for API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::UnknownSlug(_) => "unknown_slug",
            PlatformError::UnknownExperiment(_) => "unknown_experiment",
            PlatformError::UnknownSession(_) => "unknown_session",
            PlatformError::ExperimentClosed => "experiment_closed",
            PlatformError::ExperimentNotLive => "experiment_not_live",
            PlatformError::InvalidParticipant => "invalid_participant",
            PlatformError::DuplicateEntitySet(_) => "duplicate_entity_set",
            PlatformError::Config(_) => "invalid_config",
            PlatformError::EntityCsv(_) => "invalid_entity_csv",
            PlatformError::Telemetry(_) => "phase_violation",
            PlatformError::Survey(SurveyError::MissingResponse(_)) => "missing_response",
            PlatformError::Survey(_) => "invalid_response",
            PlatformError::Feed(_) => "feed_error",
            PlatformError::Export(ExportError::NoData) => "no_data",
            PlatformError::Export(_) => "export_error",
            PlatformError::Metric(_) => "metric_error",
            PlatformError::Journal(_) => "storage_error",
        }
    }
}

impl From<AssignmentError> for PlatformError {
    fn from(e: AssignmentError) -> Self {
        match e {
            AssignmentError::ExperimentClosed(ExperimentStatus::Closed) => {
                PlatformError::ExperimentClosed
            }
            AssignmentError::ExperimentClosed(_) => PlatformError::ExperimentNotLive,
            AssignmentError::EmptyParticipant => PlatformError::InvalidParticipant,
        }
    }
}

type Result<T, E = PlatformError> = std::result::Result<T, E>;

#[derive(Clone, Debug)]
pub struct PlatformConfig {
    pub token_secret: Vec<u8>,
    /// In-feed sessions idle this long are abandoned by `sweep_abandoned`.
    pub abandon_after: Duration,
}

impl PlatformConfig {
    pub fn new(token_secret: impl Into<Vec<u8>>) -> Self {
        Self {
            token_secret: token_secret.into(),
            abandon_after: Duration::from_secs(30 * 60),
        }
    }
}

/// A post as the client renders it: display metadata plus the full entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPost {
    pub position: usize,
    pub entity_set_id: String,
    pub entity: Entity,
    pub shown_likes: Option<u64>,
    pub shown_shares: Option<u64>,
    pub interventions_before: Vec<Intervention>,
}

/// Everything the participant client needs to render a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionBootstrap {
    pub session_id: String,
    pub phase: SessionPhase,
    pub display_feed: Vec<BootstrapPost>,
    pub skin: Skin,
    /// Withheld until the feed is finished.
    pub survey: Option<Vec<SurveyQuestion>>,
    pub dwell_config: DwellConfig,
    /// Present once the session is complete.
    pub completion_token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedExperiment {
    pub experiment_id: String,
    pub slug: String,
    pub url_path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySetSummary {
    pub set_id: String,
    pub name: String,
    pub entity_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyReceipt {
    pub completion_token: String,
}

/// Deterministic session id for a (experiment, participant) pair.
pub fn session_id_for(experiment_id: &str, participant_id: &str) -> String {
    let mut h = Sha256::new();
    for part in [experiment_id, participant_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    format!("s_{}", &hex::encode(h.finalize())[..20])
}

#[derive(Default)]
struct State {
    entity_sets: BTreeMap<String, Arc<EntitySet>>,
    experiments: HashMap<String, Arc<Experiment>>,
    slugs: HashMap<String, String>,
    books: HashMap<String, AssignmentBook>,
    sessions: HashMap<String, Session>,
    /// Session ids per experiment in start order.
    experiment_sessions: HashMap<String, Vec<String>>,
    worlds: WorldStore,
}

impl State {
    fn experiment(&self, experiment_id: &str) -> Result<&Arc<Experiment>> {
        self.experiments
            .get(experiment_id)
            .ok_or_else(|| PlatformError::UnknownExperiment(experiment_id.to_owned()))
    }

    fn session(&self, session_id: &str) -> Result<&Session> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| PlatformError::UnknownSession(session_id.to_owned()))
    }

    fn session_mut(&mut self, session_id: &str) -> Result<&mut Session> {
        self.sessions
            .get_mut(session_id)
            .ok_or_else(|| PlatformError::UnknownSession(session_id.to_owned()))
    }

    /// Resolves outcomes and folds them into the session's world. Called once,
    /// on the transition into a final phase.
    fn finalize(&mut self, session_id: &str) -> Result<()> {
        let session = self.session(session_id)?;
        let experiment = self.experiment(&session.experiment_id)?;
        let outcomes = resolve_engagement(session, &experiment.dwell)?;
        let key = WorldKey::new(
            &session.experiment_id,
            session.assignment.condition_index,
            session.assignment.world_index,
        );
        self.worlds
            .apply(&key, &outcomes)
            .expect("session key always matches its own world");
        Ok(())
    }

    fn apply(&mut self, record: JournalRecord) -> Result<()> {
        match record {
            JournalRecord::EntitySetUploaded { set } => {
                self.entity_sets.insert(set.set_id.clone(), Arc::new(set));
            }
            JournalRecord::ExperimentCreated { experiment } => {
                self.slugs
                    .insert(experiment.slug.clone(), experiment.experiment_id.clone());
                self.books.insert(
                    experiment.experiment_id.clone(),
                    AssignmentBook::new(&experiment),
                );
                self.experiments
                    .insert(experiment.experiment_id.clone(), Arc::new(experiment));
            }
            JournalRecord::StatusChanged {
                experiment_id,
                status,
            } => {
                let exp = self
                    .experiments
                    .get_mut(&experiment_id)
                    .ok_or_else(|| PlatformError::UnknownExperiment(experiment_id.clone()))?;
                Arc::make_mut(exp).status = status;
            }
            JournalRecord::Assigned {
                experiment_id,
                assignment,
            } => {
                self.books
                    .get_mut(&experiment_id)
                    .ok_or(PlatformError::UnknownExperiment(experiment_id))?
                    .insert(assignment);
            }
            JournalRecord::SessionStarted { session } => {
                self.experiment_sessions
                    .entry(session.experiment_id.clone())
                    .or_default()
                    .push(session.session_id.clone());
                self.sessions.insert(session.session_id.clone(), *session);
            }
            JournalRecord::EventsAppended {
                session_id,
                events,
                received_at,
                feed_finished,
            } => {
                let session = self.session_mut(&session_id)?;
                append_events(session, &events, received_at);
                if let Some(client_ts_ms) = feed_finished {
                    advance_session(
                        session,
                        Transition::FinishFeed { client_ts_ms },
                        received_at,
                    )?;
                }
            }
            JournalRecord::SurveySubmitted {
                session_id,
                responses,
                at,
            } => {
                advance_session(
                    self.session_mut(&session_id)?,
                    Transition::SubmitSurvey { responses },
                    at,
                )?;
                self.finalize(&session_id)?;
            }
            JournalRecord::Abandoned { session_id, at } => {
                advance_session(self.session_mut(&session_id)?, Transition::Abandon, at)?;
                self.finalize(&session_id)?;
            }
        }
        Ok(())
    }
}

struct Inner {
    state: State,
    journal: Box<dyn Journal>,
}

impl Inner {
    /// Write-ahead: the record is durable before state changes.
    fn commit(&mut self, record: JournalRecord) -> Result<()> {
        self.journal.append(&record)?;
        self.state.apply(record)
    }
}

pub struct Platform {
    inner: RwLock<Inner>,
    transport: Arc<dyn RankerTransport>,
    config: PlatformConfig,
}

impl Platform {
    /// Rebuilds state from the journal and serves from there.
    pub fn open(
        mut journal: Box<dyn Journal>,
        transport: Arc<dyn RankerTransport>,
        config: PlatformConfig,
    ) -> Result<Self> {
        let mut state = State::default();
        let records = journal.load()?;
        let replayed = records.len();
        for (i, record) in records.into_iter().enumerate() {
            state.apply(record).map_err(|e| JournalError::Corrupt {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        tracing::info!(
            records = replayed,
            sessions = state.sessions.len(),
            "journal replayed"
        );
        Ok(Self {
            inner: RwLock::new(Inner { state, journal }),
            transport,
            config,
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn token_for(&self, session_id: &str) -> String {
        completion_token(&self.config.token_secret, session_id)
    }

    pub fn upload_entity_set(
        &self,
        csv: &[u8],
        set_id: &str,
        name: &str,
    ) -> Result<EntitySetSummary> {
        let set = parse_entity_set_csv(csv, set_id, name)?;
        set.check()?;
        let summary = EntitySetSummary {
            set_id: set.set_id.clone(),
            name: set.name.clone(),
            entity_count: set.len(),
        };
        let mut inner = self.write();
        if inner.state.entity_sets.contains_key(set_id) {
            return Err(PlatformError::DuplicateEntitySet(set_id.to_owned()));
        }
        inner.commit(JournalRecord::EntitySetUploaded { set })?;
        Ok(summary)
    }

    pub fn entity_sets(&self) -> Vec<EntitySetSummary> {
        self.read()
            .state
            .entity_sets
            .values()
            .map(|s| EntitySetSummary {
                set_id: s.set_id.clone(),
                name: s.name.clone(),
                entity_count: s.len(),
            })
            .collect()
    }

    pub fn create_experiment(&self, draft: ExperimentDraft) -> Result<CreatedExperiment> {
        let mut inner = self.write();
        let taken_slugs: HashSet<String> = inner.state.slugs.keys().cloned().collect();
        let taken_ids: HashSet<String> = inner.state.experiments.keys().cloned().collect();
        let experiment = validate_experiment(
            draft,
            &ValidationContext {
                entity_sets: &inner.state.entity_sets,
                taken_slugs: &taken_slugs,
                taken_ids: &taken_ids,
                fallback_seed: rand::random(),
            },
        )?;
        let created = CreatedExperiment {
            experiment_id: experiment.experiment_id.clone(),
            slug: experiment.slug.clone(),
            url_path: format!("/f/{}", experiment.slug),
        };
        inner.commit(JournalRecord::ExperimentCreated { experiment })?;
        tracing::info!(experiment = %created.experiment_id, slug = %created.slug, "experiment created");
        Ok(created)
    }

    pub fn experiment(&self, experiment_id: &str) -> Result<Arc<Experiment>> {
        self.read().state.experiment(experiment_id).cloned()
    }

    pub fn experiment_by_slug(&self, slug: &str) -> Result<Arc<Experiment>> {
        let inner = self.read();
        let id = inner
            .state
            .slugs
            .get(slug)
            .ok_or_else(|| PlatformError::UnknownSlug(slug.to_owned()))?;
        inner.state.experiment(id).cloned()
    }

    pub fn set_status(&self, experiment_id: &str, status: ExperimentStatus) -> Result<()> {
        let mut inner = self.write();
        inner.state.experiment(experiment_id)?;
        inner.commit(JournalRecord::StatusChanged {
            experiment_id: experiment_id.to_owned(),
            status,
        })
    }

    /// Participant arrival. Re-entry with the same participant id resumes the
    /// existing session, even after the study closes.
    pub fn handle_participant_entry(
        &self,
        slug: &str,
        participant_id: &str,
        now: DateTime<Utc>,
    ) -> Result<SessionBootstrap> {
        if participant_id.is_empty() || participant_id.len() > 256 {
            return Err(PlatformError::InvalidParticipant);
        }
        let experiment = self.experiment_by_slug(slug)?;
        let session_id = session_id_for(&experiment.experiment_id, participant_id);

        // assignment is drawn and stored under the write lock so balanced
        // counts see every arrival
        let (assignment, world, entity_sets) = {
            let mut inner = self.write();
            if let Ok(session) = inner.state.session(&session_id) {
                return self.bootstrap(&inner.state, session);
            }
            let experiment = inner.state.experiment(&experiment.experiment_id)?.clone();
            let book = inner
                .state
                .books
                .get(&experiment.experiment_id)
                .expect("every experiment has a book");
            let assignment = match book.get(participant_id) {
                Some(existing) => existing.clone(),
                None => {
                    let fresh = book.draw(&experiment, participant_id, now)?;
                    inner.commit(JournalRecord::Assigned {
                        experiment_id: experiment.experiment_id.clone(),
                        assignment: fresh.clone(),
                    })?;
                    fresh
                }
            };
            let world = inner.state.worlds.snapshot(&WorldKey::new(
                &experiment.experiment_id,
                assignment.condition_index,
                assignment.world_index,
            ));
            (assignment, world, inner.state.entity_sets.clone())
        };
        if experiment.status == ExperimentStatus::Closed {
            return Err(PlatformError::ExperimentClosed);
        }

        // feed building may call an external ranker; no lock is held
        let session = self.start_session(
            &experiment,
            assignment,
            &world,
            &entity_sets,
            &session_id,
            now,
        )?;

        let mut inner = self.write();
        if let Ok(existing) = inner.state.session(&session_id) {
            // a concurrent entry for the same participant won
            return self.bootstrap(&inner.state, existing);
        }
        inner.commit(JournalRecord::SessionStarted {
            session: Box::new(session),
        })?;
        let session = inner.state.session(&session_id)?;
        tracing::debug!(session = %session_id, condition = session.assignment.condition_index, world = session.assignment.world_index, "session started");
        self.bootstrap(&inner.state, session)
    }

    fn start_session(
        &self,
        experiment: &Experiment,
        assignment: Assignment,
        world: &WorldAggregates,
        entity_sets: &BTreeMap<String, Arc<EntitySet>>,
        session_id: &str,
        now: DateTime<Utc>,
    ) -> Result<Session> {
        let condition = &experiment.conditions[assignment.condition_index];
        let built = build_feed(
            &FeedRequest {
                experiment,
                condition,
                world,
                entity_sets,
                participant_id: &assignment.participant_id,
            },
            self.transport.as_ref(),
        )?;
        let mut session = Session::new(
            session_id.to_owned(),
            experiment.experiment_id.clone(),
            assignment,
            built.display.clone(),
            built.ordering(),
            now,
        );
        advance_session(&mut session, Transition::OpenFeed, now)?;
        Ok(session)
    }

    fn bootstrap(&self, state: &State, session: &Session) -> Result<SessionBootstrap> {
        let experiment = state.experiment(&session.experiment_id)?;
        let condition = &experiment.conditions[session.assignment.condition_index];
        let lookup = entity_lookup(&condition.draws, &state.entity_sets);
        let display_feed = session
            .feed
            .entries
            .iter()
            .map(|entry| {
                let (entity, set_id) = lookup[entry.entity_id.as_str()];
                BootstrapPost {
                    position: entry.position,
                    entity_set_id: set_id.to_owned(),
                    entity: entity.clone(),
                    shown_likes: entry.shown_likes,
                    shown_shares: entry.shown_shares,
                    interventions_before: entry.interventions_before.clone(),
                }
            })
            .collect();
        Ok(SessionBootstrap {
            session_id: session.session_id.clone(),
            phase: session.phase,
            display_feed,
            skin: condition.skin,
            survey: session.phase.feed_done().then(|| condition.survey.clone()),
            dwell_config: experiment.dwell,
            completion_token: (session.phase == SessionPhase::Complete)
                .then(|| self.token_for(&session.session_id)),
        })
    }

    /// Ingests a telemetry batch; a feed_finished event fixes the dwell
    /// horizon and moves the session to the survey.
    pub fn handle_event_batch(
        &self,
        session_id: &str,
        batch: &[ClientEvent],
        now: DateTime<Utc>,
    ) -> Result<IngestSummary> {
        let mut inner = self.write();
        let summary = plan_ingest(inner.state.session(session_id)?, batch)?;
        if !summary.appended.is_empty() {
            inner.commit(JournalRecord::EventsAppended {
                session_id: session_id.to_owned(),
                events: summary.appended.clone(),
                received_at: now,
                feed_finished: summary.feed_finished,
            })?;
        }
        Ok(summary)
    }

    /// Stores survey responses, completes the session and applies its
    /// outcomes to the world. Repeat submissions return the same token.
    pub fn handle_survey_submit(
        &self,
        session_id: &str,
        responses: &BTreeMap<String, serde_json::Value>,
        now: DateTime<Utc>,
    ) -> Result<SurveyReceipt> {
        let mut inner = self.write();
        let session = inner.state.session(session_id)?;
        match session.phase {
            SessionPhase::Complete => {
                return Ok(SurveyReceipt {
                    completion_token: self.token_for(session_id),
                })
            }
            SessionPhase::InSurvey => {}
            phase => {
                return Err(TelemetryError::PhaseViolation {
                    phase,
                    action: "submit_survey",
                }
                .into())
            }
        }
        let experiment = inner.state.experiment(&session.experiment_id)?;
        let questions = &experiment.conditions[session.assignment.condition_index].survey;
        let responses = validate_responses(questions, responses)?;
        inner.commit(JournalRecord::SurveySubmitted {
            session_id: session_id.to_owned(),
            responses,
            at: now,
        })?;
        Ok(SurveyReceipt {
            completion_token: self.token_for(session_id),
        })
    }

    /// Abandons in-feed sessions idle for longer than the configured limit.
    /// Their truncated outcomes still reach the world. Returns the ids.
    pub fn sweep_abandoned(&self, now: DateTime<Utc>) -> Result<Vec<String>> {
        let limit = chrono::Duration::from_std(self.config.abandon_after).expect("sane duration");
        let mut inner = self.write();
        let mut stale: Vec<String> = inner
            .state
            .sessions
            .values()
            .filter(|s| s.phase == SessionPhase::InFeed && now - s.last_activity_at >= limit)
            .map(|s| s.session_id.clone())
            .collect();
        stale.sort();
        for session_id in &stale {
            inner.commit(JournalRecord::Abandoned {
                session_id: session_id.clone(),
                at: now,
            })?;
        }
        if !stale.is_empty() {
            tracing::info!(count = stale.len(), "abandoned idle sessions");
        }
        Ok(stale)
    }

    pub fn session(&self, session_id: &str) -> Result<Session> {
        self.read().state.session(session_id).cloned()
    }

    pub fn session_count(&self, experiment_id: &str) -> Result<usize> {
        let inner = self.read();
        inner.state.experiment(experiment_id)?;
        Ok(inner
            .state
            .experiment_sessions
            .get(experiment_id)
            .map_or(0, Vec::len))
    }

    pub fn world(&self, key: &WorldKey) -> Arc<WorldAggregates> {
        self.read().state.worlds.snapshot(key)
    }

    pub fn worlds(&self, experiment_id: &str) -> Result<Vec<Arc<WorldAggregates>>> {
        let inner = self.read();
        let experiment = inner.state.experiment(experiment_id)?;
        Ok(experiment
            .conditions
            .iter()
            .flat_map(|c| {
                inner
                    .state
                    .worlds
                    .condition_worlds(experiment_id, c.condition_index, c.world_count)
            })
            .collect())
    }

    /// One record per displayed entity for every session whose feed is done,
    /// in export order.
    pub fn interaction_records(&self, experiment_id: &str) -> Result<Vec<InteractionRecord>> {
        let inner = self.read();
        let state = &inner.state;
        let experiment = state.experiment(experiment_id)?;
        let mut records = Vec::new();
        for session_id in state
            .experiment_sessions
            .get(experiment_id)
            .into_iter()
            .flatten()
        {
            let session = state.session(session_id)?;
            if !session.phase.feed_done() {
                continue;
            }
            let condition = &experiment.conditions[session.assignment.condition_index];
            let lookup = entity_lookup(&condition.draws, &state.entity_sets);
            let outcomes = resolve_engagement(session, &experiment.dwell)?;
            let mut seen_intervention = false;
            for (entry, outcome) in session.feed.entries.iter().zip(outcomes) {
                seen_intervention |= !entry.interventions_before.is_empty();
                records.push(InteractionRecord {
                    experiment_id: experiment_id.to_owned(),
                    participant_id: session.participant_id.clone(),
                    session_id: session.session_id.clone(),
                    condition_index: session.assignment.condition_index,
                    world_index: session.assignment.world_index,
                    entity_set_id: lookup[entry.entity_id.as_str()].1.to_owned(),
                    entity_id: outcome.entity_id,
                    position: entry.position,
                    dwell_ms: outcome.dwell_ms,
                    shared: outcome.shared,
                    ever_shared: outcome.ever_shared,
                    liked: outcome.liked,
                    ever_liked: outcome.ever_liked,
                    bookmarked: outcome.bookmarked,
                    ever_bookmarked: outcome.ever_bookmarked,
                    shown_shares: entry.shown_shares,
                    shown_likes: entry.shown_likes,
                    intervention_seen_before: seen_intervention,
                    session_started_at: session.started_at,
                    session_phase_final: session.phase,
                });
            }
        }
        sort_interactions(&mut records);
        Ok(records)
    }

    pub fn survey_records(&self, experiment_id: &str) -> Result<Vec<SurveyRecord>> {
        let inner = self.read();
        let state = &inner.state;
        state.experiment(experiment_id)?;
        let mut sessions: Vec<&Session> = state
            .experiment_sessions
            .get(experiment_id)
            .into_iter()
            .flatten()
            .filter_map(|id| state.sessions.get(id))
            .filter(|s| s.phase == SessionPhase::Complete)
            .collect();
        sessions.sort_by(|a, b| (a.started_at, &a.session_id).cmp(&(b.started_at, &b.session_id)));
        Ok(sessions
            .into_iter()
            .flat_map(|s| {
                s.survey_responses
                    .iter()
                    .map(move |(question_id, value)| SurveyRecord {
                        session_id: s.session_id.clone(),
                        participant_id: s.participant_id.clone(),
                        question_id: question_id.clone(),
                        response_value: response_text(value),
                        responded_at: s
                            .completed_at
                            .expect("complete sessions have a completion time"),
                    })
            })
            .collect())
    }

    pub fn diversity(&self, experiment_id: &str) -> Result<Vec<DiversityReport>> {
        let inner = self.read();
        let state = &inner.state;
        let experiment = state.experiment(experiment_id)?;
        experiment
            .conditions
            .iter()
            .map(|c| {
                let worlds =
                    state
                        .worlds
                        .condition_worlds(experiment_id, c.condition_index, c.world_count);
                let universe: Vec<String> = entity_lookup(&c.draws, &state.entity_sets)
                    .into_keys()
                    .map(str::to_owned)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                Ok(diversity_report(c.condition_index, &worlds, &universe)?)
            })
            .collect()
    }

    pub fn diversity_rows(&self, experiment_id: &str) -> Result<Vec<DiversityRow>> {
        Ok(diversity_rows(&self.diversity(experiment_id)?))
    }

    pub fn dwell_by_position(&self, experiment_id: &str) -> Result<Vec<PositionDwell>> {
        Ok(dwell_by_position(
            &self.interaction_records(experiment_id)?,
        )?)
    }
}

/// entity_id → (entity, set_id) over a condition's drawn sets. Sets within a
/// condition are disjoint, so the mapping is unambiguous.
fn entity_lookup<'a>(
    draws: &[crate::experiment::EntitySetDraw],
    sets: &'a BTreeMap<String, Arc<EntitySet>>,
) -> HashMap<&'a str, (&'a Entity, &'a str)> {
    draws
        .iter()
        .filter_map(|d| sets.get(&d.set_id))
        .flat_map(|set| {
            set.entities
                .iter()
                .map(move |e| (e.entity_id.as_str(), (e, set.set_id.as_str())))
        })
        .collect()
}
