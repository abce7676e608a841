//! Experiment configuration: entities, conditions and their validation.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_stream, label};
use crate::telemetry::DwellConfig;

/// A single feed item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub headline: String,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub source_label: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    /// `None` when the uploaded row left the column empty; rankers treat it as the epoch.
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
}

impl Entity {
    pub fn new(entity_id: impl Into<String>, headline: impl Into<String>) -> Self {
        Self {
            entity_id: entity_id.into(),
            headline: headline.into(),
            body: None,
            image_ref: None,
            source_label: None,
            tags: Vec::new(),
            created_at: None,
        }
    }
}

/// A named pool of entities that conditions draw from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub set_id: String,
    pub name: String,
    pub entities: Vec<Entity>,
}

impl EntitySet {
    /// Builds a set, checking that it is non-empty and entity ids are unique and non-empty.
    pub fn new(
        set_id: impl Into<String>,
        name: impl Into<String>,
        entities: Vec<Entity>,
    ) -> Result<Self, ConfigError> {
        let set = Self {
            set_id: set_id.into(),
            name: name.into(),
            entities,
        };
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.set_id.is_empty() {
            return Err(ConfigError::EmptySetId);
        }
        if self.entities.is_empty() {
            return Err(ConfigError::EmptyEntitySet(self.set_id.clone()));
        }
        let mut seen = HashSet::new();
        for entity in &self.entities {
            if entity.entity_id.is_empty() {
                return Err(ConfigError::EmptyEntityId(self.set_id.clone()));
            }
            if entity.headline.is_empty() {
                return Err(ConfigError::EmptyHeadline(entity.entity_id.clone()));
            }
            if !seen.insert(entity.entity_id.as_str()) {
                return Err(ConfigError::DuplicateEntityId(entity.entity_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.entity_id == entity_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySetDraw {
    pub set_id: String,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    Random,
    Chronological,
    EngagementSort,
    DwellSort,
    External,
}

impl RankerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RankerKind::Random => "random",
            RankerKind::Chronological => "chronological",
            RankerKind::EngagementSort => "engagement_sort",
            RankerKind::DwellSort => "dwell_sort",
            RankerKind::External => "external",
        }
    }
}

fn default_timeout_ms() -> u64 {
    2000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerSpec {
    pub kind: RankerKind,
    #[serde(default)]
    pub external_endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl RankerSpec {
    pub fn of(kind: RankerKind) -> Self {
        Self {
            kind,
            external_endpoint: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn external(endpoint: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            kind: RankerKind::External,
            external_endpoint: Some(endpoint.into()),
            timeout_ms,
        }
    }
}

impl Default for RankerSpec {
    fn default() -> Self {
        Self::of(RankerKind::Random)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementMode {
    Omitted,
    RandomSampled,
    LiveWorld,
}

/// What like/share counts a post displays.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementPolicy {
    pub mode: EngagementMode,
    /// Bounds are inclusive and only consulted for `random_sampled`.
    #[serde(default)]
    pub sample_low: u64,
    #[serde(default)]
    pub sample_high: u64,
}

impl EngagementPolicy {
    pub fn omitted() -> Self {
        Self {
            mode: EngagementMode::Omitted,
            sample_low: 0,
            sample_high: 0,
        }
    }

    pub fn random_sampled(low: u64, high: u64) -> Self {
        Self {
            mode: EngagementMode::RandomSampled,
            sample_low: low,
            sample_high: high,
        }
    }

    pub fn live_world() -> Self {
        Self {
            mode: EngagementMode::LiveWorld,
            sample_low: 0,
            sample_high: 0,
        }
    }
}

impl Default for EngagementPolicy {
    fn default() -> Self {
        Self::omitted()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skin {
    #[default]
    Plain,
    FacebookLike,
    InstagramLike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    InterstitialModal,
    /// Display-only slot; the client decides how to render it.
    AdvertisementSlot,
}

/// Where an intervention is attached: before a fixed feed position, or at a
/// position drawn per participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionPosition {
    Fixed(usize),
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub kind: InterventionKind,
    pub position: InterventionPosition,
    #[serde(default)]
    pub content: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Likert7,
    FreeText,
    Numeric,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub question_id: String,
    pub prompt: String,
    pub response_type: ResponseType,
    #[serde(default = "default_true")]
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_index: usize,
    pub draws: Vec<EntitySetDraw>,
    pub ranker: RankerSpec,
    pub engagement: EngagementPolicy,
    pub world_count: usize,
    pub skin: Skin,
    pub interventions: Vec<Intervention>,
    pub survey: Vec<SurveyQuestion>,
}

impl Condition {
    /// Number of posts every participant in this condition sees.
    pub fn feed_len(&self) -> usize {
        self.draws.iter().map(|d| d.count).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStrategy {
    UniformRandom,
    #[default]
    Balanced,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Draft,
    #[default]
    Live,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub experiment_id: String,
    pub slug: String,
    pub conditions: Vec<Condition>,
    pub assignment_strategy: AssignmentStrategy,
    pub seed: u64,
    pub status: ExperimentStatus,
    pub dwell: DwellConfig,
}

impl Experiment {
    pub fn condition(&self, index: usize) -> Option<&Condition> {
        self.conditions.get(index)
    }
}

/// A condition as authored; omitted fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionDraft {
    #[serde(default)]
    pub condition_index: Option<usize>,
    pub draws: Vec<EntitySetDraw>,
    #[serde(default)]
    pub ranker: RankerSpec,
    #[serde(default)]
    pub engagement: EngagementPolicy,
    #[serde(default = "default_world_count")]
    pub world_count: usize,
    #[serde(default)]
    pub skin: Skin,
    #[serde(default)]
    pub interventions: Vec<Intervention>,
    #[serde(default)]
    pub survey: Vec<SurveyQuestion>,
}

fn default_world_count() -> usize {
    1
}

/// The experiment configuration document researchers submit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDraft {
    #[serde(default)]
    pub experiment_id: Option<String>,
    #[serde(default)]
    pub slug: Option<String>,
    pub conditions: Vec<ConditionDraft>,
    #[serde(default)]
    pub assignment_strategy: AssignmentStrategy,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub status: ExperimentStatus,
    #[serde(default)]
    pub dwell: DwellConfig,
}

impl From<Condition> for ConditionDraft {
    fn from(c: Condition) -> Self {
        Self {
            condition_index: Some(c.condition_index),
            draws: c.draws,
            ranker: c.ranker,
            engagement: c.engagement,
            world_count: c.world_count,
            skin: c.skin,
            interventions: c.interventions,
            survey: c.survey,
        }
    }
}

impl From<Experiment> for ExperimentDraft {
    fn from(e: Experiment) -> Self {
        Self {
            experiment_id: Some(e.experiment_id),
            slug: Some(e.slug),
            conditions: e.conditions.into_iter().map(Into::into).collect(),
            assignment_strategy: e.assignment_strategy,
            seed: Some(e.seed),
            status: e.status,
            dwell: e.dwell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("experiment has no conditions")]
    EmptyConditions,
    #[error("condition {condition} has no entity set draws")]
    EmptyDraws { condition: usize },
    #[error("condition {condition} references unknown entity set `{set_id}`")]
    MissingEntitySet { condition: usize, set_id: String },
    #[error("condition {condition} draws {count} from `{set_id}` which holds {available}")]
    DrawTooLarge {
        condition: usize,
        set_id: String,
        count: usize,
        available: usize,
    },
    #[error("condition {condition} draws zero items from `{set_id}`")]
    ZeroDraw { condition: usize, set_id: String },
    #[error("condition {condition} draws from `{set_id}` more than once")]
    DuplicateDraw { condition: usize, set_id: String },
    #[error("condition {condition} draws entity `{entity_id}` from more than one set")]
    OverlappingEntities { condition: usize, entity_id: String },
    #[error("condition {condition} declares index {declared}")]
    ConditionIndexMismatch { condition: usize, declared: usize },
    #[error("condition {condition}: {reason}")]
    InvalidRanker { condition: usize, reason: String },
    #[error("condition {condition}: engagement sample_low {low} exceeds sample_high {high}")]
    InvalidEngagementBounds {
        condition: usize,
        low: u64,
        high: u64,
    },
    #[error("condition {condition}: world_count must be at least 1")]
    InvalidWorldCount { condition: usize },
    #[error("condition {condition}: intervention at fixed position {index} but feed has {feed_len} posts")]
    InterventionOutOfRange {
        condition: usize,
        index: usize,
        feed_len: usize,
    },
    #[error("condition {condition}: duplicate survey question `{question_id}`")]
    DuplicateQuestion {
        condition: usize,
        question_id: String,
    },
    #[error("condition {condition}: survey question id is empty")]
    EmptyQuestionId { condition: usize },
    #[error("slug `{0}` is already in use")]
    DuplicateSlug(String),
    #[error("experiment id `{0}` is already in use")]
    DuplicateExperimentId(String),
    #[error("slug `{0}` must be 1-64 characters of [A-Za-z0-9_-]")]
    InvalidSlug(String),
    #[error("experiment id must not be empty")]
    EmptyExperimentId,
    #[error("invalid dwell configuration: {0}")]
    InvalidDwellConfig(String),
    #[error("entity set id must not be empty")]
    EmptySetId,
    #[error("entity set `{0}` is empty")]
    EmptyEntitySet(String),
    #[error("entity set `{0}` contains an empty entity_id")]
    EmptyEntityId(String),
    #[error("entity `{0}` has an empty headline")]
    EmptyHeadline(String),
    #[error("duplicate entity_id `{0}`")]
    DuplicateEntityId(String),
}

/// Everything `validate_experiment` needs to know about the platform.
pub struct ValidationContext<'a> {
    pub entity_sets: &'a BTreeMap<String, std::sync::Arc<EntitySet>>,
    pub taken_slugs: &'a HashSet<String>,
    pub taken_ids: &'a HashSet<String>,
    /// Used only when the draft carries no seed.
    pub fallback_seed: u64,
}

const BASE62: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

fn base62_string(seed: u64, purpose: &str, attempt: u32, len: usize) -> String {
    let mut rng = derive_stream(seed, purpose, &attempt.to_string());
    (0..len)
        .map(|_| BASE62[rng.random_range(0..BASE62.len())] as char)
        .collect()
}

pub fn is_valid_slug(slug: &str) -> bool {
    !slug.is_empty()
        && slug.len() <= 64
        && slug
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Checks a draft against every configuration invariant and returns the
/// normalized experiment, generating an id and slug when absent.
pub fn validate_experiment(
    draft: ExperimentDraft,
    ctx: &ValidationContext<'_>,
) -> Result<Experiment, ConfigError> {
    if draft.conditions.is_empty() {
        return Err(ConfigError::EmptyConditions);
    }
    draft
        .dwell
        .check()
        .map_err(ConfigError::InvalidDwellConfig)?;
    let seed = draft.seed.unwrap_or(ctx.fallback_seed);

    let mut conditions = Vec::with_capacity(draft.conditions.len());
    for (index, cd) in draft.conditions.into_iter().enumerate() {
        conditions.push(validate_condition(index, cd, ctx)?);
    }

    let slug = match draft.slug {
        Some(slug) => {
            if !is_valid_slug(&slug) {
                return Err(ConfigError::InvalidSlug(slug));
            }
            if ctx.taken_slugs.contains(&slug) {
                return Err(ConfigError::DuplicateSlug(slug));
            }
            slug
        }
        None => (0u32..)
            .map(|attempt| base62_string(seed, label::SLUG, attempt, 10))
            .find(|s| !ctx.taken_slugs.contains(s))
            .expect("slug space exhausted"),
    };

    let experiment_id = match draft.experiment_id {
        Some(id) => {
            if id.is_empty() {
                return Err(ConfigError::EmptyExperimentId);
            }
            if ctx.taken_ids.contains(&id) {
                return Err(ConfigError::DuplicateExperimentId(id));
            }
            id
        }
        None => (0u32..)
            .map(|attempt| {
                format!(
                    "exp_{}",
                    base62_string(seed, label::EXPERIMENT_ID, attempt, 12)
                )
            })
            .find(|s| !ctx.taken_ids.contains(s))
            .expect("id space exhausted"),
    };

    Ok(Experiment {
        experiment_id,
        slug,
        conditions,
        assignment_strategy: draft.assignment_strategy,
        seed,
        status: draft.status,
        dwell: draft.dwell,
    })
}

fn validate_condition(
    index: usize,
    cd: ConditionDraft,
    ctx: &ValidationContext<'_>,
) -> Result<Condition, ConfigError> {
    if let Some(declared) = cd.condition_index {
        if declared != index {
            return Err(ConfigError::ConditionIndexMismatch {
                condition: index,
                declared,
            });
        }
    }
    if cd.draws.is_empty() {
        return Err(ConfigError::EmptyDraws { condition: index });
    }

    let mut drawn_sets = HashSet::new();
    let mut drawn_entities = HashSet::new();
    for draw in &cd.draws {
        let set =
            ctx.entity_sets
                .get(&draw.set_id)
                .ok_or_else(|| ConfigError::MissingEntitySet {
                    condition: index,
                    set_id: draw.set_id.clone(),
                })?;
        if draw.count == 0 {
            return Err(ConfigError::ZeroDraw {
                condition: index,
                set_id: draw.set_id.clone(),
            });
        }
        if draw.count > set.len() {
            return Err(ConfigError::DrawTooLarge {
                condition: index,
                set_id: draw.set_id.clone(),
                count: draw.count,
                available: set.len(),
            });
        }
        if !drawn_sets.insert(draw.set_id.as_str()) {
            return Err(ConfigError::DuplicateDraw {
                condition: index,
                set_id: draw.set_id.clone(),
            });
        }
        for entity in &set.entities {
            if !drawn_entities.insert(entity.entity_id.as_str()) {
                return Err(ConfigError::OverlappingEntities {
                    condition: index,
                    entity_id: entity.entity_id.clone(),
                });
            }
        }
    }

    match (cd.ranker.kind, &cd.ranker.external_endpoint) {
        (RankerKind::External, None) => {
            return Err(ConfigError::InvalidRanker {
                condition: index,
                reason: "external ranker requires external_endpoint".into(),
            })
        }
        (RankerKind::External, Some(url))
            if !(url.starts_with("http://") || url.starts_with("https://")) =>
        {
            return Err(ConfigError::InvalidRanker {
                condition: index,
                reason: format!("external_endpoint `{url}` is not an http(s) URL"),
            })
        }
        (kind, Some(_)) if kind != RankerKind::External => {
            return Err(ConfigError::InvalidRanker {
                condition: index,
                reason: format!("external_endpoint given for `{}` ranker", kind.as_str()),
            })
        }
        _ => {}
    }
    if cd.ranker.timeout_ms == 0 {
        return Err(ConfigError::InvalidRanker {
            condition: index,
            reason: "timeout_ms must be positive".into(),
        });
    }

    if cd.engagement.sample_low > cd.engagement.sample_high {
        return Err(ConfigError::InvalidEngagementBounds {
            condition: index,
            low: cd.engagement.sample_low,
            high: cd.engagement.sample_high,
        });
    }
    if cd.world_count == 0 {
        return Err(ConfigError::InvalidWorldCount { condition: index });
    }

    let feed_len: usize = cd.draws.iter().map(|d| d.count).sum();
    for intervention in &cd.interventions {
        if let InterventionPosition::Fixed(at) = intervention.position {
            if at >= feed_len {
                return Err(ConfigError::InterventionOutOfRange {
                    condition: index,
                    index: at,
                    feed_len,
                });
            }
        }
    }

    let mut questions = HashSet::new();
    for q in &cd.survey {
        if q.question_id.is_empty() {
            return Err(ConfigError::EmptyQuestionId { condition: index });
        }
        if !questions.insert(q.question_id.as_str()) {
            return Err(ConfigError::DuplicateQuestion {
                condition: index,
                question_id: q.question_id.clone(),
            });
        }
    }

    Ok(Condition {
        condition_index: index,
        draws: cd.draws,
        ranker: cd.ranker,
        engagement: cd.engagement,
        world_count: cd.world_count,
        skin: cd.skin,
        interventions: cd.interventions,
        survey: cd.survey,
    })
}
