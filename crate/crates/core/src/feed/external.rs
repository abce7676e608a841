//! Ranker protocol for researcher-hosted ranking services.
//!
//! The platform POSTs a [`RankerRequest`] and expects `{"order": [...]}`
//! holding a permutation of the request's entity ids. Any failure falls back
//! to a random order so the participant never sees an error.

use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rank_random, Inventory, OrderedFeed};
use crate::experiment::{RankerKind, RankerSpec};
use crate::world::WorldAggregates;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerItem {
    pub entity_id: String,
    pub headline: String,
    pub source_label: Option<String>,
    pub tags: Vec<String>,
    pub created_at: Option<DateTime<Utc>>,
    pub world_shares: u64,
    pub world_likes: u64,
    pub world_mean_dwell_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerRequest {
    pub experiment_id: String,
    pub condition_index: usize,
    pub world_index: usize,
    /// Per-participant seed for rankers that need randomness.
    pub seed: u64,
    pub items: Vec<RankerItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerResponse {
    pub order: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RankerFailure {
    Timeout,
    Unreachable(String),
    BadStatus(u16),
    Malformed(String),
    InvalidPermutation,
}

impl fmt::Display for RankerFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankerFailure::Timeout => write!(f, "ranker_timeout"),
            RankerFailure::Unreachable(why) => write!(f, "ranker_unreachable: {why}"),
            RankerFailure::BadStatus(code) => write!(f, "ranker_bad_status: {code}"),
            RankerFailure::Malformed(why) => write!(f, "ranker_malformed: {why}"),
            RankerFailure::InvalidPermutation => write!(f, "ranker_invalid_permutation"),
        }
    }
}

pub trait RankerTransport: Send + Sync {
    fn rank(
        &self,
        endpoint: &str,
        request: &RankerRequest,
        timeout: Duration,
    ) -> Result<RankerResponse, RankerFailure>;
}

/// Blocking HTTP transport; the timeout bounds the whole exchange.
#[derive(Clone)]
pub struct HttpRankerTransport {
    agent: ureq::Agent,
}

impl Default for HttpRankerTransport {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl RankerTransport for HttpRankerTransport {
    fn rank(
        &self,
        endpoint: &str,
        request: &RankerRequest,
        timeout: Duration,
    ) -> Result<RankerResponse, RankerFailure> {
        let result = self
            .agent
            .post(endpoint)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send_json(request);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(RankerFailure::Timeout),
            Err(e) => return Err(RankerFailure::Unreachable(e.to_string())),
        };
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RankerFailure::BadStatus(status));
        }
        response
            .body_mut()
            .read_json::<RankerResponse>()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => RankerFailure::Timeout,
                other => RankerFailure::Malformed(other.to_string()),
            })
    }
}

pub struct RankContext<'a> {
    pub experiment_id: &'a str,
    pub condition_index: usize,
    pub world_index: usize,
    pub seed: u64,
}

pub fn ranker_request(
    inventory: &Inventory,
    world: &WorldAggregates,
    ctx: &RankContext<'_>,
) -> RankerRequest {
    RankerRequest {
        experiment_id: ctx.experiment_id.to_owned(),
        condition_index: ctx.condition_index,
        world_index: ctx.world_index,
        seed: ctx.seed,
        items: inventory
            .items
            .iter()
            .map(|item| {
                let stats = world.stats(&item.entity.entity_id);
                RankerItem {
                    entity_id: item.entity.entity_id.clone(),
                    headline: item.entity.headline.clone(),
                    source_label: item.entity.source_label.clone(),
                    tags: item.entity.tags.clone(),
                    created_at: item.entity.created_at,
                    world_shares: stats.shares,
                    world_likes: stats.likes,
                    world_mean_dwell_ms: stats.mean_dwell_ms(),
                }
            })
            .collect(),
    }
}

/// Orders the inventory with an external ranker, falling back to a random
/// order (`fallback_applied = true`) on any failure. The failure is returned
/// for the caller to record.
pub fn rank_external<R: Rng + ?Sized>(
    inventory: &Inventory,
    world: &WorldAggregates,
    spec: &RankerSpec,
    ctx: &RankContext<'_>,
    transport: &dyn RankerTransport,
    fallback_rng: &mut R,
) -> (OrderedFeed, Option<RankerFailure>) {
    let outcome = match spec.external_endpoint.as_deref() {
        None => Err(RankerFailure::Unreachable("no endpoint configured".into())),
        Some(endpoint) => transport
            .rank(
                endpoint,
                &ranker_request(inventory, world, ctx),
                Duration::from_millis(spec.timeout_ms),
            )
            .and_then(|reply| {
                if inventory.is_permutation(&reply.order) {
                    Ok(reply.order)
                } else {
                    Err(RankerFailure::InvalidPermutation)
                }
            }),
    };
    match outcome {
        Ok(order) => (
            OrderedFeed {
                positions: order,
                ranker_used: RankerKind::External,
                fallback_applied: false,
            },
            None,
        ),
        Err(failure) => {
            tracing::warn!(
                experiment = ctx.experiment_id,
                condition = ctx.condition_index,
                world = ctx.world_index,
                %failure,
                "external ranker failed; using random order"
            );
            let mut fallback = rank_random(inventory, fallback_rng);
            fallback.ranker_used = RankerKind::External;
            fallback.fallback_applied = true;
            (fallback, Some(failure))
        }
    }
}
