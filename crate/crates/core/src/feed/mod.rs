//! Inventory sampling, ranking and display population.

mod display;
mod external;
mod ranking;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{Condition, Entity, EntitySet, Experiment, Intervention, RankerKind};
use crate::rng::{derive_stream, label};
use crate::world::WorldAggregates;

pub use display::{place_interventions, populate_engagement};
pub use external::{
    rank_external, HttpRankerTransport, RankContext, RankerFailure, RankerItem, RankerRequest,
    RankerResponse, RankerTransport,
};
pub use ranking::{rank_by_dwell, rank_by_engagement, rank_chronological, rank_random};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedError {
    #[error("unknown entity set `{0}`")]
    MissingEntitySet(String),
    #[error("cannot draw {count} from `{set_id}` which holds {available}")]
    DrawTooLarge {
        set_id: String,
        count: usize,
        available: usize,
    },
    #[error("inventory is empty")]
    EmptyInventory,
    #[error("entity `{0}` appears in the inventory twice")]
    DuplicateEntity(String),
    #[error("intervention position {index} is outside a feed of {len}")]
    PositionOutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub entity: Entity,
    pub set_id: String,
}

/// The entities sampled for one participant, before ranking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub participant_id: String,
    pub condition_index: usize,
    pub world_index: usize,
    pub items: Vec<InventoryItem>,
}

impl Inventory {
    pub fn entity_ids(&self) -> Vec<String> {
        self.items
            .iter()
            .map(|i| i.entity.entity_id.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&InventoryItem> {
        self.items.iter().find(|i| i.entity.entity_id == entity_id)
    }

    /// True when `order` contains every inventory entity exactly once.
    pub fn is_permutation(&self, order: &[String]) -> bool {
        if order.len() != self.items.len() {
            return false;
        }
        let expected: HashSet<&str> = self
            .items
            .iter()
            .map(|i| i.entity.entity_id.as_str())
            .collect();
        let mut seen = HashSet::with_capacity(order.len());
        order
            .iter()
            .all(|id| expected.contains(id.as_str()) && seen.insert(id.as_str()))
    }
}

/// Samples each draw uniformly without replacement and concatenates the draws.
pub fn build_inventory<R: Rng + ?Sized>(
    condition: &Condition,
    entity_sets: &BTreeMap<String, Arc<EntitySet>>,
    participant_id: &str,
    world_index: usize,
    rng: &mut R,
) -> Result<Inventory, FeedError> {
    let mut items = Vec::with_capacity(condition.feed_len());
    let mut seen = HashSet::new();
    for draw in &condition.draws {
        let set = entity_sets
            .get(&draw.set_id)
            .ok_or_else(|| FeedError::MissingEntitySet(draw.set_id.clone()))?;
        if draw.count > set.len() {
            return Err(FeedError::DrawTooLarge {
                set_id: draw.set_id.clone(),
                count: draw.count,
                available: set.len(),
            });
        }
        for idx in sample(rng, set.len(), draw.count) {
            let entity = set.entities[idx].clone();
            if !seen.insert(entity.entity_id.clone()) {
                return Err(FeedError::DuplicateEntity(entity.entity_id));
            }
            items.push(InventoryItem {
                entity,
                set_id: set.set_id.clone(),
            });
        }
    }
    if items.is_empty() {
        return Err(FeedError::EmptyInventory);
    }
    Ok(Inventory {
        participant_id: participant_id.to_owned(),
        condition_index: condition.condition_index,
        world_index,
        items,
    })
}

/// Ranked entity ids; position 0 is the top of the feed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedFeed {
    pub positions: Vec<String>,
    pub ranker_used: RankerKind,
    pub fallback_applied: bool,
}

/// How a session's feed was ordered, kept for audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedOrdering {
    pub ranker_used: RankerKind,
    pub fallback_applied: bool,
    #[serde(default)]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayEntry {
    pub entity_id: String,
    pub position: usize,
    pub shown_likes: Option<u64>,
    pub shown_shares: Option<u64>,
    /// Interventions shown just before this post, in configuration order.
    #[serde(default)]
    pub interventions_before: Vec<Intervention>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayFeed {
    pub entries: Vec<DisplayEntry>,
}

impl DisplayFeed {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Everything needed to build one participant's feed.
pub struct FeedRequest<'a> {
    pub experiment: &'a Experiment,
    pub condition: &'a Condition,
    pub world: &'a WorldAggregates,
    pub entity_sets: &'a BTreeMap<String, Arc<EntitySet>>,
    pub participant_id: &'a str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltFeed {
    pub inventory: Inventory,
    pub ordered: OrderedFeed,
    pub failure: Option<RankerFailure>,
    pub display: DisplayFeed,
}

impl BuiltFeed {
    pub fn ordering(&self) -> FeedOrdering {
        FeedOrdering {
            ranker_used: self.ordered.ranker_used,
            fallback_applied: self.ordered.fallback_applied,
            failure: self.failure.as_ref().map(ToString::to_string),
        }
    }
}

/// Runs the full pipeline: inventory → rank → engagement → interventions.
///
/// Every random step uses its own stream derived from the experiment seed and
/// participant id, so rebuilding against the same world snapshot reproduces
/// the same feed.
pub fn build_feed(
    req: &FeedRequest<'_>,
    transport: &dyn RankerTransport,
) -> Result<BuiltFeed, FeedError> {
    let seed = req.experiment.seed;
    let pid = req.participant_id;
    let world_index = req.world.world_index;

    let mut inventory_rng = derive_stream(seed, label::INVENTORY, pid);
    let inventory = build_inventory(
        req.condition,
        req.entity_sets,
        pid,
        world_index,
        &mut inventory_rng,
    )?;

    let mut rank_rng = derive_stream(seed, label::RANK, pid);
    let (ordered, failure) = match req.condition.ranker.kind {
        RankerKind::Random => (rank_random(&inventory, &mut rank_rng), None),
        RankerKind::Chronological => (rank_chronological(&inventory), None),
        RankerKind::EngagementSort => (rank_by_engagement(&inventory, req.world), None),
        RankerKind::DwellSort => (rank_by_dwell(&inventory, req.world), None),
        RankerKind::External => {
            let ctx = RankContext {
                experiment_id: &req.experiment.experiment_id,
                condition_index: req.condition.condition_index,
                world_index,
                seed: rank_rng.random(),
            };
            rank_external(
                &inventory,
                req.world,
                &req.condition.ranker,
                &ctx,
                transport,
                &mut rank_rng,
            )
        }
    };
    assert!(
        inventory.is_permutation(&ordered.positions),
        "ranker output must permute the inventory"
    );

    let mut engagement_rng = derive_stream(seed, label::ENGAGEMENT, pid);
    let display = populate_engagement(
        &ordered,
        &req.condition.engagement,
        req.world,
        &mut engagement_rng,
    );
    let mut intervention_rng = derive_stream(seed, label::INTERVENTION, pid);
    let display =
        place_interventions(display, &req.condition.interventions, &mut intervention_rng)?;

    Ok(BuiltFeed {
        inventory,
        ordered,
        failure,
        display,
    })
}
