//! Per-world engagement aggregates.
//!
//! A world only ever changes when one of its own sessions is finalized.
//! Feed builders read an immutable snapshot (`Arc<WorldAggregates>`), so a
//! feed built against version `v` is unaffected by later applications.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::EngagementOutcome;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityStats {
    pub shares: u64,
    pub likes: u64,
    pub dwell_total_ms: u64,
    pub dwell_sessions: u64,
}

impl EntityStats {
    /// Mean dwell over the sessions that displayed the entity; 0 when never displayed.
    pub fn mean_dwell_ms(&self) -> f64 {
        if self.dwell_sessions == 0 {
            0.0
        } else {
            self.dwell_total_ms as f64 / self.dwell_sessions as f64
        }
    }

    /// Exact comparison of mean dwell without floating point.
    pub fn cmp_mean_dwell(&self, other: &EntityStats) -> Ordering {
        let lhs = u128::from(self.dwell_total_ms) * u128::from(other.dwell_sessions.max(1));
        let rhs = u128::from(other.dwell_total_ms) * u128::from(self.dwell_sessions.max(1));
        lhs.cmp(&rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorldKey {
    pub experiment_id: String,
    pub condition_index: usize,
    pub world_index: usize,
}

impl WorldKey {
    pub fn new(
        experiment_id: impl Into<String>,
        condition_index: usize,
        world_index: usize,
    ) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            condition_index,
            world_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session belongs to {got:?}, not world {expected:?}")]
pub struct WorldMismatch {
    pub expected: WorldKey,
    pub got: WorldKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldAggregates {
    pub experiment_id: String,
    pub condition_index: usize,
    pub world_index: usize,
    pub per_entity: BTreeMap<String, EntityStats>,
    pub session_count: u64,
    pub version: u64,
}

impl WorldAggregates {
    pub fn empty(key: &WorldKey) -> Self {
        Self {
            experiment_id: key.experiment_id.clone(),
            condition_index: key.condition_index,
            world_index: key.world_index,
            per_entity: BTreeMap::new(),
            session_count: 0,
            version: 0,
        }
    }

    pub fn key(&self) -> WorldKey {
        WorldKey::new(&self.experiment_id, self.condition_index, self.world_index)
    }

    /// Stats for an entity; all zeros when the world has never displayed it.
    pub fn stats(&self, entity_id: &str) -> EntityStats {
        self.per_entity.get(entity_id).copied().unwrap_or_default()
    }

    /// Folds one finalized session into the world. Shares and likes count the
    /// final toggle state, so posts that were shared and then unshared add nothing.
    pub fn apply(
        &mut self,
        session_world: &WorldKey,
        outcomes: &[EngagementOutcome],
    ) -> Result<(), WorldMismatch> {
        if *session_world != self.key() {
            return Err(WorldMismatch {
                expected: self.key(),
                got: session_world.clone(),
            });
        }
        for outcome in outcomes {
            let stats = self
                .per_entity
                .entry(outcome.entity_id.clone())
                .or_default();
            stats.shares += u64::from(outcome.shared);
            stats.likes += u64::from(outcome.liked);
            stats.dwell_total_ms += outcome.dwell_ms;
            stats.dwell_sessions += 1;
        }
        self.session_count += 1;
        self.version += 1;
        Ok(())
    }

    /// Share counts over `universe`, in the given order.
    pub fn share_vector(&self, universe: &[String]) -> Vec<f64> {
        universe
            .iter()
            .map(|id| self.stats(id).shares as f64)
            .collect()
    }
}

/// Functional form of [`WorldAggregates::apply`].
pub fn apply_session_summary(
    world: &WorldAggregates,
    session_world: &WorldKey,
    outcomes: &[EngagementOutcome],
) -> Result<WorldAggregates, WorldMismatch> {
    let mut next = world.clone();
    next.apply(session_world, outcomes)?;
    Ok(next)
}

/// All worlds on the platform, keyed by (experiment, condition, world).
#[derive(Clone, Debug, Default)]
pub struct WorldStore {
    worlds: HashMap<WorldKey, Arc<WorldAggregates>>,
}

impl WorldStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self, key: &WorldKey) -> Arc<WorldAggregates> {
        self.worlds
            .get(key)
            .cloned()
            .unwrap_or_else(|| Arc::new(WorldAggregates::empty(key)))
    }

    /// Applies a finalized session. Outstanding snapshots keep their old contents.
    pub fn apply(
        &mut self,
        key: &WorldKey,
        outcomes: &[EngagementOutcome],
    ) -> Result<u64, WorldMismatch> {
        let slot = self
            .worlds
            .entry(key.clone())
            .or_insert_with(|| Arc::new(WorldAggregates::empty(key)));
        let world = Arc::make_mut(slot);
        world.apply(key, outcomes)?;
        Ok(world.version)
    }

    /// Every world of one condition, indexed by world.
    pub fn condition_worlds(
        &self,
        experiment_id: &str,
        condition_index: usize,
        world_count: usize,
    ) -> Vec<Arc<WorldAggregates>> {
        (0..world_count)
            .map(|w| self.snapshot(&WorldKey::new(experiment_id, condition_index, w)))
            .collect()
    }
}
