//! Experiment parameter randomizer: condition and world assignment.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{AssignmentStrategy, Condition, Experiment, ExperimentStatus};
use crate::rng::{derive_stream, label};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignmentError {
    #[error("experiment is not accepting participants (status {0:?})")]
    ExperimentClosed(ExperimentStatus),
    #[error("participant id must not be empty")]
    EmptyParticipant,
}

/// Running arrival counts, used by the balanced strategy.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentCounts {
    pub per_condition: Vec<u64>,
    pub per_world: BTreeMap<usize, Vec<u64>>,
}

impl AssignmentCounts {
    pub fn for_experiment(experiment: &Experiment) -> Self {
        Self {
            per_condition: vec![0; experiment.conditions.len()],
            per_world: experiment
                .conditions
                .iter()
                .map(|c| (c.condition_index, vec![0; c.world_count]))
                .collect(),
        }
    }

    pub fn record(&mut self, condition_index: usize, world_index: usize) {
        self.per_condition[condition_index] += 1;
        self.per_world
            .get_mut(&condition_index)
            .expect("condition present")[world_index] += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub participant_id: String,
    pub condition_index: usize,
    pub world_index: usize,
    pub assigned_at: DateTime<Utc>,
}

/// Picks an arm. Uniform draws any index; balanced draws uniformly among the
/// arms currently holding the minimum count.
pub fn choose_arm<R: Rng + ?Sized>(
    strategy: AssignmentStrategy,
    counts: &[u64],
    rng: &mut R,
) -> usize {
    assert!(!counts.is_empty(), "no arms to choose from");
    match strategy {
        AssignmentStrategy::UniformRandom => rng.random_range(0..counts.len()),
        AssignmentStrategy::Balanced => {
            let min = *counts.iter().min().expect("non-empty");
            let candidates: Vec<usize> = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == min)
                .map(|(i, _)| i)
                .collect();
            if candidates.len() == 1 {
                candidates[0]
            } else {
                candidates[rng.random_range(0..candidates.len())]
            }
        }
    }
}

pub fn assign_condition<R: Rng + ?Sized>(
    experiment: &Experiment,
    counts: &AssignmentCounts,
    rng: &mut R,
) -> Result<usize, AssignmentError> {
    if experiment.status != ExperimentStatus::Live {
        return Err(AssignmentError::ExperimentClosed(experiment.status));
    }
    Ok(choose_arm(
        experiment.assignment_strategy,
        &counts.per_condition,
        rng,
    ))
}

pub fn assign_world<R: Rng + ?Sized>(
    strategy: AssignmentStrategy,
    condition: &Condition,
    world_counts: &[u64],
    rng: &mut R,
) -> usize {
    debug_assert_eq!(world_counts.len(), condition.world_count);
    if condition.world_count == 1 {
        return 0;
    }
    choose_arm(strategy, world_counts, rng)
}

/// Stored assignments for one experiment plus its running counts.
#[derive(Clone, Debug, Default)]
pub struct AssignmentBook {
    pub counts: AssignmentCounts,
    assignments: HashMap<String, Assignment>,
}

impl AssignmentBook {
    pub fn new(experiment: &Experiment) -> Self {
        Self {
            counts: AssignmentCounts::for_experiment(experiment),
            assignments: HashMap::new(),
        }
    }

    pub fn get(&self, participant_id: &str) -> Option<&Assignment> {
        self.assignments.get(participant_id)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Draws a fresh assignment without storing it. The stream is derived from
    /// the experiment seed and participant id.
    pub fn draw(
        &self,
        experiment: &Experiment,
        participant_id: &str,
        now: DateTime<Utc>,
    ) -> Result<Assignment, AssignmentError> {
        if participant_id.is_empty() {
            return Err(AssignmentError::EmptyParticipant);
        }
        let mut rng = derive_stream(experiment.seed, label::ASSIGN, participant_id);
        let condition_index = assign_condition(experiment, &self.counts, &mut rng)?;
        let condition = &experiment.conditions[condition_index];
        let world_index = assign_world(
            experiment.assignment_strategy,
            condition,
            &self.counts.per_world[&condition_index],
            &mut rng,
        );
        Ok(Assignment {
            participant_id: participant_id.to_owned(),
            condition_index,
            world_index,
            assigned_at: now,
        })
    }

    /// Stores an assignment. An existing one for the same participant wins.
    pub fn insert(&mut self, assignment: Assignment) -> &Assignment {
        let pid = assignment.participant_id.clone();
        if !self.assignments.contains_key(&pid) {
            self.counts
                .record(assignment.condition_index, assignment.world_index);
            self.assignments.insert(pid.clone(), assignment);
        }
        &self.assignments[&pid]
    }

    pub fn get_or_create(
        &mut self,
        experiment: &Experiment,
        participant_id: &str,
        now: DateTime<Utc>,
    ) -> Result<Assignment, AssignmentError> {
        if let Some(existing) = self.assignments.get(participant_id) {
            return Ok(existing.clone());
        }
        let fresh = self.draw(experiment, participant_id, now)?;
        Ok(self.insert(fresh).clone())
    }
}
