//! Synthetic participants. An agent scrolls the feed top to bottom; each post
//! is attended with probability `position_decay^position`. Attended posts get
//! a log-normal dwell and independent engagement draws; unattended posts are
//! glanced at below the viewability threshold.

use std::collections::BTreeMap;

use feedlab_core::experiment::{ResponseType, SurveyQuestion};
use feedlab_core::platform::BootstrapPost;
use feedlab_core::telemetry::{ClientEvent, EventKind};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentModel {
    pub base_share_prob: f64,
    pub base_like_prob: f64,
    pub base_bookmark_prob: f64,
    /// Share logit bonus per unit of ln(1 + shown_shares).
    pub social_proof_coef: f64,
    /// Attention at position `i` is `position_decay^i`.
    pub position_decay: f64,
    /// Mean dwell on an attended post.
    pub dwell_base_ms: f64,
    /// Log-scale standard deviation of attended dwell.
    pub dwell_noise: f64,
    /// Probability that a post the agent ends up not sharing was shared and
    /// then unshared.
    pub renege_prob: f64,
    pub glance_ms: u64,
    pub scroll_gap_ms: u64,
    pub interstitial_ms: u64,
    /// Posts per telemetry batch.
    pub batch_posts: usize,
}

impl Default for AgentModel {
    fn default() -> Self {
        Self {
            base_share_prob: 0.077,
            base_like_prob: 0.121,
            base_bookmark_prob: 0.02,
            social_proof_coef: 0.0,
            position_decay: 1.0,
            dwell_base_ms: 4_000.0,
            dwell_noise: 0.5,
            renege_prob: 0.01,
            glance_ms: 300,
            scroll_gap_ms: 200,
            interstitial_ms: 1_500,
            batch_posts: 5,
        }
    }
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("{0} must be within [0, 1]")]
    Probability(&'static str),
    #[error("position_decay must be within (0, 1]")]
    Decay,
    #[error("{0} must be finite and non-negative")]
    NonNegative(&'static str),
    #[error("batch_posts must be at least 1")]
    Batch,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AgentModel {
    pub fn check(&self) -> Result<(), ModelError> {
        for (name, p) in [
            ("base_share_prob", self.base_share_prob),
            ("base_like_prob", self.base_like_prob),
            ("base_bookmark_prob", self.base_bookmark_prob),
            ("renege_prob", self.renege_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::Probability(name));
            }
        }
        if !(self.position_decay > 0.0 && self.position_decay <= 1.0) {
            return Err(ModelError::Decay);
        }
        for (name, v) in [
            ("social_proof_coef", self.social_proof_coef),
            ("dwell_base_ms", self.dwell_base_ms),
            ("dwell_noise", self.dwell_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::NonNegative(name));
            }
        }
        if self.batch_posts == 0 {
            return Err(ModelError::Batch);
        }
        Ok(())
    }

    pub fn attention(&self, position: usize) -> f64 {
        self.position_decay.powi(position as i32)
    }

    /// Share probability given the displayed share count; a hidden count
    /// gives no social proof.
    pub fn share_prob(&self, shown_shares: Option<u64>) -> f64 {
        if self.social_proof_coef == 0.0 {
            return self.base_share_prob;
        }
        let bonus = self.social_proof_coef * (1.0 + shown_shares.unwrap_or(0) as f64).ln();
        sigmoid(logit(self.base_share_prob) + bonus).clamp(0.0, 1.0)
    }

    fn dwell(&self) -> LogNormal<f64> {
        // mean-preserving: E[dwell] = dwell_base_ms
        let sigma = self.dwell_noise;
        LogNormal::new(
            self.dwell_base_ms.max(1.0).ln() - sigma * sigma / 2.0,
            sigma,
        )
        .expect("valid log-normal")
    }
}

/// What an agent will do in the feed, before any of it is sent.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionScript {
    /// Telemetry batches in send order; the last one carries feed_finished.
    pub batches: Vec<Vec<ClientEvent>>,
}

impl SessionScript {
    pub fn event_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

pub fn script_session<R: Rng + ?Sized>(
    model: &AgentModel,
    feed: &[BootstrapPost],
    rng: &mut R,
) -> SessionScript {
    let dwell = model.dwell();
    let mut batches = Vec::new();
    let mut current = vec![ClientEvent::session(EventKind::FeedOpened, 0)];
    let mut t: u64 = 0;
    for (i, post) in feed.iter().enumerate() {
        let id = post.entity.entity_id.as_str();
        if !post.interventions_before.is_empty() {
            t += model.interstitial_ms;
        }
        let attended = rng.random::<f64>() < model.attention(post.position);
        if attended {
            let d = (dwell.sample(rng).round() as u64).max(20);
            current.push(ClientEvent::visibility(
                id,
                t,
                true,
                rng.random_range(0.6..=1.0),
            ));
            let mut at = t + d / 2;
            let mut act = |kind, current: &mut Vec<ClientEvent>| {
                current.push(ClientEvent::engagement(kind, id, at));
                at += 1;
            };
            let shares = rng.random::<f64>() < model.share_prob(post.shown_shares);
            let likes = rng.random::<f64>() < model.base_like_prob;
            let bookmarks = rng.random::<f64>() < model.base_bookmark_prob;
            let reneges = !shares && rng.random::<f64>() < model.renege_prob;
            if shares {
                act(EventKind::Share, &mut current);
            }
            if reneges {
                act(EventKind::Share, &mut current);
                act(EventKind::Unshare, &mut current);
            }
            if likes {
                act(EventKind::Like, &mut current);
            }
            if bookmarks {
                act(EventKind::Bookmark, &mut current);
            }
            current.push(ClientEvent::visibility(id, t + d, false, 0.0));
            t += d;
        } else {
            current.push(ClientEvent::visibility(id, t, true, 0.3));
            current.push(ClientEvent::visibility(id, t + model.glance_ms, false, 0.0));
            t += model.glance_ms;
        }
        t += model.scroll_gap_ms;
        if (i + 1) % model.batch_posts == 0 {
            batches.push(std::mem::take(&mut current));
        }
    }
    current.push(ClientEvent::session(EventKind::FeedFinished, t));
    batches.push(current);
    SessionScript { batches }
}

pub fn answer_survey<R: Rng + ?Sized>(
    questions: &[SurveyQuestion],
    rng: &mut R,
) -> BTreeMap<String, Value> {
    questions
        .iter()
        .map(|q| {
            let v = match q.response_type {
                ResponseType::Likert7 => json!(rng.random_range(1..=7)),
                ResponseType::Numeric => json!(rng.random_range(18..=80)),
                ResponseType::FreeText => json!("no comment"),
            };
            (q.question_id.clone(), v)
        })
        .collect()
}
