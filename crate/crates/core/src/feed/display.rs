use rand::Rng;

use super::{DisplayEntry, DisplayFeed, FeedError, OrderedFeed};
use crate::experiment::{EngagementMode, EngagementPolicy, Intervention, InterventionPosition};
use crate::world::WorldAggregates;

/// Attaches the like/share counts each post displays.
///
/// `omitted` shows nothing; `random_sampled` draws likes then shares per post,
/// each uniform on `[sample_low, sample_high]`; `live_world` shows the world
/// snapshot the feed was built against.
pub fn populate_engagement<R: Rng + ?Sized>(
    feed: &OrderedFeed,
    policy: &EngagementPolicy,
    world: &WorldAggregates,
    rng: &mut R,
) -> DisplayFeed {
    let entries = feed
        .positions
        .iter()
        .enumerate()
        .map(|(position, entity_id)| {
            let (shown_likes, shown_shares) = match policy.mode {
                EngagementMode::Omitted => (None, None),
                EngagementMode::RandomSampled => {
                    let range = policy.sample_low..=policy.sample_high;
                    let likes = rng.random_range(range.clone());
                    let shares = rng.random_range(range);
                    (Some(likes), Some(shares))
                }
                EngagementMode::LiveWorld => {
                    let stats = world.stats(entity_id);
                    (Some(stats.likes), Some(stats.shares))
                }
            };
            DisplayEntry {
                entity_id: entity_id.clone(),
                position,
                shown_likes,
                shown_shares,
                interventions_before: Vec::new(),
            }
        })
        .collect();
    DisplayFeed { entries }
}

/// Attaches each intervention exactly once: `fixed(i)` before position `i`,
/// `random` before a position drawn uniformly from the feed.
pub fn place_interventions<R: Rng + ?Sized>(
    mut feed: DisplayFeed,
    interventions: &[Intervention],
    rng: &mut R,
) -> Result<DisplayFeed, FeedError> {
    let len = feed.entries.len();
    if interventions.is_empty() {
        return Ok(feed);
    }
    if len == 0 {
        return Err(FeedError::EmptyInventory);
    }
    for intervention in interventions {
        let at = match intervention.position {
            InterventionPosition::Fixed(index) if index >= len => {
                return Err(FeedError::PositionOutOfRange { index, len })
            }
            InterventionPosition::Fixed(index) => index,
            InterventionPosition::Random => rng.random_range(0..len),
        };
        feed.entries[at]
            .interventions_before
            .push(intervention.clone());
    }
    Ok(feed)
}
