use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Inventory, OrderedFeed};
use crate::experiment::RankerKind;
use crate::world::WorldAggregates;

fn ordered(positions: Vec<String>, kind: RankerKind) -> OrderedFeed {
    OrderedFeed {
        positions,
        ranker_used: kind,
        fallback_applied: false,
    }
}

/// Fisher–Yates shuffle of the inventory.
pub fn rank_random<R: Rng + ?Sized>(inventory: &Inventory, rng: &mut R) -> OrderedFeed {
    let mut ids = inventory.entity_ids();
    ids.shuffle(rng);
    ordered(ids, RankerKind::Random)
}

/// World shares descending, then likes descending, then entity id ascending.
pub fn rank_by_engagement(inventory: &Inventory, world: &WorldAggregates) -> OrderedFeed {
    let mut ids = inventory.entity_ids();
    ids.sort_by(|a, b| {
        let (sa, sb) = (world.stats(a), world.stats(b));
        sb.shares
            .cmp(&sa.shares)
            .then(sb.likes.cmp(&sa.likes))
            .then_with(|| a.cmp(b))
    });
    ordered(ids, RankerKind::EngagementSort)
}

/// World mean dwell descending (never-displayed entities count as 0), then
/// entity id ascending.
pub fn rank_by_dwell(inventory: &Inventory, world: &WorldAggregates) -> OrderedFeed {
    let mut ids = inventory.entity_ids();
    ids.sort_by(|a, b| {
        world
            .stats(b)
            .cmp_mean_dwell(&world.stats(a))
            .then_with(|| a.cmp(b))
    });
    ordered(ids, RankerKind::DwellSort)
}

/// Newest first; a missing `created_at` counts as the Unix epoch. Ties by id.
pub fn rank_chronological(inventory: &Inventory) -> OrderedFeed {
    let mut items: Vec<(i64, u32, &str)> = inventory
        .items
        .iter()
        .map(|i| {
            let ts = i.entity.created_at;
            (
                ts.map_or(0, |t| t.timestamp()),
                ts.map_or(0, |t| t.timestamp_subsec_nanos()),
                i.entity.entity_id.as_str(),
            )
        })
        .collect();
    items.sort_by(|a, b| match (b.0, b.1).cmp(&(a.0, a.1)) {
        Ordering::Equal => a.2.cmp(b.2),
        other => other,
    });
    ordered(
        items.into_iter().map(|(_, _, id)| id.to_owned()).collect(),
        RankerKind::Chronological,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Entity;
    use crate::feed::InventoryItem;
    use crate::rng::{derive_stream, StreamRng};
    use crate::telemetry::EngagementOutcome;
    use crate::world::WorldKey;
    use chrono::DateTime;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::collections::HashMap;

    fn inventory(ids: &[&str]) -> Inventory {
        Inventory {
            participant_id: "p".into(),
            condition_index: 0,
            world_index: 0,
            items: ids
                .iter()
                .map(|id| InventoryItem {
                    entity: Entity::new(*id, "h"),
                    set_id: "s".into(),
                })
                .collect(),
        }
    }

    fn key() -> WorldKey {
        WorldKey::new("e", 0, 0)
    }

    fn outcome(id: &str, shared: bool, liked: bool, dwell: u64) -> EngagementOutcome {
        EngagementOutcome {
            entity_id: id.into(),
            position: 0,
            shared,
            ever_shared: shared,
            liked,
            ever_liked: liked,
            bookmarked: false,
            ever_bookmarked: false,
            dwell_ms: dwell,
        }
    }

    fn world_with(sessions: &[Vec<EngagementOutcome>]) -> WorldAggregates {
        let mut w = WorldAggregates::empty(&key());
        for s in sessions {
            w.apply(&key(), s).unwrap();
        }
        w
    }

    fn shares(counts: &[(&str, u64, u64)]) -> WorldAggregates {
        let mut w = WorldAggregates::empty(&key());
        for (id, s, l) in counts {
            let stats = w.per_entity.entry(id.to_string()).or_default();
            stats.shares = *s;
            stats.likes = *l;
        }
        w
    }

    #[test]
    fn random_single_item() {
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(
            rank_random(&inventory(&["only"]), &mut rng).positions,
            vec!["only"]
        );
    }

    #[test]
    fn random_is_deterministic_per_participant_stream() {
        let inv = inventory(&["a", "b", "c", "d", "e", "f"]);
        let first = rank_random(&inv, &mut derive_stream(5, "rank", "p9"));
        let second = rank_random(&inv, &mut derive_stream(5, "rank", "p9"));
        assert_eq!(first, second);
    }

    #[test]
    fn random_permutations_are_uniform() {
        let inv = inventory(&["a", "b", "c"]);
        let mut rng = StreamRng::seed_from_u64(31);
        let mut hits: HashMap<Vec<String>, u32> = HashMap::new();
        for _ in 0..10_000 {
            *hits
                .entry(rank_random(&inv, &mut rng).positions)
                .or_default() += 1;
        }
        assert_eq!(hits.len(), 6);
        for (perm, h) in hits {
            let f = f64::from(h) / 10_000.0;
            assert!((f - 1.0 / 6.0).abs() <= 0.01, "{perm:?}: {f}");
        }
    }

    #[test]
    fn engagement_order() {
        let inv = inventory(&["a", "b", "c"]);
        let w = shares(&[("a", 3, 0), ("b", 1, 0), ("c", 2, 0)]);
        assert_eq!(rank_by_engagement(&inv, &w).positions, vec!["a", "c", "b"]);
        let empty = WorldAggregates::empty(&key());
        assert_eq!(
            rank_by_engagement(&inventory(&["c", "a", "b"]), &empty).positions,
            vec!["a", "b", "c"]
        );
    }

    #[test]
    fn engagement_ties_break_by_likes() {
        let w = shares(&[("a", 2, 0), ("b", 2, 5)]);
        assert_eq!(
            rank_by_engagement(&inventory(&["a", "b"]), &w).positions,
            vec!["b", "a"]
        );
    }

    #[test]
    fn dwell_order() {
        let w = world_with(&[vec![
            outcome("a", false, false, 1200),
            outcome("b", false, false, 3400),
        ]]);
        assert_eq!(
            rank_by_dwell(&inventory(&["a", "b"]), &w).positions,
            vec!["b", "a"]
        );
        let empty = WorldAggregates::empty(&key());
        assert_eq!(
            rank_by_dwell(&inventory(&["b", "c", "a"]), &empty).positions,
            vec!["a", "b", "c"]
        );
    }

    #[test]
    fn unseen_entities_sink_below_seen_ones() {
        // three sessions: a and c displayed, b and d never displayed
        let w = world_with(&[
            vec![
                outcome("a", false, false, 900),
                outcome("c", false, false, 100),
            ],
            vec![
                outcome("a", false, false, 300),
                outcome("c", false, false, 0),
            ],
            vec![outcome("c", false, false, 500)],
        ]);
        // means: a = 600, c = 200, b = d = 0
        assert_eq!(w.stats("a").mean_dwell_ms(), 600.0);
        assert_eq!(w.stats("c").mean_dwell_ms(), 200.0);
        let order = rank_by_dwell(&inventory(&["d", "c", "b", "a"]), &w).positions;
        assert_eq!(order, vec!["a", "c", "b", "d"]);
    }

    #[test]
    fn chronological_order() {
        let mut inv = inventory(&["old", "new", "mid", "none1", "none0"]);
        let stamp = |s| Some(DateTime::from_timestamp(s, 0).unwrap());
        inv.items[0].entity.created_at = stamp(1_000);
        inv.items[1].entity.created_at = stamp(3_000);
        inv.items[2].entity.created_at = stamp(2_000);
        assert_eq!(
            rank_chronological(&inv).positions,
            vec!["new", "mid", "old", "none0", "none1"]
        );
        let mut same = inventory(&["z", "x", "y"]);
        for item in &mut same.items {
            item.entity.created_at = stamp(500);
        }
        assert_eq!(rank_chronological(&same).positions, vec!["x", "y", "z"]);
    }

    fn arb_world(ids: &[String]) -> impl Strategy<Value = WorldAggregates> {
        let ids = ids.to_vec();
        proptest::collection::vec((0u64..4, 0u64..4, 0u64..3000, 0u64..3), ids.len()).prop_map(
            move |v| {
                let mut w = WorldAggregates::empty(&key());
                for (id, (s, l, d, n)) in ids.iter().zip(v) {
                    let st = w.per_entity.entry(id.clone()).or_default();
                    st.shares = s;
                    st.likes = l;
                    st.dwell_total_ms = d * n;
                    st.dwell_sessions = n;
                }
                w
            },
        )
    }

    proptest! {
        #[test]
        fn built_in_rankers_are_total_orders(
            (ids, w, rot) in proptest::collection::hash_set("[a-f]{1,3}", 1..12)
                .prop_flat_map(|s| {
                    let ids: Vec<String> = s.into_iter().collect();
                    let len = ids.len();
                    (Just(ids.clone()), arb_world(&ids), 0..len)
                })
        ) {
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let inv = inventory(&refs);
            let mut rotated = refs.clone();
            rotated.rotate_left(rot);
            let inv2 = inventory(&rotated);
            // input order never matters
            prop_assert_eq!(rank_by_engagement(&inv, &w), rank_by_engagement(&inv2, &w));
            prop_assert_eq!(rank_by_dwell(&inv, &w), rank_by_dwell(&inv2, &w));
            prop_assert_eq!(rank_chronological(&inv), rank_chronological(&inv2));
            prop_assert!(inv.is_permutation(&rank_by_engagement(&inv, &w).positions));
            prop_assert!(inv.is_permutation(&rank_by_dwell(&inv, &w).positions));
        }
    }
}
