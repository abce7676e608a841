use serde::{Deserialize, Serialize};

use super::{ClientEvent, EventKind};

/// How viewability turns into dwell time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellConfig {
    /// Minimum fraction of the post inside the viewport, in (0, 1].
    #[serde(default = "default_threshold")]
    pub visibility_threshold: f64,
    #[serde(default = "default_cap")]
    pub per_entity_cap_ms: u64,
    /// How long a trailing viewable interval may run when no feed_finished
    /// horizon is known.
    #[serde(default = "default_idle_gap")]
    pub idle_gap_ms: u64,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_cap() -> u64 {
    120_000
}
fn default_idle_gap() -> u64 {
    60_000
}

impl Default for DwellConfig {
    fn default() -> Self {
        Self {
            visibility_threshold: default_threshold(),
            per_entity_cap_ms: default_cap(),
            idle_gap_ms: default_idle_gap(),
        }
    }
}

impl DwellConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return Err(format!(
                "visibility_threshold {} outside (0, 1]",
                self.visibility_threshold
            ));
        }
        if self.per_entity_cap_ms == 0 {
            return Err("per_entity_cap_ms must be positive".into());
        }
        if self.idle_gap_ms == 0 {
            return Err("idle_gap_ms must be positive".into());
        }
        Ok(())
    }

    pub fn is_viewable(&self, visible: Option<bool>, fraction: Option<f64>) -> bool {
        visible == Some(true) && fraction.is_some_and(|f| f >= self.visibility_threshold)
    }
}

/// Total viewable time for one entity.
///
/// The latest visibility event sets the state; time counts while
/// `visible && viewport_fraction >= threshold`. Each interval runs to the
/// next visibility event. A trailing interval ends at `horizon` (the
/// feed_finished timestamp) when known, otherwise `idle_gap_ms` after its
/// start. Nothing at or beyond the horizon counts. The sum is capped at
/// `per_entity_cap_ms`.
///
/// Non-visibility events are ignored; input is stably sorted by timestamp
/// first, so malformed orderings still yield a non-negative result.
pub fn compute_dwell(events: &[ClientEvent], horizon: Option<u64>, config: &DwellConfig) -> u64 {
    let mut timeline: Vec<&ClientEvent> = events
        .iter()
        .filter(|e| e.kind == EventKind::Visibility)
        .collect();
    timeline.sort_by_key(|e| e.client_ts_ms);

    let mut total: u64 = 0;
    for (i, event) in timeline.iter().enumerate() {
        let start = event.client_ts_ms;
        if horizon.is_some_and(|h| start >= h) {
            break;
        }
        if !config.is_viewable(event.visible, event.viewport_fraction) {
            continue;
        }
        let mut end = match timeline.get(i + 1) {
            Some(next) => next.client_ts_ms,
            None => horizon.unwrap_or_else(|| start.saturating_add(config.idle_gap_ms)),
        };
        if let Some(h) = horizon {
            end = end.min(h);
        }
        total = total.saturating_add(end.saturating_sub(start));
    }
    total.min(config.per_entity_cap_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vis(ts: u64, visible: bool, fraction: f64) -> ClientEvent {
        ClientEvent::visibility("a", ts, visible, fraction)
    }

    /// Walks the timeline one millisecond at a time.
    fn brute_force(events: &[ClientEvent], horizon: Option<u64>, config: &DwellConfig) -> u64 {
        let mut sorted: Vec<&ClientEvent> = events.iter().collect();
        sorted.sort_by_key(|e| e.client_ts_ms);
        let Some(first) = sorted.first() else {
            return 0;
        };
        let last = sorted.last().unwrap().client_ts_ms;
        let stop = horizon.unwrap_or(last + config.idle_gap_ms);
        let mut total = 0u64;
        for ms in first.client_ts_ms..stop {
            // the last event at or before this millisecond wins
            let current = sorted.iter().rev().find(|e| e.client_ts_ms <= ms).unwrap();
            if !config.is_viewable(current.visible, current.viewport_fraction) {
                continue;
            }
            let is_trailing = current.client_ts_ms == last;
            if is_trailing && horizon.is_none() && ms >= last + config.idle_gap_ms {
                continue;
            }
            total += 1;
        }
        total.min(config.per_entity_cap_ms)
    }

    #[test]
    fn single_interval() {
        let c = DwellConfig::default();
        assert_eq!(
            compute_dwell(&[vis(0, true, 1.0), vis(1500, false, 0.0)], None, &c),
            1500
        );
    }

    #[test]
    fn below_threshold_counts_nothing() {
        let c = DwellConfig::default();
        assert_eq!(
            compute_dwell(&[vis(0, true, 0.3), vis(1000, false, 0.0)], None, &c),
            0
        );
    }

    #[test]
    fn dip_below_threshold() {
        let c = DwellConfig::default();
        let events = [
            vis(0, true, 1.0),
            vis(500, true, 0.4),
            vis(900, true, 0.8),
            vis(1400, false, 0.0),
        ];
        assert_eq!(brute_force(&events, None, &c), 1000);
        assert_eq!(compute_dwell(&events, None, &c), 1000);
    }

    #[test]
    fn trailing_interval_to_feed_finished_is_capped() {
        let c = DwellConfig::default();
        assert_eq!(
            compute_dwell(&[vis(0, true, 1.0)], Some(300_000), &c),
            120_000
        );
        assert_eq!(compute_dwell(&[vis(0, true, 1.0)], Some(2_000), &c), 2_000);
    }

    #[test]
    fn trailing_interval_without_horizon_stops_after_idle_gap() {
        let c = DwellConfig::default();
        assert_eq!(compute_dwell(&[vis(1_000, true, 1.0)], None, &c), 60_000);
    }

    #[test]
    fn threshold_is_inclusive_and_empty_is_zero() {
        let c = DwellConfig::default();
        assert_eq!(
            compute_dwell(&[vis(0, true, 0.5), vis(10, false, 0.0)], None, &c),
            10
        );
        assert_eq!(compute_dwell(&[], None, &c), 0);
        assert_eq!(compute_dwell(&[], Some(5), &c), 0);
    }

    #[test]
    fn events_past_horizon_are_ignored() {
        let c = DwellConfig::default();
        let events = [
            vis(0, true, 1.0),
            vis(100, false, 0.0),
            vis(500, true, 1.0),
            vis(900, false, 0.0),
        ];
        assert_eq!(compute_dwell(&events, Some(600), &c), 200);
        assert_eq!(compute_dwell(&events, Some(50), &c), 50);
    }

    #[test]
    fn unsorted_input_never_goes_negative() {
        let c = DwellConfig::default();
        let events = [vis(900, false, 0.0), vis(100, true, 1.0)];
        assert_eq!(compute_dwell(&events, None, &c), 800);
    }

    fn arb_stream() -> impl Strategy<Value = Vec<ClientEvent>> {
        proptest::collection::vec((0u64..3000, any::<bool>(), 0.0f64..=1.0), 0..30)
            .prop_map(|raw| raw.into_iter().map(|(t, v, f)| vis(t, v, f)).collect())
    }

    proptest! {
        #[test]
        fn matches_millisecond_oracle(
            events in arb_stream(),
            horizon in proptest::option::of(0u64..4000),
            threshold in 0.05f64..=1.0,
            cap in 1u64..5000,
            idle in 1u64..2000,
        ) {
            let c = DwellConfig { visibility_threshold: threshold, per_entity_cap_ms: cap, idle_gap_ms: idle };
            prop_assert_eq!(compute_dwell(&events, horizon, &c), brute_force(&events, horizon, &c));
        }

        #[test]
        fn adding_a_visible_interval_never_decreases_dwell(
            events in arb_stream(),
            start in 3000u64..4000,
            len in 1u64..500,
        ) {
            let c = DwellConfig { per_entity_cap_ms: u64::MAX, ..DwellConfig::default() };
            let mut closed = events.clone();
            closed.push(vis(2999, false, 0.0));
            let base = compute_dwell(&closed, Some(10_000), &c);
            let mut more = closed.clone();
            more.push(vis(start, true, 1.0));
            more.push(vis(start + len, false, 0.0));
            prop_assert!(compute_dwell(&more, Some(10_000), &c) >= base);
        }
    }
}
