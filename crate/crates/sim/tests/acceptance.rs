//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use feedlab::agent::{answer_survey, script_session, AgentModel};
use feedlab::client::{ApiClient, ExportKind};
use feedlab::local::LocalServer;
use feedlab::sim::{fetch_interactions, participant_id, run_agent, simulate, SimOptions};
use feedlab_core::assignment::AssignmentBook;
use feedlab_core::entity_csv::parse_entity_set_csv;
use feedlab_core::experiment::{
    AssignmentStrategy, Condition, EngagementPolicy, EntitySet, EntitySetDraw, Experiment,
    ExperimentStatus, RankerKind, RankerSpec, Skin,
};
use feedlab_core::export::{
    condition_rates, dwell_by_position, parse_interactions, parse_rows, ExportFormat, PositionDwell,
};
use feedlab_core::feed::{build_feed, FeedRequest, HttpRankerTransport};
use feedlab_core::metrics::{gini, shannon_entropy};
use feedlab_core::rng::{derive_stream, StreamRng};
use feedlab_core::telemetry::{
    compute_dwell, ClientEvent, DwellConfig, EngagementOutcome, EventKind, SessionPhase,
};
use feedlab_core::token::verify_token;
use feedlab_core::world::{WorldKey, WorldStore};
use rand::{Rng, SeedableRng};
use serde_json::json;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn api<T>(r: Result<T, feedlab::ClientError>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(started: Instant, limit: Duration) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}");
    Ok(took)
}

// ---------------------------------------------------------------- dwell

/// Walks the timeline one millisecond at a time. The state at `t` is the last
/// visibility event with timestamp <= t.
fn dwell_oracle(events: &[ClientEvent], horizon: Option<u64>, cfg: &DwellConfig) -> u64 {
    let mut vis: Vec<&ClientEvent> = events
        .iter()
        .filter(|e| e.kind == EventKind::Visibility)
        .collect();
    vis.sort_by_key(|e| e.client_ts_ms);
    let Some(first) = vis.first() else { return 0 };
    let last = vis.last().unwrap().client_ts_ms;
    let end = horizon.unwrap_or(last + cfg.idle_gap_ms);
    let mut idx = 0;
    let mut total = 0u64;
    for t in first.client_ts_ms..end {
        while idx + 1 < vis.len() && vis[idx + 1].client_ts_ms <= t {
            idx += 1;
        }
        let e = vis[idx];
        if e.visible == Some(true) && e.viewport_fraction.unwrap() >= cfg.visibility_threshold {
            total += 1;
        }
    }
    total.min(cfg.per_entity_cap_ms)
}

fn dwell_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = StreamRng::seed_from_u64(0xD3E11);
    let fractions = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut nonzero = 0;
    for case in 0..1000 {
        let thresholds = [0.25, 0.5, 0.75, 1.0];
        let cfg = DwellConfig {
            visibility_threshold: if rng.random_bool(0.5) {
                thresholds[rng.random_range(0..thresholds.len())]
            } else {
                rng.random_range(0.01..=1.0)
            },
            per_entity_cap_ms: rng.random_range(1..=6_000),
            idle_gap_ms: rng.random_range(1..=3_000),
        };
        let n = rng.random_range(0..=50);
        let events: Vec<ClientEvent> = (0..n)
            .map(|_| {
                let ts = rng.random_range(0..5_000);
                if rng.random_bool(0.1) {
                    ClientEvent::engagement(EventKind::Share, "a", ts)
                } else {
                    let f = if rng.random_bool(0.5) {
                        fractions[rng.random_range(0..fractions.len())]
                    } else {
                        rng.random_range(0.0..=1.0)
                    };
                    ClientEvent::visibility("a", ts, rng.random_bool(0.7), f)
                }
            })
            .collect();
        let horizon = rng.random_bool(0.5).then(|| rng.random_range(0..6_000));
        let got = compute_dwell(&events, horizon, &cfg);
        let want = dwell_oracle(&events, horizon, &cfg);
        ensure!(
            got == want,
            "case {case}: compute_dwell={got}, oracle={want}"
        );
        nonzero += usize::from(want > 0);
    }
    let took = within(started, Duration::from_secs(10))?;
    Ok(format!(
        "1000/1000 streams exact ({nonzero} non-zero), {took:.2?}"
    ))
}

// ---------------------------------------------------------------- worlds

fn world_isolation() -> Outcome {
    let started = Instant::now();
    let set = parse_entity_set_csv(common::entity_csv(20).as_bytes(), "pool", "Pool")
        .map_err(|e| e.to_string())?;
    let sets: BTreeMap<String, Arc<EntitySet>> = [("pool".to_owned(), Arc::new(set))].into();
    let experiment = Experiment {
        experiment_id: "iso".into(),
        slug: "iso".into(),
        conditions: vec![Condition {
            condition_index: 0,
            draws: vec![EntitySetDraw {
                set_id: "pool".into(),
                count: 12,
            }],
            ranker: RankerSpec::of(RankerKind::EngagementSort),
            engagement: EngagementPolicy::live_world(),
            world_count: 10,
            skin: Skin::Plain,
            interventions: vec![],
            survey: vec![],
        }],
        assignment_strategy: AssignmentStrategy::Balanced,
        seed: 77,
        status: ExperimentStatus::Live,
        dwell: DwellConfig::default(),
    };
    let condition = &experiment.conditions[0];
    let transport = HttpRankerTransport::default();
    let mut store = WorldStore::new();
    let mut rng = StreamRng::seed_from_u64(11);
    let synthetic = |rng: &mut StreamRng| -> Vec<EngagementOutcome> {
        let shown: Vec<usize> = (0..20).filter(|_| rng.random_bool(0.6)).collect();
        shown
            .into_iter()
            .enumerate()
            .map(|(position, i)| EngagementOutcome {
                entity_id: format!("e{i:02}"),
                position,
                shared: rng.random_bool(0.3),
                ever_shared: true,
                liked: rng.random_bool(0.3),
                ever_liked: true,
                bookmarked: false,
                ever_bookmarked: false,
                dwell_ms: rng.random_range(0..10_000),
            })
            .collect()
    };
    // give world 0 some history so engagement ranking is not trivially by id
    let w0 = WorldKey::new("iso", 0, 0);
    for _ in 0..20 {
        let outcomes = synthetic(&mut rng);
        store.apply(&w0, &outcomes).map_err(|e| e.to_string())?;
    }

    let feeds = |store: &WorldStore, world: usize| -> Result<Vec<u8>, String> {
        let snapshot = store.snapshot(&WorldKey::new("iso", 0, world));
        let mut bytes = Vec::new();
        for p in 0..50 {
            let pid = format!("probe-{p}");
            let built = build_feed(
                &FeedRequest {
                    experiment: &experiment,
                    condition,
                    world: &snapshot,
                    entity_sets: &sets,
                    participant_id: &pid,
                },
                &transport,
            )
            .map_err(|e| e.to_string())?;
            bytes.extend(serde_json::to_vec(&(&built.ordered, &built.display)).unwrap());
        }
        Ok(bytes)
    };
    let before = feeds(&store, 0)?;
    let other_before = feeds(&store, 5)?;
    let version_before = store.snapshot(&w0).version;
    for s in 0..500 {
        let key = WorldKey::new("iso", 0, 1 + s % 9);
        let outcomes = synthetic(&mut rng);
        store.apply(&key, &outcomes).map_err(|e| e.to_string())?;
    }
    let after = feeds(&store, 0)?;
    ensure!(
        before == after,
        "world-0 feeds changed after injecting into worlds 1-9"
    );
    ensure!(
        store.snapshot(&w0).version == version_before,
        "world-0 version moved"
    );
    ensure!(
        feeds(&store, 5)? != other_before,
        "injected sessions had no visible effect on world 5, so the check proves nothing"
    );
    let took = within(started, Duration::from_secs(30))?;
    Ok(format!(
        "50 world-0 feeds bitwise identical ({} bytes) after 500 sessions, {took:.2?}",
        before.len()
    ))
}

// ---------------------------------------------------------------- assignment

fn assignment_experiment(strategy: AssignmentStrategy) -> Experiment {
    Experiment {
        experiment_id: "assign".into(),
        slug: "assign".into(),
        conditions: (0..4)
            .map(|i| Condition {
                condition_index: i,
                draws: vec![EntitySetDraw {
                    set_id: "s".into(),
                    count: 1,
                }],
                ranker: RankerSpec::default(),
                engagement: EngagementPolicy::omitted(),
                world_count: 1,
                skin: Skin::Plain,
                interventions: vec![],
                survey: vec![],
            })
            .collect(),
        assignment_strategy: strategy,
        seed: 2024,
        status: ExperimentStatus::Live,
        dwell: DwellConfig::default(),
    }
}

fn assignment_balance() -> Outcome {
    let exp = assignment_experiment(AssignmentStrategy::Balanced);
    let mut book = AssignmentBook::new(&exp);
    for i in 0..1000 {
        book.get_or_create(&exp, &format!("p{i}"), Utc::now())
            .map_err(|e| e.to_string())?;
        let c = &book.counts.per_condition;
        let spread = c.iter().max().unwrap() - c.iter().min().unwrap();
        ensure!(spread <= 1, "after {} arrivals counts are {c:?}", i + 1);
    }
    let balanced = book.counts.per_condition.clone();

    let exp = assignment_experiment(AssignmentStrategy::UniformRandom);
    let mut book = AssignmentBook::new(&exp);
    for i in 0..100_000 {
        book.get_or_create(&exp, &format!("p{i}"), Utc::now())
            .map_err(|e| e.to_string())?;
    }
    let shares: Vec<f64> = book
        .counts
        .per_condition
        .iter()
        .map(|&c| c as f64 / 100_000.0)
        .collect();
    for (i, s) in shares.iter().enumerate() {
        ensure!(
            (0.245..=0.255).contains(s),
            "uniform condition {i} share {s}"
        );
    }
    Ok(format!("balanced {balanced:?}; uniform shares {shares:?}"))
}

// ---------------------------------------------------------------- diversity

fn pairwise_gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let diffs: f64 = x
        .iter()
        .flat_map(|a| x.iter().map(move |b| (a - b).abs()))
        .sum();
    diffs / (2.0 * n * n * mean)
}

fn diversity_metrics() -> Outcome {
    let m = |r: Result<f64, _>| r.map_err(|e: feedlab_core::metrics::MetricError| e.to_string());
    let g_equal = m(gini(&[1.0, 1.0, 1.0, 1.0]))?;
    let g_conc = m(gini(&[0.0, 0.0, 0.0, 4.0]))?;
    let h = m(shannon_entropy(&[1.0, 1.0, 1.0, 1.0]))?;
    let g3 = m(gini(&[3.0, 1.0, 2.0]))?;
    let brute = pairwise_gini(&[3.0, 1.0, 2.0]);
    ensure!(g_equal.abs() <= 1e-12, "gini([1,1,1,1]) = {g_equal}");
    ensure!((g_conc - 0.75).abs() <= 1e-12, "gini([0,0,0,4]) = {g_conc}");
    ensure!((h - 2.0).abs() <= 1e-12, "entropy(uniform-4) = {h}");
    ensure!((g3 - 0.2222).abs() <= 1e-4, "gini([3,1,2]) = {g3}");
    ensure!(
        (g3 - brute).abs() <= 1e-4,
        "gini([3,1,2]) = {g3}, pairwise = {brute}"
    );
    Ok(format!(
        "{g_equal}, {g_conc}, {h} bits, {g3:.6} (pairwise {brute:.6})"
    ))
}

// ---------------------------------------------------------------- simulation

fn cumulative_advantage() -> Outcome {
    let started = Instant::now();
    let model = AgentModel {
        social_proof_coef: 1.0,
        position_decay: 0.9,
        ..AgentModel::default()
    };
    let seeds: Vec<u64> = (1..=5).collect();
    let handles: Vec<_> = seeds
        .iter()
        .map(|&seed| {
            let model = model.clone();
            std::thread::spawn(move || -> Result<(f64, f64), String> {
                let server = LocalServer::start().map_err(|e| e.to_string())?;
                let client = server.client();
                client
                    .upload_entity_set("pool", "Pool", common::entity_csv(20).as_bytes())
                    .map_err(|e| e.to_string())?;
                let cond = |kind: &str| {
                    json!({
                        "draws": [{"set_id": "pool", "count": 20}],
                        "ranker": {"kind": kind},
                        "engagement": {"mode": "live_world"},
                        "world_count": 10
                    })
                };
                let draft = common::draft(json!({
                    "conditions": [cond("engagement_sort"), cond("random")],
                }));
                let run = simulate(
                    &client,
                    draft,
                    &model,
                    SimOptions {
                        agents: 2000,
                        seed,
                        parallel: false,
                    },
                )
                .map_err(|e| e.to_string())?;
                let per_world: Vec<u64> =
                    run.report.worlds.iter().map(|w| w.session_count).collect();
                if per_world.len() != 20 || per_world.iter().any(|&n| n != 100) {
                    return Err(format!("seed {seed}: sessions per world {per_world:?}"));
                }
                let gini_of = |c: usize| {
                    run.report
                        .diversity
                        .iter()
                        .find(|d| d.condition_index == c)
                        .map(|d| d.mean_gini())
                        .ok_or_else(|| format!("no diversity for condition {c}"))
                };
                Ok((gini_of(0)?, gini_of(1)?))
            })
        })
        .collect();
    let mut wins = 0;
    let mut detail = Vec::new();
    for (seed, h) in seeds.iter().zip(handles) {
        let (engagement, random) = h
            .join()
            .map_err(|_| "simulation thread panicked".to_string())??;
        wins += usize::from(engagement > random);
        detail.push(format!("s{seed}: {engagement:.3}>{random:.3}"));
    }
    let took = within(started, Duration::from_secs(120))?;
    ensure!(
        wins >= 4,
        "engagement ranking more unequal in only {wins}/5 seeds: {}",
        detail.join(", ")
    );
    Ok(format!(
        "{wins}/5 seeds [{}], {took:.1?}",
        detail.join(", ")
    ))
}

fn calibration() -> Outcome {
    let server = LocalServer::start().map_err(|e| e.to_string())?;
    let client = server.client();
    client
        .upload_entity_set("pool", "Pool", common::entity_csv(20).as_bytes())
        .map_err(|e| e.to_string())?;
    let draft = common::draft(json!({
        "conditions": [{
            "draws": [{"set_id": "pool", "count": 20}],
            "ranker": {"kind": "random"},
            "engagement": {"mode": "omitted"}
        }]
    }));
    let run = simulate(
        &client,
        draft,
        &AgentModel::default(),
        SimOptions {
            agents: 500,
            seed: 7,
            parallel: false,
        },
    )
    .map_err(|e| e.to_string())?;
    let rates = &run.report.rates[0];
    ensure!(rates.sessions == 500, "{} sessions", rates.sessions);
    ensure!(
        (rates.share_rate - 0.077).abs() <= 0.02,
        "share rate {}",
        rates.share_rate
    );
    ensure!(
        (rates.like_rate - 0.121).abs() <= 0.02,
        "like rate {}",
        rates.like_rate
    );
    Ok(format!(
        "share {:.4}, like {:.4} over {} impressions",
        rates.share_rate, rates.like_rate, rates.impressions
    ))
}

// ---------------------------------------------------------------- toggles

fn toggle_semantics() -> Outcome {
    let server = LocalServer::start().map_err(|e| e.to_string())?;
    let client = server.client();
    api(client.upload_entity_set("pool", "Pool", common::entity_csv(5).as_bytes()))?;
    let created = api(client.create_experiment(&common::draft(json!({
        "seed": 3,
        "conditions": [{
            "draws": [{"set_id": "pool", "count": 5}],
            "engagement": {"mode": "live_world"}
        }]
    }))))?;
    let boot = api(client.enter(&created.slug, "toggler"))?;
    let a = boot.display_feed[0].entity.entity_id.clone();
    let b = boot.display_feed[1].entity.entity_id.clone();
    let events = vec![
        ClientEvent::visibility(&a, 0, true, 1.0),
        ClientEvent::engagement(EventKind::Share, &a, 100),
        ClientEvent::engagement(EventKind::Unshare, &a, 200),
        ClientEvent::visibility(&a, 300, false, 0.0),
        ClientEvent::visibility(&b, 300, true, 1.0),
        ClientEvent::engagement(EventKind::Share, &b, 400),
        ClientEvent::visibility(&b, 500, false, 0.0),
        ClientEvent::session(EventKind::FeedFinished, 600),
    ];
    let summary = api(client.post_events(&boot.session_id, &events))?;
    ensure!(
        summary.rejected.is_empty(),
        "rejected {:?}",
        summary.rejected
    );
    api(client.submit_survey(&boot.session_id, &BTreeMap::new()))?;

    let records = fetch_interactions(&client, &created.experiment_id).map_err(|e| e.to_string())?;
    let rec = |id: &str| {
        records
            .iter()
            .find(|r| r.entity_id == id)
            .ok_or(format!("{id} not exported"))
    };
    let (ra, rb) = (rec(&a)?, rec(&b)?);
    ensure!(
        !ra.shared && ra.ever_shared,
        "toggled post exported shared={} ever_shared={}",
        ra.shared,
        ra.ever_shared
    );
    ensure!(
        rb.shared && rb.ever_shared,
        "shared post exported shared={}",
        rb.shared
    );

    let next = api(client.enter(&created.slug, "observer"))?;
    let shown = |id: &str| {
        next.display_feed
            .iter()
            .find(|p| p.entity.entity_id == id)
            .and_then(|p| p.shown_shares)
    };
    ensure!(
        shown(&a) == Some(0),
        "toggled post shows {:?} shares",
        shown(&a)
    );
    ensure!(
        shown(&b) == Some(1),
        "shared post shows {:?} shares",
        shown(&b)
    );
    Ok("unshared post exports shared=false, ever_shared=true; world shows it 0 shares, the kept share 1".into())
}

// ---------------------------------------------------------------- external ranker

fn external_ranker() -> Outcome {
    let (stub, seen) = common::spawn_ranker_stub();
    let server = LocalServer::start().map_err(|e| e.to_string())?;
    let client = server.client();
    api(client.upload_entity_set("pool", "Pool", common::entity_csv(10).as_bytes()))?;
    let routes = ["echo", "reverse", "drop", "duplicate", "slow"];
    let conditions: Vec<_> = routes
        .iter()
        .map(|r| {
            json!({
                "draws": [{"set_id": "pool", "count": 10}],
                "ranker": {"kind": "external", "external_endpoint": format!("http://{stub}/{r}"), "timeout_ms": 300}
            })
        })
        .collect();
    let created = api(client.create_experiment(&common::draft(json!({
        "seed": 5,
        "conditions": conditions,
        "assignment_strategy": "balanced"
    }))))?;
    let model = AgentModel::default();
    let mut seen_routes = BTreeMap::new();
    for i in 0..routes.len() * 2 {
        let pid = participant_id(i);
        *seen.lock().unwrap() = None;
        let sid = run_agent(&client, &created.slug, &pid, &model, 5)
            .map_err(|e| format!("{pid}: {e}"))?;
        let session = api(client.session(&sid))?;
        ensure!(
            session.phase == SessionPhase::Complete,
            "{pid} ended in {:?}",
            session.phase
        );
        let route = routes[session.assignment.condition_index];
        let o = &session.ordering;
        let order: Vec<String> = session
            .feed
            .entries
            .iter()
            .map(|d| d.entity_id.clone())
            .collect();
        match route {
            "echo" | "reverse" => {
                ensure!(
                    o.ranker_used == RankerKind::External && !o.fallback_applied,
                    "{route}: ordering {o:?}"
                );
                let req = seen
                    .lock()
                    .unwrap()
                    .clone()
                    .ok_or(format!("{route}: stub saw no request"))?;
                let mut sent: Vec<String> = req.items.into_iter().map(|i| i.entity_id).collect();
                if route == "reverse" {
                    sent.reverse();
                }
                ensure!(
                    order == sent,
                    "{route}: feed {order:?} is not the ranker's order {sent:?}"
                );
            }
            _ => {
                ensure!(
                    o.fallback_applied && o.ranker_used == RankerKind::External,
                    "{route}: ordering {o:?}"
                );
                let want = if route == "slow" {
                    "ranker_timeout"
                } else {
                    "ranker_invalid_permutation"
                };
                ensure!(
                    o.failure.as_deref() == Some(want),
                    "{route}: failure {:?}",
                    o.failure
                );
            }
        }
        *seen_routes.entry(route).or_insert(0) += 1;
    }
    ensure!(
        seen_routes.len() == routes.len(),
        "not every ranker was exercised: {seen_routes:?}"
    );
    Ok(format!(
        "echo/reverse honored; drop/duplicate/slow fell back; all {} sessions completed",
        routes.len() * 2
    ))
}

// ---------------------------------------------------------------- export

fn export_round_trip() -> Outcome {
    let server = LocalServer::start().map_err(|e| e.to_string())?;
    let client = server.client();
    client
        .upload_entity_set("pool", "Pool", common::entity_csv(15).as_bytes())
        .map_err(|e| e.to_string())?;
    let draft = common::draft(json!({
        "conditions": [
            {"draws": [{"set_id": "pool", "count": 12}], "ranker": {"kind": "engagement_sort"},
             "engagement": {"mode": "live_world"}, "world_count": 2,
             "interventions": [{"kind": "interstitial_modal", "position": "random"}],
             "survey": [{"question_id": "trust", "prompt": "Trust?", "response_type": "likert7"}]},
            {"draws": [{"set_id": "pool", "count": 8}], "engagement": {"mode": "random_sampled", "sample_low": 0, "sample_high": 50}}
        ]
    }));
    let model = AgentModel {
        position_decay: 0.95,
        base_share_prob: 0.2,
        renege_prob: 0.1,
        ..AgentModel::default()
    };
    let run = simulate(
        &client,
        draft,
        &model,
        SimOptions {
            agents: 80,
            seed: 21,
            parallel: false,
        },
    )
    .map_err(|e| e.to_string())?;
    let id = &run.report.experiment_id;

    // an unfinished session must not leak into either side
    client
        .enter(&run.report.slug, "straggler")
        .map_err(|e| e.to_string())?;

    let memory = server
        .platform()
        .interaction_records(id)
        .map_err(|e| e.to_string())?;
    let mem_dwell = dwell_by_position(&memory).map_err(|e| e.to_string())?;
    let mem_rates = condition_rates(&memory);
    ensure!(
        mem_rates.len() == 2,
        "rates for {} conditions",
        mem_rates.len()
    );

    for format in [ExportFormat::Csv, ExportFormat::Jsonl] {
        let raw = client
            .export(id, ExportKind::Interactions, format)
            .map_err(|e| e.to_string())?;
        let parsed = parse_interactions(&raw, format).map_err(|e| e.to_string())?;
        ensure!(
            parsed == memory,
            "{format:?}: parsed records differ from in-memory records"
        );
        let dwell = dwell_by_position(&parsed).map_err(|e| e.to_string())?;
        ensure!(
            dwell == mem_dwell,
            "{format:?}: per-position mean dwell differs"
        );
        ensure!(
            condition_rates(&parsed) == mem_rates,
            "{format:?}: per-condition rates differ"
        );
    }
    let served: Vec<PositionDwell> = parse_rows(
        &client
            .dwell_by_position_csv(id)
            .map_err(|e| e.to_string())?,
        ExportFormat::Csv,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        served == mem_dwell,
        "dwell-by-position endpoint differs from in-memory series"
    );
    Ok(format!(
        "{} rows; {} positions; share rates {:?}; exact in CSV and JSONL",
        memory.len(),
        mem_dwell.len(),
        mem_rates.iter().map(|r| r.share_rate).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------- durability

struct Service {
    child: Child,
    client: ApiClient,
}

impl Service {
    fn start(db: &Path, secret: &str) -> Result<Self, String> {
        let port = TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map_err(|e| e.to_string())?
            .port();
        let child = Command::new(env!("CARGO_BIN_EXE_feedlab"))
            .arg("serve")
            .env("FEEDLAB_DB_PATH", db)
            .env("FEEDLAB_BIND_ADDR", format!("127.0.0.1:{port}"))
            .env("FEEDLAB_API_KEY", "durable-key")
            .env("FEEDLAB_TOKEN_SECRET", secret)
            .env("FEEDLAB_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawning feedlab serve: {e}"))?;
        let client = ApiClient::new(
            format!("http://127.0.0.1:{port}"),
            Some("durable-key".into()),
        );
        let mut service = Self { child, client };
        let deadline = Instant::now() + Duration::from_secs(20);
        while !service.client.healthy() {
            if Instant::now() > deadline {
                service.kill();
                return Err("service did not become healthy".into());
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        Ok(service)
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.kill();
    }
}

fn crash_durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let db = dir.path().join("feedlab.jsonl");
    let secret = "durability-secret";

    let mut service = Service::start(&db, secret)?;
    let client = service.client.clone();
    api(client.upload_entity_set("pool", "Pool", common::entity_csv(20).as_bytes()))?;
    let created = api(client.create_experiment(&common::draft(json!({
        "seed": 99,
        "conditions": [{
            "draws": [{"set_id": "pool", "count": 20}],
            "engagement": {"mode": "live_world"},
            "survey": [{"question_id": "q", "prompt": "Rate", "response_type": "likert7"}]
        }]
    }))))?;
    let model = AgentModel::default();
    // a few complete sessions first, then one cut off mid-feed
    for i in 0..3 {
        run_agent(&client, &created.slug, &participant_id(i), &model, 99)
            .map_err(|e| e.to_string())?;
    }
    let pid = participant_id(3);
    let boot = api(client.enter(&created.slug, &pid))?;
    let mut rng = derive_stream(99, "agent", &pid);
    let script = script_session(&model, &boot.display_feed, &mut rng);
    ensure!(
        script.batches.len() >= 4,
        "script has only {} batches",
        script.batches.len()
    );
    let n = 3;
    let mut accepted = 0;
    for batch in &script.batches[..n] {
        let s = api(client.post_events(&boot.session_id, batch))?;
        ensure!(s.rejected.is_empty(), "rejected {:?}", s.rejected);
        accepted += s.accepted;
    }
    service.kill();

    let service = Service::start(&db, secret)?;
    let client = service.client.clone();
    let session = api(client.session(&boot.session_id))?;
    let stored: Vec<ClientEvent> = session.events.iter().map(|r| r.event.clone()).collect();
    let sent: Vec<ClientEvent> = script.batches[..n].concat();
    ensure!(
        stored == sent,
        "after restart {} events stored, {} accepted before the crash",
        stored.len(),
        accepted
    );
    ensure!(
        session.phase == SessionPhase::InFeed,
        "phase after restart {:?}",
        session.phase
    );
    let resumed = api(client.enter(&created.slug, &pid))?;
    ensure!(
        resumed.display_feed == boot.display_feed,
        "resumed feed differs from the original"
    );
    for batch in &script.batches[n..] {
        let s = api(client.post_events(&boot.session_id, batch))?;
        ensure!(
            s.rejected.is_empty(),
            "rejected after restart {:?}",
            s.rejected
        );
    }
    let boot = api(client.enter(&created.slug, &pid))?;
    let questions = boot.survey.ok_or("survey missing after restart")?;
    let receipt =
        api(client.submit_survey(&boot.session_id, &answer_survey(&questions, &mut rng)))?;
    ensure!(
        verify_token(
            secret.as_bytes(),
            &boot.session_id,
            &receipt.completion_token
        ),
        "completion token does not verify"
    );
    let worlds = api(client.worlds(&created.experiment_id))?;
    ensure!(
        worlds[0].session_count == 4,
        "world holds {} sessions",
        worlds[0].session_count
    );
    Ok(format!(
        "{n} batches ({accepted} events) survived kill -9; session completed with token {}",
        receipt.completion_token
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("dwell oracle equivalence", dwell_oracle_equivalence),
        ("world isolation", world_isolation),
        ("assignment balance and uniformity", assignment_balance),
        ("diversity metrics", diversity_metrics),
        ("cumulative-advantage sign test", cumulative_advantage),
        ("simulator calibration", calibration),
        ("toggle semantics", toggle_semantics),
        ("external ranker contract", external_ranker),
        ("export round-trip", export_round_trip),
        ("crash durability", crash_durability),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.2?}]", started.elapsed());
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
