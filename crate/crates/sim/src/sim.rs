//! Runs synthetic agents against a live server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use feedlab_core::experiment::ExperimentDraft;
use feedlab_core::export::{
    condition_rates, parse_interactions, ConditionRates, ExportError, ExportFormat,
    InteractionRecord,
};
use feedlab_core::metrics::DiversityReport;
use feedlab_core::rng::derive_stream;
use feedlab_core::telemetry::{Rejection, SessionPhase};
use feedlab_core::world::WorldAggregates;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{answer_survey, script_session, AgentModel, ModelError};
use crate::client::{ApiClient, ClientError, ExportKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("invalid agent model: {0}")]
    Model(#[from] ModelError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
    #[error("n_agents must be at least 1")]
    NoAgents,
    #[error("server rejected events for {participant_id}: {rejected:?}")]
    Rejected {
        participant_id: String,
        rejected: Vec<Rejection>,
    },
    #[error("session {0} did not reach the survey")]
    NoSurvey(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub experiment_id: String,
    pub slug: String,
    pub seed: u64,
    pub sessions: usize,
    pub rates: Vec<ConditionRates>,
    pub worlds: Vec<WorldAggregates>,
    pub diversity: Vec<DiversityReport>,
}

/// A report plus the wall-clock time it took; the report alone is
/// reproducible from the seed.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub report: SimReport,
    pub wall_clock: Duration,
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub agents: usize,
    pub seed: u64,
    pub parallel: bool,
}

pub fn participant_id(index: usize) -> String {
    format!("agent-{index:06}")
}

/// One agent's full session: entry, scripted scrolling, survey.
pub fn run_agent(
    client: &ApiClient,
    slug: &str,
    pid: &str,
    model: &AgentModel,
    seed: u64,
) -> Result<String, SimError> {
    let mut rng = derive_stream(seed, "agent", pid);
    let boot = client.enter(slug, pid)?;
    let sid = boot.session_id.clone();
    if boot.phase == SessionPhase::InFeed {
        let script = script_session(model, &boot.display_feed, &mut rng);
        for batch in &script.batches {
            let summary = client.post_events(&sid, batch)?;
            if !summary.rejected.is_empty() {
                return Err(SimError::Rejected {
                    participant_id: pid.to_owned(),
                    rejected: summary.rejected,
                });
            }
        }
    }
    let boot = client.enter(slug, pid)?;
    if boot.phase == SessionPhase::InSurvey {
        let questions = boot.survey.ok_or_else(|| SimError::NoSurvey(sid.clone()))?;
        client.submit_survey(&sid, &answer_survey(&questions, &mut rng))?;
    }
    Ok(sid)
}

/// Creates the experiment and pushes `agents` participants through it.
pub fn simulate(
    client: &ApiClient,
    mut draft: ExperimentDraft,
    model: &AgentModel,
    opts: SimOptions,
) -> Result<SimRun, SimError> {
    model.check()?;
    if opts.agents == 0 {
        return Err(SimError::NoAgents);
    }
    let started = Instant::now();
    draft.seed.get_or_insert(opts.seed);
    let created = client.create_experiment(&draft)?;
    let slug = created.slug.as_str();

    if opts.parallel {
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<SimError>> = Mutex::new(None);
        let workers = std::thread::available_parallelism()
            .map_or(4, |n| n.get())
            .min(opts.agents);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= opts.agents || failure.lock().unwrap().is_some() {
                        break;
                    }
                    if let Err(e) = run_agent(client, slug, &participant_id(i), model, opts.seed) {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
    } else {
        for i in 0..opts.agents {
            run_agent(client, slug, &participant_id(i), model, opts.seed)?;
        }
    }

    let records = fetch_interactions(client, &created.experiment_id)?;
    let report = SimReport {
        experiment_id: created.experiment_id.clone(),
        slug: created.slug.clone(),
        seed: draft.seed.unwrap_or(opts.seed),
        sessions: opts.agents,
        rates: condition_rates(&records),
        worlds: client.worlds(&created.experiment_id)?,
        diversity: client.diversity(&created.experiment_id)?,
    };
    Ok(SimRun {
        report,
        wall_clock: started.elapsed(),
    })
}

pub fn fetch_interactions(
    client: &ApiClient,
    experiment_id: &str,
) -> Result<Vec<InteractionRecord>, SimError> {
    let raw = client.export(experiment_id, ExportKind::Interactions, ExportFormat::Jsonl)?;
    Ok(parse_interactions(&raw, ExportFormat::Jsonl)?)
}
