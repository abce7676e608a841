use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use feedlab::figure::emit_figure_data;
use feedlab::local::LocalServer;
use feedlab::settings::{open_platform, SECRET_ENV};
use feedlab::sim::fetch_interactions;
use feedlab::{simulate, AgentModel, ApiClient, ExportKind, SimOptions};
use feedlab_core::experiment::ExperimentDraft;
use feedlab_core::export::ExportFormat;
use feedlab_core::journal::Durability;
use feedlab_server::AppState;
use tracing_subscriber::EnvFilter;

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Parser)]
#[command(
    name = "feedlab",
    version,
    about = "Run and administer feed experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Remote {
    /// Base URL of a running server.
    #[arg(long, env = "FEEDLAB_URL")]
    url: Option<String>,
    #[arg(long, env = "FEEDLAB_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
}

impl Remote {
    fn client(&self) -> ApiClient {
        ApiClient::new(
            self.url.as_deref().unwrap_or(DEFAULT_URL),
            self.api_key.clone(),
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "FEEDLAB_DB_PATH", default_value = "feedlab.jsonl")]
        db: PathBuf,
        #[arg(long, env = "FEEDLAB_BIND_ADDR", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "FEEDLAB_API_KEY", hide_env_values = true)]
        api_key: Option<String>,
        #[arg(long, env = SECRET_ENV, hide_env_values = true)]
        token_secret: Option<String>,
        /// Skip fsync after each journal append (faster, not power-loss safe).
        #[arg(long)]
        no_fsync: bool,
    },
    /// Create an experiment from a JSON config.
    Create {
        #[arg(short, long)]
        file: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Upload an entity-set CSV.
    UploadEntities {
        #[arg(short, long)]
        file: PathBuf,
        /// Defaults to the file name without extension.
        #[arg(long)]
        set_id: Option<String>,
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Push synthetic agents through an experiment. Without --url an
    /// in-process server is started for the run.
    Simulate {
        #[arg(short, long)]
        file: PathBuf,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run agents concurrently; results are no longer reproducible.
        #[arg(long)]
        parallel: bool,
        /// Entity sets to upload first, as SET_ID=PATH.
        #[arg(long = "entities", value_name = "SET_ID=PATH")]
        entities: Vec<String>,
        /// JSON file overriding AgentModel fields.
        #[arg(long)]
        agent_model: Option<PathBuf>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Download an export.
    Export {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "interactions")]
        kind: ExportKind,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        /// Output file; stdout if omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Write per-session and mean dwell-by-position CSVs.
    FigureData {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("cannot derive a set id from {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn serve(
    db: &Path,
    bind: SocketAddr,
    api_key: Option<String>,
    secret: Option<&str>,
    fsync: bool,
) -> Result<()> {
    let durability = if fsync {
        Durability::Fsync
    } else {
        Durability::Flush
    };
    let platform = open_platform(db, secret, durability)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        let state = AppState {
            platform: Arc::new(platform),
            api_key: api_key.filter(|k| !k.is_empty()),
        };
        feedlab_server::serve(listener, state).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            db,
            bind,
            api_key,
            token_secret,
            no_fsync,
        } => serve(&db, bind, api_key, token_secret.as_deref(), !no_fsync),
        Command::Create { file, remote } => {
            let draft: ExperimentDraft = read_json(&file)?;
            print_json(&remote.client().create_experiment(&draft)?)
        }
        Command::UploadEntities {
            file,
            set_id,
            name,
            remote,
        } => {
            let set_id = match set_id {
                Some(s) => s,
                None => stem(&file)?,
            };
            let name = name.unwrap_or_else(|| set_id.clone());
            print_json(
                &remote
                    .client()
                    .upload_entity_set(&set_id, &name, &read(&file)?)?,
            )
        }
        Command::Simulate {
            file,
            agents,
            seed,
            parallel,
            entities,
            agent_model,
            remote,
        } => {
            let draft: ExperimentDraft = read_json(&file)?;
            let model: AgentModel = match agent_model {
                Some(p) => read_json(&p)?,
                None => AgentModel::default(),
            };
            let local = match remote.url {
                Some(_) => None,
                None => Some(LocalServer::start()?),
            };
            let client = match &local {
                Some(server) => server.client(),
                None => remote.client(),
            };
            for spec in &entities {
                let Some((set_id, path)) = spec.split_once('=') else {
                    bail!("--entities expects SET_ID=PATH, got `{spec}`");
                };
                client.upload_entity_set(set_id, set_id, &read(Path::new(path))?)?;
            }
            let run = simulate(
                &client,
                draft,
                &model,
                SimOptions {
                    agents,
                    seed,
                    parallel,
                },
            )?;
            eprintln!(
                "simulated {} sessions in {:.2?}",
                run.report.sessions, run.wall_clock
            );
            print_json(&run.report)
        }
        Command::Export {
            id,
            kind,
            format,
            out,
            remote,
        } => {
            let bytes = remote.client().export(&id, kind, format)?;
            match out {
                Some(path) => std::fs::write(&path, bytes)
                    .with_context(|| format!("writing {}", path.display())),
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&bytes)?;
                    Ok(())
                }
            }
        }
        Command::FigureData {
            id,
            out_dir,
            remote,
        } => {
            let records = fetch_interactions(&remote.client(), &id)?;
            let fig = emit_figure_data(&records)?;
            std::fs::create_dir_all(&out_dir)?;
            let series = out_dir.join(format!("{id}_dwell_series.csv"));
            let mean = out_dir.join(format!("{id}_mean_dwell.csv"));
            std::fs::write(&series, fig.series_csv())?;
            std::fs::write(&mean, fig.mean_csv())?;
            eprintln!(
                "{} sessions -> {}, {}",
                fig.session_count(),
                series.display(),
                mean.display()
            );
            Ok(())
        }
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("FEEDLAB_LOG").unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
