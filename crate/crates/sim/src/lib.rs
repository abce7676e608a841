//! Client, synthetic agents and simulation harness for feedlab.

pub mod agent;
pub mod client;
pub mod figure;
pub mod local;
pub mod settings;
pub mod sim;

pub use agent::AgentModel;
pub use client::{ApiClient, ClientError, ExportKind};
pub use sim::{simulate, SimOptions, SimReport, SimRun};
