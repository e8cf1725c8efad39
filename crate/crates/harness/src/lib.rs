//! Closed-loop simulation harness: controller variants, metrics, campaigns
//! over grids of initial conditions and CSV output.

pub mod campaign;
pub mod compare;
pub mod config;
pub mod error;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod sim;

pub use campaign::{run_campaign, CampaignOptions, CampaignResult, CampaignRow, Summary};
pub use config::{ResolvedConfig, Scenario, ScenarioConfig, VariantKind, VariantSpec};
pub use error::{HarnessError, Result};
pub use metrics::{compute_metrics, Metrics};
pub use sim::{simulate, simulate_config, SimulationRecord, Termination};

/// Environment variable overriding the config seed.
pub const SEED_ENV: &str = "RGMPC_SEED";
