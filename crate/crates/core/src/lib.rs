//! Deterministic protocol engine and simulator for a decentralized compute
//! marketplace.
//!
//! The crate is organized bottom-up:
//!
//! - [`domain`]: value types shared by every engine and the deployment
//!   lifecycle state machine.
//! - [`attestation`]: registry of processor attestations that gates matching.
//! - [`scheduler`]: execution-slot arithmetic, calendars and report windows.
//! - [`reputation`]: the discounted, reward-weighted beta reputation engine.
//! - [`orchestrator`]: deployment registration, matching, report intake and
//!   the escrow ledger.
//! - [`staked`]: the epoch economy (staking weights, reward pools,
//!   delegations, cooldown, slashing).
//! - [`abm`]: agent-based evaluation harness for reputation-gated matching.

pub mod abm;
pub mod attestation;
pub mod domain;
pub mod orchestrator;
pub mod reputation;
pub mod scheduler;
pub mod staked;

pub mod serde_f64;

pub use domain::{AccountId, Amount, DeploymentId, Duration, Timestamp, UNITS_PER_TOKEN};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
