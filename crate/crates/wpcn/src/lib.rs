//! Outage analysis for a wirelessly powered network: a multi-antenna access
//! point charges a field of single-antenna devices over the downlink, then
//! decodes their uplink messages. The library models both sides of that
//! trade, energy delivery (channel-aware beamforming against blind antenna
//! switching) and multiuser decoding (zero-forcing and MMSE equalizers,
//! pilot collisions under random traffic), and composes them into
//! worst-device outage probabilities.
//!
//! Modules:
//! - [`numerics`]: Marcum Q, noncentral chi-squared, and the discrete
//!   message-arrival law the closed forms are built on.
//! - [`scenario`]: physical-layer parameters, ring deployments, Rician
//!   channel sampling.
//! - [`wet`]: downlink energy transfer, precoders, energy-outage laws.
//! - [`wit`]: uplink equalization, pilot planning, information outage.
//! - [`bench`]: scenario files, the sweep engine, and table rendering
//!   behind the `wpcn` command-line tool.

pub mod bench;
pub mod error;
pub mod numerics;
pub mod scenario;
pub mod wet;
pub mod wit;

pub use error::{Error, Result};
