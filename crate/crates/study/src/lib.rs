//! Study service: serves blinded, randomized cases to analysts and records
//! their reviews in an append-only, hash-chained log.
//!
//! [`service::Study`] holds all state behind synchronous methods;
//! [`server`] exposes it over HTTP and [`client`] is a minimal blocking
//! client for scripted sessions.

pub mod assign;
pub mod bundle;
pub mod client;
pub mod error;
pub mod reasons;
pub mod server;
pub mod service;
pub mod store;

pub use bundle::CaseBundle;
pub use error::{StudyError, StudyResult};
pub use service::{Clock, Study, StudyConfig};
