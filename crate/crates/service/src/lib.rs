//! Session service for the interactive task: a phase machine per participant,
//! append-only JSON-lines logs, scoring, behavioral export and an HTTP API.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

pub use api::{router, serve};
pub use error::{ErrorBody, SessionError};
pub use session::*;
pub use store::{log_path, read_log, ServiceConfig, Store};
