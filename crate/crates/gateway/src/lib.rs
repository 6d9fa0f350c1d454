//! REST service and command-line front end.

pub mod api;
pub mod cli;

pub use api::{router, AppState, Envelope, ErrorBody, ENDPOINTS};
