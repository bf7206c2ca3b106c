//! Frame-streaming render server.
//!
//! Clients connect to `/stream` over WebSocket, steer the session with JSON
//! control messages and receive rendered frames as binary packets. See
//! [`protocol`] for the message set and packet layout.

pub mod protocol;
pub mod server;
pub mod session;

pub use server::{serve, DEFAULT_PORT, MAX_IN_FLIGHT};
pub use session::{Session, SessionFiles};
