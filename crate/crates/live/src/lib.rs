//! Real-time landing sessions: a human pilot flies against a planner-controlled aircraft while
//! the simulation advances one 20 s tick per wall-clock tick period.

pub mod protocol;
pub mod quantize;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, OpponentKind, ServerMessage, PROTOCOL_VERSION};
pub use quantize::{quantize, Control};
pub use server::{router, run, serve, AppState, ServeError};
pub use session::{Session, SessionError};
