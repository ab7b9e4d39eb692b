//! AZSP framing, payload codecs and the transports that carry them.

mod channel;
mod wire;

pub use channel::{serve, serve_connection, Channel, InProcessChannel, RemoteTeacher, TcpChannel};
pub use wire::*;
