//! Three-party semi-honest secure inference for 8-bit quantized CNNs over
//! replicated secret sharing in Z_{2^k}.

pub mod arith;
pub mod binary;
pub mod engine;
pub mod error;
pub mod fixture;
pub mod model;
pub mod oracle;
pub mod quant;
pub mod ring;
pub mod session;
pub mod shared;
pub mod trunc;
pub mod transport;

pub use error::{Error, Result};
pub use ring::{Ring, RingElement};
pub use session::{PartySession, SessionSeeds};
pub use transport::PartyId;
