//! Parameterized layers, blocks, and the assembled networks.

pub mod arch;
pub mod blocks;
pub mod init;
pub mod params;

pub use arch::{ArchKind, Network, NetworkConfig, Trace};
pub use params::{Attached, Fwd, ParamStore};
