//! Multi-robot ground-station core: a deterministic fleet simulator,
//! per-robot occupancy mapping, phase-correlation map merging, navigation,
//! brokered topic replication and the operator gateway state machines.

pub mod codec;
pub mod error;
pub mod fft;
pub mod gateway;
pub mod geom;
pub mod mapping;
pub mod merge;
pub mod fleet;
pub mod nav;
pub mod record;
pub mod scenario;
pub mod sim;
pub mod station;
