//! Location-aware routing for 6LoWPAN sensor networks.
//!
//! The crate bundles the ELBRP protocol, the LOAD reactive baseline, HiLow
//! hierarchical addressing, the frame codec they share and a deterministic
//! discrete-event simulator that compares them.

pub mod codec;
pub mod elbrp;
pub mod engine;
pub mod forward;
pub mod geo;
pub mod hilow;
pub mod link;
pub mod load;
pub mod metrics;
pub mod node;
pub mod scenario;
pub mod time;
pub mod trace;

pub use codec::{decode, encode, frame_size, CodecError, Packet, PacketType};
pub use engine::{EnergyModel, RadioModel, World};
pub use geo::{euclidean_distance, progress_toward, Location, Terrain};
pub use link::{link_lqi, route_metric, LqiValue};
pub use node::{deploy_nodes, NodeAddress, NodeRole, NodeState};
pub use time::SimTime;
pub use trace::{LogEvent, LogRecord, PacketLog, Reason};
pub use load::{Load, LoadConfig};
pub use metrics::{summarize, MetricsRow, OverheadPolicy, RunMetrics, Summary};
pub use scenario::{run_cell, run_matrix, ConfigError, ProtocolKind, ScenarioConfig};
