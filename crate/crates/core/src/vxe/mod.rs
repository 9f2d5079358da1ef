//! Multi-device virtual execution environments built from a config file,
//! with message routing, shared facts and a coverage-guided fuzzer.

pub mod config;
pub mod coordinator;
pub mod device;
pub mod fuzz;
pub mod run;

pub use config::{load_config, Addr, VxeConfig};
pub use coordinator::{Coordinator, Envelope, FactStore, Mailbox};
pub use device::{build_device, CachePool, Device, WriteLog};
pub use fuzz::{describe_goals, run_fuzz, FuzzEngine, FuzzReport, GoalHit};
pub use run::{run_vxe, DeviceStop, Runtime, VxeReport};
