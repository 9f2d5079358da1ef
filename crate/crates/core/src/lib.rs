//! Firmware rehosting toolkit: declarative processor specs, an optimizing
//! lifter, a multi-mode IR executor, peripheral and interrupt models, and a
//! coordinator for running several simulators together.

pub mod archspec;
pub mod asm;
pub mod exec;
pub mod interrupts;
pub mod ir;
pub mod observe;
pub mod optimizer;
pub mod periph;
pub mod semantics;
pub mod symsolve;
pub mod vxe;
