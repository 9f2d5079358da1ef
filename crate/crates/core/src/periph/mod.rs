//! Peripheral models: memory-mapped devices, the check solver, and a red-zone monitor.

mod check;
mod fifo;
mod serial;
mod universal;

use std::any::Any;
use std::fmt;

pub use check::{CheckSite, CheckSolver, CheckSolverConfig, Injection, SiteState};
pub use fifo::{fifo_regs, FifoStream};
pub use serial::{serial_regs, SerialPort};
pub use universal::{CmtModel, Direction, Mapping, Model, UniversalPeripheral};

use crate::observe::{Event, EventKind, Filter, Observer, Response};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CanFrame {
    /// 29-bit identifier.
    pub id: u32,
    pub data: Vec<u8>,
}

impl CanFrame {
    pub fn new(id: u32, data: &[u8]) -> Result<CanFrame, String> {
        if id >= 1 << 29 {
            return Err(format!("CAN id 0x{:x} exceeds 29 bits", id));
        }
        if data.len() > 8 {
            return Err(format!("CAN frame has {} data bytes, at most 8 allowed", data.len()));
        }
        Ok(CanFrame { id, data: data.to_vec() })
    }

    pub fn dlc(&self) -> u8 {
        self.data.len() as u8
    }

    /// Parses `HEXID#HEXDATA`.
    pub fn parse(line: &str) -> Result<CanFrame, String> {
        let (id, data) = line.trim().split_once('#').ok_or_else(|| format!("missing '#' in frame {:?}", line))?;
        let id = u32::from_str_radix(id, 16).map_err(|e| format!("bad frame id {:?}: {}", id, e))?;
        let data = hex::decode(data).map_err(|e| format!("bad frame data {:?}: {}", data, e))?;
        CanFrame::new(id, &data)
    }

    /// Parses a replay file, skipping blank lines and `;` comments.
    pub fn parse_replay(text: &str) -> Result<Vec<CanFrame>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with(';'))
            .map(|(i, l)| CanFrame::parse(l).map_err(|e| format!("line {}: {}", i + 1, e)))
            .collect()
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:X}#{}", self.id, hex::encode_upper(&self.data))
    }
}

/// Data exchanged between devices and the coordinator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeviceMessage {
    Can(CanFrame),
    Serial(Vec<u8>),
    Irq(u32),
}

pub trait Peripheral: Any + Send {
    fn name(&self) -> &str;

    /// Half-open address ranges claimed by the device.
    fn ranges(&self) -> Vec<(u64, u64)>;

    fn read(&mut self, addr: u64, size: u8) -> u64;

    fn write(&mut self, addr: u64, size: u8, value: u64);

    /// Advances one architectural instruction. Returns interrupt lines to raise.
    fn tick(&mut self) -> Option<u32> {
        None
    }

    /// Accepts an inbound message. Returns false when the device has no use for it.
    fn deliver(&mut self, _msg: &DeviceMessage) -> bool {
        false
    }

    /// Outbound messages produced since the last call.
    fn take_output(&mut self) -> Vec<DeviceMessage> {
        Vec::new()
    }

    fn box_clone(&self) -> Box<dyn Peripheral>;
}

impl Clone for Box<dyn Peripheral> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Reports firmware writes into a forbidden address range.
#[derive(Clone, Debug, Default)]
pub struct RedZone {
    pub lo: u64,
    pub hi: u64,
    pub hits: Vec<(u64, u64)>,
}

impl RedZone {
    pub fn new(lo: u64, hi: u64) -> RedZone {
        RedZone { lo, hi, hits: Vec::new() }
    }

    pub fn filter(&self) -> Filter {
        Filter::kinds(&[EventKind::MemoryWrite])
    }
}

impl Observer for RedZone {
    fn on_event(&mut self, event: &Event) -> Response {
        if let Event::MemoryWrite { pc, addr, size, .. } = *event {
            if addr < self.hi && addr + size as u64 > self.lo {
                self.hits.push((pc, addr));
            }
        }
        Response::Continue
    }

    fn box_clone(&self) -> Option<Box<dyn Observer>> {
        Some(Box::new(self.clone()))
    }
}
