//! Byte-oriented serial port.

use std::collections::VecDeque;

use super::{DeviceMessage, Peripheral};

pub mod serial_regs {
    /// Bit 0 receive ready, bit 1 transmit ready (always set).
    pub const STATUS: u64 = 0x0;
    /// Reading pops one received byte, or 0 when empty.
    pub const RX: u64 = 0x4;
    pub const TX: u64 = 0x8;
    pub const RX_COUNT: u64 = 0xc;
    pub const SIZE: u64 = 0x10;
}

use serial_regs::*;

#[derive(Clone, Debug)]
pub struct SerialPort {
    pub name: String,
    pub base: u64,
    rx: VecDeque<u8>,
    tx: Vec<u8>,
    /// Everything transmitted since creation.
    pub transcript: Vec<u8>,
}

impl SerialPort {
    pub fn new(name: &str, base: u64) -> SerialPort {
        SerialPort {
            name: name.to_string(),
            base,
            rx: VecDeque::new(),
            tx: Vec::new(),
            transcript: Vec::new(),
        }
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.rx.extend(bytes);
    }

    pub fn clear_input(&mut self) {
        self.rx.clear();
    }

    pub fn pending_input(&self) -> usize {
        self.rx.len()
    }
}

impl Peripheral for SerialPort {
    fn name(&self) -> &str {
        &self.name
    }

    fn ranges(&self) -> Vec<(u64, u64)> {
        vec![(self.base, self.base + SIZE)]
    }

    fn read(&mut self, addr: u64, _size: u8) -> u64 {
        match addr - self.base {
            STATUS => (!self.rx.is_empty()) as u64 | 2,
            RX => self.rx.pop_front().unwrap_or(0) as u64,
            RX_COUNT => self.rx.len() as u64,
            _ => 0,
        }
    }

    fn write(&mut self, addr: u64, _size: u8, value: u64) {
        if addr - self.base == TX {
            self.tx.push(value as u8);
            self.transcript.push(value as u8);
        }
    }

    fn deliver(&mut self, msg: &DeviceMessage) -> bool {
        match msg {
            DeviceMessage::Serial(b) => {
                self.feed(b);
                true
            }
            _ => false,
        }
    }

    fn take_output(&mut self) -> Vec<DeviceMessage> {
        if self.tx.is_empty() {
            Vec::new()
        } else {
            vec![DeviceMessage::Serial(std::mem::take(&mut self.tx))]
        }
    }

    fn box_clone(&self) -> Box<dyn Peripheral> {
        Box::new(self.clone())
    }
}
