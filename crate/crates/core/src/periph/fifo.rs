//! CAN receive FIFO with a transmit register set.

use std::collections::VecDeque;

use super::{CanFrame, DeviceMessage, Peripheral};

/// Register offsets from the device base.
pub mod fifo_regs {
    /// Bit 0 data available, bits 8..16 frames left in the queue.
    pub const STATUS: u64 = 0x00;
    /// Bit 0 next message; the reset bit position is configurable.
    pub const CTRL: u64 = 0x04;
    pub const RX_ID: u64 = 0x08;
    pub const RX_DLC: u64 = 0x0c;
    pub const RX_DATA_LO: u64 = 0x10;
    pub const RX_DATA_HI: u64 = 0x14;
    pub const TX_ID: u64 = 0x18;
    pub const TX_DLC: u64 = 0x1c;
    pub const TX_DATA_LO: u64 = 0x20;
    pub const TX_DATA_HI: u64 = 0x24;
    /// Any write sends the frame held in the transmit registers.
    pub const TX_SEND: u64 = 0x28;
    pub const SIZE: u64 = 0x30;
}

use fifo_regs::*;

#[derive(Clone, Debug)]
pub struct FifoStream {
    pub name: String,
    pub base: u64,
    pub reset_bit: u32,
    queue: VecDeque<CanFrame>,
    data_available: bool,
    rx: CanFrame,
    tx_id: u32,
    tx_dlc: u8,
    tx_data: [u8; 8],
    sent: Vec<DeviceMessage>,
}

fn pack(data: &[u8]) -> u64 {
    data.iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as u64) << (8 * i))
}

impl FifoStream {
    pub fn new(name: &str, base: u64, reset_bit: u32) -> FifoStream {
        FifoStream {
            name: name.to_string(),
            base,
            reset_bit,
            queue: VecDeque::new(),
            data_available: false,
            rx: CanFrame { id: 0, data: Vec::new() },
            tx_id: 0,
            tx_dlc: 0,
            tx_data: [0; 8],
            sent: Vec::new(),
        }
    }

    pub fn push(&mut self, frame: CanFrame) {
        self.queue.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn current(&self) -> Option<&CanFrame> {
        self.data_available.then_some(&self.rx)
    }

    fn status(&self) -> u64 {
        self.data_available as u64 | ((self.queue.len().min(0xff) as u64) << 8)
    }

    fn next_message(&mut self) {
        match self.queue.pop_front() {
            Some(f) => {
                self.rx = f;
                self.data_available = true;
            }
            None => self.data_available = false,
        }
    }

    fn reset(&mut self) {
        self.queue.clear();
        self.data_available = false;
        self.rx = CanFrame { id: 0, data: Vec::new() };
        self.tx_id = 0;
        self.tx_dlc = 0;
        self.tx_data = [0; 8];
    }

    fn set_tx_data(&mut self, at: usize, value: u64) {
        for i in 0..4 {
            self.tx_data[at + i] = (value >> (8 * i)) as u8;
        }
    }
}

impl Peripheral for FifoStream {
    fn name(&self) -> &str {
        &self.name
    }

    fn ranges(&self) -> Vec<(u64, u64)> {
        vec![(self.base, self.base + SIZE)]
    }

    fn read(&mut self, addr: u64, _size: u8) -> u64 {
        let data = |lo: usize| {
            if self.data_available {
                pack(self.rx.data.get(lo..).map(|d| &d[..d.len().min(4)]).unwrap_or(&[]))
            } else {
                0
            }
        };
        match addr - self.base {
            STATUS => self.status(),
            RX_ID if self.data_available => self.rx.id as u64,
            RX_DLC if self.data_available => self.rx.dlc() as u64,
            RX_DATA_LO => data(0),
            RX_DATA_HI => data(4),
            TX_ID => self.tx_id as u64,
            TX_DLC => self.tx_dlc as u64,
            TX_DATA_LO => pack(&self.tx_data[..4]),
            TX_DATA_HI => pack(&self.tx_data[4..]),
            _ => 0,
        }
    }

    fn write(&mut self, addr: u64, _size: u8, value: u64) {
        match addr - self.base {
            CTRL => {
                if value >> self.reset_bit & 1 != 0 {
                    self.reset();
                } else if value & 1 != 0 {
                    self.next_message();
                }
            }
            TX_ID => self.tx_id = value as u32 & 0x1fff_ffff,
            TX_DLC => self.tx_dlc = (value as u8).min(8),
            TX_DATA_LO => self.set_tx_data(0, value),
            TX_DATA_HI => self.set_tx_data(4, value),
            TX_SEND => {
                let frame = CanFrame {
                    id: self.tx_id,
                    data: self.tx_data[..self.tx_dlc as usize].to_vec(),
                };
                self.sent.push(DeviceMessage::Can(frame));
            }
            _ => {}
        }
    }

    fn deliver(&mut self, msg: &DeviceMessage) -> bool {
        match msg {
            DeviceMessage::Can(f) => {
                self.push(f.clone());
                true
            }
            _ => false,
        }
    }

    fn take_output(&mut self) -> Vec<DeviceMessage> {
        std::mem::take(&mut self.sent)
    }

    fn box_clone(&self) -> Box<dyn Peripheral> {
        Box::new(self.clone())
    }
}
