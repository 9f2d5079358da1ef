//! Declarative peripherals: masked register bits routed to named model handlers.

use std::any::Any;
use std::collections::HashMap;

use crate::ir::mask;

use super::Peripheral;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mapping {
    pub address: u64,
    pub width: u8,
    pub mask: u64,
    pub direction: Direction,
    pub handler: String,
}

/// Behaviour behind a universal peripheral's handlers.
pub trait Model: Any + Send {
    fn handlers(&self) -> &'static [&'static str];

    /// Produces bits for a read. Only bits inside the mapping mask are used.
    fn read(&mut self, handler: &str) -> u64;

    /// Receives the masked bits of a write.
    fn write(&mut self, handler: &str, bits: u64);

    fn tick(&mut self) -> Option<u32> {
        None
    }

    fn box_clone(&self) -> Box<dyn Model>;
}

#[derive(Clone)]
pub struct UniversalPeripheral {
    pub name: String,
    pub base: u64,
    pub size: u64,
    mappings: Vec<Mapping>,
    backing: HashMap<u64, u64>,
    model: Box<dyn Model>,
}

impl Clone for Box<dyn Model> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

impl UniversalPeripheral {
    pub fn new(name: &str, base: u64, size: u64, model: Box<dyn Model>) -> UniversalPeripheral {
        UniversalPeripheral {
            name: name.to_string(),
            base,
            size,
            mappings: Vec::new(),
            backing: HashMap::new(),
            model,
        }
    }

    fn map(&mut self, m: Mapping) -> Result<(), String> {
        if !self.model.handlers().contains(&m.handler.as_str()) {
            return Err(format!("{}: unknown handler {:?}", self.name, m.handler));
        }
        if m.address < self.base || m.address + m.width as u64 > self.base + self.size {
            return Err(format!("{}: mapping 0x{:x} outside the device", self.name, m.address));
        }
        let dup = self
            .mappings
            .iter()
            .any(|o| o.address == m.address && o.mask == m.mask && o.direction == m.direction);
        if dup {
            return Err(format!("{}: duplicate mapping at 0x{:x} mask 0x{:x}", self.name, m.address, m.mask));
        }
        self.mappings.push(m);
        Ok(())
    }

    pub fn map_function_addr_read(&mut self, address: u64, width: u8, mask: u64, handler: &str) -> Result<(), String> {
        self.map(Mapping {
            address,
            width,
            mask,
            direction: Direction::Read,
            handler: handler.to_string(),
        })
    }

    pub fn map_function_addr_write(&mut self, address: u64, width: u8, mask: u64, handler: &str) -> Result<(), String> {
        self.map(Mapping {
            address,
            width,
            mask,
            direction: Direction::Write,
            handler: handler.to_string(),
        })
    }

    pub fn mappings(&self) -> &[Mapping] {
        &self.mappings
    }

    pub fn model<T: Model>(&self) -> Option<&T> {
        (self.model.as_ref() as &dyn Any).downcast_ref()
    }

    pub fn model_mut<T: Model>(&mut self) -> Option<&mut T> {
        (self.model.as_mut() as &mut dyn Any).downcast_mut()
    }

    /// Compare-and-match timer with the register layout used by the bundled firmware:
    /// control at +0 (enable bit 0), status at +2 (matched bit 7), counter at +4, match at +6.
    pub fn cmt(name: &str, base: u64, irq: Option<u32>) -> UniversalPeripheral {
        let mut p = UniversalPeripheral::new(name, base, 8, Box::new(CmtModel::new(irq)));
        let maps: [(u64, u64, &str, &str); 4] = [
            (0, 0x01, "is_enabled", "set_enabled"),
            (2, 0x80, "matched", "clear_matched"),
            (4, 0xffff, "counter", "set_counter"),
            (6, 0xffff, "match_value", "set_match"),
        ];
        for (off, m, r, w) in maps {
            p.map_function_addr_read(base + off, 2, m, r).expect("fresh device");
            p.map_function_addr_write(base + off, 2, m, w).expect("fresh device");
        }
        p
    }
}

impl Peripheral for UniversalPeripheral {
    fn name(&self) -> &str {
        &self.name
    }

    fn ranges(&self) -> Vec<(u64, u64)> {
        vec![(self.base, self.base + self.size)]
    }

    fn read(&mut self, addr: u64, size: u8) -> u64 {
        let mut v = self.backing.get(&addr).copied().unwrap_or(0) & mask(size);
        for i in 0..self.mappings.len() {
            let m = &self.mappings[i];
            if m.address == addr && m.direction == Direction::Read {
                let (mk, h) = (m.mask & mask(size), m.handler.clone());
                v = (v & !mk) | (self.model.read(&h) & mk);
            }
        }
        v
    }

    fn write(&mut self, addr: u64, size: u8, value: u64) {
        let mut handled = 0u64;
        for i in 0..self.mappings.len() {
            let m = &self.mappings[i];
            if m.address == addr && m.direction == Direction::Write {
                let (mk, h) = (m.mask & mask(size), m.handler.clone());
                self.model.write(&h, value & mk);
                handled |= mk;
            }
        }
        let old = self.backing.get(&addr).copied().unwrap_or(0);
        self.backing.insert(addr, (old & handled) | (value & !handled & mask(size)));
    }

    fn tick(&mut self) -> Option<u32> {
        self.model.tick()
    }

    fn box_clone(&self) -> Box<dyn Peripheral> {
        Box::new(self.clone())
    }
}

/// 16-bit compare-and-match timer.
///
/// A match value of zero never matches.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CmtModel {
    pub enabled: bool,
    pub counter: u16,
    pub match_value: u16,
    pub matched: bool,
    pub irq: Option<u32>,
    pub matches: u64,
}

impl CmtModel {
    pub fn new(irq: Option<u32>) -> CmtModel {
        CmtModel { irq, ..CmtModel::default() }
    }
}

impl Model for CmtModel {
    fn handlers(&self) -> &'static [&'static str] {
        &[
            "is_enabled",
            "set_enabled",
            "matched",
            "clear_matched",
            "counter",
            "set_counter",
            "match_value",
            "set_match",
        ]
    }

    fn read(&mut self, handler: &str) -> u64 {
        match handler {
            "is_enabled" => self.enabled as u64,
            "matched" => (self.matched as u64) << 7,
            "counter" => self.counter as u64,
            "match_value" => self.match_value as u64,
            _ => 0,
        }
    }

    fn write(&mut self, handler: &str, bits: u64) {
        match handler {
            "set_enabled" => self.enabled = bits & 1 != 0,
            "clear_matched" => self.matched &= bits != 0,
            "set_counter" => self.counter = bits as u16,
            "set_match" => self.match_value = bits as u16,
            _ => {}
        }
    }

    fn tick(&mut self) -> Option<u32> {
        if !self.enabled {
            return None;
        }
        self.counter = self.counter.wrapping_add(1);
        if self.match_value != 0 && self.counter == self.match_value {
            self.counter = 0;
            self.matched = true;
            self.matches += 1;
            return self.irq;
        }
        None
    }

    fn box_clone(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }
}
