//! Byte-level machine state: paged RAM, register file, temporaries.

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::archspec::{Endian, MemoryView, ProcessorSpec};
use crate::ir::{mask, SpaceId, SpaceKind, VarNode};

pub const PAGE_SIZE: u64 = 4096;

type Page = Arc<[u8; PAGE_SIZE as usize]>;

/// Pages are shared copy-on-write, so cloning a state is cheap.
#[derive(Clone, Debug)]
pub struct MachineState {
    pub endian: Endian,
    pages: HashMap<u64, Page>,
    pub regs: Vec<u8>,
    temps: Vec<u8>,
    temp_used: usize,
    reg_space: SpaceId,
    temp_space: SpaceId,
    pub pc: u64,
    pub halted: bool,
}

fn decode(bytes: &[u8], endian: Endian) -> u64 {
    match endian {
        Endian::Little => bytes.iter().rev().fold(0, |acc, &b| acc << 8 | b as u64),
        Endian::Big => bytes.iter().fold(0, |acc, &b| acc << 8 | b as u64),
    }
}

fn encode(value: u64, out: &mut [u8], endian: Endian) {
    let n = out.len();
    for (i, b) in out.iter_mut().enumerate() {
        let k = match endian {
            Endian::Little => i,
            Endian::Big => n - 1 - i,
        };
        *b = (value >> (8 * k)) as u8;
    }
}

impl MachineState {
    pub fn new(spec: &ProcessorSpec) -> MachineState {
        let size = |k: SpaceKind| spec.spaces.by_kind(k).map(|s| s.extent as usize).unwrap_or(0);
        MachineState {
            endian: spec.endian,
            pages: HashMap::new(),
            regs: vec![0; size(SpaceKind::Register)],
            temps: vec![0; size(SpaceKind::Temporary)],
            temp_used: 0,
            reg_space: spec.spaces.register(),
            temp_space: spec.spaces.temporary(),
            pc: 0,
            halted: false,
        }
    }

    pub fn encode(&self, value: u64, out: &mut [u8]) {
        encode(value, out, self.endian)
    }

    pub fn decode(&self, bytes: &[u8]) -> u64 {
        decode(bytes, self.endian)
    }

    // Registers and temporaries.

    pub fn read_reg(&self, vn: &VarNode) -> u64 {
        decode(&self.regs[vn.offset as usize..vn.end() as usize], self.endian)
    }

    pub fn write_reg(&mut self, vn: &VarNode, value: u64) {
        let e = self.endian;
        encode(value, &mut self.regs[vn.offset as usize..vn.end() as usize], e);
    }

    pub fn read_temp(&self, vn: &VarNode) -> u64 {
        decode(&self.temps[vn.offset as usize..vn.end() as usize], self.endian)
    }

    pub fn write_temp(&mut self, vn: &VarNode, value: u64) {
        let e = self.endian;
        self.temp_used = self.temp_used.max(vn.end() as usize);
        encode(value, &mut self.temps[vn.offset as usize..vn.end() as usize], e);
    }

    pub fn clear_temps(&mut self) {
        self.temps[..self.temp_used].fill(0);
        self.temp_used = 0;
    }

    pub fn temps_clear(&self) -> bool {
        self.temps.iter().all(|&b| b == 0)
    }

    /// Reads a register or temporary varnode, or returns a constant's value.
    #[inline]
    pub fn read_vn(&self, vn: &VarNode) -> u64 {
        if vn.space == self.reg_space {
            self.read_reg(vn)
        } else if vn.space == self.temp_space {
            self.read_temp(vn)
        } else {
            vn.offset & mask(vn.size)
        }
    }

    // RAM.

    pub fn map(&mut self, addr: u64, len: u64) {
        if len == 0 {
            return;
        }
        let (first, last) = (addr / PAGE_SIZE, (addr + len - 1) / PAGE_SIZE);
        for p in first..=last {
            self.pages.entry(p).or_insert_with(|| Arc::new([0; PAGE_SIZE as usize]));
        }
    }

    /// Maps a page filled by `fill(address)` unless it is already mapped.
    pub fn map_page_with(&mut self, addr: u64, fill: impl Fn(u64) -> u8) {
        let p = addr / PAGE_SIZE;
        self.pages.entry(p).or_insert_with(|| {
            let mut data = [0u8; PAGE_SIZE as usize];
            for (i, b) in data.iter_mut().enumerate() {
                *b = fill(p * PAGE_SIZE + i as u64);
            }
            Arc::new(data)
        });
    }

    pub fn load_image(&mut self, base: u64, bytes: &[u8]) {
        self.map(base, bytes.len() as u64);
        for (i, &b) in bytes.iter().enumerate() {
            self.poke_byte(base + i as u64, b);
        }
    }

    pub fn is_mapped(&self, addr: u64, size: u8) -> bool {
        (0..size as u64).all(|i| self.pages.contains_key(&(addr.wrapping_add(i) / PAGE_SIZE)))
    }

    pub fn mapped_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn peek_byte(&self, addr: u64) -> Option<u8> {
        self.pages.get(&(addr / PAGE_SIZE)).map(|p| p[(addr % PAGE_SIZE) as usize])
    }

    /// Writes a byte into a mapped page. Returns false when unmapped.
    pub fn poke_byte(&mut self, addr: u64, b: u8) -> bool {
        match self.pages.get_mut(&(addr / PAGE_SIZE)) {
            Some(p) => {
                Arc::make_mut(p)[(addr % PAGE_SIZE) as usize] = b;
                true
            }
            None => false,
        }
    }

    /// `None` when any byte is unmapped.
    pub fn read_mem(&self, addr: u64, size: u8) -> Option<u64> {
        let off = (addr % PAGE_SIZE) as usize;
        if off + size as usize <= PAGE_SIZE as usize {
            let p = self.pages.get(&(addr / PAGE_SIZE))?;
            return Some(decode(&p[off..off + size as usize], self.endian));
        }
        let mut buf = [0u8; 8];
        for (i, b) in buf.iter_mut().take(size as usize).enumerate() {
            *b = self.peek_byte(addr.wrapping_add(i as u64))?;
        }
        Some(decode(&buf[..size as usize], self.endian))
    }

    /// Returns false, writing nothing, when any byte is unmapped.
    pub fn write_mem(&mut self, addr: u64, size: u8, value: u64) -> bool {
        if !self.is_mapped(addr, size) {
            return false;
        }
        let mut buf = [0u8; 8];
        encode(value, &mut buf[..size as usize], self.endian);
        let off = (addr % PAGE_SIZE) as usize;
        if off + size as usize <= PAGE_SIZE as usize {
            let p = self.pages.get_mut(&(addr / PAGE_SIZE)).expect("checked");
            Arc::make_mut(p)[off..off + size as usize].copy_from_slice(&buf[..size as usize]);
            return true;
        }
        for (i, &b) in buf[..size as usize].iter().enumerate() {
            self.poke_byte(addr.wrapping_add(i as u64), b);
        }
        true
    }

    pub fn read_bytes(&self, addr: u64, len: usize) -> Option<Vec<u8>> {
        (0..len as u64).map(|i| self.peek_byte(addr + i)).collect()
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> bool {
        if !(0..bytes.len() as u64).all(|i| self.peek_byte(addr + i).is_some()) {
            return false;
        }
        for (i, &b) in bytes.iter().enumerate() {
            self.poke_byte(addr + i as u64, b);
        }
        true
    }

    /// Hash of registers, pc, halt flag and all mapped memory.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(&self.regs);
        h.update(self.pc.to_le_bytes());
        h.update([self.halted as u8]);
        let mut keys: Vec<_> = self.pages.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            h.update(k.to_le_bytes());
            h.update(&self.pages[&k][..]);
        }
        h.finalize().into()
    }

    /// True when both states hold the same architectural contents.
    pub fn same_as(&self, other: &MachineState) -> bool {
        self.regs == other.regs
            && self.pc == other.pc
            && self.halted == other.halted
            && self.pages.len() == other.pages.len()
            && self
                .pages
                .iter()
                .all(|(k, p)| other.pages.get(k).is_some_and(|q| Arc::ptr_eq(p, q) || p[..] == q[..]))
    }
}

impl MemoryView for MachineState {
    fn fetch(&self, addr: u64, buf: &mut [u8]) -> usize {
        for (i, b) in buf.iter_mut().enumerate() {
            match self.peek_byte(addr.wrapping_add(i as u64)) {
                Some(v) => *b = v,
                None => return i,
            }
        }
        buf.len()
    }
}
