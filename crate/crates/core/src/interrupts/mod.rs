//! Interrupt controller: enable and pending flags, prioritized dispatch at
//! instruction boundaries, private context save, and restore on return.

use std::fmt;

use crate::exec::MachineState;
use crate::ir::VarNode;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SaveItem {
    /// The architectural program counter.
    Pc,
    Register(VarNode),
    Memory {
        addr: u64,
        len: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Vector {
    Address(u64),
    /// A framework handler runs instead of firmware code; nothing is saved.
    Handler(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReturnTrigger {
    Intrinsic(String),
    /// `link` is loaded with `address` on entry; reaching `address` returns.
    Sentinel {
        address: u64,
        link: VarNode,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterruptSpec {
    pub id: u32,
    pub priority: u32,
    pub vector: Vector,
    pub save: Vec<SaveItem>,
    pub trigger: ReturnTrigger,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Saved {
    Value(u64),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub id: u32,
    pub values: Vec<Saved>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InterruptError {
    UnknownId(u32),
    Underflow,
    Config(String),
}

impl fmt::Display for InterruptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterruptError::UnknownId(id) => write!(f, "unknown interrupt id {}", id),
            InterruptError::Underflow => f.write_str("interrupt underflow"),
            InterruptError::Config(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for InterruptError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dispatch {
    /// Control moved to firmware at this vector.
    Vectored { id: u32, vector: u64 },
    /// A framework handler must run now.
    Handler { id: u32, handler: u32 },
}

/// Offsets inside the context window.
pub mod window_regs {
    /// Saved items of the innermost frame, eight bytes apart.
    pub const SLOTS: u64 = 0x00;
    pub const ENABLE: u64 = 0x100;
    pub const PENDING: u64 = 0x104;
    /// Writing an id raises it.
    pub const RAISE: u64 = 0x108;
    pub const DEPTH: u64 = 0x10c;
    pub const SIZE: u64 = 0x110;
}

#[derive(Clone, Debug, Default)]
pub struct InterruptController {
    specs: Vec<InterruptSpec>,
    enabled: Vec<bool>,
    pending: Vec<bool>,
    stack: Vec<Frame>,
    /// Base of the memory-mapped view of the innermost saved frame.
    pub window: Option<u64>,
    pub dispatched: u64,
}

impl InterruptController {
    pub fn new(specs: Vec<InterruptSpec>) -> Result<InterruptController, InterruptError> {
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.id == s.id) {
                return Err(InterruptError::Config(format!("duplicate interrupt id {}", s.id)));
            }
            if matches!(s.vector, Vector::Address(_)) && s.save.is_empty() {
                return Err(InterruptError::Config(format!(
                    "interrupt {} vectors into firmware with an empty save list",
                    s.id
                )));
            }
            if let ReturnTrigger::Sentinel { link, .. } = &s.trigger {
                if !s.save.contains(&SaveItem::Register(*link)) {
                    return Err(InterruptError::Config(format!("interrupt {} must save its link register", s.id)));
                }
            }
        }
        let n = specs.len();
        Ok(InterruptController {
            specs,
            enabled: vec![false; n],
            pending: vec![false; n],
            ..InterruptController::default()
        })
    }

    fn index(&self, id: u32) -> Result<usize, InterruptError> {
        self.specs.iter().position(|s| s.id == id).ok_or(InterruptError::UnknownId(id))
    }

    pub fn specs(&self) -> &[InterruptSpec] {
        &self.specs
    }

    pub fn set_enabled(&mut self, id: u32, on: bool) -> Result<(), InterruptError> {
        let i = self.index(id)?;
        self.enabled[i] = on;
        Ok(())
    }

    pub fn is_enabled(&self, id: u32) -> bool {
        self.index(id).map(|i| self.enabled[i]).unwrap_or(false)
    }

    /// Marks an interrupt pending. Raising an already pending id has no further effect.
    pub fn raise(&mut self, id: u32) -> Result<(), InterruptError> {
        let i = self.index(id)?;
        self.pending[i] = true;
        Ok(())
    }

    pub fn is_pending(&self, id: u32) -> bool {
        self.index(id).map(|i| self.pending[i]).unwrap_or(false)
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.stack
    }

    fn active_priority(&self) -> Option<u32> {
        let top = self.stack.last()?;
        self.specs.iter().find(|s| s.id == top.id).map(|s| s.priority)
    }

    /// Picks the most urgent enabled pending interrupt that may preempt the active one.
    fn candidate(&self) -> Option<usize> {
        let active = self.active_priority();
        (0..self.specs.len())
            .filter(|&i| self.enabled[i] && self.pending[i])
            .filter(|&i| active.is_none_or(|p| self.specs[i].priority < p))
            .min_by_key(|&i| (self.specs[i].priority, self.specs[i].id))
    }

    pub fn has_dispatchable(&self) -> bool {
        self.pending.iter().any(|&p| p) && self.candidate().is_some()
    }

    pub fn dispatch_pending(&mut self, st: &mut MachineState) -> Option<Dispatch> {
        let i = self.candidate()?;
        self.pending[i] = false;
        self.dispatched += 1;
        let spec = self.specs[i].clone();
        match spec.vector {
            Vector::Handler(handler) => Some(Dispatch::Handler { id: spec.id, handler }),
            Vector::Address(vector) => {
                let values = spec
                    .save
                    .iter()
                    .map(|item| match item {
                        SaveItem::Pc => Saved::Value(st.pc),
                        SaveItem::Register(vn) => Saved::Value(st.read_reg(vn)),
                        SaveItem::Memory { addr, len } => Saved::Bytes((0..*len).map(|k| st.peek_byte(addr + k).unwrap_or(0)).collect()),
                    })
                    .collect();
                self.stack.push(Frame { id: spec.id, values });
                if let ReturnTrigger::Sentinel { address, link } = spec.trigger {
                    st.write_reg(&link, address);
                }
                st.pc = vector;
                Some(Dispatch::Vectored { id: spec.id, vector })
            }
        }
    }

    /// True when `pc` is the return sentinel of the innermost frame.
    pub fn is_return_point(&self, pc: u64) -> bool {
        let Some(top) = self.stack.last() else {
            return false;
        };
        self.specs
            .iter()
            .any(|s| s.id == top.id && matches!(s.trigger, ReturnTrigger::Sentinel { address, .. } if address == pc))
    }

    /// True when `name` is the return intrinsic of some configured interrupt.
    pub fn is_return_intrinsic(&self, name: &str) -> bool {
        self.specs.iter().any(|s| matches!(&s.trigger, ReturnTrigger::Intrinsic(n) if n == name))
    }

    /// Restores the innermost frame in reverse save order.
    pub fn return_from_interrupt(&mut self, st: &mut MachineState) -> Result<u32, InterruptError> {
        let frame = self.stack.pop().ok_or(InterruptError::Underflow)?;
        let spec = &self.specs[self.index(frame.id)?];
        for (item, saved) in spec.save.iter().zip(&frame.values).rev() {
            match (item, saved) {
                (SaveItem::Pc, Saved::Value(v)) => st.pc = *v,
                (SaveItem::Register(vn), Saved::Value(v)) => st.write_reg(vn, *v),
                (SaveItem::Memory { addr, .. }, Saved::Bytes(b)) => {
                    for (k, byte) in b.iter().enumerate() {
                        st.poke_byte(addr + k as u64, *byte);
                    }
                }
                _ => unreachable!("frame built from the same save list"),
            }
        }
        Ok(frame.id)
    }

    pub fn in_window(&self, addr: u64) -> bool {
        self.window.is_some_and(|w| addr >= w && addr < w + window_regs::SIZE)
    }

    fn mask_of(&self, flags: &[bool]) -> u64 {
        self.specs.iter().zip(flags).filter(|(s, &f)| f && s.id < 64).fold(0, |m, (s, _)| m | 1 << s.id)
    }

    pub fn window_read(&self, addr: u64) -> u64 {
        let off = addr - self.window.expect("checked by in_window");
        match off {
            window_regs::ENABLE => self.mask_of(&self.enabled),
            window_regs::PENDING => self.mask_of(&self.pending),
            window_regs::DEPTH => self.stack.len() as u64,
            o if o < window_regs::ENABLE => match self.stack.last().and_then(|f| f.values.get((o / 8) as usize)) {
                Some(Saved::Value(v)) => *v,
                _ => 0,
            },
            _ => 0,
        }
    }

    pub fn window_write(&mut self, addr: u64, value: u64) {
        let off = addr - self.window.expect("checked by in_window");
        match off {
            window_regs::ENABLE => {
                for i in 0..self.specs.len() {
                    if self.specs[i].id < 64 {
                        self.enabled[i] = value >> self.specs[i].id & 1 != 0;
                    }
                }
            }
            window_regs::RAISE => {
                let _ = self.raise(value as u32);
            }
            o if o < window_regs::ENABLE => {
                if let Some(Saved::Value(v)) = self.stack.last_mut().and_then(|f| f.values.get_mut((o / 8) as usize)) {
                    *v = value;
                }
            }
            _ => {}
        }
    }
}
