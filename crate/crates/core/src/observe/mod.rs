//! Execution events, observer registration, and response merging.

mod coverage;
mod trace;

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::ir::{LiftedInstruction, Operation, VarNode};

pub use coverage::{matched_prefix, CovKey, Coverage};
pub use trace::{write_trace, TraceDumper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    OperandRead,
    OperandWrite,
    MemoryRead,
    MemoryWrite,
    RegisterRead,
    RegisterWrite,
    ArchitecturalStep,
    OperationStep,
    CBranch,
    Call,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::OperandRead,
        EventKind::OperandWrite,
        EventKind::MemoryRead,
        EventKind::MemoryWrite,
        EventKind::RegisterRead,
        EventKind::RegisterWrite,
        EventKind::ArchitecturalStep,
        EventKind::OperationStep,
        EventKind::CBranch,
        EventKind::Call,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::OperandRead => "operand_read",
            EventKind::OperandWrite => "operand_write",
            EventKind::MemoryRead => "memory_read",
            EventKind::MemoryWrite => "memory_write",
            EventKind::RegisterRead => "register_read",
            EventKind::RegisterWrite => "register_write",
            EventKind::ArchitecturalStep => "architectural_step",
            EventKind::OperationStep => "operation_step",
            EventKind::CBranch => "cbranch",
            EventKind::Call => "call",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.name() == s)
    }

    fn bit(self) -> u16 {
        1 << self as u16
    }
}

/// A set of event kinds. Operand kinds expand to their memory and register parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KindSet(u16);

impl KindSet {
    pub fn of(kinds: &[EventKind]) -> KindSet {
        let mut s = KindSet(0);
        for &k in kinds {
            s = s.with(k);
        }
        s
    }

    pub fn all() -> KindSet {
        KindSet::of(&EventKind::ALL)
    }

    pub fn with(self, k: EventKind) -> KindSet {
        let extra = match k {
            EventKind::OperandRead => EventKind::MemoryRead.bit() | EventKind::RegisterRead.bit(),
            EventKind::OperandWrite => EventKind::MemoryWrite.bit() | EventKind::RegisterWrite.bit(),
            _ => 0,
        };
        KindSet(self.0 | k.bit() | extra)
    }

    pub fn contains(self, k: EventKind) -> bool {
        self.0 & k.bit() != 0
    }

    fn union(self, o: KindSet) -> KindSet {
        KindSet(self.0 | o.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Event<'a> {
    MemoryRead {
        pc: u64,
        addr: u64,
        size: u8,
        value: u64,
    },
    MemoryWrite {
        pc: u64,
        addr: u64,
        size: u8,
        value: u64,
    },
    RegisterRead {
        pc: u64,
        vn: VarNode,
        value: u64,
    },
    RegisterWrite {
        pc: u64,
        vn: VarNode,
        value: u64,
    },
    ArchitecturalStep {
        pc: u64,
        insn: &'a LiftedInstruction,
    },
    /// Fired after an op executes. `index` is the op's position in its instruction.
    OperationStep {
        pc: u64,
        index: usize,
        op: &'a Operation,
        inputs: &'a [u64],
        output: Option<u64>,
    },
    CBranch {
        pc: u64,
        target: u64,
        cond: VarNode,
        condition: u64,
        taken: bool,
    },
    Call {
        pc: u64,
        target: u64,
        fallthrough: u64,
    },
}

impl Event<'_> {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::MemoryRead { .. } => EventKind::MemoryRead,
            Event::MemoryWrite { .. } => EventKind::MemoryWrite,
            Event::RegisterRead { .. } => EventKind::RegisterRead,
            Event::RegisterWrite { .. } => EventKind::RegisterWrite,
            Event::ArchitecturalStep { .. } => EventKind::ArchitecturalStep,
            Event::OperationStep { .. } => EventKind::OperationStep,
            Event::CBranch { .. } => EventKind::CBranch,
            Event::Call { .. } => EventKind::Call,
        }
    }

    pub fn pc(&self) -> u64 {
        match *self {
            Event::MemoryRead { pc, .. }
            | Event::MemoryWrite { pc, .. }
            | Event::RegisterRead { pc, .. }
            | Event::RegisterWrite { pc, .. }
            | Event::ArchitecturalStep { pc, .. }
            | Event::OperationStep { pc, .. }
            | Event::CBranch { pc, .. }
            | Event::Call { pc, .. } => pc,
        }
    }

    /// Address used for range filtering: the accessed address for memory events, the pc otherwise.
    pub fn filter_address(&self) -> u64 {
        match *self {
            Event::MemoryRead { addr, .. } | Event::MemoryWrite { addr, .. } => addr,
            _ => self.pc(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Response {
    Continue,
    /// Replaces the value being read or written, masked to the event width.
    OverrideValue(u64),
    SkipInstruction,
    FlipBranch,
    /// Runs the registered call handler with this id instead of the callee.
    ReplaceCall(u32),
    Fork,
    Halt,
}

/// Combined responses of all observers for one event.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    /// First non-continue control response in registration order.
    pub control: Option<Response>,
    /// Last override in registration order.
    pub value: Option<u64>,
}

pub trait Observer: Any + Send {
    fn on_event(&mut self, event: &Event) -> Response;

    fn box_clone(&self) -> Option<Box<dyn Observer>> {
        None
    }
}

#[derive(Clone, Debug, Default)]
pub struct Filter {
    pub kinds: KindSet,
    /// Half-open address range.
    pub range: Option<(u64, u64)>,
    /// Register events are delivered only when they overlap one of these.
    pub registers: Vec<VarNode>,
}

impl Filter {
    pub fn kinds(kinds: &[EventKind]) -> Filter {
        Filter {
            kinds: KindSet::of(kinds),
            ..Filter::default()
        }
    }

    pub fn in_range(mut self, lo: u64, hi: u64) -> Filter {
        self.range = Some((lo, hi));
        self
    }

    pub fn registers(mut self, regs: Vec<VarNode>) -> Filter {
        self.registers = regs;
        self
    }

    fn accepts(&self, ev: &Event) -> bool {
        if !self.kinds.contains(ev.kind()) {
            return false;
        }
        if let Some((lo, hi)) = self.range {
            let a = ev.filter_address();
            if a < lo || a >= hi {
                return false;
            }
        }
        match ev {
            Event::RegisterRead { vn, .. } | Event::RegisterWrite { vn, .. } if !self.registers.is_empty() => self.registers.iter().any(|r| r.overlaps(vn)),
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObserverId(pub u32);

struct Entry {
    id: ObserverId,
    filter: Filter,
    enabled: bool,
    observer: Box<dyn Observer>,
}

#[derive(Default)]
pub struct ObserverSet {
    entries: Vec<Entry>,
    next: u32,
    wanted: KindSet,
}

impl ObserverSet {
    pub fn new() -> ObserverSet {
        ObserverSet::default()
    }

    pub fn register(&mut self, filter: Filter, observer: Box<dyn Observer>) -> ObserverId {
        let id = ObserverId(self.next);
        self.next += 1;
        self.wanted = self.wanted.union(filter.kinds);
        self.entries.push(Entry {
            id,
            filter,
            enabled: true,
            observer,
        });
        id
    }

    pub fn unregister(&mut self, id: ObserverId) -> Option<Box<dyn Observer>> {
        let pos = self.entries.iter().position(|e| e.id == id)?;
        let e = self.entries.remove(pos);
        self.recompute();
        Some(e.observer)
    }

    fn recompute(&mut self) {
        self.wanted = self
            .entries
            .iter()
            .filter(|e| e.enabled)
            .fold(KindSet::default(), |acc, e| acc.union(e.filter.kinds));
    }

    /// True when some enabled observer subscribes to `kind`.
    #[inline]
    pub fn wants(&self, kind: EventKind) -> bool {
        self.wanted.contains(kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_enabled(&self, id: ObserverId) -> bool {
        self.entries.iter().any(|e| e.id == id && e.enabled)
    }

    pub fn get<T: Observer>(&self, id: ObserverId) -> Option<&T> {
        let e = self.entries.iter().find(|e| e.id == id)?;
        (e.observer.as_ref() as &dyn Any).downcast_ref()
    }

    pub fn get_mut<T: Observer>(&mut self, id: ObserverId) -> Option<&mut T> {
        let e = self.entries.iter_mut().find(|e| e.id == id)?;
        (e.observer.as_mut() as &mut dyn Any).downcast_mut()
    }

    /// Copies of all observers that support cloning, with their filters.
    pub fn clone_cloneable(&self) -> ObserverSet {
        let mut out = ObserverSet::new();
        for e in &self.entries {
            if let Some(o) = e.observer.box_clone() {
                out.entries.push(Entry {
                    id: e.id,
                    filter: e.filter.clone(),
                    enabled: e.enabled,
                    observer: o,
                });
            }
        }
        out.next = self.next;
        out.recompute();
        out
    }

    /// Delivers an event in registration order and merges the responses.
    ///
    /// An observer that panics is treated as answering `Continue` and is
    /// disabled for the rest of the run.
    pub fn dispatch(&mut self, ev: &Event) -> Outcome {
        let mut out = Outcome::default();
        let mut disabled = false;
        for e in self.entries.iter_mut() {
            if !e.enabled || !e.filter.accepts(ev) {
                continue;
            }
            let obs = &mut e.observer;
            match catch_unwind(AssertUnwindSafe(|| obs.on_event(ev))) {
                Ok(Response::Continue) => {}
                Ok(Response::OverrideValue(v)) => out.value = Some(v),
                Ok(r) => {
                    if out.control.is_none() {
                        out.control = Some(r);
                    }
                }
                Err(_) => {
                    log::warn!("observer {} panicked on {} and was disabled", e.id.0, ev.kind().name());
                    e.enabled = false;
                    disabled = true;
                }
            }
        }
        if disabled {
            self.recompute();
        }
        out
    }
}

/// Adapts a closure into an observer.
pub struct FnObserver<F>(pub F);

impl<F> Observer for FnObserver<F>
where
    F: FnMut(&Event) -> Response + Send + 'static,
{
    fn on_event(&mut self, event: &Event) -> Response {
        (self.0)(event)
    }
}
