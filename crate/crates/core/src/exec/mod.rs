//! IR interpreter with five execution policies, intrinsics, snapshots and forks.

mod concolic;
mod flood;
mod interp;
pub mod intrinsics;
mod state;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archspec::{LiftCache, LiftError, LiftOptions, ProcessorSpec};
use crate::interrupts::{InterruptController, InterruptError};
use crate::ir::{IrBlock, Opcode, VarNode};
use crate::observe::{Filter, Observer, ObserverId, ObserverSet};
use crate::periph::Peripheral;

pub use concolic::{ConcolicState, PathConstraint};
pub use flood::FloodReport;
pub use intrinsics::{Intrinsic, IntrinsicCtx};
pub use state::{MachineState, PAGE_SIZE};

/// How unmapped memory is materialized in micro and flood execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FillPolicy {
    Zeros,
    Byte(u8),
    /// Bytes drawn from a generator seeded by this value and the page number.
    Random(u64),
}

impl FillPolicy {
    pub(crate) fn fill_page(&self, st: &mut MachineState, addr: u64) {
        match *self {
            FillPolicy::Zeros => st.map_page_with(addr, |_| 0),
            FillPolicy::Byte(b) => st.map_page_with(addr, |_| b),
            FillPolicy::Random(seed) => {
                let page = addr / PAGE_SIZE;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ page.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut data = vec![0u8; PAGE_SIZE as usize];
                rng.fill_bytes(&mut data);
                let base = page * PAGE_SIZE;
                st.map_page_with(addr, |a| data[(a - base) as usize]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Concrete,
    /// Conditional branches at these sites take the opposite of their natural direction.
    Forced {
        flips: BTreeSet<u64>,
    },
    Micro(FillPolicy),
    /// Both directions of every branch, at most `k` times per site and direction.
    Flood {
        k: u32,
        op_budget: u64,
        fill: FillPolicy,
    },
    /// Bytes in these half-open ranges are symbolic.
    Concolic {
        regions: Vec<(u64, u64)>,
    },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Concrete => "concrete",
            Mode::Forced { .. } => "forced",
            Mode::Micro(_) => "micro",
            Mode::Flood { .. } => "flood",
            Mode::Concolic { .. } => "concolic",
        }
    }

    fn fill(&self) -> Option<&FillPolicy> {
        match self {
            Mode::Micro(f) | Mode::Flood { fill: f, .. } => Some(f),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecError {
    Unmapped {
        pc: u64,
        addr: u64,
        write: bool,
    },
    Decode {
        pc: u64,
        msg: String,
    },
    NoHandler(String),
    Intrinsic {
        name: String,
        msg: String,
    },
    Interrupt(InterruptError),
    Halted,
    /// An instruction-local loop did not terminate.
    LocalLoop {
        pc: u64,
    },
    BadAccess {
        pc: u64,
        msg: String,
    },
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::Unmapped { pc, addr, write } => {
                write!(f, "unmapped {} at 0x{:x} (pc 0x{:x})", if *write { "write" } else { "read" }, addr, pc)
            }
            ExecError::Decode { pc, msg } => write!(f, "decode error at 0x{:x}: {}", pc, msg),
            ExecError::NoHandler(name) => write!(f, "no handler: {}", name),
            ExecError::Intrinsic { name, msg } => write!(f, "intrinsic {}: {}", name, msg),
            ExecError::Interrupt(e) => write!(f, "{}", e),
            ExecError::Halted => f.write_str("machine is halted"),
            ExecError::LocalLoop { pc } => write!(f, "instruction-local loop at 0x{:x} exceeded its iteration limit", pc),
            ExecError::BadAccess { pc, msg } => write!(f, "bad access at 0x{:x}: {}", pc, msg),
        }
    }
}

impl std::error::Error for ExecError {}

impl From<InterruptError> for ExecError {
    fn from(e: InterruptError) -> Self {
        ExecError::Interrupt(e)
    }
}

/// Redirects RAM addresses for the next `remaining` memory-touching instructions.
#[derive(Clone)]
pub struct Translation {
    pub remaining: u32,
    pub map: Arc<dyn Fn(u64) -> u64 + Send + Sync>,
}

impl fmt::Debug for Translation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Translation {{ remaining: {} }}", self.remaining)
    }
}

/// Everything a snapshot captures.
#[derive(Clone)]
pub struct Machine {
    pub state: MachineState,
    pub devices: Vec<Box<dyn Peripheral>>,
    pub irq: Option<InterruptController>,
    pub translation: Option<Translation>,
    pub concolic: Option<ConcolicState>,
    /// Saved register banks keyed by context number.
    pub banks: HashMap<u64, Vec<u8>>,
}

impl Machine {
    pub fn device<T: Peripheral>(&self, name: &str) -> Option<&T> {
        let d = self.devices.iter().find(|d| d.name() == name)?;
        (d.as_ref() as &dyn std::any::Any).downcast_ref()
    }

    pub fn device_mut<T: Peripheral>(&mut self, name: &str) -> Option<&mut T> {
        let d = self.devices.iter_mut().find(|d| d.name() == name)?;
        (d.as_mut() as &mut dyn std::any::Any).downcast_mut()
    }
}

pub type CallHandler = Arc<dyn Fn(&mut Machine) + Send + Sync>;
pub type RegisterHook = Arc<dyn Fn(&mut Machine, u64, u64) + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub instructions: u64,
    pub ops: u64,
    pub blocks: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Halted,
    Address(u64),
    OpBudget,
    InstructionBudget,
}

#[derive(Clone, Debug, Default)]
pub struct RunLimits {
    pub stop_at: HashSet<u64>,
    pub op_budget: Option<u64>,
    pub insn_budget: Option<u64>,
}

impl RunLimits {
    pub fn ops(n: u64) -> RunLimits {
        RunLimits {
            op_budget: Some(n),
            ..RunLimits::default()
        }
    }

    pub fn until(mut self, addr: u64) -> RunLimits {
        self.stop_at.insert(addr);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemAccess {
    pub addr: u64,
    pub size: u8,
    pub value: u64,
    pub write: bool,
}

/// What one `step_operation` did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpEffect {
    pub pc: u64,
    /// Absent when the instruction was skipped or the boundary halted.
    pub index: Option<usize>,
    pub opcode: Option<Opcode>,
    pub output: Option<(VarNode, u64)>,
    pub mem: Option<MemAccess>,
    /// Set when this op completed its instruction.
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Jump(u64),
    Halt,
    /// Flood mode: both directions exhausted.
    PathEnd,
}

#[derive(Clone)]
struct InsnExec {
    block: Arc<IrBlock>,
    idx: usize,
    op: usize,
    iterations: u64,
    flow: Option<Flow>,
    touched_ram: bool,
}

pub const LOCAL_LOOP_LIMIT: u64 = 1 << 24;

pub struct Simulator {
    pub spec: Arc<ProcessorSpec>,
    cache: Arc<LiftCache>,
    pub lift_options: LiftOptions,
    pub machine: Machine,
    mode: Mode,
    pub observers: ObserverSet,
    intrinsics: HashMap<String, Intrinsic>,
    call_handlers: HashMap<u32, CallHandler>,
    register_hooks: Vec<(VarNode, RegisterHook)>,
    device_ranges: Vec<(u64, u64, usize)>,
    blocks: HashMap<u64, Arc<IrBlock>>,
    cursor: Option<(Arc<IrBlock>, usize)>,
    cur: Option<InsnExec>,
    pub stats: ExecStats,
    /// States pushed by `Fork` responses.
    pub forks: Vec<Machine>,
    flood: Option<flood::FloodState>,
    halt_requested: bool,
    last_mem: Option<MemAccess>,
}

impl Simulator {
    pub fn new(spec: Arc<ProcessorSpec>, cache: Arc<LiftCache>, mode: Mode) -> Simulator {
        let state = MachineState::new(&spec);
        let mut sim = Simulator {
            spec,
            cache,
            lift_options: LiftOptions::default(),
            machine: Machine {
                state,
                devices: Vec::new(),
                irq: None,
                translation: None,
                concolic: None,
                banks: HashMap::new(),
            },
            mode: Mode::Concrete,
            observers: ObserverSet::new(),
            intrinsics: HashMap::new(),
            call_handlers: HashMap::new(),
            register_hooks: Vec::new(),
            device_ranges: Vec::new(),
            blocks: HashMap::new(),
            cursor: None,
            cur: None,
            stats: ExecStats::default(),
            forks: Vec::new(),
            flood: None,
            halt_requested: false,
            last_mem: None,
        };
        sim.register_intrinsic("halt", intrinsics::halt());
        sim.set_mode(mode);
        sim
    }

    pub fn cache(&self) -> &Arc<LiftCache> {
        &self.cache
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.machine.concolic = match &mode {
            Mode::Concolic { regions } => Some(ConcolicState::new(&self.machine.state, self.spec.endian, regions)),
            _ => None,
        };
        self.mode = mode;
    }

    pub fn state(&self) -> &MachineState {
        &self.machine.state
    }

    pub fn state_mut(&mut self) -> &mut MachineState {
        self.invalidate();
        &mut self.machine.state
    }

    pub fn pc(&self) -> u64 {
        self.machine.state.pc
    }

    pub fn set_pc(&mut self, pc: u64) {
        self.invalidate();
        self.machine.state.pc = pc;
    }

    pub fn load_image(&mut self, base: u64, bytes: &[u8]) {
        self.invalidate_code();
        self.machine.state.load_image(base, bytes);
    }

    pub fn map(&mut self, addr: u64, len: u64) {
        self.machine.state.map(addr, len);
    }

    pub fn reg(&self, name: &str) -> Option<u64> {
        self.spec.register(name).map(|vn| self.machine.state.read_reg(&vn))
    }

    pub fn set_reg(&mut self, name: &str, value: u64) -> Result<(), String> {
        let vn = self.spec.register(name).ok_or_else(|| format!("no register {}", name))?;
        self.machine.state.write_reg(&vn, value);
        Ok(())
    }

    pub fn add_device(&mut self, dev: Box<dyn Peripheral>) -> Result<usize, String> {
        let idx = self.machine.devices.len();
        for (lo, hi) in dev.ranges() {
            if let Some(&(l, h, o)) = self.device_ranges.iter().find(|&&(l, h, _)| lo < h && l < hi) {
                return Err(format!(
                    "{} at 0x{:x}..0x{:x} overlaps {} at 0x{:x}..0x{:x}",
                    dev.name(),
                    lo,
                    hi,
                    self.machine.devices[o].name(),
                    l,
                    h
                ));
            }
            self.device_ranges.push((lo, hi, idx));
        }
        self.machine.devices.push(dev);
        Ok(idx)
    }

    pub fn device<T: Peripheral>(&self, name: &str) -> Option<&T> {
        self.machine.device(name)
    }

    pub fn device_mut<T: Peripheral>(&mut self, name: &str) -> Option<&mut T> {
        self.machine.device_mut(name)
    }

    pub fn set_interrupts(&mut self, ctl: InterruptController) {
        self.machine.irq = Some(ctl);
    }

    pub fn interrupts(&self) -> Option<&InterruptController> {
        self.machine.irq.as_ref()
    }

    pub fn interrupts_mut(&mut self) -> Option<&mut InterruptController> {
        self.machine.irq.as_mut()
    }

    pub fn register_intrinsic(&mut self, name: &str, handler: Intrinsic) {
        self.intrinsics.insert(name.to_string(), handler);
    }

    pub fn register_call_handler(&mut self, id: u32, handler: CallHandler) {
        self.call_handlers.insert(id, handler);
    }

    /// Runs `hook(machine, old, new)` after every firmware write overlapping `vn`.
    ///
    /// Installing a hook switches lifting to unoptimized blocks.
    pub fn on_register_write(&mut self, vn: VarNode, hook: RegisterHook) {
        self.invalidate_code();
        self.register_hooks.push((vn, hook));
    }

    pub fn observe(&mut self, filter: Filter, observer: Box<dyn Observer>) -> ObserverId {
        self.observers.register(filter, observer)
    }

    pub fn observer<T: Observer>(&self, id: ObserverId) -> Option<&T> {
        self.observers.get(id)
    }

    pub fn observer_mut<T: Observer>(&mut self, id: ObserverId) -> Option<&mut T> {
        self.observers.get_mut(id)
    }

    /// Drops the fetch cursor so the next instruction is looked up from the pc.
    fn invalidate(&mut self) {
        self.cursor = None;
        self.cur = None;
    }

    /// Forgets lifted blocks, for when code bytes change.
    pub fn invalidate_code(&mut self) {
        self.invalidate();
        self.blocks.clear();
    }

    pub fn snapshot(&self) -> Machine {
        self.machine.clone()
    }

    pub fn restore(&mut self, snap: &Machine) {
        self.machine = snap.clone();
        self.invalidate();
        self.halt_requested = false;
    }

    /// A new simulator sharing spec, cache and handlers, with a deep copy of the state.
    ///
    /// Observers are not copied; attach them to the child as needed.
    pub fn fork(&self) -> Simulator {
        Simulator {
            spec: self.spec.clone(),
            cache: self.cache.clone(),
            lift_options: self.lift_options,
            machine: self.machine.clone(),
            mode: self.mode.clone(),
            observers: ObserverSet::new(),
            intrinsics: self.intrinsics.clone(),
            call_handlers: self.call_handlers.clone(),
            register_hooks: self.register_hooks.clone(),
            device_ranges: self.device_ranges.clone(),
            blocks: self.blocks.clone(),
            cursor: None,
            cur: None,
            stats: ExecStats::default(),
            forks: Vec::new(),
            flood: None,
            halt_requested: false,
            last_mem: None,
        }
    }

    /// Returns the block and instruction index for the current pc.
    fn fetch(&mut self) -> Result<(Arc<IrBlock>, usize), ExecError> {
        let pc = self.machine.state.pc;
        if let Some((b, i)) = &self.cursor {
            if b.instructions.get(*i).is_some_and(|x| x.address == pc) {
                return Ok((b.clone(), *i));
            }
        }
        if let Some(b) = self.blocks.get(&pc) {
            return Ok((b.clone(), 0));
        }
        let mut opts = self.lift_options;
        // Hooks change state between instructions, which block-wide rewriting cannot see.
        opts.optimize &= self.register_hooks.is_empty();
        let lifted = crate::archspec::lift_block(&self.spec, &self.machine.state, pc, opts, Some(&self.cache))
            .map_err(|e: LiftError| ExecError::Decode { pc, msg: e.to_string() })?;
        self.stats.blocks += 1;
        self.blocks.insert(pc, lifted.block.clone());
        Ok((lifted.block, 0))
    }

    pub fn is_halted(&self) -> bool {
        self.machine.state.halted
    }

    /// Executes one whole instruction.
    pub fn step_instruction(&mut self) -> Result<(), ExecError> {
        loop {
            let eff = self.step_operation()?;
            if eff.finished {
                return Ok(());
            }
        }
    }

    pub fn run(&mut self, limits: &RunLimits) -> Result<StopReason, ExecError> {
        let start_ops = self.stats.ops;
        let start_insns = self.stats.instructions;
        let mut first = true;
        loop {
            if self.machine.state.halted {
                return Ok(StopReason::Halted);
            }
            let pc = self.machine.state.pc;
            if !first && self.cur.is_none() && limits.stop_at.contains(&pc) {
                return Ok(StopReason::Address(pc));
            }
            if limits.op_budget.is_some_and(|b| self.stats.ops - start_ops >= b) {
                return Ok(StopReason::OpBudget);
            }
            if limits.insn_budget.is_some_and(|b| self.stats.instructions - start_insns >= b) {
                return Ok(StopReason::InstructionBudget);
            }
            first = false;
            self.step_instruction()?;
        }
    }

    /// Delivers a message to the first device that accepts it.
    pub fn deliver(&mut self, msg: &crate::periph::DeviceMessage) -> bool {
        self.machine.devices.iter_mut().any(|d| d.deliver(msg))
    }

    /// Delivers a message to the named device.
    pub fn deliver_to(&mut self, device: &str, msg: &crate::periph::DeviceMessage) -> bool {
        self.machine.devices.iter_mut().find(|d| d.name() == device).is_some_and(|d| d.deliver(msg))
    }

    pub fn take_device_output(&mut self) -> Vec<(String, crate::periph::DeviceMessage)> {
        let mut out = Vec::new();
        for d in self.machine.devices.iter_mut() {
            let name = d.name().to_string();
            out.extend(d.take_output().into_iter().map(|m| (name.clone(), m)));
        }
        out
    }

    pub fn concolic(&self) -> Option<&ConcolicState> {
        self.machine.concolic.as_ref()
    }
}
