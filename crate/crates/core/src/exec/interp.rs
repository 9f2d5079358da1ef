//! Op-level interpretation.

use std::sync::Arc;

use crate::ir::{mask, Opcode, Operation, SpaceKind, VarNode};
use crate::observe::{Event, EventKind, Outcome, Response};
use crate::semantics;

use super::{ExecError, Flow, InsnExec, MemAccess, OpEffect, Simulator, LOCAL_LOOP_LIMIT};

enum OpFlow {
    Next,
    Goto(usize),
    Exit(Flow),
}

impl Simulator {
    fn control(&mut self, out: Outcome) {
        match out.control {
            Some(Response::Halt) => self.halt_requested = true,
            Some(Response::Fork) => self.forks.push(self.machine.clone()),
            _ => {}
        }
    }

    /// Interrupt return and dispatch, fetch, and the architectural step event.
    ///
    /// Returns an effect when the instruction completed without executing ops.
    fn begin_instruction(&mut self) -> Result<Option<OpEffect>, ExecError> {
        let m = &mut self.machine;
        if let Some(irq) = m.irq.as_mut() {
            while irq.is_return_point(m.state.pc) {
                irq.return_from_interrupt(&mut m.state)?;
                self.cursor = None;
            }
            if irq.has_dispatchable() {
                match irq.dispatch_pending(&mut m.state) {
                    Some(crate::interrupts::Dispatch::Handler { handler, .. }) => {
                        if let Some(h) = self.call_handlers.get(&handler).cloned() {
                            h(&mut self.machine);
                        }
                    }
                    Some(_) => self.cursor = None,
                    None => {}
                }
            }
        }
        let (block, idx) = self.fetch()?;
        let insn = &block.instructions[idx];
        let pc = insn.address;
        let next = pc.wrapping_add(insn.length as u64);
        if let Some(fl) = self.flood.as_mut() {
            let spaces = &self.spec.spaces;
            if insn.ops.iter().any(|o| o.opcode == Opcode::CBranch && !o.is_local_branch(spaces)) {
                fl.pre = Some(self.machine.clone());
            }
        }
        if self.observers.wants(EventKind::ArchitecturalStep) {
            let out = self.observers.dispatch(&Event::ArchitecturalStep { pc, insn });
            match out.control {
                Some(Response::SkipInstruction) => {
                    self.machine.state.pc = next;
                    self.cursor = (idx + 1 < block.instructions.len()).then(|| (block.clone(), idx + 1));
                    self.after_instruction();
                    return Ok(Some(OpEffect {
                        pc,
                        index: None,
                        opcode: None,
                        output: None,
                        mem: None,
                        finished: true,
                    }));
                }
                Some(Response::Halt) => {
                    self.machine.state.halted = true;
                    return Ok(Some(OpEffect {
                        pc,
                        index: None,
                        opcode: None,
                        output: None,
                        mem: None,
                        finished: true,
                    }));
                }
                other => self.control(Outcome { control: other, value: None }),
            }
        }
        let st = &mut self.machine.state;
        st.clear_temps();
        let pcvn = self.spec.pc;
        st.write_reg(&pcvn, next & mask(pcvn.size));
        if let Some(c) = self.machine.concolic.as_mut() {
            c.shadow.clear_temps();
            c.shadow.write_var(false, &pcvn, None, next);
        }
        self.cur = Some(InsnExec {
            block,
            idx,
            op: 0,
            iterations: 0,
            flow: None,
            touched_ram: false,
        });
        Ok(None)
    }

    fn after_instruction(&mut self) {
        self.stats.instructions += 1;
        let m = &mut self.machine;
        for d in m.devices.iter_mut() {
            if let Some(line) = d.tick() {
                match m.irq.as_mut() {
                    Some(irq) => {
                        if let Err(e) = irq.raise(line) {
                            log::warn!("{}: {}", d.name(), e);
                        }
                    }
                    None => log::debug!("{} raised line {} with no interrupt controller", d.name(), line),
                }
            }
        }
    }

    fn finish_instruction(&mut self, e: InsnExec) {
        let insn = &e.block.instructions[e.idx];
        let next = insn.address.wrapping_add(insn.length as u64);
        let pcvn = self.spec.pc;
        let st = &mut self.machine.state;
        let pc = match e.flow {
            Some(Flow::Jump(t)) => t,
            Some(Flow::Halt) | Some(Flow::PathEnd) => {
                st.halted = true;
                insn.address
            }
            None => st.read_reg(&pcvn),
        } & mask(pcvn.size);
        st.pc = pc;
        if let Some(fl) = self.flood.as_mut() {
            if e.flow == Some(Flow::PathEnd) {
                fl.path_ended = true;
            }
        }
        self.cursor = (!st.halted && pc == next && e.idx + 1 < e.block.instructions.len()).then(|| (e.block.clone(), e.idx + 1));
        if e.touched_ram {
            if let Some(t) = self.machine.translation.as_mut() {
                t.remaining = t.remaining.saturating_sub(1);
                if t.remaining == 0 {
                    self.machine.translation = None;
                }
            }
        }
        if self.halt_requested {
            self.halt_requested = false;
            self.machine.state.halted = true;
        }
        self.after_instruction();
    }

    /// Executes the next IL operation, starting a new instruction when needed.
    pub fn step_operation(&mut self) -> Result<OpEffect, ExecError> {
        if self.machine.state.halted {
            return Err(ExecError::Halted);
        }
        if self.cur.is_none() {
            if let Some(eff) = self.begin_instruction()? {
                return Ok(eff);
            }
        }
        let mut e = self.cur.take().expect("instruction begun");
        let block = e.block.clone();
        let insn = &block.instructions[e.idx];
        let pc = insn.address;
        if e.op >= insn.ops.len() {
            self.finish_instruction(e);
            return Ok(OpEffect {
                pc,
                index: None,
                opcode: None,
                output: None,
                mem: None,
                finished: true,
            });
        }
        let index = e.op;
        let op = &insn.ops[index];
        self.last_mem = None;
        let (flow, output) = match self.exec_op(pc, index, op, &mut e) {
            Ok(x) => x,
            Err(err) => {
                self.cursor = None;
                return Err(err);
            }
        };
        self.stats.ops += 1;
        match flow {
            OpFlow::Next => e.op += 1,
            OpFlow::Goto(t) => {
                e.iterations += 1;
                if e.iterations > LOCAL_LOOP_LIMIT {
                    self.cursor = None;
                    return Err(ExecError::LocalLoop { pc });
                }
                e.op = t;
            }
            OpFlow::Exit(f) => e.flow = Some(f),
        }
        let mut eff = OpEffect {
            pc,
            index: Some(index),
            opcode: Some(op.opcode),
            output: op.output.zip(output),
            mem: self.last_mem,
            finished: false,
        };
        if self.halt_requested && e.flow.is_none() {
            e.flow = Some(Flow::Halt);
            self.halt_requested = false;
        }
        if e.flow.is_some() || e.op >= insn.ops.len() {
            self.finish_instruction(e);
            eff.finished = true;
        } else {
            self.cur = Some(e);
        }
        Ok(eff)
    }

    fn read_input(&mut self, pc: u64, vn: &VarNode) -> u64 {
        let v = self.machine.state.read_vn(vn);
        if vn.space == self.spec.spaces.register() && self.observers.wants(EventKind::RegisterRead) {
            let out = self.observers.dispatch(&Event::RegisterRead { pc, vn: *vn, value: v });
            self.control(out);
            if let Some(o) = out.value {
                return o & mask(vn.size);
            }
        }
        v
    }

    fn write_output(&mut self, pc: u64, vn: &VarNode, value: u64, e: &mut InsnExec) -> Result<u64, ExecError> {
        let mut v = value & mask(vn.size);
        let spaces = &self.spec.spaces;
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) => {
                if self.observers.wants(EventKind::RegisterWrite) {
                    let out = self.observers.dispatch(&Event::RegisterWrite { pc, vn: *vn, value: v });
                    self.control(out);
                    if let Some(o) = out.value {
                        v = o & mask(vn.size);
                    }
                }
                let hooked = self.register_hooks.iter().any(|(h, _)| h.overlaps(vn));
                if hooked {
                    let old = self.machine.state.read_reg(vn);
                    self.machine.state.write_reg(vn, v);
                    let hooks: Vec<_> = self.register_hooks.iter().filter(|(h, _)| h.overlaps(vn)).map(|(_, f)| f.clone()).collect();
                    for h in hooks {
                        h(&mut self.machine, old, v);
                    }
                } else {
                    self.machine.state.write_reg(vn, v);
                }
            }
            Some(SpaceKind::Temporary) => self.machine.state.write_temp(vn, v),
            Some(SpaceKind::Ram) => self.mem_write(pc, vn.offset, vn.size, v, e)?,
            _ => {
                return Err(ExecError::BadAccess {
                    pc,
                    msg: format!("write to constant space at 0x{:x}", vn.offset),
                })
            }
        }
        Ok(v)
    }

    fn translate(&mut self, addr: u64, e: &mut InsnExec) -> u64 {
        match &self.machine.translation {
            Some(t) => {
                e.touched_ram = true;
                (t.map)(addr)
            }
            None => addr,
        }
    }

    fn device_at(&self, addr: u64) -> Option<usize> {
        self.device_ranges.iter().find(|&&(lo, hi, _)| addr >= lo && addr < hi).map(|&(_, _, i)| i)
    }

    fn materialize(&mut self, pc: u64, addr: u64, size: u8, write: bool) -> Result<(), ExecError> {
        match self.mode.fill().cloned() {
            Some(f) => {
                for a in [addr, addr.wrapping_add(size as u64 - 1)] {
                    f.fill_page(&mut self.machine.state, a);
                }
                Ok(())
            }
            None => {
                log::debug!("fault: unmapped {} at 0x{:x} (pc 0x{:x})", if write { "write" } else { "read" }, addr, pc);
                Err(ExecError::Unmapped { pc, addr, write })
            }
        }
    }

    fn mem_read(&mut self, pc: u64, addr: u64, size: u8) -> Result<u64, ExecError> {
        let m = &mut self.machine;
        let mut v = if m.irq.as_ref().is_some_and(|i| i.in_window(addr)) {
            m.irq.as_ref().expect("checked").window_read(addr) & mask(size)
        } else if let Some(d) = self.device_at(addr) {
            self.machine.devices[d].read(addr, size) & mask(size)
        } else {
            match self.machine.state.read_mem(addr, size) {
                Some(v) => v,
                None => {
                    self.materialize(pc, addr, size, false)?;
                    self.machine.state.read_mem(addr, size).expect("materialized")
                }
            }
        };
        if self.observers.wants(EventKind::MemoryRead) {
            let out = self.observers.dispatch(&Event::MemoryRead { pc, addr, size, value: v });
            self.control(out);
            if let Some(o) = out.value {
                v = o & mask(size);
            }
        }
        self.last_mem = Some(MemAccess {
            addr,
            size,
            value: v,
            write: false,
        });
        Ok(v)
    }

    fn mem_write(&mut self, pc: u64, addr: u64, size: u8, value: u64, _e: &mut InsnExec) -> Result<(), ExecError> {
        let mut v = value & mask(size);
        if self.observers.wants(EventKind::MemoryWrite) {
            let out = self.observers.dispatch(&Event::MemoryWrite { pc, addr, size, value: v });
            self.control(out);
            if let Some(o) = out.value {
                v = o & mask(size);
            }
        }
        let m = &mut self.machine;
        if m.irq.as_ref().is_some_and(|i| i.in_window(addr)) {
            m.irq.as_mut().expect("checked").window_write(addr, v);
        } else if let Some(d) = self.device_at(addr) {
            self.machine.devices[d].write(addr, size, v);
        } else if !self.machine.state.write_mem(addr, size, v) {
            self.materialize(pc, addr, size, true)?;
            self.machine.state.write_mem(addr, size, v);
        }
        self.last_mem = Some(MemAccess {
            addr,
            size,
            value: v,
            write: true,
        });
        Ok(())
    }

    /// Decides a conditional branch that leaves the instruction.
    fn decide(&mut self, pc: u64, target: u64, cond: &VarNode, value: u64) -> Option<bool> {
        let natural = value != 0;
        let mut taken = natural;
        if let super::Mode::Forced { flips } = &self.mode {
            if flips.contains(&pc) {
                taken = !taken;
            }
        }
        if let Some(fl) = self.flood.as_mut() {
            taken = fl.decide(pc, natural)?;
        } else if self.observers.wants(EventKind::CBranch) {
            let out = self.observers.dispatch(&Event::CBranch {
                pc,
                target,
                cond: *cond,
                condition: value,
                taken,
            });
            match out.control {
                Some(Response::FlipBranch) => taken = !taken,
                Some(Response::Fork) => {
                    let mut child = self.machine.clone();
                    child.state.pc = if taken { child.state.read_reg(&self.spec.pc) } else { target };
                    self.forks.push(child);
                }
                other => self.control(Outcome { control: other, value: None }),
            }
        }
        if self.flood.is_some() && self.observers.wants(EventKind::CBranch) {
            let out = self.observers.dispatch(&Event::CBranch {
                pc,
                target,
                cond: *cond,
                condition: value,
                taken,
            });
            if out.control == Some(Response::Halt) {
                self.halt_requested = true;
            }
        }
        if let Some(c) = self.machine.concolic.as_mut() {
            c.record_branch(&self.spec.spaces, pc, cond, value, taken);
        }
        Some(taken)
    }

    fn exec_op(&mut self, pc: u64, index: usize, op: &Operation, e: &mut InsnExec) -> Result<(OpFlow, Option<u64>), ExecError> {
        let spec = Arc::clone(&self.spec);
        let spaces = &spec.spaces;
        let mut vals = [0u64; 3];
        let mut extra: Vec<u64> = Vec::new();
        let mut output = None;
        let flow = match op.opcode {
            Opcode::Load => {
                let space = op.inputs[0].offset as u8;
                let out = op.output.expect("load has an output");
                vals[0] = space as u64;
                let raw = self.read_input(pc, &op.inputs[1]);
                let v = match spaces.kind(space) {
                    Some(SpaceKind::Register) => {
                        vals[1] = raw;
                        let vn = VarNode::new(space, raw, out.size);
                        if vn.end() > self.machine.state.regs.len() as u64 {
                            return Err(ExecError::BadAccess {
                                pc,
                                msg: format!("register load at 0x{:x}", raw),
                            });
                        }
                        self.read_input(pc, &vn)
                    }
                    Some(SpaceKind::Ram) => {
                        let addr = self.translate(raw, e);
                        vals[1] = addr;
                        self.mem_read(pc, addr, out.size)?
                    }
                    _ => {
                        return Err(ExecError::BadAccess {
                            pc,
                            msg: format!("load from space {}", space),
                        })
                    }
                };
                output = Some(self.write_output(pc, &out, v, e)?);
                OpFlow::Next
            }
            Opcode::Store => {
                let space = op.inputs[0].offset as u8;
                vals[0] = space as u64;
                let raw = self.read_input(pc, &op.inputs[1]);
                let val_vn = op.inputs[2];
                vals[2] = self.read_input(pc, &val_vn);
                match spaces.kind(space) {
                    Some(SpaceKind::Register) => {
                        vals[1] = raw;
                        let vn = VarNode::new(space, raw, val_vn.size);
                        if vn.end() > self.machine.state.regs.len() as u64 {
                            return Err(ExecError::BadAccess {
                                pc,
                                msg: format!("register store at 0x{:x}", raw),
                            });
                        }
                        self.write_output(pc, &vn, vals[2], e)?;
                    }
                    Some(SpaceKind::Ram) => {
                        let addr = self.translate(raw, e);
                        vals[1] = addr;
                        self.mem_write(pc, addr, val_vn.size, vals[2], e)?;
                    }
                    _ => {
                        return Err(ExecError::BadAccess {
                            pc,
                            msg: format!("store to space {}", space),
                        })
                    }
                }
                OpFlow::Next
            }
            Opcode::Branch => {
                if op.is_local_branch(spaces) {
                    OpFlow::Goto(op.inputs[0].offset as usize)
                } else {
                    OpFlow::Exit(Flow::Jump(op.inputs[0].offset))
                }
            }
            Opcode::CBranch => {
                vals[1] = self.read_input(pc, &op.inputs[1]);
                if op.is_local_branch(spaces) {
                    if vals[1] != 0 {
                        OpFlow::Goto(op.inputs[0].offset as usize)
                    } else {
                        OpFlow::Next
                    }
                } else {
                    let target = op.inputs[0].offset;
                    match self.decide(pc, target, &op.inputs[1], vals[1]) {
                        Some(true) => OpFlow::Exit(Flow::Jump(target)),
                        Some(false) => OpFlow::Next,
                        None => OpFlow::Exit(Flow::PathEnd),
                    }
                }
            }
            Opcode::IBranch | Opcode::Return => {
                vals[0] = self.read_input(pc, &op.inputs[0]);
                OpFlow::Exit(Flow::Jump(vals[0]))
            }
            Opcode::Call | Opcode::ICall => {
                let target = if op.opcode == Opcode::Call {
                    op.inputs[0].offset
                } else {
                    self.read_input(pc, &op.inputs[0])
                };
                vals[0] = target;
                let fallthrough = self.machine.state.read_reg(&spec.pc);
                let mut flow = OpFlow::Exit(Flow::Jump(target));
                if self.observers.wants(EventKind::Call) {
                    let out = self.observers.dispatch(&Event::Call { pc, target, fallthrough });
                    match out.control {
                        Some(Response::ReplaceCall(id)) => {
                            let h = self
                                .call_handlers
                                .get(&id)
                                .cloned()
                                .ok_or_else(|| ExecError::NoHandler(format!("call handler {}", id)))?;
                            h(&mut self.machine);
                            flow = OpFlow::Exit(Flow::Jump(fallthrough));
                        }
                        other => self.control(Outcome { control: other, value: None }),
                    }
                }
                flow
            }
            Opcode::Halt => OpFlow::Exit(Flow::Halt),
            Opcode::Intrinsic => {
                let name = op.intrinsic.clone().unwrap_or_default();
                extra = op.inputs.iter().map(|vn| self.machine.state.read_vn(vn)).collect();
                if self.machine.irq.as_ref().is_some_and(|i| i.is_return_intrinsic(&name)) {
                    let m = &mut self.machine;
                    m.irq.as_mut().expect("checked").return_from_interrupt(&mut m.state)?;
                    OpFlow::Exit(Flow::Jump(self.machine.state.pc))
                } else {
                    let h = self.intrinsics.get(&name).cloned().ok_or_else(|| ExecError::NoHandler(name.clone()))?;
                    let mut ctx = super::IntrinsicCtx {
                        machine: &mut self.machine,
                        pc,
                        spec: &spec,
                    };
                    let r = h(&mut ctx, &extra).map_err(|msg| ExecError::Intrinsic { name: name.clone(), msg })?;
                    if let Some(out) = op.output {
                        output = Some(self.write_output(pc, &out, r.unwrap_or(0), e)?);
                    }
                    if self.machine.state.halted {
                        self.machine.state.halted = false;
                        OpFlow::Exit(Flow::Halt)
                    } else {
                        OpFlow::Next
                    }
                }
            }
            o => {
                let n = op.inputs.len();
                for (i, vn) in op.inputs.iter().enumerate() {
                    vals[i] = self.read_input(pc, vn);
                }
                let out = op.output.expect("pure ops have outputs");
                let r = semantics::eval(o, &vals[..n], op.inputs[0].size, out.size).ok_or_else(|| ExecError::BadAccess {
                    pc,
                    msg: format!("{} has no semantics", o),
                })?;
                output = Some(self.write_output(pc, &out, r, e)?);
                OpFlow::Next
            }
        };
        let inputs: &[u64] = if op.opcode == Opcode::Intrinsic {
            &extra
        } else {
            &vals[..op.inputs.len().min(3)]
        };
        if let Some(c) = self.machine.concolic.as_mut() {
            c.shadow.step(spaces, op, inputs, output.unwrap_or(0), None);
        }
        if self.observers.wants(EventKind::OperationStep) {
            let out = self.observers.dispatch(&Event::OperationStep { pc, index, op, inputs, output });
            self.control(out);
        }
        Ok((flow, output))
    }
}
