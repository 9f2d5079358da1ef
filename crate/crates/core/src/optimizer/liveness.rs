//! Byte-granular liveness and dead-assignment removal.
//!
//! Temporaries never carry values across instruction boundaries, so their
//! live set is cleared at each boundary. Every register is assumed live at
//! block exit and wherever control may leave or an opaque effect may look at
//! register state.

use std::collections::BTreeSet;

use crate::ir::{IrBlock, Opcode, Operation, SpaceKind, SpaceTable, VarNode};

/// Live bytes, keyed by offset in the register and temporary spaces.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LiveSet {
    pub all_regs: bool,
    pub regs: BTreeSet<u64>,
    pub temps: BTreeSet<u64>,
}

impl LiveSet {
    fn everything() -> LiveSet {
        LiveSet {
            all_regs: true,
            ..LiveSet::default()
        }
    }

    fn set_all_regs(&mut self) {
        self.all_regs = true;
        self.regs.clear();
    }

    pub fn is_live(&self, vn: &VarNode, spaces: &SpaceTable) -> bool {
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) => self.all_regs || (vn.offset..vn.end()).any(|b| self.regs.contains(&b)),
            Some(SpaceKind::Temporary) => (vn.offset..vn.end()).any(|b| self.temps.contains(&b)),
            _ => true,
        }
    }

    fn kill(&mut self, vn: &VarNode, spaces: &SpaceTable, reg_extent: u64) {
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) => {
                if self.all_regs {
                    self.all_regs = false;
                    self.regs = (0..reg_extent).collect();
                }
                for b in vn.offset..vn.end() {
                    self.regs.remove(&b);
                }
            }
            Some(SpaceKind::Temporary) => {
                for b in vn.offset..vn.end() {
                    self.temps.remove(&b);
                }
            }
            _ => {}
        }
    }

    fn gen(&mut self, vn: &VarNode, spaces: &SpaceTable) {
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) if !self.all_regs => self.regs.extend(vn.offset..vn.end()),
            Some(SpaceKind::Temporary) => self.temps.extend(vn.offset..vn.end()),
            _ => {}
        }
    }
}

fn in_space(vn: &VarNode, spaces: &SpaceTable, kind: SpaceKind) -> bool {
    spaces.kind(vn.space) == Some(kind)
}

/// Whether an op can observe every register (control leaves the block, or
/// the op's effect is opaque).
fn observes_registers(op: &Operation, spaces: &SpaceTable) -> bool {
    match op.opcode {
        Opcode::Intrinsic => true,
        Opcode::Load | Opcode::Store => op.inputs.first().map(|s| s.offset as u8) == Some(spaces.register()),
        _ => op.is_inter_transfer(spaces),
    }
}

/// Whether an op must survive even when its output is dead.
pub fn is_effect(op: &Operation) -> bool {
    !op.opcode.is_pure()
}

/// Computes the live-out set of every op, grouped per instruction.
pub fn liveness(block: &IrBlock, spaces: &SpaceTable) -> Vec<Vec<LiveSet>> {
    walk(block, spaces, None, &mut |_, _, _| true)
}

/// Removes assignments whose output bytes are all dead. Writes to `pc` are kept.
pub fn eliminate_dead(block: &IrBlock, spaces: &SpaceTable, pc: VarNode) -> IrBlock {
    let mut keep: Vec<Vec<bool>> = block.instructions.iter().map(|i| vec![true; i.ops.len()]).collect();
    walk(block, spaces, Some(pc), &mut |i, j, k| {
        keep[i][j] = k;
        k
    });
    let mut out = block.clone();
    for (insn, keep) in out.instructions.iter_mut().zip(keep) {
        let mut it = keep.into_iter();
        insn.ops.retain(|_| it.next().unwrap_or(true));
    }
    out
}

/// Backward walk. `decide(insn, op, removable_if_dead)` reports a dead
/// candidate and returns whether the op is kept.
fn walk(block: &IrBlock, spaces: &SpaceTable, pc: Option<VarNode>, decide: &mut dyn FnMut(usize, usize, bool) -> bool) -> Vec<Vec<LiveSet>> {
    let reg_extent = spaces.get(spaces.register()).map(|s| s.extent).unwrap_or(0);
    let mut live = LiveSet::everything();
    let mut result = vec![Vec::new(); block.instructions.len()];
    for (i, insn) in block.instructions.iter().enumerate().rev() {
        live.temps.clear();
        let mut outs = vec![LiveSet::default(); insn.ops.len()];
        if insn.has_local_control(spaces) {
            // Loops inside the instruction: keep everything and kill nothing.
            for (j, op) in insn.ops.iter().enumerate().rev() {
                outs[j] = live.clone();
                if observes_registers(op, spaces) {
                    live.set_all_regs();
                }
                for vn in &op.inputs {
                    live.gen(vn, spaces);
                }
            }
            for op in &insn.ops {
                for vn in &op.inputs {
                    live.gen(vn, spaces);
                }
            }
            result[i] = outs;
            continue;
        }
        for (j, op) in insn.ops.iter().enumerate().rev() {
            outs[j] = live.clone();
            if let Some(out) = op.output {
                let dead = !is_effect(op) && Some(out) != pc && !live.is_live(&out, spaces);
                let kept = decide(i, j, !dead);
                if !kept {
                    continue;
                }
                live.kill(&out, spaces, reg_extent);
            }
            if observes_registers(op, spaces) {
                live.set_all_regs();
            }
            for vn in &op.inputs {
                if in_space(vn, spaces, SpaceKind::Register) || in_space(vn, spaces, SpaceKind::Temporary) {
                    live.gen(vn, spaces);
                }
            }
        }
        result[i] = outs;
    }
    result
}
