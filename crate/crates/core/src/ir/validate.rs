use std::fmt;

use super::{valid_size, Arity, IrBlock, Opcode, Operation, SpaceKind, SpaceTable};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub address: u64,
    pub op_index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op_index {
            Some(i) => write!(f, "0x{:x} op {}: {}", self.address, i, self.message),
            None => write!(f, "0x{:x}: {}", self.address, self.message),
        }
    }
}

/// Checks every structural invariant of a block and returns all violations.
pub fn validate_block(block: &IrBlock, spaces: &SpaceTable) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let n = block.instructions.len();
    for (ii, insn) in block.instructions.iter().enumerate() {
        let mut push = |op_index: Option<usize>, message: String| {
            diags.push(Diagnostic {
                address: insn.address,
                op_index,
                message,
            })
        };
        if insn.ops.is_empty() {
            push(None, "instruction has no ops".into());
        }
        if insn.length == 0 {
            push(None, "instruction length must be positive".into());
        }
        for (oi, op) in insn.ops.iter().enumerate() {
            for msg in check_op(op, spaces, insn.ops.len()) {
                push(Some(oi), msg);
            }
            if ii + 1 != n && op.is_inter_transfer(spaces) {
                push(Some(oi), "terminator not last".into());
            }
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_op(op: &Operation, spaces: &SpaceTable, insn_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    for vn in op.inputs.iter().chain(op.output.iter()) {
        if !valid_size(vn.size) {
            out.push(format!("invalid varnode size {}", vn.size));
        }
        match spaces.get(vn.space) {
            None => out.push(format!("unknown space id {}", vn.space)),
            Some(sp) if sp.kind != SpaceKind::Constant && vn.end() > sp.extent => {
                out.push(format!("varnode 0x{:x}:{} exceeds space `{}`", vn.offset, vn.size, sp.name))
            }
            _ => {}
        }
    }
    if let Arity::Fixed(n) = op.opcode.arity() {
        if op.inputs.len() != n {
            out.push(format!("{} needs {} inputs, got {}", op.opcode, n, op.inputs.len()));
            return out;
        }
    }
    if op.opcode.has_output() && op.opcode != Opcode::Intrinsic && op.output.is_none() {
        out.push(format!("{} needs an output", op.opcode));
        return out;
    }
    if !op.opcode.has_output() && op.output.is_some() {
        out.push(format!("{} takes no output", op.opcode));
    }
    if let Some(o) = &op.output {
        if spaces.kind(o.space) == Some(SpaceKind::Constant) {
            out.push("write to constant space".into());
        }
    }
    if (op.opcode == Opcode::Intrinsic) != op.intrinsic.is_some() {
        out.push("intrinsic name present iff opcode is INTRINSIC".into());
    }
    let is_const = |i: usize| spaces.kind(op.inputs[i].space) == Some(SpaceKind::Constant);
    let out_size = op.output.map(|o| o.size).unwrap_or(0);
    match op.opcode {
        Opcode::Copy => {
            if out_size != op.inputs[0].size {
                out.push("COPY output size differs from input".into());
            }
        }
        Opcode::Load | Opcode::Store => {
            let sp = op.inputs[0];
            let ok = is_const(0) && spaces.get(sp.offset as u8).is_some_and(|s| s.kind != SpaceKind::Constant && sp.offset < 256);
            if !ok {
                out.push(format!("{} needs a space-id constant first", op.opcode));
            }
        }
        Opcode::CBranch => {
            if op.inputs[1].size != 1 {
                out.push("condition must be size 1".into());
            }
        }
        Opcode::IntZExt | Opcode::IntSExt => {
            if out_size <= op.inputs[0].size {
                out.push("extension must widen".into());
            }
        }
        Opcode::Trunc => {
            if out_size >= op.inputs[0].size {
                out.push("TRUNC must narrow".into());
            }
        }
        Opcode::BoolNot => {
            if op.inputs[0].size != 1 || out_size != 1 {
                out.push("BOOL_NOT operates on size 1".into());
            }
        }
        o if o.is_binary() => {
            if op.inputs[0].size != op.inputs[1].size {
                out.push(format!("{} inputs differ in size", o));
            }
            if o.is_comparison() {
                if out_size != 1 {
                    out.push("comparison output must be size 1".into());
                }
            } else if out_size != op.inputs[0].size {
                out.push(format!("{} output size differs from inputs", o));
            }
        }
        _ => {}
    }
    if matches!(op.opcode, Opcode::Branch | Opcode::CBranch) && is_const(0) {
        let target = op.inputs[0].offset;
        if target > insn_len as u64 {
            out.push(format!("local branch target {} out of range", target));
        }
    }
    out
}
