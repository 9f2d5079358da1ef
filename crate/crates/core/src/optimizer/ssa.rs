//! Expression-tree view of a block with versioned overlap classes.

use std::fmt;

use crate::archspec::ProcessorSpec;
use crate::ir::{mask, IrBlock, Opcode, Operation, SpaceKind, SpaceTable, VarNode};

use super::overlap::Overlap;

/// A versioned overlap class. Temporaries carry the index of the
/// instruction they belong to, so equal offsets in different instructions
/// never alias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SsaVar {
    pub rep: VarNode,
    pub scope: Option<usize>,
    pub version: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SsaExpr {
    Const {
        value: u64,
        size: u8,
    },
    Var(SsaVar),
    Op {
        opcode: Opcode,
        size: u8,
        args: Vec<SsaExpr>,
    },
    /// A value the block cannot describe, such as registers clobbered by an intrinsic.
    Opaque {
        size: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SsaStatement {
    pub insn: usize,
    /// Absent for effects.
    pub target: Option<SsaVar>,
    pub expr: SsaExpr,
    pub intrinsic: Option<String>,
    /// Ops of an instruction with internal control flow, kept as a unit.
    pub verbatim: Vec<Operation>,
}

impl SsaExpr {
    pub fn size(&self) -> u8 {
        match self {
            SsaExpr::Const { size, .. } | SsaExpr::Op { size, .. } | SsaExpr::Opaque { size } => *size,
            SsaExpr::Var(v) => v.rep.size,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            SsaExpr::Op { args, .. } => 1 + args.iter().map(|a| a.depth()).max().unwrap_or(0),
            _ => 0,
        }
    }
}

impl fmt::Display for SsaVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = if self.scope.is_some() { "u" } else { "r" };
        write!(f, "{}{:x}:{}", prefix, self.rep.offset, self.rep.size)?;
        if let Some(s) = self.scope {
            write!(f, "@{}", s)?;
        }
        write!(f, "_{}", self.version)
    }
}

impl fmt::Display for SsaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SsaExpr::Const { value, size } => write!(f, "#0x{:x}:{}", value, size),
            SsaExpr::Var(v) => write!(f, "{}", v),
            SsaExpr::Opaque { size } => write!(f, "?:{}", size),
            SsaExpr::Op { opcode, args, .. } => {
                write!(f, "{}(", opcode)?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", a)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for SsaStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.verbatim.is_empty() {
            return write!(f, "verbatim {} ops", self.verbatim.len());
        }
        match &self.target {
            Some(t) => write!(f, "{} = {}", t, self.expr),
            None => write!(f, "{}", self.expr),
        }
    }
}

/// Tracks the current value of every class in one scope.
struct Scope {
    overlap: Overlap,
    cur: Vec<SsaExpr>,
    version: Vec<u32>,
    id: Option<usize>,
}

impl Scope {
    fn new(overlap: Overlap, id: Option<usize>) -> Scope {
        let cur = overlap
            .classes
            .iter()
            .map(|c| {
                SsaExpr::Var(SsaVar {
                    rep: c.rep,
                    scope: id,
                    version: 0,
                })
            })
            .collect();
        let version = vec![0; overlap.classes.len()];
        Scope { overlap, cur, version, id }
    }

    fn read(&self, vn: &VarNode) -> SsaExpr {
        let c = self.overlap.class_of(vn).expect("varnode collected into a class");
        let rep = self.overlap.classes[c].rep;
        if rep == *vn {
            return self.cur[c].clone();
        }
        let sh = self.overlap.shift(c, vn);
        let mut e = self.cur[c].clone();
        if sh != 0 {
            e = SsaExpr::Op {
                opcode: Opcode::IntRight,
                size: rep.size,
                args: vec![
                    e,
                    SsaExpr::Const {
                        value: sh as u64,
                        size: rep.size,
                    },
                ],
            };
        }
        SsaExpr::Op {
            opcode: Opcode::Trunc,
            size: vn.size,
            args: vec![e],
        }
    }

    /// Value of the class after storing `x` into member `vn`.
    fn insert(&self, vn: &VarNode, x: SsaExpr) -> (usize, SsaExpr) {
        let c = self.overlap.class_of(vn).expect("varnode collected into a class");
        let rep = self.overlap.classes[c].rep;
        if rep == *vn {
            return (c, x);
        }
        let w = rep.size;
        let sh = self.overlap.shift(c, vn);
        let hole = !(mask(vn.size) << sh) & mask(w);
        let kept = SsaExpr::Op {
            opcode: Opcode::IntAnd,
            size: w,
            args: vec![self.cur[c].clone(), SsaExpr::Const { value: hole, size: w }],
        };
        let mut ins = SsaExpr::Op {
            opcode: Opcode::IntZExt,
            size: w,
            args: vec![x],
        };
        if sh != 0 {
            ins = SsaExpr::Op {
                opcode: Opcode::IntLeft,
                size: w,
                args: vec![ins, SsaExpr::Const { value: sh as u64, size: w }],
            };
        }
        (
            c,
            SsaExpr::Op {
                opcode: Opcode::IntOr,
                size: w,
                args: vec![kept, ins],
            },
        )
    }

    fn define(&mut self, c: usize) -> SsaVar {
        self.version[c] += 1;
        let v = SsaVar {
            rep: self.overlap.classes[c].rep,
            scope: self.id,
            version: self.version[c],
        };
        self.cur[c] = SsaExpr::Var(v);
        v
    }

    fn write(&mut self, vn: &VarNode, x: SsaExpr) -> (SsaVar, SsaExpr) {
        let (c, value) = self.insert(vn, x);
        (self.define(c), value)
    }
}

fn collect(ops: &[Operation], spaces: &SpaceTable, kind: SpaceKind) -> Vec<VarNode> {
    ops.iter()
        .flat_map(|op| op.inputs.iter().chain(op.output.iter()))
        .filter(|vn| spaces.kind(vn.space) == Some(kind))
        .copied()
        .collect()
}

fn is_space_id_operand(op: &Operation, idx: usize) -> bool {
    idx == 0 && matches!(op.opcode, Opcode::Load | Opcode::Store)
}

fn is_target_operand(op: &Operation, idx: usize) -> bool {
    idx == 0 && matches!(op.opcode, Opcode::Branch | Opcode::CBranch | Opcode::Call)
}

/// Converts a block to versioned statements.
///
/// A definition of any class member creates a new version of the whole
/// class; reads of narrower members truncate the class value.
pub fn to_ssa(block: &IrBlock, spec: &ProcessorSpec) -> Result<Vec<SsaStatement>, String> {
    let spaces = &spec.spaces;
    let all_ops: Vec<Operation> = block.instructions.iter().flat_map(|i| i.ops.iter().cloned()).collect();
    let mut reg_vns = collect(&all_ops, spaces, SpaceKind::Register);
    reg_vns.push(spec.pc);
    let mut regs = Scope::new(Overlap::build(reg_vns, spec.endian)?, None);
    let mut out = Vec::new();
    for (i, insn) in block.instructions.iter().enumerate() {
        let next = insn.address.wrapping_add(insn.length as u64);
        let (pc_class, preset) = regs.insert(
            &spec.pc,
            SsaExpr::Const {
                value: next & mask(spec.pc.size),
                size: spec.pc.size,
            },
        );
        regs.cur[pc_class] = preset;
        let mut temps = Scope::new(Overlap::build(collect(&insn.ops, spaces, SpaceKind::Temporary), spec.endian)?, Some(i));
        if insn.has_local_control(spaces) {
            out.push(SsaStatement {
                insn: i,
                target: None,
                expr: SsaExpr::Opaque { size: 0 },
                intrinsic: None,
                verbatim: insn.ops.clone(),
            });
            for vn in insn.ops.iter().filter_map(|o| o.output) {
                if spaces.kind(vn.space) == Some(SpaceKind::Register) {
                    let c = regs.overlap.class_of(&vn).expect("collected");
                    let size = regs.overlap.classes[c].rep.size;
                    let t = regs.define(c);
                    out.push(SsaStatement {
                        insn: i,
                        target: Some(t),
                        expr: SsaExpr::Opaque { size },
                        intrinsic: None,
                        verbatim: vec![],
                    });
                }
            }
            continue;
        }
        for op in &insn.ops {
            let args: Vec<SsaExpr> = op
                .inputs
                .iter()
                .enumerate()
                .map(|(k, vn)| match spaces.kind(vn.space) {
                    _ if is_space_id_operand(op, k) || is_target_operand(op, k) => SsaExpr::Const {
                        value: vn.offset,
                        size: vn.size,
                    },
                    Some(SpaceKind::Register) => regs.read(vn),
                    Some(SpaceKind::Temporary) => temps.read(vn),
                    _ => SsaExpr::Const {
                        value: vn.offset,
                        size: vn.size,
                    },
                })
                .collect();
            let size = op.output.map(|o| o.size).unwrap_or(0);
            let expr = if op.opcode == Opcode::Copy {
                args.into_iter().next().expect("validated")
            } else {
                SsaExpr::Op { opcode: op.opcode, size, args }
            };
            let clobbers = op.opcode == Opcode::Intrinsic || (op.opcode == Opcode::Store && op.inputs[0].offset as u8 == spaces.register());
            let stmt = |target, expr| SsaStatement {
                insn: i,
                target,
                expr,
                intrinsic: op.intrinsic.clone(),
                verbatim: vec![],
            };
            if clobbers {
                out.push(stmt(None, expr));
                for c in 0..regs.cur.len() {
                    let size = regs.overlap.classes[c].rep.size;
                    let t = regs.define(c);
                    out.push(stmt(Some(t), SsaExpr::Opaque { size }));
                }
                if let Some(o) = op.output {
                    let scope = if spaces.kind(o.space) == Some(SpaceKind::Temporary) {
                        &mut temps
                    } else {
                        &mut regs
                    };
                    let (t, v) = scope.write(&o, SsaExpr::Opaque { size: o.size });
                    out.push(stmt(Some(t), v));
                }
                continue;
            }
            match op.output {
                Some(o) => {
                    let scope = if spaces.kind(o.space) == Some(SpaceKind::Temporary) {
                        &mut temps
                    } else {
                        &mut regs
                    };
                    let (t, v) = scope.write(&o, expr);
                    out.push(stmt(Some(t), v));
                }
                None => out.push(stmt(None, expr)),
            }
        }
    }
    Ok(out)
}
