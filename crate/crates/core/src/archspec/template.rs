//! Semantic templates and their instantiation into IR operations.

use std::collections::HashMap;

use crate::ir::{mask, Opcode, Operation, SpaceKind, VarNode};
use crate::semantics;

use super::ProcessorSpec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Reg(String),
    /// `PREFIX[field]` names the register `PREFIX<field value>`.
    Indexed {
        prefix: String,
        field: String,
    },
    Field {
        name: String,
        size: Option<u8>,
    },
    Lit {
        value: u64,
        size: Option<u8>,
    },
    Tmp(String),
    InstStart,
    InstNext,
    Apply {
        op: Opcode,
        size: Option<u8>,
        args: Vec<Expr>,
    },
    Load {
        size: u8,
        space: String,
        addr: Box<Expr>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Dest {
    Reg(String),
    Indexed { prefix: String, field: String },
    Tmp { name: String, size: Option<u8> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Assign { dst: Dest, expr: Expr },
    Store { space: String, addr: Expr, size: u8, value: Expr },
    Branch(Expr),
    CBranch(Expr, Expr),
    Call(Expr),
    Return(Expr),
    Intrinsic { name: String, args: Vec<Expr>, out: Option<Dest> },
    Halt,
    Label(String),
    Goto(String),
    IfGoto(Expr, String),
}

/// Instantiation context for one instruction.
pub(crate) struct Lowering<'a> {
    spec: &'a ProcessorSpec,
    fields: &'a [(String, u64)],
    inst_start: u64,
    inst_next: u64,
    ops: Vec<Operation>,
    tmp_next: u64,
    tmps: HashMap<String, VarNode>,
    labels: HashMap<String, usize>,
    fixups: Vec<(usize, String)>,
}

type R<T> = Result<T, String>;

impl<'a> Lowering<'a> {
    pub(crate) fn new(spec: &'a ProcessorSpec, fields: &'a [(String, u64)], inst_start: u64, inst_next: u64) -> Self {
        Lowering {
            spec,
            fields,
            inst_start,
            inst_next,
            ops: Vec::new(),
            tmp_next: 0,
            tmps: HashMap::new(),
            labels: HashMap::new(),
            fixups: Vec::new(),
        }
    }

    pub(crate) fn run(mut self, stmts: &[Stmt]) -> R<Vec<Operation>> {
        for s in stmts {
            self.stmt(s)?;
        }
        for (idx, label) in std::mem::take(&mut self.fixups) {
            let Some(&target) = self.labels.get(&label) else {
                return Err(format!("undefined label `{}`", label));
            };
            self.ops[idx].inputs[0] = self.konst(target as u64, 4);
        }
        if self.ops.is_empty() {
            return Err("template produces no operations".into());
        }
        Ok(self.ops)
    }

    fn konst(&self, value: u64, size: u8) -> VarNode {
        VarNode::new(self.spec.spaces.constant(), value & mask(size), size)
    }

    fn field(&self, name: &str) -> R<u64> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("unknown field `{}`", name))
    }

    fn reg(&self, name: &str) -> R<VarNode> {
        self.spec.register(name).ok_or_else(|| format!("unknown register `{}`", name))
    }

    fn indexed(&self, prefix: &str, field: &str) -> R<VarNode> {
        let v = self.field(field)?;
        self.reg(&format!("{}{}", prefix, v))
    }

    fn alloc_tmp(&mut self, size: u8) -> R<VarNode> {
        let s = size as u64;
        let off = self.tmp_next.div_ceil(s) * s;
        let space = self.spec.spaces.temporary();
        let extent = self.spec.spaces.get(space).map(|sp| sp.extent).unwrap_or(0);
        if off + s > extent {
            return Err("temporary space exhausted".into());
        }
        self.tmp_next = off + s;
        Ok(VarNode::new(space, off, size))
    }

    fn space_id(&self, name: &str) -> R<VarNode> {
        let sp = self.spec.spaces.by_name(name).ok_or_else(|| format!("unknown space `{}`", name))?;
        if sp.kind == SpaceKind::Constant {
            return Err("cannot address the constant space".into());
        }
        Ok(self.konst(sp.id as u64, crate::ir::SPACE_ID_SIZE))
    }

    fn pc_size(&self) -> u8 {
        self.spec.pc.size
    }

    /// Size an expression has regardless of its context, if any.
    fn known_size(&self, e: &Expr) -> Option<u8> {
        match e {
            Expr::Reg(n) => self.spec.register(n).map(|v| v.size),
            Expr::Indexed { prefix, field } => self.indexed(prefix, field).ok().map(|v| v.size),
            Expr::Field { size, .. } | Expr::Lit { size, .. } => *size,
            Expr::Tmp(n) => self.tmps.get(n).map(|v| v.size),
            Expr::InstStart | Expr::InstNext => Some(self.pc_size()),
            Expr::Load { size, .. } => Some(*size),
            Expr::Apply { op, size, args } => match op {
                Opcode::IntZExt | Opcode::IntSExt | Opcode::Trunc => *size,
                Opcode::BoolNot => Some(1),
                o if o.is_comparison() => Some(1),
                _ => size.or_else(|| args.iter().find_map(|a| self.known_size(a))),
            },
        }
    }

    fn leaf_const(&self, value: u64, size: Option<u8>, expected: Option<u8>) -> R<VarNode> {
        let size = size.or(expected).unwrap_or(4);
        if value & !mask(size) != 0 {
            return Err(format!("constant 0x{:x} does not fit in {} bytes", value, size));
        }
        Ok(self.konst(value, size))
    }

    /// Folds an expression that depends only on fields and literals.
    pub(crate) fn const_eval(&self, e: &Expr) -> Option<u64> {
        match e {
            Expr::Lit { value, .. } => Some(*value),
            Expr::Field { name, .. } => self.field(name).ok(),
            Expr::InstStart => Some(self.inst_start),
            Expr::InstNext => Some(self.inst_next),
            Expr::Apply { op, size, args } => {
                let vals: Option<Vec<u64>> = args.iter().map(|a| self.const_eval(a)).collect();
                let in_size = args.first().and_then(|a| self.known_size(a)).unwrap_or(8);
                let out = size.or_else(|| semantics::natural_out_size(*op, in_size))?;
                semantics::eval(*op, &vals?, in_size, out)
            }
            _ => None,
        }
    }

    fn expr(&mut self, e: &Expr, expected: Option<u8>) -> R<VarNode> {
        match e {
            Expr::Reg(n) => self.reg(n),
            Expr::Indexed { prefix, field } => self.indexed(prefix, field),
            Expr::Field { name, size } => {
                let v = self.field(name)?;
                self.leaf_const(v, *size, expected)
            }
            Expr::Lit { value, size } => self.leaf_const(*value, *size, expected),
            Expr::Tmp(n) => self.tmps.get(n).copied().ok_or_else(|| format!("temporary `{}` used before definition", n)),
            Expr::InstStart => Ok(self.konst(self.inst_start, self.pc_size())),
            Expr::InstNext => Ok(self.konst(self.inst_next, self.pc_size())),
            Expr::Apply { .. } | Expr::Load { .. } => {
                let (op, size) = self.compute(e, expected)?;
                let out = self.alloc_tmp(size)?;
                self.emit_with_output(op, out);
                Ok(out)
            }
        }
    }

    fn emit_with_output(&mut self, mut op: Operation, out: VarNode) {
        op.output = Some(out);
        self.ops.push(op);
    }

    /// Builds the operation for an interior node, returning it with its output size.
    fn compute(&mut self, e: &Expr, expected: Option<u8>) -> R<(Operation, u8)> {
        match e {
            Expr::Load { size, space, addr } => {
                let sp = self.space_id(space)?;
                let a = self.expr(addr, None)?;
                Ok((Operation::new(Opcode::Load, vec![sp, a], None), *size))
            }
            Expr::Apply { op, size, args } => {
                let op = *op;
                match op {
                    Opcode::IntZExt | Opcode::IntSExt | Opcode::Trunc => {
                        let out = size.ok_or_else(|| format!("{} needs an explicit size", op))?;
                        let [a] = args.as_slice() else {
                            return Err(format!("{} takes one argument", op));
                        };
                        let inner = self.known_size(a).ok_or_else(|| format!("cannot infer operand size of {}", op))?;
                        let v = self.expr(a, Some(inner))?;
                        let ok = if op == Opcode::Trunc { out < v.size } else { out > v.size };
                        if !ok {
                            return Err(format!("{}:{} invalid for a {}-byte operand", op, out, v.size));
                        }
                        Ok((Operation::new(op, vec![v], None), out))
                    }
                    Opcode::BoolNot => {
                        let [a] = args.as_slice() else {
                            return Err("BOOL_NOT takes one argument".into());
                        };
                        let v = self.expr(a, Some(1))?;
                        if v.size != 1 {
                            return Err("BOOL_NOT needs a 1-byte operand".into());
                        }
                        Ok((Operation::new(op, vec![v], None), 1))
                    }
                    Opcode::Copy => {
                        let [a] = args.as_slice() else {
                            return Err("COPY takes one argument".into());
                        };
                        let v = self.expr(a, size.or(expected))?;
                        Ok((Operation::new(op, vec![v], None), v.size))
                    }
                    o if o.is_binary() => {
                        let [a, b] = args.as_slice() else {
                            return Err(format!("{} takes two arguments", o));
                        };
                        let mut s = self.known_size(a).or_else(|| self.known_size(b));
                        if !o.is_comparison() {
                            s = s.or(*size).or(expected);
                        }
                        let s = s.unwrap_or(4);
                        let va = self.expr(a, Some(s))?;
                        let vb = self.expr(b, Some(s))?;
                        if va.size != vb.size {
                            return Err(format!("{} operand sizes differ ({} vs {})", o, va.size, vb.size));
                        }
                        let out = if o.is_comparison() { 1 } else { s };
                        Ok((Operation::new(o, vec![va, vb], None), out))
                    }
                    o => Err(format!("{} cannot appear in an expression", o)),
                }
            }
            _ => unreachable!("compute on a leaf"),
        }
    }

    fn dest(&mut self, d: &Dest, rhs_size: Option<u8>) -> R<VarNode> {
        match d {
            Dest::Reg(n) => self.reg(n),
            Dest::Indexed { prefix, field } => self.indexed(prefix, field),
            Dest::Tmp { name, size } => {
                if let Some(&vn) = self.tmps.get(name) {
                    if size.is_some_and(|s| s != vn.size) {
                        return Err(format!("temporary `{}` redefined with another size", name));
                    }
                    return Ok(vn);
                }
                let s = size.or(rhs_size).ok_or_else(|| format!("temporary `{}` needs a size", name))?;
                let vn = self.alloc_tmp(s)?;
                self.tmps.insert(name.clone(), vn);
                Ok(vn)
            }
        }
    }

    fn target(&mut self, e: &Expr) -> R<(VarNode, bool)> {
        if let Some(v) = self.const_eval(e) {
            let ram = self.spec.spaces.ram().ok_or("direct branch needs a ram space")?;
            let size = self.pc_size();
            return Ok((VarNode::new(ram, v & mask(size), size), true));
        }
        Ok((self.expr(e, Some(self.pc_size()))?, false))
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        match s {
            Stmt::Assign { dst, expr } => {
                let rhs_known = self.known_size(expr);
                let out = self.dest(dst, rhs_known)?;
                match expr {
                    Expr::Apply { .. } | Expr::Load { .. } => {
                        let (op, size) = self.compute(expr, Some(out.size))?;
                        if size != out.size {
                            return Err(format!("assigning a {}-byte value to a {}-byte destination", size, out.size));
                        }
                        self.emit_with_output(op, out);
                    }
                    _ => {
                        let v = self.expr(expr, Some(out.size))?;
                        if v.size != out.size {
                            return Err(format!("assigning a {}-byte value to a {}-byte destination", v.size, out.size));
                        }
                        self.ops.push(Operation::new(Opcode::Copy, vec![v], Some(out)));
                    }
                }
            }
            Stmt::Store { space, addr, size, value } => {
                let sp = self.space_id(space)?;
                let a = self.expr(addr, None)?;
                let v = self.expr(value, Some(*size))?;
                if v.size != *size {
                    return Err(format!("store of {} bytes given a {}-byte value", size, v.size));
                }
                self.ops.push(Operation::new(Opcode::Store, vec![sp, a, v], None));
            }
            Stmt::Branch(e) => {
                let (t, direct) = self.target(e)?;
                let op = if direct { Opcode::Branch } else { Opcode::IBranch };
                self.ops.push(Operation::new(op, vec![t], None));
            }
            Stmt::Call(e) => {
                let (t, direct) = self.target(e)?;
                let op = if direct { Opcode::Call } else { Opcode::ICall };
                self.ops.push(Operation::new(op, vec![t], None));
            }
            Stmt::CBranch(t, c) => {
                let (t, direct) = self.target(t)?;
                if !direct {
                    return Err("conditional branch target must be constant".into());
                }
                let c = self.expr(c, Some(1))?;
                if c.size != 1 {
                    return Err("condition must be size 1".into());
                }
                self.ops.push(Operation::new(Opcode::CBranch, vec![t, c], None));
            }
            Stmt::Return(e) => {
                let v = self.expr(e, Some(self.pc_size()))?;
                self.ops.push(Operation::new(Opcode::Return, vec![v], None));
            }
            Stmt::Intrinsic { name, args, out } => {
                let mut ins = Vec::new();
                for a in args {
                    ins.push(self.expr(a, None)?);
                }
                let out = match out {
                    Some(d) => Some(self.dest(d, None)?),
                    None => None,
                };
                self.ops.push(Operation::intrinsic(name, ins, out));
            }
            Stmt::Halt => self.ops.push(Operation::new(Opcode::Halt, vec![], None)),
            Stmt::Label(l) => {
                if self.labels.insert(l.clone(), self.ops.len()).is_some() {
                    return Err(format!("label `{}` defined twice", l));
                }
            }
            Stmt::Goto(l) => {
                self.fixups.push((self.ops.len(), l.clone()));
                let placeholder = self.konst(0, 4);
                self.ops.push(Operation::new(Opcode::Branch, vec![placeholder], None));
            }
            Stmt::IfGoto(c, l) => {
                let c = self.expr(c, Some(1))?;
                if c.size != 1 {
                    return Err("condition must be size 1".into());
                }
                self.fixups.push((self.ops.len(), l.clone()));
                let placeholder = self.konst(0, 4);
                self.ops.push(Operation::new(Opcode::CBranch, vec![placeholder, c], None));
            }
        }
        Ok(())
    }
}
