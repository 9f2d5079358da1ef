//! Taint tracking that mirrors concrete execution with expressions.
//!
//! Untainted locations hold no entry; their value is the concrete one.

use std::collections::HashMap;

use crate::archspec::Endian;
use crate::ir::{mask, Opcode, Operation, SpaceKind, SpaceTable, VarNode};

use super::SymExpr;

#[derive(Clone, Debug)]
pub struct Shadow {
    endian: Endian,
    next_var: u32,
    regs: Vec<(VarNode, SymExpr)>,
    temps: Vec<(VarNode, SymExpr)>,
    mem: HashMap<u64, SymExpr>,
}

fn konst(v: u64, size: u8) -> SymExpr {
    SymExpr::constant(v, size)
}

/// Byte `k` (counting from the least significant) of `e`.
fn extract_byte(e: &SymExpr, k: u32) -> SymExpr {
    if e.size() == 1 && k == 0 {
        return e.clone();
    }
    let shifted = if k == 0 {
        e.clone()
    } else {
        SymExpr::apply(Opcode::IntRight, e.size(), vec![e.clone(), konst(k as u64 * 8, e.size())])
    };
    SymExpr::apply(Opcode::Trunc, 1, vec![shifted])
}

/// `outer` with `x` stored at bit offset `sh`.
fn insert(outer: SymExpr, x: SymExpr, sh: u32) -> SymExpr {
    let w = outer.size();
    let hole = !(mask(x.size()) << sh) & mask(w);
    let kept = SymExpr::apply(Opcode::IntAnd, w, vec![outer, konst(hole, w)]);
    let mut ins = SymExpr::apply(Opcode::IntZExt, w, vec![x]);
    if sh != 0 {
        ins = SymExpr::apply(Opcode::IntLeft, w, vec![ins, konst(sh as u64, w)]);
    }
    SymExpr::apply(Opcode::IntOr, w, vec![kept, ins])
}

impl Shadow {
    pub fn new(endian: Endian) -> Shadow {
        Shadow {
            endian,
            next_var: 0,
            regs: Vec::new(),
            temps: Vec::new(),
            mem: HashMap::new(),
        }
    }

    pub fn fresh(&mut self, size: u8) -> SymExpr {
        let id = self.next_var;
        self.next_var += 1;
        SymExpr::var(id, size)
    }

    pub fn next_var_id(&self) -> u32 {
        self.next_var
    }

    pub fn clear_temps(&mut self) {
        self.temps.clear();
    }

    pub fn is_clean(&self) -> bool {
        self.regs.is_empty() && self.temps.is_empty() && self.mem.is_empty()
    }

    /// Bit offset of `inner` within `outer`.
    fn shift(&self, outer: &VarNode, inner: &VarNode) -> u32 {
        match self.endian {
            Endian::Little => ((inner.offset - outer.offset) * 8) as u32,
            Endian::Big => ((outer.end() - inner.end()) * 8) as u32,
        }
    }

    fn table(&mut self, temp: bool) -> &mut Vec<(VarNode, SymExpr)> {
        if temp {
            &mut self.temps
        } else {
            &mut self.regs
        }
    }

    pub fn read_var(&self, temp: bool, vn: &VarNode, concrete: u64) -> Option<SymExpr> {
        let table = if temp { &self.temps } else { &self.regs };
        let mut pieces = Vec::new();
        for (k, e) in table {
            if k == vn {
                return Some(e.clone());
            }
            if k.contains(vn) {
                let sh = self.shift(k, vn);
                let shifted = if sh == 0 {
                    e.clone()
                } else {
                    SymExpr::apply(Opcode::IntRight, k.size, vec![e.clone(), konst(sh as u64, k.size)])
                };
                return Some(SymExpr::apply(Opcode::Trunc, vn.size, vec![shifted]));
            }
            if vn.contains(k) {
                pieces.push((k, e));
            }
        }
        if pieces.is_empty() {
            return None;
        }
        let mut acc = konst(concrete, vn.size);
        for (k, e) in pieces {
            acc = insert(acc, e.clone(), self.shift(vn, k));
        }
        Some(acc)
    }

    /// Records the value of `vn` after a write whose concrete result is `concrete`.
    pub fn write_var(&mut self, temp: bool, vn: &VarNode, value: Option<SymExpr>, concrete: u64) {
        let endian = self.endian;
        let table = self.table(temp);
        let mut out = Vec::with_capacity(table.len() + 1);
        let mut absorbed = false;
        for (k, e) in table.drain(..) {
            if k == *vn || !k.overlaps(vn) {
                if k != *vn {
                    out.push((k, e));
                }
                continue;
            }
            if k.contains(vn) {
                let sh = match endian {
                    Endian::Little => ((vn.offset - k.offset) * 8) as u32,
                    Endian::Big => ((k.end() - vn.end()) * 8) as u32,
                };
                let x = value.clone().unwrap_or_else(|| konst(concrete, vn.size));
                let merged = insert(e, x, sh);
                if merged.as_const().is_none() {
                    out.push((k, merged));
                }
                absorbed = true;
            }
        }
        if !absorbed {
            if let Some(v) = value {
                if v.as_const().is_none() {
                    out.push((*vn, v));
                }
            }
        }
        *table = out;
    }

    fn byte_shift(&self, i: u64, size: u8) -> u32 {
        match self.endian {
            Endian::Little => i as u32,
            Endian::Big => (size as u64 - 1 - i) as u32,
        }
    }

    pub fn load(&self, addr: u64, size: u8, concrete: u64) -> Option<SymExpr> {
        let bytes: Vec<Option<&SymExpr>> = (0..size as u64).map(|i| self.mem.get(&addr.wrapping_add(i))).collect();
        if bytes.iter().all(Option::is_none) {
            return None;
        }
        let low = bytes[(0..size as u64).find(|&i| self.byte_shift(i, size) == 0).unwrap_or(0) as usize];
        let candidate = match low {
            Some(SymExpr::Apply { op: Opcode::Trunc, args, .. }) if args[0].size() == size => Some((*args[0]).clone()),
            Some(e) if size == 1 => Some(e.clone()),
            _ => None,
        };
        if let Some(c) = candidate.filter(|c| c.size() == size) {
            let whole = (0..size as u64).all(|i| bytes[i as usize] == Some(&extract_byte(&c, self.byte_shift(i, size))));
            if whole {
                return Some(c);
            }
        }
        let mut acc = konst(concrete, size);
        for (i, b) in bytes.iter().enumerate() {
            if let Some(b) = b {
                acc = insert(acc, (*b).clone(), self.byte_shift(i as u64, size) * 8);
            }
        }
        Some(acc)
    }

    pub fn store(&mut self, addr: u64, size: u8, value: Option<SymExpr>) {
        for i in 0..size as u64 {
            let a = addr.wrapping_add(i);
            match &value {
                Some(v) if v.as_const().is_none() => {
                    let b = extract_byte(v, self.byte_shift(i, size));
                    self.mem.insert(a, b);
                }
                _ => {
                    self.mem.remove(&a);
                }
            }
        }
    }

    pub fn mem_tainted(&self, addr: u64, size: u8) -> bool {
        (0..size as u64).any(|i| self.mem.contains_key(&addr.wrapping_add(i)))
    }

    fn operand(&self, spaces: &SpaceTable, vn: &VarNode, concrete: u64) -> Option<SymExpr> {
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) => self.read_var(false, vn, concrete),
            Some(SpaceKind::Temporary) => self.read_var(true, vn, concrete),
            _ => None,
        }
    }

    /// Expression for an input, or `None` when it is concrete.
    pub fn input(&self, spaces: &SpaceTable, vn: &VarNode, concrete: u64) -> Option<SymExpr> {
        self.operand(spaces, vn, concrete)
    }

    fn set(&mut self, spaces: &SpaceTable, vn: &VarNode, value: Option<SymExpr>, concrete: u64) {
        match spaces.kind(vn.space) {
            Some(SpaceKind::Register) => self.write_var(false, vn, value, concrete),
            Some(SpaceKind::Temporary) => self.write_var(true, vn, value, concrete),
            _ => {}
        }
    }

    /// Propagates taint through one executed op.
    ///
    /// `inputs` and `output` are the concrete values. `injected` replaces the
    /// output expression, for symbolic reads.
    pub fn step(&mut self, spaces: &SpaceTable, op: &Operation, inputs: &[u64], output: u64, injected: Option<SymExpr>) {
        match op.opcode {
            Opcode::Load => {
                let out = op.output.expect("load has an output");
                let space = op.inputs[0].offset as u8;
                let addr = inputs[1];
                let value = injected.or_else(|| match spaces.kind(space) {
                    Some(SpaceKind::Register) => self.read_var(false, &VarNode::new(space, addr, out.size), output),
                    _ => self.load(addr, out.size, output),
                });
                self.set(spaces, &out, value, output);
            }
            Opcode::Store => {
                let space = op.inputs[0].offset as u8;
                let vn = op.inputs[2];
                let value = self.operand(spaces, &vn, inputs[2]);
                match spaces.kind(space) {
                    Some(SpaceKind::Register) => self.write_var(false, &VarNode::new(space, inputs[1], vn.size), value, inputs[2]),
                    _ => self.store(inputs[1], vn.size, value),
                }
            }
            Opcode::Intrinsic => {
                if let Some(out) = op.output {
                    self.set(spaces, &out, injected, output);
                }
            }
            o if o.is_pure() => {
                let out = op.output.expect("pure ops have outputs");
                if let Some(v) = injected {
                    self.set(spaces, &out, Some(v), output);
                    return;
                }
                let exprs: Vec<Option<SymExpr>> = op.inputs.iter().zip(inputs).map(|(vn, &c)| self.operand(spaces, vn, c)).collect();
                if exprs.iter().all(Option::is_none) {
                    self.set(spaces, &out, None, output);
                    return;
                }
                let args = exprs
                    .into_iter()
                    .zip(op.inputs.iter().zip(inputs))
                    .map(|(e, (vn, &c))| e.unwrap_or_else(|| konst(c, vn.size)))
                    .collect();
                let value = SymExpr::apply(op.opcode, out.size, args);
                self.set(spaces, &out, Some(value), output);
            }
            _ => {}
        }
    }
}
