//! Block optimizer: overlap-aware value numbering into an e-graph,
//! per-statement equality saturation, minimal-depth extraction and
//! byte-level dead-assignment removal.
//!
//! Statements are added to one block-wide e-graph in program order. After
//! each addition the graph is saturated and the statement is re-extracted
//! as a single operation whose operands are values currently held in real
//! storage (constants, registers, or temporaries of the same instruction).
//! Every assignment is materialized, so register state matches the
//! unoptimized block at every observation point until dead-code removal
//! drops writes nobody reads.

mod egraph;
pub mod liveness;
pub mod overlap;
pub mod rules;
pub mod ssa;

use std::collections::{HashMap, HashSet};

use crate::archspec::ProcessorSpec;
use crate::ir::{count_ops, mask, render_op, validate_block, IrBlock, LiftedInstruction, Opcode, Operation, SpaceKind, VarNode};

use egraph::{EGraph, ENode, Id};
use overlap::Overlap;

pub use liveness::{eliminate_dead, liveness, LiveSet};
pub use ssa::{to_ssa, SsaExpr, SsaStatement, SsaVar};

pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OptConfig {
    /// Rewrite rules and constant folding.
    pub rules: bool,
    /// Dead-assignment removal.
    pub dce: bool,
    /// Cap on rule applications per block.
    pub budget: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            rules: true,
            dce: true,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl OptConfig {
    /// Translation through the value graph and back with no rewriting.
    pub fn identity() -> Self {
        OptConfig {
            rules: false,
            dce: false,
            budget: 0,
        }
    }
}

pub fn optimize_block(block: &IrBlock, spec: &ProcessorSpec) -> (IrBlock, Option<String>) {
    optimize_with(block, spec, OptConfig::default())
}

/// Optimizes a block. On any internal inconsistency the input is returned
/// unchanged together with a diagnostic.
pub fn optimize_with(block: &IrBlock, spec: &ProcessorSpec, cfg: OptConfig) -> (IrBlock, Option<String>) {
    let fail = |msg: String| (block.clone(), Some(msg));
    if let Err(d) = validate_block(block, &spec.spaces) {
        return fail(format!("input invalid: {}", d[0].message));
    }
    let mut out = match Builder::new(block, spec, cfg).and_then(|b| b.run(block)) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    if cfg.dce {
        out = eliminate_dead(&out, &spec.spaces, spec.pc);
    }
    fill_empty(&mut out, spec);
    if let Err(d) = validate_block(&out, &spec.spaces) {
        return fail(format!("output invalid at 0x{:x}: {}", d[0].address, d[0].message));
    }
    if count_ops(&out) > count_ops(block) {
        return fail("op count grew".to_string());
    }
    (out, None)
}

/// Gives instructions left without ops a harmless PC self-assignment.
fn fill_empty(block: &mut IrBlock, spec: &ProcessorSpec) {
    for insn in &mut block.instructions {
        if insn.ops.is_empty() {
            let next = insn.address.wrapping_add(insn.length as u64) & mask(spec.pc.size);
            let c = VarNode::new(spec.spaces.constant(), next, spec.pc.size);
            insn.ops.push(Operation::new(Opcode::Copy, vec![c], Some(spec.pc)));
        }
    }
}

/// Values per overlap class in one storage scope.
struct Scope {
    overlap: Overlap,
    /// Graph key of each class, unique across the block.
    keys: Vec<u32>,
    cur: Vec<Id>,
    version: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Cost {
    depth: u8,
    temps: u8,
    nodes: u8,
    commute: u8,
    text: String,
}

struct Builder<'a> {
    spec: &'a ProcessorSpec,
    cfg: OptConfig,
    eg: EGraph,
    regs: Scope,
    temps: Scope,
    next_key: u32,
    /// Current version of every live class key.
    current: HashMap<u32, u32>,
    leaves: HashSet<(VarNode, u32, u32)>,
}

fn storage(ops: &[Operation], spec: &ProcessorSpec, kind: SpaceKind) -> Vec<VarNode> {
    ops.iter()
        .flat_map(|op| op.inputs.iter().chain(op.output.iter()))
        .filter(|vn| spec.spaces.kind(vn.space) == Some(kind))
        .copied()
        .collect()
}

impl<'a> Builder<'a> {
    fn new(block: &IrBlock, spec: &'a ProcessorSpec, cfg: OptConfig) -> Result<Builder<'a>, String> {
        let ops: Vec<Operation> = block.instructions.iter().flat_map(|i| i.ops.iter().cloned()).collect();
        let mut regs = storage(&ops, spec, SpaceKind::Register);
        regs.push(spec.pc);
        let mut b = Builder {
            spec,
            cfg,
            eg: EGraph::new(cfg.rules),
            regs: Scope {
                overlap: Overlap::build(regs, spec.endian)?,
                keys: vec![],
                cur: vec![],
                version: vec![],
            },
            temps: Scope {
                overlap: Overlap::build([], spec.endian)?,
                keys: vec![],
                cur: vec![],
                version: vec![],
            },
            next_key: 0,
            current: HashMap::new(),
            leaves: HashSet::new(),
        };
        let overlap = std::mem::replace(&mut b.regs.overlap, Overlap::build([], spec.endian)?);
        b.regs = b.open_scope(overlap);
        Ok(b)
    }

    fn open_scope(&mut self, overlap: Overlap) -> Scope {
        let n = overlap.classes.len();
        let keys: Vec<u32> = (0..n as u32).map(|i| self.next_key + i).collect();
        self.next_key += n as u32;
        let mut cur = Vec::with_capacity(n);
        for (c, k) in overlap.classes.iter().zip(&keys) {
            self.current.insert(*k, 0);
            self.leaves.insert((c.rep, *k, 0));
            cur.push(self.eg.add(ENode::Read {
                vn: c.rep,
                class: *k,
                version: 0,
            }));
        }
        Scope {
            overlap,
            keys,
            cur,
            version: vec![0; n],
        }
    }

    fn is_temp(&self, vn: &VarNode) -> bool {
        self.spec.spaces.kind(vn.space) == Some(SpaceKind::Temporary)
    }

    fn scope(&self, vn: &VarNode) -> &Scope {
        if self.is_temp(vn) {
            &self.temps
        } else {
            &self.regs
        }
    }

    fn scope_mut(&mut self, vn: &VarNode) -> &mut Scope {
        if self.is_temp(vn) {
            &mut self.temps
        } else {
            &mut self.regs
        }
    }

    fn class(&self, vn: &VarNode) -> Result<usize, String> {
        self.scope(vn)
            .overlap
            .class_of(vn)
            .ok_or_else(|| format!("varnode {:?} has no overlap class", vn))
    }

    /// The graph value currently held by `vn`.
    fn read(&mut self, vn: &VarNode) -> Result<Id, String> {
        match self.spec.spaces.kind(vn.space) {
            Some(SpaceKind::Register) | Some(SpaceKind::Temporary) => {}
            _ => return Ok(self.eg.add_const(vn.offset, vn.size)),
        }
        let c = self.class(vn)?;
        let s = self.scope(vn);
        let (key, ver, cur, rep) = (s.keys[c], s.version[c], s.cur[c], s.overlap.classes[c].rep);
        let sh = s.overlap.shift(c, vn);
        let leaf = self.eg.add(ENode::Read {
            vn: *vn,
            class: key,
            version: ver,
        });
        if self.leaves.insert((*vn, key, ver)) {
            let derived = if rep == *vn {
                cur
            } else {
                let mut e = cur;
                if sh != 0 {
                    let k = self.eg.add_const(sh as u64, rep.size);
                    e = self.eg.add_op(Opcode::IntRight, rep.size, vec![e, k]);
                }
                self.eg.add_op(Opcode::Trunc, vn.size, vec![e])
            };
            self.eg.union(leaf, derived);
        }
        Ok(self.eg.find(leaf))
    }

    /// Records that `vn` now holds `x`.
    fn write(&mut self, vn: &VarNode, x: Id) -> Result<(), String> {
        let c = self.class(vn)?;
        let s = self.scope(vn);
        let (rep, cur) = (s.overlap.classes[c].rep, s.cur[c]);
        let sh = s.overlap.shift(c, vn);
        let new = if rep == *vn {
            x
        } else {
            let w = rep.size;
            let hole = self.eg.add_const(!(mask(vn.size) << sh) & mask(w), w);
            let kept = self.eg.add_op(Opcode::IntAnd, w, vec![cur, hole]);
            let mut ins = self.eg.add_op(Opcode::IntZExt, w, vec![x]);
            if sh != 0 {
                let k = self.eg.add_const(sh as u64, w);
                ins = self.eg.add_op(Opcode::IntLeft, w, vec![ins, k]);
            }
            self.eg.add_op(Opcode::IntOr, w, vec![kept, ins])
        };
        self.set_class(vn, c, new);
        let leaf = self.read(vn)?;
        self.eg.union(leaf, x);
        Ok(())
    }

    fn set_class(&mut self, vn: &VarNode, c: usize, value: Id) {
        let s = self.scope_mut(vn);
        s.version[c] += 1;
        s.cur[c] = value;
        let (key, ver) = (s.keys[c], s.version[c]);
        self.current.insert(key, ver);
    }

    /// Forgets everything known about the given register classes.
    fn clobber(&mut self, classes: impl IntoIterator<Item = usize>) {
        for c in classes {
            let rep = self.regs.overlap.classes[c].rep;
            let v = self.eg.add_opaque(rep.size);
            self.set_class(&rep, c, v);
        }
    }

    fn clobber_all_regs(&mut self) {
        self.clobber(0..self.regs.cur.len());
    }

    fn saturate(&mut self) -> Result<(), String> {
        if self.cfg.rules {
            self.eg.saturate(self.cfg.budget);
        } else {
            self.eg.rebuild();
        }
        match &self.eg.inconsistent {
            Some(m) => Err(m.clone()),
            None => Ok(()),
        }
    }

    fn available(&self, class: u32, version: u32) -> bool {
        self.current.get(&class) == Some(&version)
    }

    /// Cheapest storage operand holding the value of class `id`:
    /// `(varnode, is_temp)`.
    fn best_leaf(&self, id: Id) -> Option<(VarNode, bool)> {
        let consts = self.spec.spaces.constant();
        if let Some(k) = self.eg.konst(id) {
            return Some((VarNode::new(consts, k, self.eg.size_of(id)), false));
        }
        let mut best: Option<(bool, VarNode)> = None;
        for n in self.eg.nodes(id) {
            if let ENode::Read { vn, class, version } = n {
                if self.available(class, version) {
                    let cand = (self.is_temp(&vn), vn);
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            let ta = render_leaf_key(&cand.1, self);
                            let tb = render_leaf_key(&b.1, self);
                            (cand.0, ta) < (b.0, tb)
                        }
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
        }
        best.map(|(t, vn)| (vn, t))
    }

    /// Cheapest single operation computing class `id` into `out`.
    fn extract(&self, id: Id, out: VarNode) -> Option<Operation> {
        let spaces = &self.spec.spaces;
        let mut best: Option<(Cost, Operation)> = None;
        let mut consider = |op: Operation, depth: u8, temps: u8, commute: u8| {
            let nodes = op.inputs.len() as u8 + 1;
            let cost = Cost {
                depth,
                temps,
                nodes,
                commute,
                text: render_op(&op, spaces),
            };
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, op));
            }
        };
        if let Some((vn, t)) = self.best_leaf(id) {
            consider(Operation::new(Opcode::Copy, vec![vn], Some(out)), t as u8, t as u8, 0);
        }
        for n in self.eg.nodes(id) {
            let ENode::Op { op, args, .. } = n else { continue };
            let leaves: Option<Vec<(VarNode, bool)>> = args.iter().map(|&a| self.best_leaf(a)).collect();
            let Some(leaves) = leaves else { continue };
            let temps = leaves.iter().filter(|l| l.1).count() as u8;
            let depth = 1 + (temps > 0) as u8;
            let is_const = |vn: &VarNode| spaces.kind(vn.space) == Some(SpaceKind::Constant);
            let commute = (op.is_commutative() && leaves.len() == 2 && is_const(&leaves[0].0) && !is_const(&leaves[1].0)) as u8;
            let inputs = leaves.into_iter().map(|l| l.0).collect();
            consider(Operation::new(op, inputs, Some(out)), depth, temps, commute);
        }
        best.map(|b| b.1)
    }

    /// Operand for an effect: the best leaf, or the original varnode.
    fn operand(&mut self, vn: &VarNode) -> Result<VarNode, String> {
        let id = self.read(vn)?;
        Ok(self.best_leaf(id).map(|l| l.0).unwrap_or(*vn))
    }

    fn run(mut self, block: &IrBlock) -> Result<IrBlock, String> {
        let mut out = block.clone();
        for (insn, dst) in block.instructions.iter().zip(out.instructions.iter_mut()) {
            dst.ops = self.instruction(insn)?;
        }
        Ok(out)
    }

    fn instruction(&mut self, insn: &LiftedInstruction) -> Result<Vec<Operation>, String> {
        let spec = self.spec;
        let spaces = &spec.spaces;
        let next = insn.address.wrapping_add(insn.length as u64);
        let pc_val = self.eg.add_const(next, spec.pc.size);
        self.write(&spec.pc, pc_val)?;
        for k in &self.temps.keys {
            self.current.remove(k);
        }
        let overlap = Overlap::build(storage(&insn.ops, spec, SpaceKind::Temporary), spec.endian)?;
        self.temps = self.open_scope(overlap);

        if insn.has_local_control(spaces) {
            let written: Vec<usize> = insn
                .ops
                .iter()
                .filter_map(|o| o.output)
                .filter(|o| spaces.kind(o.space) == Some(SpaceKind::Register))
                .map(|o| self.class(&o))
                .collect::<Result<_, _>>()?;
            self.clobber(written);
            return Ok(insn.ops.clone());
        }

        let mut ops = Vec::with_capacity(insn.ops.len());
        for op in &insn.ops {
            let reg_space = |o: &Operation| o.inputs[0].offset as u8 == spaces.register();
            match op.opcode {
                Opcode::Load => {
                    let addr = self.operand(&op.inputs[1])?;
                    ops.push(Operation::new(Opcode::Load, vec![op.inputs[0], addr], op.output));
                    let o = op.output.expect("validated");
                    let v = self.eg.add_opaque(o.size);
                    self.write(&o, v)?;
                }
                Opcode::Store => {
                    let addr = self.operand(&op.inputs[1])?;
                    let val = self.operand(&op.inputs[2])?;
                    ops.push(Operation::new(Opcode::Store, vec![op.inputs[0], addr, val], None));
                    if reg_space(op) {
                        self.clobber_all_regs();
                    }
                }
                Opcode::Intrinsic => {
                    let inputs = op.inputs.iter().map(|vn| self.operand(vn)).collect::<Result<_, _>>()?;
                    ops.push(Operation { inputs, ..op.clone() });
                    self.clobber_all_regs();
                    if let Some(o) = op.output {
                        let v = self.eg.add_opaque(o.size);
                        self.write(&o, v)?;
                    }
                }
                Opcode::Branch | Opcode::Call | Opcode::Halt => ops.push(op.clone()),
                Opcode::CBranch => {
                    let cond = self.operand(&op.inputs[1])?;
                    ops.push(Operation::new(Opcode::CBranch, vec![op.inputs[0], cond], None));
                }
                Opcode::IBranch | Opcode::ICall | Opcode::Return => {
                    let target = self.operand(&op.inputs[0])?;
                    ops.push(Operation::new(op.opcode, vec![target], None));
                }
                _ => {
                    let o = op.output.expect("pure ops have outputs");
                    let args: Vec<Id> = op.inputs.iter().map(|vn| self.read(vn)).collect::<Result<_, _>>()?;
                    let value = if op.opcode == Opcode::Copy {
                        args[0]
                    } else {
                        self.eg.add_op(op.opcode, o.size, args)
                    };
                    self.saturate()?;
                    let value = self.eg.find(value);
                    let chosen = self.extract(value, o).ok_or("no extractable form")?;
                    let self_copy = chosen.opcode == Opcode::Copy && chosen.inputs[0] == o && o != spec.pc;
                    if !self_copy {
                        ops.push(chosen);
                    }
                    self.write(&o, value)?;
                }
            }
        }
        self.saturate()?;
        Ok(ops)
    }
}

fn render_leaf_key(vn: &VarNode, b: &Builder<'_>) -> String {
    crate::ir::render_varnode(vn, &b.spec.spaces)
}
