//! A small e-graph with congruence closure and constant-folding analysis.
//!
//! Rule matching is driven by a dirty set: only classes that changed since
//! the last round, and their parents, are tried as match roots. Rules are at
//! most two levels deep, so that is enough to find every new match.

use std::collections::{HashMap, HashSet};

use crate::ir::{mask, Opcode, VarNode};
use crate::semantics;

use super::rules::{commutes, Pat, RULES};

pub type Id = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ENode {
    Const {
        value: u64,
        size: u8,
    },
    /// The value a varnode held while its overlap class was at `version`.
    Read {
        vn: VarNode,
        class: u32,
        version: u32,
    },
    /// A value nothing is known about (loads, intrinsic results, clobbers).
    Opaque {
        id: u32,
        size: u8,
    },
    Op {
        op: Opcode,
        size: u8,
        args: Vec<Id>,
    },
}

impl ENode {
    pub fn size(&self) -> u8 {
        match self {
            ENode::Const { size, .. } | ENode::Opaque { size, .. } | ENode::Op { size, .. } => *size,
            ENode::Read { vn, .. } => vn.size,
        }
    }
}

#[derive(Clone, Debug)]
struct EClass {
    nodes: Vec<ENode>,
    parents: Vec<(ENode, Id)>,
    size: u8,
    konst: Option<u64>,
}

#[derive(Default)]
pub struct EGraph {
    uf: Vec<Id>,
    classes: Vec<Option<EClass>>,
    memo: HashMap<ENode, Id>,
    pending: Vec<Id>,
    dirty: HashSet<Id>,
    next_opaque: u32,
    fold: bool,
    /// Rule applications performed so far.
    pub applications: usize,
    /// Set when two classes of different size or constant value were merged.
    pub inconsistent: Option<String>,
}

impl EGraph {
    /// `fold` enables constant-folding analysis.
    pub fn new(fold: bool) -> Self {
        EGraph { fold, ..EGraph::default() }
    }

    pub fn find(&self, mut id: Id) -> Id {
        while self.uf[id as usize] != id {
            id = self.uf[id as usize];
        }
        id
    }

    fn find_mut(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut cur = id;
        while self.uf[cur as usize] != root {
            let next = self.uf[cur as usize];
            self.uf[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn class(&self, id: Id) -> &EClass {
        self.classes[self.find(id) as usize].as_ref().expect("live class")
    }

    fn class_mut(&mut self, id: Id) -> &mut EClass {
        let r = self.find(id);
        self.classes[r as usize].as_mut().expect("live class")
    }

    pub fn size_of(&self, id: Id) -> u8 {
        self.class(id).size
    }

    pub fn konst(&self, id: Id) -> Option<u64> {
        self.class(id).konst
    }

    /// Nodes of a class with canonical children.
    pub fn nodes(&self, id: Id) -> Vec<ENode> {
        let mut v: Vec<ENode> = self.class(id).nodes.iter().map(|n| self.canon(n)).collect();
        v.sort();
        v.dedup();
        v
    }

    fn canon(&self, n: &ENode) -> ENode {
        match n {
            ENode::Op { op, size, args } => ENode::Op {
                op: *op,
                size: *size,
                args: args.iter().map(|&a| self.find(a)).collect(),
            },
            other => other.clone(),
        }
    }

    fn fold(&self, n: &ENode) -> Option<u64> {
        match n {
            ENode::Const { value, .. } => Some(*value),
            ENode::Op { op, size, args } if self.fold => {
                let vals: Option<Vec<u64>> = args.iter().map(|&a| self.konst(a)).collect();
                let in_size = args.first().map(|&a| self.size_of(a)).unwrap_or(*size);
                semantics::eval(*op, &vals?, in_size, *size)
            }
            _ => None,
        }
    }

    pub fn add(&mut self, node: ENode) -> Id {
        let node = self.canon(&node);
        if let Some(&id) = self.memo.get(&node) {
            return self.find(id);
        }
        let id = self.uf.len() as Id;
        self.uf.push(id);
        let konst = self.fold(&node);
        if let ENode::Op { args, .. } = &node {
            for &a in args {
                self.class_mut(a).parents.push((node.clone(), id));
            }
        }
        self.classes.push(Some(EClass {
            nodes: vec![node.clone()],
            parents: Vec::new(),
            size: node.size(),
            konst,
        }));
        self.memo.insert(node, id);
        self.dirty.insert(id);
        self.ensure_const(id);
        self.find(id)
    }

    pub fn add_const(&mut self, value: u64, size: u8) -> Id {
        self.add(ENode::Const {
            value: value & mask(size),
            size,
        })
    }

    pub fn add_opaque(&mut self, size: u8) -> Id {
        self.next_opaque += 1;
        self.add(ENode::Opaque { id: self.next_opaque, size })
    }

    pub fn add_op(&mut self, op: Opcode, size: u8, args: Vec<Id>) -> Id {
        self.add(ENode::Op { op, size, args })
    }

    /// Makes a constant class contain its `Const` node.
    fn ensure_const(&mut self, id: Id) {
        let id = self.find(id);
        let c = self.class(id);
        let Some(k) = c.konst else { return };
        let size = c.size;
        if c.nodes.iter().any(|n| matches!(n, ENode::Const { .. })) {
            return;
        }
        let cid = self.add(ENode::Const { value: k, size });
        self.union(id, cid);
    }

    /// Merges two classes. Returns whether anything changed.
    pub fn union(&mut self, a: Id, b: Id) -> bool {
        let (mut a, mut b) = (self.find_mut(a), self.find_mut(b));
        if a == b {
            return false;
        }
        let (ca, cb) = (self.class(a), self.class(b));
        if ca.size != cb.size {
            self.inconsistent = Some(format!("merged classes of size {} and {}", ca.size, cb.size));
            return false;
        }
        if let (Some(x), Some(y)) = (ca.konst, cb.konst) {
            if x != y {
                self.inconsistent = Some(format!("merged distinct constants 0x{:x} and 0x{:x}", x, y));
                return false;
            }
        }
        if ca.nodes.len() + ca.parents.len() < cb.nodes.len() + cb.parents.len() {
            std::mem::swap(&mut a, &mut b);
        }
        self.uf[b as usize] = a;
        let cb = self.classes[b as usize].take().expect("live class");
        let learned = {
            let ca = self.classes[a as usize].as_mut().expect("live class");
            ca.nodes.extend(cb.nodes);
            ca.parents.extend(cb.parents);
            let learned = ca.konst.is_none() && cb.konst.is_some();
            ca.konst = ca.konst.or(cb.konst);
            learned
        };
        self.pending.push(a);
        self.dirty.insert(a);
        if learned {
            self.ensure_const(a);
        }
        true
    }

    /// Restores the congruence invariant after unions.
    pub fn rebuild(&mut self) {
        while let Some(id) = self.pending.pop() {
            let id = self.find_mut(id);
            let Some(class) = self.classes[id as usize].as_mut() else { continue };
            let parents = std::mem::take(&mut class.parents);
            let mut fresh: HashMap<ENode, Id> = HashMap::new();
            for (node, pid) in parents {
                self.memo.remove(&node);
                let n = self.canon(&node);
                let pid = self.find_mut(pid);
                if let Some(&other) = fresh.get(&n) {
                    self.union(other, pid);
                }
                if let Some(&other) = self.memo.get(&n) {
                    self.union(other, pid);
                }
                let pid = self.find_mut(pid);
                self.memo.insert(n.clone(), pid);
                fresh.insert(n, pid);
            }
            let root = self.find_mut(id);
            let mut list: Vec<(ENode, Id)> = fresh.into_iter().collect();
            list.sort();
            for (n, pid) in &list {
                let pid = self.find(*pid);
                if self.class(pid).konst.is_none() {
                    if let Some(k) = self.fold(n) {
                        self.class_mut(pid).konst = Some(k);
                        self.dirty.insert(pid);
                        self.ensure_const(pid);
                    }
                }
            }
            self.class_mut(root).parents.extend(list);
        }
    }

    fn match_pat(&self, pat: &Pat, id: Id, subst: [Option<Id>; 2], out: &mut Vec<[Option<Id>; 2]>) {
        let id = self.find(id);
        match pat {
            Pat::Var(i) => {
                let i = *i as usize;
                match subst[i] {
                    Some(b) if self.find(b) != id => {}
                    _ => {
                        let mut s = subst;
                        s[i] = Some(id);
                        out.push(s);
                    }
                }
            }
            Pat::Zero => {
                if self.konst(id) == Some(0) {
                    out.push(subst);
                }
            }
            Pat::One => {
                if self.konst(id) == Some(1) {
                    out.push(subst);
                }
            }
            Pat::Ones => {
                if self.konst(id) == Some(mask(self.size_of(id))) {
                    out.push(subst);
                }
            }
            Pat::Op(op, pargs) => {
                for n in &self.class(id).nodes {
                    let ENode::Op { op: nop, args, .. } = n else { continue };
                    if nop != op || args.len() != pargs.len() {
                        continue;
                    }
                    let mut partial = vec![subst];
                    for (p, &a) in pargs.iter().zip(args) {
                        let mut next = Vec::new();
                        for s in partial {
                            self.match_pat(p, a, s, &mut next);
                        }
                        partial = next;
                    }
                    out.extend(partial);
                }
            }
        }
    }

    fn instantiate(&mut self, pat: &Pat, subst: &[Option<Id>; 2], size: u8) -> Option<Id> {
        match pat {
            Pat::Var(i) => subst[*i as usize].filter(|&v| self.size_of(v) == size),
            Pat::Zero => Some(self.add_const(0, size)),
            Pat::One => Some(self.add_const(1, size)),
            Pat::Ones => Some(self.add_const(mask(size), size)),
            Pat::Op(..) => None,
        }
    }

    /// Applies rules until nothing changes or `budget` applications are used.
    pub fn saturate(&mut self, budget: usize) {
        self.rebuild();
        while !self.dirty.is_empty() && self.applications < budget {
            let dirty: Vec<Id> = self.dirty.drain().collect();
            let mut roots: HashSet<Id> = HashSet::new();
            for d in dirty {
                let d = self.find(d);
                roots.insert(d);
                if let Some(c) = self.classes[d as usize].as_ref() {
                    roots.extend(c.parents.iter().map(|(_, p)| self.find(*p)));
                }
            }
            let mut roots: Vec<Id> = roots.into_iter().collect();
            roots.sort_unstable();
            let mut work: Vec<(Id, &'static Pat, [Option<Id>; 2])> = Vec::new();
            let mut swaps: Vec<(Id, Opcode, u8, Id, Id)> = Vec::new();
            for &r in &roots {
                for rule in RULES {
                    let mut found = Vec::new();
                    self.match_pat(&rule.lhs, r, [None, None], &mut found);
                    work.extend(found.into_iter().map(|s| (r, &rule.rhs, s)));
                }
                for n in &self.class(r).nodes {
                    if let ENode::Op { op, size, args } = n {
                        if commutes(*op) && args.len() == 2 && self.find(args[0]) != self.find(args[1]) {
                            swaps.push((r, *op, *size, args[0], args[1]));
                        }
                    }
                }
            }
            for (r, rhs, s) in work {
                if self.applications >= budget {
                    break;
                }
                let size = self.size_of(r);
                if let Some(t) = self.instantiate(rhs, &s, size) {
                    if self.union(r, t) {
                        self.applications += 1;
                    }
                }
            }
            for (r, op, size, a, b) in swaps {
                if self.applications >= budget {
                    break;
                }
                let t = self.add_op(op, size, vec![b, a]);
                if self.union(r, t) {
                    self.applications += 1;
                }
            }
            self.rebuild();
        }
        self.dirty.clear();
    }
}
