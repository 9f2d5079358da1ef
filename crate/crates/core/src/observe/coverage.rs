//! Branch-edge coverage with optional splitting of wide equality comparisons.

use std::collections::{HashMap, HashSet};

use crate::ir::{Opcode, VarNode};

use super::{Event, EventKind, Filter, Observer, Response};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovKey {
    /// A conditional branch site and the direction taken.
    Edge { site: u64, taken: bool },
    /// The comparison at `site` matched at least `byte + 1` low-order bytes.
    Split { site: u64, index: usize, byte: u8 },
}

#[derive(Clone, Copy, Debug)]
struct Cmp {
    pc: u64,
    index: usize,
    a: u64,
    b: u64,
    size: u8,
}

#[derive(Clone, Debug, Default)]
pub struct Coverage {
    pub split: bool,
    seen: HashSet<CovKey>,
    fresh: Vec<CovKey>,
    /// Locations currently holding the result of a wide equality comparison.
    cmps: HashMap<VarNode, Cmp>,
}

impl Coverage {
    pub fn new(split: bool) -> Coverage {
        Coverage { split, ..Coverage::default() }
    }

    pub fn filter(&self) -> Filter {
        if self.split {
            Filter::kinds(&[EventKind::CBranch, EventKind::OperationStep])
        } else {
            Filter::kinds(&[EventKind::CBranch])
        }
    }

    pub fn total(&self) -> usize {
        self.seen.len()
    }

    pub fn contains(&self, k: &CovKey) -> bool {
        self.seen.contains(k)
    }

    pub fn keys(&self) -> impl Iterator<Item = &CovKey> {
        self.seen.iter()
    }

    /// Keys first seen since the last call, in discovery order.
    pub fn take_fresh(&mut self) -> Vec<CovKey> {
        self.cmps.clear();
        std::mem::take(&mut self.fresh)
    }

    pub fn merge(&mut self, keys: &[CovKey]) -> usize {
        keys.iter().filter(|&&k| self.hit(k)).count()
    }

    fn hit(&mut self, k: CovKey) -> bool {
        let new = self.seen.insert(k);
        if new {
            self.fresh.push(k);
        }
        new
    }

    fn track(&mut self, pc: u64, index: usize, op: &crate::ir::Operation, inputs: &[u64]) {
        let Some(out) = op.output else {
            return;
        };
        let wide_eq = matches!(op.opcode, Opcode::IntEqual | Opcode::IntNotEqual) && op.inputs[0].size > 1;
        let carried = match op.opcode {
            _ if wide_eq => Some(Cmp {
                pc,
                index,
                a: inputs[0],
                b: inputs[1],
                size: op.inputs[0].size,
            }),
            Opcode::Copy | Opcode::BoolNot => self.cmps.get(&op.inputs[0]).copied(),
            _ => None,
        };
        self.cmps.retain(|k, _| !k.overlaps(&out));
        if let Some(c) = carried {
            self.cmps.insert(out, c);
        }
    }
}

/// Number of equal bytes counting up from the least significant.
pub fn matched_prefix(a: u64, b: u64, size: u8) -> u8 {
    let diff = a ^ b;
    let k = (diff.trailing_zeros() / 8) as u8;
    k.min(size)
}

impl Observer for Coverage {
    fn on_event(&mut self, event: &Event) -> Response {
        match *event {
            Event::OperationStep { pc, index, op, inputs, .. } if self.split => self.track(pc, index, op, inputs),
            Event::CBranch { pc, taken, cond, .. } => {
                self.hit(CovKey::Edge { site: pc, taken });
                if let Some(c) = self.cmps.get(&cond).copied() {
                    for byte in 0..matched_prefix(c.a, c.b, c.size) {
                        self.hit(CovKey::Split {
                            site: c.pc,
                            index: c.index,
                            byte,
                        });
                    }
                }
            }
            _ => {}
        }
        Response::Continue
    }

    fn box_clone(&self) -> Option<Box<dyn Observer>> {
        Some(Box::new(self.clone()))
    }
}
