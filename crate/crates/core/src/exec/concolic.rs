//! Symbolic shadow and path constraints for concolic execution.

use crate::archspec::Endian;
use crate::ir::{SpaceTable, VarNode};
use crate::symsolve::{solve, Assignment, Constraint, Shadow, SolveOptions, SolverResult};

use super::MachineState;

#[derive(Clone, Debug)]
pub struct PathConstraint {
    pub site: u64,
    pub taken: bool,
    pub constraint: Constraint,
}

#[derive(Clone, Debug)]
pub struct ConcolicState {
    pub shadow: Shadow,
    pub regions: Vec<(u64, u64)>,
    /// Variable id and address of each symbolic input byte.
    pub inputs: Vec<(u32, u64)>,
    pub path: Vec<PathConstraint>,
}

impl ConcolicState {
    pub fn new(_state: &MachineState, endian: Endian, regions: &[(u64, u64)]) -> ConcolicState {
        let mut shadow = Shadow::new(endian);
        let mut inputs = Vec::new();
        for &(lo, hi) in regions {
            for addr in lo..hi {
                let v = shadow.fresh(1);
                if let crate::symsolve::SymExpr::Var { id, .. } = v {
                    inputs.push((id, addr));
                }
                shadow.store(addr, 1, Some(v));
            }
        }
        ConcolicState {
            shadow,
            regions: regions.to_vec(),
            inputs,
            path: Vec::new(),
        }
    }

    pub(crate) fn record_branch(&mut self, spaces: &SpaceTable, site: u64, cond: &VarNode, value: u64, taken: bool) {
        if let Some(e) = self.shadow.input(spaces, cond, value) {
            self.path.push(PathConstraint {
                site,
                taken,
                constraint: Constraint::truth(e, taken),
            });
        }
    }

    /// The prefix before branch `i` together with the negation of branch `i`.
    pub fn negate(&self, i: usize) -> Vec<Constraint> {
        let mut cs: Vec<Constraint> = self.path[..i].iter().map(|p| p.constraint.clone()).collect();
        cs.push(self.path[i].constraint.negate());
        cs
    }

    pub fn solve_flip(&self, i: usize, opts: &SolveOptions) -> SolverResult {
        solve(&self.negate(i), opts)
    }

    /// Input bytes a model assigns, keyed by address. Unassigned bytes are omitted.
    pub fn input_bytes(&self, asg: &Assignment) -> Vec<(u64, u8)> {
        self.inputs.iter().filter_map(|&(id, addr)| asg.get(&id).map(|&v| (addr, v as u8))).collect()
    }
}
