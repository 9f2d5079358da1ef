//! Automatic bypass of polling loops on memory-mapped status registers.
//!
//! Every read in a configured range is symbolized and followed through the
//! data flow. When the same read site is reached again within the re-entry
//! window, with no firmware write to the polled address in between, the
//! branch that looped back is solved for its other direction and the new read
//! returns the satisfying value.

use std::collections::HashMap;

use crate::archspec::Endian;
use crate::ir::{Opcode, SpaceTable};
use crate::observe::{Event, EventKind, Filter, Observer, Response};
use crate::symsolve::{eval, solve, Assignment, Constraint, Shadow, SolveOptions, SolverResult, SymExpr};

#[derive(Clone, Debug)]
pub struct CheckSolverConfig {
    /// Half-open, disjoint address ranges.
    pub ranges: Vec<(u64, u64)>,
    /// Instructions allowed between a read and its re-entry.
    pub reentry_window: u64,
    pub max_tracked: usize,
    pub solver: SolveOptions,
}

impl CheckSolverConfig {
    pub fn new(ranges: Vec<(u64, u64)>) -> CheckSolverConfig {
        CheckSolverConfig {
            ranges,
            reentry_window: 4096,
            max_tracked: 64,
            solver: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        validate_ranges(&self.ranges)?;
        if self.ranges.is_empty() {
            return Err("check solver needs at least one range".into());
        }
        Ok(())
    }
}

fn validate_ranges(ranges: &[(u64, u64)]) -> Result<(), String> {
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        if lo >= hi {
            return Err(format!("empty range 0x{:x}..0x{:x}", lo, hi));
        }
        if let Some(&(l2, h2)) = ranges[..i].iter().find(|&&(l2, h2)| lo < h2 && l2 < hi) {
            return Err(format!("range 0x{:x}..0x{:x} overlaps 0x{:x}..0x{:x}", lo, hi, l2, h2));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteState {
    Idle,
    Tracked,
    AtBranch,
    Reenter,
}

#[derive(Clone, Debug)]
pub struct CheckSite {
    pub state: SiteState,
    pub read_pc: u64,
    pub addr: u64,
    pub size: u8,
    pub var: SymExpr,
    /// Branch site, its condition, and the direction taken.
    pub branch: Option<(u64, SymExpr, bool)>,
    pub read_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Injection {
    pub read_pc: u64,
    pub addr: u64,
    pub branch_pc: u64,
    pub value: u64,
}

#[derive(Clone, Debug)]
pub struct CheckSolver {
    config: CheckSolverConfig,
    spaces: SpaceTable,
    shadow: Shadow,
    sites: HashMap<u64, CheckSite>,
    pending_read: Option<SymExpr>,
    insns: u64,
    pub injections: Vec<Injection>,
    pub diagnostics: Vec<String>,
}

impl CheckSolver {
    pub fn new(config: CheckSolverConfig, spaces: SpaceTable, endian: Endian) -> Result<CheckSolver, String> {
        config.validate()?;
        Ok(CheckSolver {
            config,
            spaces,
            shadow: Shadow::new(endian),
            sites: HashMap::new(),
            pending_read: None,
            insns: 0,
            injections: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn filter() -> Filter {
        Filter::kinds(&[
            EventKind::ArchitecturalStep,
            EventKind::MemoryRead,
            EventKind::MemoryWrite,
            EventKind::OperationStep,
            EventKind::CBranch,
        ])
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.config.ranges
    }

    pub fn site(&self, read_pc: u64) -> Option<&CheckSite> {
        self.sites.get(&read_pc)
    }

    /// Adds ranges, merging each with any existing range it touches.
    pub fn widen(&mut self, new: &[(u64, u64)]) -> Result<(), String> {
        validate_ranges(new)?;
        let mut all = self.config.ranges.clone();
        all.extend_from_slice(new);
        all.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::new();
        for (lo, hi) in all {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        self.config.ranges = merged;
        Ok(())
    }

    /// Replaces the ranges; sites outside them are dropped.
    pub fn set_ranges(&mut self, ranges: Vec<(u64, u64)>) -> Result<(), String> {
        validate_ranges(&ranges)?;
        if ranges.is_empty() {
            return Err("check solver needs at least one range".into());
        }
        self.config.ranges = ranges;
        let keep = self.config.ranges.clone();
        self.sites.retain(|_, s| keep.iter().any(|&(lo, hi)| s.addr >= lo && s.addr < hi));
        Ok(())
    }

    fn in_range(&self, addr: u64) -> bool {
        self.config.ranges.iter().any(|&(lo, hi)| addr >= lo && addr < hi)
    }

    fn on_read(&mut self, pc: u64, addr: u64, size: u8) -> Response {
        if !self.in_range(addr) {
            return Response::Continue;
        }
        let var = self.shadow.fresh(size);
        let window = self.config.reentry_window;
        let mut response = Response::Continue;
        if let Some(site) = self.sites.get_mut(&pc) {
            let reenters = site.state == SiteState::AtBranch && site.addr == addr && self.insns - site.read_at <= window;
            if reenters {
                site.state = SiteState::Reenter;
                let (branch_pc, cond, taken) = site.branch.clone().expect("at branch");
                let old = match site.var {
                    SymExpr::Var { id, .. } => id,
                    _ => unreachable!("sites hold variables"),
                };
                let new_id = match var {
                    SymExpr::Var { id, .. } => id,
                    _ => unreachable!(),
                };
                let exit = Constraint::truth(cond.rename(old, new_id), !taken);
                match solve(std::slice::from_ref(&exit), &self.config.solver) {
                    SolverResult::Sat(asg) => {
                        let value = asg.get(&new_id).copied().unwrap_or(0);
                        let check = Assignment::from([(new_id, value)]);
                        if exit.holds(&check).unwrap_or(false) && eval(&exit.expr, &check).is_ok() {
                            self.injections.push(Injection {
                                read_pc: pc,
                                addr,
                                branch_pc,
                                value,
                            });
                            response = Response::OverrideValue(value);
                        } else {
                            self.diagnostics
                                .push(format!("check at 0x{:x}: model for v{} does not exit the loop", pc, new_id));
                        }
                    }
                    SolverResult::Unsat => self.diagnostics.push(format!("check at 0x{:x}: loop exit unsatisfiable", pc)),
                    SolverResult::Unknown(why) => self.diagnostics.push(format!("check at 0x{:x}: solver unknown: {}", pc, why)),
                }
            }
        } else if self.sites.len() >= self.config.max_tracked {
            return Response::Continue;
        }
        self.sites.insert(
            pc,
            CheckSite {
                state: SiteState::Tracked,
                read_pc: pc,
                addr,
                size,
                var: var.clone(),
                branch: None,
                read_at: self.insns,
            },
        );
        self.pending_read = Some(var);
        response
    }

    fn on_write(&mut self, addr: u64, size: u8) {
        self.sites.retain(|_, s| !(addr < s.addr + s.size as u64 && s.addr < addr + size as u64));
    }

    fn on_branch(&mut self, pc: u64, cond: SymExpr, taken: bool) {
        let vars = cond.vars();
        for site in self.sites.values_mut() {
            let SymExpr::Var { id, .. } = site.var else { continue };
            if site.state == SiteState::Tracked && vars.contains_key(&id) {
                site.state = SiteState::AtBranch;
                site.branch = Some((pc, cond.clone(), taken));
            }
        }
    }
}

impl Observer for CheckSolver {
    fn on_event(&mut self, event: &Event) -> Response {
        match *event {
            Event::ArchitecturalStep { .. } => {
                self.insns += 1;
                self.shadow.clear_temps();
                let (now, window) = (self.insns, self.config.reentry_window);
                self.sites.retain(|_, s| now - s.read_at <= window);
            }
            Event::MemoryRead { pc, addr, size, .. } => return self.on_read(pc, addr, size),
            Event::MemoryWrite { addr, size, .. } => self.on_write(addr, size),
            Event::OperationStep { op, inputs, output, .. } => {
                let injected = if op.opcode == Opcode::Load { self.pending_read.take() } else { None };
                self.shadow.step(&self.spaces, op, inputs, output.unwrap_or(0), injected);
            }
            Event::CBranch {
                pc, cond, condition, taken, ..
            } => {
                if let Some(e) = self.shadow.input(&self.spaces, &cond, condition) {
                    self.on_branch(pc, e, taken);
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
