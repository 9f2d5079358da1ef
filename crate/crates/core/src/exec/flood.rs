//! Flood exploration: every conditional branch is tried both ways, bounded by
//! a per-path visit limit on each (site, direction) pair.

use std::collections::{BTreeSet, HashMap, VecDeque};

use super::{ExecError, Machine, Mode, Simulator};

type Counters = HashMap<(u64, bool), u32>;

struct Pending {
    machine: Machine,
    counters: Counters,
    forced: Option<(u64, bool)>,
}

pub(crate) struct FloodState {
    k: u32,
    counters: Counters,
    worklist: VecDeque<Pending>,
    forced: Option<(u64, bool)>,
    /// Machine as it was before the current branching instruction.
    pub(crate) pre: Option<Machine>,
    pub(crate) path_ended: bool,
    visited: BTreeSet<(u64, bool)>,
    max_count: u32,
}

impl FloodState {
    /// Chooses the direction for the current path, queueing the other one
    /// when its limit allows. `None` ends the path.
    pub(crate) fn decide(&mut self, site: u64, natural: bool) -> Option<bool> {
        if let Some((s, d)) = self.forced {
            if s == site {
                self.forced = None;
                self.take(site, d);
                return Some(d);
            }
        }
        let open: Vec<bool> = [natural, !natural].into_iter().filter(|&d| self.count(site, d) < self.k).collect();
        let &take = open.first()?;
        if open.len() == 2 {
            if let Some(m) = self.pre.clone() {
                self.worklist.push_back(Pending {
                    machine: m,
                    counters: self.counters.clone(),
                    forced: Some((site, !take)),
                });
            }
        }
        self.take(site, take);
        Some(take)
    }

    fn count(&self, site: u64, dir: bool) -> u32 {
        self.counters.get(&(site, dir)).copied().unwrap_or(0)
    }

    fn take(&mut self, site: u64, dir: bool) {
        let c = self.counters.entry((site, dir)).or_insert(0);
        *c += 1;
        self.max_count = self.max_count.max(*c);
        self.visited.insert((site, dir));
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FloodReport {
    /// Every (branch site, direction) taken on some path.
    pub visited: BTreeSet<(u64, bool)>,
    pub paths: u64,
    pub faults: Vec<ExecError>,
    pub ops: u64,
    pub budget_exhausted: bool,
    /// Largest per-path count of any (site, direction).
    pub max_visits: u32,
}

impl Simulator {
    /// Explores from each root with the current machine as the base state.
    ///
    /// Requires flood mode.
    pub fn flood_explore(&mut self, roots: &[u64]) -> Result<FloodReport, String> {
        let Mode::Flood { k, op_budget, .. } = self.mode().clone() else {
            return Err(format!("flood exploration needs flood mode, not {}", self.mode().name()));
        };
        if k == 0 {
            return Err("flood limit must be at least 1".into());
        }
        let base = self.snapshot();
        let mut fl = FloodState {
            k,
            counters: Counters::new(),
            worklist: VecDeque::new(),
            forced: None,
            pre: None,
            path_ended: false,
            visited: BTreeSet::new(),
            max_count: 0,
        };
        for &r in roots {
            let mut m = base.clone();
            m.state.pc = r;
            m.state.halted = false;
            fl.worklist.push_back(Pending {
                machine: m,
                counters: Counters::new(),
                forced: None,
            });
        }
        self.flood = Some(fl);
        let start = self.stats.ops;
        let mut report = FloodReport::default();
        loop {
            let fl = self.flood.as_mut().expect("flood state");
            let Some(p) = fl.worklist.pop_front() else { break };
            if self.stats.ops - start >= op_budget {
                report.budget_exhausted = true;
                break;
            }
            fl.counters = p.counters;
            fl.forced = p.forced;
            fl.pre = None;
            fl.path_ended = false;
            self.restore(&p.machine);
            report.paths += 1;
            while !self.is_halted() {
                if self.stats.ops - start >= op_budget {
                    report.budget_exhausted = true;
                    break;
                }
                if let Err(e) = self.step_instruction() {
                    log::debug!("flood path fault: {}", e);
                    report.faults.push(e);
                    break;
                }
            }
        }
        let fl = self.flood.take().expect("flood state");
        report.visited = fl.visited;
        report.max_visits = fl.max_count;
        report.ops = self.stats.ops - start;
        self.restore(&base);
        Ok(report)
    }
}
