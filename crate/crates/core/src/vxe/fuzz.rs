//! Coverage-guided fuzzing of a device's serial input from a snapshot.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::exec::{Machine, RunLimits, StopReason};
use crate::observe::{CovKey, Coverage, ObserverId};

use super::config::{Addr, FuzzConfig, VxeConfig};
use super::coordinator::FactStore;
use super::device::{build_device, CachePool, Device};

/// Ops allowed for the warm-up run that reaches the snapshot point.
const WARMUP_OPS: u64 = 50_000_000;
/// Executions between exchanges with other instances.
const SYNC_EVERY: u64 = 512;
const FRESH_ENERGY: u32 = 32;

const INTERESTING: [u64; 13] = [
    0,
    1,
    0x7f,
    0x80,
    0xff,
    0x100,
    0x7fff,
    0x8000,
    0xffff,
    0x1_0000,
    0x7fff_ffff,
    0x8000_0000,
    0xffff_ffff,
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoalHit {
    pub goal: String,
    pub input: Vec<u8>,
    /// Execution count at which the goal was first reached.
    pub exec: u64,
}

#[derive(Clone, Debug, Default)]
pub struct FuzzReport {
    pub execs: u64,
    pub coverage: usize,
    pub goals: Vec<GoalHit>,
    pub corpus: usize,
    /// Inputs kept for new coverage, in discovery order.
    pub discoveries: Vec<Vec<u8>>,
    pub faults: u64,
}

impl FuzzReport {
    /// `execs=<n> cov=<n> goals=<list>`
    pub fn line(&self) -> String {
        let goals: Vec<&str> = self.goals.iter().map(|g| g.goal.as_str()).collect();
        let list = if goals.is_empty() { "-".to_string() } else { goals.join(",") };
        format!("execs={} cov={} goals={}", self.execs, self.coverage, list)
    }

    pub fn reached(&self, goal: &str) -> Option<&GoalHit> {
        self.goals.iter().find(|g| g.goal == goal)
    }
}

struct Entry {
    data: Vec<u8>,
    energy: u32,
}

/// One fuzzing instance bound to one device.
pub struct FuzzEngine {
    dev: Device,
    snapshot: Machine,
    input: String,
    goals: Vec<(u64, String)>,
    limits: RunLimits,
    max_len: usize,
    rng: ChaCha8Rng,
    corpus: Vec<Entry>,
    known: HashSet<[u8; 32]>,
    cov: ObserverId,
    pub report: FuzzReport,
    corpus_dir: Option<PathBuf>,
}

fn hash(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

fn goal_name(a: &Addr, v: u64) -> String {
    match a {
        Addr::Name(n) if !n.starts_with("0x") => n.clone(),
        _ => format!("0x{:x}", v),
    }
}

impl FuzzEngine {
    /// Builds the target device, runs it to the snapshot point and seeds the corpus.
    pub fn new(cfg: &VxeConfig, fz: &FuzzConfig, pool: &CachePool, seed: u64) -> Result<FuzzEngine, String> {
        let dcfg = cfg.device(&fz.target).ok_or_else(|| format!("fuzz.target: no such device {:?}", fz.target))?;
        let mut dev = build_device(cfg, dcfg, pool)?;
        if let Some(a) = &fz.snapshot {
            let at = a.resolve(&dev.symbols).map_err(|e| format!("fuzz.snapshot: {}", e))?;
            let r = dev
                .sim
                .run(&RunLimits::ops(WARMUP_OPS).until(at))
                .map_err(|e| format!("fuzz.snapshot: warm-up faulted: {}", e))?;
            if r != StopReason::Address(at) {
                return Err(format!("fuzz.snapshot: warm-up never reached {} ({:?})", a, r));
            }
        }
        let goals = fz
            .goals
            .iter()
            .map(|g| g.resolve(&dev.symbols).map(|v| (v, goal_name(g, v))))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("fuzz.goals: {}", e))?;
        if dev.sim.device::<crate::periph::SerialPort>(&fz.input).is_none() {
            return Err(format!("fuzz.input: no serial peripheral {:?}", fz.input));
        }
        let c = Coverage::new(fz.split);
        let cov = dev.sim.observe(c.filter(), Box::new(c));
        let snapshot = dev.sim.snapshot();
        let limits = RunLimits {
            stop_at: goals.iter().map(|g| g.0).collect(),
            op_budget: Some(fz.exec_ops),
            insn_budget: None,
        };
        let corpus_dir = Some(cfg.path(&fz.corpus));
        let mut e = FuzzEngine {
            dev,
            snapshot,
            input: fz.input.clone(),
            goals,
            limits,
            max_len: fz.max_len,
            rng: ChaCha8Rng::seed_from_u64(seed),
            corpus: Vec::new(),
            known: HashSet::new(),
            cov,
            report: FuzzReport::default(),
            corpus_dir,
        };
        let mut seeds: Vec<Vec<u8>> = fz.seeds.iter().map(|s| s.as_bytes().to_vec()).collect();
        if seeds.is_empty() {
            seeds.push(Vec::new());
        }
        for s in seeds {
            e.execute(&s)?;
            if !e.known.contains(&hash(&s)) {
                e.keep(s);
            }
        }
        Ok(e)
    }

    fn coverage(&mut self) -> &mut Coverage {
        self.dev.sim.observer_mut::<Coverage>(self.cov).expect("coverage observer")
    }

    pub fn coverage_keys(&mut self) -> Vec<CovKey> {
        self.coverage().keys().copied().collect()
    }

    fn keep(&mut self, data: Vec<u8>) {
        let h = hash(&data);
        if !self.known.insert(h) {
            return;
        }
        if let Some(dir) = &self.corpus_dir {
            let path = dir.join(hex::encode(h));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &data)) {
                log::warn!("corpus write {}: {}", path.display(), e);
            }
        }
        self.report.discoveries.push(data.clone());
        self.corpus.push(Entry { data, energy: FRESH_ENERGY });
    }

    /// Runs one input from the snapshot. Returns true when it reached new coverage.
    pub fn execute(&mut self, data: &[u8]) -> Result<bool, String> {
        self.report.execs += 1;
        let sim = &mut self.dev.sim;
        sim.restore(&self.snapshot);
        sim.device_mut::<crate::periph::SerialPort>(&self.input)
            .ok_or("fuzz input peripheral vanished")?
            .feed(data);
        if let Some(z) = self.dev.red_zone_mut() {
            z.hits.clear();
        }
        let outcome = self.dev.sim.run(&self.limits);
        let mut hit = None;
        match outcome {
            Ok(StopReason::Address(a)) => hit = self.goals.iter().find(|g| g.0 == a).map(|g| g.1.clone()),
            Ok(_) => {}
            Err(e) => {
                log::debug!("fuzz input faulted: {}", e);
                self.report.faults += 1;
            }
        }
        if hit.is_none() && self.dev.red_zone().is_some_and(|z| !z.hits.is_empty()) {
            hit = Some("red-zone".to_string());
        }
        if let Some(goal) = hit {
            if self.report.reached(&goal).is_none() {
                log::info!("goal {} reached after {} executions", goal, self.report.execs);
                if let Some(dir) = &self.corpus_dir {
                    let gdir = dir.join("goals");
                    let _ = std::fs::create_dir_all(&gdir).and_then(|_| std::fs::write(gdir.join(hex::encode(hash(data))), data));
                }
                self.report.goals.push(GoalHit {
                    goal,
                    input: data.to_vec(),
                    exec: self.report.execs,
                });
            }
        }
        Ok(!self.coverage().take_fresh().is_empty())
    }

    fn pick(&mut self) -> usize {
        let total: u64 = self.corpus.iter().map(|e| e.energy as u64).sum();
        let mut x = self.rng.gen_range(0..total);
        for (i, e) in self.corpus.iter().enumerate() {
            if x < e.energy as u64 {
                return i;
            }
            x -= e.energy as u64;
        }
        self.corpus.len() - 1
    }

    fn mutate(&mut self, idx: usize) -> Vec<u8> {
        let mut d = self.corpus[idx].data.clone();
        let rounds = 1 << self.rng.gen_range(0..3);
        for _ in 0..rounds {
            let r = &mut self.rng;
            match r.gen_range(0..8) {
                0 if !d.is_empty() => {
                    let i = r.gen_range(0..d.len());
                    d[i] ^= 1 << r.gen_range(0..8);
                }
                1 if !d.is_empty() => {
                    let i = r.gen_range(0..d.len());
                    d[i] = r.gen();
                }
                2 if !d.is_empty() => {
                    let width = [1usize, 2, 4][r.gen_range(0..3)].min(d.len());
                    let v = INTERESTING[r.gen_range(0..INTERESTING.len())];
                    let bytes = if r.gen() {
                        v.to_le_bytes()
                    } else {
                        (v << (64 - 8 * width as u32)).to_be_bytes()
                    };
                    let at = r.gen_range(0..=d.len() - width);
                    d[at..at + width].copy_from_slice(&bytes[..width]);
                }
                3 if !d.is_empty() => {
                    let a = r.gen_range(0..d.len());
                    let len = r.gen_range(1..=(d.len() - a).min(16));
                    let block: Vec<u8> = d[a..a + len].to_vec();
                    let at = r.gen_range(0..=d.len());
                    d.splice(at..at, block);
                }
                4 if d.len() > 1 => {
                    let a = r.gen_range(0..d.len());
                    let len = r.gen_range(1..=(d.len() - a).min(16));
                    d.drain(a..a + len);
                }
                5 if self.corpus.len() > 1 => {
                    let other = &self.corpus[r.gen_range(0..self.corpus.len())].data;
                    let cut = r.gen_range(0..=d.len());
                    let from = r.gen_range(0..=other.len());
                    d.truncate(cut);
                    d.extend_from_slice(&other[from..]);
                }
                6 => {
                    let at = r.gen_range(0..=d.len());
                    d.insert(at, r.gen());
                }
                _ => {
                    let n = r.gen_range(1..=8);
                    d.extend((0..n).map(|_| r.gen::<u8>()));
                }
            }
        }
        d.truncate(self.max_len);
        d
    }

    /// One fuzzing iteration: pick by energy, mutate, run, keep on new coverage.
    pub fn step(&mut self) -> Result<(), String> {
        let idx = self.pick();
        let e = &mut self.corpus[idx];
        e.energy = (e.energy / 2).max(1);
        let input = self.mutate(idx);
        if self.execute(&input)? {
            self.keep(input);
        }
        Ok(())
    }

    /// Publishes own corpus entries and runs entries other instances found.
    fn sync(&mut self, facts: &FactStore) -> Result<(), String> {
        for e in &self.corpus {
            facts.put("corpus", &hex::encode(hash(&e.data)), e.data.clone());
        }
        for key in facts.keys("corpus") {
            let Some(data) = facts.get("corpus", &key) else { continue };
            if self.known.contains(&hash(&data)) {
                continue;
            }
            if self.execute(&data)? {
                self.keep(data);
            } else {
                self.known.insert(hash(&data));
            }
        }
        for g in &self.report.goals {
            facts.put("goals", &g.goal, g.input.clone());
        }
        Ok(())
    }

    fn done(&self, fz: &FuzzConfig) -> bool {
        self.report.execs >= fz.max_execs || (fz.stop_on_goal && !self.report.goals.is_empty())
    }

    pub fn finish(mut self) -> FuzzReport {
        self.report.coverage = self.coverage().total();
        self.report.corpus = self.corpus.len();
        self.report
    }
}

/// Runs the configured campaign. Several instances share corpus and goals through the fact store.
pub fn run_fuzz(cfg: &VxeConfig) -> Result<FuzzReport, String> {
    let fz = cfg.fuzz.clone().ok_or("config has no [fuzz] section")?;
    let pool = CachePool::new();
    if fz.instances == 1 {
        let mut e = FuzzEngine::new(cfg, &fz, &pool, fz.seed)?;
        while !e.done(&fz) {
            e.step()?;
        }
        return Ok(e.finish());
    }
    let facts = Arc::new(FactStore::new());
    let per = fz.max_execs.div_ceil(fz.instances as u64);
    let results: Vec<Result<(FuzzReport, Vec<CovKey>), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..fz.instances)
            .map(|i| {
                let (facts, fz, pool) = (facts.clone(), fz.clone(), &pool);
                s.spawn(move || {
                    let mut e = FuzzEngine::new(cfg, &fz, pool, fz.seed.wrapping_add(i as u64))?;
                    let mut since = 0;
                    while e.report.execs < per && !(fz.stop_on_goal && (!e.report.goals.is_empty() || !facts.keys("goals").is_empty())) {
                        e.step()?;
                        since += 1;
                        if since >= SYNC_EVERY {
                            e.sync(&facts)?;
                            since = 0;
                        }
                    }
                    e.sync(&facts)?;
                    let keys = e.coverage_keys();
                    Ok((e.finish(), keys))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("fuzz instance panicked".into())))
            .collect()
    });
    let mut total = FuzzReport::default();
    let mut cov = Coverage::new(fz.split);
    let mut seen_goals = BTreeSet::new();
    let mut corpus = HashSet::new();
    for r in results {
        let (rep, keys) = r?;
        total.execs += rep.execs;
        total.faults += rep.faults;
        cov.merge(&keys);
        for d in &rep.discoveries {
            corpus.insert(hash(d));
        }
        total.discoveries.extend(rep.discoveries);
        for g in rep.goals {
            if seen_goals.insert(g.goal.clone()) {
                total.goals.push(g);
            }
        }
    }
    total.coverage = cov.total();
    total.corpus = corpus.len();
    Ok(total)
}

/// Human-readable summary of goal hits.
pub fn describe_goals(r: &FuzzReport) -> String {
    let mut s = String::new();
    for g in &r.goals {
        let _ = writeln!(s, "goal {} after {} execs: {}", g.goal, g.exec, hex::encode(&g.input));
    }
    s
}
