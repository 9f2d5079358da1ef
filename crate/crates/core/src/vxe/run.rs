//! Runs every device on its own thread in lockstep rounds.
//!
//! Each round every live device executes a fixed number of instructions;
//! peripheral output is routed at the round boundary and delivered before
//! the next round. Results do not depend on thread scheduling.

use std::any::Any;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::exec::{Mode, RunLimits, StopReason};
use crate::observe::write_trace;
use crate::periph::{DeviceMessage, SerialPort};

use super::config::VxeConfig;
use super::coordinator::{Coordinator, Envelope};
use super::device::{build_device, CachePool, Device};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeviceStop {
    Halted,
    Fault(String),
    /// The device's own instruction budget ran out.
    Budget,
    /// Still running when the environment shut down.
    Running,
}

type Job = Box<dyn FnOnce(&mut Device) + Send>;

enum Command {
    Round { deliveries: Vec<Envelope>, instructions: u64 },
    Exec(Job),
    Finish,
}

struct RoundReport {
    outputs: Vec<(String, DeviceMessage)>,
    stop: Option<DeviceStop>,
    pending_input: usize,
}

struct Worker {
    name: String,
    tx: Sender<Command>,
    rx: Receiver<RoundReport>,
    handle: JoinHandle<Device>,
    stop: Option<DeviceStop>,
}

fn pending_serial_input(dev: &Device) -> usize {
    dev.sim
        .machine
        .devices
        .iter()
        .filter_map(|d| (d.as_ref() as &dyn Any).downcast_ref::<SerialPort>())
        .map(SerialPort::pending_input)
        .sum()
}

fn run_slice(dev: &mut Device, instructions: u64) -> Option<DeviceStop> {
    if matches!(dev.sim.mode(), Mode::Flood { .. }) {
        let pc = dev.sim.pc();
        return Some(match dev.sim.flood_explore(&[pc]) {
            Ok(r) => {
                let stop = if r.budget_exhausted { DeviceStop::Budget } else { DeviceStop::Halted };
                dev.flood = Some(r);
                stop
            }
            Err(e) => DeviceStop::Fault(e),
        });
    }
    let left = dev.budget.map(|b| b.saturating_sub(dev.sim.stats.instructions));
    if left == Some(0) {
        return Some(DeviceStop::Budget);
    }
    let n = left.map_or(instructions, |l| l.min(instructions));
    match dev.sim.run(&RunLimits {
        insn_budget: Some(n),
        ..RunLimits::default()
    }) {
        Ok(StopReason::Halted) => Some(DeviceStop::Halted),
        Ok(_) if left.is_some_and(|l| l <= instructions) => Some(DeviceStop::Budget),
        Ok(_) => None,
        Err(e) => Some(DeviceStop::Fault(e.to_string())),
    }
}

fn worker(mut dev: Device, rx: Receiver<Command>, tx: Sender<RoundReport>) -> Device {
    let mut stop: Option<DeviceStop> = None;
    for cmd in rx {
        match cmd {
            Command::Round { deliveries, instructions } => {
                for env in deliveries {
                    if !dev.sim.deliver_to(&env.peripheral, &env.message) {
                        log::warn!("{}: peripheral {} refused a message from {}", dev.name, env.peripheral, env.from);
                    }
                }
                if stop.is_none() {
                    stop = run_slice(&mut dev, instructions);
                }
                let report = RoundReport {
                    outputs: dev.sim.take_device_output(),
                    stop: stop.clone(),
                    pending_input: pending_serial_input(&dev),
                };
                if tx.send(report).is_err() {
                    break;
                }
            }
            Command::Exec(job) => job(&mut dev),
            Command::Finish => break,
        }
    }
    dev
}

/// Outcome of a whole environment run.
pub struct VxeReport {
    pub stops: BTreeMap<String, DeviceStop>,
    pub rounds: u64,
    /// Input and trace files written for the trace link, in order.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub diagnostics: Vec<String>,
    /// Final device states, in config order.
    pub devices: Vec<Device>,
    pub pool: CachePool,
}

/// A running environment.
pub struct Runtime {
    pub coordinator: Arc<Coordinator>,
    workers: Vec<Worker>,
    round_instructions: u64,
    pub rounds: u64,
    pool: CachePool,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RoundSummary {
    pub routed: usize,
    pub pending_input: usize,
    pub all_stopped: bool,
}

impl Runtime {
    pub fn start(cfg: &VxeConfig) -> Result<Runtime, String> {
        let pool = CachePool::new();
        let names: Vec<String> = cfg.devices.iter().map(|d| d.name.clone()).collect();
        let mut coord = Coordinator::new(&names, cfg.limits.queue_capacity);
        for r in &cfg.routes {
            coord.add_route(&r.from, r.source_peripheral().unwrap_or(""), &r.to, r.target_peripheral().unwrap_or(""));
        }
        let devices = cfg.devices.iter().map(|d| build_device(cfg, d, &pool)).collect::<Result<Vec<_>, _>>()?;
        let workers = devices
            .into_iter()
            .map(|dev| {
                let (ctx, crx) = channel();
                let (rtx, rrx) = channel();
                let name = dev.name.clone();
                let handle = std::thread::Builder::new()
                    .name(format!("dev-{}", name))
                    .spawn(move || worker(dev, crx, rtx))
                    .expect("spawn device thread");
                Worker {
                    name,
                    tx: ctx,
                    rx: rrx,
                    handle,
                    stop: None,
                }
            })
            .collect();
        Ok(Runtime {
            coordinator: Arc::new(coord),
            workers,
            round_instructions: cfg.limits.round_instructions,
            rounds: 0,
            pool,
        })
    }

    fn worker(&self, device: &str) -> Result<&Worker, String> {
        self.workers
            .iter()
            .find(|w| w.name == device)
            .ok_or_else(|| format!("no such device {:?}", device))
    }

    /// Runs `f` on the device's thread and returns its result.
    pub fn exec<R: Send + 'static>(&self, device: &str, f: impl FnOnce(&mut Device) -> R + Send + 'static) -> Result<R, String> {
        let w = self.worker(device)?;
        let (tx, rx) = channel();
        w.tx.send(Command::Exec(Box::new(move |d| {
            let _ = tx.send(f(d));
        })))
        .map_err(|_| format!("device {} thread is gone", device))?;
        rx.recv().map_err(|_| format!("device {} thread is gone", device))
    }

    /// One lockstep round across all devices.
    pub fn round(&mut self) -> RoundSummary {
        for w in &self.workers {
            let deliveries = self.coordinator.take_inbox(&w.name);
            let _ = w.tx.send(Command::Round {
                deliveries,
                instructions: self.round_instructions,
            });
        }
        let mut s = RoundSummary {
            all_stopped: true,
            ..RoundSummary::default()
        };
        for w in &mut self.workers {
            let Ok(r) = w.rx.recv() else {
                w.stop.get_or_insert(DeviceStop::Fault("device thread died".into()));
                continue;
            };
            if r.stop.is_some() && w.stop.is_none() {
                log::info!("device {} stopped: {:?}", w.name, r.stop);
                self.coordinator.mark_stopped(&w.name);
            }
            w.stop = r.stop;
            s.pending_input += r.pending_input;
            for (periph, msg) in &r.outputs {
                s.routed += self.coordinator.route(&w.name, periph, msg);
            }
        }
        s.all_stopped = self.workers.iter().all(|w| w.stop.is_some());
        self.rounds += 1;
        s
    }

    /// Runs rounds until two consecutive rounds move no data, every device stops, or `max` rounds pass.
    pub fn settle(&mut self, max: u64) -> RoundSummary {
        let mut quiet = 0;
        let mut last = RoundSummary::default();
        for _ in 0..max {
            last = self.round();
            if last.all_stopped {
                break;
            }
            let idle = last.routed == 0 && last.pending_input == 0 && self.coordinator.pending() == 0;
            quiet = if idle { quiet + 1 } else { 0 };
            if quiet >= 2 {
                break;
            }
        }
        last
    }

    pub fn finish(self) -> VxeReport {
        let mut stops = BTreeMap::new();
        let mut devices = Vec::new();
        for w in self.workers {
            let _ = w.tx.send(Command::Finish);
            stops.insert(w.name.clone(), w.stop.unwrap_or(DeviceStop::Running));
            match w.handle.join() {
                Ok(d) => devices.push(d),
                Err(_) => log::error!("device {} thread panicked", w.name),
            }
        }
        let diagnostics = self.coordinator.diagnostics.lock().expect("diagnostics lock").clone();
        VxeReport {
            stops,
            rounds: self.rounds,
            pairs: Vec::new(),
            diagnostics,
            devices,
            pool: self.pool,
        }
    }
}

/// Runs the environment described by `cfg`.
///
/// With a stimulus, inputs are fed one at a time and the environment settles
/// after each. With a trace link, an input/trace pair is written whenever the
/// watched device reports coverage it had not seen before.
pub fn run_vxe(cfg: &VxeConfig) -> Result<VxeReport, String> {
    let mut rt = Runtime::start(cfg)?;
    let max = cfg.limits.max_rounds;
    let mut pairs = Vec::new();
    match &cfg.stimulus {
        None => while rt.rounds < max && !rt.round().all_stopped {},
        Some(st) => {
            if let Some(t) = &cfg.trace {
                std::fs::create_dir_all(cfg.path(&t.out)).map_err(|e| format!("trace.out: {}", e))?;
                // Coverage reached before the first input is not attributed to any input.
                rt.settle(max);
                rt.exec(&t.watch, |d| d.coverage_mut().map(|c| c.take_fresh()))?;
                rt.exec(&t.dump, |d| d.trace_mut().map(|t| t.take_traces()))?;
            }
            for input in &st.inputs {
                let (periph, bytes) = (st.peripheral.clone(), input.clone().into_bytes());
                rt.exec(&st.device, move |d| {
                    if let Some(s) = d.serial_mut(&periph) {
                        s.feed(&bytes);
                    }
                })?;
                let left = max.saturating_sub(rt.rounds);
                if rt.settle(left).all_stopped || rt.rounds >= max {
                    log::info!("environment stopped before all inputs were handled");
                }
                let Some(t) = &cfg.trace else { continue };
                let fresh = rt.exec(&t.watch, |d| d.coverage_mut().map(|c| c.take_fresh()).unwrap_or_default())?;
                let traces = rt.exec(&t.dump, |d| d.trace_mut().map(|t| t.take_traces()).unwrap_or_default())?;
                let total = rt.exec(&t.watch, |d| d.coverage_mut().map(|c| c.total()).unwrap_or(0))?;
                rt.coordinator.facts.put("coverage", &t.watch, (total as u64).to_le_bytes().to_vec());
                if fresh.is_empty() {
                    continue;
                }
                let Some(last) = traces.iter().rev().find(|t| !t.is_empty()) else {
                    log::info!("new coverage on {} without a completed trace", t.watch);
                    continue;
                };
                let dir = cfg.path(&t.out);
                let n = pairs.len();
                let ipath = dir.join(format!("input-{:04}.bin", n));
                std::fs::write(&ipath, input.as_bytes()).map_err(|e| format!("{}: {}", ipath.display(), e))?;
                let tpath = write_trace(&dir, n, last).map_err(|e| format!("{}: {}", dir.display(), e))?;
                rt.coordinator.facts.put("pairs", &format!("{:04}", n), input.as_bytes().to_vec());
                pairs.push((ipath, tpath));
            }
        }
    }
    let mut report = rt.finish();
    report.pairs = pairs;
    Ok(report)
}
