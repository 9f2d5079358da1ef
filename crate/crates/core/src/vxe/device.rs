//! Builds a configured simulator for one device.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::archspec::{LiftCache, ProcessorSpec};
use crate::exec::{intrinsics, FillPolicy, FloodReport, Mode, Simulator};
use crate::interrupts::{InterruptController, InterruptSpec, ReturnTrigger, SaveItem, Vector};
use crate::observe::{Coverage, Event, EventKind, Filter, Observer, ObserverId, Response, TraceDumper};
use crate::periph::{CanFrame, CheckSolver, CheckSolverConfig, FifoStream, RedZone, SerialPort, UniversalPeripheral};

use super::config::{DeviceConfig, FillConfig, IntrinsicConfig, ModeConfig, ObserverConfig, PeripheralConfig, VxeConfig};

/// Records firmware writes into an address range.
#[derive(Clone, Debug, Default)]
pub struct WriteLog {
    pub lo: u64,
    pub hi: u64,
    /// (pc, address, value) in program order.
    pub writes: Vec<(u64, u64, u64)>,
}

impl Observer for WriteLog {
    fn on_event(&mut self, event: &Event) -> Response {
        if let Event::MemoryWrite { pc, addr, value, .. } = *event {
            self.writes.push((pc, addr, value));
        }
        Response::Continue
    }

    fn box_clone(&self) -> Option<Box<dyn Observer>> {
        Some(Box::new(self.clone()))
    }
}

/// Specs and lift caches shared by every device built from the same spec text.
type Shared = (Arc<ProcessorSpec>, Arc<LiftCache>);

#[derive(Default)]
pub struct CachePool {
    inner: Mutex<HashMap<[u8; 32], Shared>>,
}

impl CachePool {
    pub fn new() -> CachePool {
        CachePool::default()
    }

    pub fn load(&self, path: &Path) -> Result<(Arc<ProcessorSpec>, Arc<LiftCache>), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))?;
        let spec = ProcessorSpec::parse(&text).map_err(|e| format!("{}: {}", path.display(), e))?;
        let mut g = self.inner.lock().expect("cache pool lock");
        let entry = g.entry(spec.content_hash).or_insert_with(|| (Arc::new(spec), Arc::new(LiftCache::in_memory())));
        Ok(entry.clone())
    }

    pub fn caches(&self) -> Vec<Arc<LiftCache>> {
        self.inner.lock().expect("cache pool lock").values().map(|(_, c)| c.clone()).collect()
    }
}

pub struct Device {
    pub name: String,
    pub sim: Simulator,
    pub symbols: HashMap<String, u64>,
    pub coverage: Option<ObserverId>,
    pub trace: Option<ObserverId>,
    pub red_zone: Option<ObserverId>,
    pub check_solver: Option<ObserverId>,
    pub write_log: Option<ObserverId>,
    pub budget: Option<u64>,
    /// Result of the exploration a flood-mode device runs instead of stepping.
    pub flood: Option<FloodReport>,
}

impl Device {
    pub fn coverage_mut(&mut self) -> Option<&mut Coverage> {
        self.sim.observer_mut(self.coverage?)
    }

    pub fn trace_mut(&mut self) -> Option<&mut TraceDumper> {
        self.sim.observer_mut(self.trace?)
    }

    pub fn red_zone(&self) -> Option<&RedZone> {
        self.sim.observer(self.red_zone?)
    }

    pub fn red_zone_mut(&mut self) -> Option<&mut RedZone> {
        self.sim.observer_mut(self.red_zone?)
    }

    pub fn check_solver(&self) -> Option<&CheckSolver> {
        self.check_solver.and_then(|id| self.sim.observer(id))
    }

    pub fn write_log(&self) -> Option<&WriteLog> {
        self.sim.observer(self.write_log?)
    }

    /// Bytes each serial port has transmitted, by peripheral name.
    pub fn transcripts(&self) -> Vec<(String, Vec<u8>)> {
        self.sim
            .machine
            .devices
            .iter()
            .filter_map(|d| (d.as_ref() as &dyn std::any::Any).downcast_ref::<SerialPort>())
            .map(|s| (s.name.clone(), s.transcript.clone()))
            .collect()
    }

    pub fn serial_mut(&mut self, name: &str) -> Option<&mut SerialPort> {
        self.sim.device_mut(name)
    }
}

fn parse_symbols(text: &str) -> Result<HashMap<String, u64>, String> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let (name, addr) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format!("symbols line {}: expected `name 0xaddr`", i + 1))?;
        let addr = addr.trim();
        let v = u64::from_str_radix(addr.trim_start_matches("0x"), 16).map_err(|e| format!("symbols line {}: {}", i + 1, e))?;
        out.insert(name.to_string(), v);
    }
    Ok(out)
}

/// Reads an image. Assembly sources (`.s`) are assembled on the fly.
fn load_image(cfg: &VxeConfig, d: &DeviceConfig, spec: &ProcessorSpec) -> Result<(Vec<u8>, HashMap<String, u64>), String> {
    let path = cfg.path(&d.image.path);
    if path.extension().is_some_and(|e| e == "s") {
        let src = std::fs::read_to_string(&path).map_err(|e| format!("{}: {}", path.display(), e))?;
        let a = crate::asm::assemble(spec, &src, d.image.base).map_err(|e| format!("{}: {}", path.display(), e))?;
        return Ok((a.bytes, a.symbols.into_iter().collect()));
    }
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let sym_path = match &d.image.symbols {
        Some(p) => Some(cfg.path(p)),
        None => Some(path.with_extension("sym")).filter(|p| p.is_file()),
    };
    let symbols = match sym_path {
        Some(p) => {
            parse_symbols(&std::fs::read_to_string(&p).map_err(|e| format!("{}: {}", p.display(), e))?).map_err(|e| format!("{}: {}", p.display(), e))?
        }
        None => HashMap::new(),
    };
    Ok((bytes, symbols))
}

fn fill(f: &FillConfig) -> FillPolicy {
    match *f {
        FillConfig::Zeros => FillPolicy::Zeros,
        FillConfig::Byte { value } => FillPolicy::Byte(value),
        FillConfig::Random { seed } => FillPolicy::Random(seed),
    }
}

fn mode(m: &ModeConfig, symbols: &HashMap<String, u64>) -> Result<Mode, String> {
    Ok(match m {
        ModeConfig::Concrete => Mode::Concrete,
        ModeConfig::Micro { fill: f } => Mode::Micro(fill(f)),
        ModeConfig::Forced { flips } => Mode::Forced {
            flips: flips.iter().map(|a| a.resolve(symbols)).collect::<Result<BTreeSet<_>, _>>()?,
        },
        ModeConfig::Flood { k, op_budget, fill: f } => Mode::Flood {
            k: *k,
            op_budget: *op_budget,
            fill: fill(f),
        },
        ModeConfig::Concolic { regions } => Mode::Concolic {
            regions: regions.iter().map(|r| (r[0], r[1])).collect(),
        },
    })
}

fn interrupts(d: &DeviceConfig, spec: &ProcessorSpec, symbols: &HashMap<String, u64>) -> Result<InterruptController, String> {
    let reg = |field: &str, n: &str| spec.register(n).ok_or_else(|| format!("{}: unknown register {:?}", field, n));
    let mut specs = Vec::new();
    for (i, c) in d.interrupts.iter().enumerate() {
        let field = format!("device.interrupt[{}]", i);
        let save = c
            .save
            .iter()
            .map(|n| {
                if n.eq_ignore_ascii_case("pc") {
                    Ok(SaveItem::Pc)
                } else {
                    reg(&format!("{}.save", field), n).map(SaveItem::Register)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trigger = match (&c.sentinel, &c.link, &c.intrinsic) {
            (Some(address), Some(link), None) => ReturnTrigger::Sentinel {
                address: *address,
                link: reg(&format!("{}.link", field), link)?,
            },
            (None, None, Some(name)) => ReturnTrigger::Intrinsic(name.clone()),
            _ => return Err(format!("{}: give either sentinel and link, or intrinsic", field)),
        };
        let vector = Vector::Address(c.vector.resolve(symbols).map_err(|e| format!("{}.vector: {}", field, e))?);
        specs.push(InterruptSpec {
            id: c.id,
            priority: c.priority,
            vector,
            save,
            trigger,
        });
    }
    let mut ctl = InterruptController::new(specs).map_err(|e| e.to_string())?;
    ctl.window = d.interrupt_window;
    for c in &d.interrupts {
        ctl.set_enabled(c.id, c.enabled).map_err(|e| e.to_string())?;
    }
    Ok(ctl)
}

pub fn build_device(cfg: &VxeConfig, d: &DeviceConfig, pool: &CachePool) -> Result<Device, String> {
    let ctx = |e: String| format!("device {}: {}", d.name, e);
    let (spec, cache) = pool.load(&cfg.path(&d.spec)).map_err(ctx)?;
    let (bytes, symbols) = load_image(cfg, d, &spec).map_err(ctx)?;
    let mut sim = Simulator::new(spec.clone(), cache, mode(&d.mode, &symbols).map_err(ctx)?);
    sim.lift_options.optimize = d.optimize;
    sim.load_image(d.image.base, &bytes);
    for r in d.ram.iter().chain(&d.mmio) {
        sim.map(r[0], r[1]);
    }
    let entry = match &d.entry {
        Some(a) => a.resolve(&symbols).map_err(|e| ctx(format!("entry: {}", e)))?,
        None => d.image.base,
    };
    sim.set_pc(entry);
    for p in &d.peripherals {
        let dev: Box<dyn crate::periph::Peripheral> = match p {
            PeripheralConfig::Serial { name, base, input } => {
                let mut s = SerialPort::new(name, *base);
                if let Some(i) = input {
                    s.feed(i.as_bytes());
                }
                Box::new(s)
            }
            PeripheralConfig::Fifo { name, base, reset_bit, replay } => {
                let mut f = FifoStream::new(name, *base, *reset_bit);
                if let Some(r) = replay {
                    let path = cfg.path(r);
                    let text = std::fs::read_to_string(&path).map_err(|e| ctx(format!("{}: {}", path.display(), e)))?;
                    for frame in CanFrame::parse_replay(&text).map_err(|e| ctx(format!("{}: {}", path.display(), e)))? {
                        f.push(frame);
                    }
                }
                Box::new(f)
            }
            PeripheralConfig::Cmt { name, base, irq } => Box::new(UniversalPeripheral::cmt(name, *base, *irq)),
        };
        sim.add_device(dev).map_err(ctx)?;
    }
    if !d.interrupts.is_empty() {
        let ctl = interrupts(d, &spec, &symbols).map_err(ctx)?;
        sim.set_interrupts(ctl);
    }
    for i in &d.intrinsics {
        match i {
            IntrinsicConfig::Halt { name } => sim.register_intrinsic(name, intrinsics::halt()),
            IntrinsicConfig::PageOverride { name, shift, window } => sim.register_intrinsic(name, intrinsics::page_override(*shift, *window)),
        }
    }
    let mut dev = Device {
        name: d.name.clone(),
        sim,
        symbols,
        coverage: None,
        trace: None,
        red_zone: None,
        check_solver: None,
        write_log: None,
        budget: d.budget,
        flood: None,
    };
    for o in &d.observers {
        match o {
            ObserverConfig::Coverage { split } => {
                let c = Coverage::new(*split);
                dev.coverage = Some(dev.sim.observe(c.filter(), Box::new(c)));
            }
            ObserverConfig::Trace { start, stop } => {
                let r = |a: &Option<super::config::Addr>| a.as_ref().map(|a| a.resolve(&dev.symbols)).transpose();
                let t = TraceDumper::new(r(start).map_err(ctx)?, r(stop).map_err(ctx)?);
                dev.trace = Some(dev.sim.observe(Filter::kinds(&[EventKind::ArchitecturalStep]), Box::new(t)));
            }
            ObserverConfig::RedZone { lo, hi } => {
                let z = RedZone::new(*lo, *hi);
                dev.red_zone = Some(dev.sim.observe(z.filter(), Box::new(z)));
            }
            ObserverConfig::CheckSolver { ranges, reentry_window } => {
                let mut c = CheckSolverConfig::new(ranges.iter().map(|r| (r[0], r[1])).collect());
                if let Some(w) = reentry_window {
                    c.reentry_window = *w;
                }
                let cs = CheckSolver::new(c, spec.spaces.clone(), spec.endian).map_err(ctx)?;
                dev.check_solver = Some(dev.sim.observe(CheckSolver::filter(), Box::new(cs)));
            }
            ObserverConfig::WriteLog { lo, hi } => {
                let w = WriteLog {
                    lo: *lo,
                    hi: *hi,
                    writes: Vec::new(),
                };
                dev.write_log = Some(dev.sim.observe(Filter::kinds(&[EventKind::MemoryWrite]).in_range(*lo, *hi), Box::new(w)));
            }
        }
    }
    Ok(dev)
}
