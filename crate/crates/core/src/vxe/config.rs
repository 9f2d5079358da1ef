//! Declarative environment description loaded from TOML.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

/// An address given as a number or as a symbol of the device image.
#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum Addr {
    Num(u64),
    Name(String),
}

impl Addr {
    pub fn resolve(&self, symbols: &HashMap<String, u64>) -> Result<u64, String> {
        match self {
            Addr::Num(n) => Ok(*n),
            Addr::Name(s) => {
                if let Some(h) = s.strip_prefix("0x") {
                    return u64::from_str_radix(h, 16).map_err(|e| format!("bad address {:?}: {}", s, e));
                }
                symbols.get(s).copied().ok_or_else(|| format!("unknown symbol {:?}", s))
            }
        }
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Num(n) => write!(f, "0x{:x}", n),
            Addr::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VxeConfig {
    pub name: String,
    #[serde(default)]
    pub limits: Limits,
    #[serde(rename = "device")]
    pub devices: Vec<DeviceConfig>,
    #[serde(rename = "route", default)]
    pub routes: Vec<RouteConfig>,
    pub stimulus: Option<Stimulus>,
    pub trace: Option<TraceLink>,
    pub fuzz: Option<FuzzConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    /// Instructions each device runs between message exchanges.
    pub round_instructions: u64,
    pub max_rounds: u64,
    pub queue_capacity: usize,
}

impl Default for Limits {
    fn default() -> Limits {
        Limits {
            round_instructions: 1000,
            max_rounds: 100_000,
            queue_capacity: 4096,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub base: u64,
    /// `name 0xaddr` lines; defaults to the image path with a `.sym` extension when present.
    pub symbols: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FillConfig {
    #[default]
    Zeros,
    Byte {
        value: u8,
    },
    Random {
        seed: u64,
    },
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    #[default]
    Concrete,
    Micro {
        #[serde(default)]
        fill: FillConfig,
    },
    Forced {
        flips: Vec<Addr>,
    },
    Flood {
        k: u32,
        op_budget: u64,
        #[serde(default)]
        fill: FillConfig,
    },
    Concolic {
        regions: Vec<[u64; 2]>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeripheralConfig {
    Serial {
        name: String,
        base: u64,
        /// Bytes queued for the firmware at start.
        input: Option<String>,
    },
    Fifo {
        name: String,
        base: u64,
        #[serde(default = "default_reset_bit")]
        reset_bit: u32,
        /// CAN replay file queued at start.
        replay: Option<PathBuf>,
    },
    Cmt {
        name: String,
        base: u64,
        irq: Option<u32>,
    },
}

fn default_reset_bit() -> u32 {
    31
}

impl PeripheralConfig {
    pub fn name(&self) -> &str {
        match self {
            PeripheralConfig::Serial { name, .. } | PeripheralConfig::Fifo { name, .. } | PeripheralConfig::Cmt { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObserverConfig {
    Coverage {
        #[serde(default = "yes")]
        split: bool,
    },
    Trace {
        start: Option<Addr>,
        stop: Option<Addr>,
    },
    RedZone {
        lo: u64,
        hi: u64,
    },
    CheckSolver {
        ranges: Vec<[u64; 2]>,
        reentry_window: Option<u64>,
    },
    /// Records firmware writes into `[lo, hi)`.
    WriteLog {
        lo: u64,
        hi: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterruptConfig {
    pub id: u32,
    pub priority: u32,
    pub vector: Addr,
    /// Register names, or `PC`.
    pub save: Vec<String>,
    pub sentinel: Option<u64>,
    pub link: Option<String>,
    pub intrinsic: Option<String>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntrinsicConfig {
    Halt { name: String },
    PageOverride { name: String, shift: u32, window: u32 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub name: String,
    pub spec: PathBuf,
    pub image: ImageConfig,
    pub entry: Option<Addr>,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default = "yes")]
    pub optimize: bool,
    /// `[base, length]` pairs of zero-initialized RAM.
    #[serde(default)]
    pub ram: Vec<[u64; 2]>,
    /// Register ranges without a peripheral model, backed by plain memory.
    #[serde(default)]
    pub mmio: Vec<[u64; 2]>,
    /// Instruction budget for the device.
    pub budget: Option<u64>,
    #[serde(rename = "peripheral", default)]
    pub peripherals: Vec<PeripheralConfig>,
    #[serde(rename = "observer", default)]
    pub observers: Vec<ObserverConfig>,
    #[serde(rename = "interrupt", default)]
    pub interrupts: Vec<InterruptConfig>,
    pub interrupt_window: Option<u64>,
    #[serde(rename = "intrinsic", default)]
    pub intrinsics: Vec<IntrinsicConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub from: String,
    /// `peripheral:<name>`: everything that peripheral transmits.
    pub event: String,
    pub to: String,
    /// `deliver:<name>`: hand the message to that peripheral.
    pub action: String,
}

impl RouteConfig {
    pub fn source_peripheral(&self) -> Option<&str> {
        self.event.strip_prefix("peripheral:")
    }

    pub fn target_peripheral(&self) -> Option<&str> {
        self.action.strip_prefix("deliver:")
    }
}

/// Inputs fed one at a time, each after the previous one has been fully handled.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub device: String,
    pub peripheral: String,
    pub inputs: Vec<String>,
}

/// Dumps the trace of the last input whenever the watched device reaches new coverage.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLink {
    pub watch: String,
    pub dump: String,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzConfig {
    pub target: String,
    /// Serial peripheral the input is fed through.
    pub input: String,
    #[serde(default)]
    pub goals: Vec<Addr>,
    pub corpus: PathBuf,
    pub max_execs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub split: bool,
    /// Address the warm-up run stops at before the snapshot is taken.
    pub snapshot: Option<Addr>,
    #[serde(default = "default_exec_ops")]
    pub exec_ops: u64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "one")]
    pub instances: usize,
    /// Initial corpus entries.
    #[serde(default)]
    pub seeds: Vec<String>,
    /// Stop at the first goal hit.
    #[serde(default = "yes")]
    pub stop_on_goal: bool,
}

fn default_exec_ops() -> u64 {
    200_000
}

fn default_max_len() -> usize {
    256
}

fn one() -> usize {
    1
}

impl VxeConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<VxeConfig, String> {
        let mut cfg: VxeConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn device(&self, name: &str) -> Option<&DeviceConfig> {
        self.devices.iter().find(|d| d.name == name)
    }

    fn check_file(&self, field: &str, p: &Path) -> Result<(), String> {
        let full = self.path(p);
        if full.is_file() {
            Ok(())
        } else {
            Err(format!("{}: file not found: {}", field, full.display()))
        }
    }

    fn peripheral<'a>(&'a self, field: &str, device: &str, name: &str) -> Result<&'a PeripheralConfig, String> {
        let d = self.device(device).ok_or_else(|| format!("{}: no such device {:?}", field, device))?;
        d.peripherals
            .iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| format!("{}: device {:?} has no peripheral {:?}", field, device, name))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.devices.is_empty() {
            return Err("device: at least one device is required".into());
        }
        if self.limits.round_instructions == 0 || self.limits.queue_capacity == 0 {
            return Err("limits: round_instructions and queue_capacity must be positive".into());
        }
        let mut names = HashSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if !names.insert(d.name.as_str()) {
                return Err(format!("device[{}].name: duplicate device {:?}", i, d.name));
            }
            self.check_file(&format!("device[{}].spec", i), &d.spec)?;
            self.check_file(&format!("device[{}].image.path", i), &d.image.path)?;
            if let Some(s) = &d.image.symbols {
                self.check_file(&format!("device[{}].image.symbols", i), s)?;
            }
            let mut pnames = HashSet::new();
            for (j, p) in d.peripherals.iter().enumerate() {
                if !pnames.insert(p.name()) {
                    return Err(format!("device[{}].peripheral[{}].name: duplicate peripheral {:?}", i, j, p.name()));
                }
                if let PeripheralConfig::Fifo { replay: Some(r), .. } = p {
                    self.check_file(&format!("device[{}].peripheral[{}].replay", i, j), r)?;
                }
            }
            for (j, o) in d.observers.iter().enumerate() {
                if let ObserverConfig::RedZone { lo, hi } | ObserverConfig::WriteLog { lo, hi } = o {
                    if lo >= hi {
                        return Err(format!("device[{}].observer[{}]: empty range", i, j));
                    }
                }
            }
            if !d.interrupts.is_empty() && d.interrupt_window.is_none() {
                log::debug!("device {} has interrupts but no context window", d.name);
            }
        }
        for (i, r) in self.routes.iter().enumerate() {
            if self.device(&r.from).is_none() {
                return Err(format!("route.from: no such device {:?} (route {})", r.from, i));
            }
            if self.device(&r.to).is_none() {
                return Err(format!("route.to: no such device {:?} (route {})", r.to, i));
            }
            let src = r
                .source_peripheral()
                .ok_or_else(|| format!("route.event: expected peripheral:<name>, got {:?} (route {})", r.event, i))?;
            let dst = r
                .target_peripheral()
                .ok_or_else(|| format!("route.action: expected deliver:<name>, got {:?} (route {})", r.action, i))?;
            self.peripheral("route.event", &r.from, src)?;
            self.peripheral("route.action", &r.to, dst)?;
        }
        if let Some(s) = &self.stimulus {
            match self.peripheral("stimulus.peripheral", &s.device, &s.peripheral)? {
                PeripheralConfig::Serial { .. } => {}
                _ => return Err("stimulus.peripheral: must be a serial peripheral".into()),
            }
        }
        if let Some(t) = &self.trace {
            let watch = self.device(&t.watch).ok_or_else(|| format!("trace.watch: no such device {:?}", t.watch))?;
            if !watch.observers.iter().any(|o| matches!(o, ObserverConfig::Coverage { .. })) {
                return Err(format!("trace.watch: device {:?} has no coverage observer", t.watch));
            }
            let dump = self.device(&t.dump).ok_or_else(|| format!("trace.dump: no such device {:?}", t.dump))?;
            if !dump.observers.iter().any(|o| matches!(o, ObserverConfig::Trace { .. })) {
                return Err(format!("trace.dump: device {:?} has no trace observer", t.dump));
            }
        }
        if let Some(f) = &self.fuzz {
            let n = self.devices.iter().filter(|d| d.name == f.target).count();
            if n != 1 {
                return Err(format!("fuzz.target: no such device {:?}", f.target));
            }
            match self.peripheral("fuzz.input", &f.target, &f.input)? {
                PeripheralConfig::Serial { .. } => {}
                _ => return Err("fuzz.input: must be a serial peripheral".into()),
            }
            if f.max_execs == 0 || f.instances == 0 || f.max_len == 0 {
                return Err("fuzz: max_execs, instances and max_len must be positive".into());
            }
        }
        Ok(())
    }
}

/// Reads and validates a config file. Relative paths inside resolve against its directory.
pub fn load_config(path: &Path) -> Result<VxeConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    VxeConfig::parse(&text, &dir).map_err(|e| format!("{}: {}", path.display(), e))
}
