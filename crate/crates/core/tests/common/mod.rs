#![allow(dead_code)]

pub mod mini;

use std::path::PathBuf;
use std::sync::Arc;

use rehost::archspec::{LiftCache, ProcessorSpec};
use rehost::asm::{assemble, Assembly};
use rehost::exec::{Mode, Simulator};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn spec(name: &str) -> Arc<ProcessorSpec> {
    let text = std::fs::read_to_string(root().join(format!("specs/{}.spec", name))).unwrap();
    Arc::new(ProcessorSpec::parse(&text).unwrap())
}

pub fn firmware(isa: &str, name: &str) -> Assembly {
    let src = std::fs::read_to_string(root().join(format!("fw/{}.s", name))).unwrap();
    assemble(&spec(isa), &src, 0).unwrap_or_else(|e| panic!("{}: {}", name, e))
}

/// A simulator with firmware `name` loaded at 0 and 64 KiB of RAM at 0x8000.
pub fn boot(name: &str, mode: Mode) -> (Simulator, Assembly) {
    let a = firmware("toy32", name);
    let mut sim = Simulator::new(spec("toy32"), Arc::new(LiftCache::in_memory()), mode);
    sim.load_image(0, &a.bytes);
    sim.map(0x8000, 0x8000);
    (sim, a)
}

pub fn source(isa: &str, src: &str) -> (Simulator, Assembly) {
    let s = spec(isa);
    let a = assemble(&s, src, 0).unwrap();
    let mut sim = Simulator::new(s, Arc::new(LiftCache::in_memory()), Mode::Concrete);
    sim.load_image(0, &a.bytes);
    (sim, a)
}

pub fn config_dir() -> PathBuf {
    root().join("configs")
}

pub fn load(name: &str) -> rehost::vxe::VxeConfig {
    rehost::vxe::load_config(&config_dir().join(format!("{}.toml", name))).unwrap()
}
