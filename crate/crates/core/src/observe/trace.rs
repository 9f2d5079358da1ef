//! Records architectural pcs between a start and a stop address.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{Event, Observer, Response};

#[derive(Clone, Debug, Default)]
pub struct TraceDumper {
    pub start: Option<u64>,
    pub stop: Option<u64>,
    active: bool,
    current: Vec<u64>,
    done: Vec<Vec<u64>>,
}

impl TraceDumper {
    /// Without a start trigger recording begins immediately.
    pub fn new(start: Option<u64>, stop: Option<u64>) -> TraceDumper {
        TraceDumper {
            start,
            stop,
            ..TraceDumper::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    fn record(&mut self, pc: u64) {
        if !self.active && self.start.is_none_or(|s| s == pc) {
            self.active = true;
        }
        if !self.active {
            return;
        }
        self.current.push(pc);
        if self.stop == Some(pc) {
            self.finish();
        }
    }

    /// Closes an open trace, keeping it if non-empty.
    pub fn finish(&mut self) {
        self.active = false;
        if !self.current.is_empty() {
            self.done.push(std::mem::take(&mut self.current));
        }
    }

    pub fn traces(&self) -> &[Vec<u64>] {
        &self.done
    }

    pub fn take_traces(&mut self) -> Vec<Vec<u64>> {
        self.finish();
        std::mem::take(&mut self.done)
    }

    /// Writes every completed trace as `trace-NNNN.txt`, numbered from `first`.
    pub fn dump(&mut self, dir: &Path, first: usize) -> io::Result<Vec<PathBuf>> {
        self.take_traces().iter().enumerate().map(|(i, t)| write_trace(dir, first + i, t)).collect()
    }
}

/// Writes one pc per line in hex.
pub fn write_trace(dir: &Path, n: usize, pcs: &[u64]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("trace-{:04}.txt", n));
    let mut text = String::with_capacity(pcs.len() * 8);
    for pc in pcs {
        text.push_str(&format!("0x{:x}\n", pc));
    }
    fs::write(&path, text)?;
    Ok(path)
}

impl Observer for TraceDumper {
    fn on_event(&mut self, event: &Event) -> Response {
        if let Event::ArchitecturalStep { pc, .. } = event {
            self.record(*pc);
        }
        Response::Continue
    }

    fn box_clone(&self) -> Option<Box<dyn Observer>> {
        Some(Box::new(self.clone()))
    }
}
