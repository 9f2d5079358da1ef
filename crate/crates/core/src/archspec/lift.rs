//! Block lifting with cache lookup and optional optimization.

use std::sync::Arc;

use crate::ir::{render_block, IrBlock, TerminatorKind};
use crate::optimizer;

use super::{LiftCache, LiftError, ProcessorSpec, OPTIMIZER_TAG};

/// Read-only view of code bytes.
pub trait MemoryView {
    /// Copies bytes starting at `addr` into `buf`, returning how many were available.
    fn fetch(&self, addr: u64, buf: &mut [u8]) -> usize;
}

/// A raw image loaded at a base address.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    pub base: u64,
    pub bytes: &'a [u8],
}

impl MemoryView for ImageView<'_> {
    fn fetch(&self, addr: u64, buf: &mut [u8]) -> usize {
        if addr < self.base {
            return 0;
        }
        let off = (addr - self.base) as usize;
        if off >= self.bytes.len() {
            return 0;
        }
        let n = buf.len().min(self.bytes.len() - off);
        buf[..n].copy_from_slice(&self.bytes[off..off + n]);
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiftOptions {
    pub optimize: bool,
    pub max_instructions: usize,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            optimize: true,
            max_instructions: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockLift {
    pub block: Arc<IrBlock>,
    /// Op count before optimization.
    pub raw_ops: usize,
    /// Set when a decode error cut the block short.
    pub diagnostic: Option<String>,
}

/// Lifts the straight-line region at `addr` without optimizing or caching.
pub fn lift_raw(spec: &ProcessorSpec, mem: &dyn MemoryView, addr: u64, max_instructions: usize) -> Result<(IrBlock, Vec<u8>, Option<String>), LiftError> {
    let mut instructions = Vec::new();
    let mut bytes = Vec::new();
    let mut diagnostic = None;
    let mut pc = addr;
    let mut buf = vec![0u8; spec.max_insn_len()];
    while instructions.len() < max_instructions.max(1) {
        let n = mem.fetch(pc, &mut buf);
        let res = if n == 0 {
            Err(LiftError::Unmapped { address: pc })
        } else {
            spec.lift_instruction(&buf[..n], pc)
        };
        let insn = match res {
            Ok(i) => i,
            Err(e) if instructions.is_empty() => return Err(e),
            Err(e) => {
                log::debug!("block 0x{:x} truncated: {}", addr, e);
                diagnostic = Some(e.to_string());
                break;
            }
        };
        bytes.extend_from_slice(&buf[..insn.length as usize]);
        pc = pc.wrapping_add(insn.length as u64);
        let ends = insn.ops.iter().any(|op| op.is_inter_transfer(&spec.spaces));
        instructions.push(insn);
        if ends {
            break;
        }
    }
    let terminator = if diagnostic.is_some() {
        TerminatorKind::Fallthrough
    } else {
        IrBlock::classify(&instructions, &spec.spaces)
    };
    let block = IrBlock {
        start: addr,
        arch: spec.name.clone(),
        instructions,
        terminator,
    };
    Ok((block, bytes, diagnostic))
}

/// Lifts the block at `addr`, consulting and filling `cache` when given.
pub fn lift_block(spec: &ProcessorSpec, mem: &dyn MemoryView, addr: u64, opts: LiftOptions, cache: Option<&LiftCache>) -> Result<BlockLift, LiftError> {
    let (raw, bytes, diagnostic) = lift_raw(spec, mem, addr, opts.max_instructions)?;
    let raw_ops = crate::ir::count_ops(&raw);
    let make = |cache: Option<&LiftCache>| {
        let block = if opts.optimize {
            if let Some(c) = cache {
                c.note_saturation();
            }
            let (b, diag) = optimizer::optimize_block(&raw, spec);
            if let Some(d) = diag {
                log::warn!("optimizer fell back at 0x{:x}: {}", addr, d);
            }
            b
        } else {
            raw.clone()
        };
        (render_block(&block, &spec.spaces), block)
    };
    let block = match cache {
        Some(c) => {
            let tag = if opts.optimize { OPTIMIZER_TAG } else { "raw" };
            let key = LiftCache::key(&spec.content_hash, addr, &bytes, tag);
            c.get_or_fill(key, &spec.spaces, || make(Some(c)))
        }
        None => Arc::new(make(None).1),
    };
    Ok(BlockLift { block, raw_ops, diagnostic })
}
