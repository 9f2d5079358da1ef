//! Named handlers for opaque instruction effects.

use std::sync::Arc;

use crate::archspec::ProcessorSpec;
use crate::ir::VarNode;

use super::{Machine, RegisterHook, Translation};

pub struct IntrinsicCtx<'a> {
    pub machine: &'a mut Machine,
    pub pc: u64,
    pub spec: &'a ProcessorSpec,
}

/// Receives the concrete argument values and returns the output value, if any.
pub type Intrinsic = Arc<dyn Fn(&mut IntrinsicCtx, &[u64]) -> Result<Option<u64>, String> + Send + Sync>;

pub fn halt() -> Intrinsic {
    Arc::new(|ctx, _| {
        ctx.machine.state.halted = true;
        Ok(None)
    })
}

/// Page override: the next `window` memory-touching instructions address
/// `(page << shift) | (ea & low_mask)` instead of `ea`.
pub fn page_override(shift: u32, window: u32) -> Intrinsic {
    Arc::new(move |ctx, args| {
        let page = *args.first().ok_or("missing page argument")?;
        let low = (1u64 << shift) - 1;
        ctx.machine.translation = Some(Translation {
            remaining: window,
            map: Arc::new(move |ea| (page << shift) | (ea & low)),
        });
        Ok(None)
    })
}

/// Swaps the register range `gprs` between banks keyed by context number
/// whenever the context register changes.
pub fn bank_switch(gprs: VarNode) -> RegisterHook {
    Arc::new(move |m, old, new| {
        if old == new {
            return;
        }
        let range = gprs.offset as usize..gprs.end() as usize;
        let saved = m.state.regs[range.clone()].to_vec();
        m.banks.insert(old, saved);
        let incoming = m.banks.remove(&new).unwrap_or_else(|| vec![0; range.len()]);
        m.state.regs[range].copy_from_slice(&incoming);
    })
}
