//! Concrete bitvector semantics for every value-producing opcode.
//!
//! The executor, the optimizer's constant folder, the rule soundness checks
//! and the symbolic evaluator all call [`eval`], so they cannot disagree.

use crate::ir::{mask, Opcode};

fn sext(v: u64, size: u8) -> i64 {
    let bits = size as u32 * 8;
    if bits >= 64 {
        v as i64
    } else {
        let shift = 64 - bits;
        ((v << shift) as i64) >> shift
    }
}

/// Evaluates a pure opcode. `in_size` is the size of the first input.
///
/// Returns `None` for opcodes with side effects or control flow.
pub fn eval(op: Opcode, args: &[u64], in_size: u8, out_size: u8) -> Option<u64> {
    let m = mask(in_size);
    let a = args.first().copied().unwrap_or(0) & m;
    let b = args.get(1).copied().unwrap_or(0) & m;
    let bits = in_size as u64 * 8;
    let r = match op {
        Opcode::Copy => a,
        Opcode::IntAdd => a.wrapping_add(b),
        Opcode::IntSub => a.wrapping_sub(b),
        Opcode::IntMul => a.wrapping_mul(b),
        Opcode::IntAnd => a & b,
        Opcode::IntOr => a | b,
        Opcode::IntXor => a ^ b,
        Opcode::IntLeft => {
            if b >= bits {
                0
            } else {
                a << b
            }
        }
        Opcode::IntRight => {
            if b >= bits {
                0
            } else {
                a >> b
            }
        }
        Opcode::IntSRight => {
            let s = sext(a, in_size);
            (s >> b.min(63)) as u64
        }
        Opcode::IntEqual => (a == b) as u64,
        Opcode::IntNotEqual => (a != b) as u64,
        Opcode::IntLess => (a < b) as u64,
        Opcode::IntSLess => (sext(a, in_size) < sext(b, in_size)) as u64,
        Opcode::IntCarry => (a as u128 + b as u128 > m as u128) as u64,
        Opcode::IntZExt => a,
        Opcode::IntSExt => sext(a, in_size) as u64,
        Opcode::Trunc => a,
        // Flips the low bit, so double negation is the identity for every byte value.
        Opcode::BoolNot => a ^ 1,
        _ => return None,
    };
    Some(r & mask(out_size))
}

/// Output size implied by an opcode applied to inputs of `in_size`.
///
/// Extensions and truncation need an explicit size and return `None`.
pub fn natural_out_size(op: Opcode, in_size: u8) -> Option<u8> {
    match op {
        Opcode::IntZExt | Opcode::IntSExt | Opcode::Trunc => None,
        o if o.is_comparison() => Some(1),
        _ => Some(in_size),
    }
}
