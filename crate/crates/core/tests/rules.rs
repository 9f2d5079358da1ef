//! Soundness of rewrite rules and of the constant folder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehost::ir::{mask, Opcode};
use rehost::optimizer::rules::{commutes, RULES};
use rehost::semantics::eval;

fn values(size: u8) -> Box<dyn Iterator<Item = u64>> {
    Box::new(0..=mask(size))
}

#[test]
fn every_rule_holds_exhaustively_at_width_8() {
    for rule in RULES {
        assert_eq!(rule.vars(), 1, "{} needs a two-variable sweep", rule.name);
        for x in values(1) {
            if let Some((l, r)) = rule.counterexample(&[x], 1) {
                panic!("{} fails at x=0x{:x}: 0x{:x} vs 0x{:x}", rule.name, x, l, r);
            }
        }
    }
}

#[test]
fn width_parameterized_rules_hold_at_width_16() {
    for rule in RULES.iter().filter(|r| r.fixed_width().is_none()) {
        for x in values(2) {
            assert!(rule.counterexample(&[x], 2).is_none(), "{} fails at x=0x{:x}", rule.name, x);
        }
    }
}

fn y_samples_16() -> Vec<u64> {
    let mut ys: Vec<u64> = (0..=256u64).map(|k| (k * 257) & 0xffff).collect();
    ys.extend([1, 0x7fff, 0x8000, 0xfffe]);
    ys
}

#[test]
fn commutativity_holds() {
    for op in Opcode::ALL.into_iter().filter(|&o| commutes(o)) {
        let out = |s: u8| if op.is_comparison() { 1 } else { s };
        for x in values(1) {
            for y in values(1) {
                assert_eq!(eval(op, &[x, y], 1, out(1)), eval(op, &[y, x], 1, out(1)), "{} at 8 bits", op);
            }
        }
        for x in values(2) {
            for &y in &y_samples_16() {
                assert_eq!(eval(op, &[x, y], 2, out(2)), eval(op, &[y, x], 2, out(2)), "{} at 16 bits", op);
            }
        }
    }
}

/// Reference semantics written independently with wide arithmetic.
fn oracle(op: Opcode, a: u64, b: u64, size: u8, out: u8) -> u64 {
    let bits = size as u32 * 8;
    let m = mask(size) as u128;
    let (a, b) = (a as u128 & m, b as u128 & m);
    let signed = |v: u128| -> i128 { ((v << (128 - bits)) as i128) >> (128 - bits) };
    let r: u128 = match op {
        Opcode::IntAdd => a + b,
        Opcode::IntSub => a.wrapping_sub(b),
        Opcode::IntMul => a * b,
        Opcode::IntAnd => a & b,
        Opcode::IntOr => a | b,
        Opcode::IntXor => a ^ b,
        Opcode::IntLeft => {
            if b >= bits as u128 {
                0
            } else {
                a << b
            }
        }
        Opcode::IntRight => {
            if b >= bits as u128 {
                0
            } else {
                a >> b
            }
        }
        Opcode::IntSRight => (signed(a) >> b.min(bits as u128 - 1)) as u128,
        Opcode::IntEqual => (a == b) as u128,
        Opcode::IntNotEqual => (a != b) as u128,
        Opcode::IntLess => (a < b) as u128,
        Opcode::IntSLess => (signed(a) < signed(b)) as u128,
        Opcode::IntCarry => (a + b > m) as u128,
        Opcode::IntZExt => a,
        Opcode::IntSExt => signed(a) as u128,
        Opcode::Trunc => a,
        Opcode::BoolNot => a ^ 1,
        _ => unreachable!(),
    };
    (r & mask(out) as u128) as u64
}

const FOLDABLE: [Opcode; 18] = [
    Opcode::IntAdd,
    Opcode::IntSub,
    Opcode::IntMul,
    Opcode::IntAnd,
    Opcode::IntOr,
    Opcode::IntXor,
    Opcode::IntLeft,
    Opcode::IntRight,
    Opcode::IntSRight,
    Opcode::IntEqual,
    Opcode::IntNotEqual,
    Opcode::IntLess,
    Opcode::IntSLess,
    Opcode::IntCarry,
    Opcode::IntZExt,
    Opcode::IntSExt,
    Opcode::Trunc,
    Opcode::BoolNot,
];

fn out_size(op: Opcode, size: u8) -> u8 {
    match op {
        Opcode::IntZExt | Opcode::IntSExt => (size * 2).min(8),
        Opcode::Trunc => (size / 2).max(1),
        o if o.is_comparison() || o == Opcode::BoolNot => 1,
        _ => size,
    }
}

#[test]
fn constant_folding_matches_reference_exhaustively_at_width_8() {
    for op in FOLDABLE {
        let out = out_size(op, 1);
        for a in values(1) {
            for b in values(1) {
                assert_eq!(eval(op, &[a, b], 1, out), Some(oracle(op, a, b, 1, out)), "{} 0x{:x} 0x{:x}", op, a, b);
            }
        }
    }
}

#[test]
fn constant_folding_matches_reference_on_wide_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for size in [2u8, 4, 8] {
        for op in FOLDABLE {
            let out = out_size(op, size);
            for _ in 0..20_000 {
                let pick = |r: &mut ChaCha8Rng| match r.gen_range(0..4) {
                    0 => r.gen_range(0..70),
                    1 => mask(size) - r.gen_range(0..4),
                    _ => r.gen::<u64>() & mask(size),
                };
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                assert_eq!(eval(op, &[a, b], size, out), Some(oracle(op, a, b, size, out)), "{} 0x{:x} 0x{:x}", op, a, b);
            }
        }
    }
}
