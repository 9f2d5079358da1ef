use rehost::archspec::{lift_raw, ImageView, ProcessorSpec};
use rehost::ir::{count_ops, parse_ir, render_block, IrBlock};
use rehost::optimizer::{optimize_block, optimize_with, OptConfig};

mod common;
use common::mini;

fn toy32() -> ProcessorSpec {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs/toy32.spec")).unwrap();
    ProcessorSpec::parse(&text).unwrap()
}

fn raw(spec: &ProcessorSpec, code: &[u8]) -> IrBlock {
    lift_raw(spec, &ImageView { base: 0x1000, bytes: code }, 0x1000, 64).unwrap().0
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{}", env!("CARGO_MANIFEST_DIR"), name)).unwrap()
}

// ST [r13, -12], r1 ; XOR r1, r1
const XOR_CLEAR: [u8; 8] = [0x0b, 0xd1, 0xff, 0xf4, 0x05, 0x11, 0x00, 0x00];

#[test]
fn xor_clear_matches_golden() {
    let s = toy32();
    let b = raw(&s, &XOR_CLEAR);
    let (opt, diag) = optimize_block(&b, &s);
    assert_eq!(diag, None);
    let text = render_block(&opt, &s.spaces);
    assert_eq!(text, golden("xorclear_optimized.ir"));
    assert_eq!(count_ops(&opt), 5);
    assert!(count_ops(&b) > count_ops(&opt));
}

const CORRUPTING: &str = "block 0x0 toy32 v1\ninsn 0x0 4 \"T\"\n  r[0x0:1] = COPY #0x5:1\n  r[0x4:4] = COPY r[0x0:4]\n  r[0x0:1] = COPY #0x7:1\n";

/// Removes a write when the exact same varnode is rewritten before being read.
fn naive_dce(block: &IrBlock) -> IrBlock {
    let mut out = block.clone();
    for insn in &mut out.instructions {
        let ops = insn.ops.clone();
        let mut keep = vec![true; ops.len()];
        for (i, op) in ops.iter().enumerate() {
            let Some(o) = op.output else { continue };
            for later in &ops[i + 1..] {
                if later.inputs.contains(&o) {
                    break;
                }
                if later.output == Some(o) {
                    keep[i] = false;
                    break;
                }
            }
        }
        let mut it = keep.into_iter();
        insn.ops.retain(|_| it.next().unwrap());
    }
    out
}

#[test]
fn byte_level_liveness_keeps_partial_write_read_through_overlap() {
    let s = toy32();
    let b = parse_ir(CORRUPTING, &s.spaces).unwrap();
    let init = mini::State::new((0..0x100).map(|i| i as u8 ^ 0x5a).collect());
    let expect = mini::run(&s, &b, init.clone());

    let naive = naive_dce(&b);
    assert_eq!(count_ops(&naive), 2);
    assert_ne!(mini::run(&s, &naive, init.clone()), expect, "fixture must expose exact-varnode DCE");

    let (opt, diag) = optimize_block(&b, &s);
    assert_eq!(diag, None);
    assert_eq!(count_ops(&opt), 3);
    assert_eq!(mini::run(&s, &opt, init), expect);
}

#[test]
fn dead_flag_write_is_removed() {
    let s = toy32();
    // ADD r1, r2 ; ADD r1, r3: first instruction's flags are overwritten.
    let b = raw(&s, &[3, 0x12, 0, 0, 3, 0x13, 0, 0]);
    let (opt, _) = optimize_block(&b, &s);
    let first = &opt.instructions[0].ops;
    let flag_writes = first.iter().filter(|o| o.output.is_some_and(|v| (0x44..0x48).contains(&v.offset))).count();
    assert_eq!(flag_writes, 0, "{}", render_block(&opt, &s.spaces));
}

#[test]
fn additive_identity_becomes_copy() {
    let s = toy32();
    let text = "block 0x0 toy32 v1\ninsn 0x0 4 \"T\"\n  r[0x0:4] = INT_ADD r[0x4:4], #0x0:4\n";
    let (opt, _) = optimize_block(&parse_ir(text, &s.spaces).unwrap(), &s);
    assert_eq!(
        render_block(&opt, &s.spaces),
        "block 0x0 toy32 v1\ninsn 0x0 4 \"T\"\n  r[0x0:4] = COPY r[0x4:4]\n"
    );
}

#[test]
fn block_of_stores_is_unchanged() {
    let s = toy32();
    let text = "block 0x0 toy32 v1\ninsn 0x0 4 \"T\"\n  STORE ram, r[0x4:4], r[0x8:4]\n  STORE ram, r[0x8:4], r[0x4:4]\n";
    let b = parse_ir(text, &s.spaces).unwrap();
    assert_eq!(optimize_block(&b, &s).0, b);
}

#[test]
fn nop_becomes_constant_pc_write() {
    let s = toy32();
    let (opt, _) = optimize_block(&raw(&s, &[0, 0, 0, 0, 0x12, 0, 0, 0]), &s);
    let text = render_block(&opt, &s.spaces);
    assert!(text.contains("  r[0x40:4] = COPY #0x1004:4\n"), "{}", text);
}

#[test]
fn ssa_partial_write_creates_class_version() {
    use rehost::optimizer::{to_ssa, SsaExpr};
    let s = toy32();
    let stmts = to_ssa(&parse_ir(CORRUPTING, &s.spaces).unwrap(), &s).unwrap();
    assert_eq!(stmts.len(), 3);
    let r0 = s.register("R0").unwrap();
    let t0 = stmts[0].target.unwrap();
    assert_eq!((t0.rep, t0.version), (r0, 1));
    match &stmts[1].expr {
        SsaExpr::Var(v) => assert_eq!((v.rep, v.version), (r0, 1)),
        other => panic!("unexpected {}", other),
    }
    assert_eq!(stmts[2].target.unwrap().version, 2);
}

#[test]
fn ssa_straight_line_has_single_versions() {
    use rehost::optimizer::{to_ssa, SsaExpr};
    let s = toy32();
    // MOVI r1 ; MOV r2, r3 ; ST [r4], r5
    let b = raw(&s, &[1, 0x10, 0, 9, 2, 0x23, 0, 0, 0x0b, 0x45, 0, 0]);
    let stmts = to_ssa(&b, &s).unwrap();
    let mut seen = std::collections::HashMap::new();
    for st in &stmts {
        if let Some(t) = st.target.filter(|t| t.scope.is_none()) {
            *seen.entry(t.rep).or_insert(0) += 1;
        }
        fn vars(e: &SsaExpr, out: &mut Vec<(u64, u32, bool)>) {
            match e {
                SsaExpr::Var(v) => out.push((v.rep.offset, v.version, v.scope.is_some())),
                SsaExpr::Op { args, .. } => args.iter().for_each(|a| vars(a, out)),
                _ => {}
            }
        }
        let mut vs = Vec::new();
        vars(&st.expr, &mut vs);
        for (_, ver, temp) in vs {
            assert!(temp || ver == 0, "{}", st);
        }
    }
    assert!(seen.values().all(|&n| n <= 1), "{:?}", seen);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn program() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec((0u8..=0x13, any::<u8>(), any::<u16>()), 1..24).prop_map(|insns| {
            insns
                .into_iter()
                .flat_map(|(op, rr, imm)| {
                    // Keep REPMOV counts small by steering its operands away from r14.
                    let rr = if op == 0x13 { rr & 0x77 } else { rr };
                    [op, rr, (imm >> 8) as u8, imm as u8]
                })
                .collect()
        })
    }

    fn state() -> impl Strategy<Value = mini::State> {
        prop::collection::vec(any::<u8>(), 0x100).prop_map(|mut regs| {
            regs[0x38] &= 7;
            regs[0x39] = 0;
            regs[0x3a] = 0;
            regs[0x3b] = 0;
            mini::State::new(regs)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn optimized_blocks_are_equivalent(code in program(), init in state()) {
            let s = toy32();
            let b = raw(&s, &code);
            let (opt, diag) = optimize_block(&b, &s);
            prop_assert_eq!(diag, None);
            prop_assert!(count_ops(&opt) <= count_ops(&b));
            prop_assert_eq!(mini::run(&s, &opt, init.clone()), mini::run(&s, &b, init));
        }

        #[test]
        fn optimization_is_idempotent(code in program()) {
            let s = toy32();
            let (once, _) = optimize_block(&raw(&s, &code), &s);
            let (twice, _) = optimize_block(&once, &s);
            prop_assert_eq!(render_block(&twice, &s.spaces), render_block(&once, &s.spaces));
        }

        #[test]
        fn identity_translation_is_equivalent(code in program(), init in state()) {
            let s = toy32();
            let b = raw(&s, &code);
            let (same, diag) = optimize_with(&b, &s, OptConfig::identity());
            prop_assert_eq!(diag, None);
            prop_assert_eq!(mini::run(&s, &same, init.clone()), mini::run(&s, &b, init));
        }
    }
}
