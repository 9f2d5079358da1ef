mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehost::exec::{Mode, RunLimits};
use rehost::ir::Opcode;
use rehost::symsolve::{emit_smtlib, eval, parse_model, solve, Assignment, Constraint, EvalError, SolveOptions, SolverResult, SymExpr};

fn v(id: u32, size: u8) -> SymExpr {
    SymExpr::var(id, size)
}

fn k(value: u64, size: u8) -> SymExpr {
    SymExpr::constant(value, size)
}

fn and4_is_zero(x: SymExpr) -> SymExpr {
    let size = x.size();
    SymExpr::apply(Opcode::IntEqual, 1, vec![SymExpr::apply(Opcode::IntAnd, size, vec![x, k(4, size)]), k(0, size)])
}

#[test]
fn eval_examples() {
    let e = and4_is_zero(v(0, 4));
    assert_eq!(eval(&e, &Assignment::from([(0, 4)])), Ok(0));
    assert_eq!(eval(&e, &Assignment::from([(0, 3)])), Ok(1));
    assert_eq!(eval(&e, &Assignment::new()), Err(EvalError::MissingVariable(0)));
}

#[test]
fn pattern_layer_solves_wide_masks() {
    let c = Constraint::truth(and4_is_zero(v(0, 4)), false);
    let SolverResult::Sat(m) = solve(std::slice::from_ref(&c), &SolveOptions::default()) else {
        panic!()
    };
    assert_eq!(m[&0], 4);
    assert!(c.holds(&m).unwrap());
    let eq = Constraint::new(SymExpr::apply(
        Opcode::IntEqual,
        1,
        vec![SymExpr::apply(Opcode::IntXor, 4, vec![v(1, 4), k(0xff, 4)]), k(0xcaffe012, 4)],
    ));
    assert_eq!(solve(&[eq], &SolveOptions::default()), SolverResult::Sat(Assignment::from([(1, 0xcaffe0ed)])));
}

#[test]
fn exhaustive_layer_returns_minimal_value() {
    let x = v(0, 2);
    let sq = SymExpr::apply(Opcode::IntMul, 2, vec![x.clone(), x]);
    let c = Constraint::new(SymExpr::apply(Opcode::IntEqual, 1, vec![sq, k(0x0900, 2)]));
    assert_eq!(solve(&[c], &SolveOptions::default()), SolverResult::Sat(Assignment::from([(0, 0x30)])));
    let never = Constraint::new(SymExpr::apply(Opcode::IntLess, 1, vec![v(0, 1), k(0, 1)]));
    assert_eq!(solve(&[never], &SolveOptions::default()), SolverResult::Unsat);
}

#[test]
fn wide_unpatterned_constraints_are_unknown_without_external_solver() {
    let c = Constraint::new(SymExpr::apply(
        Opcode::IntEqual,
        1,
        vec![SymExpr::apply(Opcode::IntMul, 4, vec![v(0, 4), v(1, 4)]), k(77, 4)],
    ));
    assert!(matches!(solve(std::slice::from_ref(&c), &SolveOptions::default()), SolverResult::Unknown(_)));
    let missing = SolveOptions {
        external: Some(vec!["/nonexistent/solver".into()]),
    };
    assert!(matches!(solve(&[c], &missing), SolverResult::Unknown(_)));
}

#[test]
fn external_models_are_verified() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.sh");
    let bad = dir.path().join("bad.sh");
    let model = |v0: u32| {
        format!(
            "#!/bin/sh\ncat > /dev/null\necho sat\necho '(model (define-fun v0 () (_ BitVec 32) #x{:08x}) (define-fun v1 () (_ BitVec 32) #x00000001))'\n",
            v0
        )
    };
    std::fs::write(&good, model(77)).unwrap();
    std::fs::write(&bad, model(78)).unwrap();
    for p in [&good, &bad] {
        std::process::Command::new("chmod").arg("+x").arg(p).status().unwrap();
    }
    let c = Constraint::new(SymExpr::apply(
        Opcode::IntEqual,
        1,
        vec![SymExpr::apply(Opcode::IntMul, 4, vec![v(0, 4), v(1, 4)]), k(77, 4)],
    ));
    let run = |p: &std::path::Path| {
        solve(
            std::slice::from_ref(&c),
            &SolveOptions {
                external: Some(vec![p.display().to_string()]),
            },
        )
    };
    assert_eq!(run(&good), SolverResult::Sat(Assignment::from([(0, 77), (1, 1)])));
    assert!(matches!(run(&bad), SolverResult::Unknown(_)));
}

#[test]
fn smtlib_round_trip() {
    let c = Constraint::truth(and4_is_zero(v(3, 4)), false);
    let text = emit_smtlib(&[c]);
    assert!(text.contains("(declare-fun v3 () (_ BitVec 32))"));
    assert!(text.ends_with("(check-sat)\n(get-model)\n"));
    let m = parse_model("sat\n(model\n  (define-fun v3 () (_ BitVec 32)\n    #x00000004)\n  (define-fun v4 () (_ BitVec 8) (_ bv9 8)))").unwrap();
    assert_eq!(m, Assignment::from([(3, 4), (4, 9)]));
}

/// Random straight-line programs over symbolic inputs: every register's
/// symbolic value must evaluate to the value the interpreter computed.
#[test]
fn shadow_expressions_agree_with_execution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ops = ["ADD", "SUB", "XOR", "AND", "OR", "SHL", "SHR", "CMP", "MOV"];
    let regs: Vec<String> = (1..=8).map(|i| format!("R{}", i)).chain(["ZF", "CF", "R1L", "R2W"].map(String::from)).collect();
    let mut checked = 0;
    for _ in 0..1000 {
        let mut src = String::from("MOVI r9, 0x1000\nLD r1, [r9, 0]\nLD r2, [r9, 4]\nLD r3, [r9, 8]\nLD r4, [r9, 12]\n");
        for _ in 0..rng.gen_range(1..24) {
            let (d, s) = (rng.gen_range(1..9), rng.gen_range(1..9));
            if rng.gen_bool(0.15) {
                src += &format!("MOVI r{}, 0x{:x}\n", d, rng.gen::<u16>());
            } else {
                src += &format!("{} r{}, r{}\n", ops[rng.gen_range(0..ops.len())], d, s);
            }
        }
        src += "HALT\n";
        let (mut sim, _) = source("toy32", &src);
        sim.map(0x1000, 0x10);
        let input: Vec<u8> = (0..16).map(|_| rng.gen()).collect();
        sim.state_mut().write_bytes(0x1000, &input);
        sim.set_mode(Mode::Concolic {
            regions: vec![(0x1000, 0x1010)],
        });
        sim.run(&RunLimits::default()).unwrap();
        let c = sim.concolic().unwrap();
        let asg: Assignment = c.inputs.iter().map(|&(id, addr)| (id, input[(addr - 0x1000) as usize] as u64)).collect();
        for r in &regs {
            let vn = sim.spec.register(r).unwrap();
            let concrete = sim.reg(r).unwrap();
            if let Some(e) = c.shadow.read_var(false, &vn, concrete) {
                assert_eq!(eval(&e, &asg), Ok(concrete), "{} in\n{}", r, src);
                checked += 1;
            }
        }
    }
    assert!(checked > 4000, "{} symbolic values checked", checked);
}

#[test]
fn sat_results_always_validate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bins = [Opcode::IntAdd, Opcode::IntSub, Opcode::IntXor, Opcode::IntAnd, Opcode::IntOr, Opcode::IntMul];
    let rels = [Opcode::IntEqual, Opcode::IntNotEqual, Opcode::IntLess, Opcode::IntSLess];
    let mut sat = 0;
    for _ in 0..500 {
        let size = [1u8, 2][rng.gen_range(0..2)];
        let mut e = v(0, size);
        for _ in 0..rng.gen_range(1..4) {
            e = SymExpr::apply(bins[rng.gen_range(0..bins.len())], size, vec![e, k(rng.gen::<u64>() & 0xff, size)]);
        }
        let rel = SymExpr::apply(
            rels[rng.gen_range(0..rels.len())],
            1,
            vec![e, k(rng.gen::<u64>() & 0xffff & ((1 << (8 * size)) - 1), size)],
        );
        let c = Constraint::truth(rel, rng.gen());
        match solve(std::slice::from_ref(&c), &SolveOptions::default()) {
            SolverResult::Sat(m) => {
                assert!(c.holds(&m).unwrap());
                sat += 1;
            }
            SolverResult::Unsat => {
                let none = (0..1u64 << (8 * size)).all(|x| !c.holds(&Assignment::from([(0, x)])).unwrap());
                assert!(none);
            }
            SolverResult::Unknown(w) => panic!("{}", w),
        }
    }
    assert!(sat > 100);
}

#[test]
fn text_form_round_trips() {
    use rehost::symsolve::{parse_constraints, parse_expr};
    let e = SymExpr::apply(Opcode::IntEqual, 1, vec![SymExpr::apply(Opcode::IntZExt, 4, vec![v(2, 1)]), k(0x41, 4)]);
    let text = e.to_string();
    assert_eq!(parse_expr(&text), Ok(e));
    let cs = parse_constraints("; poll exit\nINT_NOTEQUAL(INT_AND(v0:4, 0x4:4), 0x0:4)\n\n").unwrap();
    assert_eq!(cs.len(), 1);
    assert_eq!(solve(&cs, &SolveOptions::default()).model().map(|m| m[&0]), Some(4));
    assert!(parse_expr("INT_ZEXT(v0:1)").is_err());
    assert!(parse_expr("FOO(v0:1)").is_err());
    assert!(parse_constraints("v0:4\nINT_ADD(v0:4").unwrap_err().starts_with("line 2"));
}
