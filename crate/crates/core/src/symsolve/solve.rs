//! Layered solving: pattern inversion, exhaustive search, external solver.

use std::io::Write;
use std::process::{Command, Stdio};

use crate::ir::{mask, Opcode};

use super::{emit_smtlib, free_vars, parse_model, Assignment, Constraint, SolverResult, SymExpr};

/// Largest total variable width, in bits, searched exhaustively.
pub const EXHAUSTIVE_BITS: u32 = 16;

#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    /// Command reading SMT-LIB on stdin and printing `sat` plus a model.
    pub external: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug)]
enum Want {
    Eq(u64),
    Ne(u64),
}

fn low_bit(v: u64) -> Option<u64> {
    (v != 0).then(|| v & v.wrapping_neg())
}

/// Smallest value of the single variable in `e` making `e` satisfy `want`.
fn invert(e: &SymExpr, want: Want) -> Option<u64> {
    let m = mask(e.size());
    match e {
        SymExpr::Var { .. } => match want {
            Want::Eq(c) => (c & !m == 0).then_some(c),
            Want::Ne(c) => Some(if c & m != 0 { 0 } else { 1 }),
        },
        SymExpr::Const { .. } => None,
        SymExpr::Apply { op, args, .. } => {
            let unary = args.len() == 1;
            if unary {
                let x = &args[0];
                return match (op, want) {
                    (Opcode::IntZExt, Want::Eq(c)) => (c & !mask(x.size()) == 0).then(|| invert(x, Want::Eq(c))).flatten(),
                    (Opcode::IntZExt, Want::Ne(c)) if c & !mask(x.size()) != 0 => invert(x, Want::Ne(!0)),
                    (Opcode::IntZExt | Opcode::Trunc, w) => invert(x, w),
                    (Opcode::BoolNot, Want::Eq(c)) => invert(x, Want::Eq(c ^ 1)),
                    (Opcode::BoolNot, Want::Ne(c)) => invert(x, Want::Ne(c ^ 1)),
                    _ => None,
                };
            }
            let (x, c1) = match (args[0].as_const(), args.get(1).and_then(|a| a.as_const())) {
                (None, Some(c)) => (&args[0], c),
                (Some(c), None) if op.is_commutative() => (&args[1], c),
                _ => return None,
            };
            let xm = mask(x.size());
            match (op, want) {
                (Opcode::IntXor, Want::Eq(c)) => invert(x, Want::Eq((c ^ c1) & xm)),
                (Opcode::IntXor, Want::Ne(c)) => invert(x, Want::Ne((c ^ c1) & xm)),
                (Opcode::IntAdd, Want::Eq(c)) => invert(x, Want::Eq(c.wrapping_sub(c1) & xm)),
                (Opcode::IntAdd, Want::Ne(c)) => invert(x, Want::Ne(c.wrapping_sub(c1) & xm)),
                (Opcode::IntSub, Want::Eq(c)) if args[1].as_const().is_some() => invert(x, Want::Eq(c.wrapping_add(c1) & xm)),
                (Opcode::IntAnd, Want::Eq(c)) => {
                    if c & !c1 != 0 {
                        None
                    } else {
                        invert(x, Want::Eq(c))
                    }
                }
                (Opcode::IntAnd, Want::Ne(c)) => {
                    if c & !c1 != 0 {
                        invert(x, Want::Eq(0))
                    } else if c != 0 {
                        invert(x, Want::Eq(0)).or_else(|| invert(x, Want::Eq(c1 & !c)))
                    } else {
                        invert(x, Want::Eq(low_bit(c1)?))
                    }
                }
                (Opcode::IntEqual, Want::Eq(1)) | (Opcode::IntEqual, Want::Ne(0)) => invert(x, Want::Eq(c1)),
                (Opcode::IntEqual, Want::Eq(0)) | (Opcode::IntEqual, Want::Ne(1)) => invert(x, Want::Ne(c1)),
                (Opcode::IntNotEqual, Want::Eq(1)) | (Opcode::IntNotEqual, Want::Ne(0)) => invert(x, Want::Ne(c1)),
                (Opcode::IntNotEqual, Want::Eq(0)) | (Opcode::IntNotEqual, Want::Ne(1)) => invert(x, Want::Eq(c1)),
                _ => None,
            }
        }
    }
}

fn check(cs: &[Constraint], asg: &Assignment) -> bool {
    cs.iter().all(|c| c.holds(asg).unwrap_or(false))
}

fn by_patterns(cs: &[Constraint], var: u32) -> Option<Assignment> {
    let mut candidates: Vec<u64> = cs.iter().filter_map(|c| invert(&c.expr, Want::Ne(0))).collect();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.into_iter().map(|v| Assignment::from([(var, v)])).find(|a| check(cs, a))
}

fn exhaustive(cs: &[Constraint], vars: &[(u32, u8)]) -> SolverResult {
    let bits: u32 = vars.iter().map(|&(_, s)| s as u32 * 8).sum();
    for n in 0..(1u64 << bits) {
        let mut asg = Assignment::new();
        let mut rest = n;
        for &(id, size) in vars.iter().rev() {
            asg.insert(id, rest & mask(size));
            rest >>= size as u32 * 8;
        }
        if check(cs, &asg) {
            return SolverResult::Sat(asg);
        }
    }
    SolverResult::Unsat
}

fn external(cs: &[Constraint], cmd: &[String]) -> SolverResult {
    let script = emit_smtlib(cs);
    let spawned = Command::new(&cmd[0])
        .args(&cmd[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => return SolverResult::Unknown(format!("external solver: {}", e)),
    };
    if let Some(mut stdin) = child.stdin.take() {
        if stdin.write_all(script.as_bytes()).is_err() {
            return SolverResult::Unknown("external solver closed its input".into());
        }
    }
    let out = match child.wait_with_output() {
        Ok(o) => String::from_utf8_lossy(&o.stdout).into_owned(),
        Err(e) => return SolverResult::Unknown(format!("external solver: {}", e)),
    };
    match out.lines().next().map(str::trim) {
        Some("unsat") => SolverResult::Unsat,
        Some("sat") => match parse_model(&out) {
            Some(asg) if check(cs, &asg) => SolverResult::Sat(asg),
            _ => SolverResult::Unknown("external model failed verification".into()),
        },
        _ => SolverResult::Unknown("external solver gave no answer".into()),
    }
}

/// Finds an assignment satisfying every constraint.
///
/// Every returned model is re-checked by evaluation.
pub fn solve(cs: &[Constraint], opts: &SolveOptions) -> SolverResult {
    let vars: Vec<(u32, u8)> = free_vars(cs).into_iter().collect();
    if vars.is_empty() {
        let asg = Assignment::new();
        return if check(cs, &asg) { SolverResult::Sat(asg) } else { SolverResult::Unsat };
    }
    if vars.len() == 1 {
        if let Some(asg) = by_patterns(cs, vars[0].0) {
            return SolverResult::Sat(asg);
        }
    }
    let bits: u32 = vars.iter().map(|&(_, s)| s as u32 * 8).sum();
    if bits <= EXHAUSTIVE_BITS {
        return exhaustive(cs, &vars);
    }
    if let Some(cmd) = opts.external.as_ref().filter(|c| !c.is_empty()) {
        return external(cs, cmd);
    }
    SolverResult::Unknown(format!("{} variable bits exceed the built-in layers", bits))
}
