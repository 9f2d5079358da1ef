//! SMT-LIB bitvector rendering and model parsing.

use std::fmt::Write;

use regex::Regex;

use crate::ir::Opcode;

use super::{free_vars, Assignment, Constraint, SymExpr};

fn lit(value: u64, size: u8) -> String {
    format!("#x{:0width$x}", value, width = size as usize * 2)
}

/// A term is either a bitvector or, for comparisons, a Bool.
struct Term {
    text: String,
    boolean: bool,
}

fn bv(t: Term) -> String {
    if t.boolean {
        format!("(ite {} #x01 #x00)", t.text)
    } else {
        t.text
    }
}

fn term(e: &SymExpr) -> Term {
    let plain = |text: String| Term { text, boolean: false };
    match e {
        SymExpr::Const { value, size } => plain(lit(*value, *size)),
        SymExpr::Var { id, .. } => plain(format!("v{}", id)),
        SymExpr::Apply { op, size, args } => {
            let a = || bv(term(&args[0]));
            let b = || bv(term(&args[1]));
            let extra = (*size as u32).saturating_sub(args[0].size() as u32) * 8;
            let binary = |name: &str| plain(format!("({} {} {})", name, a(), b()));
            let cmp = |name: &str| Term {
                text: format!("({} {} {})", name, a(), b()),
                boolean: true,
            };
            match op {
                Opcode::IntAdd => binary("bvadd"),
                Opcode::IntSub => binary("bvsub"),
                Opcode::IntMul => binary("bvmul"),
                Opcode::IntAnd => binary("bvand"),
                Opcode::IntOr => binary("bvor"),
                Opcode::IntXor => binary("bvxor"),
                Opcode::IntLeft => binary("bvshl"),
                Opcode::IntRight => binary("bvlshr"),
                Opcode::IntSRight => binary("bvashr"),
                Opcode::IntEqual => cmp("="),
                Opcode::IntNotEqual => Term {
                    text: format!("(not (= {} {}))", a(), b()),
                    boolean: true,
                },
                Opcode::IntLess => cmp("bvult"),
                Opcode::IntSLess => cmp("bvslt"),
                Opcode::IntCarry => Term {
                    text: format!("(bvult (bvadd {} {}) {})", a(), b(), a()),
                    boolean: true,
                },
                Opcode::IntZExt => plain(format!("((_ zero_extend {}) {})", extra, a())),
                Opcode::IntSExt => plain(format!("((_ sign_extend {}) {})", extra, a())),
                Opcode::Trunc => plain(format!("((_ extract {} 0) {})", *size as u32 * 8 - 1, a())),
                Opcode::BoolNot => plain(format!("(bvxor {} #x01)", a())),
                Opcode::Copy => term(&args[0]),
                other => plain(format!("({} {})", other.name(), a())),
            }
        }
    }
}

fn assertion(c: &Constraint) -> String {
    let t = term(&c.expr);
    if t.boolean {
        t.text
    } else {
        format!("(not (= {} {}))", t.text, lit(0, c.expr.size()))
    }
}

/// Renders constraints as an SMT-LIB script ending in `(check-sat)` and `(get-model)`.
pub fn emit_smtlib(cs: &[Constraint]) -> String {
    let mut out = String::from("(set-logic QF_BV)\n");
    for (id, size) in free_vars(cs) {
        writeln!(out, "(declare-fun v{} () (_ BitVec {}))", id, size as u32 * 8).unwrap();
    }
    for c in cs {
        writeln!(out, "(assert {})", assertion(c)).unwrap();
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

/// Reads `(define-fun vN () (_ BitVec w) #x..)` entries from solver output.
pub fn parse_model(text: &str) -> Option<Assignment> {
    let re = Regex::new(r"\(define-fun\s+v(\d+)\s+\(\)\s+\(_\s+BitVec\s+\d+\)\s+(#x[0-9a-fA-F]+|#b[01]+|\(_\s+bv(\d+)\s+\d+\))").ok()?;
    let mut asg = Assignment::new();
    for cap in re.captures_iter(text) {
        let id: u32 = cap[1].parse().ok()?;
        let raw = &cap[2];
        let value = if let Some(h) = raw.strip_prefix("#x") {
            u64::from_str_radix(h, 16).ok()?
        } else if let Some(b) = raw.strip_prefix("#b") {
            u64::from_str_radix(b, 2).ok()?
        } else {
            cap[3].parse().ok()?
        };
        asg.insert(id, value);
    }
    Some(asg)
}
