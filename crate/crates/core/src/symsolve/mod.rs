//! Bitvector expressions over IR opcodes, evaluation, and layered solving.

mod shadow;
mod smtlib;
mod solve;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::ir::{mask, Opcode};
use crate::semantics;

pub use shadow::Shadow;
pub use smtlib::{emit_smtlib, parse_model};
pub use solve::{solve, SolveOptions};
pub use text::{parse_constraints, parse_expr};

/// An expression tree. Sizes are in bytes, as in the IR.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SymExpr {
    Const { value: u64, size: u8 },
    Var { id: u32, size: u8 },
    Apply { op: Opcode, size: u8, args: Vec<Arc<SymExpr>> },
}

pub type Assignment = BTreeMap<u32, u64>;

impl SymExpr {
    pub fn constant(value: u64, size: u8) -> SymExpr {
        SymExpr::Const {
            value: value & mask(size),
            size,
        }
    }

    pub fn var(id: u32, size: u8) -> SymExpr {
        SymExpr::Var { id, size }
    }

    /// Builds an application, folding it when every argument is constant.
    pub fn apply(op: Opcode, size: u8, args: Vec<SymExpr>) -> SymExpr {
        let consts: Option<Vec<u64>> = args.iter().map(|a| a.as_const()).collect();
        if let Some(vals) = consts {
            let in_size = args.first().map(|a| a.size()).unwrap_or(size);
            if let Some(v) = semantics::eval(op, &vals, in_size, size) {
                return SymExpr::constant(v, size);
            }
        }
        if op == Opcode::Copy {
            return args.into_iter().next().expect("copy has an input");
        }
        SymExpr::Apply {
            op,
            size,
            args: args.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn size(&self) -> u8 {
        match self {
            SymExpr::Const { size, .. } | SymExpr::Var { size, .. } | SymExpr::Apply { size, .. } => *size,
        }
    }

    pub fn as_const(&self) -> Option<u64> {
        match self {
            SymExpr::Const { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// Free variables with their sizes.
    pub fn vars(&self) -> BTreeMap<u32, u8> {
        let mut out = BTreeMap::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeMap<u32, u8>) {
        match self {
            SymExpr::Var { id, size } => {
                out.insert(*id, *size);
            }
            SymExpr::Apply { args, .. } => args.iter().for_each(|a| a.collect_vars(out)),
            SymExpr::Const { .. } => {}
        }
    }

    /// Replaces every variable `from` with `to`.
    pub fn rename(&self, from: u32, to: u32) -> SymExpr {
        match self {
            SymExpr::Var { id, size } if *id == from => SymExpr::Var { id: to, size: *size },
            SymExpr::Apply { op, size, args } => SymExpr::Apply {
                op: *op,
                size: *size,
                args: args.iter().map(|a| Arc::new(a.rename(from, to))).collect(),
            },
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalError {
    MissingVariable(u32),
    Unsupported(Opcode),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MissingVariable(id) => write!(f, "missing variable v{}", id),
            EvalError::Unsupported(op) => write!(f, "{} has no value semantics", op),
        }
    }
}

impl std::error::Error for EvalError {}

pub fn eval(expr: &SymExpr, asg: &Assignment) -> Result<u64, EvalError> {
    match expr {
        SymExpr::Const { value, .. } => Ok(*value),
        SymExpr::Var { id, size } => asg.get(id).map(|v| v & mask(*size)).ok_or(EvalError::MissingVariable(*id)),
        SymExpr::Apply { op, size, args } => {
            let vals = args.iter().map(|a| eval(a, asg)).collect::<Result<Vec<_>, _>>()?;
            let in_size = args.first().map(|a| a.size()).unwrap_or(*size);
            semantics::eval(*op, &vals, in_size, *size).ok_or(EvalError::Unsupported(*op))
        }
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymExpr::Const { value, size } => write!(f, "0x{:x}:{}", value, size),
            SymExpr::Var { id, size } => write!(f, "v{}:{}", id, size),
            SymExpr::Apply { op, args, size } => {
                if matches!(op, Opcode::IntZExt | Opcode::IntSExt | Opcode::Trunc) {
                    write!(f, "{}:{}(", op, size)?;
                } else {
                    write!(f, "{}(", op)?;
                }
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", a)?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A one-byte expression asserted to be non-zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub expr: SymExpr,
}

impl Constraint {
    pub fn new(expr: SymExpr) -> Constraint {
        Constraint { expr }
    }

    /// `expr != 0` when `truth`, `expr == 0` otherwise.
    pub fn truth(expr: SymExpr, truth: bool) -> Constraint {
        let zero = SymExpr::constant(0, expr.size());
        let op = if truth { Opcode::IntNotEqual } else { Opcode::IntEqual };
        Constraint {
            expr: SymExpr::apply(op, 1, vec![expr, zero]),
        }
    }

    pub fn negate(&self) -> Constraint {
        Constraint::truth(self.expr.clone(), false)
    }

    pub fn holds(&self, asg: &Assignment) -> Result<bool, EvalError> {
        Ok(eval(&self.expr, asg)? != 0)
    }
}

pub fn free_vars(cs: &[Constraint]) -> BTreeMap<u32, u8> {
    let mut out = BTreeMap::new();
    for c in cs {
        c.expr.collect_vars(&mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverResult {
    Sat(Assignment),
    Unsat,
    Unknown(String),
}

impl SolverResult {
    pub fn model(&self) -> Option<&Assignment> {
        match self {
            SolverResult::Sat(a) => Some(a),
            _ => None,
        }
    }
}

/// Variable ids in use, for callers allocating fresh ones.
pub fn var_ids(cs: &[Constraint]) -> BTreeSet<u32> {
    free_vars(cs).into_keys().collect()
}
