//! Algebraic rewrite rules, stored as data so the same definition drives
//! e-graph matching and the exhaustive soundness checker.

use crate::ir::{mask, Opcode};
use crate::semantics;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pat {
    /// Pattern variable; index 0 is `x`, 1 is `y`.
    Var(u8),
    Zero,
    One,
    /// All bits set at the size of the enclosing node.
    Ones,
    Op(Opcode, &'static [Pat]),
}

#[derive(Clone, Copy, Debug)]
pub struct Rule {
    pub name: &'static str,
    pub lhs: Pat,
    pub rhs: Pat,
}

use Opcode::*;
use Pat::*;

const X: Pat = Var(0);

pub const RULES: &[Rule] = &[
    Rule {
        name: "xor-self",
        lhs: Op(IntXor, &[X, X]),
        rhs: Zero,
    },
    Rule {
        name: "xor-zero",
        lhs: Op(IntXor, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "add-zero",
        lhs: Op(IntAdd, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "sub-zero",
        lhs: Op(IntSub, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "sub-self",
        lhs: Op(IntSub, &[X, X]),
        rhs: Zero,
    },
    Rule {
        name: "and-self",
        lhs: Op(IntAnd, &[X, X]),
        rhs: X,
    },
    Rule {
        name: "or-self",
        lhs: Op(IntOr, &[X, X]),
        rhs: X,
    },
    Rule {
        name: "and-zero",
        lhs: Op(IntAnd, &[X, Zero]),
        rhs: Zero,
    },
    Rule {
        name: "and-ones",
        lhs: Op(IntAnd, &[X, Ones]),
        rhs: X,
    },
    Rule {
        name: "or-zero",
        lhs: Op(IntOr, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "mul-zero",
        lhs: Op(IntMul, &[X, Zero]),
        rhs: Zero,
    },
    Rule {
        name: "mul-one",
        lhs: Op(IntMul, &[X, One]),
        rhs: X,
    },
    Rule {
        name: "shl-zero",
        lhs: Op(IntLeft, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "shr-zero",
        lhs: Op(IntRight, &[X, Zero]),
        rhs: X,
    },
    Rule {
        name: "eq-self",
        lhs: Op(IntEqual, &[X, X]),
        rhs: One,
    },
    Rule {
        name: "neq-self",
        lhs: Op(IntNotEqual, &[X, X]),
        rhs: Zero,
    },
    Rule {
        name: "not-not",
        lhs: Op(BoolNot, &[Op(BoolNot, &[X])]),
        rhs: X,
    },
    Rule {
        name: "trunc-zext",
        lhs: Op(Trunc, &[Op(IntZExt, &[X])]),
        rhs: X,
    },
];

/// Opcodes whose operands may be swapped; applied as a separate rule.
pub fn commutes(op: Opcode) -> bool {
    op.is_commutative()
}

impl Pat {
    pub fn uses_var(&self, v: u8) -> bool {
        match self {
            Var(i) => *i == v,
            Op(_, args) => args.iter().any(|a| a.uses_var(v)),
            _ => false,
        }
    }

    fn has_bool_not(&self) -> bool {
        match self {
            Op(BoolNot, _) => true,
            Op(_, args) => args.iter().any(|a| a.has_bool_not()),
            _ => false,
        }
    }

    /// Concrete value of the pattern with variables of `size` bytes.
    ///
    /// Returns the value and its size. Extensions double the size and
    /// truncations halve it, which is the shape the rules use.
    pub fn eval(&self, vars: &[u64], size: u8, ctx: u8) -> (u64, u8) {
        match self {
            Var(i) => (vars[*i as usize] & mask(size), size),
            Zero => (0, ctx),
            One => (1, ctx),
            Ones => (mask(ctx), ctx),
            Op(op, args) => {
                let (a, asz) = args[0].eval(vars, size, size);
                let (b, _) = if args.len() > 1 { args[1].eval(vars, size, asz) } else { (0, asz) };
                let out = match op {
                    IntZExt | IntSExt => (asz * 2).min(8),
                    Trunc => (asz / 2).max(1),
                    BoolNot => 1,
                    o if o.is_comparison() => 1,
                    _ => asz,
                };
                (semantics::eval(*op, &[a, b], asz, out).expect("pure opcode"), out)
            }
        }
    }
}

impl Rule {
    pub fn vars(&self) -> usize {
        if self.lhs.uses_var(1) {
            2
        } else {
            1
        }
    }

    /// Rules over BOOL_NOT only make sense on one-byte booleans.
    pub fn fixed_width(&self) -> Option<u8> {
        self.lhs.has_bool_not().then_some(1)
    }

    /// Compares both sides for the given variable values; `None` if they agree.
    pub fn counterexample(&self, vars: &[u64], size: u8) -> Option<(u64, u64)> {
        let (l, lsz) = self.lhs.eval(vars, size, size);
        let (r, _) = self.rhs.eval(vars, size, lsz);
        (l != r).then_some((l, r))
    }
}
