//! Register-transfer IR: varnodes, operations, lifted instructions and blocks.
//!
//! Every storage cell the IR touches is a [`VarNode`], a `(space, offset,
//! size)` triple. Registers live in a flat register space and may overlap
//! (`R0L` is the low byte of `R0`), so analyses must reason about byte
//! intervals rather than names.

mod text;
mod validate;

use std::fmt;

pub use text::{parse_ir, render_block, render_op, render_varnode, ParseError, SPACE_ID_SIZE};
pub use validate::{validate_block, Diagnostic};

pub type SpaceId = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpaceKind {
    Ram,
    Register,
    Temporary,
    Constant,
}

impl SpaceKind {
    /// Letter used for this kind of space in canonical IR text.
    pub fn letter(self) -> char {
        match self {
            SpaceKind::Ram => 'm',
            SpaceKind::Register => 'r',
            SpaceKind::Temporary => 'u',
            SpaceKind::Constant => '#',
        }
    }

    pub fn from_letter(c: char) -> Option<SpaceKind> {
        match c {
            'm' => Some(SpaceKind::Ram),
            'r' => Some(SpaceKind::Register),
            'u' => Some(SpaceKind::Temporary),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<SpaceKind> {
        match s {
            "ram" => Some(SpaceKind::Ram),
            "register" => Some(SpaceKind::Register),
            "temporary" => Some(SpaceKind::Temporary),
            "constant" => Some(SpaceKind::Constant),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddressSpace {
    pub id: SpaceId,
    pub name: String,
    pub kind: SpaceKind,
    pub word_size: u32,
    /// Size of the space in bytes. Zero for the unbounded constant space.
    pub extent: u64,
}

/// The set of address spaces declared by a processor specification.
///
/// There is at most one space of each kind, which lets canonical text
/// identify spaces by kind letter alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpaceTable {
    spaces: Vec<AddressSpace>,
}

impl SpaceTable {
    pub fn new(spaces: Vec<AddressSpace>) -> Result<SpaceTable, String> {
        for (i, s) in spaces.iter().enumerate() {
            if s.id as usize != i {
                return Err(format!("space `{}` has id {} but position {}", s.name, s.id, i));
            }
            if spaces[..i].iter().any(|o| o.kind == s.kind) {
                return Err(format!("more than one {:?} space", s.kind));
            }
            if spaces[..i].iter().any(|o| o.name == s.name) {
                return Err(format!("duplicate space name `{}`", s.name));
            }
        }
        for kind in [SpaceKind::Register, SpaceKind::Temporary, SpaceKind::Constant] {
            if !spaces.iter().any(|s| s.kind == kind) {
                return Err(format!("missing {:?} space", kind));
            }
        }
        Ok(SpaceTable { spaces })
    }

    pub fn get(&self, id: SpaceId) -> Option<&AddressSpace> {
        self.spaces.get(id as usize)
    }

    pub fn by_kind(&self, kind: SpaceKind) -> Option<&AddressSpace> {
        self.spaces.iter().find(|s| s.kind == kind)
    }

    pub fn by_name(&self, name: &str) -> Option<&AddressSpace> {
        self.spaces.iter().find(|s| s.name == name)
    }

    pub fn kind(&self, id: SpaceId) -> Option<SpaceKind> {
        self.get(id).map(|s| s.kind)
    }

    pub fn constant(&self) -> SpaceId {
        self.by_kind(SpaceKind::Constant).expect("validated").id
    }

    pub fn register(&self) -> SpaceId {
        self.by_kind(SpaceKind::Register).expect("validated").id
    }

    pub fn temporary(&self) -> SpaceId {
        self.by_kind(SpaceKind::Temporary).expect("validated").id
    }

    pub fn ram(&self) -> Option<SpaceId> {
        self.by_kind(SpaceKind::Ram).map(|s| s.id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AddressSpace> {
        self.spaces.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarNode {
    pub space: SpaceId,
    pub offset: u64,
    pub size: u8,
}

impl VarNode {
    pub const fn new(space: SpaceId, offset: u64, size: u8) -> VarNode {
        VarNode { space, offset, size }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.size as u64
    }

    pub fn overlaps(&self, other: &VarNode) -> bool {
        self.space == other.space && self.offset < other.end() && other.offset < self.end()
    }

    pub fn contains(&self, other: &VarNode) -> bool {
        self.space == other.space && self.offset <= other.offset && other.end() <= self.end()
    }
}

pub fn valid_size(size: u8) -> bool {
    matches!(size, 1 | 2 | 4 | 8)
}

pub fn mask(size: u8) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (size as u32 * 8)) - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Copy,
    Load,
    Store,
    Branch,
    CBranch,
    IBranch,
    Call,
    ICall,
    Return,
    IntAdd,
    IntSub,
    IntMul,
    IntAnd,
    IntOr,
    IntXor,
    IntLeft,
    IntRight,
    IntSRight,
    IntEqual,
    IntNotEqual,
    IntLess,
    IntSLess,
    IntCarry,
    IntZExt,
    IntSExt,
    Trunc,
    BoolNot,
    Intrinsic,
    Halt,
}

/// Operand shape of an opcode, used by the parser and validator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    /// Exactly this many inputs.
    Fixed(usize),
    /// Any number of inputs (intrinsics).
    Variadic,
}

impl Opcode {
    pub const ALL: [Opcode; 29] = [
        Opcode::Copy,
        Opcode::Load,
        Opcode::Store,
        Opcode::Branch,
        Opcode::CBranch,
        Opcode::IBranch,
        Opcode::Call,
        Opcode::ICall,
        Opcode::Return,
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
        Opcode::Intrinsic,
        Opcode::Halt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Copy => "COPY",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Branch => "BRANCH",
            Opcode::CBranch => "CBRANCH",
            Opcode::IBranch => "IBRANCH",
            Opcode::Call => "CALL",
            Opcode::ICall => "ICALL",
            Opcode::Return => "RETURN",
            Opcode::IntAdd => "INT_ADD",
            Opcode::IntSub => "INT_SUB",
            Opcode::IntMul => "INT_MUL",
            Opcode::IntAnd => "INT_AND",
            Opcode::IntOr => "INT_OR",
            Opcode::IntXor => "INT_XOR",
            Opcode::IntLeft => "INT_LEFT",
            Opcode::IntRight => "INT_RIGHT",
            Opcode::IntSRight => "INT_SRIGHT",
            Opcode::IntEqual => "INT_EQUAL",
            Opcode::IntNotEqual => "INT_NOTEQUAL",
            Opcode::IntLess => "INT_LESS",
            Opcode::IntSLess => "INT_SLESS",
            Opcode::IntCarry => "INT_CARRY",
            Opcode::IntZExt => "INT_ZEXT",
            Opcode::IntSExt => "INT_SEXT",
            Opcode::Trunc => "TRUNC",
            Opcode::BoolNot => "BOOL_NOT",
            Opcode::Intrinsic => "INTRINSIC",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|o| o.name() == s)
    }

    pub fn arity(self) -> Arity {
        use Opcode::*;
        match self {
            Copy | IntZExt | IntSExt | Trunc | BoolNot => Arity::Fixed(1),
            Load => Arity::Fixed(2),
            Store => Arity::Fixed(3),
            Branch | IBranch | Call | ICall | Return => Arity::Fixed(1),
            CBranch => Arity::Fixed(2),
            Halt => Arity::Fixed(0),
            Intrinsic => Arity::Variadic,
            _ => Arity::Fixed(2),
        }
    }

    /// Whether the opcode produces an output varnode.
    pub fn has_output(self) -> bool {
        use Opcode::*;
        !matches!(self, Store | Branch | CBranch | IBranch | Call | ICall | Return | Halt)
    }

    /// Binary integer operations whose two inputs share one size.
    pub fn is_binary(self) -> bool {
        matches!(self.arity(), Arity::Fixed(2)) && !matches!(self, Opcode::Load | Opcode::CBranch)
    }

    pub fn is_comparison(self) -> bool {
        use Opcode::*;
        matches!(self, IntEqual | IntNotEqual | IntLess | IntSLess | IntCarry)
    }

    pub fn is_commutative(self) -> bool {
        use Opcode::*;
        matches!(self, IntAdd | IntMul | IntAnd | IntOr | IntXor | IntEqual | IntNotEqual)
    }

    /// Pure value computations: safe to fold, rewrite, and remove when dead.
    pub fn is_pure(self) -> bool {
        use Opcode::*;
        !matches!(self, Load | Store | Branch | CBranch | IBranch | Call | ICall | Return | Intrinsic | Halt)
    }

    pub fn is_control(self) -> bool {
        use Opcode::*;
        matches!(self, Branch | CBranch | IBranch | Call | ICall | Return | Halt)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Operation {
    pub opcode: Opcode,
    pub inputs: Vec<VarNode>,
    pub output: Option<VarNode>,
    /// Set for `INTRINSIC` only.
    pub intrinsic: Option<String>,
}

impl Operation {
    pub fn new(opcode: Opcode, inputs: Vec<VarNode>, output: Option<VarNode>) -> Operation {
        Operation {
            opcode,
            inputs,
            output,
            intrinsic: None,
        }
    }

    pub fn intrinsic(name: &str, inputs: Vec<VarNode>, output: Option<VarNode>) -> Operation {
        Operation {
            opcode: Opcode::Intrinsic,
            inputs,
            output,
            intrinsic: Some(name.to_string()),
        }
    }

    /// True for a branch whose target is an op index inside the same instruction.
    pub fn is_local_branch(&self, spaces: &SpaceTable) -> bool {
        matches!(self.opcode, Opcode::Branch | Opcode::CBranch) && spaces.kind(self.inputs[0].space) == Some(SpaceKind::Constant)
    }

    /// True for an op that transfers control out of the instruction.
    pub fn is_inter_transfer(&self, spaces: &SpaceTable) -> bool {
        match self.opcode {
            Opcode::Branch | Opcode::CBranch => !self.is_local_branch(spaces),
            Opcode::IBranch | Opcode::Call | Opcode::ICall | Opcode::Return | Opcode::Halt => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiftedInstruction {
    pub address: u64,
    pub length: u32,
    pub asm: String,
    pub ops: Vec<Operation>,
}

impl LiftedInstruction {
    pub fn has_local_control(&self, spaces: &SpaceTable) -> bool {
        self.ops.iter().any(|op| op.is_local_branch(spaces))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerminatorKind {
    Branch,
    CBranch,
    Call,
    Return,
    Indirect,
    Halt,
    Fallthrough,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrBlock {
    pub start: u64,
    pub arch: String,
    pub instructions: Vec<LiftedInstruction>,
    pub terminator: TerminatorKind,
}

impl IrBlock {
    /// Derives the terminator kind from the last instruction's ops.
    pub fn classify(instructions: &[LiftedInstruction], spaces: &SpaceTable) -> TerminatorKind {
        let Some(last) = instructions.last() else {
            return TerminatorKind::Fallthrough;
        };
        let mut kind = TerminatorKind::Fallthrough;
        for op in &last.ops {
            if !op.is_inter_transfer(spaces) {
                continue;
            }
            kind = match op.opcode {
                Opcode::Branch => TerminatorKind::Branch,
                Opcode::CBranch => TerminatorKind::CBranch,
                Opcode::Call | Opcode::ICall => TerminatorKind::Call,
                Opcode::Return => TerminatorKind::Return,
                Opcode::IBranch => TerminatorKind::Indirect,
                Opcode::Halt => TerminatorKind::Halt,
                _ => kind,
            };
        }
        kind
    }

    /// Address just past the last instruction.
    pub fn end(&self) -> u64 {
        self.instructions.last().map(|i| i.address + i.length as u64).unwrap_or(self.start)
    }

    pub fn byte_len(&self) -> u64 {
        self.end() - self.start
    }
}

/// Total number of IL operations in a block.
pub fn count_ops(block: &IrBlock) -> usize {
    block.instructions.iter().map(|i| i.ops.len()).sum()
}
