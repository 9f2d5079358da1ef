//! Declarative processor specifications: parsing, decoding and lifting.

mod cache;
mod lift;
mod parse;
pub mod template;

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::ir::{LiftedInstruction, SpaceTable, VarNode};

pub use cache::{CacheStats, LiftCache, OPTIMIZER_TAG};
pub use lift::{lift_block, lift_raw, BlockLift, ImageView, LiftOptions, MemoryView};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl SpecError {
    pub fn new(line: usize, col: usize, msg: impl Into<String>) -> Self {
        SpecError { line, col, msg: msg.into() }
    }
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.msg)
        } else {
            write!(f, "{}:{}: {}", self.line, self.col, self.msg)
        }
    }
}

/// All errors found while reading a specification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecErrors(pub Vec<SpecError>);

impl fmt::Display for SpecErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{}", e)?;
        }
        Ok(())
    }
}

impl std::error::Error for SpecErrors {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LiftError {
    Decode { address: u64, bytes: Vec<u8> },
    Unmapped { address: u64 },
    Template { address: u64, mnemonic: String, msg: String },
}

impl fmt::Display for LiftError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiftError::Decode { address, bytes } => {
                write!(f, "no instruction matches bytes {} at 0x{:x}", hex::encode(bytes), address)
            }
            LiftError::Unmapped { address } => write!(f, "no code mapped at 0x{:x}", address),
            LiftError::Template { address, mnemonic, msg } => {
                write!(f, "{} at 0x{:x}: {}", mnemonic, address, msg)
            }
        }
    }
}

impl std::error::Error for LiftError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WidthPolicy {
    Fixed(u32),
    Variable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub vn: VarNode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternField {
    pub name: String,
    /// Bit positions, most significant first; concatenated to form the value.
    pub positions: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionPattern {
    pub mnemonic: String,
    pub bits: u32,
    pub mask: u64,
    pub value: u64,
    pub fields: Vec<PatternField>,
    pub asm: String,
    pub semantics: Vec<template::Stmt>,
    pub line: usize,
}

impl InstructionPattern {
    pub fn len_bytes(&self) -> usize {
        (self.bits / 8) as usize
    }

    /// True when some byte string could match both patterns.
    pub fn conflicts_with(&self, other: &InstructionPattern) -> bool {
        let w = self.bits.min(other.bits);
        let (ma, va) = (self.mask >> (self.bits - w), self.value >> (self.bits - w));
        let (mb, vb) = (other.mask >> (other.bits - w), other.value >> (other.bits - w));
        (va ^ vb) & ma & mb == 0
    }

    fn matches(&self, word: u64) -> bool {
        word & self.mask == self.value
    }

    fn extract(&self, word: u64) -> Vec<(String, u64)> {
        self.fields
            .iter()
            .map(|f| {
                let v = f.positions.iter().fold(0u64, |acc, &p| (acc << 1) | ((word >> p) & 1));
                (f.name.clone(), v)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub pattern: usize,
    pub fields: Vec<(String, u64)>,
    pub length: usize,
}

#[derive(Clone, Debug)]
pub struct ProcessorSpec {
    pub name: String,
    pub version: String,
    pub spaces: SpaceTable,
    pub registers: Vec<Register>,
    reg_index: HashMap<String, usize>,
    pub endian: Endian,
    pub pc: VarNode,
    pub patterns: Vec<InstructionPattern>,
    pub width: WidthPolicy,
    pub content_hash: [u8; 32],
    max_len: usize,
}

impl ProcessorSpec {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: String,
        version: String,
        spaces: SpaceTable,
        registers: Vec<Register>,
        reg_index: HashMap<String, usize>,
        endian: Endian,
        pc: VarNode,
        patterns: Vec<InstructionPattern>,
        text: &str,
    ) -> ProcessorSpec {
        let widths: Vec<u32> = patterns.iter().map(|p| p.bits / 8).collect();
        let width = match widths.first() {
            Some(&w) if widths.iter().all(|&x| x == w) => WidthPolicy::Fixed(w),
            _ => WidthPolicy::Variable,
        };
        let max_len = widths.iter().copied().max().unwrap_or(1) as usize;
        let content_hash = Sha256::digest(text.as_bytes()).into();
        ProcessorSpec {
            name,
            version,
            spaces,
            registers,
            reg_index,
            endian,
            pc,
            patterns,
            width,
            content_hash,
            max_len,
        }
    }

    pub fn parse(text: &str) -> Result<ProcessorSpec, SpecErrors> {
        parse::parse_spec(text).map_err(SpecErrors)
    }

    pub fn register(&self, name: &str) -> Option<VarNode> {
        self.reg_index.get(name).map(|&i| self.registers[i].vn)
    }

    /// Name of the register exactly matching a varnode, if one is declared.
    pub fn register_name(&self, vn: &VarNode) -> Option<&str> {
        self.registers.iter().find(|r| r.vn == *vn).map(|r| r.name.as_str())
    }

    /// Longest instruction in bytes.
    pub fn max_insn_len(&self) -> usize {
        self.max_len
    }

    /// Pairs of distinct registers whose storage overlaps.
    pub fn overlapping_registers(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (i, a) in self.registers.iter().enumerate() {
            for b in &self.registers[..i] {
                if a.vn.overlaps(&b.vn) {
                    out.push((b.name.as_str(), a.name.as_str()));
                }
            }
        }
        out
    }

    pub fn decode(&self, bytes: &[u8], address: u64) -> Result<Decoded, LiftError> {
        for (i, p) in self.patterns.iter().enumerate() {
            let n = p.len_bytes();
            if bytes.len() < n {
                continue;
            }
            let word = bytes[..n].iter().fold(0u64, |acc, &b| (acc << 8) | b as u64);
            if p.matches(word) {
                return Ok(Decoded {
                    pattern: i,
                    fields: p.extract(word),
                    length: n,
                });
            }
        }
        let n = bytes.len().min(self.max_len);
        Err(LiftError::Decode {
            address,
            bytes: bytes[..n].to_vec(),
        })
    }

    pub fn render_asm(&self, pattern: &InstructionPattern, fields: &[(String, u64)]) -> String {
        let mut out = String::new();
        let mut rest = pattern.asm.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let Some(close) = rest[open..].find('}') else {
                out.push_str(&rest[open..]);
                return out;
            };
            let hole = &rest[open + 1..open + close];
            let (name, hexfmt) = match hole.strip_suffix(":x") {
                Some(n) => (n, true),
                None => (hole, false),
            };
            match fields.iter().find(|(n, _)| n == name) {
                Some((_, v)) if hexfmt => out.push_str(&format!("0x{:x}", v)),
                Some((_, v)) => out.push_str(&v.to_string()),
                None => out.push_str(&rest[open..=open + close]),
            }
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        out
    }

    pub fn lift_instruction(&self, bytes: &[u8], address: u64) -> Result<LiftedInstruction, LiftError> {
        let d = self.decode(bytes, address)?;
        let p = &self.patterns[d.pattern];
        let next = address.wrapping_add(d.length as u64);
        let ops = template::Lowering::new(self, &d.fields, address, next)
            .run(&p.semantics)
            .map_err(|msg| LiftError::Template {
                address,
                mnemonic: p.mnemonic.clone(),
                msg,
            })?;
        Ok(LiftedInstruction {
            address,
            length: d.length as u32,
            asm: self.render_asm(p, &d.fields),
            ops,
        })
    }
}
