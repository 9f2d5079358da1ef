//! Canonical line-oriented text form of IR blocks.
//!
//! ```text
//! block 0x100 toy32 v1
//! insn 0x100 4 "XOR r1, r1"
//!   u[0x0:4] = INT_XOR r[0x4:4], r[0x4:4]
//! ```

use std::fmt::{self, Write as _};

use super::{valid_size, Arity, IrBlock, LiftedInstruction, Opcode, Operation, SpaceKind, SpaceTable, VarNode};

/// Size given to the space-id operand of LOAD and STORE.
pub const SPACE_ID_SIZE: u8 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.msg)
        } else {
            write!(f, "line {}, col {}: {}", self.line, self.col, self.msg)
        }
    }
}

impl std::error::Error for ParseError {}

pub fn render_varnode(vn: &VarNode, spaces: &SpaceTable) -> String {
    let mut s = String::new();
    write_varnode(&mut s, vn, spaces);
    s
}

fn write_varnode(out: &mut String, vn: &VarNode, spaces: &SpaceTable) {
    match spaces.kind(vn.space) {
        Some(SpaceKind::Constant) => {
            let _ = write!(out, "#0x{:x}:{}", vn.offset, vn.size);
        }
        Some(kind) => {
            let _ = write!(out, "{}[0x{:x}:{}]", kind.letter(), vn.offset, vn.size);
        }
        None => {
            let _ = write!(out, "?{}[0x{:x}:{}]", vn.space, vn.offset, vn.size);
        }
    }
}

pub fn render_op(op: &Operation, spaces: &SpaceTable) -> String {
    let mut s = String::new();
    if let Some(out) = &op.output {
        write_varnode(&mut s, out, spaces);
        s.push_str(" = ");
    }
    s.push_str(op.opcode.name());
    if let Some(name) = &op.intrinsic {
        let _ = write!(s, " \"{}\"", name);
    }
    for (i, input) in op.inputs.iter().enumerate() {
        s.push_str(if i == 0 { " " } else { ", " });
        let space_operand = i == 0 && matches!(op.opcode, Opcode::Load | Opcode::Store);
        match spaces.get(input.offset as u8) {
            Some(sp) if space_operand && spaces.kind(input.space) == Some(SpaceKind::Constant) => s.push_str(&sp.name),
            _ => write_varnode(&mut s, input, spaces),
        }
    }
    s
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

pub fn render_block(block: &IrBlock, spaces: &SpaceTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "block 0x{:x} {} v1", block.start, block.arch);
    for insn in &block.instructions {
        let _ = writeln!(s, "insn 0x{:x} {} \"{}\"", insn.address, insn.length, escape(&insn.asm));
        for op in &insn.ops {
            s.push_str("  ");
            s.push_str(&render_op(op, spaces));
            s.push('\n');
        }
    }
    s
}

struct Cursor<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        Cursor { line, text, pos: 0 }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            col: self.pos + 1,
            msg: msg.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            self.err(format!("expected `{}`", lit))
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> &'a str {
        let rest = self.rest();
        let n = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        self.pos += n;
        &rest[..n]
    }

    fn hex(&mut self) -> Result<u64, ParseError> {
        self.expect("0x")?;
        let start = self.pos;
        let digits = self.word();
        if digits.is_empty() || digits.chars().any(|c| !c.is_ascii_hexdigit() || c.is_ascii_uppercase()) {
            self.pos = start;
            return self.err("expected lowercase hex digits");
        }
        if digits.len() > 1 && digits.starts_with('0') {
            self.pos = start;
            return self.err("non-canonical leading zero");
        }
        u64::from_str_radix(digits, 16).or_else(|_| {
            self.pos = start;
            self.err("hex value out of range")
        })
    }

    fn dec(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        let digits = self.word();
        if digits.is_empty() || digits.chars().any(|c| !c.is_ascii_digit()) {
            self.pos = start;
            return self.err("expected decimal number");
        }
        digits.parse().or_else(|_| {
            self.pos = start;
            self.err("number out of range")
        })
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        self.expect("\"")?;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return self.err("unterminated string");
            };
            self.pos += c.len_utf8();
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let Some(e) = self.peek() else {
                        return self.err("unterminated escape");
                    };
                    self.pos += e.len_utf8();
                    out.push(match e {
                        'n' => '\n',
                        '"' => '"',
                        '\\' => '\\',
                        _ => return self.err("unknown escape"),
                    });
                }
                c => out.push(c),
            }
        }
    }

    fn size(&mut self) -> Result<u8, ParseError> {
        let start = self.pos;
        let n = self.dec()?;
        if n > 8 || !valid_size(n as u8) {
            self.pos = start;
            return self.err(format!("invalid size {}", n));
        }
        Ok(n as u8)
    }

    fn varnode(&mut self, spaces: &SpaceTable) -> Result<VarNode, ParseError> {
        if self.eat("#") {
            let offset = self.hex()?;
            self.expect(":")?;
            let size = self.size()?;
            return Ok(VarNode::new(spaces.constant(), offset, size));
        }
        let Some(c) = self.peek() else {
            return self.err("expected operand");
        };
        let Some(kind) = SpaceKind::from_letter(c) else {
            return self.err(format!("unknown space letter `{}`", c));
        };
        let Some(space) = spaces.by_kind(kind) else {
            return self.err(format!("no {:?} space in this architecture", kind));
        };
        self.pos += 1;
        self.expect("[")?;
        let offset = self.hex()?;
        self.expect(":")?;
        let size = self.size()?;
        self.expect("]")?;
        Ok(VarNode::new(space.id, offset, size))
    }
}

fn parse_op(cur: &mut Cursor<'_>, spaces: &SpaceTable) -> Result<Operation, ParseError> {
    let output = if cur.peek().is_some_and(|c| c == '#' || c.is_ascii_lowercase()) {
        let vn = cur.varnode(spaces)?;
        cur.expect(" = ")?;
        Some(vn)
    } else {
        None
    };
    let opstart = cur.pos;
    let name = cur.word();
    let Some(opcode) = Opcode::from_name(name) else {
        cur.pos = opstart;
        return cur.err(format!("unknown opcode `{}`", name));
    };
    let intrinsic = if opcode == Opcode::Intrinsic {
        cur.expect(" ")?;
        Some(cur.quoted()?)
    } else {
        None
    };
    let mut inputs = Vec::new();
    if cur.eat(" ") {
        loop {
            let space_operand = inputs.is_empty() && matches!(opcode, Opcode::Load | Opcode::Store);
            let rest = cur.rest();
            let wlen = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
            let named = wlen > 0 && !rest[wlen..].starts_with('[');
            if space_operand && named {
                let start = cur.pos;
                let w = cur.word();
                let Some(sp) = spaces.by_name(w) else {
                    cur.pos = start;
                    return cur.err(format!("unknown space `{}`", w));
                };
                inputs.push(VarNode::new(spaces.constant(), sp.id as u64, SPACE_ID_SIZE));
            } else {
                inputs.push(cur.varnode(spaces)?);
            }
            if !cur.eat(", ") {
                break;
            }
        }
    }
    if !cur.at_end() {
        return cur.err("trailing characters");
    }
    if let Arity::Fixed(n) = opcode.arity() {
        if inputs.len() != n {
            cur.pos = opstart;
            return cur.err(format!(
                "{} needs {} input{}, got {}",
                opcode.name(),
                n,
                if n == 1 { "" } else { "s" },
                inputs.len()
            ));
        }
    }
    if opcode.has_output() != output.is_some() && opcode != Opcode::Intrinsic {
        cur.pos = opstart;
        return cur.err(if output.is_some() {
            format!("{} takes no output", opcode.name())
        } else {
            format!("{} needs an output", opcode.name())
        });
    }
    if opcode.is_binary() && inputs[0].size != inputs[1].size {
        cur.pos = opstart;
        return cur.err(format!(
            "size mismatch: {} inputs have sizes {} and {}",
            opcode.name(),
            inputs[0].size,
            inputs[1].size
        ));
    }
    Ok(Operation {
        opcode,
        inputs,
        output,
        intrinsic,
    })
}

pub fn parse_ir(text: &str, spaces: &SpaceTable) -> Result<IrBlock, ParseError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let Some((ln, header)) = lines.next().filter(|(_, l)| !l.trim().is_empty()) else {
        return Err(ParseError {
            line: 0,
            col: 0,
            msg: "no block header".into(),
        });
    };
    let mut cur = Cursor::new(ln, header);
    if !cur.eat("block ") {
        return Err(ParseError {
            line: 0,
            col: 0,
            msg: "no block header".into(),
        });
    }
    let start = cur.hex()?;
    cur.expect(" ")?;
    let arch = cur.word().to_string();
    if arch.is_empty() {
        return cur.err("expected architecture name");
    }
    cur.expect(" v1")?;
    if !cur.at_end() {
        return cur.err("trailing characters");
    }

    let mut instructions: Vec<LiftedInstruction> = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(ln, line);
        if cur.eat("insn ") {
            let address = cur.hex()?;
            cur.expect(" ")?;
            let length = cur.dec()? as u32;
            cur.expect(" ")?;
            let asm = cur.quoted()?;
            if !cur.at_end() {
                return cur.err("trailing characters");
            }
            instructions.push(LiftedInstruction {
                address,
                length,
                asm,
                ops: Vec::new(),
            });
        } else if cur.eat("  ") {
            let Some(insn) = instructions.last_mut() else {
                return cur.err("operation before any insn line");
            };
            insn.ops.push(parse_op(&mut cur, spaces)?);
        } else {
            return cur.err("expected `insn` line or indented operation");
        }
    }
    let terminator = IrBlock::classify(&instructions, spaces);
    Ok(IrBlock {
        start,
        arch,
        instructions,
        terminator,
    })
}
