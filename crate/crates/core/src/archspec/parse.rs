//! Reader for the line-oriented processor specification format.

use std::collections::HashMap;

use crate::ir::{AddressSpace, Opcode, SpaceKind, SpaceTable, VarNode};

use super::template::{Dest, Expr, Lowering, Stmt};
use super::{Endian, InstructionPattern, PatternField, ProcessorSpec, Register, SpecError};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Str(String),
    Punct(char),
}

fn lex(line: usize, col0: usize, s: &str) -> Result<Vec<(Tok, usize)>, SpecError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |i: usize, msg: &str| SpecError::new(line, col0 + i + 1, msg);
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let st = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(s[st..i].to_string()), col0 + st + 1));
        } else if c.is_ascii_digit() {
            let st = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric()) {
                i += 1;
            }
            let t = &s[st..i];
            let v = if let Some(h) = t.strip_prefix("0x") {
                u64::from_str_radix(h, 16)
            } else {
                t.parse()
            }
            .map_err(|_| err(st, &format!("bad number `{}`", t)))?;
            out.push((Tok::Num(v), col0 + st + 1));
        } else if c == '"' {
            let st = i;
            i += 1;
            let b = i;
            while i < bytes.len() && bytes[i] != b'"' {
                i += 1;
            }
            if i >= bytes.len() {
                return Err(err(st, "unterminated string"));
            }
            out.push((Tok::Str(s[b..i].to_string()), col0 + st + 1));
            i += 1;
        } else if "()[],=:".contains(c) {
            out.push((Tok::Punct(c), col0 + i + 1));
            i += 1;
        } else {
            return Err(err(i, &format!("unexpected character `{}`", c)));
        }
    }
    Ok(out)
}

struct Toks<'a> {
    line: usize,
    toks: &'a [(Tok, usize)],
    pos: usize,
    end_col: usize,
}

impl<'a> Toks<'a> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.end_col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SpecError> {
        Err(SpecError::new(self.line, self.col(), msg))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn punct(&mut self, c: char) -> Result<(), SpecError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{}`", c))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, SpecError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SpecError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{}`", kw)),
        }
    }

    fn num(&mut self) -> Result<u64, SpecError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected number"),
        }
    }

    fn size(&mut self) -> Result<u8, SpecError> {
        let v = self.num()?;
        if !matches!(v, 1 | 2 | 4 | 8) {
            self.pos -= 1;
            return self.err(format!("invalid size {}", v));
        }
        Ok(v as u8)
    }

    fn opt_size(&mut self) -> Result<Option<u8>, SpecError> {
        if self.eat_punct(':') {
            Ok(Some(self.size()?))
        } else {
            Ok(None)
        }
    }

    fn done(&self) -> Result<(), SpecError> {
        if self.pos < self.toks.len() {
            self.err("trailing tokens")
        } else {
            Ok(())
        }
    }
}

fn is_tmp(name: &str) -> bool {
    name.len() > 3 && name.starts_with("tmp") && name[3..].chars().all(|c| c.is_ascii_digit())
}

struct StmtParser<'a> {
    fields: &'a [PatternField],
    regs: &'a HashMap<String, usize>,
}

impl StmtParser<'_> {
    fn is_field(&self, n: &str) -> bool {
        self.fields.iter().any(|f| f.name == n)
    }

    fn expr(&self, t: &mut Toks<'_>) -> Result<Expr, SpecError> {
        match t.next() {
            Some(Tok::Num(v)) => {
                let size = t.opt_size()?;
                Ok(Expr::Lit { value: v, size })
            }
            Some(Tok::Ident(name)) => {
                if let Some(op) = Opcode::from_name(&name) {
                    let size = t.opt_size()?;
                    t.punct('(')?;
                    let mut args = Vec::new();
                    if !t.eat_punct(')') {
                        loop {
                            args.push(self.expr(t)?);
                            if t.eat_punct(')') {
                                break;
                            }
                            t.punct(',')?;
                        }
                    }
                    return Ok(Expr::Apply { op, size, args });
                }
                match name.as_str() {
                    "load" => {
                        t.punct(':')?;
                        let size = t.size()?;
                        t.punct('(')?;
                        let space = t.ident()?;
                        t.punct(',')?;
                        let addr = self.expr(t)?;
                        t.punct(')')?;
                        return Ok(Expr::Load {
                            size,
                            space,
                            addr: Box::new(addr),
                        });
                    }
                    "inst_start" => return Ok(Expr::InstStart),
                    "inst_next" => return Ok(Expr::InstNext),
                    _ => {}
                }
                if t.eat_punct('[') {
                    let field = t.ident()?;
                    if !self.is_field(&field) {
                        t.pos -= 1;
                        return t.err(format!("unknown field `{}`", field));
                    }
                    t.punct(']')?;
                    return Ok(Expr::Indexed { prefix: name, field });
                }
                if is_tmp(&name) {
                    return Ok(Expr::Tmp(name));
                }
                if self.is_field(&name) {
                    let size = t.opt_size()?;
                    return Ok(Expr::Field { name, size });
                }
                if self.regs.contains_key(&name) {
                    return Ok(Expr::Reg(name));
                }
                t.pos -= 1;
                t.err(format!("unknown identifier `{}`", name))
            }
            _ => {
                t.pos = t.pos.saturating_sub(1);
                t.err("expected expression")
            }
        }
    }

    fn dest(&self, t: &mut Toks<'_>) -> Result<Dest, SpecError> {
        let name = t.ident()?;
        if is_tmp(&name) {
            let size = t.opt_size()?;
            return Ok(Dest::Tmp { name, size });
        }
        if t.eat_punct('[') {
            let field = t.ident()?;
            if !self.is_field(&field) {
                t.pos -= 1;
                return t.err(format!("unknown field `{}`", field));
            }
            t.punct(']')?;
            return Ok(Dest::Indexed { prefix: name, field });
        }
        if !self.regs.contains_key(&name) {
            t.pos -= 1;
            return t.err(format!("unknown register `{}`", name));
        }
        Ok(Dest::Reg(name))
    }

    fn intrinsic_call(&self, t: &mut Toks<'_>) -> Result<(String, Vec<Expr>), SpecError> {
        let name = match t.next() {
            Some(Tok::Str(s)) => s,
            _ => {
                t.pos -= 1;
                return t.err("expected intrinsic name string");
            }
        };
        t.punct('(')?;
        let mut args = Vec::new();
        if !t.eat_punct(')') {
            loop {
                args.push(self.expr(t)?);
                if t.eat_punct(')') {
                    break;
                }
                t.punct(',')?;
            }
        }
        Ok((name, args))
    }

    fn stmt(&self, t: &mut Toks<'_>) -> Result<Stmt, SpecError> {
        let kw = match t.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return t.err("expected statement"),
        };
        let is_assign = matches!(t.peek2(), Some(Tok::Punct('=' | ':' | '[')));
        let s = if is_assign && kw != "store" {
            let dst = self.dest(t)?;
            t.punct('=')?;
            if matches!(t.peek(), Some(Tok::Ident(s)) if s == "intrinsic") {
                t.pos += 1;
                let (name, args) = self.intrinsic_call(t)?;
                Stmt::Intrinsic { name, args, out: Some(dst) }
            } else {
                Stmt::Assign { dst, expr: self.expr(t)? }
            }
        } else {
            t.pos += 1;
            match kw.as_str() {
                "store" => {
                    let space = t.ident()?;
                    t.punct('[')?;
                    let addr = self.expr(t)?;
                    t.punct(']')?;
                    t.punct(':')?;
                    let size = t.size()?;
                    t.punct('=')?;
                    let value = self.expr(t)?;
                    Stmt::Store { space, addr, size, value }
                }
                "branch" => Stmt::Branch(self.expr(t)?),
                "call" => Stmt::Call(self.expr(t)?),
                "return" => Stmt::Return(self.expr(t)?),
                "cbranch" => {
                    let target = self.expr(t)?;
                    t.punct(',')?;
                    Stmt::CBranch(target, self.expr(t)?)
                }
                "intrinsic" => {
                    let (name, args) = self.intrinsic_call(t)?;
                    Stmt::Intrinsic { name, args, out: None }
                }
                "halt" => Stmt::Halt,
                "local" => Stmt::Label(t.ident()?),
                "goto" => Stmt::Goto(t.ident()?),
                "if" => {
                    let c = self.expr(t)?;
                    t.keyword("goto")?;
                    Stmt::IfGoto(c, t.ident()?)
                }
                _ => {
                    t.pos -= 1;
                    return t.err(format!("unknown statement `{}`", kw));
                }
            }
        };
        t.done()?;
        Ok(s)
    }
}

/// Strips a trailing comment, ignoring `#` inside quotes.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn kv<'a>(t: &mut Toks<'a>, key: &str) -> Result<Tok, SpecError> {
    t.keyword(key)?;
    t.punct('=')?;
    match t.next() {
        Some(tok) => Ok(tok),
        None => t.err(format!("missing value for `{}`", key)),
    }
}

fn kv_num(t: &mut Toks<'_>, key: &str) -> Result<u64, SpecError> {
    match kv(t, key)? {
        Tok::Num(v) => Ok(v),
        _ => {
            t.pos -= 1;
            t.err(format!("`{}` needs a number", key))
        }
    }
}

fn kv_str(t: &mut Toks<'_>, key: &str) -> Result<String, SpecError> {
    match kv(t, key)? {
        Tok::Str(s) => Ok(s),
        _ => {
            t.pos -= 1;
            t.err(format!("`{}` needs a quoted string", key))
        }
    }
}

fn kv_ident(t: &mut Toks<'_>, key: &str) -> Result<String, SpecError> {
    match kv(t, key)? {
        Tok::Ident(s) => Ok(s),
        Tok::Num(v) => Ok(v.to_string()),
        _ => {
            t.pos -= 1;
            t.err(format!("`{}` needs a word", key))
        }
    }
}

/// Parses `match="..."` into (mask, value, fields) over `bits` bits.
fn parse_match(pat: &str, bits: u32, line: usize) -> Result<(u64, u64, Vec<PatternField>), SpecError> {
    let chars: Vec<char> = pat.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.len() as u32 != bits {
        return Err(SpecError::new(line, 1, format!("match has {} bits but bits={}", chars.len(), bits)));
    }
    let mut fmask = 0u64;
    let mut fvalue = 0u64;
    let mut fields: Vec<PatternField> = Vec::new();
    for (j, c) in chars.iter().enumerate() {
        let pos = bits - 1 - j as u32;
        match c {
            '0' | '1' => {
                fmask |= 1 << pos;
                if *c == '1' {
                    fvalue |= 1 << pos;
                }
            }
            '-' => {}
            c if c.is_ascii_alphabetic() => {
                let name = c.to_string();
                match fields.iter_mut().find(|f| f.name == name) {
                    Some(f) => f.positions.push(pos),
                    None => fields.push(PatternField { name, positions: vec![pos] }),
                }
            }
            c => {
                return Err(SpecError::new(line, 1, format!("bad match character `{}`", c)));
            }
        }
    }
    Ok((fmask, fvalue, fields))
}

struct PendingInsn {
    line: usize,
    mnemonic: String,
    bits: u32,
    mask: u64,
    value: u64,
    fields: Vec<PatternField>,
    asm: String,
    body: Vec<(usize, String)>,
}

pub(crate) fn parse_spec(text: &str) -> Result<ProcessorSpec, Vec<SpecError>> {
    let mut errors = Vec::new();
    let mut name = None;
    let mut version = String::from("1");
    let mut endian = None;
    let mut spaces: Vec<AddressSpace> = Vec::new();
    let mut regs: Vec<(String, u64, u8, usize)> = Vec::new();
    let mut pc_name: Option<(String, usize)> = None;
    let mut pending: Vec<PendingInsn> = Vec::new();
    let mut open: Option<PendingInsn> = None;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if let Some(insn) = open.as_mut() {
            if trimmed == "}" {
                pending.push(open.take().unwrap());
            } else if !trimmed.is_empty() {
                insn.body.push((ln, line.to_string()));
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let toks = match lex(ln, 0, line.trim_end_matches('{').trim_end()) {
            Ok(t) => t,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let mut t = Toks {
            line: ln,
            toks: &toks,
            pos: 0,
            end_col: line.len() + 1,
        };
        let res: Result<(), SpecError> = (|| {
            let kw = t.ident()?;
            match kw.as_str() {
                "arch" => {
                    name = Some(t.ident()?);
                    if t.peek().is_some() {
                        version = kv_ident(&mut t, "version")?;
                    }
                }
                "endian" => {
                    endian = Some(match t.ident()?.as_str() {
                        "little" => Endian::Little,
                        "big" => Endian::Big,
                        _ => {
                            t.pos -= 1;
                            return t.err("endian must be `little` or `big`");
                        }
                    });
                }
                "space" => {
                    let sname = t.ident()?;
                    let kind_s = kv_ident(&mut t, "kind")?;
                    let Some(kind) = SpaceKind::parse(&kind_s) else {
                        t.pos -= 1;
                        return t.err(format!("unknown space kind `{}`", kind_s));
                    };
                    let extent = kv_num(&mut t, "size")?;
                    let mut word_size = 1;
                    if matches!(t.peek(), Some(Tok::Ident(s)) if s == "wordsize") {
                        word_size = kv_num(&mut t, "wordsize")? as u32;
                    }
                    if matches!(t.peek(), Some(Tok::Ident(s)) if s == "default") {
                        t.pos += 1;
                    }
                    if kind != SpaceKind::Constant && extent == 0 {
                        return t.err("space size must be positive");
                    }
                    let id = spaces.len() as u8;
                    spaces.push(AddressSpace {
                        id,
                        name: sname,
                        kind,
                        word_size,
                        extent,
                    });
                }
                "reg" => {
                    let rname = t.ident()?;
                    let offset = kv_num(&mut t, "offset")?;
                    let size = kv_num(&mut t, "size")?;
                    if !matches!(size, 1 | 2 | 4 | 8) {
                        return t.err(format!("invalid register size {}", size));
                    }
                    regs.push((rname, offset, size as u8, ln));
                }
                "pc" => pc_name = Some((t.ident()?, ln)),
                "insn" => {
                    let mnemonic = t.ident()?;
                    let bits = kv_num(&mut t, "bits")? as u32;
                    if bits == 0 || !bits.is_multiple_of(8) || bits > 64 {
                        return t.err("bits must be a multiple of 8 up to 64");
                    }
                    let pat = kv_str(&mut t, "match")?;
                    let asm = kv_str(&mut t, "asm")?;
                    if !line.trim_end().ends_with('{') {
                        return t.err("expected `{` at end of insn line");
                    }
                    let (mask, value, fields) = parse_match(&pat, bits, ln)?;
                    open = Some(PendingInsn {
                        line: ln,
                        mnemonic,
                        bits,
                        mask,
                        value,
                        fields,
                        asm,
                        body: Vec::new(),
                    });
                    return Ok(());
                }
                other => {
                    t.pos -= 1;
                    return t.err(format!("unknown directive `{}`", other));
                }
            }
            t.done()
        })();
        if let Err(e) = res {
            errors.push(e);
        }
    }
    if let Some(insn) = open {
        errors.push(SpecError::new(insn.line, 1, "unterminated insn body"));
    }

    if !spaces.iter().any(|s| s.kind == SpaceKind::Constant) {
        let id = spaces.len() as u8;
        spaces.push(AddressSpace {
            id,
            name: "const".into(),
            kind: SpaceKind::Constant,
            word_size: 1,
            extent: 0,
        });
    }
    let spaces = match SpaceTable::new(spaces) {
        Ok(s) => s,
        Err(e) => {
            errors.push(SpecError::new(0, 0, e));
            return Err(errors);
        }
    };
    let reg_space = spaces.register();
    let reg_extent = spaces.get(reg_space).map(|s| s.extent).unwrap_or(0);

    let mut registers = Vec::new();
    let mut reg_index = HashMap::new();
    for (rname, offset, size, ln) in regs {
        if offset + size as u64 > reg_extent {
            errors.push(SpecError::new(ln, 1, format!("register `{}` outside register space", rname)));
            continue;
        }
        if reg_index.contains_key(&rname) {
            errors.push(SpecError::new(ln, 1, format!("duplicate register `{}`", rname)));
            continue;
        }
        reg_index.insert(rname.clone(), registers.len());
        registers.push(Register {
            name: rname,
            vn: VarNode::new(reg_space, offset, size),
        });
    }
    let (pc_reg, pc_line) = pc_name.unwrap_or_else(|| ("PC".into(), 0));
    let pc = match reg_index.get(&pc_reg) {
        Some(&i) => registers[i].vn,
        None => {
            errors.push(SpecError::new(pc_line, 1, format!("program counter `{}` is not a register", pc_reg)));
            VarNode::new(reg_space, 0, 4)
        }
    };

    let mut patterns = Vec::new();
    for p in pending {
        let sp = StmtParser {
            fields: &p.fields,
            regs: &reg_index,
        };
        let mut stmts = Vec::new();
        for (ln, body) in &p.body {
            let res = lex(*ln, 0, body).and_then(|toks| {
                let mut t = Toks {
                    line: *ln,
                    toks: &toks,
                    pos: 0,
                    end_col: body.len() + 1,
                };
                sp.stmt(&mut t)
            });
            match res {
                Ok(s) => stmts.push(s),
                Err(e) => errors.push(e),
            }
        }
        patterns.push(InstructionPattern {
            mnemonic: p.mnemonic,
            bits: p.bits,
            mask: p.mask,
            value: p.value,
            fields: p.fields,
            asm: p.asm,
            semantics: stmts,
            line: p.line,
        });
    }

    for i in 0..patterns.len() {
        for j in 0..i {
            if patterns[i].conflicts_with(&patterns[j]) {
                errors.push(SpecError::new(
                    patterns[i].line,
                    1,
                    format!(
                        "ambiguous encoding: `{}` overlaps `{}` (line {})",
                        patterns[i].mnemonic, patterns[j].mnemonic, patterns[j].line
                    ),
                ));
            }
        }
    }

    let Some(name) = name else {
        errors.push(SpecError::new(0, 0, "missing `arch` directive"));
        return Err(errors);
    };
    let spec = ProcessorSpec::assemble(
        name,
        version,
        spaces,
        registers,
        reg_index,
        endian.unwrap_or(Endian::Little),
        pc,
        patterns,
        text,
    );

    // Trial instantiation catches size and reference errors at load time.
    for p in &spec.patterns {
        let zero: Vec<(String, u64)> = p.fields.iter().map(|f| (f.name.clone(), 0)).collect();
        if let Err(e) = Lowering::new(&spec, &zero, 0, 0).run(&p.semantics) {
            errors.push(SpecError::new(p.line, 1, format!("{}: {}", p.mnemonic, e)));
        }
        for (prefix, field) in indexed_uses(&p.semantics) {
            let Some(f) = p.fields.iter().find(|f| f.name == field) else { continue };
            if f.positions.len() > 8 {
                errors.push(SpecError::new(p.line, 1, format!("field `{}` too wide to index registers", field)));
                continue;
            }
            let mut sizes = Vec::new();
            for v in 0..(1u64 << f.positions.len()) {
                match spec.register(&format!("{}{}", prefix, v)) {
                    Some(vn) => sizes.push(vn.size),
                    None => {
                        errors.push(SpecError::new(p.line, 1, format!("{}: no register `{}{}`", p.mnemonic, prefix, v)));
                        break;
                    }
                }
            }
            if sizes.windows(2).any(|w| w[0] != w[1]) {
                errors.push(SpecError::new(p.line, 1, format!("registers `{}*` differ in size", prefix)));
            }
        }
    }

    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(errors)
    }
}

fn indexed_uses(stmts: &[Stmt]) -> Vec<(String, String)> {
    fn walk(e: &Expr, out: &mut Vec<(String, String)>) {
        match e {
            Expr::Indexed { prefix, field } => out.push((prefix.clone(), field.clone())),
            Expr::Apply { args, .. } => args.iter().for_each(|a| walk(a, out)),
            Expr::Load { addr, .. } => walk(addr, out),
            _ => {}
        }
    }
    fn dest(d: &Dest, out: &mut Vec<(String, String)>) {
        if let Dest::Indexed { prefix, field } = d {
            out.push((prefix.clone(), field.clone()));
        }
    }
    let mut out = Vec::new();
    for s in stmts {
        match s {
            Stmt::Assign { dst, expr } => {
                dest(dst, &mut out);
                walk(expr, &mut out);
            }
            Stmt::Store { addr, value, .. } => {
                walk(addr, &mut out);
                walk(value, &mut out);
            }
            Stmt::Branch(e) | Stmt::Call(e) | Stmt::Return(e) | Stmt::IfGoto(e, _) => walk(e, &mut out),
            Stmt::CBranch(a, b) => {
                walk(a, &mut out);
                walk(b, &mut out);
            }
            Stmt::Intrinsic { args, out: o, .. } => {
                args.iter().for_each(|a| walk(a, &mut out));
                if let Some(d) = o {
                    dest(d, &mut out);
                }
            }
            _ => {}
        }
    }
    out.sort();
    out.dedup();
    out
}
