//! Two-pass assembler driven by the asm templates of a processor spec.
//!
//! Source syntax: one statement per line, `;` comments, `label:` prefixes,
//! `NAME = expr` or `.equ NAME, expr` constants, and the directives `.org`,
//! `.byte`, `.half`, `.word`, `.ascii`, `.asciz`, `.space`, `.align`, plus
//! `.macro NAME p1, p2` ... `.endm` with `\p1` substitution.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use regex::Regex;

use crate::archspec::{Endian, InstructionPattern, ProcessorSpec};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl std::error::Error for AsmError {}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assembly {
    pub base: u64,
    pub bytes: Vec<u8>,
    pub symbols: BTreeMap<String, u64>,
}

impl Assembly {
    pub fn symbol(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).copied()
    }

    /// `name value` lines sorted by name.
    pub fn symbol_listing(&self) -> String {
        self.symbols.iter().map(|(k, v)| format!("{} 0x{:x}\n", k, v)).collect()
    }
}

struct Template {
    re: Regex,
    holes: Vec<String>,
}

fn compile(p: &InstructionPattern) -> Template {
    let mut re = String::from("(?i)^");
    let mut holes = Vec::new();
    let mut rest = p.asm.as_str();
    let push_lit = |re: &mut String, lit: &str| {
        for ch in lit.chars() {
            if ch.is_whitespace() {
                if !re.ends_with("\\s*") && !re.ends_with("\\s+") {
                    re.push_str("\\s+");
                }
            } else if ch.is_alphanumeric() || ch == '_' {
                re.push(ch);
            } else {
                if re.ends_with("\\s+") {
                    re.truncate(re.len() - 3);
                }
                if !re.ends_with("\\s*") {
                    re.push_str("\\s*");
                }
                re.push_str(&regex::escape(&ch.to_string()));
                re.push_str("\\s*");
            }
        }
    };
    while let Some(open) = rest.find('{') {
        push_lit(&mut re, &rest[..open]);
        let close = rest[open..].find('}').map(|c| open + c).unwrap_or(rest.len() - 1);
        let hole = &rest[open + 1..close];
        holes.push(hole.split(':').next().unwrap_or(hole).to_string());
        re.push_str("(.+?)");
        rest = &rest[(close + 1).min(rest.len())..];
    }
    push_lit(&mut re, rest);
    if re.ends_with("\\s+") || re.ends_with("\\s*") {
        re.truncate(re.len() - 3);
    }
    re.push_str("\\s*$");
    Template {
        re: Regex::new(&re).expect("template regex"),
        holes,
    }
}

/// Expression evaluation over integers with label lookup.
struct Expr<'a> {
    toks: Vec<Tok>,
    pos: usize,
    syms: &'a HashMap<String, i64>,
    /// Unknown names evaluate to zero instead of failing.
    lenient: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(i64),
    Name(String),
    Op(&'static str),
}

fn tokenize(s: &str) -> Result<Vec<Tok>, String> {
    const OPS: [&str; 15] = ["<<", ">>", "+", "-", "*", "/", "%", "&", "|", "^", "~", "(", ")", "!", "="];
    let b = s.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' {
            let end = s[i + 1..].find('\'').ok_or("unterminated character literal")? + i + 1;
            let inner = &s[i + 1..end];
            let v = match inner {
                "\\n" => b'\n',
                "\\0" => 0,
                _ if inner.len() == 1 => inner.as_bytes()[0],
                _ => return Err(format!("bad character literal '{}'", inner)),
            };
            out.push(Tok::Num(v as i64));
            i = end + 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            let t = s[start..i].to_ascii_lowercase();
            let v = if let Some(h) = t.strip_prefix("0x") {
                u64::from_str_radix(h, 16)
            } else if let Some(bin) = t.strip_prefix("0b") {
                u64::from_str_radix(bin, 2)
            } else {
                t.parse::<u64>()
            }
            .map_err(|_| format!("bad number {}", &s[start..i]))?;
            out.push(Tok::Num(v as i64));
        } else if c.is_ascii_alphabetic() || c == '_' || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.') {
                i += 1;
            }
            out.push(Tok::Name(s[start..i].to_string()));
        } else {
            let op = OPS.iter().find(|o| s[i..].starts_with(**o)).ok_or_else(|| format!("unexpected '{}'", c))?;
            out.push(Tok::Op(op));
            i += op.len();
        }
    }
    Ok(out)
}

impl Expr<'_> {
    fn peek_op(&self) -> Option<&'static str> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(o)) => Some(o),
            _ => None,
        }
    }

    fn binary(&mut self, level: usize) -> Result<i64, String> {
        const LEVELS: [&[&str]; 6] = [&["|"], &["^"], &["&"], &["<<", ">>"], &["+", "-"], &["*", "/", "%"]];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut v = self.binary(level + 1)?;
        while let Some(op) = self.peek_op().filter(|o| LEVELS[level].contains(o)) {
            self.pos += 1;
            let r = self.binary(level + 1)?;
            v = match op {
                "|" => v | r,
                "^" => v ^ r,
                "&" => v & r,
                "<<" => v.wrapping_shl(r as u32),
                ">>" => ((v as u64) >> (r as u32 & 63)) as i64,
                "+" => v.wrapping_add(r),
                "-" => v.wrapping_sub(r),
                "*" => v.wrapping_mul(r),
                "/" | "%" if r == 0 => return Err("division by zero".into()),
                "/" => v / r,
                _ => v % r,
            };
        }
        Ok(v)
    }

    fn unary(&mut self) -> Result<i64, String> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Op("-")) => {
                self.pos += 1;
                Ok(self.unary()?.wrapping_neg())
            }
            Some(Tok::Op("~")) => {
                self.pos += 1;
                Ok(!self.unary()?)
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let v = self.binary(0)?;
                if self.peek_op() != Some(")") {
                    return Err("missing ')'".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(n)
            }
            Some(Tok::Name(n)) => {
                self.pos += 1;
                match self.syms.get(&n) {
                    Some(&v) => Ok(v),
                    None if self.lenient => Ok(0),
                    None => Err(format!("undefined symbol {}", n)),
                }
            }
            other => Err(format!("expected a value, found {:?}", other)),
        }
    }
}

fn eval(s: &str, syms: &HashMap<String, i64>, lenient: bool) -> Result<i64, String> {
    let toks = tokenize(s)?;
    if toks.is_empty() {
        return Err("empty expression".into());
    }
    let mut e = Expr { toks, pos: 0, syms, lenient };
    let v = e.binary(0)?;
    if e.pos != e.toks.len() {
        return Err(format!("trailing input in '{}'", s));
    }
    Ok(v)
}

/// Splits on commas outside quotes and parentheses.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let (mut depth, mut quote, mut cur) = (0i32, false, String::new());
    for ch in s.chars() {
        match ch {
            '"' => quote = !quote,
            '(' | '[' if !quote => depth += 1,
            ')' | ']' if !quote => depth -= 1,
            ',' if !quote && depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn strip_comment(line: &str) -> &str {
    let mut quote = false;
    let mut chr = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' if !chr => quote = !quote,
            '\'' if !quote => chr = !chr,
            ';' if !quote && !chr => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_string(s: &str) -> Result<Vec<u8>, String> {
    let inner = s.trim().strip_prefix('"').and_then(|t| t.strip_suffix('"')).ok_or("expected a quoted string")?;
    let mut out = Vec::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('r') => out.push(b'\r'),
            Some('t') => out.push(b'\t'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            other => return Err(format!("bad escape \\{:?}", other)),
        }
    }
    Ok(out)
}

struct Macro {
    params: Vec<String>,
    body: Vec<(usize, String)>,
}

/// Expands macros into (source line, text) statements.
fn expand(src: &str) -> Result<Vec<(usize, String)>, AsmError> {
    let mut macros: HashMap<String, Macro> = HashMap::new();
    let mut out = Vec::new();
    let mut defining: Option<(String, Macro)> = None;
    let mut queue: Vec<(usize, String, u32)> = src.lines().enumerate().map(|(i, l)| (i + 1, l.to_string(), 0)).collect();
    queue.reverse();
    while let Some((line, text, depth)) = queue.pop() {
        let body = strip_comment(&text).trim().to_string();
        let err = |msg: String| AsmError { line, msg };
        let lower = body.to_ascii_lowercase();
        if let Some((_, m)) = defining.as_mut() {
            if lower == ".endm" {
                let (name, m) = defining.take().expect("defining");
                macros.insert(name.to_ascii_lowercase(), m);
            } else {
                m.body.push((line, body));
            }
            continue;
        }
        if let Some(rest) = lower.strip_prefix(".macro").filter(|r| r.starts_with(char::is_whitespace)) {
            let rest = &body[body.len() - rest.len()..];
            let rest = rest.trim();
            let (name, params) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let params = split_args(params);
            defining = Some((name.to_string(), Macro { params, body: Vec::new() }));
            continue;
        }
        if lower == ".endm" {
            return Err(err(".endm without .macro".into()));
        }
        let (label, stmt) = split_label(&body);
        let head = stmt.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        if let Some(m) = macros.get(&head) {
            if depth > 32 {
                return Err(err("macro expansion too deep".into()));
            }
            let args = split_args(stmt[head.len()..].trim());
            if args.len() != m.params.len() {
                return Err(err(format!("macro {} takes {} arguments, got {}", head, m.params.len(), args.len())));
            }
            if let Some(l) = label {
                out.push((line, format!("{}:", l)));
            }
            let mut lines: Vec<(usize, String, u32)> = m
                .body
                .iter()
                .map(|(_, b)| {
                    let mut t = b.clone();
                    let mut order: Vec<usize> = (0..m.params.len()).collect();
                    order.sort_by_key(|&i| std::cmp::Reverse(m.params[i].len()));
                    for i in order {
                        t = t.replace(&format!("\\{}", m.params[i]), &args[i]);
                    }
                    (line, t, depth + 1)
                })
                .collect();
            lines.reverse();
            queue.extend(lines);
            continue;
        }
        if !body.is_empty() {
            out.push((line, body));
        }
    }
    if let Some((name, _)) = defining {
        return Err(AsmError {
            line: src.lines().count(),
            msg: format!("macro {} is missing .endm", name),
        });
    }
    Ok(out)
}

fn split_label(s: &str) -> (Option<&str>, &str) {
    if let Some(i) = s.find(':') {
        let l = s[..i].trim();
        if !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') && !l.starts_with(|c: char| c.is_ascii_digit()) {
            return (Some(l), s[i + 1..].trim());
        }
    }
    (None, s)
}

pub struct Assembler<'a> {
    spec: &'a ProcessorSpec,
    templates: Vec<Template>,
}

enum Item {
    Bytes(Vec<u8>),
    Insn { pattern: usize, operands: Vec<String> },
    Data { width: usize, operands: Vec<String> },
}

impl<'a> Assembler<'a> {
    pub fn new(spec: &'a ProcessorSpec) -> Assembler<'a> {
        Assembler {
            spec,
            templates: spec.patterns.iter().map(compile).collect(),
        }
    }

    fn data(&self, width: usize, v: i64) -> Vec<u8> {
        let mut out = vec![0u8; width];
        for (i, b) in out.iter_mut().enumerate() {
            let k = match self.spec.endian {
                Endian::Little => i,
                Endian::Big => width - 1 - i,
            };
            *b = ((v as u64) >> (8 * k)) as u8;
        }
        out
    }

    fn encode(&self, pattern: usize, operands: &[String], syms: &HashMap<String, i64>, lenient: bool) -> Result<Vec<u8>, String> {
        let p = &self.spec.patterns[pattern];
        let holes = &self.templates[pattern].holes;
        let mut word = p.value;
        for (name, text) in holes.iter().zip(operands) {
            let v = eval(text, syms, lenient)?;
            let f = p
                .fields
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| format!("template names unknown field {}", name))?;
            let n = f.positions.len() as u32;
            let fits = (v >= 0 && (n >= 64 || (v as u64) >> n == 0)) || (v < 0 && n < 64 && v >= -(1i64 << (n - 1)));
            if !fits && !lenient {
                return Err(format!("{} = {} does not fit in {} bits", name, v, n));
            }
            for (j, &pos) in f.positions.iter().enumerate() {
                let bit = (v as u64) >> (n as usize - 1 - j) & 1;
                word = (word & !(1u64 << pos)) | (bit << pos);
            }
        }
        let len = p.len_bytes();
        Ok((0..len).map(|i| (word >> (8 * (len - 1 - i))) as u8).collect())
    }

    fn match_insn(&self, stmt: &str, syms: &HashMap<String, i64>) -> Option<(usize, Vec<String>)> {
        for (i, t) in self.templates.iter().enumerate() {
            if let Some(c) = t.re.captures(stmt) {
                let ops: Vec<String> = (1..c.len()).map(|k| c[k].trim().to_string()).collect();
                if self.encode(i, &ops, syms, true).is_ok() {
                    return Some((i, ops));
                }
            }
        }
        None
    }

    pub fn assemble(&self, src: &str, base: u64) -> Result<Assembly, AsmError> {
        let stmts = expand(src)?;
        let mut syms: HashMap<String, i64> = HashMap::new();
        let mut items: Vec<(usize, u64, Item)> = Vec::new();
        let mut pc = base;
        // First pass: addresses, labels and constants.
        for (line, s) in &stmts {
            let err = |msg: String| AsmError { line: *line, msg };
            let (label, stmt) = split_label(s);
            if let Some(l) = label {
                if syms.insert(l.to_string(), pc as i64).is_some() {
                    return Err(err(format!("duplicate label {}", l)));
                }
            }
            if stmt.is_empty() {
                continue;
            }
            if let Some((name, e)) = stmt
                .split_once('=')
                .filter(|(n, _)| n.trim().chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
            {
                let v = eval(e, &syms, false).map_err(err)?;
                syms.insert(name.trim().to_string(), v);
                continue;
            }
            let head = stmt.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
            let rest = stmt[head.len()..].trim();
            let item = match head.as_str() {
                ".equ" | ".set" => {
                    let a = split_args(rest);
                    if a.len() != 2 {
                        return Err(err(".equ takes a name and a value".into()));
                    }
                    let v = eval(&a[1], &syms, false).map_err(err)?;
                    syms.insert(a[0].clone(), v);
                    continue;
                }
                ".org" => {
                    let to = eval(rest, &syms, false).map_err(err)? as u64;
                    if to < pc {
                        return Err(err(format!(".org 0x{:x} moves backwards from 0x{:x}", to, pc)));
                    }
                    Item::Bytes(vec![0; (to - pc) as usize])
                }
                ".align" => {
                    let a = eval(rest, &syms, false).map_err(err)? as u64;
                    if a == 0 {
                        return Err(err(".align 0".into()));
                    }
                    Item::Bytes(vec![0; ((a - pc % a) % a) as usize])
                }
                ".space" => {
                    let a = split_args(rest);
                    let n = eval(&a[0], &syms, false).map_err(err)? as usize;
                    let fill = a.get(1).map(|f| eval(f, &syms, false)).transpose().map_err(err)?.unwrap_or(0);
                    Item::Bytes(vec![fill as u8; n])
                }
                ".ascii" | ".asciz" => {
                    let mut b = parse_string(rest).map_err(err)?;
                    if head == ".asciz" {
                        b.push(0);
                    }
                    Item::Bytes(b)
                }
                ".byte" | ".half" | ".word" => {
                    // Values are resolved in the second pass.
                    let w = match head.as_str() {
                        ".byte" => 1,
                        ".half" => 2,
                        _ => 4,
                    };
                    Item::Data {
                        width: w,
                        operands: split_args(rest),
                    }
                }
                h if h.starts_with('.') => return Err(err(format!("unknown directive {}", h))),
                _ => {
                    let (pattern, operands) = self.match_insn(stmt, &syms).ok_or_else(|| err(format!("no instruction matches '{}'", stmt)))?;
                    Item::Insn { pattern, operands }
                }
            };
            let len = match &item {
                Item::Bytes(b) => b.len() as u64,
                Item::Insn { pattern, .. } => self.spec.patterns[*pattern].len_bytes() as u64,
                Item::Data { width, operands } => (width * operands.len()) as u64,
            };
            items.push((*line, pc, item));
            pc += len;
        }
        // Second pass: encode with every symbol known.
        let mut bytes = Vec::with_capacity((pc - base) as usize);
        for (line, _, item) in items {
            let err = |msg: String| AsmError { line, msg };
            match item {
                Item::Bytes(b) => bytes.extend(b),
                Item::Data { width, operands } => {
                    for o in operands {
                        let v = eval(&o, &syms, false).map_err(err)?;
                        bytes.extend(self.data(width, v));
                    }
                }
                Item::Insn { pattern, operands } => bytes.extend(self.encode(pattern, &operands, &syms, false).map_err(err)?),
            }
        }
        let symbols = syms.into_iter().map(|(k, v)| (k, v as u64)).collect();
        Ok(Assembly { base, bytes, symbols })
    }
}

pub fn assemble(spec: &ProcessorSpec, src: &str, base: u64) -> Result<Assembly, AsmError> {
    Assembler::new(spec).assemble(src, base)
}
