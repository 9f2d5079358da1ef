//! Textual expressions: `v0:4`, `0x1f:1`, `INT_AND(v0:4, 0x4:4)`, `INT_ZEXT:4(v1:1)`.
//!
//! Comparisons produce one byte; extensions and truncation carry their
//! output size after the opcode name.

use crate::ir::Opcode;
use crate::semantics::natural_out_size;

use super::{Constraint, SymExpr};

struct Parser<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: &str) -> Result<T, String> {
        Err(format!("column {}: {}", self.pos + 1, msg))
    }

    fn skip_ws(&mut self) {
        while self.s[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.s[self.pos..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.s[self.pos..].starts_with(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn size(&mut self) -> Result<u8, String> {
        if !self.eat(':') {
            return self.err("expected ':size'");
        }
        let w = self.word();
        match w.parse::<u8>() {
            Ok(n) if (1..=8).contains(&n) => Ok(n),
            _ => self.err(&format!("bad size {:?}", w)),
        }
    }

    fn number(&self, w: &str) -> Result<u64, String> {
        let r = match w.strip_prefix("0x") {
            Some(h) => u64::from_str_radix(h, 16),
            None => w.parse(),
        };
        r.or_else(|_| self.err(&format!("bad number {:?}", w)))
    }

    fn expr(&mut self) -> Result<SymExpr, String> {
        let w = self.word();
        if w.is_empty() {
            return self.err("expected an expression");
        }
        if let Some(id) = w.strip_prefix('v').and_then(|n| n.parse::<u32>().ok()) {
            let size = self.size()?;
            return Ok(SymExpr::var(id, size));
        }
        if w.starts_with(|c: char| c.is_ascii_digit()) {
            let v = self.number(w)?;
            let size = self.size()?;
            return Ok(SymExpr::constant(v, size));
        }
        let Some(op) = Opcode::from_name(w) else {
            return self.err(&format!("unknown opcode {:?}", w));
        };
        self.skip_ws();
        let explicit = if self.s[self.pos..].starts_with(':') { Some(self.size()?) } else { None };
        if !self.eat('(') {
            return self.err("expected '('");
        }
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        if !self.eat(')') {
            return self.err("expected ')'");
        }
        let size = match (explicit, natural_out_size(op, args[0].size())) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => return self.err(&format!("{} needs an output size", w)),
        };
        Ok(SymExpr::apply(op, size, args))
    }
}

pub fn parse_expr(s: &str) -> Result<SymExpr, String> {
    let mut p = Parser { s, pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != s.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

/// One expression per line, each asserted non-zero. Blank lines and `;` comments are skipped.
pub fn parse_constraints(text: &str) -> Result<Vec<Constraint>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with(';'))
        .map(|(i, l)| parse_expr(l.trim()).map(Constraint::new).map_err(|e| format!("line {}: {}", i + 1, e)))
        .collect()
}
