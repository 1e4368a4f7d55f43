//! Parser for the textual program format.
//!
//! ```text
//! # comment
//! entry main                       # optional; defaults to `main`, then the first function
//! func main {
//!   block head:  set r1 = 0
//!   block cond:  cbr done if r1 >= 10
//!   block body @0x10000100: compute r1 = r1 + 1; jmp cond
//!   block done:  exit
//! }
//! ```
//!
//! Instructions are separated by `;` or whitespace; every instruction starts
//! with a keyword so no separator is strictly required.

use super::cfg::LoadError;
use super::{BinOp, CmpOp, Cond, Dest, Expr, Operand, Reg, NUM_REGS};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramSource {
    pub entry: Option<String>,
    pub functions: Vec<FuncSource>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncSource {
    pub name: String,
    pub line: usize,
    pub blocks: Vec<BlockSource>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSource {
    pub label: String,
    pub addr: Option<u32>,
    pub line: usize,
    pub instrs: Vec<InstrSource>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SetSource {
    Imm(u32),
    Symbol(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstrSource {
    Compute(Option<(Dest, Expr)>),
    Set { dest: Dest, value: SetSource },
    LoopHint,
    Cbr { target: String, cond: Cond },
    Jmp(String),
    Call(String),
    ICall(Reg),
    IJmp(Reg),
    Ret,
    Exit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u32),
    Punct(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCTS: [&str; 22] = [
    "<<", ">>", "==", "!=", "<=", ">=", "{", "}", ":", ";", "=", "@", "+", "-", "*", "/", "%", "&", "|", "^", "<", ">",
];

fn lex(text: &str) -> Result<Vec<Token>, LoadError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let code = raw.split('#').next().unwrap_or("");
        let chars: Vec<char> = code.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let begin = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[begin..i].iter().filter(|&&c| c != '_').collect();
                let parsed = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                    u32::from_str_radix(hex, 16)
                } else {
                    s.parse::<u32>()
                };
                let v = parsed.map_err(|_| parse_err(line, col, format!("invalid number `{s}`")))?;
                out.push(Token { tok: Tok::Num(v), line, col });
            } else if c.is_ascii_alphabetic() || c == '_' || c == '.' {
                let begin = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[begin..i].iter().collect()), line, col });
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let p = PUNCTS
                    .iter()
                    .find(|p| rest.starts_with(**p))
                    .ok_or_else(|| parse_err(line, col, format!("unexpected character `{c}`")))?;
                i += p.len();
                out.push(Token { tok: Tok::Punct(p), line, col });
            }
        }
    }
    Ok(out)
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse { line, column, message: message.into() }
}

const INSTR_KEYWORDS: [&str; 10] = ["compute", "set", "cbr", "jmp", "call", "icall", "ijmp", "ret", "exit", "loophint"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map(|t| (t.line, t.col)).unwrap_or((self.eof_line, 1))
    }

    fn error(&self, msg: impl Into<String>) -> LoadError {
        let (l, c) = self.here();
        parse_err(l, c, msg)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), LoadError> {
        match self.peek() {
            Some(Tok::Punct(q)) if *q == p => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected `{p}`"))),
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, LoadError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), LoadError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected `{kw}`"))),
        }
    }

    fn number(&mut self) -> Result<u32, LoadError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error("expected number")),
        }
    }

    fn reg(&mut self) -> Result<Reg, LoadError> {
        let err = self.error("expected register `r0`..`r15`");
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let r = as_reg(s).ok_or(err)?;
                self.pos += 1;
                Ok(r)
            }
            _ => Err(err),
        }
    }

    fn dest(&mut self) -> Result<Dest, LoadError> {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "key") {
            self.pos += 1;
            return Ok(Dest::KeySlot);
        }
        self.reg().map(Dest::Reg)
    }

    fn operand(&mut self) -> Result<Operand, LoadError> {
        match self.peek() {
            Some(Tok::Num(_)) => Ok(Operand::Imm(self.number()?)),
            _ => Ok(Operand::Reg(self.reg()?)),
        }
    }

    fn binop(&self) -> Option<BinOp> {
        let Some(Tok::Punct(p)) = self.peek() else { return None };
        Some(match *p {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "&" => BinOp::And,
            "|" => BinOp::Or,
            "^" => BinOp::Xor,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            _ => return None,
        })
    }

    fn cmpop(&mut self) -> Result<CmpOp, LoadError> {
        let op = match self.peek() {
            Some(Tok::Punct("==")) => CmpOp::Eq,
            Some(Tok::Punct("!=")) => CmpOp::Ne,
            Some(Tok::Punct("<")) => CmpOp::Lt,
            Some(Tok::Punct("<=")) => CmpOp::Le,
            Some(Tok::Punct(">")) => CmpOp::Gt,
            Some(Tok::Punct(">=")) => CmpOp::Ge,
            _ => return Err(self.error("expected comparison operator")),
        };
        self.pos += 1;
        Ok(op)
    }

    fn instr(&mut self) -> Result<InstrSource, LoadError> {
        let kw = self.ident("instruction")?;
        Ok(match kw.as_str() {
            "compute" => {
                let assigns = matches!(self.peek_at(1), Some(Tok::Punct("=")))
                    && matches!(self.peek(), Some(Tok::Ident(s)) if s == "key" || as_reg(s).is_some());
                if assigns {
                    let d = self.dest()?;
                    self.expect_punct("=")?;
                    let a = self.operand()?;
                    let e = match self.binop() {
                        Some(op) => {
                            self.pos += 1;
                            Expr::Binary(op, a, self.operand()?)
                        }
                        None => Expr::Operand(a),
                    };
                    InstrSource::Compute(Some((d, e)))
                } else {
                    InstrSource::Compute(None)
                }
            }
            "set" => {
                let dest = self.dest()?;
                self.expect_punct("=")?;
                let value = if self.eat_punct("@") {
                    SetSource::Symbol(self.ident("symbol")?)
                } else {
                    SetSource::Imm(self.number()?)
                };
                InstrSource::Set { dest, value }
            }
            "cbr" => {
                let target = self.ident("branch target")?;
                let cond = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "if") {
                    self.pos += 1;
                    let lhs = self.operand()?;
                    let op = self.cmpop()?;
                    let rhs = self.operand()?;
                    Cond { op, lhs, rhs }
                } else {
                    Cond::DEFAULT
                };
                InstrSource::Cbr { target, cond }
            }
            "jmp" => InstrSource::Jmp(self.ident("jump target")?),
            "call" => InstrSource::Call(self.ident("callee")?),
            "icall" => InstrSource::ICall(self.reg()?),
            "ijmp" => InstrSource::IJmp(self.reg()?),
            "ret" => InstrSource::Ret,
            "exit" => InstrSource::Exit,
            "loophint" => InstrSource::LoopHint,
            other => {
                self.pos -= 1;
                return Err(self.error(format!("unknown instruction `{other}`")));
            }
        })
    }

    fn block(&mut self) -> Result<BlockSource, LoadError> {
        let (line, _) = self.here();
        self.keyword("block")?;
        let label = self.ident("block label")?;
        let addr = if self.eat_punct("@") { Some(self.number()?) } else { None };
        self.expect_punct(":")?;
        let mut instrs = Vec::new();
        loop {
            while self.eat_punct(";") {}
            match self.peek() {
                Some(Tok::Ident(s)) if INSTR_KEYWORDS.contains(&s.as_str()) => instrs.push(self.instr()?),
                Some(Tok::Ident(s)) if s == "block" => break,
                Some(Tok::Punct("}")) => break,
                None => return Err(self.error("unexpected end of input inside function")),
                Some(Tok::Ident(s)) => return Err(self.error(format!("unknown instruction `{s}`"))),
                _ => return Err(self.error("expected instruction")),
            }
        }
        Ok(BlockSource { label, addr, line, instrs })
    }

    fn function(&mut self) -> Result<FuncSource, LoadError> {
        let (line, _) = self.here();
        self.keyword("func")?;
        let name = self.ident("function name")?;
        self.expect_punct("{")?;
        let mut blocks = Vec::new();
        while !self.eat_punct("}") {
            if self.peek().is_none() {
                return Err(self.error("unterminated function body"));
            }
            blocks.push(self.block()?);
        }
        Ok(FuncSource { name, line, blocks })
    }
}

fn as_reg(s: &str) -> Option<Reg> {
    let n: usize = s.strip_prefix('r')?.parse().ok()?;
    (n < NUM_REGS && !s[1..].starts_with('0') || s == "r0").then_some(Reg(n as u8))
}

/// Parses program text without resolving names or laying out addresses.
pub fn parse_program(text: &str) -> Result<ProgramSource, LoadError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, eof_line: text.lines().count().max(1) };
    let mut entry = None;
    let mut functions = Vec::new();
    while let Some(tok) = p.next() {
        match tok {
            Tok::Ident(kw) if kw == "func" => {
                p.pos -= 1;
                functions.push(p.function()?);
            }
            Tok::Ident(kw) if kw == "entry" => {
                if entry.is_some() {
                    p.pos -= 1;
                    return Err(p.error("duplicate `entry` directive"));
                }
                entry = Some(p.ident("entry function name")?);
            }
            _ => {
                p.pos -= 1;
                return Err(p.error("expected `func` or `entry`"));
            }
        }
    }
    Ok(ProgramSource { entry, functions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_instruction_forms() {
        let src = "func main {\n block a: compute; compute r1 = r2 + 3; set r4 = @b; set key = 7\n \
                   block b @0x20: cbr a if r1 < 0x10; cbr b\n block c: icall r4\n block d: ijmp r4\n \
                   block e: call main\n block f: loophint jmp a\n block g: ret\n block h: exit }";
        let p = parse_program(src).unwrap();
        let b = &p.functions[0].blocks;
        assert_eq!(b.len(), 8);
        assert_eq!(b[0].instrs.len(), 4);
        assert_eq!(b[1].addr, Some(0x20));
        assert_eq!(
            b[1].instrs[0],
            InstrSource::Cbr {
                target: "a".into(),
                cond: Cond { op: CmpOp::Lt, lhs: Operand::Reg(Reg(1)), rhs: Operand::Imm(16) }
            }
        );
        assert_eq!(b[1].instrs[1], InstrSource::Cbr { target: "b".into(), cond: Cond::DEFAULT });
        assert_eq!(b[0].instrs[3], InstrSource::Set { dest: Dest::KeySlot, value: SetSource::Imm(7) });
    }

    #[test]
    fn reports_line_and_column() {
        let err = parse_program("func main {\n  block a: compute\n  block b: frobnicate\n}").unwrap_err();
        match err {
            LoadError::Parse { line, column, .. } => assert_eq!((line, column), (3, 12)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_register() {
        assert!(parse_program("func f { block a: icall r16 }").is_err());
        assert!(parse_program("func f { block a: icall r01 }").is_err());
    }

    #[test]
    fn comments_are_ignored() {
        let p = parse_program("# header\nfunc f { # trailing\n block a: exit # done\n}").unwrap();
        assert_eq!(p.functions[0].blocks[0].instrs, vec![InstrSource::Exit]);
    }
}
