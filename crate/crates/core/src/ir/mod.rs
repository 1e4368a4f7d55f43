//! Control-flow IR.
//!
//! Programs are lists of functions, each a list of basic blocks laid out at
//! 32-bit addresses (4 bytes per instruction). Every block ends in at most one
//! terminator; blocks without one fall through to the next block of their
//! function. Branch steering is done with a small register file (`r0..r15`)
//! and integer expressions, which is all the attestation machinery needs.

mod ball_larus;
mod cfg;
mod dom;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ball_larus::{ball_larus_number, BackEdgeReset, BallLarusError, BallLarusNumbering, BlEdge, BlNode};
pub use cfg::{BasicBlock, Edge, EdgeKind, Function, LoadError, ProgramCfg, ValidationError};
pub use dom::{compute_dominators, DominatorInfo, LoopInfo};
pub use parse::{parse_program, BlockSource, FuncSource, InstrSource, ProgramSource, SetSource};

/// A 32-bit code address.
pub type Addr = u32;

/// Address of the first laid-out block unless a block pins its own address.
pub const DEFAULT_BASE: Addr = 0x1000_0000;

/// Size of every IR instruction in the address model.
pub const INSTR_BYTES: Addr = 4;

/// Number of abstract registers (`r0` through `r15`).
pub const NUM_REGS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FuncId(pub u32);

impl FuncId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(u32),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    /// Wrapping 32-bit semantics. Division and remainder by zero yield 0.
    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => a.checked_div(b).unwrap_or(0),
            BinOp::Rem => a.checked_rem(b).unwrap_or(0),
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(b),
            BinOp::Shr => a.wrapping_shr(b),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    /// Unsigned comparison.
    pub fn eval(self, a: u32, b: u32) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Branch condition of a `cbr`: the branch is taken when `lhs op rhs` holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cond {
    pub op: CmpOp,
    pub lhs: Operand,
    pub rhs: Operand,
}

impl Cond {
    /// Condition used by a bare `cbr <label>`: taken iff `r0 != 0`.
    pub const DEFAULT: Cond = Cond { op: CmpOp::Ne, lhs: Operand::Reg(Reg(0)), rhs: Operand::Imm(0) };

    /// Evaluates the condition with a register lookup that may not know a value.
    pub fn eval_with(&self, mut read: impl FnMut(Reg) -> Option<u32>) -> Option<bool> {
        let mut get = |o: Operand| match o {
            Operand::Reg(r) => read(r),
            Operand::Imm(v) => Some(v),
        };
        let a = get(self.lhs)?;
        let b = get(self.rhs)?;
        Some(self.op.eval(a, b))
    }

    pub fn registers(&self) -> impl Iterator<Item = Reg> {
        [self.lhs, self.rhs].into_iter().filter_map(|o| match o {
            Operand::Reg(r) => Some(r),
            Operand::Imm(_) => None,
        })
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Operand(Operand),
    Binary(BinOp, Operand, Operand),
}

impl Expr {
    pub fn eval_with(&self, mut read: impl FnMut(Reg) -> Option<u32>) -> Option<u32> {
        let mut get = |o: Operand| match o {
            Operand::Reg(r) => read(r),
            Operand::Imm(v) => Some(v),
        };
        match *self {
            Expr::Operand(o) => get(o),
            Expr::Binary(op, a, b) => {
                let a = get(a)?;
                let b = get(b)?;
                Some(op.apply(a, b))
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Operand(o) => write!(f, "{o}"),
            Expr::Binary(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
        }
    }
}

/// Write destination of `set` / `compute`. `KeySlot` models the
/// measurement-key register of the attestation engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    Reg(Reg),
    KeySlot,
}

impl fmt::Display for Dest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dest::Reg(r) => write!(f, "{r}"),
            Dest::KeySlot => f.write_str("key"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    /// Straight-line work; optionally writes `dest = expr`.
    Compute { assign: Option<(Dest, Expr)> },
    /// Loads a constant; `symbol` keeps the `@name` spelling when the value is an address.
    SetReg { dest: Dest, value: u32, symbol: Option<String> },
    LoopHeaderHint,
    CondBranch { target: BlockId, cond: Cond },
    DirectJump { target: BlockId },
    Call { callee: FuncId },
    IndirectCall { reg: Reg },
    IndirectJump { reg: Reg },
    Return,
    Exit,
}

impl Instruction {
    pub fn is_terminator(&self) -> bool {
        !matches!(self, Instruction::Compute { .. } | Instruction::SetReg { .. } | Instruction::LoopHeaderHint)
    }

    /// Destination written by a data instruction.
    pub fn written(&self) -> Option<Dest> {
        match self {
            Instruction::Compute { assign: Some((d, _)) } => Some(*d),
            Instruction::SetReg { dest, .. } => Some(*dest),
            _ => None,
        }
    }
}
