//! Reference interpreter for the IR.
//!
//! The interpreter reports every block entry and control transfer to a [`Monitor`],
//! which can also steer branch outcomes, indirect destinations and return addresses.
//! The attestation engine, ITL training and attack injection are all monitors.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{Addr, BlockId, Dest, Instruction, ProgramCfg, Reg, NUM_REGS};

/// Initial register values; unlisted registers start at zero.
pub type Inputs = BTreeMap<Reg, u32>;

pub const DEFAULT_FUEL: u64 = 100_000_000;
pub const DEFAULT_MAX_CALL_DEPTH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "fault", rename_all = "kebab-case")]
pub enum Fault {
    #[error("fuel-exhausted")]
    FuelExhausted,
    #[error("illegal-overflow at {addr:#010x}")]
    IllegalOverflow { addr: Addr },
    #[error("return-stack-underflow in block at {block:#010x}")]
    ReturnStackUnderflow { block: Addr },
    #[error("invalid-transfer to {addr:#010x}")]
    InvalidTransfer { addr: Addr },
    #[error("call-stack-overflow")]
    CallStackOverflow,
}

impl Fault {
    pub fn code(&self) -> &'static str {
        match self {
            Fault::FuelExhausted => "fuel-exhausted",
            Fault::IllegalOverflow { .. } => "illegal-overflow",
            Fault::ReturnStackUnderflow { .. } => "return-stack-underflow",
            Fault::InvalidTransfer { .. } => "invalid-transfer",
            Fault::CallStackOverflow => "call-stack-overflow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    CondTaken,
    CondNotTaken,
    Jump,
    Fallthrough,
    Call,
    IndirectCall,
    IndirectJump,
    Return,
    Exit,
}

impl EventKind {
    /// Forward branch instance: conditional evaluation or indirect transfer.
    pub fn is_forward(self) -> bool {
        matches!(self, EventKind::CondTaken | EventKind::CondNotTaken | EventKind::IndirectCall | EventKind::IndirectJump)
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, EventKind::CondTaken | EventKind::CondNotTaken)
    }
}

/// One ground-truth control transfer. `src` is the end address of the source block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub src_block: BlockId,
    pub src: Addr,
    pub dst: Addr,
    /// Destination block when `dst` is a block start.
    pub dst_block: Option<BlockId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionLog {
    /// Recorded transfers; empty when recording was disabled.
    pub events: Vec<Event>,
    /// Forward branch instances (conditional evaluations and indirect transfers).
    pub n: u64,
    /// Backward branch instances (returns).
    pub m: u64,
    pub conditional: u64,
    pub indirect: u64,
    pub block_entries: u64,
    pub instructions: u64,
}

impl ExecutionLog {
    pub fn l(&self) -> u64 {
        self.n + self.m
    }
}

pub trait Monitor {
    /// Called whenever execution enters a block at its first instruction.
    fn on_block_entry(&mut self, _block: BlockId, _addr: Addr) -> Result<(), Fault> {
        Ok(())
    }

    /// Called before an indirect call or jump transfers to `dest`.
    fn on_indirect(&mut self, _site: BlockId, _dest: Addr) -> Result<(), Fault> {
        Ok(())
    }

    /// Called before a return transfers to `ret`.
    fn on_return(&mut self, _site: BlockId, _ret: Addr) -> Result<(), Fault> {
        Ok(())
    }

    fn on_event(&mut self, _event: &Event) {}

    fn steer_branch(&mut self, _site: BlockId, natural: bool) -> bool {
        natural
    }

    fn steer_indirect(&mut self, _site: BlockId, natural: Addr) -> Addr {
        natural
    }

    /// `depth` is the call depth before popping (1 for a return from a function called by the entry).
    fn steer_return(&mut self, _site: BlockId, _depth: usize, natural: Addr) -> Addr {
        natural
    }
}

/// A monitor that observes nothing.
pub struct NoMonitor;

impl Monitor for NoMonitor {}

impl<M: Monitor + ?Sized> Monitor for &mut M {
    fn on_block_entry(&mut self, block: BlockId, addr: Addr) -> Result<(), Fault> {
        (**self).on_block_entry(block, addr)
    }
    fn on_indirect(&mut self, site: BlockId, dest: Addr) -> Result<(), Fault> {
        (**self).on_indirect(site, dest)
    }
    fn on_return(&mut self, site: BlockId, ret: Addr) -> Result<(), Fault> {
        (**self).on_return(site, ret)
    }
    fn on_event(&mut self, event: &Event) {
        (**self).on_event(event)
    }
    fn steer_branch(&mut self, site: BlockId, natural: bool) -> bool {
        (**self).steer_branch(site, natural)
    }
    fn steer_indirect(&mut self, site: BlockId, natural: Addr) -> Addr {
        (**self).steer_indirect(site, natural)
    }
    fn steer_return(&mut self, site: BlockId, depth: usize, natural: Addr) -> Addr {
        (**self).steer_return(site, depth, natural)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub fuel: u64,
    pub record_events: bool,
    pub max_call_depth: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { fuel: DEFAULT_FUEL, record_events: true, max_call_depth: DEFAULT_MAX_CALL_DEPTH }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub log: ExecutionLog,
    pub fault: Option<Fault>,
    pub regs: [u32; NUM_REGS],
}

struct Machine<'a, M: Monitor> {
    cfg: &'a ProgramCfg,
    monitor: M,
    log: ExecutionLog,
    record: bool,
    regs: [u32; NUM_REGS],
    key_slot: u32,
    stack: Vec<Addr>,
    block: BlockId,
    index: usize,
}

impl<M: Monitor> Machine<'_, M> {
    fn read(&self, r: Reg) -> u32 {
        self.regs[r.index()]
    }

    fn write(&mut self, d: Dest, v: u32) {
        match d {
            Dest::Reg(r) => self.regs[r.index()] = v,
            Dest::KeySlot => self.key_slot = v,
        }
    }

    fn emit(&mut self, kind: EventKind, dst: Addr) {
        let event = Event {
            kind,
            src_block: self.block,
            src: self.cfg.block(self.block).end_addr,
            dst,
            dst_block: self.cfg.block_at_start(dst),
        };
        match kind {
            EventKind::CondTaken | EventKind::CondNotTaken => {
                self.log.conditional += 1;
                self.log.n += 1;
            }
            EventKind::IndirectCall | EventKind::IndirectJump => {
                self.log.indirect += 1;
                self.log.n += 1;
            }
            EventKind::Return => self.log.m += 1,
            _ => {}
        }
        self.monitor.on_event(&event);
        if self.record {
            self.log.events.push(event);
        }
    }

    fn enter_block(&mut self, b: BlockId) -> Result<(), Fault> {
        self.block = b;
        self.index = 0;
        self.log.block_entries += 1;
        self.monitor.on_block_entry(b, self.cfg.block(b).start_addr)
    }

    /// Transfer to an arbitrary address: block starts are entered normally, other
    /// instruction addresses resume mid-block.
    fn transfer(&mut self, addr: Addr) -> Result<(), Fault> {
        if let Some(b) = self.cfg.block_at_start(addr) {
            return self.enter_block(b);
        }
        match self.cfg.locate(addr) {
            Some((b, i)) => {
                self.block = b;
                self.index = i;
                Ok(())
            }
            None => Err(Fault::InvalidTransfer { addr }),
        }
    }

    fn return_address(&self) -> Addr {
        let next = self.cfg.next_block(self.block).expect("validated call continuation");
        self.cfg.block(next).start_addr
    }

    fn push(&mut self, ret: Addr, max_depth: usize) -> Result<(), Fault> {
        if self.stack.len() >= max_depth {
            return Err(Fault::CallStackOverflow);
        }
        self.stack.push(ret);
        Ok(())
    }

    fn run(&mut self, opts: &RunOptions) -> Result<(), Fault> {
        let cfg = self.cfg;
        let mut fuel = opts.fuel;
        self.enter_block(cfg.entry)?;
        loop {
            let blk = cfg.block(self.block);
            let ins = &blk.instructions[self.index];
            if fuel == 0 {
                return Err(Fault::FuelExhausted);
            }
            fuel -= 1;
            self.log.instructions += 1;
            match ins {
                Instruction::Compute { assign: None } | Instruction::LoopHeaderHint => self.step_or_fallthrough()?,
                Instruction::Compute { assign: Some((d, e)) } => {
                    let v = e.eval_with(|r| Some(self.read(r))).expect("registers are concrete");
                    self.write(*d, v);
                    self.step_or_fallthrough()?;
                }
                Instruction::SetReg { dest, value, .. } => {
                    self.write(*dest, *value);
                    self.step_or_fallthrough()?;
                }
                Instruction::CondBranch { target, cond } => {
                    let natural = cond.eval_with(|r| Some(self.read(r))).expect("registers are concrete");
                    let site = self.block;
                    let taken = self.monitor.steer_branch(site, natural);
                    let dest = if taken { *target } else { cfg.next_block(site).expect("validated") };
                    let kind = if taken { EventKind::CondTaken } else { EventKind::CondNotTaken };
                    self.emit(kind, cfg.block(dest).start_addr);
                    self.enter_block(dest)?;
                }
                Instruction::DirectJump { target } => {
                    self.emit(EventKind::Jump, cfg.block(*target).start_addr);
                    self.enter_block(*target)?;
                }
                Instruction::Call { callee } => {
                    let ret = self.return_address();
                    self.push(ret, opts.max_call_depth)?;
                    let entry = cfg.function(*callee).entry;
                    self.emit(EventKind::Call, cfg.block(entry).start_addr);
                    self.enter_block(entry)?;
                }
                Instruction::IndirectCall { reg } | Instruction::IndirectJump { reg } => {
                    let is_call = matches!(ins, Instruction::IndirectCall { .. });
                    let site = self.block;
                    let natural = self.read(*reg);
                    let dest = self.monitor.steer_indirect(site, natural);
                    if is_call {
                        let ret = self.return_address();
                        self.push(ret, opts.max_call_depth)?;
                    }
                    self.monitor.on_indirect(site, dest)?;
                    self.emit(if is_call { EventKind::IndirectCall } else { EventKind::IndirectJump }, dest);
                    self.transfer(dest)?;
                }
                Instruction::Return => {
                    let site = self.block;
                    let depth = self.stack.len();
                    let natural = self
                        .stack
                        .pop()
                        .ok_or(Fault::ReturnStackUnderflow { block: blk.start_addr })?;
                    let ret = self.monitor.steer_return(site, depth, natural);
                    self.monitor.on_return(site, ret)?;
                    self.emit(EventKind::Return, ret);
                    self.transfer(ret)?;
                }
                Instruction::Exit => {
                    self.emit(EventKind::Exit, blk.end_addr);
                    return Ok(());
                }
            }
        }
    }

    /// Advances past a non-terminator; the last instruction of a block falls through.
    fn step_or_fallthrough(&mut self) -> Result<(), Fault> {
        let blk = self.cfg.block(self.block);
        if self.index + 1 < blk.instructions.len() {
            self.index += 1;
            return Ok(());
        }
        let next = self.cfg.next_block(self.block).expect("validated fallthrough");
        self.emit(EventKind::Fallthrough, self.cfg.block(next).start_addr);
        self.enter_block(next)
    }
}

/// Runs the program from its entry until `exit` or a fault.
pub fn run<M: Monitor>(cfg: &ProgramCfg, inputs: &Inputs, opts: &RunOptions, monitor: M) -> RunOutcome {
    let mut regs = [0u32; NUM_REGS];
    for (r, v) in inputs {
        regs[r.index()] = *v;
    }
    let mut m = Machine {
        cfg,
        monitor,
        log: ExecutionLog::default(),
        record: opts.record_events,
        regs,
        key_slot: 0,
        stack: Vec::new(),
        block: cfg.entry,
        index: 0,
    };
    let fault = m.run(opts).err();
    RunOutcome { log: m.log, fault, regs: m.regs }
}

/// Parses `rK=V` assignments (values decimal or `0x` hex).
pub fn parse_input(s: &str) -> Result<(Reg, u32), String> {
    let (r, v) = s.split_once('=').ok_or_else(|| format!("expected rK=V, got `{s}`"))?;
    let idx: usize = r
        .trim()
        .strip_prefix('r')
        .and_then(|n| n.parse().ok())
        .filter(|&n| n < NUM_REGS)
        .ok_or_else(|| format!("bad register `{r}`"))?;
    let v = v.trim();
    let value = match v.strip_prefix("0x") {
        Some(h) => u32::from_str_radix(h, 16),
        None => v.parse(),
    }
    .map_err(|_| format!("bad value `{v}`"))?;
    Ok((Reg(idx as u8), value))
}
