//! Report authentication and backtracking path reconstruction.
//!
//! The verifier replays the program abstractly from its entry, spending the reported
//! occurrence counts as it enters instrumented blocks and recomputing both measurement
//! chains. Every conditional branch whose outcome is not determined by the known register
//! values is a choice point; dead ends restore the state of the most recent open choice
//! point (undo log) and try the next alternative. Fully explored choice points are
//! remembered by a hash of the complete abstract state so they are never expanded twice.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Inputs, DEFAULT_MAX_CALL_DEPTH};
use crate::instrument::{IndirectTargetList, InstrumentationPlan};
use crate::ir::{Addr, BlockId, Dest, Instruction, ProgramCfg, NUM_REGS};
use crate::prover::{AttestationReport, Keys, Measurer, Nonce};

pub const DEFAULT_BUDGET: u64 = 10_000_000;
const WITNESS_LIMIT: usize = 4096;

/// How much of the program's data the verifier interprets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum DataMode {
    /// Every conditional branch is a free choice.
    CfgOnly,
    /// Registers start unknown; constants loaded by the program are tracked.
    #[default]
    Constants,
    /// Registers start at the given values (others zero), so all data is known.
    Inputs(Inputs),
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub data: DataMode,
    /// Maximum number of block entries explored.
    pub budget: u64,
    pub max_stack: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { data: DataMode::default(), budget: DEFAULT_BUDGET, max_stack: DEFAULT_MAX_CALL_DEPTH }
    }
}

pub struct VerifierContext<'a> {
    pub cfg: &'a ProgramCfg,
    pub plan: &'a InstrumentationPlan,
    pub itl: &'a IndirectTargetList,
    pub keys: &'a Keys,
    pub expected_nonce: Nonce,
    pub options: VerifyOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Ok,
    BadSignature,
    StaleNonce,
    IllegalTargets,
    TraceMismatch,
    MeasurementMismatch,
    SearchExhausted,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "ok",
            Reason::BadSignature => "bad-signature",
            Reason::StaleNonce => "stale-nonce",
            Reason::IllegalTargets => "illegal-targets",
            Reason::TraceMismatch => "trace-mismatch",
            Reason::MeasurementMismatch => "measurement-mismatch",
            Reason::SearchExhausted => "search-exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: Reason,
    /// Recomputed forward measurement (on acceptance, or of the first complete path that
    /// consumed every count but disagreed on measurements).
    pub m_f: Option<u32>,
    pub m_b: Option<u32>,
    pub nodes_expanded: u64,
    /// Start addresses of the first blocks of the accepted path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<Addr>>,
}

impl Verdict {
    fn early(reason: Reason) -> Verdict {
        Verdict { accepted: false, reason, m_f: None, m_b: None, nodes_expanded: 0, witness: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Checks the signature and then the nonce.
fn authenticate(report: &AttestationReport, ctx: &VerifierContext<'_>) -> Option<Reason> {
    if !report.signature_valid(&ctx.keys.k_a) {
        return Some(Reason::BadSignature);
    }
    if report.nonce != ctx.expected_nonce {
        return Some(Reason::StaleNonce);
    }
    if !report.trace.illegal.is_empty() {
        return Some(Reason::IllegalTargets);
    }
    None
}

pub fn verify(report: &AttestationReport, ctx: &VerifierContext<'_>) -> Verdict {
    if let Some(reason) = authenticate(report, ctx) {
        return Verdict::early(reason);
    }
    let expected_keys = |a: &Addr| {
        ctx.itl.contains(*a) || ctx.cfg.block_at_start(*a).is_some_and(|b| ctx.plan.is_direct(b))
    };
    if !report.trace.counts.keys().all(expected_keys) {
        return Verdict::early(Reason::TraceMismatch);
    }
    Search::new(report, ctx).run()
}

#[derive(Clone, Copy, Debug)]
enum Alt {
    Enter(BlockId),
    Indirect { dest: Addr, push: Option<Addr> },
}

enum Stop {
    Dead,
    Accept,
    Choice(Vec<Alt>),
}

#[derive(Clone, Copy, Debug)]
enum Undo {
    Residual(usize),
    Reg(usize, Option<u32>),
    Push,
    Pop(Addr),
}

struct Frame {
    key: u64,
    trail_len: usize,
    block: BlockId,
    index: usize,
    m_f: u32,
    m_b: u32,
    path_len: usize,
    alts: Vec<Alt>,
    next: usize,
    dead_key: u64,
    exits_at: u64,
}

struct Budget;

struct Search<'a, 'r> {
    ctx: &'a VerifierContext<'a>,
    report: &'r AttestationReport,
    measurer: Measurer,
    slots: HashMap<Addr, usize>,
    residual: Vec<u64>,
    remaining: u64,
    track: bool,
    regs: [Option<u32>; NUM_REGS],
    stack: Vec<Addr>,
    m_f: u32,
    m_b: u32,
    block: BlockId,
    index: usize,
    trail: Vec<Undo>,
    frames: Vec<Frame>,
    open: usize,
    memo: HashSet<u64>,
    dead: HashSet<u64>,
    exits: u64,
    nodes: u64,
    path: Vec<BlockId>,
    mismatch: Option<(u32, u32)>,
}

impl<'a, 'r> Search<'a, 'r> {
    fn new(report: &'r AttestationReport, ctx: &'a VerifierContext<'a>) -> Self {
        let mut slots = HashMap::new();
        let mut residual = Vec::new();
        for (&a, &c) in &report.trace.counts {
            slots.insert(a, residual.len());
            residual.push(c);
        }
        let (track, regs) = match &ctx.options.data {
            DataMode::CfgOnly => (false, [None; NUM_REGS]),
            DataMode::Constants => (true, [None; NUM_REGS]),
            DataMode::Inputs(inputs) => {
                let mut regs = [Some(0); NUM_REGS];
                for (r, v) in inputs {
                    regs[r.index()] = Some(*v);
                }
                (true, regs)
            }
        };
        Search {
            ctx,
            report,
            measurer: Measurer::new(&ctx.keys.k_m),
            remaining: residual.iter().sum(),
            slots,
            residual,
            track,
            regs,
            stack: Vec::new(),
            m_f: 0,
            m_b: 0,
            block: ctx.cfg.entry,
            index: 0,
            trail: Vec::new(),
            frames: Vec::new(),
            open: 0,
            memo: HashSet::new(),
            dead: HashSet::new(),
            exits: 0,
            nodes: 0,
            path: Vec::new(),
            mismatch: None,
        }
    }

    fn log(&mut self, u: Undo) {
        if self.open > 0 {
            self.trail.push(u);
        }
    }

    fn count_of(&self, addr: Addr) -> u64 {
        self.slots.get(&addr).map_or(0, |&s| self.residual[s])
    }

    fn consume(&mut self, addr: Addr) -> bool {
        match self.slots.get(&addr) {
            Some(&s) if self.residual[s] > 0 => {
                self.residual[s] -= 1;
                self.remaining -= 1;
                self.log(Undo::Residual(s));
                true
            }
            _ => false,
        }
    }

    fn set_reg(&mut self, d: Dest, v: Option<u32>) {
        if let Dest::Reg(r) = d {
            let old = self.regs[r.index()];
            if old != v {
                self.log(Undo::Reg(r.index(), old));
                self.regs[r.index()] = v;
            }
        }
    }

    fn visit(&mut self, b: BlockId, index: usize) -> Result<(), Budget> {
        self.nodes += 1;
        if self.nodes > self.ctx.options.budget {
            return Err(Budget);
        }
        if self.path.len() < WITNESS_LIMIT {
            self.path.push(b);
        }
        self.block = b;
        self.index = index;
        Ok(())
    }

    /// Enters a block at its start, spending its count if it is instrumented.
    fn enter(&mut self, b: BlockId) -> Result<bool, Budget> {
        self.visit(b, 0)?;
        if self.ctx.plan.is_direct(b) {
            let start = self.ctx.cfg.block(b).start_addr;
            if !self.consume(start) {
                return Ok(false);
            }
            self.m_f = self.measurer.step(self.m_f, start);
        }
        Ok(true)
    }

    fn viable(&self, b: BlockId) -> bool {
        !self.ctx.plan.is_direct(b) || self.count_of(self.ctx.cfg.block(b).start_addr) > 0
    }

    fn transfer(&mut self, addr: Addr) -> Result<bool, Budget> {
        if let Some(b) = self.ctx.cfg.block_at_start(addr) {
            return self.enter(b);
        }
        match self.ctx.cfg.locate(addr) {
            Some((b, i)) => {
                self.visit(b, i)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn push(&mut self, ret: Addr) -> bool {
        if self.stack.len() >= self.ctx.options.max_stack {
            return false;
        }
        self.stack.push(ret);
        self.log(Undo::Push);
        true
    }

    fn apply(&mut self, alt: Alt) -> Result<bool, Budget> {
        match alt {
            Alt::Enter(b) => self.enter(b),
            Alt::Indirect { dest, push } => {
                if !self.consume(dest) {
                    return Ok(false);
                }
                self.m_f = self.measurer.step(self.m_f, dest);
                if let Some(ret) = push {
                    if !self.push(ret) {
                        return Ok(false);
                    }
                }
                self.transfer(dest)
            }
        }
    }

    /// Interprets straight-line code until a choice, a dead end or acceptance.
    fn advance(&mut self) -> Result<Stop, Budget> {
        let cfg = self.ctx.cfg;
        loop {
            let blk = cfg.block(self.block);
            let ins = &blk.instructions[self.index];
            let alive = match ins {
                Instruction::Compute { assign } => {
                    if let (true, Some((d, e))) = (self.track, assign) {
                        let regs = self.regs;
                        self.set_reg(*d, e.eval_with(|r| regs[r.index()]));
                    }
                    self.next_instruction()?
                }
                Instruction::SetReg { dest, value, .. } => {
                    if self.track {
                        self.set_reg(*dest, Some(*value));
                    }
                    self.next_instruction()?
                }
                Instruction::LoopHeaderHint => self.next_instruction()?,
                Instruction::CondBranch { target, cond } => {
                    let next = cfg.next_block(self.block).expect("validated");
                    let regs = self.regs;
                    let known = if self.track { cond.eval_with(|r| regs[r.index()]) } else { None };
                    let mut alts = match known {
                        Some(true) => vec![*target],
                        Some(false) => vec![next],
                        None if *target == next => vec![next],
                        None => vec![*target, next],
                    };
                    alts.retain(|&b| self.viable(b));
                    return Ok(Stop::Choice(alts.into_iter().map(Alt::Enter).collect()));
                }
                Instruction::DirectJump { target } => self.enter(*target)?,
                Instruction::Call { callee } => {
                    let ret = cfg.block(cfg.next_block(self.block).expect("validated")).start_addr;
                    self.push(ret) && self.enter(cfg.function(*callee).entry)?
                }
                Instruction::IndirectCall { reg } | Instruction::IndirectJump { reg } => {
                    let push = match ins {
                        Instruction::IndirectCall { .. } => {
                            Some(cfg.block(cfg.next_block(self.block).expect("validated")).start_addr)
                        }
                        _ => None,
                    };
                    let known = if self.track { self.regs[reg.index()] } else { None };
                    let alts: Vec<Alt> = match known {
                        Some(v) => vec![v],
                        None => self.ctx.itl.addrs().collect(),
                    }
                    .into_iter()
                    .filter(|&a| self.ctx.itl.contains(a) && self.count_of(a) > 0)
                    .map(|dest| Alt::Indirect { dest, push })
                    .collect();
                    return Ok(Stop::Choice(alts));
                }
                Instruction::Return => match self.stack.pop() {
                    None => false,
                    Some(ret) => {
                        self.log(Undo::Pop(ret));
                        self.m_b = self.measurer.step(self.m_b, ret);
                        self.transfer(ret)?
                    }
                },
                Instruction::Exit => {
                    if self.remaining != 0 {
                        return Ok(Stop::Dead);
                    }
                    self.exits += 1;
                    if self.m_f == self.report.m_f && self.m_b == self.report.m_b {
                        return Ok(Stop::Accept);
                    }
                    self.mismatch.get_or_insert((self.m_f, self.m_b));
                    return Ok(Stop::Dead);
                }
            };
            if !alive {
                return Ok(Stop::Dead);
            }
        }
    }

    fn next_instruction(&mut self) -> Result<bool, Budget> {
        let blk = self.ctx.cfg.block(self.block);
        if self.index + 1 < blk.instructions.len() {
            self.index += 1;
            return Ok(true);
        }
        self.enter(self.ctx.cfg.next_block(self.block).expect("validated"))
    }

    /// Hashes the state without measurements; a subtree that reaches no exit with every
    /// count consumed is dead regardless of the measurement values carried into it.
    fn count_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.block, self.index).hash(&mut h);
        self.regs.hash(&mut h);
        self.residual.hash(&mut h);
        self.stack.hash(&mut h);
        h.finish()
    }

    fn state_key(&self, count_key: u64) -> u64 {
        let mut h = DefaultHasher::new();
        (count_key, self.m_f, self.m_b).hash(&mut h);
        h.finish()
    }

    fn restore(&mut self, depth: usize) {
        let f = &self.frames[depth];
        let (trail_len, block, index, m_f, m_b, path_len) = (f.trail_len, f.block, f.index, f.m_f, f.m_b, f.path_len);
        while self.trail.len() > trail_len {
            match self.trail.pop().expect("non-empty") {
                Undo::Residual(s) => {
                    self.residual[s] += 1;
                    self.remaining += 1;
                }
                Undo::Reg(r, old) => self.regs[r] = old,
                Undo::Push => {
                    self.stack.pop();
                }
                Undo::Pop(a) => self.stack.push(a),
            }
        }
        self.block = block;
        self.index = index;
        self.m_f = m_f;
        self.m_b = m_b;
        self.path.truncate(path_len);
    }

    /// Resumes at the next untried alternative; `None` when the search space is exhausted.
    fn backtrack(&mut self) -> Option<Alt> {
        while let Some(depth) = self.frames.len().checked_sub(1) {
            let f = &mut self.frames[depth];
            if f.next < f.alts.len() {
                let alt = f.alts[f.next];
                f.next += 1;
                let last = f.next == f.alts.len();
                self.restore(depth);
                if last {
                    self.close_one();
                }
                return Some(alt);
            }
            if f.exits_at == self.exits {
                let key = f.dead_key;
                self.dead.insert(key);
            } else {
                let key = f.key;
                self.memo.insert(key);
            }
            self.frames.pop();
        }
        None
    }

    fn close_one(&mut self) {
        self.open -= 1;
        if self.open == 0 {
            self.trail.clear();
        }
    }

    fn run(mut self) -> Verdict {
        match self.search() {
            Ok(true) => Verdict {
                accepted: true,
                reason: Reason::Ok,
                m_f: Some(self.m_f),
                m_b: Some(self.m_b),
                nodes_expanded: self.nodes,
                witness: Some(self.path.iter().map(|&b| self.ctx.cfg.block(b).start_addr).collect()),
            },
            Ok(false) => Verdict {
                accepted: false,
                reason: if self.mismatch.is_some() { Reason::MeasurementMismatch } else { Reason::TraceMismatch },
                m_f: self.mismatch.map(|m| m.0),
                m_b: self.mismatch.map(|m| m.1),
                nodes_expanded: self.nodes,
                witness: None,
            },
            Err(Budget) => Verdict {
                accepted: false,
                reason: Reason::SearchExhausted,
                m_f: None,
                m_b: None,
                nodes_expanded: self.nodes.min(self.ctx.options.budget),
                witness: None,
            },
        }
    }

    fn search(&mut self) -> Result<bool, Budget> {
        let mut alive = self.enter(self.ctx.cfg.entry)?;
        loop {
            if alive {
                match self.advance()? {
                    Stop::Accept => return Ok(true),
                    Stop::Dead => alive = false,
                    Stop::Choice(alts) => match alts.len() {
                        0 => alive = false,
                        1 => alive = self.apply(alts[0])?,
                        _ => {
                            let dead_key = self.count_key();
                            let key = self.state_key(dead_key);
                            if self.dead.contains(&dead_key) {
                                alive = false;
                            } else if self.memo.contains(&key) {
                                self.exits += 1;
                                alive = false;
                            } else {
                                let first = alts[0];
                                self.open += 1;
                                self.frames.push(Frame {
                                    key,
                                    trail_len: self.trail.len(),
                                    block: self.block,
                                    index: self.index,
                                    m_f: self.m_f,
                                    m_b: self.m_b,
                                    path_len: self.path.len(),
                                    alts,
                                    next: 1,
                                    dead_key,
                                    exits_at: self.exits,
                                });
                                alive = self.apply(first)?;
                            }
                        }
                    },
                }
            } else {
                match self.backtrack() {
                    Some(alt) => alive = self.apply(alt)?,
                    None => return Ok(false),
                }
            }
        }
    }
}

pub const ORACLE_MAX_BLOCKS: usize = 12;
pub const ORACLE_MAX_EVENTS: u64 = 10_000;
pub const ORACLE_BUDGET: u64 = 2_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle precondition: {0}")]
    Precondition(String),
    #[error("oracle-budget-exceeded")]
    BudgetExceeded,
}

/// Brute-force reference: enumerates every CFG path (all branches free, any listed
/// indirect target) consistent with the counts, without memoization, and reports
/// whether one of them reproduces both measurements.
pub fn enumerate_paths_oracle(ctx: &VerifierContext<'_>, report: &AttestationReport) -> Result<bool, OracleError> {
    let cfg = ctx.cfg;
    if cfg.blocks.len() > ORACLE_MAX_BLOCKS {
        return Err(OracleError::Precondition(format!("{} blocks > {ORACLE_MAX_BLOCKS}", cfg.blocks.len())));
    }
    if report.trace.total() > ORACLE_MAX_EVENTS {
        return Err(OracleError::Precondition(format!("{} events > {ORACLE_MAX_EVENTS}", report.trace.total())));
    }
    if !report.signature_valid(&ctx.keys.k_a) || report.nonce != ctx.expected_nonce || !report.trace.illegal.is_empty() {
        return Ok(false);
    }
    let measurer = Measurer::new(&ctx.keys.k_m);

    #[derive(Clone)]
    struct St {
        block: BlockId,
        index: usize,
        fresh: bool,
        counts: BTreeMap<Addr, u64>,
        stack: Vec<Addr>,
        m_f: u32,
        m_b: u32,
    }

    fn goto(cfg: &ProgramCfg, mut st: St, addr: Addr) -> Option<St> {
        if let Some(b) = cfg.block_at_start(addr) {
            st.block = b;
            st.index = 0;
            st.fresh = true;
        } else {
            let (b, i) = cfg.locate(addr)?;
            st.block = b;
            st.index = i;
            st.fresh = false;
        }
        Some(st)
    }

    let mut work = vec![St {
        block: cfg.entry,
        index: 0,
        fresh: true,
        counts: report.trace.counts.clone(),
        stack: Vec::new(),
        m_f: 0,
        m_b: 0,
    }];
    let mut expanded = 0u64;
    while let Some(mut st) = work.pop() {
        expanded += 1;
        if expanded > ORACLE_BUDGET {
            return Err(OracleError::BudgetExceeded);
        }
        let blk = cfg.block(st.block);
        if st.fresh && ctx.plan.is_direct(st.block) {
            match st.counts.get_mut(&blk.start_addr) {
                Some(c) if *c > 0 => *c -= 1,
                _ => continue,
            }
            st.m_f = measurer.step(st.m_f, blk.start_addr);
        }
        let last = blk.instructions.len() - 1;
        let term = &blk.instructions[last];
        let next_start = cfg.next_block(st.block).map(|n| cfg.block(n).start_addr);
        match term {
            Instruction::CondBranch { target, .. } => {
                for dest in [cfg.block(*target).start_addr, next_start.expect("validated")] {
                    work.extend(goto(cfg, st.clone(), dest));
                }
            }
            Instruction::DirectJump { target } => work.extend(goto(cfg, st, cfg.block(*target).start_addr)),
            Instruction::Call { callee } => {
                if st.stack.len() < ctx.options.max_stack {
                    st.stack.push(next_start.expect("validated"));
                    let entry = cfg.block(cfg.function(*callee).entry).start_addr;
                    work.extend(goto(cfg, st, entry));
                }
            }
            Instruction::IndirectCall { .. } | Instruction::IndirectJump { .. } => {
                let is_call = matches!(term, Instruction::IndirectCall { .. });
                for dest in ctx.itl.addrs() {
                    let mut s = st.clone();
                    match s.counts.get_mut(&dest) {
                        Some(c) if *c > 0 => *c -= 1,
                        _ => continue,
                    }
                    s.m_f = measurer.step(s.m_f, dest);
                    if is_call {
                        if s.stack.len() >= ctx.options.max_stack {
                            continue;
                        }
                        s.stack.push(next_start.expect("validated"));
                    }
                    work.extend(goto(cfg, s, dest));
                }
            }
            Instruction::Return => {
                if let Some(ret) = st.stack.pop() {
                    st.m_b = measurer.step(st.m_b, ret);
                    work.extend(goto(cfg, st, ret));
                }
            }
            Instruction::Exit => {
                if st.counts.values().all(|&c| c == 0) && st.m_f == report.m_f && st.m_b == report.m_b {
                    return Ok(true);
                }
            }
            _ => work.extend(next_start.and_then(|a| goto(cfg, st, a))),
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Inputs;
    use crate::instrument::{build_itl, plan_instrumentation};
    use crate::ir::{compute_dominators, Reg};
    use crate::prover::{execute, sign_report, Attestation, ProverConfig};

    struct Fixture {
        cfg: ProgramCfg,
        plan: InstrumentationPlan,
        itl: IndirectTargetList,
        keys: Keys,
    }

    impl Fixture {
        fn new(text: &str) -> Fixture {
            let cfg = ProgramCfg::load(text).unwrap();
            let dom = compute_dominators(&cfg);
            let plan = plan_instrumentation(&cfg, &dom);
            let itl = build_itl(&cfg, &[]).unwrap();
            Fixture { cfg, plan, itl, keys: Keys::from_bytes(&[5u8; 48]).unwrap() }
        }

        fn attest(&self, inputs: &Inputs) -> AttestationReport {
            let att = Attestation { cfg: &self.cfg, plan: &self.plan, itl: &self.itl, keys: &self.keys };
            let run = execute(&att, [1; 16], inputs, &ProverConfig::default()).unwrap();
            assert_eq!(run.fault, None);
            run.report
        }

        fn ctx(&self, data: DataMode) -> VerifierContext<'_> {
            VerifierContext {
                cfg: &self.cfg,
                plan: &self.plan,
                itl: &self.itl,
                keys: &self.keys,
                expected_nonce: [1; 16],
                options: VerifyOptions { data, ..VerifyOptions::default() },
            }
        }
    }

    const LOOP: &str = "func main { block init: set r1 = 0\n block cond: cbr done if r1 >= r0\n \
                        block body: cbr odd if r1 == 3\n block even: compute r1 = r1 + 1; jmp cond\n \
                        block odd: compute r1 = r1 + 1; call f\n block back: jmp cond\n block done: exit }\n\
                        func f { block x: ret }";

    #[test]
    fn accepts_honest_reports_in_every_mode() {
        let fx = Fixture::new(LOOP);
        let inputs = Inputs::from([(Reg(0), 6)]);
        let report = fx.attest(&inputs);
        for mode in [DataMode::CfgOnly, DataMode::Constants, DataMode::Inputs(inputs.clone())] {
            let v = verify(&report, &fx.ctx(mode.clone()));
            assert!(v.accepted, "{mode:?}: {v:?}");
            assert_eq!((v.m_f, v.m_b), (Some(report.m_f), Some(report.m_b)));
            assert!(!v.witness.unwrap().is_empty());
        }
        assert_eq!(enumerate_paths_oracle(&fx.ctx(DataMode::CfgOnly), &report), Ok(true));
    }

    #[test]
    fn rejects_tampered_counts() {
        let fx = Fixture::new(LOOP);
        let report = fx.attest(&Inputs::from([(Reg(0), 6)]));
        let body = fx.cfg.block(fx.cfg.block_by_label("body").unwrap()).start_addr;
        let mut trace = report.trace.clone();
        *trace.counts.get_mut(&body).unwrap() -= 1;
        let forged = sign_report(
            trace,
            crate::prover::MeasurementState { m_f: report.m_f, m_b: report.m_b },
            report.nonce,
            &fx.keys.k_a,
        );
        let v = verify(&forged, &fx.ctx(DataMode::Constants));
        assert!(!v.accepted);
        assert!(matches!(v.reason, Reason::TraceMismatch | Reason::MeasurementMismatch));
        assert_eq!(enumerate_paths_oracle(&fx.ctx(DataMode::CfgOnly), &forged), Ok(false));
    }

    #[test]
    fn early_rejections() {
        let fx = Fixture::new(LOOP);
        let report = fx.attest(&Inputs::from([(Reg(0), 2)]));
        let mut bad = report.clone();
        bad.signature[0] ^= 1;
        assert_eq!(verify(&bad, &fx.ctx(DataMode::Constants)).reason, Reason::BadSignature);
        let mut ctx = fx.ctx(DataMode::Constants);
        ctx.expected_nonce = [2; 16];
        assert_eq!(verify(&report, &ctx).reason, Reason::StaleNonce);
        let mut trace = report.trace.clone();
        trace.illegal.push(0x1000_0002);
        let with_illegal = sign_report(
            trace,
            crate::prover::MeasurementState { m_f: report.m_f, m_b: report.m_b },
            report.nonce,
            &fx.keys.k_a,
        );
        let v = verify(&with_illegal, &fx.ctx(DataMode::Constants));
        assert_eq!((v.reason, v.nodes_expanded), (Reason::IllegalTargets, 0));
    }

    #[test]
    fn exit_entry_program_with_empty_trace() {
        let fx = Fixture::new("func main { block a: exit }");
        let report = fx.attest(&Inputs::new());
        assert!(verify(&report, &fx.ctx(DataMode::CfgOnly)).accepted);
        assert_eq!(enumerate_paths_oracle(&fx.ctx(DataMode::CfgOnly), &report), Ok(true));
    }

    #[test]
    fn budget_yields_search_exhausted() {
        let fx = Fixture::new(LOOP);
        let report = fx.attest(&Inputs::from([(Reg(0), 6)]));
        let mut ctx = fx.ctx(DataMode::CfgOnly);
        ctx.options.budget = 3;
        let v = verify(&report, &ctx);
        assert_eq!(v.reason, Reason::SearchExhausted);
        assert_eq!(v.nodes_expanded, 3);
    }

    #[test]
    fn input_mode_detects_data_inconsistent_path() {
        let fx = Fixture::new(LOOP);
        let report = fx.attest(&Inputs::from([(Reg(0), 6)]));
        let v = verify(&report, &fx.ctx(DataMode::Inputs(Inputs::from([(Reg(0), 5)]))));
        assert!(!v.accepted);
        assert!(verify(&report, &fx.ctx(DataMode::Constants)).accepted);
    }
}
