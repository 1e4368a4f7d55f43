use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::{parse_program, InstrSource, ProgramSource, SetSource};
use super::{Addr, BlockId, Dest, FuncId, Instruction, DEFAULT_BASE, INSTR_BYTES};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid program: {0}")]
    Validation(#[from] ValidationError),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("duplicate block label `{label}` in function `{func}`")]
    DuplicateLabel { func: String, label: String },
    #[error("duplicate block address {0:#010x}")]
    DuplicateAddress(Addr),
    #[error("block `{first}` overlaps block `{second}` at {addr:#010x}")]
    Overlap { first: String, second: String, addr: Addr },
    #[error("branch in `{func}` targets nonexistent block `{label}`")]
    DanglingTarget { func: String, label: String },
    #[error("call to unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`@{symbol}` in `{func}` names neither a block nor a function")]
    UnknownSymbol { func: String, symbol: String },
    #[error("unknown entry function `{0}`")]
    UnknownEntry(String),
    #[error("terminator in block `{func}:{label}` is not its last instruction")]
    MisplacedTerminator { func: String, label: String },
    #[error("block `{func}:{label}` falls through past the end of its function")]
    MissingFallthrough { func: String, label: String },
    #[error("block `{func}:{label}` is unreachable from its function entry")]
    UnreachableBlock { func: String, label: String },
    #[error("block `{func}:{label}` is empty")]
    EmptyBlock { func: String, label: String },
    #[error("function `{0}` has no blocks")]
    EmptyFunction(String),
    #[error("program has no functions")]
    NoFunctions,
    #[error("program has no exit block")]
    MissingExit,
    #[error("block `{func}:{label}` does not fit in the 32-bit address space")]
    AddressOverflow { func: String, label: String },
}

impl ValidationError {
    /// Short identifier of the violated invariant.
    pub fn rule(&self) -> &'static str {
        match self {
            ValidationError::DuplicateFunction(_) => "duplicate-function",
            ValidationError::DuplicateLabel { .. } => "duplicate-label",
            ValidationError::DuplicateAddress(_) => "duplicate-address",
            ValidationError::Overlap { .. } => "overlapping-blocks",
            ValidationError::DanglingTarget { .. } => "dangling-target",
            ValidationError::UnknownFunction(_) => "unknown-function",
            ValidationError::UnknownSymbol { .. } => "unknown-symbol",
            ValidationError::UnknownEntry(_) => "unknown-entry",
            ValidationError::MisplacedTerminator { .. } => "misplaced-terminator",
            ValidationError::MissingFallthrough { .. } => "missing-fallthrough",
            ValidationError::UnreachableBlock { .. } => "unreachable-block",
            ValidationError::EmptyBlock { .. } => "empty-block",
            ValidationError::EmptyFunction(_) => "empty-function",
            ValidationError::NoFunctions => "no-functions",
            ValidationError::MissingExit => "missing-exit",
            ValidationError::AddressOverflow { .. } => "address-overflow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    CondTaken,
    CondFallthrough,
    Jump,
    /// Sequential flow into the next block, including the continuation after a call.
    Fallthrough,
    Call,
    Indirect,
    Return,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: BlockId,
    pub dst: BlockId,
    pub src_addr: Addr,
    pub dst_addr: Addr,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub func: FuncId,
    pub label: String,
    pub start_addr: Addr,
    pub end_addr: Addr,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.instructions.last().filter(|i| i.is_terminator())
    }

    pub fn instr_addr(&self, index: usize) -> Addr {
        self.start_addr + INSTR_BYTES * index as Addr
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub id: FuncId,
    pub name: String,
    pub entry: BlockId,
    /// Blocks in declaration order.
    pub blocks: Vec<BlockId>,
    /// Intra-function edges (conditional, jump, fallthrough, indirect jump).
    pub edges: Vec<Edge>,
}

/// Validated interprocedural control-flow graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramCfg {
    pub functions: Vec<Function>,
    pub blocks: Vec<BasicBlock>,
    /// Call, indirect-call and return edges.
    pub interproc_edges: Vec<Edge>,
    pub entry: BlockId,
    pub exits: Vec<BlockId>,
    address_taken_blocks: BTreeSet<BlockId>,
    address_taken_funcs: BTreeSet<FuncId>,
    by_start: BTreeMap<Addr, BlockId>,
    succs: Vec<Vec<(BlockId, EdgeKind)>>,
    preds: Vec<Vec<(BlockId, EdgeKind)>>,
}

impl ProgramCfg {
    /// Parses, lays out and validates program text.
    pub fn load(text: &str) -> Result<ProgramCfg, LoadError> {
        let src = parse_program(text)?;
        Ok(ProgramCfg::build(&src)?)
    }

    pub fn build(src: &ProgramSource) -> Result<ProgramCfg, ValidationError> {
        if src.functions.is_empty() {
            return Err(ValidationError::NoFunctions);
        }
        let mut func_ids: HashMap<&str, FuncId> = HashMap::new();
        for (i, f) in src.functions.iter().enumerate() {
            if func_ids.insert(f.name.as_str(), FuncId(i as u32)).is_some() {
                return Err(ValidationError::DuplicateFunction(f.name.clone()));
            }
            if f.blocks.is_empty() {
                return Err(ValidationError::EmptyFunction(f.name.clone()));
            }
        }

        // Layout and label tables.
        let mut labels: Vec<HashMap<&str, BlockId>> = Vec::new();
        let mut layout: Vec<(FuncId, &str, Addr, Addr)> = Vec::new();
        let mut cursor: u64 = DEFAULT_BASE as u64;
        for (fi, f) in src.functions.iter().enumerate() {
            let mut table = HashMap::new();
            for b in &f.blocks {
                let id = BlockId(layout.len() as u32);
                if table.insert(b.label.as_str(), id).is_some() {
                    return Err(ValidationError::DuplicateLabel { func: f.name.clone(), label: b.label.clone() });
                }
                if b.instrs.is_empty() {
                    return Err(ValidationError::EmptyBlock { func: f.name.clone(), label: b.label.clone() });
                }
                let start = b.addr.map(u64::from).unwrap_or(cursor);
                let end = start + (INSTR_BYTES as u64) * (b.instrs.len() as u64 - 1);
                if end > u32::MAX as u64 {
                    return Err(ValidationError::AddressOverflow { func: f.name.clone(), label: b.label.clone() });
                }
                layout.push((FuncId(fi as u32), b.label.as_str(), start as Addr, end as Addr));
                cursor = end + INSTR_BYTES as u64;
            }
            labels.push(table);
        }

        let mut by_start = BTreeMap::new();
        for (i, &(_, _, start, _)) in layout.iter().enumerate() {
            if by_start.insert(start, BlockId(i as u32)).is_some() {
                return Err(ValidationError::DuplicateAddress(start));
            }
        }
        let mut prev: Option<(usize, Addr)> = None;
        for (&start, &id) in &by_start {
            if let Some((p, end)) = prev {
                if start <= end {
                    let name = |i: usize| {
                        let (f, l, _, _) = layout[i];
                        format!("{}:{}", src.functions[f.index()].name, l)
                    };
                    return Err(ValidationError::Overlap { first: name(p), second: name(id.index()), addr: start });
                }
            }
            prev = Some((id.index(), layout[id.index()].3));
        }

        // Resolve instructions.
        let mut blocks = Vec::with_capacity(layout.len());
        let mut address_taken_blocks = BTreeSet::new();
        let mut address_taken_funcs = BTreeSet::new();
        let mut functions = Vec::new();
        for (fi, f) in src.functions.iter().enumerate() {
            let fid = FuncId(fi as u32);
            let table = &labels[fi];
            let mut ids = Vec::new();
            for b in &f.blocks {
                let id = table[b.label.as_str()];
                let block_target = |label: &String| {
                    table
                        .get(label.as_str())
                        .copied()
                        .ok_or_else(|| ValidationError::DanglingTarget { func: f.name.clone(), label: label.clone() })
                };
                let mut instructions = Vec::with_capacity(b.instrs.len());
                for (k, ins) in b.instrs.iter().enumerate() {
                    let resolved = match ins {
                        InstrSource::Compute(assign) => Instruction::Compute { assign: *assign },
                        InstrSource::LoopHint => Instruction::LoopHeaderHint,
                        InstrSource::Set { dest, value: SetSource::Imm(v) } => {
                            Instruction::SetReg { dest: *dest, value: *v, symbol: None }
                        }
                        InstrSource::Set { dest, value: SetSource::Symbol(sym) } => {
                            let value = if let Some(&bid) = table.get(sym.as_str()) {
                                address_taken_blocks.insert(bid);
                                layout[bid.index()].2
                            } else if let Some(&callee) = func_ids.get(sym.as_str()) {
                                address_taken_funcs.insert(callee);
                                let entry = labels[callee.index()][src.functions[callee.index()].blocks[0].label.as_str()];
                                layout[entry.index()].2
                            } else {
                                return Err(ValidationError::UnknownSymbol { func: f.name.clone(), symbol: sym.clone() });
                            };
                            Instruction::SetReg { dest: *dest, value, symbol: Some(sym.clone()) }
                        }
                        InstrSource::Cbr { target, cond } => {
                            Instruction::CondBranch { target: block_target(target)?, cond: *cond }
                        }
                        InstrSource::Jmp(target) => Instruction::DirectJump { target: block_target(target)? },
                        InstrSource::Call(name) => Instruction::Call {
                            callee: *func_ids
                                .get(name.as_str())
                                .ok_or_else(|| ValidationError::UnknownFunction(name.clone()))?,
                        },
                        InstrSource::ICall(r) => Instruction::IndirectCall { reg: *r },
                        InstrSource::IJmp(r) => Instruction::IndirectJump { reg: *r },
                        InstrSource::Ret => Instruction::Return,
                        InstrSource::Exit => Instruction::Exit,
                    };
                    if resolved.is_terminator() && k + 1 != b.instrs.len() {
                        return Err(ValidationError::MisplacedTerminator { func: f.name.clone(), label: b.label.clone() });
                    }
                    instructions.push(resolved);
                }
                let (_, label, start, end) = layout[id.index()];
                blocks.push(BasicBlock {
                    id,
                    func: fid,
                    label: label.to_string(),
                    start_addr: start,
                    end_addr: end,
                    instructions,
                });
                ids.push(id);
            }
            functions.push(Function { id: fid, name: f.name.clone(), entry: ids[0], blocks: ids, edges: Vec::new() });
        }

        let entry_func = match &src.entry {
            Some(name) => *func_ids.get(name.as_str()).ok_or_else(|| ValidationError::UnknownEntry(name.clone()))?,
            None => func_ids.get("main").copied().unwrap_or(FuncId(0)),
        };

        // Edges.
        let edge = |blocks: &[BasicBlock], s: BlockId, d: BlockId, kind| Edge {
            src: s,
            dst: d,
            src_addr: blocks[s.index()].end_addr,
            dst_addr: blocks[d.index()].start_addr,
            kind,
        };
        let mut interproc_edges = Vec::new();
        let mut call_sites: Vec<Vec<BlockId>> = vec![Vec::new(); functions.len()];
        let mut icall_sites: Vec<BlockId> = Vec::new();
        for fi in 0..functions.len() {
            let ids = functions[fi].blocks.clone();
            let mut edges = Vec::new();
            for (pos, &b) in ids.iter().enumerate() {
                let next = ids.get(pos + 1).copied();
                let blk = &blocks[b.index()];
                let need_next = || {
                    next.ok_or_else(|| ValidationError::MissingFallthrough {
                        func: functions[fi].name.clone(),
                        label: blk.label.clone(),
                    })
                };
                match blk.terminator() {
                    Some(Instruction::CondBranch { target, .. }) => {
                        let n = need_next()?;
                        edges.push(edge(&blocks, b, *target, EdgeKind::CondTaken));
                        edges.push(edge(&blocks, b, n, EdgeKind::CondFallthrough));
                    }
                    Some(Instruction::DirectJump { target }) => edges.push(edge(&blocks, b, *target, EdgeKind::Jump)),
                    Some(Instruction::Call { callee }) => {
                        let n = need_next()?;
                        edges.push(edge(&blocks, b, n, EdgeKind::Fallthrough));
                        let e = functions[callee.index()].entry;
                        interproc_edges.push(edge(&blocks, b, e, EdgeKind::Call));
                        call_sites[callee.index()].push(b);
                    }
                    Some(Instruction::IndirectCall { .. }) => {
                        let n = need_next()?;
                        edges.push(edge(&blocks, b, n, EdgeKind::Fallthrough));
                        for callee in &address_taken_funcs {
                            let e = functions[callee.index()].entry;
                            interproc_edges.push(edge(&blocks, b, e, EdgeKind::Indirect));
                        }
                        icall_sites.push(b);
                    }
                    Some(Instruction::IndirectJump { .. }) => {
                        for &t in &ids {
                            if address_taken_blocks.contains(&t) {
                                edges.push(edge(&blocks, b, t, EdgeKind::Indirect));
                            }
                        }
                    }
                    Some(Instruction::Return) | Some(Instruction::Exit) => {}
                    _ => {
                        let n = need_next()?;
                        edges.push(edge(&blocks, b, n, EdgeKind::Fallthrough));
                    }
                }
            }
            functions[fi].edges = edges;
        }
        for f in &functions {
            let mut sites = call_sites[f.id.index()].clone();
            if address_taken_funcs.contains(&f.id) {
                sites.extend(icall_sites.iter().copied());
            }
            sites.sort();
            sites.dedup();
            for &b in &f.blocks {
                if !matches!(blocks[b.index()].terminator(), Some(Instruction::Return)) {
                    continue;
                }
                for &site in &sites {
                    let cont = next_in(&functions[blocks[site.index()].func.index()], site).expect("call has continuation");
                    interproc_edges.push(edge(&blocks, b, cont, EdgeKind::Return));
                }
            }
        }

        let mut succs = vec![Vec::new(); blocks.len()];
        let mut preds = vec![Vec::new(); blocks.len()];
        for f in &functions {
            for e in &f.edges {
                succs[e.src.index()].push((e.dst, e.kind));
                preds[e.dst.index()].push((e.src, e.kind));
            }
        }

        // Reachability within each function.
        for f in &functions {
            let mut seen = BTreeSet::from([f.entry]);
            let mut queue = VecDeque::from([f.entry]);
            while let Some(b) = queue.pop_front() {
                for &(s, _) in &succs[b.index()] {
                    if seen.insert(s) {
                        queue.push_back(s);
                    }
                }
            }
            if let Some(&b) = f.blocks.iter().find(|b| !seen.contains(b)) {
                return Err(ValidationError::UnreachableBlock {
                    func: f.name.clone(),
                    label: blocks[b.index()].label.clone(),
                });
            }
        }

        let exits: Vec<BlockId> = blocks
            .iter()
            .filter(|b| matches!(b.terminator(), Some(Instruction::Exit)))
            .map(|b| b.id)
            .collect();
        if exits.is_empty() {
            return Err(ValidationError::MissingExit);
        }

        Ok(ProgramCfg {
            entry: functions[entry_func.index()].entry,
            functions,
            blocks,
            interproc_edges,
            exits,
            address_taken_blocks,
            address_taken_funcs,
            by_start,
            succs,
            preds,
        })
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.index()]
    }

    pub fn function(&self, id: FuncId) -> &Function {
        &self.functions[id.index()]
    }

    pub fn function_by_name(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Looks a block up by `label` (searched in every function) or `func:label`.
    pub fn block_by_label(&self, name: &str) -> Option<BlockId> {
        if let Some((f, l)) = name.split_once(':') {
            let f = self.function_by_name(f)?;
            return f.blocks.iter().copied().find(|&b| self.block(b).label == l);
        }
        self.blocks.iter().find(|b| b.label == name).map(|b| b.id)
    }

    pub fn block_at_start(&self, addr: Addr) -> Option<BlockId> {
        self.by_start.get(&addr).copied()
    }

    /// Block and instruction index of an instruction address (start of some instruction).
    pub fn locate(&self, addr: Addr) -> Option<(BlockId, usize)> {
        let (&start, &id) = self.by_start.range(..=addr).next_back()?;
        let b = self.block(id);
        let off = addr - start;
        (addr <= b.end_addr && off.is_multiple_of(INSTR_BYTES)).then_some((id, (off / INSTR_BYTES) as usize))
    }

    /// Intra-function successors.
    pub fn succs(&self, b: BlockId) -> &[(BlockId, EdgeKind)] {
        &self.succs[b.index()]
    }

    /// Intra-function predecessors.
    pub fn preds(&self, b: BlockId) -> &[(BlockId, EdgeKind)] {
        &self.preds[b.index()]
    }

    /// Next block of the same function in declaration order.
    pub fn next_block(&self, b: BlockId) -> Option<BlockId> {
        next_in(self.function(self.block(b).func), b)
    }

    pub fn is_address_taken_block(&self, b: BlockId) -> bool {
        self.address_taken_blocks.contains(&b)
    }

    pub fn is_address_taken_func(&self, f: FuncId) -> bool {
        self.address_taken_funcs.contains(&f)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.functions.iter().flat_map(|f| f.edges.iter()).chain(self.interproc_edges.iter())
    }

    pub fn num_edges(&self) -> usize {
        self.functions.iter().map(|f| f.edges.len()).sum::<usize>() + self.interproc_edges.len()
    }

    /// Renders an instruction back to source syntax.
    pub fn render_instruction(&self, ins: &Instruction) -> String {
        match ins {
            Instruction::Compute { assign: None } => "compute".into(),
            Instruction::Compute { assign: Some((d, e)) } => format!("compute {d} = {e}"),
            Instruction::SetReg { dest, symbol: Some(s), .. } => format!("set {dest} = @{s}"),
            Instruction::SetReg { dest, value, symbol: None } => format!("set {dest} = {value:#x}"),
            Instruction::LoopHeaderHint => "loophint".into(),
            Instruction::CondBranch { target, cond } => format!("cbr {} if {cond}", self.block(*target).label),
            Instruction::DirectJump { target } => format!("jmp {}", self.block(*target).label),
            Instruction::Call { callee } => format!("call {}", self.function(*callee).name),
            Instruction::IndirectCall { reg } => format!("icall {reg}"),
            Instruction::IndirectJump { reg } => format!("ijmp {reg}"),
            Instruction::Return => "ret".into(),
            Instruction::Exit => "exit".into(),
        }
    }

    /// Source text with every block address pinned; reloading it yields an identical CFG.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "entry {}", self.function(self.block(self.entry).func).name);
        for f in &self.functions {
            let _ = writeln!(out, "func {} {{", f.name);
            for &b in &f.blocks {
                let blk = self.block(b);
                let body: Vec<String> = blk.instructions.iter().map(|i| self.render_instruction(i)).collect();
                let _ = writeln!(out, "  block {} @{:#x}: {}", blk.label, blk.start_addr, body.join("; "));
            }
            out.push_str("}\n");
        }
        out
    }

    pub fn export(&self) -> CfgExport {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockExport {
                function: self.function(b.func).name.clone(),
                label: b.label.clone(),
                start: b.start_addr,
                end: b.end_addr,
                instructions: b.instructions.iter().map(|i| self.render_instruction(i)).collect(),
            })
            .collect();
        let mut edges: Vec<EdgeExport> = self
            .edges()
            .map(|e| EdgeExport { src: e.src_addr, dst: e.dst_addr, kind: e.kind })
            .collect();
        edges.sort();
        CfgExport {
            entry: self.block(self.entry).start_addr,
            exits: self.exits.iter().map(|&b| self.block(b).start_addr).collect(),
            functions: self
                .functions
                .iter()
                .map(|f| FunctionExport {
                    name: f.name.clone(),
                    entry: self.block(f.entry).start_addr,
                })
                .collect(),
            blocks,
            edges,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.export()).expect("cfg export serializes")
    }

    /// SHA-256 of the canonical JSON export.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }

    /// True if any instruction writes `dest`.
    pub fn writes(&self, dest: Dest) -> bool {
        self.blocks.iter().any(|b| b.instructions.iter().any(|i| i.written() == Some(dest)))
    }
}

fn next_in(f: &Function, b: BlockId) -> Option<BlockId> {
    let pos = f.blocks.iter().position(|&x| x == b)?;
    f.blocks.get(pos + 1).copied()
}

#[derive(Clone, Debug, Serialize)]
pub struct CfgExport {
    pub entry: Addr,
    pub exits: Vec<Addr>,
    pub functions: Vec<FunctionExport>,
    pub blocks: Vec<BlockExport>,
    pub edges: Vec<EdgeExport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionExport {
    pub name: String,
    pub entry: Addr,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockExport {
    pub function: String,
    pub label: String,
    pub start: Addr,
    pub end: Addr,
    pub instructions: Vec<String>,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq, PartialOrd, Ord)]
pub struct EdgeExport {
    pub src: Addr,
    pub dst: Addr,
    pub kind: EdgeKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> ValidationError {
        match ProgramCfg::load(text) {
            Err(LoadError::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn single_block_program() {
        let cfg = ProgramCfg::load("func main { block a: compute; exit }").unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.num_edges(), 0);
        assert_eq!(cfg.exits, vec![BlockId(0)]);
        assert_eq!(cfg.block(BlockId(0)).start_addr, DEFAULT_BASE);
        assert_eq!(cfg.block(BlockId(0)).end_addr, DEFAULT_BASE + 4);
    }

    #[test]
    fn layout_is_sequential_unless_pinned() {
        let cfg = ProgramCfg::load(
            "func main { block a: compute; compute\n block b @0x2000: compute\n block c: exit }",
        )
        .unwrap();
        let starts: Vec<Addr> = cfg.blocks.iter().map(|b| b.start_addr).collect();
        assert_eq!(starts, vec![DEFAULT_BASE, 0x2000, 0x2004]);
        assert_eq!(cfg.locate(DEFAULT_BASE + 4), Some((BlockId(0), 1)));
        assert_eq!(cfg.locate(DEFAULT_BASE + 2), None);
        assert_eq!(cfg.locate(0x2008), None);
    }

    #[test]
    fn validation_errors_name_the_invariant() {
        assert_eq!(err("func main { block a: jmp nowhere }").rule(), "dangling-target");
        assert_eq!(err("func main { block a: call g; block b: exit }").rule(), "unknown-function");
        assert_eq!(err("func main { block a: compute }").rule(), "missing-fallthrough");
        assert_eq!(err("func main { block a: ret }").rule(), "missing-exit");
        assert_eq!(err("func main { block a: exit\n block b: exit }").rule(), "unreachable-block");
        assert_eq!(err("func main { block a @0x10: exit\n block b @0x10: exit }").rule(), "duplicate-address");
        assert_eq!(err("func main { block a @0x10: compute; jmp b\n block b @0x14: exit }").rule(), "overlapping-blocks");
        assert_eq!(err("func main { block a: exit; compute }").rule(), "misplaced-terminator");
        assert_eq!(err("func main { block a: exit\n block a: exit }").rule(), "duplicate-label");
    }

    #[test]
    fn call_and_return_edges() {
        let cfg = ProgramCfg::load(
            "func main { block a: call f\n block b: set r1 = @f; icall r1\n block c: exit }\n\
             func f { block x: ret }",
        )
        .unwrap();
        let kinds: Vec<EdgeKind> = cfg.interproc_edges.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EdgeKind::Call, EdgeKind::Indirect, EdgeKind::Return, EdgeKind::Return]);
        let ret_dsts: BTreeSet<Addr> = cfg
            .interproc_edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Return)
            .map(|e| e.dst_addr)
            .collect();
        assert_eq!(ret_dsts, BTreeSet::from([cfg.block(BlockId(1)).start_addr, cfg.block(BlockId(2)).start_addr]));
    }

    #[test]
    fn indirect_jump_targets_address_taken_blocks() {
        let cfg = ProgramCfg::load(
            "func main { block a: set r1 = @c; ijmp r1\n block b: exit\n block c: jmp b }",
        )
        .unwrap();
        assert_eq!(cfg.succs(BlockId(0)), &[(BlockId(2), EdgeKind::Indirect)]);
    }

    #[test]
    fn source_round_trip_is_identical() {
        let text = "func main { block a: cbr b if r0 > 3\n block c: call f; \n block b: exit }\n func f { block x: ret }";
        let cfg = ProgramCfg::load(text).unwrap();
        let again = ProgramCfg::load(&cfg.to_source()).unwrap();
        assert_eq!(cfg.to_json(), again.to_json());
        assert_eq!(cfg, again);
    }
}
