//! Comparison authenticators built from an execution log, with byte-size accounting.
//!
//! Encodings: 4-byte addresses, hashes and path numbers, 8-byte occurrence counts,
//! one bit per conditional decision (rounded up to whole bytes).

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{EventKind, ExecutionLog};
use crate::ir::{ball_larus_number, Addr, BallLarusError, BallLarusNumbering, BlockId, DominatorInfo, EdgeKind, FuncId, ProgramCfg};
use crate::prover::OccurrenceTrace;

/// First four bytes (little-endian) of SHA-256 over the little-endian word.
pub fn h32(x: u32) -> u32 {
    let d = Sha256::digest(x.to_le_bytes());
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SchemeError {
    #[error("execution log has no recorded events")]
    NotRecorded,
    #[error("transfer into the middle of a block at {0:#010x}")]
    MidBlock(Addr),
    #[error(transparent)]
    BallLarus(#[from] BallLarusError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NaiveAuth {
    pub destinations: Vec<Addr>,
    pub digest: [u8; 32],
}

impl NaiveAuth {
    pub fn size_bytes(&self) -> usize {
        4 * self.destinations.len() + 32
    }
}

/// Full trace of non-sequential transfer destinations and its SHA-256 digest.
pub fn build_naive(log: &ExecutionLog) -> NaiveAuth {
    let destinations: Vec<Addr> = log
        .events
        .iter()
        .filter(|e| e.kind.is_forward() || e.kind == EventKind::Return)
        .map(|e| e.dst)
        .collect();
    let mut h = Sha256::new();
    for d in &destinations {
        h.update(d.to_le_bytes());
    }
    NaiveAuth { digest: h.finalize().into(), destinations }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OatAuth {
    pub cond_bits: Vec<bool>,
    pub indirect_dests: Vec<Addr>,
    pub ret_chain: u32,
    pub returns: u64,
}

impl OatAuth {
    pub fn size_bytes(&self) -> usize {
        self.cond_bits.len().div_ceil(8) + 4 * self.indirect_dests.len() + 4
    }
}

/// One bit per conditional branch, indirect destinations verbatim, returns hash-chained
/// with `H = h32(H ^ ret)`.
pub fn build_oat(log: &ExecutionLog) -> OatAuth {
    let mut auth = OatAuth { cond_bits: Vec::new(), indirect_dests: Vec::new(), ret_chain: 0, returns: 0 };
    for e in &log.events {
        match e.kind {
            EventKind::CondTaken => auth.cond_bits.push(true),
            EventKind::CondNotTaken => auth.cond_bits.push(false),
            EventKind::IndirectCall | EventKind::IndirectJump => auth.indirect_dests.push(e.dst),
            EventKind::Return => {
                auth.ret_chain = h32(auth.ret_chain ^ e.dst);
                auth.returns += 1;
            }
            _ => {}
        }
    }
    auth
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoopRecord {
    pub header: Addr,
    /// Distinct per-iteration path hashes with their iteration counts.
    pub paths: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CflatAuth {
    pub top_hash: u32,
    /// One record per loop execution, in completion order.
    pub loop_records: Vec<LoopRecord>,
}

impl CflatAuth {
    pub fn record_count(&self) -> usize {
        self.loop_records.iter().map(|r| r.paths.len()).sum()
    }

    pub fn size_bytes(&self) -> usize {
        4 + self.loop_records.iter().map(|r| 4 + 8 * r.paths.len()).sum::<usize>()
    }
}

struct LoopCtx {
    header: BlockId,
    depth: usize,
    iter_hash: u32,
    paths: BTreeMap<u32, u64>,
}

/// Cumulative path hash outside loops; inside a loop each iteration's path is hashed
/// separately and identical iterations are coalesced into `(hash, count)` pairs. A
/// finished loop folds its header into the enclosing context.
pub fn build_cflat(log: &ExecutionLog, cfg: &ProgramCfg, dom: &DominatorInfo) -> Result<CflatAuth, SchemeError> {
    if log.events.is_empty() {
        return Err(SchemeError::NotRecorded);
    }
    let mut top_hash = 0u32;
    let mut stack: Vec<LoopCtx> = Vec::new();
    let mut records = Vec::new();
    let mut depth = 0usize;

    fn fold(stack: &mut [LoopCtx], top: &mut u32, addr: Addr) {
        match stack.last_mut() {
            Some(ctx) => ctx.iter_hash = h32(ctx.iter_hash ^ addr),
            None => *top = h32(*top ^ addr),
        }
    }
    fn close(stack: &mut Vec<LoopCtx>, top: &mut u32, records: &mut Vec<LoopRecord>, cfg: &ProgramCfg) {
        let ctx = stack.pop().expect("open loop");
        let header = cfg.block(ctx.header).start_addr;
        records.push(LoopRecord { header, paths: ctx.paths });
        fold(stack, top, header);
    }

    let mut visit = |b: BlockId, from: Option<BlockId>, depth: usize, stack: &mut Vec<LoopCtx>, top: &mut u32| {
        let func = cfg.block(b).func;
        while let Some(ctx) = stack.last() {
            let same_func = cfg.block(ctx.header).func == func && ctx.depth == depth;
            if ctx.depth > depth || (same_func && !dom.loops.bodies[&ctx.header].contains(&b)) {
                close(stack, top, &mut records, cfg);
            } else {
                break;
            }
        }
        let back = from.is_some_and(|f| dom.loops.is_back_edge(f, b));
        match stack.last_mut() {
            Some(ctx) if ctx.header == b && ctx.depth == depth && back => {
                *ctx.paths.entry(ctx.iter_hash).or_insert(0) += 1;
                ctx.iter_hash = 0;
            }
            _ if dom.loops.is_header(b) => {
                stack.push(LoopCtx { header: b, depth, iter_hash: 0, paths: BTreeMap::new() });
            }
            _ => {}
        }
        fold(stack, top, cfg.block(b).start_addr);
    };

    visit(cfg.entry, None, depth, &mut stack, &mut top_hash);
    for e in &log.events {
        match e.kind {
            EventKind::Exit => break,
            EventKind::Call | EventKind::IndirectCall => depth += 1,
            EventKind::Return => depth = depth.saturating_sub(1),
            _ => {}
        }
        let dst = e.dst_block.ok_or(SchemeError::MidBlock(e.dst))?;
        let from = matches!(e.kind, EventKind::CondTaken | EventKind::CondNotTaken | EventKind::Jump | EventKind::Fallthrough | EventKind::IndirectJump)
            .then_some(e.src_block);
        visit(dst, from, depth, &mut stack, &mut top_hash);
    }
    while !stack.is_empty() {
        close(&mut stack, &mut top_hash, &mut records, cfg);
    }
    Ok(CflatAuth { top_hash, loop_records: records })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlastEntry {
    pub func: u32,
    pub path: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlastAuth {
    pub entries: Vec<BlastEntry>,
    pub digest: u32,
}

impl BlastAuth {
    pub fn size_bytes(&self) -> usize {
        8 * self.entries.len() + 4
    }
}

/// Ball-Larus numberings of every function.
pub fn number_all(cfg: &ProgramCfg, dom: &DominatorInfo) -> Result<Vec<BallLarusNumbering>, BallLarusError> {
    cfg.functions.iter().map(|f| ball_larus_number(cfg, dom, f.id)).collect()
}

fn edge_kind(kind: EventKind) -> Option<EdgeKind> {
    Some(match kind {
        EventKind::CondTaken => EdgeKind::CondTaken,
        EventKind::CondNotTaken => EdgeKind::CondFallthrough,
        EventKind::Jump => EdgeKind::Jump,
        EventKind::Fallthrough => EdgeKind::Fallthrough,
        EventKind::IndirectJump => EdgeKind::Indirect,
        _ => return None,
    })
}

/// Function-level path log: an entry whenever a back edge is taken, a call leaves the
/// function (partial path so far), a function returns, or the program exits.
pub fn build_blast(log: &ExecutionLog, cfg: &ProgramCfg, numbering: &[BallLarusNumbering]) -> Result<BlastAuth, SchemeError> {
    if log.events.is_empty() {
        return Err(SchemeError::NotRecorded);
    }
    let bl = |f: FuncId| &numbering[f.index()];
    let mut entries = Vec::new();
    let mut frames: Vec<(FuncId, u128, BlockId)> = Vec::new();
    let entry_func = cfg.block(cfg.entry).func;
    let mut cur = (entry_func, bl(entry_func).entry_increment());
    let push_entry = |entries: &mut Vec<BlastEntry>, f: FuncId, path: u128| entries.push(BlastEntry { func: f.0, path });
    for e in &log.events {
        match e.kind {
            EventKind::Call | EventKind::IndirectCall => {
                let callee_entry = e.dst_block.ok_or(SchemeError::MidBlock(e.dst))?;
                push_entry(&mut entries, cur.0, cur.1);
                frames.push((cur.0, cur.1, e.src_block));
                let callee = cfg.block(callee_entry).func;
                cur = (callee, bl(callee).entry_increment());
                if cfg.function(callee).entry != callee_entry {
                    return Err(SchemeError::MidBlock(e.dst));
                }
            }
            EventKind::Return => {
                let close = bl(cur.0).exit_increment(e.src_block).unwrap_or(0);
                push_entry(&mut entries, cur.0, cur.1 + close);
                let Some((f, r, site)) = frames.pop() else { break };
                let next = cfg.next_block(site).expect("validated");
                if e.dst_block != Some(next) {
                    return Err(SchemeError::MidBlock(e.dst));
                }
                let inc = bl(f).increment(site, next, EdgeKind::Fallthrough).unwrap_or(0);
                cur = (f, r + inc);
            }
            EventKind::Exit => {
                let close = bl(cur.0).exit_increment(e.src_block).unwrap_or(0);
                push_entry(&mut entries, cur.0, cur.1 + close);
            }
            kind => {
                let dst = e.dst_block.ok_or(SchemeError::MidBlock(e.dst))?;
                let numbering = bl(cur.0);
                if let Some(reset) = numbering.back_edge(e.src_block, dst) {
                    push_entry(&mut entries, cur.0, cur.1 + reset.end_increment);
                    cur.1 = reset.reset;
                } else {
                    let ek = edge_kind(kind).expect("intra-function event");
                    cur.1 += numbering.increment(e.src_block, dst, ek).unwrap_or(0);
                }
            }
        }
    }
    let mut digest = 0u32;
    for en in &entries {
        digest = h32(digest ^ en.func);
        digest = h32(digest ^ en.path as u32);
    }
    Ok(BlastAuth { entries, digest })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Naive,
    Oat,
    Cflat,
    Blast,
    Occurrence,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Naive, Scheme::Oat, Scheme::Cflat, Scheme::Blast, Scheme::Occurrence];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Naive => "naive",
            Scheme::Oat => "oat",
            Scheme::Cflat => "cflat",
            Scheme::Blast => "blast",
            Scheme::Occurrence => "occurrence",
        }
    }
}

/// Size of one scheme's authenticator; `None` when the scheme cannot handle the program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SchemeSize {
    pub scheme: Scheme,
    pub bytes: Option<usize>,
    pub records: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizeReport {
    pub program: String,
    pub n: u64,
    pub m: u64,
    pub l: u64,
    pub blocks: usize,
    /// Unique instrumented blocks executed (occurrence-trace entries).
    pub u: usize,
    pub sizes: Vec<SchemeSize>,
}

impl SizeReport {
    pub fn bytes(&self, scheme: Scheme) -> Option<usize> {
        self.sizes.iter().find(|s| s.scheme == scheme).and_then(|s| s.bytes)
    }

    pub fn records(&self, scheme: Scheme) -> Option<usize> {
        self.sizes.iter().find(|s| s.scheme == scheme).and_then(|s| s.records)
    }
}

/// Builds every scheme from one recorded execution and the occurrence trace of the same run.
pub fn size_report(
    program: &str,
    cfg: &ProgramCfg,
    dom: &DominatorInfo,
    log: &ExecutionLog,
    trace: &OccurrenceTrace,
) -> Result<SizeReport, SchemeError> {
    if log.events.is_empty() {
        return Err(SchemeError::NotRecorded);
    }
    let naive = build_naive(log);
    let oat = build_oat(log);
    let cflat = build_cflat(log, cfg, dom)?;
    let blast = number_all(cfg, dom).ok().and_then(|n| build_blast(log, cfg, &n).ok());
    let sizes = vec![
        SchemeSize { scheme: Scheme::Naive, bytes: Some(naive.size_bytes()), records: Some(naive.destinations.len()) },
        SchemeSize {
            scheme: Scheme::Oat,
            bytes: Some(oat.size_bytes()),
            records: Some(oat.cond_bits.len() + oat.indirect_dests.len()),
        },
        SchemeSize { scheme: Scheme::Cflat, bytes: Some(cflat.size_bytes()), records: Some(cflat.record_count()) },
        SchemeSize {
            scheme: Scheme::Blast,
            bytes: blast.as_ref().map(|b| b.size_bytes()),
            records: blast.as_ref().map(|b| b.entries.len()),
        },
        SchemeSize { scheme: Scheme::Occurrence, bytes: Some(trace.auth_bytes()), records: Some(trace.counts.len()) },
    ];
    Ok(SizeReport {
        program: program.to_string(),
        n: log.n,
        m: log.m,
        l: log.l(),
        blocks: cfg.blocks.len(),
        u: trace.counts.len(),
        sizes,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    program: &'a str,
    scheme: &'static str,
    bytes: Option<usize>,
    records: Option<usize>,
    n: u64,
    m: u64,
    l: u64,
    blocks: usize,
    u: usize,
}

/// CSV with one row per (program, scheme); unsupported schemes leave bytes/records empty.
pub fn write_csv<W: Write>(out: W, reports: &[SizeReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for s in &r.sizes {
            w.serialize(CsvRow {
                program: &r.program,
                scheme: s.scheme.name(),
                bytes: s.bytes,
                records: s.records,
                n: r.n,
                m: r.m,
                l: r.l,
                blocks: r.blocks,
                u: r.u,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
