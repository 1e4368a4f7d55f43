//! Instrumentation-site selection, indirect target lists and the reserved-state lint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::exec::{run, Fault, Inputs, Monitor, RunOptions};
use crate::ir::{Addr, BlockId, Dest, DominatorInfo, Instruction, ProgramCfg, Reg, NUM_REGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// Loop header whose two successors are instrumented and reachable only through it.
    Dominator,
    /// Every predecessor has this block as its only successor.
    Join,
    /// Exit block whose sibling branch targets are instrumented.
    Terminal,
    NotBranchTarget,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::Dominator => "dominator",
            SkipReason::Join => "join",
            SkipReason::Terminal => "terminal",
            SkipReason::NotBranchTarget => "not-branch-target",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndirectKind {
    Icall,
    Ijmp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstrumentationPlan {
    pub direct_report_blocks: BTreeSet<BlockId>,
    pub indirect_sites: BTreeMap<BlockId, IndirectKind>,
    pub return_sites: BTreeSet<BlockId>,
    pub skipped_blocks: BTreeMap<BlockId, SkipReason>,
}

impl InstrumentationPlan {
    pub fn is_direct(&self, b: BlockId) -> bool {
        self.direct_report_blocks.contains(&b)
    }

    pub fn to_json_value(&self, cfg: &ProgramCfg) -> serde_json::Value {
        let name = |b: BlockId| {
            let blk = cfg.block(b);
            format!("{}:{}", cfg.function(blk.func).name, blk.label)
        };
        let site = |b: BlockId| json!({"addr": cfg.block(b).start_addr, "block": name(b)});
        json!({
            "direct_report_blocks": self.direct_report_blocks.iter().map(|&b| site(b)).collect::<Vec<_>>(),
            "indirect_sites": self.indirect_sites.iter().map(|(&b, k)| {
                json!({"addr": cfg.block(b).start_addr, "block": name(b), "kind": k})
            }).collect::<Vec<_>>(),
            "return_sites": self.return_sites.iter().map(|&b| site(b)).collect::<Vec<_>>(),
            "skipped_blocks": self.skipped_blocks.iter().map(|(&b, r)| {
                json!({"addr": cfg.block(b).start_addr, "block": name(b), "reason": r})
            }).collect::<Vec<_>>(),
        })
    }

    /// Canonical JSON (keys sorted).
    pub fn to_json(&self, cfg: &ProgramCfg) -> String {
        self.to_json_value(cfg).to_string()
    }
}

/// Selects instrumentation sites.
///
/// Every successor of a conditional branch reports its entry, except:
/// - join blocks whose predecessors all have them as sole successor,
/// - loop headers `B` ending in a two-way branch whose successors have `B` as their
///   only predecessor and are themselves instrumented (the successor visit pins down
///   the pass through `B`),
/// - exit blocks whose every conditional predecessor has an instrumented other arm.
pub fn plan_instrumentation(cfg: &ProgramCfg, dom: &DominatorInfo) -> InstrumentationPlan {
    let distinct_succs = |b: BlockId| -> BTreeSet<BlockId> { cfg.succs(b).iter().map(|&(s, _)| s).collect() };
    let distinct_preds = |b: BlockId| -> BTreeSet<BlockId> { cfg.preds(b).iter().map(|&(p, _)| p).collect() };
    let cbr_succs = |b: BlockId| match cfg.block(b).terminator() {
        Some(Instruction::CondBranch { target, .. }) => Some((*target, cfg.next_block(b).expect("validated"))),
        _ => None,
    };

    let mut targets = BTreeSet::new();
    for b in &cfg.blocks {
        if let Some((t, f)) = cbr_succs(b.id) {
            targets.insert(t);
            targets.insert(f);
        }
    }

    let join: BTreeSet<BlockId> = targets
        .iter()
        .copied()
        .filter(|&x| distinct_preds(x).iter().all(|&p| distinct_succs(p) == BTreeSet::from([x])))
        .collect();
    let terminal_cand: BTreeSet<BlockId> = targets
        .iter()
        .copied()
        .filter(|&x| !join.contains(&x) && matches!(cfg.block(x).terminator(), Some(Instruction::Exit)))
        .collect();
    let dominator_cand: BTreeSet<BlockId> = targets
        .iter()
        .copied()
        .filter(|&x| {
            if join.contains(&x) || !dom.loops.is_header(x) {
                return false;
            }
            match cbr_succs(x) {
                Some((s1, s2)) if s1 != s2 => [s1, s2]
                    .iter()
                    .all(|&s| s != x && distinct_preds(s) == BTreeSet::from([x]) && dom.idom(s) == Some(x)),
                _ => false,
            }
        })
        .collect();
    let candidate = |b: BlockId| join.contains(&b) || terminal_cand.contains(&b) || dominator_cand.contains(&b);

    let mut skipped = BTreeMap::new();
    for &x in &join {
        skipped.insert(x, SkipReason::Join);
    }
    for &x in &terminal_cand {
        let ok = distinct_preds(x).iter().all(|&p| match cbr_succs(p) {
            Some((t, f)) => {
                let other = if t == x { f } else { t };
                other != x && !candidate(other)
            }
            None => true,
        });
        if ok {
            skipped.insert(x, SkipReason::Terminal);
        }
    }
    for &x in &dominator_cand {
        let (s1, s2) = cbr_succs(x).expect("candidate ends in a branch");
        if !candidate(s1) && !candidate(s2) {
            skipped.insert(x, SkipReason::Dominator);
        }
    }

    let mut plan = InstrumentationPlan {
        direct_report_blocks: BTreeSet::new(),
        indirect_sites: BTreeMap::new(),
        return_sites: BTreeSet::new(),
        skipped_blocks: BTreeMap::new(),
    };
    for b in &cfg.blocks {
        if targets.contains(&b.id) && !skipped.contains_key(&b.id) {
            plan.direct_report_blocks.insert(b.id);
        } else {
            plan.skipped_blocks.insert(b.id, skipped.get(&b.id).copied().unwrap_or(SkipReason::NotBranchTarget));
        }
        match b.terminator() {
            Some(Instruction::IndirectCall { .. }) => {
                plan.indirect_sites.insert(b.id, IndirectKind::Icall);
            }
            Some(Instruction::IndirectJump { .. }) => {
                plan.indirect_sites.insert(b.id, IndirectKind::Ijmp);
            }
            Some(Instruction::Return) => {
                plan.return_sites.insert(b.id);
            }
            _ => {}
        }
    }
    plan
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Static,
    Dynamic,
}

/// Valid destinations of indirect transfers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndirectTargetList {
    pub targets: BTreeMap<Addr, Provenance>,
}

impl IndirectTargetList {
    pub fn contains(&self, addr: Addr) -> bool {
        self.targets.contains_key(&addr)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn addrs(&self) -> impl Iterator<Item = Addr> + '_ {
        self.targets.keys().copied()
    }

    /// Adds a target; a static tag is never downgraded to dynamic.
    pub fn insert(&mut self, addr: Addr, provenance: Provenance) {
        let e = self.targets.entry(addr).or_insert(provenance);
        *e = (*e).min(provenance);
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<_> = self
            .targets
            .iter()
            .map(|(a, p)| json!({"addr": a, "provenance": p}))
            .collect();
        json!({ "targets": entries }).to_string()
    }

    /// Parses the form written by [`IndirectTargetList::to_json`].
    pub fn from_json(text: &str) -> serde_json::Result<IndirectTargetList> {
        #[derive(Deserialize)]
        struct Entry {
            addr: Addr,
            provenance: Provenance,
        }
        #[derive(Deserialize)]
        struct Doc {
            targets: Vec<Entry>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        Ok(IndirectTargetList { targets: doc.targets.into_iter().map(|e| (e.addr, e.provenance)).collect() })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("training run {run} failed: {fault}")]
pub struct TrainingError {
    pub run: usize,
    pub fault: Fault,
    /// Targets gathered before the failure.
    pub partial: IndirectTargetList,
}

/// Static intra-function constant propagation of `set` values into indirect sites,
/// optionally widened with the destinations observed in training runs.
pub fn build_itl(cfg: &ProgramCfg, training: &[Inputs]) -> Result<IndirectTargetList, TrainingError> {
    let mut itl = static_itl(cfg);
    for (i, inputs) in training.iter().enumerate() {
        let mut rec = IndirectRecorder { seen: Vec::new() };
        let out = run(cfg, inputs, &RunOptions::default(), &mut rec);
        for a in rec.seen {
            if cfg.block_at_start(a).is_some() {
                itl.insert(a, Provenance::Dynamic);
            }
        }
        if let Some(fault) = out.fault {
            return Err(TrainingError { run: i, fault, partial: itl });
        }
    }
    Ok(itl)
}

struct IndirectRecorder {
    seen: Vec<Addr>,
}

impl Monitor for IndirectRecorder {
    fn on_indirect(&mut self, _site: BlockId, dest: Addr) -> Result<(), Fault> {
        self.seen.push(dest);
        Ok(())
    }
}

type RegSets = Vec<BTreeSet<u32>>;

fn static_itl(cfg: &ProgramCfg) -> IndirectTargetList {
    let mut itl = IndirectTargetList::default();
    for f in &cfg.functions {
        let mut at_entry: BTreeMap<BlockId, RegSets> = BTreeMap::new();
        at_entry.insert(f.entry, vec![BTreeSet::new(); NUM_REGS]);
        let mut work = vec![f.entry];
        while let Some(b) = work.pop() {
            let mut regs = at_entry[&b].clone();
            let blk = cfg.block(b);
            for ins in &blk.instructions {
                match ins {
                    Instruction::SetReg { dest: Dest::Reg(r), value, .. } => regs[r.index()] = BTreeSet::from([*value]),
                    Instruction::Compute { assign: Some((Dest::Reg(r), _)) } => regs[r.index()].clear(),
                    Instruction::IndirectCall { reg } | Instruction::IndirectJump { reg } => {
                        for &v in &regs[reg.index()] {
                            if cfg.block_at_start(v).is_some() {
                                itl.insert(v, Provenance::Static);
                            }
                        }
                    }
                    _ => {}
                }
            }
            if matches!(blk.terminator(), Some(Instruction::Call { .. } | Instruction::IndirectCall { .. })) {
                regs.iter_mut().for_each(BTreeSet::clear);
            }
            for &(s, _) in cfg.succs(b) {
                let changed = match at_entry.get_mut(&s) {
                    None => {
                        at_entry.insert(s, regs.clone());
                        true
                    }
                    Some(cur) => {
                        let mut changed = false;
                        for (c, n) in cur.iter_mut().zip(&regs) {
                            for v in n {
                                changed |= c.insert(*v);
                            }
                        }
                        changed
                    }
                };
                if changed {
                    work.push(s);
                }
            }
        }
    }
    itl
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LintConfig {
    pub reserved: [Reg; 2],
}

impl Default for LintConfig {
    fn default() -> Self {
        LintConfig { reserved: [Reg(10), Reg(11)] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub location: String,
    pub addr: Addr,
    pub rule: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub findings: Vec<Finding>,
    pub clean: bool,
}

/// Flags user instructions that write the measurement accumulators or the key slot.
pub fn scan_code(cfg: &ProgramCfg, config: &LintConfig) -> LintReport {
    let mut findings = Vec::new();
    for b in &cfg.blocks {
        for (i, ins) in b.instructions.iter().enumerate() {
            let Some(dest) = ins.written() else { continue };
            let location = format!("{}:{}+{}", cfg.function(b.func).name, b.label, i);
            let addr = b.instr_addr(i);
            match dest {
                Dest::KeySlot => findings.push(Finding {
                    location,
                    addr,
                    rule: "key-register-write",
                    message: format!("`{}` writes the measurement key slot", cfg.render_instruction(ins)),
                }),
                Dest::Reg(r) if config.reserved.contains(&r) => findings.push(Finding {
                    location,
                    addr,
                    rule: "reserved-register-write",
                    message: format!("`{}` writes reserved accumulator {r}", cfg.render_instruction(ins)),
                }),
                Dest::Reg(_) => {}
            }
        }
    }
    LintReport { clean: findings.is_empty(), findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::compute_dominators;

    fn plan(text: &str) -> (ProgramCfg, InstrumentationPlan) {
        let cfg = ProgramCfg::load(text).unwrap();
        let dom = compute_dominators(&cfg);
        let p = plan_instrumentation(&cfg, &dom);
        (cfg, p)
    }

    fn labels(cfg: &ProgramCfg, set: impl IntoIterator<Item = BlockId>) -> Vec<String> {
        set.into_iter().map(|b| cfg.block(b).label.clone()).collect()
    }

    #[test]
    fn diamond_instruments_both_arms() {
        let (cfg, p) = plan(
            "func main { block cmp: cbr b2 if r0 > 5\n block b1: jmp join\n block b2: compute\n block join: compute\n block end: exit }",
        );
        assert_eq!(labels(&cfg, p.direct_report_blocks.iter().copied()), ["b1", "b2"]);
        assert_eq!(p.skipped_blocks[&cfg.block_by_label("cmp").unwrap()], SkipReason::NotBranchTarget);
        assert_eq!(p.skipped_blocks[&cfg.block_by_label("join").unwrap()], SkipReason::NotBranchTarget);
    }

    #[test]
    fn counted_loop_skips_condition() {
        let (cfg, p) = plan(
            "func main { block init: set r1 = 0\n block cond: cbr exit if r1 >= 4\n \
             block body: compute r1 = r1 + 1; jmp cond\n block exit: compute\n block end: exit }",
        );
        assert_eq!(labels(&cfg, p.direct_report_blocks.iter().copied()), ["body", "exit"]);
    }

    #[test]
    fn straight_line_has_no_direct_sites() {
        let (cfg, p) = plan("func main { block a: call f\n block b: exit }\n func f { block x: compute\n block y: compute\n block z: ret }");
        assert!(p.direct_report_blocks.is_empty());
        assert_eq!(labels(&cfg, p.return_sites.iter().copied()), ["z"]);
    }

    #[test]
    fn degenerate_branch_target_is_join() {
        let (cfg, p) = plan("func main { block a: cbr b\n block b: exit }");
        assert_eq!(p.skipped_blocks[&cfg.block_by_label("b").unwrap()], SkipReason::Join);
        assert!(p.direct_report_blocks.is_empty());
    }

    #[test]
    fn terminal_exit_is_skipped_only_when_sibling_reports() {
        let (cfg, p) = plan("func main { block a: cbr done if r0 == 1\n block work: compute; jmp a\n block done: exit }");
        assert_eq!(p.skipped_blocks[&cfg.block_by_label("done").unwrap()], SkipReason::Terminal);
        assert_eq!(labels(&cfg, p.direct_report_blocks.iter().copied()), ["work"]);
        let (cfg, p) = plan("func main { block a: cbr d1 if r0 == 1\n block d0: exit\n block d1: exit }");
        assert_eq!(labels(&cfg, p.direct_report_blocks.iter().copied()), ["d0", "d1"]);
    }

    #[test]
    fn loop_header_that_is_a_branch_target_uses_dominator_rule() {
        let (cfg, p) = plan(
            "func main { block pre: cbr skip if r0 == 0\n block head: cbr out if r1 >= 3\n \
             block body: compute r1 = r1 + 1; jmp head\n block out: compute\n block skip: exit }",
        );
        let head = cfg.block_by_label("head").unwrap();
        assert_eq!(p.skipped_blocks[&head], SkipReason::Dominator);
        assert!(p.is_direct(cfg.block_by_label("body").unwrap()));
        assert!(p.is_direct(cfg.block_by_label("out").unwrap()));
    }

    #[test]
    fn itl_static_and_dynamic() {
        let cfg = ProgramCfg::load(
            "func main { block a: set r1 = @f; icall r1\n block b: set r2 = @g; compute r3 = r2; icall r3\n block c: exit }\n\
             func f { block x: ret }\n func g { block y: ret }",
        )
        .unwrap();
        let f = cfg.block(cfg.function_by_name("f").unwrap().entry).start_addr;
        let g = cfg.block(cfg.function_by_name("g").unwrap().entry).start_addr;
        let st = build_itl(&cfg, &[]).unwrap();
        assert_eq!(st.targets, BTreeMap::from([(f, Provenance::Static)]));
        let dy = build_itl(&cfg, &[Inputs::new()]).unwrap();
        assert_eq!(dy.targets, BTreeMap::from([(f, Provenance::Static), (g, Provenance::Dynamic)]));
    }

    #[test]
    fn itl_empty_without_indirects() {
        let cfg = ProgramCfg::load("func main { block a: set r1 = @a; exit }").unwrap();
        assert!(build_itl(&cfg, &[Inputs::new()]).unwrap().is_empty());
    }

    #[test]
    fn lint_rules() {
        let cfg = ProgramCfg::load("func main { block a: set r1 = 0; exit }").unwrap();
        assert!(scan_code(&cfg, &LintConfig::default()).clean);
        let cfg = ProgramCfg::load("func main { block a: set r10 = 0; compute key = r1 ^ 3; exit }").unwrap();
        let report = scan_code(&cfg, &LintConfig::default());
        let rules: Vec<_> = report.findings.iter().map(|f| f.rule).collect();
        assert_eq!(rules, ["reserved-register-write", "key-register-write"]);
        assert!(!report.clean);
    }
}
