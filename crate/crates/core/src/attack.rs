//! Simulated control-flow attacks against the prover.
//!
//! Execution attacks steer the running program; `signature-flip` and `replay` tamper
//! with the report or its freshness instead.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::exec::{run, Inputs, Monitor, NoMonitor};
use crate::ir::{compute_dominators, Addr, BlockId, EdgeKind, Instruction, ProgramCfg};
use crate::prover::{execute_steered, Attestation, Nonce, ProverConfig, ProverError, ProverRun};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttackSpec {
    /// Redirect the first indirect transfer to an arbitrary address.
    IllegalIndirect(Addr),
    /// Run the loop entered through `block` `delta` more (or fewer) times.
    LoopCountDelta { block: String, delta: i64 },
    /// Invert the first evaluation of the conditional branch ending `block`.
    BranchSwap { block: String },
    /// Add 4 to the first return address popped at call depth `depth`.
    ReturnCorrupt { depth: usize },
    /// Flip one bit of the report signature.
    SignatureFlip { bit: usize },
    /// Present a report produced for an earlier challenge.
    Replay,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("cannot parse attack `{0}`")]
    Parse(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("attack not applicable: {0}")]
    NotApplicable(String),
    #[error("attack never triggered during the run")]
    NotTriggered,
    #[error(transparent)]
    Prover(#[from] ProverError),
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::IllegalIndirect(a) => write!(f, "illegal-indirect({a:#010x})"),
            AttackSpec::LoopCountDelta { block, delta } => write!(f, "loop-count-delta({block},{delta:+})"),
            AttackSpec::BranchSwap { block } => write!(f, "branch-swap({block})"),
            AttackSpec::ReturnCorrupt { depth } => write!(f, "return-corrupt({depth})"),
            AttackSpec::SignatureFlip { bit } => write!(f, "signature-flip({bit})"),
            AttackSpec::Replay => write!(f, "replay"),
        }
    }
}

fn parse_u32(s: &str) -> Option<u32> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

impl FromStr for AttackSpec {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AttackError::Parse(s.to_string());
        let s = s.trim();
        if s == "replay" || s == "replay()" {
            return Ok(AttackSpec::Replay);
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        match (name.trim(), args.as_slice()) {
            ("illegal-indirect", [a]) => Ok(AttackSpec::IllegalIndirect(parse_u32(a).ok_or_else(bad)?)),
            ("loop-count-delta", [b, d]) if !b.is_empty() => {
                let delta: i64 = d.strip_prefix('+').unwrap_or(d).parse().map_err(|_| bad())?;
                Ok(AttackSpec::LoopCountDelta { block: b.to_string(), delta })
            }
            ("branch-swap", [b]) if !b.is_empty() => Ok(AttackSpec::BranchSwap { block: b.to_string() }),
            ("return-corrupt", [d]) => Ok(AttackSpec::ReturnCorrupt { depth: d.parse().map_err(|_| bad())? }),
            ("signature-flip", [b]) => {
                let bit: usize = b.parse().map_err(|_| bad())?;
                if bit >= 256 {
                    return Err(bad());
                }
                Ok(AttackSpec::SignatureFlip { bit })
            }
            _ => Err(bad()),
        }
    }
}

/// The nonce a replayed report was originally produced for.
pub fn stale_nonce(nonce: &Nonce) -> Nonce {
    let mut old = *nonce;
    for b in &mut old {
        *b ^= 0xa5;
    }
    old
}

#[derive(Default)]
struct Steer {
    indirect: Option<Addr>,
    swap: Option<BlockId>,
    ret_depth: Option<usize>,
    forced: Option<(BlockId, bool, VecDeque<bool>)>,
    triggered: bool,
}

impl Monitor for Steer {
    fn steer_branch(&mut self, site: BlockId, natural: bool) -> bool {
        if self.swap == Some(site) {
            self.swap = None;
            self.triggered = true;
            return !natural;
        }
        if let Some((c, toward_taken, queue)) = &mut self.forced {
            if *c == site {
                if let Some(toward) = queue.pop_front() {
                    self.triggered = true;
                    return toward == *toward_taken;
                }
            }
        }
        natural
    }

    fn steer_indirect(&mut self, _site: BlockId, natural: Addr) -> Addr {
        match self.indirect.take() {
            Some(a) => {
                self.triggered = true;
                a
            }
            None => natural,
        }
    }

    fn steer_return(&mut self, _site: BlockId, depth: usize, natural: Addr) -> Addr {
        if self.ret_depth == Some(depth) {
            self.ret_depth = None;
            self.triggered = true;
            return natural.wrapping_add(4);
        }
        natural
    }
}

struct Decisions {
    site: BlockId,
    taken: Vec<bool>,
}

impl Monitor for Decisions {
    fn steer_branch(&mut self, site: BlockId, natural: bool) -> bool {
        if site == self.site {
            self.taken.push(natural);
        }
        natural
    }
}

fn resolve(cfg: &ProgramCfg, label: &str) -> Result<BlockId, AttackError> {
    cfg.block_by_label(label).ok_or_else(|| AttackError::UnknownBlock(label.to_string()))
}

fn distinct_cbr(cfg: &ProgramCfg, b: BlockId) -> bool {
    let succs = cfg.succs(b);
    matches!(cfg.block(b).terminator(), Some(Instruction::CondBranch { .. })) && succs.len() == 2 && succs[0].0 != succs[1].0
}

/// The conditional branch deciding whether the loop body at `x` runs again, and whether
/// reaching `x` means taking that branch.
fn controlling_branch(cfg: &ProgramCfg, x: BlockId) -> Option<(BlockId, bool)> {
    let dom = compute_dominators(cfg);
    let cands: Vec<(BlockId, bool)> = cfg
        .preds(x)
        .iter()
        .filter(|(p, _)| distinct_cbr(cfg, *p))
        .map(|&(p, k)| (p, k == EdgeKind::CondTaken))
        .collect();
    cands
        .iter()
        .find(|(p, _)| dom.loops.is_header(*p))
        .or_else(|| cands.iter().find(|(p, _)| dom.loops.innermost(*p).is_some()))
        .copied()
}

/// Runs the prover with `attack` applied. Attacks that select a site which never executes
/// return [`AttackError::NotTriggered`].
pub fn attest_with_attack(
    att: &Attestation<'_>,
    nonce: Nonce,
    inputs: &Inputs,
    config: &ProverConfig,
    attack: Option<&AttackSpec>,
) -> Result<ProverRun, AttackError> {
    let cfg = att.cfg;
    let mut steer = Steer::default();
    match attack {
        None => return Ok(execute_steered(att, nonce, inputs, config, NoMonitor)?),
        Some(AttackSpec::Replay) => return Ok(execute_steered(att, stale_nonce(&nonce), inputs, config, NoMonitor)?),
        Some(AttackSpec::SignatureFlip { bit }) => {
            let mut out = execute_steered(att, nonce, inputs, config, NoMonitor)?;
            out.report.signature[bit / 8] ^= 1 << (bit % 8);
            return Ok(out);
        }
        Some(AttackSpec::IllegalIndirect(a)) => {
            if att.plan.indirect_sites.is_empty() {
                return Err(AttackError::NotApplicable("program has no indirect transfers".into()));
            }
            steer.indirect = Some(*a);
        }
        Some(AttackSpec::BranchSwap { block }) => {
            let b = resolve(cfg, block)?;
            if !distinct_cbr(cfg, b) {
                return Err(AttackError::NotApplicable(format!("`{block}` does not end in a two-way branch")));
            }
            steer.swap = Some(b);
        }
        Some(AttackSpec::ReturnCorrupt { depth }) => steer.ret_depth = Some(*depth),
        Some(AttackSpec::LoopCountDelta { block, delta }) => {
            let x = resolve(cfg, block)?;
            let (c, toward_taken) = controlling_branch(cfg, x)
                .ok_or_else(|| AttackError::NotApplicable(format!("`{block}` is not entered by a loop branch")))?;
            let mut dry = Decisions { site: c, taken: Vec::new() };
            run(cfg, inputs, &config.run, &mut dry);
            let mut toward: Vec<bool> = dry.taken.iter().map(|&t| t == toward_taken).collect();
            if *delta >= 0 {
                let at = toward.iter().position(|&t| !t).unwrap_or(toward.len());
                toward.splice(at..at, std::iter::repeat_n(true, *delta as usize));
            } else {
                for _ in 0..delta.unsigned_abs() {
                    let at = toward
                        .iter()
                        .position(|&t| t)
                        .ok_or_else(|| AttackError::NotApplicable(format!("loop at `{block}` runs fewer than {} times", -delta)))?;
                    toward.remove(at);
                }
            }
            steer.forced = Some((c, toward_taken, toward.into()));
        }
    }
    let out = execute_steered(att, nonce, inputs, config, &mut steer)?;
    if !steer.triggered {
        return Err(AttackError::NotTriggered);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in [
            "illegal-indirect(0x10000443)",
            "loop-count-delta(body,+7)",
            "loop-count-delta(f:body,-3)",
            "branch-swap(b)",
            "return-corrupt(1)",
            "signature-flip(255)",
            "replay",
        ] {
            let a: AttackSpec = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert!("signature-flip(256)".parse::<AttackSpec>().is_err());
        assert!("loop-count-delta(x)".parse::<AttackSpec>().is_err());
        assert!("nope(1)".parse::<AttackSpec>().is_err());
    }

    #[test]
    fn stale_nonce_differs() {
        let n = [7u8; 16];
        assert_ne!(stale_nonce(&n), n);
        assert_eq!(stale_nonce(&stale_nonce(&n)), n);
    }
}
